"""Scene bundle data model, validation, and artifact serialization.

Coordinate convention used across the whole package: raster origin at the
top-left corner, +x right, +y down (so gravity points +y). Arrays are indexed
``[row, col]`` = ``[y, x]``; a pixel with integer index (x, y) covers the unit
square [x, x+1] x [y, y+1] and has its center at (x+0.5, y+0.5).

On-disk bundle layout::

    manifest                  JSON: physics, light, sim and render sections
    image.png                 input RGB frame
    background.png            inpainted background, same size
    objects/<id>/mask.png     binary mask, thresholded at 128
    objects/<id>/albedo.png   optional full-frame RGB reflectance
    objects/<id>/normal.png   optional 8-bit encoded unit normals, n = 2*c/255 - 1

Run layout written by :func:`save_run`::

    frames/frame_%03d.png     final (relit) frames
    flow/flow_%03d.flo        dense flow to the next frame
    trajectory.csv            step, body_id, tx, ty, theta, vx, vy, omega
    contacts.csv              optional contact log for diagnostics

All dataclasses here are treated as immutable after construction; use
``dataclasses.replace`` for overrides.
"""

from __future__ import annotations

import csv
import json
import hashlib
import tempfile
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import IoError, MissingAsset, ShapeError, ValidationError
from .flow_io import write_flo

MASK_THRESHOLD = 128
DEFAULT_GRAVITY = (0.0, 980.0)  # cm/s^2, +y down
DEFAULT_DT = 1.0 / 60.0
DEFAULT_STEPS = 120
DEFAULT_SUBSTEPS = 4
DEFAULT_NUM_FRAMES = 16


# --------------------------------------------------------------------------- types


@dataclass(slots=True)
class DirectionalLight:
    """Light at infinity: unit direction, scalar intensity, ambient floor."""

    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    intensity: float = 0.0
    ambient: float = 1.0


@dataclass(slots=True)
class BoundarySegment:
    """Static collision edge (ground, wall, ramp). Infinite mass."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    orientation: str = "free"  # horizontal | vertical | free
    friction: float = 0.5
    elasticity: float = 0.5


@dataclass(slots=True)
class SimConfig:
    dt: float = DEFAULT_DT
    steps: int = DEFAULT_STEPS
    gravity: tuple[float, float] = DEFAULT_GRAVITY
    pixels_per_cm: float = 1.0
    substeps: int = DEFAULT_SUBSTEPS
    # contact solver tuning; defaults are the conventional values for an
    # iterative impulse solver and are not usually touched per scene
    velocity_iterations: int = 10
    baumgarte: float = 0.2
    slop: float = 0.5
    restitution_threshold: float = 10.0  # cm/s; slower impacts do not bounce
    rolling_friction: float = 0.01


@dataclass(slots=True)
class RenderConfig:
    num_frames: int = DEFAULT_NUM_FRAMES
    resolution: tuple[int, int] = (512, 512)  # (width, height)
    emit_flow: bool = True
    emit_intermediates: bool = False


@dataclass(slots=True)
class SceneObject:
    """A movable cutout with physical parameters and optional intrinsics.

    ``mask`` is a boolean (H, W) array. ``albedo`` and ``normal`` are
    full-frame uint8 rasters or None; normals are decoded/renormalized by the
    renderer, not here, so that bundle round-trips stay bit-exact.
    """

    id: int
    mask: np.ndarray
    albedo: np.ndarray | None = None
    normal: np.ndarray | None = None
    mass: float = 100.0
    friction: float = 0.5
    elasticity: float = 0.5
    initial_velocity: tuple[float, float] = (0.0, 0.0)
    initial_angular_velocity: float = 0.0
    applied_force: tuple[float, float] | None = None
    applied_torque: float | None = None
    force_point: tuple[float, float] | None = None  # image px; None = center of mass
    force_duration: float = 0.0  # 0 => single-step impulse


@dataclass(slots=True)
class SceneBundle:
    width: int
    height: int
    image: np.ndarray
    background: np.ndarray
    objects: list[SceneObject]
    boundaries: list[BoundarySegment] = field(default_factory=list)
    light: DirectionalLight = field(default_factory=DirectionalLight)
    sim: SimConfig = field(default_factory=SimConfig)
    render: RenderConfig = field(default_factory=RenderConfig)

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise ValidationError("object_id", f"no object with id {object_id}")


@dataclass(slots=True)
class RunManifest:
    """What a finished (or failed) run looks like on disk."""

    run_id: str = ""
    fingerprint: str = ""
    status: str = "done"  # queued | running | done | failed
    stage: str | None = None
    config: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


# --------------------------------------------------------------------------- helpers


def _require(cond: bool, fieldname: str, message: str) -> None:
    if not cond:
        raise ValidationError(fieldname, message)


def _as_vec2(value, fieldname: str) -> tuple[float, float]:
    try:
        x, y = value
        return (float(x), float(y))
    except (TypeError, ValueError):
        raise ValidationError(fieldname, f"expected a 2-vector, got {value!r}")


def _load_raster(root: Path, rel: str) -> np.ndarray:
    path = root / rel
    if not path.is_file():
        raise MissingAsset(rel)
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except OSError as exc:
        raise IoError(f"cannot decode {rel}: {exc}") from exc


def _load_rgb(root: Path, rel: str, size: tuple[int, int]) -> np.ndarray:
    path = root / rel
    if not path.is_file():
        raise MissingAsset(rel)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise IoError(f"cannot decode {rel}: {exc}") from exc
    if arr.shape[:2] != size:
        raise ShapeError(f"{rel}: expected {size[1]}x{size[0]}, got {arr.shape[1]}x{arr.shape[0]}")
    return arr


def _load_mask(root: Path, rel: str, size: tuple[int, int]) -> np.ndarray:
    arr = _load_raster(root, rel)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.shape != size:
        raise ShapeError(f"{rel}: expected {size[1]}x{size[0]}, got {arr.shape[1]}x{arr.shape[0]}")
    return arr >= MASK_THRESHOLD


def _save_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(arr).save(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------- load


def load_bundle(path: str | Path) -> SceneBundle:
    """Load and fully validate a scene bundle from a directory or .zip archive.

    Raises MissingAsset / ShapeError / ValidationError (naming the offending
    field); never returns a partially constructed bundle.
    """
    p = Path(path)
    if p.is_file() and p.suffix == ".zip":
        with tempfile.TemporaryDirectory() as tmp:
            try:
                with zipfile.ZipFile(p) as zf:
                    zf.extractall(tmp)
            except (OSError, zipfile.BadZipFile) as exc:
                raise IoError(f"cannot extract {p}: {exc}") from exc
            root = Path(tmp)
            inner = [d for d in root.iterdir() if d.is_dir()]
            if not (root / "manifest").is_file() and len(inner) == 1:
                root = inner[0]
            return _load_bundle_dir(root)
    if not p.is_dir():
        raise MissingAsset(str(p))
    return _load_bundle_dir(p)


def _load_bundle_dir(root: Path) -> SceneBundle:
    manifest_path = root / "manifest"
    if not manifest_path.is_file():
        raise MissingAsset("manifest")
    try:
        spec = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot parse manifest: {exc}") from exc

    width = int(spec.get("width", 0))
    height = int(spec.get("height", 0))
    _require(width > 0, "width", "must be positive")
    _require(height > 0, "height", "must be positive")
    size = (height, width)

    image = _load_rgb(root, spec.get("image", "image.png"), size)
    background = _load_rgb(root, spec.get("background", "background.png"), size)

    raw_objects = spec.get("objects", [])
    _require(len(raw_objects) >= 1, "objects", "bundle needs at least one object")

    objects: list[SceneObject] = []
    seen_ids: set[int] = set()
    for entry in raw_objects:
        oid = int(entry["id"])
        _require(oid not in seen_ids, "id", f"duplicate object id {oid}")
        seen_ids.add(oid)

        mask = _load_mask(root, entry.get("mask", f"objects/{oid}/mask.png"), size)
        _require(bool(mask.any()), "mask", f"object {oid} mask is empty")

        albedo = None
        if entry.get("albedo"):
            albedo = _load_rgb(root, entry["albedo"], size)
        normal = None
        if entry.get("normal"):
            normal = _load_rgb(root, entry["normal"], size)

        mass = float(entry.get("mass", 100.0))
        _require(mass > 0, "mass", f"object {oid}: mass must be > 0")
        friction = float(entry.get("friction", 0.5))
        _require(friction >= 0, "friction", f"object {oid}: friction must be >= 0")
        elasticity = float(entry.get("elasticity", 0.5))
        _require(0.0 <= elasticity <= 1.0, "elasticity", f"object {oid}: must be in [0, 1]")
        duration = float(entry.get("force_duration", 0.0))
        _require(duration >= 0, "force_duration", f"object {oid}: must be >= 0")

        force = entry.get("applied_force")
        torque = entry.get("applied_torque")
        point = entry.get("force_point")
        objects.append(
            SceneObject(
                id=oid,
                mask=mask,
                albedo=albedo,
                normal=normal,
                mass=mass,
                friction=friction,
                elasticity=elasticity,
                initial_velocity=_as_vec2(entry.get("initial_velocity", (0, 0)), "initial_velocity"),
                initial_angular_velocity=float(entry.get("initial_angular_velocity", 0.0)),
                applied_force=None if force is None else _as_vec2(force, "applied_force"),
                applied_torque=None if torque is None else float(torque),
                force_point=None if point is None else _as_vec2(point, "force_point"),
                force_duration=duration,
            )
        )

    boundaries = [_parse_boundary(b) for b in spec.get("boundaries", [])]
    light = _parse_light(spec.get("light", {}))
    sim = _parse_sim(spec.get("sim", {}))
    render = _parse_render(spec.get("render", {}), width, height)
    _require(render.num_frames <= sim.steps, "num_frames", "cannot exceed sim steps")

    return SceneBundle(
        width=width,
        height=height,
        image=image,
        background=background,
        objects=objects,
        boundaries=boundaries,
        light=light,
        sim=sim,
        render=render,
    )


def _parse_boundary(entry: dict) -> BoundarySegment:
    p0 = _as_vec2(entry["p0"], "p0")
    p1 = _as_vec2(entry["p1"], "p1")
    _require(p0 != p1, "p0", "boundary endpoints must differ")
    orientation = entry.get("orientation", "free")
    _require(
        orientation in ("horizontal", "vertical", "free"),
        "orientation",
        f"unknown orientation {orientation!r}",
    )
    if orientation == "horizontal":
        _require(p0[1] == p1[1], "orientation", "horizontal boundary must have equal y")
    if orientation == "vertical":
        _require(p0[0] == p1[0], "orientation", "vertical boundary must have equal x")
    friction = float(entry.get("friction", 0.5))
    _require(friction >= 0, "friction", "boundary friction must be >= 0")
    elasticity = float(entry.get("elasticity", 0.5))
    _require(0.0 <= elasticity <= 1.0, "elasticity", "boundary elasticity must be in [0, 1]")
    return BoundarySegment(p0=p0, p1=p1, orientation=orientation, friction=friction, elasticity=elasticity)


def _parse_light(entry: dict) -> DirectionalLight:
    if not entry:
        return DirectionalLight()
    direction = entry.get("direction", (0.0, 0.0, 1.0))
    try:
        dx, dy, dz = (float(v) for v in direction)
    except (TypeError, ValueError):
        raise ValidationError("direction", f"expected a 3-vector, got {direction!r}")
    norm = float(np.hypot(np.hypot(dx, dy), dz))
    _require(abs(norm - 1.0) <= 1e-6, "direction", f"light direction must be unit length, |d|={norm}")
    intensity = float(entry.get("intensity", 0.0))
    _require(intensity >= 0, "intensity", "must be >= 0")
    ambient = float(entry.get("ambient", 1.0))
    _require(0.0 <= ambient <= 1.0, "ambient", "must be in [0, 1]")
    return DirectionalLight(direction=(dx, dy, dz), intensity=intensity, ambient=ambient)


def _parse_sim(entry: dict) -> SimConfig:
    cfg = SimConfig(
        dt=float(entry.get("dt", DEFAULT_DT)),
        steps=int(entry.get("steps", DEFAULT_STEPS)),
        gravity=_as_vec2(entry.get("gravity", DEFAULT_GRAVITY), "gravity"),
        pixels_per_cm=float(entry.get("pixels_per_cm", 1.0)),
        substeps=int(entry.get("substeps", DEFAULT_SUBSTEPS)),
        velocity_iterations=int(entry.get("velocity_iterations", 10)),
        baumgarte=float(entry.get("baumgarte", 0.2)),
        slop=float(entry.get("slop", 0.5)),
        restitution_threshold=float(entry.get("restitution_threshold", 10.0)),
        rolling_friction=float(entry.get("rolling_friction", 0.01)),
    )
    _require(cfg.dt > 0, "dt", "must be > 0")
    _require(cfg.steps >= 1, "steps", "must be >= 1")
    _require(cfg.substeps >= 1, "substeps", "must be >= 1")
    _require(cfg.pixels_per_cm > 0, "pixels_per_cm", "must be > 0")
    _require(cfg.velocity_iterations >= 1, "velocity_iterations", "must be >= 1")
    return cfg


def _parse_render(entry: dict, width: int, height: int) -> RenderConfig:
    resolution = entry.get("resolution", (width, height))
    try:
        rw, rh = (int(v) for v in resolution)
    except (TypeError, ValueError):
        raise ValidationError("resolution", f"expected (width, height), got {resolution!r}")
    _require(
        (rw, rh) == (width, height),
        "resolution",
        f"render resolution {rw}x{rh} must match bundle {width}x{height}",
    )
    cfg = RenderConfig(
        num_frames=int(entry.get("num_frames", DEFAULT_NUM_FRAMES)),
        resolution=(rw, rh),
        emit_flow=bool(entry.get("emit_flow", True)),
        emit_intermediates=bool(entry.get("emit_intermediates", False)),
    )
    _require(cfg.num_frames >= 1, "num_frames", "must be >= 1")
    return cfg


# --------------------------------------------------------------------------- save


def save_bundle(bundle: SceneBundle, out: str | Path) -> Path:
    """Write a bundle back to disk in the canonical layout. Inverse of load_bundle."""
    root = Path(out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {root}: {exc}") from exc

    _save_png(root / "image.png", bundle.image)
    _save_png(root / "background.png", bundle.background)

    entries = []
    for obj in bundle.objects:
        rel = f"objects/{obj.id}"
        _save_png(root / rel / "mask.png", np.where(obj.mask, 255, 0).astype(np.uint8))
        entry: dict = {
            "id": obj.id,
            "mask": f"{rel}/mask.png",
            "mass": obj.mass,
            "friction": obj.friction,
            "elasticity": obj.elasticity,
            "initial_velocity": list(obj.initial_velocity),
            "initial_angular_velocity": obj.initial_angular_velocity,
            "force_duration": obj.force_duration,
        }
        if obj.albedo is not None:
            _save_png(root / rel / "albedo.png", obj.albedo)
            entry["albedo"] = f"{rel}/albedo.png"
        if obj.normal is not None:
            _save_png(root / rel / "normal.png", obj.normal)
            entry["normal"] = f"{rel}/normal.png"
        if obj.applied_force is not None:
            entry["applied_force"] = list(obj.applied_force)
        if obj.applied_torque is not None:
            entry["applied_torque"] = obj.applied_torque
        if obj.force_point is not None:
            entry["force_point"] = list(obj.force_point)
        entries.append(entry)

    manifest = {
        "width": bundle.width,
        "height": bundle.height,
        "image": "image.png",
        "background": "background.png",
        "objects": entries,
        "boundaries": [
            {
                "p0": list(b.p0),
                "p1": list(b.p1),
                "orientation": b.orientation,
                "friction": b.friction,
                "elasticity": b.elasticity,
            }
            for b in bundle.boundaries
        ],
        "light": {
            "direction": list(bundle.light.direction),
            "intensity": bundle.light.intensity,
            "ambient": bundle.light.ambient,
        },
        "sim": {
            "dt": bundle.sim.dt,
            "steps": bundle.sim.steps,
            "gravity": list(bundle.sim.gravity),
            "pixels_per_cm": bundle.sim.pixels_per_cm,
            "substeps": bundle.sim.substeps,
            "velocity_iterations": bundle.sim.velocity_iterations,
            "baumgarte": bundle.sim.baumgarte,
            "slop": bundle.sim.slop,
            "restitution_threshold": bundle.sim.restitution_threshold,
            "rolling_friction": bundle.sim.rolling_friction,
        },
        "render": {
            "num_frames": bundle.render.num_frames,
            "resolution": list(bundle.render.resolution),
            "emit_flow": bundle.render.emit_flow,
            "emit_intermediates": bundle.render.emit_intermediates,
        },
    }
    try:
        (root / "manifest").write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return root


def fingerprint_bundle(bundle: SceneBundle) -> str:
    """Content hash, stable across load/save cycles of the same bundle."""
    h = hashlib.sha256()

    def feed(arr: np.ndarray | None) -> None:
        if arr is None:
            h.update(b"\x00none")
        else:
            h.update(str(arr.shape).encode())
            h.update(str(arr.dtype).encode())
            h.update(np.ascontiguousarray(arr).tobytes())

    h.update(json.dumps([bundle.width, bundle.height]).encode())
    feed(bundle.image)
    feed(bundle.background)
    for obj in bundle.objects:
        h.update(
            json.dumps(
                [
                    obj.id,
                    obj.mass,
                    obj.friction,
                    obj.elasticity,
                    list(obj.initial_velocity),
                    obj.initial_angular_velocity,
                    None if obj.applied_force is None else list(obj.applied_force),
                    obj.applied_torque,
                    None if obj.force_point is None else list(obj.force_point),
                    obj.force_duration,
                ]
            ).encode()
        )
        feed(obj.mask)
        feed(obj.albedo)
        feed(obj.normal)
    for b in bundle.boundaries:
        h.update(json.dumps([list(b.p0), list(b.p1), b.orientation, b.friction, b.elasticity]).encode())
    h.update(
        json.dumps(
            [
                list(bundle.light.direction),
                bundle.light.intensity,
                bundle.light.ambient,
                bundle.sim.dt,
                bundle.sim.steps,
                list(bundle.sim.gravity),
                bundle.sim.pixels_per_cm,
                bundle.sim.substeps,
                bundle.render.num_frames,
                list(bundle.render.resolution),
            ]
        ).encode()
    )
    return h.hexdigest()


TRAJECTORY_COLUMNS = ("step", "body_id", "tx", "ty", "theta", "vx", "vy", "omega")


def save_run(trajectory, frames: Sequence, out: str | Path, *, config: dict | None = None,
             emit_flow: bool = True, emit_intermediates: bool = False) -> RunManifest:
    """Persist a finished run: frames, flow, trajectory, optional extras.

    ``trajectory`` is a dynamics.Trajectory; ``frames`` a list of
    render.FramePack. Kept duck-typed to avoid an import cycle.
    """
    if len(frames) == 0:
        raise ValidationError("frames", "a run needs at least one frame")
    root = Path(out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {root}: {exc}") from exc

    artifacts: dict = {"frames": [], "flow": []}
    if emit_intermediates:
        artifacts["composited"] = []
    for i, pack in enumerate(frames):
        rel = f"frames/frame_{i:03d}.png"
        _save_png(root / rel, pack.relit)
        artifacts["frames"].append(rel)
        if emit_intermediates:
            rel_comp = f"composited/frame_{i:03d}.png"
            _save_png(root / rel_comp, pack.composited)
            artifacts["composited"].append(rel_comp)
        if emit_flow and pack.flow is not None:
            rel_flow = f"flow/flow_{i:03d}.flo"
            (root / "flow").mkdir(parents=True, exist_ok=True)
            write_flo(root / rel_flow, pack.flow)
            artifacts["flow"].append(rel_flow)

    _write_trajectory_csv(root / "trajectory.csv", trajectory)
    artifacts["trajectory"] = "trajectory.csv"

    if getattr(trajectory, "contacts", None):
        _write_contacts_csv(root / "contacts.csv", trajectory)
        artifacts["contacts"] = "contacts.csv"

    return RunManifest(status="done", config=config or {}, artifacts=artifacts)


def _write_trajectory_csv(path: Path, trajectory) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAJECTORY_COLUMNS)
            for step, states in enumerate(trajectory.states):
                for body_id, st in zip(trajectory.body_ids, states):
                    writer.writerow(
                        [
                            step,
                            body_id,
                            repr(float(st.translation[0])),
                            repr(float(st.translation[1])),
                            repr(float(st.rotation)),
                            repr(float(st.linear_velocity[0])),
                            repr(float(st.linear_velocity[1])),
                            repr(float(st.angular_velocity)),
                        ]
                    )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_contacts_csv(path: Path, trajectory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "a", "b", "px", "py", "nx", "ny", "j_n", "j_t"))
        for ev in trajectory.contacts:
            writer.writerow(
                (
                    ev.step,
                    ev.a,
                    ev.b,
                    repr(float(ev.point[0])),
                    repr(float(ev.point[1])),
                    repr(float(ev.normal[0])),
                    repr(float(ev.normal[1])),
                    repr(float(ev.j_n)),
                    repr(float(ev.j_t)),
                )
            )


def load_trajectory(path: str | Path):
    """Rebuild a trajectory from trajectory.csv written by save_run."""
    from .dynamics import BodyState, Trajectory  # runtime import, avoids a cycle

    path = Path(path)
    if not path.is_file():
        raise MissingAsset(str(path))
    by_step: dict[int, list[tuple[int, BodyState]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TRAJECTORY_COLUMNS:
            raise IoError(f"{path}: unexpected trajectory header {header!r}")
        for row in reader:
            step = int(row[0])
            state = BodyState(
                translation=np.array([float(row[2]), float(row[3])]),
                rotation=float(row[4]),
                linear_velocity=np.array([float(row[5]), float(row[6])]),
                angular_velocity=float(row[7]),
            )
            by_step.setdefault(step, []).append((int(row[1]), state))
    if not by_step:
        raise IoError(f"{path}: no trajectory rows")
    body_ids = [bid for bid, _ in by_step[0]]
    states = [[st for _, st in by_step[i]] for i in sorted(by_step)]
    return Trajectory(body_ids=body_ids, states=states, contacts=[])
