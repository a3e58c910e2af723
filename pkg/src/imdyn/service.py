"""HTTP service: register bundles, preview simulations, render asynchronously.

Start it with uvicorn (factory mode) or the CLI `serve` subcommand:

    uvicorn --factory imdyn.service:create_app
    imdyn serve --root artifacts --port 8000

Design notes. Simulation is fast, so POST /simulate runs it synchronously and
returns pose polylines for UI overlay. Rendering is slower, so POST
/runs/{id}/render queues a job on a small worker pool and the client polls
GET /runs/{id}. Run ids derive from the bundle fingerprint plus the canonical
request body, which makes re-submission idempotent: the same request maps to
the same run directory. Typed engine errors map onto status codes
(ValidationError 422 with the offending field, MissingAsset 404, others 400).
"""

from __future__ import annotations

import dataclasses
import io
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from pydantic import BaseModel, Field

from . import dynamics, render
from .errors import EngineError, MissingAsset, ValidationError
from .runstore import RunStore, canonical_request_id
from .scene import RunManifest, SceneBundle, load_trajectory, save_run

MAX_POLYLINE_POINTS = 128


# ------------------------------------------------------------------ wire models


class ObjectOverride(BaseModel):
    object_id: int
    force: tuple[float, float] | None = None
    torque: float | None = None
    point: tuple[float, float] | None = None
    force_duration: float | None = None
    initial_velocity: tuple[float, float] | None = None
    initial_angular_velocity: float | None = None


class SimulateIn(BaseModel):
    bundle_id: str
    overrides: list[ObjectOverride] = Field(default_factory=list)
    preview_only: bool = True
    steps: int | None = None
    dt: float | None = None


class RegisterBundleIn(BaseModel):
    path: str


class RenderIn(BaseModel):
    num_frames: int | None = None
    emit_intermediates: bool = False


# ------------------------------------------------------------------ helpers


def apply_overrides(bundle: SceneBundle, request: SimulateIn) -> SceneBundle:
    """A copy of the bundle with per-object and sim overrides applied."""
    for ov in request.overrides:
        bundle.object_by_id(ov.object_id)  # raises ValidationError when absent
    objects = []
    for obj in bundle.objects:
        ov = next((o for o in request.overrides if o.object_id == obj.id), None)
        if ov is None:
            objects.append(obj)
            continue
        changes: dict = {}
        if ov.force is not None:
            changes["applied_force"] = tuple(ov.force)
        if ov.torque is not None:
            changes["applied_torque"] = ov.torque
        if ov.point is not None:
            changes["force_point"] = tuple(ov.point)
        if ov.force_duration is not None:
            if ov.force_duration < 0:
                raise ValidationError("force_duration", "must be >= 0")
            changes["force_duration"] = ov.force_duration
        if ov.initial_velocity is not None:
            changes["initial_velocity"] = tuple(ov.initial_velocity)
        if ov.initial_angular_velocity is not None:
            changes["initial_angular_velocity"] = ov.initial_angular_velocity
        objects.append(dataclasses.replace(obj, **changes))
    sim = bundle.sim
    if request.steps is not None:
        if request.steps < 1:
            raise ValidationError("steps", "must be >= 1")
        sim = dataclasses.replace(sim, steps=request.steps)
    if request.dt is not None:
        if request.dt <= 0:
            raise ValidationError("dt", "must be > 0")
        sim = dataclasses.replace(sim, dt=request.dt)
    return dataclasses.replace(bundle, objects=objects, sim=sim)


def trajectory_polylines(trajectory: dynamics.Trajectory, pixels_per_cm: float) -> list[dict]:
    """Per-object sampled CoM path in pixels, capped at MAX_POLYLINE_POINTS;
    a motionless object collapses to a single point."""
    steps = len(trajectory.states) - 1
    count = min(MAX_POLYLINE_POINTS, steps + 1)
    picks = np.unique(np.round(np.linspace(0, steps, count)).astype(int))
    out = []
    for k, body_id in enumerate(trajectory.body_ids):
        points: list[list[float]] = []
        angles: list[float] = []
        for idx in picks:
            st = trajectory.states[idx][k]
            x = float(st.translation[0]) * pixels_per_cm
            y = float(st.translation[1]) * pixels_per_cm
            if points and abs(x - points[-1][0]) < 1e-9 and abs(y - points[-1][1]) < 1e-9:
                continue
            points.append([x, y])
            angles.append(float(st.rotation))
        out.append({"id": body_id, "points": points, "angles": angles})
    return out


def _png_bytes(array: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


_MEDIA_TYPES = {
    ".png": "image/png",
    ".flo": "application/octet-stream",
    ".csv": "text/csv",
    ".json": "application/json",
    ".npy": "application/octet-stream",
}


def _bundle_summary(bundle_id: str, bundle: SceneBundle, fingerprint: str) -> dict:
    base = f"/bundles/{bundle_id}"
    return {
        "bundle_id": bundle_id,
        "fingerprint": fingerprint,
        "width": bundle.width,
        "height": bundle.height,
        "image_url": f"{base}/image.png",
        "background_url": f"{base}/background.png",
        "objects": [
            {
                "id": obj.id,
                "mass": obj.mass,
                "friction": obj.friction,
                "elasticity": obj.elasticity,
                "mask_url": f"{base}/objects/{obj.id}/mask.png",
            }
            for obj in bundle.objects
        ],
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
        "sim": {
            "dt": bundle.sim.dt,
            "steps": bundle.sim.steps,
            "gravity": list(bundle.sim.gravity),
            "pixels_per_cm": bundle.sim.pixels_per_cm,
        },
        "render": {
            "num_frames": bundle.render.num_frames,
            "resolution": list(bundle.render.resolution),
        },
    }


def _manifest_payload(run_id: str, manifest: RunManifest) -> dict:
    urls: dict = {}
    for key, value in manifest.artifacts.items():
        prefix = f"/runs/{run_id}/artifacts/"
        if isinstance(value, list):
            urls[key] = [prefix + rel for rel in value]
        else:
            urls[key] = prefix + value
    return {
        "run_id": run_id,
        "fingerprint": manifest.fingerprint,
        "status": manifest.status,
        "stage": manifest.stage,
        "config": manifest.config,
        "artifacts": urls,
        "timings": manifest.timings,
        "error": manifest.error,
    }


# ------------------------------------------------------------------ app


def create_app(root: str | Path | None = None, ui_dir: str | Path | None = None) -> FastAPI:
    store = RunStore(root)
    executor = ThreadPoolExecutor(max_workers=2)
    app = FastAPI(title="imdyn")
    app.state.store = store

    @app.exception_handler(EngineError)
    async def _engine_error(request: Request, exc: EngineError):
        if isinstance(exc, ValidationError):
            return JSONResponse(
                status_code=422, content={"detail": str(exc), "field": exc.field}
            )
        if isinstance(exc, MissingAsset):
            return JSONResponse(status_code=404, content={"detail": str(exc)})
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    # -------------------------------------------------------------- bundles

    @app.post("/bundles")
    def register_bundle(body: RegisterBundleIn):
        bundle_id, bundle = store.register_bundle(body.path)
        return _bundle_summary(bundle_id, bundle, store.bundle_fingerprint(bundle_id))

    @app.get("/bundles/{bundle_id}")
    def get_bundle(bundle_id: str):
        bundle = store.get_bundle(bundle_id)
        return _bundle_summary(bundle_id, bundle, store.bundle_fingerprint(bundle_id))

    @app.get("/bundles/{bundle_id}/image.png")
    def get_bundle_image(bundle_id: str):
        bundle = store.get_bundle(bundle_id)
        return Response(_png_bytes(bundle.image), media_type="image/png")

    @app.get("/bundles/{bundle_id}/background.png")
    def get_bundle_background(bundle_id: str):
        bundle = store.get_bundle(bundle_id)
        return Response(_png_bytes(bundle.background), media_type="image/png")

    @app.get("/bundles/{bundle_id}/objects/{object_id}/mask.png")
    def get_object_mask(bundle_id: str, object_id: int):
        bundle = store.get_bundle(bundle_id)
        obj = bundle.object_by_id(object_id)
        return Response(
            _png_bytes(obj.mask.astype(np.uint8) * 255), media_type="image/png"
        )

    # -------------------------------------------------------------- simulate

    @app.post("/simulate")
    def simulate(body: SimulateIn):
        bundle = store.get_bundle(body.bundle_id)
        fingerprint = store.bundle_fingerprint(body.bundle_id)
        effective = apply_overrides(bundle, body)
        request_dict = body.model_dump()
        run_id = canonical_request_id(fingerprint, request_dict)

        trajectory = dynamics.simulate(effective)
        if not store.has_run(run_id):
            store.write_request(run_id, request_dict)
            from .scene import _write_trajectory_csv  # shared CSV writer

            _write_trajectory_csv(store.run_dir(run_id) / "trajectory.csv", trajectory)
            manifest = RunManifest(
                run_id=run_id,
                fingerprint=fingerprint,
                status="done",
                stage="simulate",
                config={
                    "bundle_id": body.bundle_id,
                    "steps": effective.sim.steps,
                    "dt": effective.sim.dt,
                },
                artifacts={"trajectory": "trajectory.csv"},
            )
            store.write_manifest(manifest)

        return {
            "run_id": run_id,
            "bundle_id": body.bundle_id,
            "steps": effective.sim.steps,
            "dt": effective.sim.dt,
            "objects": trajectory_polylines(trajectory, effective.sim.pixels_per_cm),
        }

    # -------------------------------------------------------------- render

    def _render_job(run_id: str, bundle: SceneBundle, num_frames: int, emit_intermediates: bool):
        manifest = store.read_manifest(run_id)
        manifest.status = "running"
        manifest.stage = "render"
        store.write_manifest(manifest)
        try:
            t0 = time.perf_counter()
            trajectory = load_trajectory(store.run_dir(run_id) / "trajectory.csv")
            samples = dynamics.sample_frames(
                trajectory, num_frames, pixels_per_cm=bundle.sim.pixels_per_cm
            )
            t1 = time.perf_counter()
            packs = render.render_sequence(bundle, samples)
            t2 = time.perf_counter()
            result = save_run(
                trajectory,
                packs,
                store.run_dir(run_id),
                config=manifest.config,
                emit_flow=bundle.render.emit_flow,
                emit_intermediates=emit_intermediates,
            )
            manifest.artifacts.update(result.artifacts)
            manifest.timings.update(
                {"sample": t1 - t0, "render": t2 - t1, "write": time.perf_counter() - t2}
            )
            manifest.status = "done"
            manifest.stage = "render"
            manifest.error = None
        except Exception as exc:  # noqa: BLE001 - job boundary, reported via manifest
            manifest.status = "failed"
            manifest.error = str(exc)
        store.write_manifest(manifest)

    @app.post("/runs/{run_id}/render")
    def render_run(run_id: str, body: RenderIn | None = None):
        manifest = store.read_manifest(run_id)  # 404 when unknown
        request = store.read_request(run_id)
        bundle = store.get_bundle(request["bundle_id"])
        body = body or RenderIn()
        num_frames = body.num_frames or bundle.render.num_frames
        steps = int(request.get("steps") or bundle.sim.steps)
        if not 1 <= num_frames <= steps + 1:
            raise ValidationError(
                "num_frames", f"need 1 <= num_frames <= {steps + 1}, got {num_frames}"
            )
        manifest.status = "queued"
        manifest.stage = "render"
        store.write_manifest(manifest)
        executor.submit(_render_job, run_id, bundle, num_frames, body.emit_intermediates)
        return {"run_id": run_id, "status": "queued"}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return _manifest_payload(run_id, store.read_manifest(run_id))

    @app.get("/runs/{run_id}/artifacts/{rel:path}")
    def get_artifact(run_id: str, rel: str):
        path = store.artifact_path(run_id, rel)
        media = _MEDIA_TYPES.get(path.suffix, "application/octet-stream")
        return FileResponse(path, media_type=media)

    # -------------------------------------------------------------- static UI

    ui_root = Path(ui_dir) if ui_dir is not None else None
    if ui_root is not None and ui_root.is_dir():

        @app.get("/")
        def index():
            return FileResponse(ui_root / "index.html", media_type="text/html")

        @app.get("/ui/{rel:path}")
        def ui_file(rel: str):
            target = (ui_root / rel).resolve()
            if ui_root.resolve() not in target.parents or not target.is_file():
                raise MissingAsset(rel)
            media = {
                ".html": "text/html",
                ".js": "text/javascript",
                ".css": "text/css",
            }.get(target.suffix, "application/octet-stream")
            return FileResponse(target, media_type=media)

    return app
