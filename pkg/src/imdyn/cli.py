"""Command-line driver.

    imdyn validate  --bundle scenes/demo
    imdyn simulate  --bundle scenes/demo --out runs/1 --force 1:200,0
    imdyn render    --bundle scenes/demo --out runs/1 --frames 16
    imdyn refine    --out runs/1 [--bundle scenes/demo] [--denoiser-endpoint host:port]
    imdyn pipeline  --bundle scenes/demo --out runs/1
    imdyn serve     --root artifacts --port 8000

`simulate` writes trajectory.csv into --out; `render` picks that file up and
adds frames/ and flow/; `refine` reads the rendered frames, downsamples them
to a latent stand-in grid, and runs the noise/denoise schedule against either
a wire-connected denoiser or the built-in deterministic stand-in. `pipeline`
chains all of it and writes a manifest. Typed engine failures print to stderr
and exit 1; argparse handles flag errors with the usual usage text and exit 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import dynamics, render
from .errors import EngineError, IoError, MissingAsset
from .refine import DampingDenoiser, default_plan, default_schedule, nearest_resize
from .refine import refine as run_refine_schedule
from .runstore import canonical_request_id
from .scene import (
    SceneBundle,
    _write_trajectory_csv,
    fingerprint_bundle,
    load_bundle,
    load_trajectory,
    save_run,
)

LATENT_DOWNSAMPLE = 8


# ------------------------------------------------------------------ flag parsing


def _parse_force(text: str) -> tuple[int, tuple[float, float], tuple[float, float] | None]:
    """ID:fx,fy[,px,py] -> (object_id, force, anchor point or None)."""
    try:
        ident, rest = text.split(":", 1)
        parts = [float(p) for p in rest.split(",")]
        if len(parts) == 2:
            return int(ident), (parts[0], parts[1]), None
        if len(parts) == 4:
            return int(ident), (parts[0], parts[1]), (parts[2], parts[3])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected ID:fx,fy[,px,py], got {text!r}")


def _parse_torque(text: str) -> tuple[int, float]:
    try:
        ident, value = text.split(":", 1)
        return int(ident), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ID:torque, got {text!r}")


def _apply_flags(bundle: SceneBundle, args: argparse.Namespace) -> SceneBundle:
    forces = {f[0]: f for f in (args.force or [])}
    torques = dict(args.torque or [])
    for object_id in (*forces, *torques):
        bundle.object_by_id(object_id)  # raises ValidationError when unknown
    objects = []
    for obj in bundle.objects:
        changes: dict = {}
        if obj.id in forces:
            _, vec, point = forces[obj.id]
            changes["applied_force"] = vec
            if point is not None:
                changes["force_point"] = point
        if obj.id in torques:
            changes["applied_torque"] = torques[obj.id]
        objects.append(dataclasses.replace(obj, **changes) if changes else obj)
    sim = bundle.sim
    sim_changes: dict = {}
    if args.steps is not None:
        sim_changes["steps"] = args.steps
    if args.dt is not None:
        sim_changes["dt"] = args.dt
    if sim_changes:
        sim = dataclasses.replace(sim, **sim_changes)
    return dataclasses.replace(bundle, objects=objects, sim=sim)


# ------------------------------------------------------------------ latent stand-in


def latents_from_frames(frames: np.ndarray) -> np.ndarray:
    """(n, H, W, 3) uint8 -> (n, H/8, W/8, 3) float32 in [-1, 1].

    A stand-in for a learned encoder: nearest downsample plus affine range
    map, enough to exercise the refinement loop end to end.
    """
    n, h, w = frames.shape[:3]
    lh, lw = max(1, h // LATENT_DOWNSAMPLE), max(1, w // LATENT_DOWNSAMPLE)
    out = np.empty((n, lh, lw, 3), dtype=np.float32)
    for i in range(n):
        small = nearest_resize(frames[i], (lh, lw))
        out[i] = small.astype(np.float32) / 127.5 - 1.0
    return out


def _read_frames(run_dir: Path) -> np.ndarray:
    from PIL import Image

    frame_dir = run_dir / "frames"
    files = sorted(frame_dir.glob("frame_*.png"))
    if not files:
        raise MissingAsset(str(frame_dir))
    return np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files])


def _build_denoiser(args: argparse.Namespace):
    if args.denoiser_endpoint:
        from .denoiser_wire import WireDenoiser

        host, _, port = args.denoiser_endpoint.rpartition(":")
        try:
            return WireDenoiser(host or "127.0.0.1", int(port))
        except ValueError:
            raise IoError(f"bad endpoint {args.denoiser_endpoint!r}, expected host:port")
    return DampingDenoiser()


def _union_mask(bundle: SceneBundle) -> np.ndarray:
    union = np.zeros((bundle.height, bundle.width), dtype=bool)
    for obj in bundle.objects:
        union |= obj.mask
    return union


def _run_refine(args: argparse.Namespace, out: Path, bundle: SceneBundle | None) -> str:
    frames = _read_frames(out)
    latents = latents_from_frames(frames)
    schedule = default_schedule()
    mask = _union_mask(bundle) if bundle is not None else None
    plan = default_plan(
        union_mask=mask, latent_shape=latents.shape[1:3], seed=args.seed
    )
    refined = run_refine_schedule(latents, plan, schedule, _build_denoiser(args))
    np.save(out / "refined_latents.npy", refined)
    return "refined_latents.npy"


# ------------------------------------------------------------------ subcommands


def cmd_validate(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    print(f"ok: {len(bundle.objects)} objects, {bundle.width}x{bundle.height}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    bundle = _apply_flags(load_bundle(args.bundle), args)
    trajectory = dynamics.simulate(bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_trajectory_csv(out / "trajectory.csv", trajectory)
    print(f"simulated {bundle.sim.steps} steps, {len(trajectory.body_ids)} bodies -> {out / 'trajectory.csv'}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    out = Path(args.out)
    trajectory = load_trajectory(out / "trajectory.csv")
    num_frames = args.frames or bundle.render.num_frames
    samples = dynamics.sample_frames(
        trajectory, num_frames, pixels_per_cm=bundle.sim.pixels_per_cm
    )
    packs = render.render_sequence(bundle, samples)
    manifest = save_run(
        trajectory,
        packs,
        out,
        emit_flow=bundle.render.emit_flow,
        emit_intermediates=args.intermediates or bundle.render.emit_intermediates,
    )
    print(f"rendered {len(manifest.artifacts['frames'])} frames, {len(manifest.artifacts['flow'])} flow files -> {out}")
    return 0


def cmd_refine(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle) if args.bundle else None
    rel = _run_refine(args, Path(args.out), bundle)
    print(f"refined latents -> {Path(args.out) / rel}")
    return 0


def cmd_pipeline(args: argparse.Namespace) -> int:
    t_start = time.perf_counter()
    bundle = _apply_flags(load_bundle(args.bundle), args)
    fingerprint = fingerprint_bundle(bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    timings: dict = {}
    t0 = time.perf_counter()
    trajectory = dynamics.simulate(bundle)
    timings["simulate"] = time.perf_counter() - t0
    _write_trajectory_csv(out / "trajectory.csv", trajectory)
    print(f"simulate: {bundle.sim.steps} steps in {timings['simulate']:.2f}s")

    t0 = time.perf_counter()
    num_frames = args.frames or bundle.render.num_frames
    samples = dynamics.sample_frames(
        trajectory, num_frames, pixels_per_cm=bundle.sim.pixels_per_cm
    )
    packs = render.render_sequence(bundle, samples)
    manifest = save_run(
        trajectory,
        packs,
        out,
        emit_flow=bundle.render.emit_flow,
        emit_intermediates=args.intermediates or bundle.render.emit_intermediates,
    )
    timings["render"] = time.perf_counter() - t0
    print(f"render: {num_frames} frames in {timings['render']:.2f}s")

    if not args.skip_refine:
        t0 = time.perf_counter()
        manifest.artifacts["refined"] = _run_refine(args, out, bundle)
        timings["refine"] = time.perf_counter() - t0
        print(f"refine: done in {timings['refine']:.2f}s")

    manifest.run_id = canonical_request_id(
        fingerprint,
        {
            "frames": num_frames,
            "seed": args.seed,
            "steps": bundle.sim.steps,
            "dt": bundle.sim.dt,
        },
    )
    manifest.fingerprint = fingerprint
    manifest.stage = "pipeline"
    manifest.timings = timings
    manifest.config = {"seed": args.seed, "frames": num_frames, "steps": bundle.sim.steps}
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    print(f"pipeline: total {time.perf_counter() - t_start:.2f}s -> {out / 'manifest.json'}")
    return 0


def cmd_demo(args: argparse.Namespace) -> int:
    from .demo import write_demo_bundle

    out = write_demo_bundle(args.out)
    print(f"demo bundle -> {out}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.root, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imdyn", description="Image-space rigid-body dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, out_required: bool = True) -> None:
        p.add_argument("--bundle", required=True, help="scene bundle directory or .zip")
        if out_required:
            p.add_argument("--out", required=True, help="output run directory")

    p = sub.add_parser("validate", help="lint a bundle and exit")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_validate)

    sim_flags = argparse.ArgumentParser(add_help=False)
    sim_flags.add_argument("--steps", type=int, default=None)
    sim_flags.add_argument("--dt", type=float, default=None)
    sim_flags.add_argument("--force", type=_parse_force, action="append", metavar="ID:fx,fy[,px,py]")
    sim_flags.add_argument("--torque", type=_parse_torque, action="append", metavar="ID:torque")

    p = sub.add_parser("simulate", parents=[sim_flags], help="run physics, write trajectory.csv")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("render", help="render frames/flow from a saved trajectory")
    common(p)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--intermediates", action="store_true", help="also write composited frames")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("refine", help="run the latent refinement loop on rendered frames")
    p.add_argument("--bundle", default=None, help="bundle for the foreground mask (optional)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--denoiser-endpoint", default=None, metavar="HOST:PORT")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("pipeline", parents=[sim_flags], help="simulate + render + refine")
    common(p)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--intermediates", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--denoiser-endpoint", default=None, metavar="HOST:PORT")
    p.add_argument("--skip-refine", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("demo", help="write the built-in demo scene bundle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--root", default=None, help="artifact root (default: $IMDYN_ARTIFACTS or ./artifacts)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui", default=None, help="directory with the built frontend")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
