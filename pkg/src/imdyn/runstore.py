"""Filesystem-backed registry of bundles and runs.

Everything the service persists lives under one artifact root (the
IMDYN_ARTIFACTS environment variable, or an explicit path):

    <root>/bundles.json          registered bundles: id -> {path, fingerprint}
    <root>/runs/<run_id>/        one directory per run
        request.json             the simulate request that created it
        trajectory.csv           per-step body states
        manifest.json            status, stage, artifact paths, timings
        frames/  flow/  ...      render outputs, once rendered

Run ids are content-derived (bundle fingerprint + canonical request), so
re-submitting the same request lands on the same directory instead of
duplicating work. The store itself is dumb and synchronous; locking and job
scheduling belong to the caller.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path

from .errors import IoError, MissingAsset
from .scene import RunManifest, SceneBundle, fingerprint_bundle, load_bundle

ENV_ROOT = "IMDYN_ARTIFACTS"


def artifact_root(explicit: str | Path | None = None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(ENV_ROOT)
    return Path(env) if env else Path("artifacts")


def canonical_request_id(fingerprint: str, request: dict) -> str:
    """Deterministic run id: bundle fingerprint + key-sorted request JSON."""
    blob = fingerprint + json.dumps(request, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class RunStore:
    def __init__(self, root: str | Path | None = None):
        self.root = artifact_root(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "runs").mkdir(exist_ok=True)
        self._lock = threading.Lock()
        self._bundles: dict[str, dict] = {}
        self._cache: dict[str, SceneBundle] = {}
        index = self.root / "bundles.json"
        if index.is_file():
            try:
                self._bundles = json.loads(index.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise IoError(f"cannot read bundle index: {exc}") from exc

    # ------------------------------------------------------------- bundles

    def register_bundle(self, path: str | Path) -> tuple[str, SceneBundle]:
        """Load and fingerprint a bundle; the id is stable across restarts."""
        bundle = load_bundle(path)
        fingerprint = fingerprint_bundle(bundle)
        bundle_id = fingerprint[:12]
        with self._lock:
            self._bundles[bundle_id] = {
                "path": str(Path(path).resolve()),
                "fingerprint": fingerprint,
            }
            self._cache[bundle_id] = bundle
            self._flush_index()
        return bundle_id, bundle

    def get_bundle(self, bundle_id: str) -> SceneBundle:
        with self._lock:
            cached = self._cache.get(bundle_id)
            entry = self._bundles.get(bundle_id)
        if cached is not None:
            return cached
        if entry is None:
            raise MissingAsset(f"bundle {bundle_id}")
        bundle = load_bundle(entry["path"])
        with self._lock:
            self._cache[bundle_id] = bundle
        return bundle

    def bundle_fingerprint(self, bundle_id: str) -> str:
        entry = self._bundles.get(bundle_id)
        if entry is None:
            raise MissingAsset(f"bundle {bundle_id}")
        return entry["fingerprint"]

    def list_bundles(self) -> dict[str, dict]:
        with self._lock:
            return dict(self._bundles)

    def _flush_index(self) -> None:
        tmp = self.root / "bundles.json.tmp"
        tmp.write_text(json.dumps(self._bundles, indent=2, sort_keys=True) + "\n")
        tmp.replace(self.root / "bundles.json")

    # ------------------------------------------------------------- runs

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def has_run(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "manifest.json").is_file()

    def write_request(self, run_id: str, request: dict) -> None:
        d = self.run_dir(run_id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "request.json").write_text(json.dumps(request, indent=2, sort_keys=True) + "\n")

    def read_request(self, run_id: str) -> dict:
        path = self.run_dir(run_id) / "request.json"
        if not path.is_file():
            raise MissingAsset(f"run {run_id}")
        return json.loads(path.read_text())

    def write_manifest(self, manifest: RunManifest) -> None:
        d = self.run_dir(manifest.run_id)
        d.mkdir(parents=True, exist_ok=True)
        tmp = d / "manifest.json.tmp"
        tmp.write_text(manifest.to_json() + "\n")
        tmp.replace(d / "manifest.json")

    def read_manifest(self, run_id: str) -> RunManifest:
        path = self.run_dir(run_id) / "manifest.json"
        if not path.is_file():
            raise MissingAsset(f"run {run_id}")
        return RunManifest.from_json(path.read_text())

    def artifact_path(self, run_id: str, rel: str) -> Path:
        """Resolve an artifact path, refusing traversal out of the run dir."""
        base = self.run_dir(run_id).resolve()
        target = (base / rel).resolve()
        if base not in target.parents and target != base:
            raise MissingAsset(rel)
        if not target.is_file():
            raise MissingAsset(rel)
        return target
