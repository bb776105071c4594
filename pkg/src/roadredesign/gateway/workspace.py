"""Filesystem workspace: every artifact the pipeline produces lives under one
root as plain files (JSON Lines + PNG), so a restarted process picks up
exactly where the previous one stopped and an auditor can read everything
with standard tools.

Layout under the root:
    config.json           module defaults (optional; versioned)
    events.jsonl          ingested accident events
    clusters.geojson/.csv hotspot clusters
    dataset/              manifest.json + records.jsonl
    images/               image cache (shared with imagery module)
    masks/                operator masks as PNG + JSON sidecars
    models/model.pt       trained classifier checkpoint (+ .json sidecar)
    jobs/                 one JSON per job, rewritten on state change
    candidates/{job}/     inpaint candidate PNGs
    sessions.jsonl        append-only session revisions
    reports/              latest.json / latest.csv
    idempotency.jsonl     replay log for mutating endpoints
"""

import hashlib
import json
import threading
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..classifier import load_checkpoint, load_image_rgb
from ..errors import RoadRedesignError
from ..imagery import DatasetManifest, load_manifest, save_manifest
from ..maskkit import BinaryMask, load_mask, save_mask

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "cluster": {"eps_meters": 100.0, "min_samples": 5},
    "capture": {"total_fov": 240.0, "per_image_fov": 80.0, "pitch": 0.0},
    "split": {"test_fraction": 0.3, "seed": 7},
    "train": {"backbone": "tinycnn", "abm": True, "epochs": 10,
              "learning_rate": 1e-3, "batch_size": 16, "seed": 0},
    "cam": {"method": "gradcam", "threshold": 0.5, "min_area": 0},
    "inpaint": {"cfg_scale": 12.0, "denoise_strength": 0.70,
                "sampler_name": "euler_a", "n_candidates": 3},
    "saliency": {"mode": "builtin", "k": 1.0},
}


class UnknownImage(RoadRedesignError):
    pass


class UnknownMask(RoadRedesignError):
    pass


class UnknownJob(RoadRedesignError):
    pass


class UnknownSession(RoadRedesignError):
    pass


class ModelNotTrained(RoadRedesignError):
    pass


class DatasetMissing(RoadRedesignError):
    pass


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class Workspace:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        for sub in ("dataset", "images", "masks", "models", "jobs", "candidates", "reports"):
            (self.root / sub).mkdir(exist_ok=True)
        self._manifest: Optional[DatasetManifest] = None
        self._model = None
        self._model_mtime = None
        self._lock = threading.Lock()
        self.config = self._load_config()

    # -- config ------------------------------------------------------------

    def _load_config(self) -> dict:
        for name in ("config.json", "config.toml"):
            path = self.root / name
            if not path.exists():
                continue
            if name.endswith(".json"):
                loaded = json.loads(path.read_text(encoding="utf-8"))
            else:
                import tomli

                loaded = tomli.loads(path.read_text(encoding="utf-8"))
            return _deep_merge(DEFAULT_CONFIG, loaded)
        return dict(DEFAULT_CONFIG)

    # -- events / clusters ---------------------------------------------------

    @property
    def events_path(self) -> Path:
        return self.root / "events.jsonl"

    @property
    def clusters_geojson_path(self) -> Path:
        return self.root / "clusters.geojson"

    @property
    def clusters_csv_path(self) -> Path:
        return self.root / "clusters.csv"

    # -- dataset manifest ----------------------------------------------------

    @property
    def dataset_dir(self) -> Path:
        return self.root / "dataset"

    def manifest(self, refresh: bool = False) -> DatasetManifest:
        with self._lock:
            if self._manifest is None or refresh:
                if not (self.dataset_dir / "manifest.json").exists():
                    raise DatasetMissing("no dataset manifest in workspace; run fetch/synth first")
                self._manifest = load_manifest(self.dataset_dir)
            return self._manifest

    def store_manifest(self, manifest: DatasetManifest) -> None:
        with self._lock:
            save_manifest(manifest, self.dataset_dir)
            self._manifest = manifest

    def has_manifest(self) -> bool:
        return (self.dataset_dir / "manifest.json").exists()

    def record(self, image_id: str):
        for rec in self.manifest().records:
            if rec.image_id == image_id:
                return rec
        raise UnknownImage(f"unknown image_id {image_id!r}")

    def image_array(self, image_id: str) -> np.ndarray:
        return load_image_rgb(self.root / self.record(image_id).file_path)

    # -- masks ----------------------------------------------------------------

    @property
    def masks_dir(self) -> Path:
        return self.root / "masks"

    def store_mask(self, mask: BinaryMask, image_id: str, source: str = "scribble") -> str:
        payload = mask.bits.tobytes() + image_id.encode("utf-8")
        mask_id = "m-" + hashlib.sha256(payload).hexdigest()[:12]
        save_mask(mask, self.masks_dir / f"{mask_id}.png",
                  source=source, parents=[image_id])
        return mask_id

    def mask_path(self, mask_id: str) -> Path:
        path = self.masks_dir / f"{mask_id}.png"
        if not path.exists():
            raise UnknownMask(f"unknown mask_id {mask_id!r}")
        return path

    def load_mask(self, mask_id: str) -> BinaryMask:
        return load_mask(self.mask_path(mask_id))

    # -- model ------------------------------------------------------------------

    @property
    def model_path(self) -> Path:
        return self.root / "models" / "model.pt"

    def model(self):
        """Cached checkpoint load, invalidated when the file changes."""
        path = self.model_path
        if not path.exists():
            raise ModelNotTrained("no trained model in workspace; run train first")
        mtime = path.stat().st_mtime_ns
        with self._lock:
            if self._model is None or self._model_mtime != mtime:
                self._model = load_checkpoint(path)
                self._model_mtime = mtime
            return self._model

    def model_identity(self) -> str:
        path = self.model_path
        if not path.exists():
            return "untrained"
        digest = hashlib.sha256(path.read_bytes()).hexdigest()[:12]
        sidecar = json.loads(
            path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8")
        )
        return f"{sidecar['backbone']}-{digest}"

    # -- jobs ----------------------------------------------------------------

    @property
    def jobs_dir(self) -> Path:
        return self.root / "jobs"

    def candidates_dir(self, job_id: str) -> Path:
        return self.root / "candidates" / job_id

    def candidate_path(self, job_id: str, candidate_id: str) -> Path:
        return self.candidates_dir(job_id) / f"{candidate_id}.png"

    # -- sessions / reports -----------------------------------------------------

    @property
    def sessions_path(self) -> Path:
        return self.root / "sessions.jsonl"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    # -- idempotency --------------------------------------------------------------

    @property
    def idempotency_path(self) -> Path:
        return self.root / "idempotency.jsonl"

    def idempotency_lookup(self, scope: str, key: str) -> Optional[dict]:
        if not self.idempotency_path.exists():
            return None
        with open(self.idempotency_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row["scope"] == scope and row["key"] == key:
                    return row["response"]
        return None

    def idempotency_store(self, scope: str, key: str, response: dict) -> None:
        with self._lock:
            with open(self.idempotency_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps({"scope": scope, "key": key, "response": response}) + "\n"
                )
