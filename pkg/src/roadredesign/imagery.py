"""Street-view capture planning, image fetching, and the dataset manifest.

Wide coverage of a location is realized as non-overlapping heading tiles
(default three 80-degree tiles for 240 degrees total). Downloads land in a
content-addressed cache keyed by (lat, lon, heading, fov, pitch); fixture
mode reads pre-placed files under the same keys so the whole pipeline runs
offline and no test ever talks to a real provider.
"""

import dataclasses
import hashlib
import json
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    CacheCorruption,
    FixtureMissing,
    NetworkFailure,
    NoImageryAtLocation,
    ProviderQuotaExceeded,
    UnlabeledRecord,
)

HOTSPOT = "hotspot"
NON_HOTSPOT = "non_hotspot"
UNLABELED = "unlabeled"
LABELS = (HOTSPOT, NON_HOTSPOT, UNLABELED)

CACHE_SUBDIR = "images"


@dataclass(frozen=True)
class CapturePlan:
    latitude: float
    longitude: float
    headings: tuple  # compass degrees in [0, 360), ascending
    per_image_fov: float
    pitch: float = 0.0


def plan_captures(
    location: tuple[float, float],
    total_fov: float = 240.0,
    per_image_fov: float = 80.0,
    base_heading: float = 0.0,
    pitch: float = 0.0,
) -> CapturePlan:
    """Tile ``total_fov`` degrees into ceil(total/per) non-overlapping headings.

    Tiles are spaced ``per_image_fov`` apart and centered on ``base_heading``,
    e.g. total 240 / per-image 80 / base 0 gives headings {280, 0, 80}.
    """
    if not 0 < per_image_fov <= total_fov <= 360:
        raise ValueError("need 0 < per_image_fov <= total_fov <= 360")
    count = math.ceil(total_fov / per_image_fov)
    offsets = [(i - (count - 1) / 2.0) * per_image_fov for i in range(count)]
    headings = sorted((base_heading + off) % 360.0 for off in offsets)
    return CapturePlan(
        latitude=location[0],
        longitude=location[1],
        headings=tuple(headings),
        per_image_fov=per_image_fov,
        pitch=pitch,
    )


@dataclass(frozen=True)
class ImageRecord:
    """One fetched street-view image; ``file_path`` is relative to the workspace root."""

    image_id: str
    latitude: float
    longitude: float
    heading: float
    label: str
    file_path: str
    content_hash: str
    source: str  # "provider" | "fixture"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    def with_label(self, label: str) -> "ImageRecord":
        if self.label != UNLABELED and self.label != label:
            raise ValueError(f"label already set to {self.label!r}; labels are immutable")
        return dataclasses.replace(self, label=label)


def cache_key(lat: float, lon: float, heading: float, fov: float, pitch: float) -> str:
    """Deterministic, filesystem-safe key; also the fixture filename stem."""
    return f"sv_{lat:.6f}_{lon:.6f}_h{heading:.1f}_f{fov:.1f}_p{pitch:.1f}"


def location_key(lat: float, lon: float) -> tuple[float, float]:
    """Location identity at the same precision the cache key uses."""
    return (round(lat, 6), round(lon, 6))


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _default_transport(url: str, params: dict, timeout_s: float) -> tuple[int, bytes]:
    import requests

    try:
        resp = requests.get(url, params=params, timeout=timeout_s)
    except requests.RequestException as exc:
        raise NetworkFailure(str(exc)) from exc
    return resp.status_code, resp.content


@dataclass
class ProviderConfig:
    """Imagery source. Set ``fixture_dir`` for offline/CI runs.

    ``transport`` is the HTTP hook ((url, params, timeout) -> (status, body));
    tests inject stubs here, production uses the requests-backed default.
    """

    endpoint: str = "https://maps.googleapis.com/maps/api/streetview"
    api_key_env: str = "IMAGERY_API_KEY"
    image_size: str = "640x640"
    fixture_dir: Optional[Path] = None
    transport: Callable[[str, dict, float], tuple[int, bytes]] = _default_transport
    timeout_s: float = 30.0


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def fetch_image(
    lat: float,
    lon: float,
    heading: float,
    fov: float,
    pitch: float,
    provider: ProviderConfig,
    workspace_root: Path,
) -> ImageRecord:
    """Fetch (or reuse from cache) one image for a capture-plan entry.

    Repeated calls with an identical key are cache hits and make no network
    request. Cached bytes are verified against the recorded digest on reuse;
    a mismatch is a hard CacheCorruption error, never a silent re-download.
    """
    workspace_root = Path(workspace_root)
    cache_dir = workspace_root / CACHE_SUBDIR
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = cache_key(lat, lon, heading, fov, pitch)
    image_path = cache_dir / f"{key}.jpg"
    meta_path = cache_dir / f"{key}.meta.json"

    if image_path.exists():
        data = image_path.read_bytes()
        meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
        expected = meta.get("content_hash")
        actual = _sha256(data)
        if expected is not None and expected != actual:
            raise CacheCorruption(f"cache entry {key} hash mismatch")
        source = meta.get("source", "provider")
    elif provider.fixture_dir is not None:
        fixture = Path(provider.fixture_dir) / f"{key}.jpg"
        if not fixture.exists():
            raise FixtureMissing(f"no fixture image for key {key}")
        data = fixture.read_bytes()
        source = "fixture"
        _atomic_write(image_path, data)
        meta_path.write_text(
            json.dumps({"content_hash": _sha256(data), "source": source}), encoding="utf-8"
        )
    else:
        params = {
            "size": provider.image_size,
            "location": f"{lat:.6f},{lon:.6f}",
            "heading": f"{heading:.1f}",
            "fov": f"{fov:.1f}",
            "pitch": f"{pitch:.1f}",
            "key": os.environ.get(provider.api_key_env, ""),
        }
        status, data = provider.transport(provider.endpoint, params, provider.timeout_s)
        if status == 404:
            raise NoImageryAtLocation(f"no imagery at ({lat:.6f}, {lon:.6f}) heading {heading}")
        if status == 429:
            raise ProviderQuotaExceeded("imagery provider quota exceeded")
        if status != 200:
            raise NetworkFailure(f"provider returned HTTP {status}")
        source = "provider"
        _atomic_write(image_path, data)
        meta_path.write_text(
            json.dumps({"content_hash": _sha256(data), "source": source}), encoding="utf-8"
        )

    return ImageRecord(
        image_id=key,
        latitude=lat,
        longitude=lon,
        heading=heading,
        label=UNLABELED,
        file_path=str(Path(CACHE_SUBDIR) / f"{key}.jpg"),
        content_hash=_sha256(data),
        source=source,
    )


def fetch_plan(
    plan: CapturePlan,
    provider: ProviderConfig,
    workspace_root: Path,
    max_workers: int = 1,
) -> list[ImageRecord]:
    """Fetch every heading of a plan, optionally with bounded concurrency."""
    args = [
        (plan.latitude, plan.longitude, h, plan.per_image_fov, plan.pitch, provider, workspace_root)
        for h in plan.headings
    ]
    if max_workers <= 1:
        return [fetch_image(*a) for a in args]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda a: fetch_image(*a), args))


# ---------------------------------------------------------------------------
# Dataset manifest

@dataclass
class DatasetManifest:
    records: list
    split_seed: int
    test_fraction: float
    test_ids: set = field(default_factory=set)

    def train_records(self) -> list:
        return [r for r in self.records if r.image_id not in self.test_ids]

    def test_records(self) -> list:
        return [r for r in self.records if r.image_id in self.test_ids]

    def content_digest(self) -> str:
        payload = json.dumps(
            [dataclasses.asdict(r) for r in self.records] + [sorted(self.test_ids)],
            sort_keys=True,
        )
        return _sha256(payload.encode("utf-8"))


def build_manifest(
    records: Sequence[ImageRecord],
    labels_by_location: dict,
    split_seed: int,
    test_fraction: float,
) -> DatasetManifest:
    """Label records per location and draw a stratified, seeded test split.

    All headings of one location inherit that location's label. The test-set
    size is round(test_fraction * n) (half rounds up), allocated per class by
    largest remainder so the split stays stratified.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    labeled = []
    for record in records:
        loc = location_key(record.latitude, record.longitude)
        if loc not in labels_by_location:
            raise UnlabeledRecord(f"no label for location {loc} (image {record.image_id})")
        labeled.append(record.with_label(labels_by_location[loc]))

    ids = [r.image_id for r in labeled]
    if len(set(ids)) != len(ids):
        raise ValueError("image_ids must be unique within a manifest")

    by_class: dict[str, list] = {}
    for record in labeled:
        by_class.setdefault(record.label, []).append(record)

    n_total = len(labeled)
    n_test_total = int(math.floor(test_fraction * n_total + 0.5))

    quotas = {}
    remainders = []
    for label in sorted(by_class):
        ideal = test_fraction * len(by_class[label])
        quotas[label] = int(math.floor(ideal))
        remainders.append((-(ideal - math.floor(ideal)), label))
    leftover = n_test_total - sum(quotas.values())
    for _, label in sorted(remainders):
        if leftover <= 0:
            break
        if quotas[label] < len(by_class[label]):
            quotas[label] += 1
            leftover -= 1

    rng = np.random.default_rng(split_seed)
    test_ids: set[str] = set()
    for label in sorted(by_class):
        members = sorted(r.image_id for r in by_class[label])
        order = rng.permutation(len(members))
        test_ids.update(members[i] for i in order[: quotas[label]])

    return DatasetManifest(
        records=labeled, split_seed=split_seed, test_fraction=test_fraction, test_ids=test_ids
    )


def save_manifest(manifest: DatasetManifest, directory: Path) -> None:
    """records.jsonl (one record per line) + manifest.json split header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "records.jsonl", "w", encoding="utf-8") as fh:
        for record in manifest.records:
            fh.write(json.dumps(dataclasses.asdict(record), sort_keys=True) + "\n")
    header = {
        "split_seed": manifest.split_seed,
        "test_fraction": manifest.test_fraction,
        "test_ids": sorted(manifest.test_ids),
        "record_count": len(manifest.records),
    }
    (directory / "manifest.json").write_text(json.dumps(header, indent=2), encoding="utf-8")


def load_manifest(directory: Path) -> DatasetManifest:
    directory = Path(directory)
    header = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    records = []
    with open(directory / "records.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(ImageRecord(**json.loads(line)))
    return DatasetManifest(
        records=records,
        split_seed=header["split_seed"],
        test_fraction=header["test_fraction"],
        test_ids=set(header["test_ids"]),
    )
