"""Deterministic synthetic street scenes for offline runs and tests.

Hotspot images carry one saturated red disk over an asphalt-like texture;
non-hotspot images are the texture alone. The disk is the only systematic
difference between classes, so a small CNN must localize it to separate
them, which is exactly what the heatmap and drop-experiment checks exploit.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .imagery import CACHE_SUBDIR, HOTSPOT, NON_HOTSPOT, ImageRecord


@dataclass
class ToyScene:
    image: np.ndarray  # HxWx3 uint8
    label: str
    disk_bbox: Optional[tuple] = None  # (x0, y0, x1, y1), half-open
    disk_mask: Optional[np.ndarray] = None  # HxW bool


def _road_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(95.0, 130.0)
    img = np.full((size, size, 3), base, dtype=np.float64)
    img += rng.normal(0.0, 8.0, size=(size, size, 1))
    # Faint lane stripe at a random column; present in both classes.
    col = rng.integers(4, size - 4)
    width = int(rng.integers(1, 3))
    img[:, col : col + width] += rng.uniform(25.0, 45.0)
    return img


def toy_scene(label: str, rng: np.random.Generator, size: int = 64) -> ToyScene:
    img = _road_texture(rng, size)
    if label == NON_HOTSPOT:
        return ToyScene(image=np.clip(img, 0, 255).astype(np.uint8), label=label)
    if label != HOTSPOT:
        raise ValueError(f"label must be {HOTSPOT} or {NON_HOTSPOT}")
    radius = int(rng.integers(max(size // 10, 4), max(size // 5, 6)))
    cx = int(rng.integers(radius, size - radius))
    cy = int(rng.integers(radius, size - radius))
    yy, xx = np.ogrid[:size, :size]
    disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius
    img[disk, 0] = rng.uniform(215.0, 255.0)
    img[disk, 1] = rng.uniform(0.0, 30.0)
    img[disk, 2] = rng.uniform(0.0, 30.0)
    bbox = (cx - radius, cy - radius, cx + radius + 1, cy + radius + 1)
    return ToyScene(
        image=np.clip(img, 0, 255).astype(np.uint8),
        label=HOTSPOT,
        disk_bbox=bbox,
        disk_mask=disk,
    )


def toy_dataset(
    n_hotspot: int,
    n_non_hotspot: int,
    seed: int = 0,
    size: int = 64,
) -> list:
    """Scenes in a fixed order (hotspots first), reproducible per seed."""
    rng = np.random.default_rng(seed)
    scenes = [toy_scene(HOTSPOT, rng, size) for _ in range(n_hotspot)]
    scenes += [toy_scene(NON_HOTSPOT, rng, size) for _ in range(n_non_hotspot)]
    return scenes


def write_toy_records(
    scenes,
    workspace_root: Path,
    id_prefix: str = "toy",
) -> list:
    """Persist scenes as PNGs under the image cache and return ImageRecords.

    Synthetic records get fabricated coordinates (index-spread around 0,0)
    so manifest code paths behave exactly as with fetched imagery.
    """
    import hashlib

    workspace_root = Path(workspace_root)
    image_dir = workspace_root / CACHE_SUBDIR
    image_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, scene in enumerate(scenes):
        image_id = f"{id_prefix}_{i:05d}"
        rel = str(Path(CACHE_SUBDIR) / f"{image_id}.png")
        path = workspace_root / rel
        Image.fromarray(scene.image).save(path, format="PNG")
        data = path.read_bytes()
        records.append(
            ImageRecord(
                image_id=image_id,
                latitude=round(i * 1e-4, 6),
                longitude=round(-i * 1e-4, 6),
                heading=0.0,
                label=scene.label,
                file_path=rel,
                content_hash=hashlib.sha256(data).hexdigest(),
                source="fixture",
            )
        )
    return records
