"""Binary masks: algebra, scribble rasterization, serialization, adapters.

Internal convention everywhere: TRUE marks the region designated for change
or attention. File exports may use either polarity; the polarity actually
written is recorded in the sidecar so no consumer has to guess.

Masks are immutable value objects; every operation returns a new mask.
"""

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import AdapterUnavailable, DimensionMismatch, GeometryMismatch, InvalidMaskImage

TRUE_WHITE = "true_white"  # TRUE pixels written as 255
TRUE_BLACK = "true_black"  # TRUE pixels written as 0


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray  # HxW bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 2:
            raise ValueError("mask bits must be 2-D")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))


def _check_same_shape(masks: Sequence[BinaryMask]) -> None:
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise DimensionMismatch(f"mask shapes differ: {sorted(shapes)}")


def mask_union(*masks: BinaryMask) -> BinaryMask:
    if not masks:
        raise ValueError("mask_union needs at least one mask")
    _check_same_shape(masks)
    out = np.zeros(masks[0].shape, dtype=bool)
    for m in masks:
        out |= m.bits
    return BinaryMask(out)


def mask_intersect(*masks: BinaryMask) -> BinaryMask:
    if not masks:
        raise ValueError("mask_intersect needs at least one mask")
    _check_same_shape(masks)
    out = np.ones(masks[0].shape, dtype=bool)
    for m in masks:
        out &= m.bits
    return BinaryMask(out)


def mask_complement(mask: BinaryMask) -> BinaryMask:
    return BinaryMask(~mask.bits)


def mask_area(mask: BinaryMask) -> int:
    return int(np.count_nonzero(mask.bits))


# ---------------------------------------------------------------------------
# Scribbles

PAINT = "paint"
ERASE = "erase"


@dataclass(frozen=True)
class Stroke:
    points: tuple  # ((x, y), ...) pixel coordinates
    radius: float
    mode: str = PAINT

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("stroke radius must be >= 1")
        if self.mode not in (PAINT, ERASE):
            raise ValueError(f"unknown stroke mode {self.mode!r}")
        if not self.points:
            raise ValueError("stroke needs at least one point")
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))


@dataclass(frozen=True)
class ScribbleSet:
    strokes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))

    def to_json(self) -> dict:
        return {
            "strokes": [
                {"points": [[x, y] for x, y in s.points], "radius": s.radius, "mode": s.mode}
                for s in self.strokes
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "ScribbleSet":
        strokes = [
            Stroke(points=[(p[0], p[1]) for p in s["points"]], radius=float(s["radius"]), mode=s.get("mode", PAINT))
            for s in data.get("strokes", [])
        ]
        return cls(strokes=tuple(strokes))


def _stroke_hits(points: Sequence[tuple[float, float]], radius: float, width: int, height: int) -> np.ndarray:
    """Pixels whose center lies within ``radius`` of the clamped polyline.

    All comparisons use squared distances in float64 so an independent
    per-pixel reimplementation lands on bit-identical decisions.
    """
    xs = np.array([min(max(x, 0.0), float(width - 1)) for x, _ in points], dtype=np.float64)
    ys = np.array([min(max(y, 0.0), float(height - 1)) for _, y in points], dtype=np.float64)
    px, py = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    r2 = np.float64(radius) * np.float64(radius)

    hit = np.zeros((height, width), dtype=bool)
    if len(xs) == 1:
        dist2 = (px - xs[0]) ** 2 + (py - ys[0]) ** 2
        return dist2 <= r2
    for k in range(len(xs) - 1):
        x1, y1, x2, y2 = xs[k], ys[k], xs[k + 1], ys[k + 1]
        dx = x2 - x1
        dy = y2 - y1
        len2 = dx * dx + dy * dy
        if len2 == 0.0:
            dist2 = (px - x1) ** 2 + (py - y1) ** 2
        else:
            t = ((px - x1) * dx + (py - y1) * dy) / len2
            t = np.clip(t, 0.0, 1.0)
            dist2 = (px - (x1 + t * dx)) ** 2 + (py - (y1 + t * dy)) ** 2
        hit |= dist2 <= r2
    return hit


def rasterize_scribbles(scribbles: ScribbleSet, geometry: tuple[int, int]) -> BinaryMask:
    """Apply strokes in order onto an empty (width, height) canvas.

    Paint sets every pixel within the stroke radius of its polyline, erase
    clears them; out-of-bounds points are clamped to the canvas edge.
    """
    width, height = geometry
    bits = np.zeros((height, width), dtype=bool)
    for stroke in scribbles.strokes:
        hits = _stroke_hits(stroke.points, stroke.radius, width, height)
        if stroke.mode == PAINT:
            bits |= hits
        else:
            bits &= ~hits
    return BinaryMask(bits)


# ---------------------------------------------------------------------------
# Segmentation adapters

SALIENCY_SEGMENT_CLASSES = ("traffic_sign", "traffic_signal")


@dataclass(frozen=True)
class SegmentMaskSet:
    masks: dict  # class_name -> BinaryMask

    def __post_init__(self):
        if self.masks:
            _check_same_shape(list(self.masks.values()))

    def get(self, class_name: str) -> Optional[BinaryMask]:
        return self.masks.get(class_name)

    def classes(self) -> list[str]:
        return sorted(self.masks)


@dataclass
class SegmentAdapterConfig:
    """Where per-class masks come from.

    ``fixture_dir`` holds ``{image_id}/{class_name}.png`` files; ``fetch`` is
    an external-service hook returning ``class_name -> PNG bytes``. Exactly
    one source must be configured. External model training is out of scope;
    this module only ingests whichever masks the source produces.
    """

    fixture_dir: Optional[Path] = None
    fetch: Optional[Callable[[str], dict]] = None


def load_segment_masks(
    image_id: str,
    adapter: SegmentAdapterConfig,
    expected_geometry: Optional[tuple[int, int]] = None,
) -> SegmentMaskSet:
    """Per-class masks for an image; classes the source lacks are omitted."""
    if adapter.fixture_dir is not None:
        image_dir = Path(adapter.fixture_dir) / image_id
        per_class = {}
        if image_dir.is_dir():
            for mask_file in sorted(image_dir.glob("*.png")):
                per_class[mask_file.stem] = mask_file.read_bytes()
    elif adapter.fetch is not None:
        per_class = adapter.fetch(image_id)
    else:
        raise AdapterUnavailable("no segmentation source configured (fixture_dir or fetch)")

    masks = {}
    for class_name, payload in per_class.items():
        mask = png_bytes_to_mask(payload)
        if expected_geometry is not None and (mask.width, mask.height) != tuple(expected_geometry):
            raise GeometryMismatch(
                f"segment mask {class_name!r} is {mask.width}x{mask.height}, "
                f"expected {expected_geometry[0]}x{expected_geometry[1]}"
            )
        masks[class_name] = mask
    return SegmentMaskSet(masks=masks)


def compose_saliency_mask(
    ap_mask: Optional[BinaryMask] = None,
    segments: Optional[SegmentMaskSet] = None,
    road_marking_mask: Optional[BinaryMask] = None,
) -> BinaryMask:
    """Union of AP features, traffic signs/signals, and road markings.

    Absent components contribute nothing; at least one must be present.
    """
    parts: list[BinaryMask] = []
    if ap_mask is not None:
        parts.append(ap_mask)
    if segments is not None:
        for class_name in SALIENCY_SEGMENT_CLASSES:
            mask = segments.get(class_name)
            if mask is not None:
                parts.append(mask)
    if road_marking_mask is not None:
        parts.append(road_marking_mask)
    if not parts:
        raise ValueError("no mask components present")
    return mask_union(*parts)


# ---------------------------------------------------------------------------
# Serialization: 8-bit grayscale PNG, values {0, 255} only

def mask_to_png_bytes(mask: BinaryMask, polarity: str = TRUE_WHITE) -> bytes:
    pixels = np.where(mask.bits, 255, 0).astype(np.uint8)
    if polarity == TRUE_BLACK:
        pixels = 255 - pixels
    elif polarity != TRUE_WHITE:
        raise ValueError(f"unknown polarity {polarity!r}")
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_mask(data: bytes, polarity: str = TRUE_WHITE) -> BinaryMask:
    """Parse a mask PNG; any value other than 0/255 is an error.

    The strictness guards against anti-aliased masks sneaking in.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise InvalidMaskImage(f"not a decodable image: {exc}") from exc
    pixels = np.asarray(img.convert("L"))
    stray = np.setdiff1d(np.unique(pixels), [0, 255])
    if stray.size:
        raise InvalidMaskImage(f"mask PNG contains non-binary values {stray[:8].tolist()}")
    bits = pixels == 255
    if polarity == TRUE_BLACK:
        bits = ~bits
    elif polarity != TRUE_WHITE:
        raise ValueError(f"unknown polarity {polarity!r}")
    return BinaryMask(bits)


def save_mask(
    mask: BinaryMask,
    path,
    polarity: str = TRUE_WHITE,
    source: str = "composed",
    parents: Iterable[str] = (),
) -> None:
    """Write the mask PNG plus a JSON sidecar recording polarity and lineage."""
    path = Path(path)
    path.write_bytes(mask_to_png_bytes(mask, polarity))
    sidecar = {"polarity": polarity, "source": source, "parents": list(parents)}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")


def load_mask(path) -> BinaryMask:
    """Read a mask PNG, honoring the sidecar polarity when one exists."""
    path = Path(path)
    polarity = TRUE_WHITE
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        polarity = json.loads(sidecar.read_text(encoding="utf-8")).get("polarity", TRUE_WHITE)
    return png_bytes_to_mask(path.read_bytes(), polarity)
