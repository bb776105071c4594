"""Visual saliency: where a driver's eye actually lands, versus where the
accident-prone features are, plus the color intervention that closes the gap.

The built-in salient-region baseline is a classical spectral-residual
detector (frequency-domain log-amplitude residual, smoothed magnitude,
threshold strictly above mean + k*std so a structureless image yields an
empty mask). External model endpoints and fixture masks sit behind the same
adapter so tests never need model weights.

Chrominance alteration works in a luminance/chrominance space with these
exact constants (full-range 8-bit):

    Y  =  0.299 R + 0.587 G + 0.114 B
    Cb = -0.168736 R - 0.331264 G + 0.5 B
    Cr =  0.5 R - 0.418688 G - 0.081312 B
    R  = Y + 1.402 Cr
    G  = Y - 0.344136 Cb - 0.714136 Cr
    B  = Y + 1.772 Cb

Y is held fixed while the (Cb, Cr) vector rotates toward the target hue and
grows; gamut violations are resolved by the closed-form largest chroma scale
that keeps all three channels in [0, 255], which preserves both hue and Y.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .apcam import CamConfig, ap_mask_for
from .errors import AdapterUnavailable, EmptyApMask, GeometryMismatch
from .maskkit import BinaryMask, png_bytes_to_mask

SALIENCY_SOURCES = ("external_model", "builtin_baseline", "fixture")

# Chroma treatment inside the region: target magnitude floor (8-bit chroma
# units) and relative gain, both scaled by strength.
CHROMA_PUSH = 60.0
CHROMA_GAIN = 0.5
RING_DILATION_PX = 15


@dataclass(frozen=True)
class SalientRegion:
    mask: BinaryMask
    source: str

    def __post_init__(self):
        if self.source not in SALIENCY_SOURCES:
            raise ValueError(f"unknown saliency source {self.source!r}")


@dataclass
class SaliencyConfig:
    """Which detector to use and how to binarize its output."""

    mode: str = "builtin"  # builtin | fixture | external
    k: float = 1.0  # threshold = mean + k*std, strict >
    resize_to: int = 64
    smooth_sigma: float = 2.5
    fixture_dir: Optional[Path] = None
    endpoint: Optional[str] = None
    timeout_s: float = 60.0
    post: Optional[Callable[[str, bytes, float], tuple]] = None


def _to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image.astype(np.float64)
    return (
        0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]
    ).astype(np.float64)


def spectral_residual_map(image: np.ndarray, resize_to: int = 64, smooth_sigma: float = 2.5) -> np.ndarray:
    """Continuous saliency map in the image's geometry (not normalized)."""
    gray = _to_gray(image)
    h, w = gray.shape
    small = np.asarray(
        Image.fromarray(gray.astype(np.float32)).resize(
            (resize_to, resize_to), Image.BILINEAR
        ),
        dtype=np.float64,
    )
    spectrum = np.fft.fft2(small)
    log_amp = np.log(np.abs(spectrum) + 1e-12)
    residual = log_amp - ndimage.uniform_filter(log_amp, size=3, mode="wrap")
    recon = np.fft.ifft2(np.exp(residual + 1j * np.angle(spectrum)))
    sal = np.abs(recon) ** 2
    sal = ndimage.gaussian_filter(sal, sigma=smooth_sigma)
    return np.asarray(
        Image.fromarray(sal.astype(np.float32)).resize((w, h), Image.BILINEAR),
        dtype=np.float64,
    )


def _binarize(sal_map: np.ndarray, k: float) -> np.ndarray:
    # Strict > keeps a perfectly flat map empty for any k >= 0.
    return sal_map > (sal_map.mean() + k * sal_map.std())


def salient_region(
    image: np.ndarray,
    config: SaliencyConfig = SaliencyConfig(),
    image_id: Optional[str] = None,
) -> SalientRegion:
    geometry = image.shape[:2]
    if config.mode == "builtin":
        sal = spectral_residual_map(image, config.resize_to, config.smooth_sigma)
        return SalientRegion(BinaryMask(_binarize(sal, config.k)), "builtin_baseline")
    if config.mode == "fixture":
        if config.fixture_dir is None or image_id is None:
            raise AdapterUnavailable("fixture mode needs fixture_dir and image_id")
        path = Path(config.fixture_dir) / f"{image_id}.png"
        if not path.exists():
            raise AdapterUnavailable(f"no saliency fixture for {image_id}")
        mask = png_bytes_to_mask(path.read_bytes())
        if mask.shape != geometry:
            raise GeometryMismatch(f"fixture {mask.shape} vs image {geometry}")
        return SalientRegion(mask, "fixture")
    if config.mode == "external":
        if not config.endpoint:
            raise AdapterUnavailable("external mode needs an endpoint")
        from .inpaint import image_to_png_bytes

        post = config.post or _default_saliency_post
        status, body = post(config.endpoint, image_to_png_bytes(image), config.timeout_s)
        if status != 200:
            raise AdapterUnavailable(f"saliency endpoint returned HTTP {status}")
        mask = png_bytes_to_mask(body)
        if mask.shape != geometry:
            raise GeometryMismatch(f"endpoint {mask.shape} vs image {geometry}")
        return SalientRegion(mask, "external_model")
    raise ValueError(f"unknown saliency mode {config.mode!r}")


def _default_saliency_post(url: str, png: bytes, timeout_s: float) -> tuple:
    import requests

    try:
        resp = requests.post(
            url, data=png, headers={"Content-Type": "image/png"}, timeout=timeout_s
        )
    except requests.RequestException as exc:
        raise AdapterUnavailable(str(exc)) from exc
    return resp.status_code, resp.content


# ---------------------------------------------------------------------------
# Overlap metric

def ap_saliency_ratio(salient: BinaryMask, ap_mask: BinaryMask) -> float:
    """100 * |salient AND ap| / |ap|. Empty AP area is an error, not a 0."""
    if salient.shape != ap_mask.shape:
        raise GeometryMismatch(f"salient {salient.shape} vs ap {ap_mask.shape}")
    ap_area = int(ap_mask.bits.sum())
    if ap_area == 0:
        raise EmptyApMask("AP mask has zero area; ratio undefined")
    inter = int((salient.bits & ap_mask.bits).sum())
    return 100.0 * inter / ap_area


@dataclass
class SaliencyReport:
    per_image: dict  # image_id -> ratio percent
    average: float
    excluded_image_ids: list = field(default_factory=list)

    @property
    def n_contributing(self) -> int:
        return len(self.per_image)

    @property
    def n_excluded(self) -> int:
        return len(self.excluded_image_ids)

    def to_json(self, path: Union[str, Path]) -> None:
        payload = {
            "per_image": self.per_image,
            "average": self.average,
            "excluded_image_ids": self.excluded_image_ids,
            "n_contributing": self.n_contributing,
            "n_excluded": self.n_excluded,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_id", "ap_saliency_ratio_percent"])
            for image_id in sorted(self.per_image):
                writer.writerow([image_id, f"{self.per_image[image_id]:.6f}"])
            writer.writerow(["average", f"{self.average:.6f}"])


def batch_saliency_report(
    items: Sequence,
    model,
    cam_config: CamConfig = CamConfig(),
    saliency_config: SaliencyConfig = SaliencyConfig(),
    image_loader: Optional[Callable[[object], np.ndarray]] = None,
) -> SaliencyReport:
    """Ratio per image, mean over the ones whose AP mask is non-empty.

    ``items`` yields (image_id, image array) pairs, or records resolved
    through ``image_loader``. Images with an empty AP mask are excluded from
    the mean and listed in excluded_image_ids.
    """
    per_image = {}
    excluded = []
    for item in items:
        if image_loader is not None:
            image_id, image = item.image_id, image_loader(item)
        else:
            image_id, image = item
        ap = ap_mask_for(model, image, cam_config)
        sal = salient_region(image, saliency_config, image_id=image_id)
        try:
            per_image[image_id] = ap_saliency_ratio(sal.mask, ap)
        except EmptyApMask:
            excluded.append(image_id)
    average = sum(per_image.values()) / len(per_image) if per_image else 0.0
    return SaliencyReport(per_image=per_image, average=average, excluded_image_ids=excluded)


# ---------------------------------------------------------------------------
# Chrominance alteration

@dataclass(frozen=True)
class ChromaParams:
    strength: float = 1.0
    target_hue_mode: str = "auto_contrast"  # auto_contrast | fixed
    fixed_hue: Optional[float] = None  # degrees, used when mode == fixed

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must be in [0, 1]")
        if self.target_hue_mode not in ("auto_contrast", "fixed"):
            raise ValueError(f"unknown target_hue_mode {self.target_hue_mode!r}")
        if self.target_hue_mode == "fixed" and self.fixed_hue is None:
            raise ValueError("fixed mode needs fixed_hue")


def _rgb_to_ycbcr(rgb: np.ndarray):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b
    return y, cb, cr


def _ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def ring_around(region: np.ndarray, px: int = RING_DILATION_PX) -> np.ndarray:
    """Dilation of the region by a disk of radius px, minus the region."""
    span = np.arange(-px, px + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    disk = (yy * yy + xx * xx) <= px * px
    dilated = ndimage.binary_dilation(region, structure=disk)
    return dilated & ~region


def mean_hue_deg(cb: np.ndarray, cr: np.ndarray, where: np.ndarray) -> float:
    """Circular-safe mean hue of the selected pixels (vector average)."""
    if not where.any():
        raise ValueError("empty selection")
    return float(np.degrees(np.arctan2(cr[where].mean(), cb[where].mean())))


def chrominance_alter(
    image: np.ndarray,
    region: Union[BinaryMask, np.ndarray],
    params: ChromaParams = ChromaParams(),
) -> np.ndarray:
    """Shift region chroma toward a contrasting hue without touching luminance.

    auto_contrast picks the hue 180 degrees from the mean hue of the ring
    just outside the region; fixed uses params.fixed_hue. Pixels outside the
    region come back bit-identical; strength 0 is the identity.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be HxWx3")
    reg = region.bits if isinstance(region, BinaryMask) else np.asarray(region, dtype=bool)
    if reg.shape != image.shape[:2]:
        raise GeometryMismatch(f"region {reg.shape} vs image {image.shape[:2]}")
    if params.strength == 0.0 or not reg.any():
        return image.copy()

    rgb = image.astype(np.float64)
    y, cb, cr = _rgb_to_ycbcr(rgb)

    if params.target_hue_mode == "fixed":
        target = np.radians(params.fixed_hue)
    else:
        ring = ring_around(reg)
        if ring.any():
            anchor = np.arctan2(cr[ring].mean(), cb[ring].mean())
        else:
            # Region fills the frame; contrast against its own mean hue.
            anchor = np.arctan2(cr[reg].mean(), cb[reg].mean())
        target = anchor + np.pi

    s = params.strength
    cb_r, cr_r = cb[reg], cr[reg]
    mag = np.hypot(cb_r, cr_r)
    hue = np.arctan2(cr_r, cb_r)
    # Gray pixels have no hue; they go straight to the target.
    hue = np.where(mag > 1e-9, hue, target)
    delta = np.angle(np.exp(1j * (target - hue)))
    new_hue = hue + s * delta
    new_mag = (1.0 - s) * mag + s * np.maximum(mag * (1.0 + CHROMA_GAIN), CHROMA_PUSH)

    new_cb = new_mag * np.cos(new_hue)
    new_cr = new_mag * np.sin(new_hue)

    # Closed-form gamut fit: each channel is Y + (linear form in chroma), so
    # scaling the chroma vector by t scales every deviation linearly. The
    # largest t in [0,1] keeping all channels in [0,255] preserves hue and Y.
    y_r = y[reg]
    dev_r = 1.402 * new_cr
    dev_g = -0.344136 * new_cb - 0.714136 * new_cr
    dev_b = 1.772 * new_cb
    t = np.ones_like(y_r)
    for dev in (dev_r, dev_g, dev_b):
        hi = np.where(dev > 0, (255.0 - y_r) / np.where(dev > 0, dev, 1.0), np.inf)
        lo = np.where(dev < 0, (0.0 - y_r) / np.where(dev < 0, dev, 1.0), np.inf)
        t = np.minimum(t, np.minimum(hi, lo))
    t = np.clip(t, 0.0, 1.0)

    out = rgb.copy()
    region_rgb = _ycbcr_to_rgb(y_r, new_cb * t, new_cr * t)
    out[reg] = region_rgb
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    # Outside-region pixels: restore source bytes exactly (rounding-proof).
    out[~reg] = image[~reg]
    return out


def save_altered(
    image: np.ndarray,
    params: ChromaParams,
    path: Union[str, Path],
) -> None:
    """PNG plus a JSON sidecar recording the parameters used."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path, format="PNG")
    sidecar = {
        "strength": params.strength,
        "target_hue_mode": params.target_hue_mode,
        "fixed_hue": params.fixed_hue,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2), encoding="utf-8"
    )
