"""Mask-guided redesign rendering.

A catalog of seven traffic-calming design prompts drives an inpainting
backend behind a narrow adapter protocol. The bundled mock backend is fully
deterministic (seeded noise-textured fill, feathered 3 px inside the mask
edge) so the pipeline and its tests run without any diffusion service; an
HTTP adapter talks to a real one when available. Whatever a backend
returns, pixels outside the mask are composited back from the source image
byte for byte.
"""

import base64
import io
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    BackendTimeout,
    BackendUnavailable,
    EmptyInstanceSet,
    GeometryMismatch,
)
from .maskkit import BinaryMask

# Guidance-scale and denoise ranges: the hard limits reject, the narrower
# photorealism bands only warn.
CFG_LIMITS = (0.0, 30.0)
CFG_BAND = (7.0, 18.0)
DENOISE_LIMITS = (0.0, 1.0)
DENOISE_BAND = (0.65, 0.75)

# Defaults sit at the band midpoints.
DEFAULT_CFG = 12.0
DEFAULT_DENOISE = 0.70
DEFAULT_SAMPLER = "euler_a"


class SettingsBandWarning(UserWarning):
    """Setting is legal but outside the band that tends to look photoreal."""


@dataclass(frozen=True)
class PromptSpec:
    design_name: str
    subject_word: str
    class_prompt: str

    def full_prompt(self) -> str:
        """Class prompt with the subject word spliced in after "photo of"."""
        prefix = "photo of"
        assert self.class_prompt.startswith(prefix)
        return f"{prefix} {self.subject_word}{self.class_prompt[len(prefix):]}"


# The raw chicane listing reads "hoto of"; normalized to "photo of" here.
_CATALOG = (
    PromptSpec(
        "chicane",
        "road-chicane0",
        "photo of S-shaped curve in the vehicle driving path, created by "
        "offset curb extensions in straight road",
    ),
    PromptSpec(
        "choker",
        "road-choker0",
        "photo of parallel or offsetting curb extensions, which effectively "
        "reduce road width for a specific distance",
    ),
    PromptSpec(
        "curb_extension",
        "road-curb0",
        "photo of extension of sidewalk at intersection for reducing crossing "
        "distance and increasing visibility",
    ),
    PromptSpec(
        "raised_median",
        "road-median0",
        "photo of barriers in center portion of street or roadway separating "
        "different lanes and traffic direction",
    ),
    PromptSpec(
        "roundabout",
        "road-circle0",
        "photo of roundabouts or traffic circle with a circular central space "
        "in middle of an intersection",
    ),
    PromptSpec(
        "street_plaza",
        "road-plaza0",
        "photo of small public spaces on road sides for pedestrians usage and "
        "is equipped with landscaping elements, street furniture, light poles, "
        "bench, flowers",
    ),
    PromptSpec(
        "big_intersection",
        "road-intersection0",
        "photo of big intersection with bus corridors, different lane marking, "
        "crossways",
    ),
)

DESIGN_NAMES = tuple(p.design_name for p in _CATALOG)


def prompt_catalog() -> list:
    """The seven design prompt specs, in catalog order. Pure constant."""
    return list(_CATALOG)


def prompt_for(design_name: str) -> PromptSpec:
    for spec in _CATALOG:
        if spec.design_name == design_name:
            return spec
    raise KeyError(f"unknown design {design_name!r}; expected one of {DESIGN_NAMES}")


DREAMBOOTH_DEFAULTS = {
    "epochs": 2000,
    "learning_rate": 1e-6,
    "class_images_per_class": 50,
}
TEXTUAL_INVERSION_DEFAULTS = {
    "epochs": 2000,
    "embedding_learning_rate": 0.005,
    "tokens_per_word": 8,
}


def emit_finetune_recipe(
    designs: dict,
    method: str,
    out_dir: Union[str, Path],
) -> dict:
    """Serialize a fine-tune recipe for an external harness.

    ``designs`` maps design_name -> sequence of instance image paths. Writes
    recipe.json under out_dir; for textual_inversion also one prompt .txt per
    instance image (the harness reads the caption next to the image).
    """
    if method not in ("dreambooth", "textual_inversion"):
        raise ValueError("method must be 'dreambooth' or 'textual_inversion'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_design = {}
    for design_name, images in designs.items():
        spec = prompt_for(design_name)
        images = [str(p) for p in images]
        if not images:
            raise EmptyInstanceSet(f"no instance images supplied for {design_name}")
        per_design[design_name] = {
            "subject_word": spec.subject_word,
            "class_prompt": spec.class_prompt,
            "instance_prompt": spec.full_prompt(),
            "instance_images": images,
        }
        if method == "textual_inversion":
            prompt_dir = out_dir / "prompts" / design_name
            prompt_dir.mkdir(parents=True, exist_ok=True)
            for image_path in images:
                stem = Path(image_path).stem
                (prompt_dir / f"{stem}.txt").write_text(
                    spec.full_prompt() + "\n", encoding="utf-8"
                )
    recipe = {"method": method, "designs": per_design}
    recipe.update(
        DREAMBOOTH_DEFAULTS if method == "dreambooth" else TEXTUAL_INVERSION_DEFAULTS
    )
    (out_dir / "recipe.json").write_text(
        json.dumps(recipe, indent=2, sort_keys=True), encoding="utf-8"
    )
    return recipe


# ---------------------------------------------------------------------------
# Requests and results

@dataclass
class InpaintRequest:
    image_id: str
    mask: BinaryMask
    prompt: Union[PromptSpec, str]
    cfg_scale: float = DEFAULT_CFG
    denoise_strength: float = DEFAULT_DENOISE
    seed: int = 0
    sampler_name: str = DEFAULT_SAMPLER
    n_candidates: int = 1

    def prompt_text(self) -> str:
        if isinstance(self.prompt, PromptSpec):
            return self.prompt.full_prompt()
        return self.prompt

    def validate(self) -> list:
        """Reject out-of-limit values; collect + emit warnings for out-of-band ones."""
        if not CFG_LIMITS[0] <= self.cfg_scale <= CFG_LIMITS[1]:
            raise ValueError(
                f"cfg_scale {self.cfg_scale} outside [{CFG_LIMITS[0]}, {CFG_LIMITS[1]}]"
            )
        if not DENOISE_LIMITS[0] <= self.denoise_strength <= DENOISE_LIMITS[1]:
            raise ValueError(
                f"denoise_strength {self.denoise_strength} "
                f"outside [{DENOISE_LIMITS[0]}, {DENOISE_LIMITS[1]}]"
            )
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        notes = []
        if not CFG_BAND[0] <= self.cfg_scale <= CFG_BAND[1]:
            notes.append(
                f"cfg_scale {self.cfg_scale} outside recommended band "
                f"[{CFG_BAND[0]}, {CFG_BAND[1]}]"
            )
        if not DENOISE_BAND[0] <= self.denoise_strength <= DENOISE_BAND[1]:
            notes.append(
                f"denoise_strength {self.denoise_strength} "
                f"outside recommended band [{DENOISE_BAND[0]}, {DENOISE_BAND[1]}]"
            )
        for note in notes:
            warnings.warn(note, SettingsBandWarning, stacklevel=3)
        return notes


@dataclass
class InpaintResult:
    candidates: list  # HxWx3 uint8 arrays, composited
    seeds: list  # per-candidate seed, parallel to candidates
    backend_name: str
    request: InpaintRequest
    warnings: list = field(default_factory=list)


class InpaintBackend(Protocol):
    name: str

    def render(
        self, image: np.ndarray, mask: np.ndarray, request: InpaintRequest
    ) -> list: ...


class MockBackend:
    """Deterministic stand-in: fills the masked region with seeded gray
    noise, feathering the first ``feather_px`` pixels inside the mask edge
    into the original. Identical request -> identical bytes.
    """

    name = "mock"

    def __init__(self, feather_px: float = 3.0):
        self.feather_px = feather_px

    def render(self, image, mask, request):
        out = []
        # Distance to the nearest outside pixel; 0 everywhere outside the mask.
        dist = ndimage.distance_transform_edt(mask)
        alpha = np.clip(dist / max(self.feather_px, 1e-9), 0.0, 1.0)[..., None]
        for i in range(request.n_candidates):
            rng = np.random.default_rng(request.seed + i)
            gray = rng.integers(80, 176, size=mask.shape, dtype=np.uint8)
            fill = np.stack([gray, gray, gray], axis=-1).astype(np.float64)
            blended = image.astype(np.float64) * (1.0 - alpha) + fill * alpha
            out.append(np.clip(np.rint(blended), 0, 255).astype(np.uint8))
        return out


def image_to_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def _default_post(url: str, payload: dict, timeout_s: float) -> tuple:
    import requests

    try:
        resp = requests.post(url, json=payload, timeout=timeout_s)
    except requests.Timeout as exc:
        raise BackendTimeout(str(exc)) from exc
    except requests.RequestException as exc:
        raise BackendUnavailable(str(exc)) from exc
    return resp.status_code, resp.content


class HttpBackend:
    """Adapter for a JSON-over-HTTP diffusion service.

    Request body: {image, mask (TRUE=inpaint as white), prompt, cfg_scale,
    denoise_strength, seed, sampler, n}; images travel as base64 PNG. The
    reply must carry {"images": [base64 PNG, ...]} of identical geometry.
    """

    name = "http"

    def __init__(
        self,
        url: str,
        timeout_s: float = 120.0,
        post: Callable[[str, dict, float], tuple] = _default_post,
    ):
        self.url = url
        self.timeout_s = timeout_s
        self.post = post

    def render(self, image, mask, request):
        mask_u8 = mask.astype(np.uint8) * 255
        payload = {
            "image": base64.b64encode(image_to_png_bytes(image)).decode("ascii"),
            "mask": base64.b64encode(
                image_to_png_bytes(np.stack([mask_u8] * 3, axis=-1))
            ).decode("ascii"),
            "prompt": request.prompt_text(),
            "cfg_scale": request.cfg_scale,
            "denoise_strength": request.denoise_strength,
            "seed": request.seed,
            "sampler": request.sampler_name,
            "n": request.n_candidates,
        }
        status, body = self.post(self.url, payload, self.timeout_s)
        if status != 200:
            raise BackendUnavailable(f"inpaint service returned HTTP {status}")
        try:
            reply = json.loads(body)
            images = [png_bytes_to_image(base64.b64decode(b)) for b in reply["images"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendUnavailable(f"unparseable inpaint response: {exc}") from exc
        for out in images:
            if out.shape != image.shape:
                raise GeometryMismatch(
                    f"backend returned {out.shape[:2]}, source is {image.shape[:2]}"
                )
        return images


def inpaint(
    image: np.ndarray,
    request: InpaintRequest,
    backend: InpaintBackend,
) -> InpaintResult:
    """Validate, render n_candidates, composite each against the original.

    Outside the mask every candidate carries the source pixels exactly,
    regardless of what the backend did there.
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("image must be HxWx3 uint8")
    mask_arr = request.mask.bits
    if mask_arr.shape != image.shape[:2]:
        raise GeometryMismatch(f"mask {mask_arr.shape} vs image {image.shape[:2]}")
    notes = request.validate()
    rendered = backend.render(image, mask_arr, request)
    if len(rendered) != request.n_candidates:
        raise BackendUnavailable(
            f"backend returned {len(rendered)} candidates, requested {request.n_candidates}"
        )
    candidates = []
    for out in rendered:
        if out.shape != image.shape:
            raise GeometryMismatch(
                f"backend returned {out.shape}, expected {image.shape}"
            )
        candidates.append(np.where(mask_arr[..., None], out, image).astype(np.uint8))
    return InpaintResult(
        candidates=candidates,
        seeds=[request.seed + i for i in range(request.n_candidates)],
        backend_name=getattr(backend, "name", type(backend).__name__),
        request=request,
        warnings=notes,
    )
