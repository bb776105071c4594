"""Class-activation heatmaps over the classifier's gated feature map.

Three methods share one contract: heatmap is HxW float32 in [0, 1] at the
input resolution (bilinear upsample, relu, divide by max; all-zero stays
all-zero). gradcam weights channels by the spatial mean of d(logit)/dA;
gradcampp uses the closed-form second/third-order coefficients; scorecam is
gradient-free and weights channels by the softmax score of channel-masked
inputs against a zero baseline.

The result keeps the feature-space map and per-channel weights so tests can
check the algebra against independent oracles, not just the final picture.
"""

import copy
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .classifier import HOTSPOT_INDEX, HotspotClassifier, image_to_tensor
from .errors import LayerNotFound, NonFiniteGradient
from .maskkit import BinaryMask

CAM_METHODS = ("gradcam", "gradcampp", "scorecam")


@dataclass(frozen=True)
class CamConfig:
    """Heatmap + thresholding settings carried through sessions and reports."""

    method: str = "gradcam"
    threshold: float = 0.5
    min_area: int = 0

    def __post_init__(self):
        if self.method not in CAM_METHODS:
            raise ValueError(f"unknown CAM method {self.method!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")


@dataclass
class CamResult:
    method: str
    target_index: int
    heatmap: np.ndarray  # HxW float32 in [0, 1], input resolution
    feature_map: np.ndarray  # C x h x w activations at the hooked layer
    channel_weights: np.ndarray  # C
    logit: float
    probability: float


def resolve_layer(model: HotspotClassifier, layer: Union[None, str, torch.nn.Module]):
    if layer is None:
        return model.cam_layer
    if isinstance(layer, torch.nn.Module):
        return layer
    named = dict(model.named_modules())
    if layer not in named:
        raise LayerNotFound(f"no module named {layer!r} in model")
    return named[layer]


def _prepare_input(model: HotspotClassifier, image: np.ndarray) -> torch.Tensor:
    size = model.spec.resolved_input_size()
    return image_to_tensor(image, size, model.normalization).unsqueeze(0)


def _upsample_norm(cam: torch.Tensor, out_hw: tuple) -> np.ndarray:
    """relu -> bilinear to out_hw -> /max. Zero map survives as zeros."""
    cam = F.relu(cam)
    cam = F.interpolate(
        cam.view(1, 1, *cam.shape[-2:]), size=out_hw, mode="bilinear", align_corners=False
    )[0, 0]
    arr = cam.detach().cpu().numpy().astype(np.float32)
    peak = float(arr.max())
    if peak > 0:
        arr = arr / peak
    return arr


def compute_cam(
    model: HotspotClassifier,
    image: np.ndarray,
    method: str = "gradcam",
    target_index: int = HOTSPOT_INDEX,
    layer: Union[None, str, torch.nn.Module] = None,
    scorecam_batch: int = 32,
) -> CamResult:
    if method not in CAM_METHODS:
        raise ValueError(f"unknown CAM method {method!r}; expected one of {CAM_METHODS}")
    model.eval()
    hooked = resolve_layer(model, layer)
    inputs = _prepare_input(model, image)
    out_hw = tuple(inputs.shape[-2:])

    captured = {}

    def forward_hook(_module, _inp, output):
        if isinstance(output, tuple):
            output = output[0]
        captured["activation"] = output
        if output.requires_grad:
            output.retain_grad()

    handle = hooked.register_forward_hook(forward_hook)
    try:
        if method == "scorecam":
            with torch.no_grad():
                logits = model(inputs)
        else:
            logits = model(inputs)
        if "activation" not in captured:
            raise LayerNotFound("hooked layer did not run during forward")
        activation = captured["activation"]

        if method in ("gradcam", "gradcampp"):
            model.zero_grad(set_to_none=True)
            logits[0, target_index].backward(retain_graph=False)
            grads = activation.grad
            if grads is None:
                raise NonFiniteGradient("no gradient reached the hooked layer")
            if not torch.isfinite(grads).all():
                raise NonFiniteGradient("non-finite gradients at the hooked layer")
            acts = activation.detach()[0]  # C x h x w
            g = grads[0]
            if method == "gradcam":
                weights = g.mean(dim=(1, 2))
            else:
                g2 = g * g
                g3 = g2 * g
                denom = 2.0 * g2 + acts.sum(dim=(1, 2), keepdim=True) * g3
                alpha = torch.where(denom.abs() > 1e-12, g2 / denom, torch.zeros_like(g2))
                weights = (alpha * F.relu(g)).sum(dim=(1, 2))
            cam = (weights.view(-1, 1, 1) * acts).sum(dim=0)
        else:
            acts = activation.detach()[0]
            weights = _scorecam_weights(
                model, inputs, acts, target_index, batch=scorecam_batch
            )
            cam = (weights.view(-1, 1, 1) * acts).sum(dim=0)

        with torch.no_grad():
            probs = torch.softmax(logits.detach(), dim=1)
        heatmap = _upsample_norm(cam, out_hw)
        return CamResult(
            method=method,
            target_index=target_index,
            heatmap=heatmap,
            feature_map=acts.cpu().numpy().astype(np.float32),
            channel_weights=weights.detach().cpu().numpy().astype(np.float32),
            logit=float(logits.detach()[0, target_index]),
            probability=float(probs[0, target_index]),
        )
    finally:
        handle.remove()


def _scorecam_weights(
    model: HotspotClassifier,
    inputs: torch.Tensor,
    acts: torch.Tensor,
    target_index: int,
    batch: int,
) -> torch.Tensor:
    """Softmax over per-channel scores of channel-masked inputs minus zero baseline."""
    out_hw = tuple(inputs.shape[-2:])
    channels = acts.shape[0]
    masks = F.interpolate(
        acts.unsqueeze(1), size=out_hw, mode="bilinear", align_corners=False
    )  # C x 1 x H x W
    flat = masks.view(channels, -1)
    lo = flat.min(dim=1).values.view(-1, 1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1, 1)
    span = torch.where(hi - lo > 1e-12, hi - lo, torch.ones_like(hi))
    masks = (masks - lo) / span

    with torch.no_grad():
        baseline = model(torch.zeros_like(inputs))[0, target_index]
        scores = torch.empty(channels, dtype=inputs.dtype)
        for start in range(0, channels, batch):
            chunk = masks[start : start + batch]
            masked = inputs * chunk  # broadcast over channel dim of the mask
            scores[start : start + chunk.shape[0]] = model(masked)[:, target_index]
    return torch.softmax(scores - baseline, dim=0)


def threshold_to_mask(
    heatmap: np.ndarray,
    threshold: float,
    min_area: int = 0,
) -> BinaryMask:
    """Cells with heatmap >= threshold; components under min_area px dropped.

    Connectivity for the despeckle pass is 8-way.
    """
    if heatmap.ndim != 2:
        raise ValueError("heatmap must be HxW")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    raw = heatmap >= threshold
    if min_area > 0 and raw.any():
        labels, count = ndimage.label(raw, structure=np.ones((3, 3), dtype=int))
        if count:
            areas = ndimage.sum_labels(raw, labels, index=np.arange(1, count + 1))
            keep = np.zeros(count + 1, dtype=bool)
            keep[1:] = areas >= min_area
            raw = keep[labels]
    return BinaryMask(raw)


def ap_mask_for(
    model: HotspotClassifier,
    image: np.ndarray,
    config: CamConfig = CamConfig(),
) -> BinaryMask:
    """Heatmap -> thresholded accident-prone-feature mask, in image geometry.

    The heatmap lives at the model's input resolution; the mask must overlay
    the image itself (saliency ratios, segment-mask composition), so the
    heatmap is bilinearly resized whenever the two geometries differ.
    """
    result = compute_cam(model, image, method=config.method)
    heat = result.heatmap
    geometry = image.shape[:2]
    if heat.shape != geometry:
        from PIL import Image as PILImage

        heat = np.asarray(
            PILImage.fromarray(heat.astype(np.float32), mode="F").resize(
                (geometry[1], geometry[0]), PILImage.BILINEAR
            ),
            dtype=np.float64,
        )
    return threshold_to_mask(heat, config.threshold, config.min_area)


def gradient_check(
    model: HotspotClassifier,
    image: np.ndarray,
    n_probes: int = 64,
    eps: float = 1e-6,
    seed: int = 0,
    target_index: int = HOTSPOT_INDEX,
) -> float:
    """Norm-based relative error between autograd and central differences.

    Runs the whole model in float64 on the hotspot logit; probes a random
    subset of input coordinates. Returns ||ag - fd|| / (||ag|| + ||fd||).
    """
    model = copy.deepcopy(model).double()  # leave the caller's weights in float32
    model.eval()
    inputs = _prepare_input(model, image).double()
    inputs.requires_grad_(True)
    logit = model(inputs)[0, target_index]
    logit.backward()
    auto = inputs.grad.detach().clone()
    if not torch.isfinite(auto).all():
        raise NonFiniteGradient("autograd produced non-finite input gradient")

    rng = np.random.default_rng(seed)
    flat_n = inputs.numel()
    idx = rng.choice(flat_n, size=min(n_probes, flat_n), replace=False)

    base = inputs.detach().clone()
    fd_vals = np.empty(len(idx), dtype=np.float64)
    ag_vals = np.empty(len(idx), dtype=np.float64)
    with torch.no_grad():
        flat = base.view(-1)
        for k, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = model(base)[0, target_index].item()
            flat[i] = orig - eps
            f_minus = model(base)[0, target_index].item()
            flat[i] = orig
            fd_vals[k] = (f_plus - f_minus) / (2 * eps)
            ag_vals[k] = auto.view(-1)[i].item()
    num = np.linalg.norm(ag_vals - fd_vals)
    den = np.linalg.norm(ag_vals) + np.linalg.norm(fd_vals)
    if den == 0.0:
        return 0.0
    return float(num / den)
