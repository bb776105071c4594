"""Hotspot/non-hotspot image classifier.

Torchvision backbones (squeezenet, resnet18, vgg, densenet) or a small
from-scratch CNN, optionally wrapped with an attention block: a channel
gate (global-pooled MLP, sigmoid) followed by a spatial gate (channel-pooled
conv, sigmoid), both multiplicative and shape-preserving. The gated feature
map is what the CAM module hooks.

Class indices are fixed: 0 = non_hotspot, 1 = hotspot. Probabilities are
softmax over the two logits; "score" always means p(hotspot).
"""

import json
import random
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
from PIL import Image, UnidentifiedImageError
from torch.utils.data import DataLoader, Dataset

from .errors import (
    EmptyDataset,
    SingleClassDataset,
    UndecodableImage,
    UnknownBackbone,
)
from .imagery import HOTSPOT, NON_HOTSPOT

CLASS_ORDER = (NON_HOTSPOT, HOTSPOT)
CLASS_TO_INDEX = {name: i for i, name in enumerate(CLASS_ORDER)}
HOTSPOT_INDEX = CLASS_TO_INDEX[HOTSPOT]

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
PLAIN_MEAN = (0.5, 0.5, 0.5)
PLAIN_STD = (0.5, 0.5, 0.5)

BACKBONES = ("tinycnn", "squeezenet", "resnet18", "vgg", "densenet")


@dataclass(frozen=True)
class AbmSpec:
    """Attention block hyperparameters; channel gate then spatial gate."""

    reduction: int = 8
    spatial_kernel: int = 7

    def __post_init__(self):
        if self.reduction < 1:
            raise ValueError("reduction must be >= 1")
        if self.spatial_kernel % 2 != 1:
            raise ValueError("spatial_kernel must be odd")


@dataclass(frozen=True)
class ModelSpec:
    backbone: str = "tinycnn"
    attention: Optional[AbmSpec] = None
    pretrained: bool = False
    input_size: Optional[int] = None  # None = backbone default

    def resolved_input_size(self) -> int:
        if self.input_size is not None:
            return self.input_size
        return 64 if self.backbone == "tinycnn" else 224


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    device: str = "cpu"


@dataclass
class EvalMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list  # rows true class, cols predicted, CLASS_ORDER indexing
    n: int


class ChannelGate(nn.Module):
    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels),
        )

    def forward(self, x):
        b, c = x.shape[:2]
        pooled = x.mean(dim=(2, 3))
        return torch.sigmoid(self.mlp(pooled)).view(b, c, 1, 1)


class SpatialGate(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def forward(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))


class AttentionBlock(nn.Module):
    """x -> x * channel_gate(x) -> y * spatial_gate(y); never changes shape.

    The gates are plain child modules so a test can swap either for a
    constant-one stub and assert the block collapses to identity.
    """

    def __init__(self, channels: int, spec: AbmSpec):
        super().__init__()
        self.channel_gate = ChannelGate(channels, spec.reduction)
        self.spatial_gate = SpatialGate(spec.spatial_kernel)

    def forward(self, x):
        x = x * self.channel_gate(x)
        x = x * self.spatial_gate(x)
        return x


class TinyCnn(nn.Module):
    """Three conv blocks, 32 output channels; enough signal for synthetic data."""

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 32, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.out_channels = 32

    def forward(self, x):
        return self.net(x)


def _torchvision_features(backbone: str, pretrained: bool):
    import torchvision.models as tvm

    if backbone == "squeezenet":
        model = tvm.squeezenet1_0(weights=_safe_weights(tvm.squeezenet1_0, pretrained))
        return model.features, 512
    if backbone == "resnet18":
        model = tvm.resnet18(weights=_safe_weights(tvm.resnet18, pretrained))
        features = nn.Sequential(
            model.conv1, model.bn1, model.relu, model.maxpool,
            model.layer1, model.layer2, model.layer3, model.layer4,
        )
        return features, 512
    if backbone == "vgg":
        model = tvm.vgg16(weights=_safe_weights(tvm.vgg16, pretrained))
        return model.features, 512
    if backbone == "densenet":
        model = tvm.densenet121(weights=_safe_weights(tvm.densenet121, pretrained))
        return model.features, 1024
    raise UnknownBackbone(f"unknown backbone {backbone!r}; expected one of {BACKBONES}")


def _safe_weights(ctor, pretrained: bool):
    """Pretrained weights when the hub is reachable, random init otherwise."""
    if not pretrained:
        return None
    try:
        import torchvision.models as tvm

        return tvm.get_model_weights(ctor).DEFAULT
    except Exception:
        return None


class HotspotClassifier(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        if spec.backbone == "tinycnn":
            self.features = TinyCnn()
            channels = self.features.out_channels
            self.normalization = (PLAIN_MEAN, PLAIN_STD)
        elif spec.backbone in BACKBONES:
            self.features, channels = _torchvision_features(spec.backbone, spec.pretrained)
            self.normalization = (IMAGENET_MEAN, IMAGENET_STD)
        else:
            raise UnknownBackbone(
                f"unknown backbone {spec.backbone!r}; expected one of {BACKBONES}"
            )
        self.attention = AttentionBlock(channels, spec.attention) if spec.attention else None
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(channels, 2)
        self.feature_channels = channels

    @property
    def cam_layer(self) -> nn.Module:
        """The module whose output CAM methods hook: attention if present."""
        return self.attention if self.attention is not None else self.features

    def forward(self, x):
        feats = self.features(x)
        if self.attention is not None:
            feats = self.attention(feats)
        pooled = self.pool(feats).flatten(1)
        return self.head(pooled)

    def predict_proba(self, x) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=1)


def build_model(spec: ModelSpec) -> HotspotClassifier:
    if spec.backbone not in BACKBONES:
        raise UnknownBackbone(f"unknown backbone {spec.backbone!r}; expected one of {BACKBONES}")
    return HotspotClassifier(spec)


# ---------------------------------------------------------------------------
# Data plumbing

def load_image_rgb(path: Union[str, Path]) -> np.ndarray:
    """Decode to HxWx3 uint8; any decode failure is UndecodableImage."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"cannot decode {path}: {exc}") from exc


def image_to_tensor(
    image: np.ndarray,
    input_size: int,
    normalization: tuple,
) -> torch.Tensor:
    """HxWx3 uint8 (or float in [0,1]) -> normalized 3xSxS float32 tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected HxWx3 image")
    if image.dtype == np.uint8:
        arr = image.astype(np.float32) / 255.0
    else:
        arr = image.astype(np.float32)
    if arr.shape[0] != input_size or arr.shape[1] != input_size:
        pil = Image.fromarray((np.clip(arr, 0, 1) * 255).astype(np.uint8))
        pil = pil.resize((input_size, input_size), Image.BILINEAR)
        arr = np.asarray(pil).astype(np.float32) / 255.0
    mean, std = normalization
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


class RecordDataset(Dataset):
    def __init__(self, records: Sequence, root: Path, input_size: int, normalization: tuple):
        self.records = list(records)
        self.root = Path(root)
        self.input_size = input_size
        self.normalization = normalization

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        record = self.records[idx]
        image = load_image_rgb(self.root / record.file_path)
        tensor = image_to_tensor(image, self.input_size, self.normalization)
        return tensor, CLASS_TO_INDEX[record.label]


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


@dataclass
class TrainResult:
    epoch_losses: list
    final_train_accuracy: float


def train(
    model: HotspotClassifier,
    records: Sequence,
    workspace_root: Path,
    config: TrainConfig,
) -> TrainResult:
    """Cross-entropy training loop; deterministic for a fixed config.seed."""
    records = [r for r in records if r.label in CLASS_TO_INDEX]
    if not records:
        raise EmptyDataset("no labeled records to train on")
    present = {r.label for r in records}
    if len(present) < 2:
        raise SingleClassDataset(f"training set has only {present} labels; need both")
    _seed_everything(config.seed)
    dataset = RecordDataset(
        records, workspace_root, model.spec.resolved_input_size(), model.normalization
    )
    generator = torch.Generator().manual_seed(config.seed)
    loader = DataLoader(
        dataset, batch_size=config.batch_size, shuffle=True, generator=generator
    )
    device = torch.device(config.device)
    model.to(device)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    criterion = nn.CrossEntropyLoss()
    losses = []
    correct = total = 0
    for _ in range(config.epochs):
        epoch_loss = 0.0
        correct = total = 0
        for inputs, targets in loader:
            inputs, targets = inputs.to(device), targets.to(device)
            optimizer.zero_grad()
            logits = model(inputs)
            loss = criterion(logits, targets)
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(targets)
            correct += int((logits.argmax(dim=1) == targets).sum())
            total += len(targets)
        losses.append(epoch_loss / max(total, 1))
    model.eval()
    return TrainResult(epoch_losses=losses, final_train_accuracy=correct / max(total, 1))


def metrics_from_confusion(confusion) -> EvalMetrics:
    """Accuracy/precision/recall/F1 from a 2x2 confusion matrix.

    Rows are true class, columns predicted, both in CLASS_ORDER; hotspot is
    the positive class. Any zero denominator yields 0.0, never NaN.
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.shape != (2, 2) or (confusion < 0).any():
        raise ValueError("confusion must be a non-negative 2x2 matrix")
    tp = int(confusion[HOTSPOT_INDEX, HOTSPOT_INDEX])
    fp = int(confusion[1 - HOTSPOT_INDEX, HOTSPOT_INDEX])
    fn = int(confusion[HOTSPOT_INDEX, 1 - HOTSPOT_INDEX])
    n = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / n if n else 0.0
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return EvalMetrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion.tolist(),
        n=n,
    )


def evaluate(
    model: HotspotClassifier,
    records: Sequence,
    workspace_root: Path,
    batch_size: int = 32,
    device: str = "cpu",
) -> EvalMetrics:
    """Run the model over records and reduce to metrics_from_confusion."""
    if not records:
        raise EmptyDataset("no records to evaluate")
    dataset = RecordDataset(
        records, workspace_root, model.spec.resolved_input_size(), model.normalization
    )
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    dev = torch.device(device)
    model.to(dev)
    model.eval()
    confusion = np.zeros((2, 2), dtype=np.int64)
    with torch.no_grad():
        for inputs, targets in loader:
            preds = model(inputs.to(dev)).argmax(dim=1).cpu().numpy()
            for t, p in zip(targets.numpy(), preds):
                confusion[t, p] += 1
    return metrics_from_confusion(confusion)


def predict_proba(
    model: HotspotClassifier,
    images: Union[np.ndarray, Sequence[np.ndarray]],
    device: str = "cpu",
) -> np.ndarray:
    """p(hotspot) for one HxWx3 image or a sequence of them."""
    single = isinstance(images, np.ndarray) and images.ndim == 3
    batch = [images] if single else list(images)
    size = model.spec.resolved_input_size()
    tensors = torch.stack([image_to_tensor(img, size, model.normalization) for img in batch])
    model.eval()
    with torch.no_grad():
        probs = model.predict_proba(tensors.to(torch.device(device)))
    scores = probs[:, HOTSPOT_INDEX].cpu().numpy()
    return float(scores[0]) if single else scores


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(model: HotspotClassifier, path: Union[str, Path]) -> None:
    """Weights at <path>, architecture + class order sidecar at <path>.json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    spec = model.spec
    sidecar = {
        "backbone": spec.backbone,
        "attention": asdict(spec.attention) if spec.attention else None,
        "pretrained": spec.pretrained,
        "input_size": spec.resolved_input_size(),
        "classes": list(CLASS_ORDER),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2), encoding="utf-8"
    )


def load_checkpoint(path: Union[str, Path]) -> HotspotClassifier:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    attention = AbmSpec(**sidecar["attention"]) if sidecar.get("attention") else None
    spec = ModelSpec(
        backbone=sidecar["backbone"],
        attention=attention,
        pretrained=False,
        input_size=sidecar["input_size"],
    )
    model = build_model(spec)
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model
