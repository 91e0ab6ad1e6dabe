"""VGG-16 feature taps for semantic frame comparison."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from torch import nn
from torchvision.models.vgg import cfgs, make_layers

logger = logging.getLogger(__name__)

# conv layer name -> index of that conv inside torchvision's vgg16().features
VGG16_CONV_INDEX = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14,
    "conv4_1": 17, "conv4_2": 19, "conv4_3": 21,
    "conv5_1": 24, "conv5_2": 26, "conv5_3": 28,
}
VGG16_LAYERS = tuple(VGG16_CONV_INDEX)
VGG16_CHANNELS = {"1": 64, "2": 128, "3": 256, "4": 512, "5": 512}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class FeatureError(ValueError):
    pass


def canonical_layer(name: str) -> str:
    """Accept ``3-3``, ``conv3-3``, ``conv3_3`` or ``(3-3)``."""
    m = re.fullmatch(r"\(?(?:conv)?\s*(\d)[-_](\d)\)?", str(name).strip().lower())
    layer = f"conv{m.group(1)}_{m.group(2)}" if m else None
    if layer not in VGG16_CONV_INDEX:
        raise FeatureError(f"unknown VGG-16 conv layer {name!r}; expected one of {', '.join(VGG16_LAYERS)}")
    return layer


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Tap the ReLU output of one VGG-16 conv layer.

    ``weights`` is a path to a torchvision ``vgg16`` state dict; without it a
    randomly initialised copy seeded with ``seed`` is used, which keeps the
    pipeline runnable offline but carries no pretrained semantics.
    """

    tap_layer: str = "conv3_3"
    weights: str | None = None
    seed: int = 0
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        object.__setattr__(self, "tap_layer", canonical_layer(self.tap_layer))
        for name in ("mean", "std"):
            value = tuple(float(x) for x in getattr(self, name))
            if len(value) != 3:
                raise FeatureError(f"{name} needs 3 channel values, got {len(value)}")
            object.__setattr__(self, name, value)

    @property
    def downsampling(self) -> int:
        return 2 ** (int(self.tap_layer[4]) - 1)

    @property
    def channels(self) -> int:
        return VGG16_CHANNELS[self.tap_layer[4]]


def _vgg16_trunk() -> nn.Sequential:
    """Convolutional part of VGG-16 with torchvision's layer indices and init."""
    features = make_layers(cfgs["D"], batch_norm=False)
    for m in features.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            nn.init.zeros_(m.bias)
    return features


@lru_cache(maxsize=4)
def _vgg_features(weights: str | None, seed: int) -> nn.Sequential:
    if weights is None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            features = _vgg16_trunk()
    else:
        features = _vgg16_trunk()
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise FeatureError(f"cannot load VGG-16 weights from {weights}: {exc}") from exc
        if not isinstance(state, dict):
            raise FeatureError(f"{weights} does not contain a state dict")
        state = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")} or state
        try:
            features.load_state_dict(state)
        except RuntimeError as exc:
            raise FeatureError(f"VGG-16 weights in {weights} do not match the architecture: {exc}") from exc
    for p in features.parameters():
        p.requires_grad_(False)
    return features.eval()


class FeatureExtractor:
    def __init__(self, spec: FeatureExtractorSpec | None = None):
        self.spec = spec or FeatureExtractorSpec()
        full = _vgg_features(self.spec.weights, self.spec.seed)
        # keep layers up to and including the ReLU following the tapped conv
        self.net = full[: VGG16_CONV_INDEX[self.spec.tap_layer] + 2]
        self.mean = torch.tensor(self.spec.mean, dtype=torch.float32).view(1, 3, 1, 1)
        self.std = torch.tensor(self.spec.std, dtype=torch.float32).view(1, 3, 1, 1)

    def __call__(self, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """(N, H, W, 3) or (H, W, 3) in [0, 1] -> (N, C, h, w) or (C, h, w) features."""
        single = np.ndim(images) == 3
        arr = np.asarray(images, dtype=np.float32)
        if single:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[-1] != 3:
            raise FeatureError(f"expected (N, H, W, 3) images, got {arr.shape}")
        x = torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
        x = (x - self.mean) / self.std
        outs = []
        with torch.no_grad():
            for i in range(0, x.shape[0], batch_size):
                outs.append(self.net(x[i:i + batch_size]).numpy())
        out = np.concatenate(outs)
        return out[0] if single else out


def semantic_features(frame, spec: FeatureExtractorSpec | None = None) -> np.ndarray:
    pixels = frame.pixels if hasattr(frame, "pixels") else frame
    return FeatureExtractor(spec)(pixels)
