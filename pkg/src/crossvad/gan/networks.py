"""U-Net generator and PatchGAN discriminator (pix2pix layout)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


class ArchitectureError(ValueError):
    pass


def _norm(kind: str, channels: int) -> nn.Module:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "instance":
        return nn.InstanceNorm2d(channels, affine=True)
    if kind == "none":
        return nn.Identity()
    raise ArchitectureError(f"unknown norm {kind!r}")


@dataclass
class GeneratorSpec:
    """``depth`` stride-2 levels; widths double per level up to ``8 * base_width``.

    Dropout (the generator's noise input) sits in the ``dropout_layers``
    deepest decoder blocks.
    """

    in_channels: int = 3
    out_channels: int = 3
    base_width: int = 64
    depth: int = 8
    dropout: float = 0.5
    dropout_layers: int = 3
    skip: bool = True
    norm: str = "instance"
    image_size: int = 256

    def validate(self) -> None:
        if self.depth < 1:
            raise ArchitectureError("generator depth must be >= 1")
        if self.image_size % (2 ** self.depth):
            raise ArchitectureError(
                f"input size {self.image_size} is not divisible by 2**depth = {2 ** self.depth}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ArchitectureError("dropout must lie in [0, 1)")

    def width(self, level: int) -> int:
        return self.base_width * min(2 ** level, 8)


class UNetGenerator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        d = spec.depth

        self.down = nn.ModuleList()
        for level in range(d):
            c_in = spec.in_channels if level == 0 else spec.width(level - 1)
            layers: list[nn.Module] = []
            if level > 0:
                layers.append(nn.LeakyReLU(0.2))
            layers.append(nn.Conv2d(c_in, spec.width(level), 4, 2, 1, bias=True))
            if 0 < level < d - 1:
                layers.append(_norm(spec.norm, spec.width(level)))
            self.down.append(nn.Sequential(*layers))

        self.up = nn.ModuleList()
        for level in reversed(range(d)):
            innermost = level == d - 1
            c_in = spec.width(level) * (1 if innermost or not spec.skip else 2)
            layers = [nn.ReLU()]
            if level == 0:
                layers += [nn.ConvTranspose2d(c_in, spec.out_channels, 4, 2, 1), nn.Tanh()]
            else:
                c_out = spec.width(level - 1)
                layers += [nn.ConvTranspose2d(c_in, c_out, 4, 2, 1), _norm(spec.norm, c_out)]
                if spec.dropout > 0 and level >= d - spec.dropout_layers:
                    layers.append(nn.Dropout(spec.dropout))
            self.up.append(nn.Sequential(*layers))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        step = 2 ** self.spec.depth
        if h % step or w % step:
            raise ArchitectureError(f"input {h}x{w} not divisible by {step}")
        if x.shape[-3] != self.spec.in_channels:
            raise ArchitectureError(f"expected {self.spec.in_channels} channels, got {x.shape[-3]}")
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        skips.pop()
        for i, block in enumerate(self.up):
            if i > 0 and self.spec.skip:
                x = torch.cat([x, skips.pop()], dim=1)
            x = block(x)
        return x


@dataclass
class DiscriminatorSpec:
    """Conditional PatchGAN: the input is (condition, candidate) stacked on channels.

    With ``n_layers=3`` the receptive field is 70x70 and a 256x256 input
    yields a 30x30 score map.
    """

    condition_channels: int = 3
    candidate_channels: int = 3
    base_width: int = 64
    n_layers: int = 3
    norm: str = "instance"

    def patch_size(self, size: int) -> int:
        for _ in range(self.n_layers):
            size = (size + 2 - 4) // 2 + 1
        for _ in range(2):
            size = (size + 2 - 4) + 1
        return size


class PatchDiscriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec, sigmoid: bool = True):
        super().__init__()
        if spec.n_layers < 1:
            raise ArchitectureError("discriminator needs n_layers >= 1")
        self.spec = spec
        self.sigmoid = sigmoid
        w = spec.base_width
        layers: list[nn.Module] = [
            nn.Conv2d(spec.condition_channels + spec.candidate_channels, w, 4, 2, 1),
            nn.LeakyReLU(0.2),
        ]
        prev = w
        for n in range(1, spec.n_layers + 1):
            cur = w * min(2 ** n, 8)
            stride = 2 if n < spec.n_layers else 1
            layers += [nn.Conv2d(prev, cur, 4, stride, 1), _norm(spec.norm, cur), nn.LeakyReLU(0.2)]
            prev = cur
        layers.append(nn.Conv2d(prev, 1, 4, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, condition: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        if condition.shape[-3] != self.spec.condition_channels or candidate.shape[-3] != self.spec.candidate_channels:
            raise ArchitectureError(
                f"expected {self.spec.condition_channels}+{self.spec.candidate_channels} channels, "
                f"got {condition.shape[-3]}+{candidate.shape[-3]}"
            )
        if condition.shape[-2:] != candidate.shape[-2:]:
            raise ArchitectureError("condition and candidate differ in spatial size")
        out = self.net(torch.cat([condition, candidate], dim=1))
        return torch.sigmoid(out) if self.sigmoid else out


def build_unet_generator(spec: GeneratorSpec) -> UNetGenerator:
    return UNetGenerator(spec)


def build_patchgan_discriminator(spec: DiscriminatorSpec, loss_variant: str = "vanilla") -> PatchDiscriminator:
    return PatchDiscriminator(spec, sigmoid=(loss_variant == "vanilla"))


def init_weights(module: nn.Module, gain: float = 0.02) -> None:
    """N(0, 0.02) conv weights and N(1, 0.02) norm scales, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, gain)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.InstanceNorm2d)) and m.weight is not None:
            nn.init.normal_(m.weight, 1.0, gain)
            nn.init.zeros_(m.bias)
