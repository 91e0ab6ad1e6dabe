"""Training of the cross-channel translators and checkpoint I/O.

Domain A is camera frames, domain B is HSI-encoded flow images. ``ab``
names the frame-to-flow direction (G_AB judged by D_B), ``ba`` the reverse.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..dataset import DatasetManifest
from ..flow import FlowSource, encode_flow_hsi
from . import losses
from .networks import (DiscriminatorSpec, GeneratorSpec, PatchDiscriminator, UNetGenerator,
                       build_patchgan_discriminator, build_unet_generator, init_weights)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DIRECTIONS = ("ab", "ba")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Defaults follow the pix2pix conventions (lambda_l1=100, Adam 2e-4, beta1=0.5, batch 1)."""

    loss_variant: str = "vanilla"
    lambda_l1: float = 100.0
    lambda_cyc: float = 0.0
    epochs: int = 10
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    seed: int = 0
    direction_mode: str = "independent"  # or "simultaneous"
    directions: str = "both"  # "ab", "ba" or "both"
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)

    def validate(self) -> None:
        if self.loss_variant not in ("vanilla", "lsgan"):
            raise ConfigError(f"loss_variant must be 'vanilla' or 'lsgan', got {self.loss_variant!r}")
        for name in ("lambda_l1", "lambda_cyc", "lr"):
            val = getattr(self, name)
            if not math.isfinite(val) or val < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {val}")
        if self.direction_mode not in ("independent", "simultaneous"):
            raise ConfigError(f"unknown direction_mode {self.direction_mode!r}")
        if self.directions not in ("ab", "ba", "both"):
            raise ConfigError(f"unknown directions {self.directions!r}")
        if self.lambda_cyc > 0 and self.direction_mode != "simultaneous":
            raise ConfigError("lambda_cyc > 0 requires direction_mode 'simultaneous'")
        if self.direction_mode == "simultaneous" and self.directions != "both":
            raise ConfigError("simultaneous training needs directions 'both'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        self.generator.validate()

    @property
    def trained_directions(self) -> tuple[str, ...]:
        return DIRECTIONS if self.directions == "both" else (self.directions,)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        data = dict(data)
        gen = GeneratorSpec(**data.pop("generator", {}))
        disc = DiscriminatorSpec(**data.pop("discriminator", {}))
        return cls(generator=gen, discriminator=disc, **data)


@dataclass
class LossRecord:
    epoch: int
    step: int
    term: str
    value: float


@dataclass
class ModelBundle:
    config: TrainConfig
    m_ref: float
    generators: dict[str, UNetGenerator] = field(default_factory=dict)
    discriminators: dict[str, PatchDiscriminator] = field(default_factory=dict)
    history: list[LossRecord] = field(default_factory=list)
    epochs_done: int = 0
    optimizer_state: dict = field(default_factory=dict)

    @property
    def loss_variant(self) -> str:
        return self.config.loss_variant

    @property
    def directions(self) -> tuple[str, ...]:
        return tuple(d for d in DIRECTIONS if d in self.generators)

    def generator(self, direction: str) -> UNetGenerator:
        if direction not in self.generators:
            raise KeyError(f"bundle has no trained {direction!r} generator (has {self.directions})")
        return self.generators[direction]

    def state_dict(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, group in (("G", self.generators), ("D", self.discriminators)):
            for direction, net in group.items():
                for key, val in net.state_dict().items():
                    out[f"{prefix}_{direction}.{key}"] = val
        return out

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format_version": FORMAT_VERSION,
            "params": self.state_dict(),
            "config": json.dumps(self.config.to_dict(), sort_keys=True),
            "m_ref": float(self.m_ref),
            "directions": list(self.directions),
            "epochs_done": self.epochs_done,
            "history": [dataclasses.astuple(r) for r in self.history],
            "optimizer_state": self.optimizer_state,
        }
        buf = io.BytesIO()
        torch.save(payload, buf)
        path.write_bytes(buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> ModelBundle:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint {path} does not exist")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("format_version") != FORMAT_VERSION:
            raise TrainingError(f"{path}: unsupported checkpoint format {payload.get('format_version')}")
        config = TrainConfig.from_dict(json.loads(payload["config"]))
        bundle = cls(config, payload["m_ref"], epochs_done=payload["epochs_done"],
                     history=[LossRecord(*r) for r in payload["history"]],
                     optimizer_state=payload.get("optimizer_state", {}))
        params = payload["params"]
        for direction in payload["directions"]:
            g, d = _build_pair(config)
            g.load_state_dict(_strip(params, f"G_{direction}."))
            bundle.generators[direction] = g.eval()
            d_params = _strip(params, f"D_{direction}.")
            if d_params:
                d.load_state_dict(d_params)
                bundle.discriminators[direction] = d.eval()
        return bundle

    def write_history_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "term", "value"])
            for r in self.history:
                writer.writerow([r.epoch, r.step, r.term, repr(r.value)])
        return path


def _strip(params: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _build_pair(config: TrainConfig) -> tuple[UNetGenerator, PatchDiscriminator]:
    return (build_unet_generator(config.generator),
            build_patchgan_discriminator(config.discriminator, config.loss_variant))


# -- value-range helpers ----------------------------------------------------------


def to_network(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) or (H, W, 3) images in [0, 1] -> (N, 3, H, W) tensor in [-1, 1]."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))) * 2.0 - 1.0


def from_network(tensor: torch.Tensor) -> np.ndarray:
    """(N, 3, H, W) tensor in [-1, 1] -> (N, H, W, 3) array in [0, 1]."""
    out = ((tensor.detach().cpu().float() + 1.0) * 0.5).clamp(0.0, 1.0)
    return out.permute(0, 2, 3, 1).numpy()


def _set_stochastic(module: nn.Module, stochastic: bool) -> None:
    module.eval()
    if stochastic:
        for m in module.modules():
            if isinstance(m, nn.Dropout):
                m.train()


def translate(generator: nn.Module, image: np.ndarray, stochastic: bool = False,
              batch_size: int = 16) -> np.ndarray:
    """Run a generator on [0, 1] images; dropout stays off unless ``stochastic``."""
    single = np.ndim(image) == 3
    x = to_network(image)
    was_training = generator.training
    _set_stochastic(generator, stochastic)
    outs = []
    try:
        with torch.no_grad():
            for i in range(0, x.shape[0], batch_size):
                batch = x[i:i + batch_size]
                y = generator(batch)
                if y.shape != batch.shape:
                    raise ValueError(f"generator output {tuple(y.shape)} != input {tuple(batch.shape)}")
                outs.append(from_network(y))
    finally:
        generator.train(was_training)
    out = np.concatenate(outs, axis=0)
    return out[0] if single else out


# -- training ---------------------------------------------------------------------


def build_training_pairs(manifest: DatasetManifest, flows: FlowSource,
                         m_ref: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack (frame F_t, flow image O_t) for every training pair, network range."""
    clips = manifest.train_clips
    if not clips:
        raise TrainingError("manifest has no training clips")
    flows.check_available(clips)
    frames, flow_imgs = [], []
    for clip in clips:
        for t in range(len(clip) - 1):
            frames.append(clip.frames[t].pixels)
            flow_imgs.append(encode_flow_hsi(flows.flow(clip, t), m_ref).pixels)
    return to_network(np.stack(frames)), to_network(np.stack(flow_imgs))


def _seed_for(config: TrainConfig, epoch: int, stream: int) -> int:
    return int(np.random.SeedSequence([config.seed, stream, epoch]).generate_state(1)[0])


class _Direction:
    """One translator with its discriminator and optimisers."""

    def __init__(self, name: str, config: TrainConfig, device: torch.device):
        self.name = name
        torch.manual_seed(_seed_for(config, 0, 100 + DIRECTIONS.index(name)))
        self.g, self.d = _build_pair(config)
        init_weights(self.g)
        init_weights(self.d)
        self.g.to(device)
        self.d.to(device)
        betas = (config.beta1, config.beta2)
        self.opt_g = torch.optim.Adam(self.g.parameters(), lr=config.lr, betas=betas)
        self.opt_d = torch.optim.Adam(self.d.parameters(), lr=config.lr, betas=betas)

    def load(self, bundle: ModelBundle) -> None:
        self.g.load_state_dict(bundle.generators[self.name].state_dict())
        self.d.load_state_dict(bundle.discriminators[self.name].state_dict())
        state = bundle.optimizer_state.get(self.name)
        if state:
            self.opt_g.load_state_dict(state["g"])
            self.opt_d.load_state_dict(state["d"])

    def optimizer_state(self) -> dict:
        return {"g": self.opt_g.state_dict(), "d": self.opt_d.state_dict()}


def _discriminator_step(variant: str, unit: _Direction, source, target, fake) -> torch.Tensor:
    unit.opt_d.zero_grad(set_to_none=True)
    loss = losses.discriminator_objective(variant, unit.d(source, target), unit.d(source, fake.detach()))
    loss.backward()
    unit.opt_d.step()
    return loss


def train(manifest: DatasetManifest, flows: FlowSource, config: TrainConfig,
          m_ref: float | None = None, resume: ModelBundle | None = None,
          device: str = "cpu", progress=None) -> ModelBundle:
    """Train the translators for ``config.epochs`` further epochs.

    Independent mode runs each direction as its own (G, D) game. Simultaneous
    mode alternates D_B, G_AB, D_A, G_BA updates on every step, each generator
    also paying the cycle term of its own round trip.
    """
    config.validate()
    dev = torch.device(device)
    if resume is not None:
        m_ref = resume.m_ref
    if m_ref is None:
        from ..flow import estimate_m_ref
        m_ref = estimate_m_ref(manifest, flows)
    frames, flow_imgs = build_training_pairs(manifest, flows, m_ref)
    domain = {"a": frames.to(dev), "b": flow_imgs.to(dev)}
    n = frames.shape[0]

    units = {name: _Direction(name, config, dev) for name in config.trained_directions}
    if resume is not None:
        for unit in units.values():
            unit.load(resume)
    bundle = ModelBundle(config, float(m_ref), history=list(resume.history) if resume else [],
                         epochs_done=resume.epochs_done if resume else 0)
    first_epoch = bundle.epochs_done + 1
    variant = config.loss_variant

    def record(epoch, step, term, value):
        value = float(value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {term}={value} at epoch {epoch}, step {step}")
        bundle.history.append(LossRecord(epoch, step, term, value))

    def generator_step(unit, source, target, fake, other=None):
        unit.opt_g.zero_grad(set_to_none=True)
        adv = losses.adversarial_generator_loss(variant, unit.d(source, fake))
        l1 = losses.l1_loss(fake, target)
        cyc = None
        if other is not None and config.lambda_cyc > 0:
            cyc = losses.cycle_consistency_loss(source, other.g(fake))
        total = losses.composite_loss(variant, adv, l1, cyc, config.lambda_l1, config.lambda_cyc)
        total.backward()
        unit.opt_g.step()
        return adv, l1, cyc, total

    if config.direction_mode == "independent":
        plans = [[name] for name in units]
    else:
        plans = [list(units)]

    steps_per_epoch = math.ceil(n / config.batch_size)
    for plan in plans:
        for epoch in range(first_epoch, first_epoch + config.epochs):
            stream = 0 if len(plan) > 1 else 1 + DIRECTIONS.index(plan[0])
            order = np.random.default_rng(_seed_for(config, epoch, stream)).permutation(n)
            torch.manual_seed(_seed_for(config, epoch, 10 + stream))
            for unit in units.values():
                unit.g.train()
                unit.d.train()
            for step in range(steps_per_epoch):
                idx = torch.from_numpy(order[step * config.batch_size:(step + 1) * config.batch_size])
                a, b = domain["a"][idx], domain["b"][idx]
                for name in plan:
                    unit = units[name]
                    source, target = (a, b) if name == "ab" else (b, a)
                    other = units.get("ba" if name == "ab" else "ab") if len(plan) > 1 else None
                    fake = unit.g(source)
                    d_loss = _discriminator_step(variant, unit, source, target, fake)
                    adv, l1, cyc, total = generator_step(unit, source, target, fake, other)
                    record(epoch, step, f"{name}/D", d_loss.item())
                    record(epoch, step, f"{name}/G_adv", adv.item())
                    record(epoch, step, f"{name}/G_L1", l1.item())
                    if cyc is not None:
                        record(epoch, step, f"{name}/G_cyc", cyc.item())
                    record(epoch, step, f"{name}/G_total", total.item())
            if progress is not None:
                progress(plan, epoch)
            logger.info("epoch %d %s done", epoch, "+".join(plan))

    bundle.epochs_done = first_epoch + config.epochs - 1
    for name, unit in units.items():
        bundle.generators[name] = unit.g.cpu().eval()
        bundle.discriminators[name] = unit.d.cpu().eval()
        bundle.optimizer_state[name] = unit.optimizer_state()
    return bundle
