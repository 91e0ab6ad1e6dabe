"""Run configuration: one YAML file, strict keys, a single top-level seed.

Schema (every section optional)::

    seed: 7
    dataset:
      root: null              # UCSD-layout directory; null -> <out>/dataset
      resolution: [256, 256]
      synthetic: {...}        # SyntheticSceneConfig fields except seed
    flow:
      backend: {kind: builtin, levels: 3, ...}   # FlowBackendSpec
      m_ref: null             # null -> max training-flow magnitude
      write_png: true
      sources: {brox: {kind: precomputed, directory: ...}}  # flow comparison
    train: {...}              # TrainConfig fields except seed, plus:
      # checkpoint: null      # null -> <out>/checkpoint.pt
      # resume: false
    pipeline: {...}           # PipelineConfig fields (extractor seed comes from `seed`)
    eval:
      experiment: scores      # scores | ablation | flow_comparison | vgg_sweep
      layers: [conv1_1, ...]  # vgg_sweep
      render: true
      scores_dir: null        # null -> <out>/scores
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import SyntheticSceneConfig
from .flow import FlowBackendSpec
from .gan.training import TrainConfig
from .inference.features import VGG16_LAYERS, canonical_layer
from .inference.scoring import PipelineConfig, config_hash


class RunConfigError(ValueError):
    pass


def _build(cls, data, where: str, exclude: tuple[str, ...] = ()):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise RunConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init} - set(exclude)
    unknown = set(data) - names
    if unknown:
        raise RunConfigError(f"{where}: unknown key(s) {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, f"{where}.{key}")
        elif typing.get_origin(hint) is tuple and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"{where}: {exc}") from exc


@dataclass
class DatasetSection:
    root: str | None = None
    resolution: tuple[int, int] = (256, 256)
    synthetic: dict = field(default_factory=dict)


@dataclass
class FlowSection:
    backend: dict = field(default_factory=dict)
    m_ref: float | None = None
    write_png: bool = True
    sources: dict = field(default_factory=dict)


@dataclass
class EvalSection:
    experiment: str = "scores"
    layers: list = field(default_factory=lambda: list(VGG16_LAYERS))
    render: bool = True
    scores_dir: str | None = None


EXPERIMENTS = ("scores", "ablation", "flow_comparison", "vgg_sweep")


@dataclass
class RunConfig:
    seed: int
    dataset: DatasetSection
    synthetic: SyntheticSceneConfig
    flow: FlowSection
    backend: FlowBackendSpec
    sources: dict[str, FlowBackendSpec]
    train: TrainConfig
    checkpoint: str | None
    resume: bool
    pipeline: PipelineConfig
    eval: EvalSection
    raw: dict

    def hash(self) -> str:
        return config_hash(self.raw)

    def dataset_root(self, out: Path) -> Path:
        return Path(self.dataset.root) if self.dataset.root else out / "dataset"

    def checkpoint_path(self, out: Path) -> Path:
        return Path(self.checkpoint) if self.checkpoint else out / "checkpoint.pt"

    def scores_dir(self, out: Path) -> Path:
        return Path(self.eval.scores_dir) if self.eval.scores_dir else out / "scores"

    def snapshot(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=1, default=str)


def parse_run_config(raw: dict | None, seed: int | None = None) -> RunConfig:
    """Validate a parsed YAML mapping; ``seed`` (the --seed flag) wins over the file."""
    raw = dict(raw or {})
    top = {"seed", "dataset", "flow", "train", "pipeline", "eval"}
    unknown = set(raw) - top
    if unknown:
        raise RunConfigError(f"unknown top-level key(s) {', '.join(sorted(unknown))}")
    if seed is not None:
        raw["seed"] = seed
    run_seed = raw.setdefault("seed", 0)
    if not isinstance(run_seed, int):
        raise RunConfigError("seed must be an integer")

    dataset = _build(DatasetSection, raw.get("dataset"), "dataset")
    if len(dataset.resolution) != 2:
        raise RunConfigError("dataset.resolution must be [height, width]")
    synthetic = _build(SyntheticSceneConfig, dataset.synthetic, "dataset.synthetic", exclude=("seed",))
    synthetic = dataclasses.replace(synthetic, seed=run_seed)

    flow = _build(FlowSection, raw.get("flow"), "flow")
    backend = _build(FlowBackendSpec, flow.backend, "flow.backend")
    sources = {name: _build(FlowBackendSpec, spec, f"flow.sources.{name}") for name, spec in flow.sources.items()}
    if flow.m_ref is not None and not flow.m_ref > 0:
        raise RunConfigError("flow.m_ref must be positive")

    train_raw = dict(raw.get("train") or {})
    checkpoint = train_raw.pop("checkpoint", None)
    resume = bool(train_raw.pop("resume", False))
    train = _build(TrainConfig, train_raw, "train", exclude=("seed",))
    train = dataclasses.replace(train, seed=run_seed)
    if dataset.resolution[0] != dataset.resolution[1]:
        raise RunConfigError("dataset.resolution must be square for the U-Net generator")
    if "image_size" not in (train_raw.get("generator") or {}):
        train.generator = dataclasses.replace(train.generator, image_size=int(dataset.resolution[0]))

    pipe_raw = dict(raw.get("pipeline") or {})
    if "seed" in (pipe_raw.get("extractor") or {}):
        raise RunConfigError("pipeline.extractor.seed is derived from the top-level seed")
    pipeline = _build(PipelineConfig, pipe_raw, "pipeline")
    pipeline = dataclasses.replace(pipeline, extractor=dataclasses.replace(pipeline.extractor, seed=run_seed))

    ev = _build(EvalSection, raw.get("eval"), "eval")
    if ev.experiment not in EXPERIMENTS:
        raise RunConfigError(f"eval.experiment must be one of {', '.join(EXPERIMENTS)}")

    try:
        synthetic.validate()
        train.validate()
        pipeline.validate()
        ev.layers = [canonical_layer(layer) for layer in ev.layers]
    except ValueError as exc:
        raise RunConfigError(str(exc)) from exc

    return RunConfig(run_seed, dataset, synthetic, flow, backend, sources, train, checkpoint, resume,
                     pipeline, ev, raw)


def load_run_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise RunConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise RunConfigError(f"{path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise RunConfigError(f"{path}: top level must be a mapping")
    return parse_run_config(raw, seed)


def check_paths(cfg: RunConfig, command: str, out: Path) -> None:
    """Paths a command reads must exist before it does anything."""
    missing = []
    if command != "synth" and cfg.dataset.root and not Path(cfg.dataset.root).is_dir():
        missing.append(f"dataset.root {cfg.dataset.root}")
    specs = [("flow.backend", cfg.backend)] + [(f"flow.sources.{k}", v) for k, v in cfg.sources.items()]
    if command in ("train", "score", "eval"):
        for where, spec in specs:
            if spec.kind == "precomputed" and not Path(spec.directory).is_dir():
                missing.append(f"{where}.directory {spec.directory}")
    weights = cfg.pipeline.extractor.weights
    if command in ("score", "eval") and weights and not Path(weights).is_file():
        missing.append(f"pipeline.extractor.weights {weights}")
    if command == "score" or (command == "train" and cfg.resume):
        if not cfg.checkpoint_path(out).is_file():
            missing.append(f"checkpoint {cfg.checkpoint_path(out)}")
    if command == "eval" and cfg.eval.experiment == "scores" and not cfg.scores_dir(out).is_dir():
        missing.append(f"score directory {cfg.scores_dir(out)}")
    if missing:
        raise RunConfigError("missing path(s): " + "; ".join(missing))
