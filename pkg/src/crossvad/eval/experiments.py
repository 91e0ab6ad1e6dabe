"""Experiment drivers producing AUC report tables."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import DatasetManifest
from ..flow import FlowError, FlowSource, estimate_m_ref
from ..gan.training import ModelBundle, TrainConfig, train
from ..inference.features import FeatureExtractor, canonical_layer
from ..inference.scoring import ClipScores, PipelineConfig, config_hash, score_clip
from .metrics import roc_auc

logger = logging.getLogger(__name__)

# Published UCSD Ped2 frame-level AUCs (percent), shown next to our numbers
# for manual comparison only.
REFERENCE_ABLATION = {
    "vanilla/baseline": 93.7, "vanilla/cycle": 94.8, "vanilla/cycle+ns": 95.7,
    "lsgan/baseline": 95.4, "lsgan/cycle": 97.6, "lsgan/cycle+ns": 98.0,
}
REFERENCE_FLOW_METHODS = {
    "brox": {"frame": 78.5, "fused": 85.8, "flow": 93.7},
    "farneback": {"frame": 69.6, "fused": 80.8, "flow": 84.2},
    "flownet2": {"frame": 66.0, "fused": 75.0, "flow": 81.5},
}
REFERENCE_VGG_LAYERS = {
    "conv1_1": 65.4, "conv1_2": 64.9, "conv2_1": 62.8, "conv2_2": 58.6,
    "conv3_1": 63.6, "conv3_2": 74.3, "conv3_3": 78.5,
    "conv4_1": 68.0, "conv4_2": 66.1, "conv4_3": 65.0,
    "conv5_1": 57.0, "conv5_2": 64.6, "conv5_3": 64.8,
}


@dataclass
class ScoreSeries:
    clip_ids: np.ndarray
    t: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.scores).all():
            raise ValueError("score series contains non-finite scores")
        if not (len(self.clip_ids) == len(self.t) == len(self.scores) == len(self.labels)):
            raise ValueError("score series columns differ in length")

    @classmethod
    def from_clips(cls, clips: list[ClipScores]) -> ScoreSeries:
        for c in clips:
            if c.labels is None:
                raise ValueError(f"clip {c.clip_id} has no labels")
        return cls(
            np.concatenate([[c.clip_id] * len(c.t) for c in clips]),
            np.concatenate([c.t for c in clips]),
            np.concatenate([c.normalized for c in clips]),
            np.concatenate([c.labels for c in clips]),
        )

    @classmethod
    def from_manifests(cls, manifests: list[dict]) -> ScoreSeries:
        ids, ts, scores, labels = [], [], [], []
        for m in manifests:
            for f in m["frames"]:
                if "label" not in f:
                    raise ValueError(f"clip {m['clip_id']} has no labels")
                ids.append(m["clip_id"])
                ts.append(f["t"])
                scores.append(f["normalized"])
                labels.append(f["label"])
        return cls(np.array(ids), np.array(ts), np.array(scores, dtype=np.float64), np.array(labels))

    def auc(self) -> float:
        return roc_auc(self.scores, self.labels)


@dataclass
class ReportRow:
    config: str
    direction: str
    auc: float | None
    runtime_s: float
    reference: float | None = None
    status: str = "ok"
    config_hash: str = ""


@dataclass
class ExperimentReport:
    name: str
    rows: list[ReportRow] = field(default_factory=list)
    series: dict[str, ScoreSeries] = field(default_factory=dict, repr=False)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "direction", "AUC", "runtime_s", "reference_AUC", "status", "config_hash"])
            for r in self.rows:
                w.writerow([r.config, r.direction, "" if r.auc is None else f"{r.auc:.6f}",
                            f"{r.runtime_s:.2f}", "" if r.reference is None else f"{r.reference / 100:.3f}",
                            r.status, r.config_hash])
        return path

    def to_text(self) -> str:
        header = ("config", "direction", "AUC", "reference", "runtime [s]", "status")
        body = [(r.config, r.direction, "-" if r.auc is None else f"{100 * r.auc:.1f}%",
                 "-" if r.reference is None else f"{r.reference:.1f}%", f"{r.runtime_s:.1f}", r.status)
                for r in self.rows]
        widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [self.name, fmt.format(*header), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*row) for row in body]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        csv_path = self.write_csv(out_dir / "report.csv")
        txt_path = out_dir / "report.txt"
        txt_path.write_text(self.to_text())
        return csv_path, txt_path


@dataclass
class ExperimentConfig:
    name: str
    train: TrainConfig
    pipeline: PipelineConfig


def _train_key(cfg: TrainConfig) -> str:
    return config_hash(cfg.to_dict())


class BundleCache:
    """Trains each distinct TrainConfig once."""

    def __init__(self, manifest: DatasetManifest, flows: FlowSource, m_ref: float | None = None,
                 device: str = "cpu", checkpoint_dir=None):
        self.manifest = manifest
        self.flows = flows
        self.m_ref = m_ref
        self.device = device
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self._bundles: dict[str, ModelBundle] = {}

    def get(self, cfg: TrainConfig) -> ModelBundle:
        key = _train_key(cfg)
        if key not in self._bundles:
            if self.m_ref is None:
                self.m_ref = estimate_m_ref(self.manifest, self.flows)
            bundle = train(self.manifest, self.flows, cfg, m_ref=self.m_ref, device=self.device)
            if self.checkpoint_dir is not None:
                bundle.save(self.checkpoint_dir / f"{key}.pt")
                bundle.write_history_csv(self.checkpoint_dir / f"{key}.loss.csv")
            self._bundles[key] = bundle
        return self._bundles[key]


def score_manifest(bundle: ModelBundle, manifest: DatasetManifest, flows: FlowSource,
                   pipeline: PipelineConfig, extractor: FeatureExtractor | None = None) -> list[ClipScores]:
    if pipeline.direction in ("frame", "fused") and extractor is None:
        extractor = FeatureExtractor(pipeline.extractor)
    return [score_clip(bundle, clip, flows, pipeline, extractor) for clip in manifest.test_clips]


def default_ablation_configs(base: TrainConfig, pipeline: PipelineConfig,
                             suppression=None, lambda_cyc: float = 10.0) -> list[ExperimentConfig]:
    """Baseline / cycle / cycle + noise suppression for both loss variants (flow direction).

    The cycle weight is ``base.lambda_cyc`` when positive, else ``lambda_cyc``.
    """
    cyc_weight = base.lambda_cyc if base.lambda_cyc > 0 else lambda_cyc
    suppression = suppression or dataclasses.replace(pipeline.suppression, enabled=True)
    plain = dataclasses.replace(pipeline, direction="flow",
                                suppression=dataclasses.replace(pipeline.suppression, enabled=False))
    suppressed = dataclasses.replace(plain, suppression=suppression)
    configs = []
    for variant in ("vanilla", "lsgan"):
        baseline = dataclasses.replace(base, loss_variant=variant, lambda_cyc=0.0,
                                       direction_mode="independent", directions="ab")
        cycle = dataclasses.replace(base, loss_variant=variant, lambda_cyc=cyc_weight,
                                    direction_mode="simultaneous", directions="both")
        configs += [
            ExperimentConfig(f"{variant}/baseline", baseline, plain),
            ExperimentConfig(f"{variant}/cycle", cycle, plain),
            ExperimentConfig(f"{variant}/cycle+ns", cycle, suppressed),
        ]
    return configs


def run_ablation(manifest: DatasetManifest, flows: FlowSource, configs: list[ExperimentConfig],
                 m_ref: float | None = None, cache: BundleCache | None = None,
                 name: str = "ablation") -> ExperimentReport:
    cache = cache or BundleCache(manifest, flows, m_ref)
    report = ExperimentReport(name)
    for exp in configs:
        start = time.perf_counter()
        key = config_hash({"train": exp.train.to_dict(), "pipeline": exp.pipeline.to_dict()})
        try:
            bundle = cache.get(exp.train)
            series = ScoreSeries.from_clips(score_manifest(bundle, manifest, flows, exp.pipeline))
            auc = series.auc()
            report.series[exp.name] = series
            status = "ok"
        except Exception as exc:  # a failing config must not abort the table
            logger.exception("config %s failed", exp.name)
            auc, status = None, f"failed: {exc}"
        report.rows.append(ReportRow(exp.name, exp.pipeline.direction, auc, time.perf_counter() - start,
                                     REFERENCE_ABLATION.get(exp.name), status, key))
    return report


def run_flow_comparison(manifest: DatasetManifest, sources: dict[str, FlowSource], train_config: TrainConfig,
                        pipeline: PipelineConfig, device: str = "cpu") -> ExperimentReport:
    """Frame, fused and flow AUC per flow source, from one baseline model per source."""
    report = ExperimentReport("flow_comparison")
    cfg = dataclasses.replace(train_config, lambda_cyc=0.0, direction_mode="independent", directions="both")
    extractor = FeatureExtractor(pipeline.extractor)
    for source_name, source in sources.items():
        try:
            source.check_available(manifest.clips)
        except FlowError as exc:
            logger.warning("skipping flow source %s: %s", source_name, exc)
            continue
        start = time.perf_counter()
        try:
            bundle = BundleCache(manifest, source, device=device).get(cfg)
        except Exception as exc:
            logger.exception("training on flow source %s failed", source_name)
            report.rows.append(ReportRow(source_name, "-", None, time.perf_counter() - start,
                                         status=f"failed: {exc}"))
            continue
        train_time = time.perf_counter() - start
        refs = REFERENCE_FLOW_METHODS.get(source_name.lower(), {})
        for direction in ("frame", "fused", "flow"):
            start = time.perf_counter()
            pc = dataclasses.replace(pipeline, direction=direction)
            try:
                series = ScoreSeries.from_clips(score_manifest(bundle, manifest, source, pc, extractor))
                auc, status = series.auc(), "ok"
                report.series[f"{source_name}/{direction}"] = series
            except Exception as exc:
                logger.exception("scoring %s/%s failed", source_name, direction)
                auc, status = None, f"failed: {exc}"
            report.rows.append(ReportRow(source_name, direction, auc, train_time + time.perf_counter() - start,
                                         refs.get(direction), status, pc.hash()))
    return report


def run_vgg_layer_sweep(manifest: DatasetManifest, flows: FlowSource, bundle: ModelBundle, layers,
                        pipeline: PipelineConfig) -> ExperimentReport:
    """Frame-direction AUC for each VGG-16 tap layer."""
    layers = [canonical_layer(layer) for layer in layers]
    bundle.generator("ba")
    report = ExperimentReport("vgg_layer_sweep")
    for layer in layers:
        start = time.perf_counter()
        pc = dataclasses.replace(pipeline, direction="frame",
                                 extractor=dataclasses.replace(pipeline.extractor, tap_layer=layer))
        series = ScoreSeries.from_clips(score_manifest(bundle, manifest, flows, pc))
        report.series[layer] = series
        report.rows.append(ReportRow(layer, "frame", series.auc(), time.perf_counter() - start,
                                     REFERENCE_VGG_LAYERS.get(layer), "ok", pc.hash()))
    return report
