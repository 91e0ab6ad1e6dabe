"""Heat maps, noise suppression and frame-wise anomaly scores."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from ..dataset import VideoClip
from ..flow import FlowSource, encode_flow_hsi
from ..gan.training import ModelBundle, translate
from .features import FeatureExtractor, FeatureExtractorSpec
from .morphology import morphological_closing, morphological_opening

logger = logging.getLogger(__name__)


class ScoringError(ValueError):
    pass


@dataclass
class HeatMap:
    values: np.ndarray  # (m, n), non-negative
    domain: str  # "flow" | "frame" | "fused"
    t: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _pixels(img) -> np.ndarray:
    return np.asarray(img.pixels if hasattr(img, "pixels") else img, dtype=np.float64)


def squared_difference_map(x: np.ndarray, y: np.ndarray, channel_axis: int = -1) -> np.ndarray:
    if x.shape != y.shape:
        raise ScoringError(f"shape mismatch: {x.shape} vs {y.shape}")
    return np.sum((np.asarray(x, np.float64) - np.asarray(y, np.float64)) ** 2, axis=channel_axis)


def heatmap_from_flow_pair(o_t, o_gen, t: int = 0) -> HeatMap:
    """Channel-summed squared difference between observed and generated flow images."""
    a, b = _pixels(o_t), _pixels(o_gen)
    if a.ndim != 3 or a.shape[-1] != 3:
        raise ScoringError(f"expected (H, W, 3) flow images, got {a.shape}")
    return HeatMap(squared_difference_map(a, b), "flow", t)


def heatmap_from_features(feat: np.ndarray, feat_gen: np.ndarray, t: int = 0) -> HeatMap:
    """Same construction on (C, h, w) feature maps."""
    return HeatMap(squared_difference_map(feat, feat_gen, channel_axis=0), "frame", t)


def heatmap_from_frame_pair(f, f_gen, spec: FeatureExtractorSpec | None = None,
                            extractor: FeatureExtractor | None = None, t: int = 0) -> HeatMap:
    extractor = extractor or FeatureExtractor(spec)
    feats = extractor(np.stack([_pixels(f), _pixels(f_gen)]).astype(np.float32))
    return heatmap_from_features(feats[0], feats[1], t)


def anomaly_score(delta) -> float:
    """Root of the mean heat-map entry."""
    values = delta.values if isinstance(delta, HeatMap) else np.asarray(delta)
    if values.size == 0:
        raise ScoringError("empty heat map")
    return float(np.sqrt(np.mean(values, dtype=np.float64)))


def normalize_video(values) -> list | np.ndarray:
    """Min-max rescale over one clip; a constant clip maps to zeros.

    A 1-D sequence of scores returns an array; a sequence of heat maps
    returns heat maps normalised with the clip-wide min and max.
    """
    items = list(values)
    if not items:
        raise ScoringError("cannot normalise an empty sequence")
    if isinstance(items[0], HeatMap):
        lo = min(float(h.values.min()) for h in items)
        hi = max(float(h.values.max()) for h in items)
        span = hi - lo
        return [HeatMap((h.values - lo) / span if span > 0 else np.zeros_like(h.values), h.domain, h.t)
                for h in items]
    arr = np.asarray(items, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    return (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)


@dataclass
class FusionConfig:
    lambda_h: float = 1.0
    resample: bool = True  # bilinear upsampling of the smaller map

    def validate(self) -> None:
        if not np.isfinite(self.lambda_h) or self.lambda_h < 0:
            raise ScoringError(f"lambda_h must be finite and >= 0, got {self.lambda_h}")


def resample_map(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if values.shape == tuple(shape):
        return values
    return cv2.resize(values.astype(np.float64), (shape[1], shape[0]), interpolation=cv2.INTER_LINEAR)


def fuse_heatmaps(frame_map: HeatMap, flow_map: HeatMap, cfg: FusionConfig | None = None) -> HeatMap:
    """``frame_map + lambda_h * flow_map`` on normalised maps, at the larger resolution."""
    cfg = cfg or FusionConfig()
    cfg.validate()
    c, o = frame_map.values, flow_map.values
    if c.shape != o.shape:
        if not cfg.resample:
            raise ScoringError(f"heat maps differ in size ({c.shape} vs {o.shape}) and resampling is off")
        target = max(c.shape, o.shape, key=lambda s: s[0] * s[1])
        c, o = resample_map(c, target), resample_map(o, target)
    return HeatMap(np.maximum(c + cfg.lambda_h * o, 0.0), "fused", frame_map.t)


# -- noise suppression ------------------------------------------------------------


@dataclass
class NoiseSuppressionConfig:
    """Binarise at ``threshold``, close, then open with a ``kernel_size`` box.

    ``threshold_mode="percentile"`` replaces the absolute threshold by the
    given percentile of the heat-map values (clip-wide inside
    :func:`score_clip`). ``combine="multiply"`` keeps heat values inside the
    cleaned mask; ``"mask"`` scores the mask itself.
    """

    enabled: bool = False
    threshold: float = 0.0
    threshold_mode: str = "absolute"
    percentile: float = 50.0
    kernel_size: int = 7
    combine: str = "multiply"

    def validate(self) -> None:
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ScoringError(f"kernel_size must be odd, got {self.kernel_size}")
        if not np.isfinite(self.threshold) or self.threshold < 0:
            raise ScoringError("threshold must be finite and >= 0")
        if self.threshold_mode not in ("absolute", "percentile"):
            raise ScoringError(f"unknown threshold_mode {self.threshold_mode!r}")
        if not 0 <= self.percentile <= 100:
            raise ScoringError("percentile must lie in [0, 100]")
        if self.combine not in ("multiply", "mask"):
            raise ScoringError(f"unknown combine rule {self.combine!r}")


def binarize(delta, tau: float = 0.0) -> np.ndarray:
    values = delta.values if isinstance(delta, HeatMap) else np.asarray(delta)
    if tau < 0:
        raise ScoringError("threshold must be >= 0")
    return values > tau


def refine_mask(delta, cfg: NoiseSuppressionConfig, tau: float | None = None) -> np.ndarray:
    values = delta.values if isinstance(delta, HeatMap) else np.asarray(delta)
    if tau is None:
        tau = float(np.percentile(values, cfg.percentile)) if cfg.threshold_mode == "percentile" else cfg.threshold
    mask = binarize(values, tau)
    return morphological_opening(morphological_closing(mask, cfg.kernel_size), cfg.kernel_size)


def suppress_noise(delta: HeatMap, cfg: NoiseSuppressionConfig, tau: float | None = None) -> HeatMap:
    """Refined map: the heat map restricted to regions surviving closing+opening."""
    cfg.validate()
    mask = refine_mask(delta, cfg, tau)
    values = delta.values * mask if cfg.combine == "multiply" else mask.astype(np.float64)
    return HeatMap(values, delta.domain, delta.t)


# -- clip pipeline ----------------------------------------------------------------


@dataclass
class PipelineConfig:
    direction: str = "flow"  # "flow", "frame" or "fused"
    fusion: FusionConfig = field(default_factory=FusionConfig)
    suppression: NoiseSuppressionConfig = field(default_factory=NoiseSuppressionConfig)
    extractor: FeatureExtractorSpec = field(default_factory=FeatureExtractorSpec)
    stochastic: bool = False

    def validate(self) -> None:
        if self.direction not in ("flow", "frame", "fused"):
            raise ScoringError(f"unknown scoring direction {self.direction!r}")
        self.fusion.validate()
        self.suppression.validate()

    def required_generators(self) -> tuple[str, ...]:
        return {"flow": ("ab",), "frame": ("ba",), "fused": ("ab", "ba")}[self.direction]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> PipelineConfig:
        data = dict(data)
        return cls(fusion=FusionConfig(**data.pop("fusion", {})),
                   suppression=NoiseSuppressionConfig(**data.pop("suppression", {})),
                   extractor=FeatureExtractorSpec(**data.pop("extractor", {})),
                   **data)

    def hash(self) -> str:
        return config_hash(self.to_dict())


def config_hash(data) -> str:
    blob = json.dumps(data, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class ClipScores:
    clip_id: str
    t: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    labels: np.ndarray | None
    heatmaps: list[HeatMap] = field(default_factory=list, repr=False)
    config_hash: str = ""

    def manifest(self, heatmap_scale: float | None = None) -> dict:
        frames = []
        for i, t in enumerate(self.t):
            entry = {"t": int(t), "raw": float(self.raw[i]), "normalized": float(self.normalized[i])}
            if self.labels is not None:
                entry["label"] = int(self.labels[i])
            frames.append(entry)
        out = {"clip_id": self.clip_id, "config_hash": self.config_hash, "frames": frames}
        if heatmap_scale is not None:
            out["heatmap_scale"] = heatmap_scale
        return out


def clip_heatmaps(bundle: ModelBundle, clip: VideoClip, flows: FlowSource, cfg: PipelineConfig,
                  extractor: FeatureExtractor | None = None) -> dict[str, list[HeatMap]]:
    """Raw per-direction heat maps for every frame that has a successor."""
    n = len(clip) - 1
    if n < 1:
        raise ScoringError(f"clip {clip.clip_id} needs at least 2 frames")
    for direction in cfg.required_generators():
        bundle.generator(direction)
    frames = np.stack([clip.frames[t].pixels for t in range(n)])
    flow_imgs = np.stack([encode_flow_hsi(flows.flow(clip, t), bundle.m_ref).pixels for t in range(n)])
    maps: dict[str, list[HeatMap]] = {}
    if cfg.direction in ("flow", "fused"):
        generated = translate(bundle.generator("ab"), frames, stochastic=cfg.stochastic)
        maps["flow"] = [heatmap_from_flow_pair(flow_imgs[t], generated[t], t) for t in range(n)]
    if cfg.direction in ("frame", "fused"):
        extractor = extractor or FeatureExtractor(cfg.extractor)
        generated = translate(bundle.generator("ba"), flow_imgs, stochastic=cfg.stochastic)
        real_f, gen_f = extractor(frames), extractor(generated)
        maps["frame"] = [heatmap_from_features(real_f[t], gen_f[t], t) for t in range(n)]
    return maps


def combine_heatmaps(maps: dict[str, list[HeatMap]], cfg: PipelineConfig) -> list[HeatMap]:
    if cfg.direction != "fused":
        return maps[cfg.direction]
    frame_n = normalize_video(maps["frame"])
    flow_n = normalize_video(maps["flow"])
    return [fuse_heatmaps(c, o, cfg.fusion) for c, o in zip(frame_n, flow_n)]


def scores_from_heatmaps(heatmaps: list[HeatMap], cfg: PipelineConfig) -> tuple[list[HeatMap], np.ndarray]:
    sup = cfg.suppression
    if sup.enabled:
        tau = None
        if sup.threshold_mode == "percentile":
            tau = float(np.percentile(np.concatenate([h.values.ravel() for h in heatmaps]), sup.percentile))
        heatmaps = [suppress_noise(h, sup, tau) for h in heatmaps]
    return heatmaps, np.array([anomaly_score(h) for h in heatmaps])


def score_clip(bundle: ModelBundle, clip: VideoClip, flows: FlowSource, cfg: PipelineConfig | None = None,
               extractor: FeatureExtractor | None = None, keep_heatmaps: bool = False) -> ClipScores:
    """Per-frame scores for ``clip``; the last frame has no flow and is dropped."""
    cfg = cfg or PipelineConfig()
    cfg.validate()
    maps = clip_heatmaps(bundle, clip, flows, cfg, extractor)
    heatmaps, raw = scores_from_heatmaps(combine_heatmaps(maps, cfg), cfg)
    n = len(raw)
    labels = clip.labels[:n] if clip.labels is not None else None
    return ClipScores(clip.clip_id, np.arange(n), raw, normalize_video(raw), labels,
                      heatmaps if keep_heatmaps else [], cfg.hash())


def write_clip_artifacts(scores: ClipScores, out_dir, heatmaps: bool = True) -> Path:
    """Score manifest JSON plus 16-bit heat-map PNGs (value = png / heatmap_scale)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = None
    if heatmaps and scores.heatmaps:
        peak = max(float(h.values.max()) for h in scores.heatmaps)
        scale = 65535.0 / peak if peak > 0 else 1.0
        hm_dir = out_dir / "heatmaps" / scores.clip_id
        hm_dir.mkdir(parents=True, exist_ok=True)
        for h in scores.heatmaps:
            png = np.round(np.clip(h.values * scale, 0, 65535)).astype(np.uint16)
            Image.fromarray(png).save(hm_dir / f"{h.t}.png")
    path = out_dir / f"{scores.clip_id}.scores.json"
    path.write_text(json.dumps(scores.manifest(scale), indent=1))
    return path


def read_score_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
