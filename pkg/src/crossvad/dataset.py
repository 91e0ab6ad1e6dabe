"""Video datasets: UCSD-layout ingestion, frame preprocessing and synthetic scenes.

Frames are kept as float32 ``(H, W, 3)`` arrays in ``[0, 1]``. Remapping to the
``[-1, 1]`` network range happens in :mod:`crossvad.gan`.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

logger = logging.getLogger(__name__)

FRAME_SUFFIXES = (".png", ".tif", ".tiff")


class DatasetError(ValueError):
    """Raised for malformed dataset directories or invalid scene configs."""


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    source_index: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def gray(self) -> np.ndarray:
        return self.pixels.mean(axis=2, dtype=np.float32)


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except Exception as exc:  # PIL raises a zoo of exception types
        raise DatasetError(f"cannot read frame file {path}: {exc}") from exc
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if arr.dtype == np.uint16:
        return arr.astype(np.float32) / 65535.0
    if arr.dtype == bool:
        return arr.astype(np.float32)
    arr = arr.astype(np.float32)
    return arr / 255.0 if arr.max(initial=0.0) > 1.0 else arr


def preprocess_frame(raw: np.ndarray, resolution: tuple[int, int], source_index: int = 0) -> Frame:
    """Bilinear resize to ``resolution`` (h, w), grayscale replicated to RGB.

    Integer inputs are scaled by their dtype maximum; float inputs are assumed
    to already be intensities in [0, 1] and are only clipped.
    """
    raw = np.asarray(raw)
    if raw.size == 0 or raw.shape[0] == 0 or raw.shape[1] == 0:
        raise DatasetError("cannot preprocess a zero-area image")
    if np.issubdtype(raw.dtype, np.integer):
        img = raw.astype(np.float32) / float(np.iinfo(raw.dtype).max)
    else:
        img = np.clip(raw.astype(np.float32), 0.0, 1.0)

    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    elif img.ndim == 3 and img.shape[2] == 4:
        img = img[..., :3]
    if img.ndim not in (2, 3):
        raise DatasetError(f"unsupported image shape {raw.shape}")

    h, w = resolution
    if img.shape[:2] != (h, w):
        img = cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR)
        img = np.clip(img, 0.0, 1.0)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return Frame(np.ascontiguousarray(img, dtype=np.float32), source_index)


class LazyFrames(Sequence):
    """Frame files decoded on access; safe for concurrent readers."""

    def __init__(self, paths: list[Path], resolution: tuple[int, int]):
        self.paths = list(paths)
        self.resolution = resolution

    def __len__(self) -> int:
        return len(self.paths)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        if index < 0:
            index += len(self)
        return preprocess_frame(_read_image(self.paths[index]), self.resolution, index)


@dataclass
class VideoClip:
    clip_id: str
    frames: Sequence[Frame]
    labels: np.ndarray | None = None
    split: str = "train"
    native_size: tuple[int, int] | None = None  # (h, w) before preprocessing

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DatasetError(f"clip {self.clip_id}: unknown split {self.split!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.frames):
                raise DatasetError(
                    f"clip {self.clip_id}: {len(self.labels)} labels for {len(self.frames)} frames"
                )
            if self.split == "train" and self.labels.any():
                raise DatasetError(f"train clip {self.clip_id} carries anomaly labels")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class DatasetManifest:
    name: str
    clips: list[VideoClip]
    resolution: tuple[int, int]
    provenance: str = "ucsd"

    def __post_init__(self):
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise DatasetError("clip ids are not unique")
        for clip in self.clips:
            if clip.split == "test" and clip.labels is None:
                raise DatasetError(f"test clip {clip.clip_id} has no labels")

    @property
    def train_clips(self) -> list[VideoClip]:
        return [c for c in self.clips if c.split == "train"]

    @property
    def test_clips(self) -> list[VideoClip]:
        return [c for c in self.clips if c.split == "test"]

    def clip(self, clip_id: str) -> VideoClip:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise KeyError(clip_id)

    def subset(self, split: str) -> DatasetManifest:
        return DatasetManifest(self.name, [c for c in self.clips if c.split == split],
                               self.resolution, self.provenance)


def frame_pairs(clip: VideoClip) -> list[tuple[Frame, Frame]]:
    """Consecutive ``(F_t, F_{t+1})`` pairs; the last frame has no successor."""
    n = len(clip.frames)
    if n < 2:
        raise DatasetError(f"clip {clip.clip_id} has {n} frame(s); need at least 2 for pairs")
    frames = list(clip.frames)
    return [(frames[t], frames[t + 1]) for t in range(n - 1)]


# -- UCSD layout -------------------------------------------------------------------


def _frame_index(path: Path) -> int:
    m = re.search(r"(\d+)$", path.stem)
    if m is None:
        raise DatasetError(f"frame file {path} has no numeric index")
    return int(m.group(1))


def _list_frames(clip_dir: Path) -> list[Path]:
    paths = [p for p in clip_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES]
    return sorted(paths, key=_frame_index)


def load_ucsd_dataset(root, resolution: tuple[int, int] = (256, 256)) -> DatasetManifest:
    """Discover ``<root>/Train/<clip>/`` and ``<root>/Test/<clip>/`` frame folders.

    Test clips need a ``<root>/Test/<clip>.labels.json`` sidecar with
    ``{"labels": [...]}``. Folders ending in ``_gt`` (pixel masks shipped with
    UCSD) are ignored.
    """
    root = Path(root)
    clips: list[VideoClip] = []
    for split, sub in (("train", "Train"), ("test", "Test")):
        split_dir = root / sub
        if not split_dir.is_dir():
            continue
        for clip_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            if clip_dir.name.endswith("_gt"):
                continue
            paths = _list_frames(clip_dir)
            if not paths:
                raise DatasetError(f"clip {clip_dir} contains no frames")
            with Image.open(paths[0]) as im:
                native = (im.height, im.width)
            for p in paths:
                try:
                    with Image.open(p) as im:
                        im.verify()
                except Exception as exc:
                    raise DatasetError(f"cannot read frame file {p}: {exc}") from exc
            labels = None
            if split == "test":
                label_file = split_dir / f"{clip_dir.name}.labels.json"
                if not label_file.is_file():
                    raise DatasetError(f"missing labels file {label_file} for test clip {clip_dir.name}")
                labels = np.asarray(json.loads(label_file.read_text())["labels"], dtype=np.int64)
            clips.append(VideoClip(clip_dir.name, LazyFrames(paths, resolution), labels, split, native))
    if not clips:
        raise DatasetError(f"no clips found under {root}")
    n_frames = sum(len(c) for c in clips)
    logger.info("loaded %d clips (%d frames) from %s", len(clips), n_frames, root)
    return DatasetManifest(root.name, clips, tuple(resolution), "ucsd")


def export_ucsd_layout(manifest: DatasetManifest, root) -> Path:
    """Write ``manifest`` as PNG frame folders plus label sidecars."""
    root = Path(root)
    for clip in manifest.clips:
        split_dir = root / ("Train" if clip.split == "train" else "Test")
        clip_dir = split_dir / clip.clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(clip.frames):
            px = frame.pixels
            data = px[..., 0] if np.array_equal(px[..., 0], px[..., 1]) and np.array_equal(px[..., 0], px[..., 2]) else px
            Image.fromarray(np.round(data * 255.0).astype(np.uint8)).save(clip_dir / f"{t + 1:03d}.png")
        if clip.labels is not None and clip.split == "test":
            (split_dir / f"{clip.clip_id}.labels.json").write_text(
                json.dumps({"labels": [int(x) for x in clip.labels]})
            )
    return root


# -- synthetic scenes -------------------------------------------------------------


@dataclass
class SyntheticSceneConfig:
    """Static textured background with lane-bound movers.

    Normal movers ("pedestrians") are narrow upright sprites walking along
    horizontal lanes, the walking direction fixed per lane. Anomalous movers
    ("vehicles") are wide sprites outside the normal speed and/or footprint
    range; they appear only during the scheduled test frames. Ranges are
    inclusive ``(low, high)`` pairs in pixels and pixels/frame.
    """

    height: int = 64
    width: int = 64
    n_train_clips: int = 4
    n_test_clips: int = 2
    frames_per_clip: int = 60
    n_lanes: int = 3
    movers_per_clip: int = 3
    normal_width: tuple[float, float] = (3.0, 4.0)
    normal_height: tuple[float, float] = (7.0, 9.0)
    normal_speed: tuple[float, float] = (0.5, 1.2)
    anomaly_width: tuple[float, float] = (10.0, 12.0)
    anomaly_height: tuple[float, float] = (6.0, 7.0)
    anomaly_speed: tuple[float, float] = (2.5, 3.5)
    # test clip id -> list of inclusive (first, last) frame ranges; None = one
    # event over the middle third of every test clip
    anomaly_schedule: dict[str, list[tuple[int, int]]] | None = None
    seed: int = 7

    def validate(self) -> None:
        for name in ("normal_width", "normal_height", "normal_speed",
                     "anomaly_width", "anomaly_height", "anomaly_speed"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise DatasetError(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        if self.height < 8 or self.width < 8:
            raise DatasetError("canvas must be at least 8x8")
        if self.frames_per_clip < 2:
            raise DatasetError("frames_per_clip must be >= 2")
        if self.n_lanes < 1 or self.movers_per_clip < 0:
            raise DatasetError("n_lanes must be >= 1 and movers_per_clip >= 0")

        def overlap(a, b):
            return a[0] <= b[1] and b[0] <= a[1]

        normal_area = (self.normal_width[0] * self.normal_height[0],
                       self.normal_width[1] * self.normal_height[1])
        anomaly_area = (self.anomaly_width[0] * self.anomaly_height[0],
                        self.anomaly_width[1] * self.anomaly_height[1])
        if overlap(self.normal_speed, self.anomaly_speed) and overlap(normal_area, anomaly_area):
            raise DatasetError("anomaly speed and footprint ranges both overlap the normal ranges")
        for clip_id, events in self.schedule().items():
            for first, last in events:
                if not (0 <= first <= last < self.frames_per_clip):
                    raise DatasetError(f"schedule event {(first, last)} for {clip_id} outside clip")

    def test_clip_ids(self) -> list[str]:
        return [f"Test{i + 1:03d}" for i in range(self.n_test_clips)]

    def train_clip_ids(self) -> list[str]:
        return [f"Train{i + 1:03d}" for i in range(self.n_train_clips)]

    def schedule(self) -> dict[str, list[tuple[int, int]]]:
        if self.anomaly_schedule is None:
            n = self.frames_per_clip
            return {cid: [(n // 3, 2 * n // 3)] for cid in self.test_clip_ids()}
        unknown = set(self.anomaly_schedule) - set(self.test_clip_ids())
        if unknown:
            raise DatasetError(f"schedule names unknown test clips: {sorted(unknown)}")
        return {cid: [tuple(e) for e in self.anomaly_schedule.get(cid, [])] for cid in self.test_clip_ids()}


@dataclass
class _Mover:
    x: float
    y: float
    w: float
    h: float
    vx: float
    value: float
    first: int = 0
    last: int = 1 << 30


def _coverage_1d(start: float, length: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel [j, j+1) covered by [start, start+length)."""
    j = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(j + 1.0, start + length) - np.maximum(j, start), 0.0, 1.0)


def _render(canvas: np.ndarray, mover: _Mover) -> None:
    hgt, wid = canvas.shape
    x = mover.x % wid
    cov_x = _coverage_1d(x, mover.w, wid) + _coverage_1d(x - wid, mover.w, wid)
    cov_y = _coverage_1d(mover.y, mover.h, hgt)
    cov = np.clip(np.outer(cov_y, np.minimum(cov_x, 1.0)), 0.0, 1.0)
    # faint vertical shading gives the sprite interior some texture
    shade = mover.value * (0.85 + 0.15 * np.linspace(0.0, 1.0, hgt))[:, None]
    canvas *= 1.0 - cov
    canvas += cov * shade


def _background(cfg: SyntheticSceneConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0xB6])
    coarse = gaussian_filter(rng.random((cfg.height, cfg.width)), 4.0, mode="wrap")
    fine = gaussian_filter(rng.random((cfg.height, cfg.width)), 0.8, mode="wrap")
    coarse = (coarse - coarse.min()) / max(np.ptp(coarse), 1e-12)
    fine = (fine - fine.min()) / max(np.ptp(fine), 1e-12)
    return 0.15 + 0.25 * coarse + 0.15 * fine


def _lane_y(cfg: SyntheticSceneConfig, lane: int, h: float) -> float:
    centre = (lane + 0.5) * cfg.height / cfg.n_lanes
    return float(np.clip(centre - h / 2.0, 0.0, cfg.height - h))


def _normal_mover(cfg: SyntheticSceneConfig, rng: np.random.Generator) -> _Mover:
    lane = int(rng.integers(cfg.n_lanes))
    w = rng.uniform(*cfg.normal_width)
    h = rng.uniform(*cfg.normal_height)
    direction = 1.0 if lane % 2 == 0 else -1.0
    return _Mover(x=rng.uniform(0, cfg.width), y=_lane_y(cfg, lane, h), w=w, h=h,
                  vx=direction * rng.uniform(*cfg.normal_speed), value=rng.uniform(0.75, 0.95))


def _anomalous_mover(cfg: SyntheticSceneConfig, rng: np.random.Generator, first: int, last: int) -> _Mover:
    lane = int(rng.integers(cfg.n_lanes))
    w = rng.uniform(*cfg.anomaly_width)
    h = rng.uniform(*cfg.anomaly_height)
    direction = 1.0 if lane % 2 == 0 else -1.0
    return _Mover(x=rng.uniform(0, cfg.width), y=_lane_y(cfg, lane, h), w=w, h=h,
                  vx=direction * rng.uniform(*cfg.anomaly_speed), value=rng.uniform(0.8, 1.0),
                  first=first, last=last)


def _synth_clip(cfg: SyntheticSceneConfig, background: np.ndarray, clip_id: str, split: str,
                events: list[tuple[int, int]], stream: int, resolution: tuple[int, int]) -> VideoClip:
    rng = np.random.default_rng([cfg.seed, stream])
    movers = [_normal_mover(cfg, rng) for _ in range(cfg.movers_per_clip)]
    movers += [_anomalous_mover(cfg, rng, first, last) for first, last in events]
    labels = np.zeros(cfg.frames_per_clip, dtype=np.int64)
    for first, last in events:
        labels[first:last + 1] = 1

    frames = []
    for t in range(cfg.frames_per_clip):
        canvas = background.copy()
        for m in movers:
            if m.first <= t <= m.last:
                _render(canvas, _Mover(m.x + m.vx * (t - m.first), m.y, m.w, m.h, m.vx, m.value))
        raw = np.round(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)
        frames.append(preprocess_frame(raw, resolution, t))
    return VideoClip(clip_id, frames, labels if split == "test" else None, split, (cfg.height, cfg.width))


def generate_synthetic_dataset(config: SyntheticSceneConfig,
                               resolution: tuple[int, int] | None = None) -> DatasetManifest:
    """Deterministic toy surveillance dataset; equal configs give identical bytes."""
    config.validate()
    resolution = tuple(resolution) if resolution is not None else (config.height, config.width)
    background = _background(config)
    schedule = config.schedule()
    clips = []
    for i, cid in enumerate(config.train_clip_ids()):
        clips.append(_synth_clip(config, background, cid, "train", [], 1000 + i, resolution))
    for i, cid in enumerate(config.test_clip_ids()):
        clips.append(_synth_clip(config, background, cid, "test", schedule[cid], 2000 + i, resolution))
    return DatasetManifest(f"synthetic-seed{config.seed}", clips, resolution, "synthetic")


@dataclass
class ManifestSummary:
    clips: int
    frames: int
    per_split: dict[str, int] = field(default_factory=dict)


def summarize(manifest: DatasetManifest) -> ManifestSummary:
    per_split: dict[str, int] = {}
    for c in manifest.clips:
        per_split[c.split] = per_split.get(c.split, 0) + len(c)
    return ManifestSummary(len(manifest.clips), sum(per_split.values()), per_split)
