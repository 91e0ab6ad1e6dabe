"""Dense optical flow and its 3-channel HSI image encoding.

The colour map is the hue/saturation/value cone with saturation fixed at 1:
hue is the flow angle ``atan2(v, u)`` in degrees, value is the magnitude
relative to ``m_ref`` (clipped to 1). For hue ``h`` the RGB triple is the
standard piecewise-linear sextant map::

    sextant  0:[0,60)  1:[60,120)  2:[120,180)  3:[180,240)  4:[240,300)  5:[300,360)
    (R,G,B)  (V,up,0)  (down,V,0)  (0,V,up)     (0,down,V)   (up,0,V)     (V,0,down)

with ``up = V*f`` and ``down = V*(1-f)``, ``f`` the fractional position inside
the sextant. Pure red is zero angle at full magnitude. Image
``v`` points down (row index grows), as in image coordinates.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .dataset import DatasetManifest, Frame, VideoClip

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise FlowError(f"u and v must be equal 2-D grids, got {self.u.shape} and {self.v.shape}")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise FlowError("flow field contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def resized(self, shape: tuple[int, int]) -> FlowField:
        """Bilinear resample to ``shape`` with vectors rescaled to the new pixel units."""
        h, w = shape
        if (h, w) == self.shape:
            return self
        sy, sx = h / self.shape[0], w / self.shape[1]
        u = cv2.resize(self.u.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR) * sx
        v = cv2.resize(self.v.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR) * sy
        return FlowField(u, v, self.t)


@dataclass(frozen=True)
class FlowImage:
    pixels: np.ndarray  # (H, W, 3) float32 in [0, 1]
    m_ref: float


@dataclass
class FlowBackendSpec:
    """``builtin`` runs pyramidal polynomial-expansion flow; ``precomputed`` reads .flo files."""

    kind: str = "builtin"
    levels: int = 3
    pyr_scale: float = 0.5
    window: int = 9
    iterations: int = 3
    poly_n: int = 5
    poly_sigma: float = 1.1
    directory: str | None = None

    def __post_init__(self):
        if self.kind not in ("builtin", "precomputed"):
            raise FlowError(f"unknown flow backend {self.kind!r}")
        if self.kind == "precomputed" and not self.directory:
            raise FlowError("precomputed flow backend needs a directory")
        if self.poly_n not in (5, 7):
            raise FlowError("poly_n must be 5 or 7")


def compute_flow(f_t: Frame, f_t1: Frame, spec: FlowBackendSpec | None = None) -> FlowField:
    spec = spec or FlowBackendSpec()
    if spec.kind != "builtin":
        raise FlowError("compute_flow needs the builtin backend")
    if f_t.shape != f_t1.shape:
        raise FlowError(f"frame sizes differ: {f_t.shape} vs {f_t1.shape}")
    prev = f_t.gray() * 255.0
    nxt = f_t1.gray() * 255.0
    flow = cv2.calcOpticalFlowFarneback(
        prev, nxt, None, spec.pyr_scale, spec.levels, spec.window,
        spec.iterations, spec.poly_n, spec.poly_sigma, 0,
    )
    # Pixels whose whole window is unchanged carry no motion evidence; the
    # solver still leaks a few tenths of a pixel there (mostly at the border).
    changed = (prev != nxt).astype(np.uint8)
    evidence = cv2.dilate(changed, np.ones((spec.window, spec.window), np.uint8)) > 0
    flow[~evidence] = 0.0
    return FlowField(flow[..., 0].copy(), flow[..., 1].copy(), f_t.source_index)


# -- Middlebury .flo --------------------------------------------------------------


def save_flow(path, flow: FlowField) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = flow.shape
    data = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(data.tobytes())


def read_flo(path, t: int = 0) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FlowError(f"unexpected end of flow file {path}")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if magic != np.float32(FLO_MAGIC):
        raise FlowError(f"{path}: bad magic {magic!r}, not a Middlebury flow file")
    if w <= 0 or h <= 0:
        raise FlowError(f"{path}: invalid dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise FlowError(f"unexpected end of flow file {path}")
    data = np.frombuffer(raw, dtype="<f4", count=2 * w * h, offset=12).reshape(h, w, 2)
    return FlowField(data[..., 0].astype(np.float32), data[..., 1].astype(np.float32), t)


def flow_path(directory, clip_id: str, t: int) -> Path:
    return Path(directory) / clip_id / f"{t}.flo"


def load_precomputed_flow(directory, clip_id: str, t: int,
                          expected_shape: tuple[int, int] | None = None) -> FlowField:
    path = flow_path(directory, clip_id, t)
    if not path.is_file():
        raise FlowError(f"missing flow file {path}")
    flow = read_flo(path, t)
    if expected_shape is not None and flow.shape != tuple(expected_shape):
        raise FlowError(f"{path}: flow is {flow.shape}, clip frames are {tuple(expected_shape)}")
    return flow


# -- HSI codec --------------------------------------------------------------------


def flow_to_hsi(flow: FlowField, m_ref: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hue in degrees [0, 360), saturation (all ones), intensity in [0, 1]."""
    if not m_ref > 0:
        raise FlowError(f"m_ref must be positive, got {m_ref}")
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    hue = np.degrees(np.arctan2(v, u)) % 360.0
    hue[hue >= 360.0] = 0.0
    intensity = np.minimum(np.hypot(u, v) / m_ref, 1.0)
    return hue, np.ones_like(hue), intensity


def hsi_to_rgb(hue: np.ndarray, intensity: np.ndarray) -> np.ndarray:
    h6 = (np.asarray(hue, dtype=np.float64) % 360.0) / 60.0
    sextant = np.floor(h6).astype(np.int64) % 6
    frac = h6 - np.floor(h6)
    val = np.asarray(intensity, dtype=np.float64)
    rise = val * frac
    fall = val * (1.0 - frac)
    zero = np.zeros_like(val)
    r = np.choose(sextant, [val, fall, zero, zero, rise, val])
    g = np.choose(sextant, [rise, val, val, fall, zero, zero])
    b = np.choose(sextant, [zero, zero, rise, val, val, fall])
    return np.stack([r, g, b], axis=-1)


def rgb_to_hsi(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`hsi_to_rgb` (hue in degrees, intensity = max channel)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    vmax = rgb.max(axis=-1)
    vmin = rgb.min(axis=-1)
    chroma = vmax - vmin
    safe = np.where(chroma > 0, chroma, 1.0)
    hue = np.where(
        vmax == r, ((g - b) / safe) % 6.0,
        np.where(vmax == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    ) * 60.0
    hue = np.where(chroma > 0, hue % 360.0, 0.0)
    return hue, vmax


def encode_flow_hsi(flow: FlowField, m_ref: float) -> FlowImage:
    hue, _, intensity = flow_to_hsi(flow, m_ref)
    return FlowImage(hsi_to_rgb(hue, intensity).astype(np.float32), float(m_ref))


def decode_flow_hsi(img: FlowImage, t: int = 0) -> FlowField:
    hue, intensity = rgb_to_hsi(img.pixels)
    mag = intensity * img.m_ref
    ang = np.radians(hue)
    return FlowField((mag * np.cos(ang)).astype(np.float32), (mag * np.sin(ang)).astype(np.float32), t)


# -- flow sources -----------------------------------------------------------------


@dataclass
class FlowSource:
    """Ground-truth flow per frame pair of a clip, at the clip's model resolution.

    Builtin flows are computed on preprocessed frames and memoised; precomputed
    flows are read at the clip's native size and resampled.
    """

    spec: FlowBackendSpec = field(default_factory=FlowBackendSpec)
    name: str = "builtin"
    _cache: dict = field(default_factory=dict, repr=False)

    def flow(self, clip: VideoClip, t: int) -> FlowField:
        key = (clip.clip_id, t)
        if key in self._cache:
            return self._cache[key]
        if not 0 <= t < len(clip) - 1:
            raise FlowError(f"clip {clip.clip_id}: no frame pair at t={t}")
        if self.spec.kind == "builtin":
            result = compute_flow(clip.frames[t], clip.frames[t + 1], self.spec)
        else:
            ff = load_precomputed_flow(self.spec.directory, clip.clip_id, t, clip.native_size)
            result = ff.resized(clip.frames[t].shape)
        self._cache[key] = result
        return result

    def clip_flows(self, clip: VideoClip) -> list[FlowField]:
        return [self.flow(clip, t) for t in range(len(clip) - 1)]

    def check_available(self, clips: Iterable[VideoClip]) -> None:
        """Raise listing every frame pair without a precomputed file."""
        if self.spec.kind == "builtin":
            return
        missing = [f"{c.clip_id}:{t}" for c in clips for t in range(len(c) - 1)
                   if not flow_path(self.spec.directory, c.clip_id, t).is_file()]
        if missing:
            shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
            raise FlowError(f"{len(missing)} frame pair(s) lack flow files: {shown}")


def estimate_m_ref(manifest: DatasetManifest, source: FlowSource) -> float:
    """Largest flow magnitude over the training split (the encoding reference)."""
    m = 0.0
    for clip in manifest.train_clips:
        for ff in source.clip_flows(clip):
            m = max(m, float(ff.magnitude().max()))
    if m <= 0:
        logger.warning("training flows are all zero; using m_ref=1")
        return 1.0
    return m
