"""Binary morphology with a square all-ones structuring element, stride 1.

Out-of-bounds pixels read as 0 for dilation and as 1 for erosion, so masks
touching the image border are not eroded by the border itself. The two
operators form an adjunction under this policy, which makes opening and
closing idempotent.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class MorphologyError(ValueError):
    pass


def _check(mask: np.ndarray, k: int) -> np.ndarray:
    if k < 1 or k % 2 == 0:
        raise MorphologyError(f"kernel size must be odd and positive, got {k}")
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise MorphologyError(f"expected a 2-D mask, got shape {mask.shape}")
    return mask.astype(bool)


def _window_reduce(mask: np.ndarray, k: int, pad_value: bool, reduce) -> np.ndarray:
    r = k // 2
    padded = np.pad(mask, r, mode="constant", constant_values=pad_value)
    # separable: a k x k box is a k-row pass followed by a k-column pass
    rows = reduce(sliding_window_view(padded, k, axis=0), axis=-1)
    return reduce(sliding_window_view(rows, k, axis=1), axis=-1)


def dilate(mask: np.ndarray, k: int = 7) -> np.ndarray:
    mask = _check(mask, k)
    return _window_reduce(mask, k, False, np.any)


def erode(mask: np.ndarray, k: int = 7) -> np.ndarray:
    mask = _check(mask, k)
    return _window_reduce(mask, k, True, np.all)


def morphological_closing(mask: np.ndarray, k: int = 7) -> np.ndarray:
    """Dilation then erosion: fills holes and gaps narrower than the kernel."""
    return erode(dilate(mask, k), k)


def morphological_opening(mask: np.ndarray, k: int = 7) -> np.ndarray:
    """Erosion then dilation: removes regions the kernel does not fit into."""
    return dilate(erode(mask, k), k)
