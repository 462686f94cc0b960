"""Column-wise non-maximum suppression and thresholding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NmsConfig:
    radius: int = 1

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")


def nms_vertical(activation, cfg: NmsConfig = NmsConfig()) -> np.ndarray:
    """Keep a pixel iff it beats every pixel above it and matches or beats every pixel below, within ``radius`` rows.

    Comparisons stay inside each column; pixels beyond the grid edge are
    ignored. The strict/non-strict split resolves plateaus to their topmost
    pixel. Survivors keep their value, everything else becomes 0.

    Accepts ``(rows, cols)`` or single-channel ``(batch, 1, rows, cols)`` grids.
    """
    a = np.asarray(activation, dtype=np.float64)
    if a.ndim == 4:
        if a.shape[1] != 1:
            raise ValueError(f"nms_vertical needs a single-channel grid, got {a.shape[1]} channels")
        return np.stack([nms_vertical(a[i, 0], cfg)[None] for i in range(a.shape[0])])
    if a.ndim != 2:
        raise ValueError(f"expected a 2D or (batch, 1, rows, cols) grid, got shape {a.shape}")
    keep = np.ones(a.shape, dtype=bool)
    for d in range(1, cfg.radius + 1):
        # neighbour d rows above must be strictly smaller
        keep[d:] &= a[d:] > a[:-d]
        # neighbour d rows below must not be larger
        keep[:-d] &= a[:-d] >= a[d:]
    return np.where(keep, a, 0.0)


def binarize(activation, threshold: float) -> np.ndarray:
    """1 where ``activation > threshold`` (strict), else 0."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return (np.asarray(activation) > threshold).astype(np.float64)
