"""Point-prompt extraction from similarity maps via thresholded greedy NMS."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SimilarityMap", "KeypointSet", "default_radius", "extract_keypoints"]


@dataclass(frozen=True)
class SimilarityMap:
    """Row-major float grid produced by the matcher backend."""

    width: int
    height: int
    values: tuple[float, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"map dims must be >= 1, got {self.width}x{self.height}")
        if len(self.values) != self.width * self.height:
            raise ValueError(
                f"expected {self.width * self.height} values, got {len(self.values)}"
            )
        arr = np.asarray(self.values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ValueError("similarity values must be finite")

    def grid(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64).reshape(self.height, self.width)


@dataclass(frozen=True)
class KeypointSet:
    """Selected prompt points in crop pixel coordinates, scores non-increasing."""

    points: tuple[tuple[float, float], ...] = ()
    scores: tuple[float, ...] = ()
    cells: tuple[tuple[int, int], ...] = field(default=(), compare=False)  # (row, col)

    def __len__(self) -> int:
        return len(self.points)


def _round_half_up(x: float) -> int:
    import math

    return math.floor(x + 0.5)


def default_radius(map_width: int, map_height: int) -> int:
    """Suppression radius scaling with map resolution: max(1, round(0.1*min dim))."""
    return max(1, _round_half_up(0.1 * min(map_width, map_height)))


def extract_keypoints(
    sim: SimilarityMap,
    crop_width: int,
    crop_height: int,
    k: int = 5,
    tau: float = 0.3,
    radius: int | None = None,
) -> KeypointSet:
    """Pick up to k local maxima above tau after min-max normalization.

    Greedy selection: repeatedly take the highest-valued unsuppressed cell with
    normalized value >= tau (ties broken by smaller row-major index) and
    suppress every cell within Chebyshev distance <= radius. A constant map
    yields the empty set. Cell (row i, col j) maps to the crop point
    ((j+0.5)*crop_width/map_width, (i+0.5)*crop_height/map_height).
    """
    if crop_width < 1 or crop_height < 1:
        raise ValueError(f"crop dims must be >= 1, got {crop_width}x{crop_height}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0,1], got {tau}")
    if radius is None:
        radius = default_radius(sim.width, sim.height)
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")

    grid = sim.grid()
    vmin = float(grid.min())
    vmax = float(grid.max())
    if vmax == vmin:
        return KeypointSet()
    norm = (grid - vmin) / (vmax - vmin)

    h, w = norm.shape
    flat = norm.reshape(-1)
    # stable sort keeps ties in row-major order
    order = np.argsort(-flat, kind="stable")

    suppressed = np.zeros((h, w), dtype=bool)
    points: list[tuple[float, float]] = []
    scores: list[float] = []
    cells: list[tuple[int, int]] = []
    for idx in order:
        value = float(flat[idx])
        if value < tau:
            break
        i, j = divmod(int(idx), w)
        if suppressed[i, j]:
            continue
        points.append(((j + 0.5) * crop_width / w, (i + 0.5) * crop_height / h))
        scores.append(value)
        cells.append((i, j))
        suppressed[max(0, i - radius) : i + radius + 1, max(0, j - radius) : j + radius + 1] = True
        if len(points) == k:
            break

    return KeypointSet(points=tuple(points), scores=tuple(scores), cells=tuple(cells))
