"""Bounding-box algebra: clamping, bias-aware expansion, RoI crop and paste-back."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GroundingDegenerateError
from .raster import resize_nearest, validate_mask

__all__ = ["BBox", "RefineParams", "clamp_box", "refine_box", "int_grid", "crop_region", "paste_mask"]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, x2/y2 exclusive right/bottom edges."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def contains(self, other: "BBox") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )


@dataclass(frozen=True)
class RefineParams:
    """Asymmetric expansion margins: alpha leads (top-left), beta trails (bottom-right)."""

    alpha: float = 0.2
    beta: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"margins must be >= 0, got alpha={self.alpha} beta={self.beta}")


def _clip(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def clamp_box(box: BBox, width: int, height: int) -> BBox:
    """Clip a box to image bounds, swapping reversed coordinate pairs first.

    Raises GroundingDegenerateError when the clamped box has zero width or
    height (e.g. the box lies entirely outside the image).
    """
    if width < 1 or height < 1:
        raise ValueError(f"image dims must be >= 1, got {width}x{height}")
    x1, x2 = sorted((box.x1, box.x2))
    y1, y2 = sorted((box.y1, box.y2))
    clamped = BBox(
        _clip(x1, 0.0, float(width)),
        _clip(y1, 0.0, float(height)),
        _clip(x2, 0.0, float(width)),
        _clip(y2, 0.0, float(height)),
    )
    if clamped.width <= 0 or clamped.height <= 0:
        raise GroundingDegenerateError(
            f"box {box.as_list()} degenerates to zero area within {width}x{height}"
        )
    return clamped


def refine_box(box: BBox, width: int, height: int, params: RefineParams) -> BBox:
    """Expand a clamped box by alpha on the leading edges and beta on the trailing ones.

    x1' = clip(x1 - alpha*w, 0, W)  y1' = clip(y1 - alpha*h, 0, H)
    x2' = clip(x2 + beta*w, 0, W)   y2' = clip(y2 + beta*h, 0, H)
    with w = x2-x1 and h = y2-y1. The result always contains the input.
    """
    w = box.width
    h = box.height
    return BBox(
        _clip(box.x1 - params.alpha * w, 0.0, float(width)),
        _clip(box.y1 - params.alpha * h, 0.0, float(height)),
        _clip(box.x2 + params.beta * w, 0.0, float(width)),
        _clip(box.y2 + params.beta * h, 0.0, float(height)),
    )


def int_grid(box: BBox) -> tuple[int, int, int, int]:
    """Snap a box to the pixel grid: floor on mins, ceil on maxes."""
    return (
        math.floor(box.x1),
        math.floor(box.y1),
        math.ceil(box.x2),
        math.ceil(box.y2),
    )


def crop_region(image: np.ndarray, box: BBox) -> np.ndarray:
    """Copy the integer-gridded RoI out of an image (2-D mask or HxWx3 raster)."""
    x1, y1, x2, y2 = int_grid(box)
    h, w = image.shape[:2]
    if x2 <= x1 or y2 <= y1:
        raise GroundingDegenerateError(f"degenerate crop box {box.as_list()}")
    if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
        raise ValueError(f"box {box.as_list()} exceeds image bounds {w}x{h}")
    return image[y1:y2, x1:x2].copy()


def paste_mask(crop_mask: np.ndarray, roi: BBox, width: int, height: int) -> np.ndarray:
    """Resize a crop-level mask to the RoI and place it on an all-zero canvas."""
    validate_mask(crop_mask)
    x1, y1, x2, y2 = int_grid(roi)
    if x2 <= x1 or y2 <= y1:
        raise GroundingDegenerateError(f"degenerate RoI {roi.as_list()}")
    if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
        raise ValueError(f"RoI {roi.as_list()} exceeds canvas {width}x{height}")
    canvas = np.zeros((height, width), dtype=np.uint8)
    canvas[y1:y2, x1:x2] = resize_nearest(crop_mask, x2 - x1, y2 - y1)
    return canvas
