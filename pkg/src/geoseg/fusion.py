"""Validity gating and consensus-driven fusion of the two route masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BBox, int_grid
from .raster import mask_area, validate_mask

__all__ = ["RouteOutput", "FusionParams", "assess_validity", "fuse"]

ROUTE_POINT = "point"
ROUTE_TEXT = "text"

BRANCH_INTERSECTION = "intersection"
BRANCH_FALLBACK_A = "fallback_A"
BRANCH_FALLBACK_B = "fallback_B"
BRANCH_EMPTY = "empty"


@dataclass(frozen=True)
class RouteOutput:
    """A route's canvas-level mask. keypoint_count is None for the text route."""

    mask: np.ndarray
    route: str
    keypoint_count: int | None = None

    def __post_init__(self):
        validate_mask(self.mask)
        if self.route not in (ROUTE_POINT, ROUTE_TEXT):
            raise ValueError(f"unknown route {self.route!r}")
        if self.route == ROUTE_POINT and self.keypoint_count is None:
            raise ValueError("point route requires a keypoint_count")


@dataclass(frozen=True)
class FusionParams:
    """Minimum mask-area-to-RoI-area ratio for a route to count as valid."""

    gamma: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")


def assess_validity(output: RouteOutput, roi: BBox, params: FusionParams) -> bool:
    """Area-ratio gate; the point route is additionally invalid with no keypoints."""
    x1, y1, x2, y2 = int_grid(roi)
    roi_area = (x2 - x1) * (y2 - y1)
    if roi_area <= 0:
        raise ValueError(f"degenerate RoI {roi.as_list()}")
    if output.route == ROUTE_POINT and output.keypoint_count == 0:
        return False
    return mask_area(output.mask) / roi_area >= params.gamma


def fuse(
    pt: RouteOutput,
    txt: RouteOutput,
    pt_valid: bool,
    txt_valid: bool,
) -> tuple[np.ndarray, str]:
    """Intersection when both routes are valid, single-route fallback otherwise.

    Returns (mask, branch tag). Both valid -> pixel-wise AND (which may be
    empty; strict consensus does not fall back). Neither valid -> all-zero.
    """
    if pt.mask.shape != txt.mask.shape:
        raise ValueError(f"mask shapes differ: {pt.mask.shape} vs {txt.mask.shape}")
    if pt_valid and txt_valid:
        return (pt.mask & txt.mask).astype(np.uint8), BRANCH_INTERSECTION
    if pt_valid:
        return pt.mask.copy(), BRANCH_FALLBACK_A
    if txt_valid:
        return txt.mask.copy(), BRANCH_FALLBACK_B
    return np.zeros_like(pt.mask, dtype=np.uint8), BRANCH_EMPTY
