"""Training-free reasoning-driven segmentation for remote sensing imagery.

Composes pluggable model backends (grounder, matcher, segmenter, judge)
into a grounding -> bias-aware box refinement -> dual-route segmentation ->
consensus fusion pipeline, with calibration tooling and a benchmark harness.
"""

from .geometry import BBox, RefineParams, clamp_box, crop_region, paste_mask, refine_box
from .fusion import FusionParams, RouteOutput, assess_validity, fuse
from .keypoints import KeypointSet, SimilarityMap, extract_keypoints
from .metrics import boundary_f, compute_report, confusion, pixel_metrics
from .raster import RleMask, mask_area, render_overlay, resize_nearest, rle_decode, rle_encode

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "RefineParams",
    "clamp_box",
    "refine_box",
    "crop_region",
    "paste_mask",
    "FusionParams",
    "RouteOutput",
    "assess_validity",
    "fuse",
    "KeypointSet",
    "SimilarityMap",
    "extract_keypoints",
    "confusion",
    "pixel_metrics",
    "boundary_f",
    "compute_report",
    "RleMask",
    "rle_encode",
    "rle_decode",
    "mask_area",
    "resize_nearest",
    "render_overlay",
    "__version__",
]
