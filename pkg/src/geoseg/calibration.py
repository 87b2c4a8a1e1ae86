"""Grounding-drift statistics: edge offsets and margin derivation.

Offsets are normalized by the predicted box because only the prediction is
available at inference time. Positive values mean the ground truth extends
beyond the prediction on that side.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .geometry import BBox, RefineParams

__all__ = [
    "EdgeOffsets",
    "edge_offsets",
    "derive_margins",
    "export_offset_histogram",
    "histogram_csv",
    "load_pairs",
]

EDGE_NAMES = ("left", "top", "right", "bottom")


@dataclass(frozen=True)
class EdgeOffsets:
    left: float
    top: float
    right: float
    bottom: float

    def __post_init__(self):
        for name in EDGE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"offset {name} is not finite")


def edge_offsets(pred: BBox, gt: BBox) -> EdgeOffsets:
    """Signed per-edge offsets as fractions of the predicted box size."""
    w = pred.width
    h = pred.height
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate predicted box {pred.as_list()}")
    return EdgeOffsets(
        left=(pred.x1 - gt.x1) / w,
        top=(pred.y1 - gt.y1) / h,
        right=(gt.x2 - pred.x2) / w,
        bottom=(gt.y2 - pred.y2) / h,
    )


def _nearest_rank(values: list[float], quantile: float) -> float:
    ordered = sorted(values)
    rank = max(1, math.ceil(quantile * len(ordered)))
    return ordered[rank - 1]


def _snap(v: float) -> float:
    # nearest 0.05, half away from zero on ties, clamped to [0, 0.5]
    snapped = math.floor(v * 20.0 + 0.5) / 20.0
    return min(max(snapped, 0.0), 0.5)


def derive_margins(offsets: list[EdgeOffsets], quantile: float = 0.8) -> RefineParams:
    """Margins from the positive part of the offset distribution.

    alpha pools {max(0,left), max(0,top)} and beta pools {max(0,right),
    max(0,bottom)}; each takes the nearest-rank quantile, rounded to the
    0.05 grid and clamped to [0, 0.5].
    """
    if not offsets:
        raise ValueError("offset list is empty")
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must be in (0,1), got {quantile}")
    leading = [max(0.0, o.left) for o in offsets] + [max(0.0, o.top) for o in offsets]
    trailing = [max(0.0, o.right) for o in offsets] + [max(0.0, o.bottom) for o in offsets]
    return RefineParams(
        alpha=_snap(_nearest_rank(leading, quantile)),
        beta=_snap(_nearest_rank(trailing, quantile)),
    )


def export_offset_histogram(offsets: list[EdgeOffsets], bin_width: float) -> list[tuple[str, float, int]]:
    """Per-edge histogram rows (edge, bin_center, count), bin = floor(v/width)."""
    if not offsets:
        raise ValueError("offset list is empty")
    if bin_width <= 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    rows: list[tuple[str, float, int]] = []
    for edge in EDGE_NAMES:
        counts: dict[int, int] = {}
        for o in offsets:
            b = math.floor(getattr(o, edge) / bin_width)
            counts[b] = counts.get(b, 0) + 1
        for b in sorted(counts):
            rows.append((edge, b * bin_width, counts[b]))
    return rows


def histogram_csv(rows: list[tuple[str, float, int]]) -> str:
    lines = ["edge,bin_center,count"]
    for edge, center, count in rows:
        lines.append(f"{edge},{center:.6g},{count}")
    return "\n".join(lines) + "\n"


def load_pairs(path) -> list[EdgeOffsets]:
    """Read (pred, gt) box pairs from JSON-lines and convert to offsets."""
    offsets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pred = BBox(*[float(v) for v in obj["pred"]])
                gt = BBox(*[float(v) for v in obj["gt"]])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"pairs file line {lineno}: {exc}") from exc
            offsets.append(edge_offsets(pred, gt))
    return offsets
