"""Pixel-level segmentation metrics and per-group aggregate reporting.

Seven metrics per sample: IoU, Dice, Accuracy, Precision, Recall,
Specificity, Boundary F-score. Empty-denominator conventions are fixed here
so every value is defined for every mask pair:

  * both masks empty  -> iou = dice = precision = recall = 1
  * pred empty, gt nonempty -> precision = 0
  * gt empty -> recall = 1
  * no background in gt -> specificity = 1
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from .raster import validate_mask

__all__ = [
    "Confusion",
    "MetricsReport",
    "confusion",
    "pixel_metrics",
    "boundary_f",
    "default_theta",
    "boundary_pixels",
    "compute_report",
    "aggregate",
    "format_metrics_table",
]

METRIC_FIELDS = ("iou", "dice", "accuracy", "precision", "recall", "specificity", "boundary_f")
TABLE_HEADERS = ("IoU", "Dice", "Acc.", "Prec.", "Rec.", "Spec.", "BF")


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    sample_id: str
    iou: float
    dice: float
    accuracy: float
    precision: float
    recall: float
    specificity: float
    boundary_f: float
    theta: float
    scenario: str | None = None
    level: int | None = None
    fusion_branch: str | None = None
    flagged: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def confusion(pred: np.ndarray, gt: np.ndarray) -> Confusion:
    """Per-pixel tally of the four agreement classes."""
    validate_mask(pred)
    validate_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return Confusion(tp=tp, fp=fp, fn=fn, tn=tn)


def pixel_metrics(c: Confusion) -> dict:
    """IoU, Dice, Accuracy, Precision, Recall, Specificity from one confusion."""
    union = c.tp + c.fp + c.fn
    iou = c.tp / union if union else 1.0
    dice = 2 * c.tp / (2 * c.tp + c.fp + c.fn) if union else 1.0
    accuracy = (c.tp + c.tn) / c.total
    if c.tp + c.fp:
        precision = c.tp / (c.tp + c.fp)
    else:
        precision = 1.0 if c.tp + c.fn == 0 else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    specificity = c.tn / (c.tn + c.fp) if c.tn + c.fp else 1.0
    return {
        "iou": iou,
        "dice": dice,
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "specificity": specificity,
    }


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels 4-adjacent to background or lying on the image border."""
    validate_mask(mask)
    fg = mask.astype(bool)
    padded = np.pad(fg, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return fg & ~interior


def default_theta(width: int, height: int) -> float:
    """The usual boundary tolerance: round(0.0075 * image diagonal), at least 0."""
    return float(math.floor(0.0075 * math.hypot(width, height) + 0.5))


def boundary_f(pred: np.ndarray, gt: np.ndarray, theta: float) -> float:
    """Harmonic mean of boundary precision/recall at pixel tolerance theta.

    One-sided empty boundary scores 0; both empty score 1.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    pb = boundary_pixels(pred)
    gb = boundary_pixels(gt)
    np_pred = int(pb.sum())
    np_gt = int(gb.sum())
    if np_pred == 0 and np_gt == 0:
        return 1.0
    if np_pred == 0 or np_gt == 0:
        return 0.0
    # distance from every pixel to the nearest boundary pixel of the other mask
    dist_to_gt = ndimage.distance_transform_edt(~gb)
    dist_to_pred = ndimage.distance_transform_edt(~pb)
    precision = float(np.count_nonzero(dist_to_gt[pb] <= theta)) / np_pred
    recall = float(np.count_nonzero(dist_to_pred[gb] <= theta)) / np_gt
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def compute_report(
    sample_id: str,
    pred: np.ndarray,
    gt: np.ndarray,
    theta: float | None = None,
    scenario: str | None = None,
    level: int | None = None,
    fusion_branch: str | None = None,
    flagged: bool = False,
) -> MetricsReport:
    """All seven metrics for one sample; theta defaults to the diagonal rule."""
    if theta is None:
        h, w = gt.shape
        theta = default_theta(w, h)
    values = pixel_metrics(confusion(pred, gt))
    return MetricsReport(
        sample_id=sample_id,
        boundary_f=boundary_f(pred, gt, theta),
        theta=theta,
        scenario=scenario,
        level=level,
        fusion_branch=fusion_branch,
        flagged=flagged,
        **values,
    )


def _mean_metrics(reports: list[MetricsReport]) -> dict:
    out = {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRIC_FIELDS}
    out["count"] = len(reports)
    return out


def _micro_metrics(pairs: list[Confusion], reports: list[MetricsReport]) -> dict:
    summed = Confusion(
        tp=sum(c.tp for c in pairs),
        fp=sum(c.fp for c in pairs),
        fn=sum(c.fn for c in pairs),
        tn=sum(c.tn for c in pairs),
    )
    out = dict(pixel_metrics(summed))
    # BF has no confusion-level form; it stays a per-sample mean
    out["boundary_f"] = float(np.mean([r.boundary_f for r in reports]))
    out["count"] = len(reports)
    return out


def aggregate(
    reports: list[MetricsReport],
    averaging: str = "macro",
    confusions: list[Confusion] | None = None,
) -> dict:
    """Overall and per-scenario/per-level summaries.

    Macro averages per-sample values; micro recomputes the six confusion
    metrics from summed confusions (requires the per-sample confusions).
    """
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    if averaging not in ("macro", "micro"):
        raise ValueError(f"averaging must be macro or micro, got {averaging!r}")
    if averaging == "micro" and (confusions is None or len(confusions) != len(reports)):
        raise ValueError("micro averaging requires one confusion per report")

    def summarize(idx: list[int]) -> dict:
        group = [reports[i] for i in idx]
        if averaging == "macro":
            return _mean_metrics(group)
        return _micro_metrics([confusions[i] for i in idx], group)

    all_idx = list(range(len(reports)))
    summary = {
        "averaging": averaging,
        "overall": summarize(all_idx),
        "by_scenario": {},
        "by_level": {},
    }
    scenarios = sorted({r.scenario for r in reports if r.scenario is not None})
    for s in scenarios:
        summary["by_scenario"][s] = summarize([i for i in all_idx if reports[i].scenario == s])
    levels = sorted({r.level for r in reports if r.level is not None})
    for lv in levels:
        summary["by_level"][str(lv)] = summarize([i for i in all_idx if reports[i].level == lv])
    return summary


def format_metrics_table(summary: dict) -> str:
    """Plain-text table, metric columns as percentages with one decimal."""
    rows: list[tuple[str, dict]] = [("Overall", summary["overall"])]
    rows += [(f"scenario:{k}", v) for k, v in summary["by_scenario"].items()]
    rows += [(f"level:{k}", v) for k, v in summary["by_level"].items()]

    name_w = max(len(name) for name, _ in rows) + 2
    header = "".join(h.rjust(8) for h in TABLE_HEADERS)
    lines = [f"{'Group'.ljust(name_w)}{header}{'N'.rjust(7)}"]
    for name, vals in rows:
        cells = "".join(f"{100.0 * vals[m]:.1f}".rjust(8) for m in METRIC_FIELDS)
        lines.append(f"{name.ljust(name_w)}{cells}{str(vals['count']).rjust(7)}")
    return "\n".join(lines)
