"""Benchmark data model, manifest loading, evaluation driver, and judge client.

Manifest format: JSON-lines, one sample per line with keys id, image, query,
mask, scenario, level, class_name. Relative paths resolve against the
manifest's directory. scenario/level may be null for datasets without tags.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backends as be
from .errors import CompositionError, JudgeParseError, ManifestError
from .metrics import MetricsReport, aggregate, compute_report, confusion, pixel_metrics
from .raster import load_image, load_mask, render_overlay, save_image

__all__ = [
    "SCENARIOS",
    "LEVELS",
    "STRICT_COMPOSITION",
    "BenchmarkSample",
    "JudgeScores",
    "load_manifest",
    "write_manifest",
    "composition_stats",
    "check_level_ratio",
    "validate_composition",
    "evaluate",
    "build_judge_prompt",
    "parse_judge_response",
    "judge_run",
]

SCENARIOS = ("urban", "rural", "traffic", "nature")
LEVELS = (1, 2, 3)

# canonical benchmark composition: 810 samples, fixed scenario counts,
# difficulty split 60/30/10
STRICT_COMPOSITION = {
    "total": 810,
    "scenarios": {"urban": 330, "rural": 160, "traffic": 240, "nature": 80},
    "level_ratio": {1: 0.6, 2: 0.3, 3: 0.1},
}

JUDGE_DIMENSIONS = ("faithfulness", "localization", "robustness", "overlap")


@dataclass(frozen=True)
class BenchmarkSample:
    sample_id: str
    image: str
    query: str
    mask: str
    scenario: str | None = None
    level: int | None = None
    class_name: str | None = None

    def to_json(self) -> dict:
        return {
            "id": self.sample_id,
            "image": self.image,
            "query": self.query,
            "mask": self.mask,
            "scenario": self.scenario,
            "level": self.level,
            "class_name": self.class_name,
        }


@dataclass(frozen=True)
class JudgeScores:
    faithfulness: int
    localization: int
    robustness: int
    overlap: int

    def __post_init__(self):
        for dim in JUDGE_DIMENSIONS:
            v = getattr(self, dim)
            if v not in (1, 2, 3, 4, 5):
                raise JudgeParseError(f"{dim} score {v!r} outside 1-5")

    def to_json(self) -> dict:
        return {dim: getattr(self, dim) for dim in JUDGE_DIMENSIONS}


def _resolve(base: Path, path: str) -> str:
    return path if os.path.isabs(path) else str(base / path)


def load_manifest(path, strict: bool = False, check_files: bool = True):
    """Parse a manifest into samples plus composition stats.

    strict mode additionally asserts the canonical benchmark composition.
    Raises ManifestError with the offending line number on malformed input.
    """
    base = Path(path).parent
    samples: list[BenchmarkSample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc}", line=lineno) from exc
            try:
                scenario = obj.get("scenario")
                level = obj.get("level")
                sample = BenchmarkSample(
                    sample_id=str(obj["id"]),
                    image=str(obj["image"]),
                    query=str(obj["query"]),
                    mask=str(obj["mask"]),
                    scenario=None if scenario is None else str(scenario),
                    level=None if level is None else int(level),
                    class_name=None if obj.get("class_name") is None else str(obj["class_name"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"missing or malformed field: {exc}", line=lineno) from exc
            if sample.scenario is not None and sample.scenario not in SCENARIOS:
                raise ManifestError(f"unknown scenario {sample.scenario!r}", line=lineno)
            if sample.level is not None and sample.level not in LEVELS:
                raise ManifestError(f"level must be 1, 2 or 3, got {sample.level}", line=lineno)
            if check_files:
                for kind, p in (("image", sample.image), ("mask", sample.mask)):
                    if not os.path.exists(_resolve(base, p)):
                        raise ManifestError(f"{kind} file not found: {p}", line=lineno)
            samples.append(sample)
    if not samples:
        raise ManifestError(f"manifest {path} contains no samples")
    stats = composition_stats(samples)
    if strict:
        validate_composition(stats)
    return samples, stats


def write_manifest(samples: list[BenchmarkSample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")


def composition_stats(samples: list[BenchmarkSample]) -> dict:
    by_scenario = {s: 0 for s in SCENARIOS}
    by_level = {lv: 0 for lv in LEVELS}
    for s in samples:
        if s.scenario is not None:
            by_scenario[s.scenario] += 1
        if s.level is not None:
            by_level[s.level] += 1
    return {"total": len(samples), "by_scenario": by_scenario, "by_level": by_level}


def check_level_ratio(stats: dict, ratio: dict[int, float] | None = None) -> bool:
    """True when level counts split the total exactly by the given ratio."""
    ratio = ratio or STRICT_COMPOSITION["level_ratio"]
    total = stats["total"]
    return all(stats["by_level"][lv] == total * share for lv, share in ratio.items())


def validate_composition(stats: dict) -> None:
    expected = STRICT_COMPOSITION
    if stats["total"] != expected["total"]:
        raise CompositionError(f"expected {expected['total']} samples, found {stats['total']}")
    for scenario, count in expected["scenarios"].items():
        if stats["by_scenario"][scenario] != count:
            raise CompositionError(
                f"scenario {scenario}: expected {count}, found {stats['by_scenario'][scenario]}"
            )
    if not check_level_ratio(stats):
        raise CompositionError(
            f"level counts {stats['by_level']} do not split {stats['total']} at 60/30/10"
        )


# ---------------------------------------------------------------------------
# evaluation

def evaluate(
    predictions_dir,
    samples: list[BenchmarkSample],
    manifest_base: Path | str | None = None,
    theta: float | None = None,
    averaging: str = "macro",
    traces: dict | None = None,
):
    """Score one prediction PNG per sample against its ground-truth mask.

    Missing or unreadable predictions are scored as empty masks and flagged.
    Returns (reports, summary).
    """
    predictions_dir = Path(predictions_dir)
    base = Path(manifest_base) if manifest_base is not None else Path(".")
    reports: list[MetricsReport] = []
    confusions = []
    for s in samples:
        gt = load_mask(_resolve(base, s.mask))
        pred_path = predictions_dir / f"{s.sample_id}.png"
        flagged = False
        try:
            pred = load_mask(pred_path)
            if pred.shape != gt.shape:
                raise ValueError(f"prediction shape {pred.shape} != gt shape {gt.shape}")
        except Exception:
            pred = np.zeros_like(gt)
            flagged = True
        branch = traces.get(s.sample_id) if traces else None
        reports.append(
            compute_report(
                s.sample_id,
                pred,
                gt,
                theta=theta,
                scenario=s.scenario,
                level=s.level,
                fusion_branch=branch,
                flagged=flagged,
            )
        )
        confusions.append(confusion(pred, gt))
    summary = aggregate(reports, averaging=averaging, confusions=confusions)
    return reports, summary


# ---------------------------------------------------------------------------
# judge protocol

JUDGE_PROMPT_TEMPLATE = """You are an expert in remote sensing image analysis. Evaluate the segmentation quality of a {class_name} in this remote sensing image.

The image shows:
- Original image (background)
- Green overlay: Ground truth mask (correct segmentation)
- Red overlay: Predicted mask (model's segmentation)
- Yellow areas: Overlapping regions (where both masks agree)

Image dimensions: {width} x {height} pixels
Class: {class_name}

Evaluate the segmentation from FOUR aspects and provide integer scores from 1 to 5 for each metric. Use the following scoring standards:

1. Faithfulness: Does the predicted mask correctly identify the {class_name}?
- 5 (Excellent): Perfectly correct identification, no confusion with other classes.
- 4 (Good): Mostly correct, minor confusion with similar classes.
- 3 (Fair): Generally correct but some confusion with related classes.
- 2 (Poor): Significant confusion, partially wrong class identification.
- 1 (Very Poor): Completely wrong class, major misidentification.

2. Localization: Does the predicted mask precisely follow the complex edges?
- 5 (Excellent): Boundaries perfectly match ground truth, no rounded corners or overflow.
- 4 (Good): Boundaries mostly accurate, minor deviations at complex edges.
- 3 (Fair): Generally follows boundaries but noticeable deviations or slight overflow.
- 2 (Poor): Significant boundary misalignment, obvious rounded corners or overflow.
- 1 (Very Poor): Severe boundary errors, completely misaligned edges.

3. Robustness: Can the segmentation resist interference from clouds, shadows, seasonal changes, or similar textures?
- 5 (Excellent): Highly robust, unaffected by environmental variations or similar textures.
- 4 (Good): Mostly robust, minor sensitivity to environmental factors.
- 3 (Fair): Moderate robustness, some sensitivity to clouds/shadows/similar textures.
- 2 (Poor): Low robustness, easily confused by environmental variations.
- 1 (Very Poor): Very fragile, severely affected by clouds, shadows, or similar textures.

4. Overlap: Pixel-level IoU (Intersection over Union) between predicted and ground truth masks.
- 5 (Excellent): IoU >= 0.8, excellent pixel-level overlap.
- 4 (Good): IoU 0.6-0.8, good overlap with minor differences.
- 3 (Fair): IoU 0.4-0.6, moderate overlap, noticeable differences.
- 2 (Poor): IoU 0.2-0.4, poor overlap, significant differences.
- 1 (Very Poor): IoU < 0.2, very poor overlap, minimal agreement.

The actual calculated IoU is provided to the model as a reference: {iou:.4f}.

Respond with ONLY a valid JSON object in this format (use integer scores 1-5):
{{"faithfulness": <1-5>, "localization": <1-5>, "robustness": <1-5>, "overlap": <1-5>}}"""


def build_judge_prompt(class_name: str, width: int, height: int, reference_iou: float) -> str:
    """Rubric prompt with the class, dimensions, and computed IoU substituted."""
    return JUDGE_PROMPT_TEMPLATE.format(
        class_name=class_name, width=width, height=height, iou=reference_iou
    )


def parse_judge_response(raw_text: str) -> JudgeScores:
    """Extract the four 1-5 integer scores from judge output.

    Accepts JSON inside fenced blocks or surrounding prose. Raises
    JudgeParseError on missing keys, non-integers, or out-of-range values.
    """
    obj = be.extract_json_object(raw_text or "", JUDGE_DIMENSIONS)
    if obj is None:
        raise JudgeParseError(f"no score object found in judge output: {raw_text!r:.200}")
    values = {}
    for dim in JUDGE_DIMENSIONS:
        v = obj[dim]
        if isinstance(v, bool):
            raise JudgeParseError(f"{dim} is not an integer: {v!r}")
        if isinstance(v, float):
            if not v.is_integer():
                raise JudgeParseError(f"{dim} is not an integer: {v!r}")
            v = int(v)
        if not isinstance(v, int):
            raise JudgeParseError(f"{dim} is not an integer: {v!r}")
        values[dim] = v
    return JudgeScores(**values)


def judge_run(
    samples: list[BenchmarkSample],
    predictions_dir,
    backend: be.Backends,
    manifest_base=None,
    alpha: float = 0.5,
    overlay_dir=None,
):
    """Render overlays, query the judge per sample, and report 1-5 means.

    Per-sample failures (endpoint or parse) leave that sample's scores absent;
    means are taken over scored samples only, with coverage reported.
    """
    predictions_dir = Path(predictions_dir)
    base = Path(manifest_base) if manifest_base is not None else Path(".")
    per_sample: dict[str, dict | None] = {}
    for s in samples:
        gt = load_mask(_resolve(base, s.mask))
        image = load_image(_resolve(base, s.image))
        try:
            pred = load_mask(predictions_dir / f"{s.sample_id}.png")
            if pred.shape != gt.shape:
                raise ValueError("prediction/gt shape mismatch")
        except Exception:
            pred = np.zeros_like(gt)
        overlay = render_overlay(image, gt, pred, alpha=alpha)
        if overlay_dir is not None:
            Path(overlay_dir).mkdir(parents=True, exist_ok=True)
            save_image(overlay, Path(overlay_dir) / f"{s.sample_id}.png")
        iou = pixel_metrics(confusion(pred, gt))["iou"]
        class_name = s.class_name or s.query
        h, w = gt.shape
        prompt = build_judge_prompt(class_name, w, h, iou)
        try:
            raw = backend.judge(be.image_to_png_bytes(overlay), prompt)
            per_sample[s.sample_id] = parse_judge_response(raw).to_json()
        except Exception:
            per_sample[s.sample_id] = None
    scored = [v for v in per_sample.values() if v is not None]
    means = {
        dim: (float(np.mean([v[dim] for v in scored])) if scored else None)
        for dim in JUDGE_DIMENSIONS
    }
    return {
        "per_sample": per_sample,
        "means": means,
        "coverage": {"scored": len(scored), "total": len(samples)},
    }


def format_judge_table(result: dict) -> str:
    """Plain-text means table: F. / L. / R. plus auxiliary Overlap."""
    means = result["means"]
    cov = result["coverage"]
    headers = ("F.", "L.", "R.", "Overlap")
    line1 = "".join(h.rjust(9) for h in headers) + "  coverage"
    cells = "".join(
        ("-".rjust(9) if means[d] is None else f"{means[d]:.2f}".rjust(9))
        for d in JUDGE_DIMENSIONS
    )
    line2 = f"{cells}  {cov['scored']}/{cov['total']}"
    return line1 + "\n" + line2
