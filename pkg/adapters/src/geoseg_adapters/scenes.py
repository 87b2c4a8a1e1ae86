"""Fixture scene parsing and rendering for the mock backend.

This is a standalone implementation of the shared fixture-scene contract;
it deliberately shares no code with the pipeline package so that the file
format and wire protocol, not a common library, carry the compatibility.

Contract recap:
  * canvas starts black; regions painted in file order, later over earlier;
  * region i (global index across the whole file) is painted with
    ((i+1) % 256, (37*(i+1)) % 256, (151*(i+1)) % 256);
  * a full image is identified by the sha256 of its raw RGB bytes;
  * crops are identified by the region colors visible in them.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

MAX_REGIONS = 255


def palette_color(global_index: int) -> tuple[int, int, int]:
    if not 0 <= global_index < MAX_REGIONS:
        raise ValueError(f"region index {global_index} outside palette range")
    n = global_index + 1
    return (n % 256, (37 * n) % 256, (151 * n) % 256)


@dataclass(frozen=True)
class Region:
    label: str
    box: tuple[int, int, int, int]
    color: tuple[int, int, int]

    @property
    def label_norm(self) -> str:
        return self.label.strip().lower()


@dataclass(frozen=True)
class Scene:
    scene_id: str
    width: int
    height: int
    regions: tuple[Region, ...]
    grounder: dict = field(default_factory=dict)
    judge_text: str | None = None
    grounder_fail: bool = False


@dataclass(frozen=True)
class SceneSet:
    scenes: tuple[Scene, ...]
    judge_rules: tuple[tuple[str, str], ...] = ()
    judge_default: str | None = None

    @classmethod
    def from_file(cls, path) -> "SceneSet":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        raw_scenes = obj["scenes"] if "scenes" in obj else [obj]
        scenes = []
        index = 0
        for si, raw in enumerate(raw_scenes):
            width, height = int(raw["width"]), int(raw["height"])
            regions = []
            for r in raw.get("regions", []):
                x1, y1, x2, y2 = (int(v) for v in r["box"])
                if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
                    raise ValueError(f"region box {r['box']} outside {width}x{height}")
                regions.append(
                    Region(label=str(r["label"]), box=(x1, y1, x2, y2), color=palette_color(index))
                )
                index += 1
            scenes.append(
                Scene(
                    scene_id=str(raw.get("id", f"scene{si}")),
                    width=width,
                    height=height,
                    regions=tuple(regions),
                    grounder={str(k): str(v) for k, v in raw.get("grounder", {}).items()},
                    judge_text=raw.get("judge"),
                    grounder_fail=bool(raw.get("grounder_fail", False)),
                )
            )
        rules = tuple((str(r["contains"]), str(r["text"])) for r in obj.get("judge_rules", []))
        return cls(scenes=tuple(scenes), judge_rules=rules, judge_default=obj.get("judge_default"))

    def all_regions(self):
        return [r for scene in self.scenes for r in scene.regions]

    def resolve_judge(self, prompt: str) -> str:
        for contains, text in self.judge_rules:
            if contains in prompt:
                return text
        if self.judge_default is not None:
            return self.judge_default
        if len(self.scenes) == 1 and self.scenes[0].judge_text is not None:
            return self.scenes[0].judge_text
        return ""


def render_scene(scene: Scene) -> np.ndarray:
    canvas = np.zeros((scene.height, scene.width, 3), dtype=np.uint8)
    for region in scene.regions:
        x1, y1, x2, y2 = region.box
        canvas[y1:y2, x1:x2] = region.color
    return canvas


def image_digest(image: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(image, dtype=np.uint8).tobytes()).hexdigest()


def _label_names_phrase(label_norm: str, phrase_norm: str) -> bool:
    # the matcher only fires on labels that NAME the phrase (exact, or the
    # phrase as a leading whole word); the text route uses looser containment
    return label_norm == phrase_norm or label_norm.startswith(phrase_norm + " ")


def similarity_map(scene_set: SceneSet, crop: np.ndarray, phrase: str) -> np.ndarray:
    """One Gaussian bump per phrase-naming region visible in the crop."""
    h, w = crop.shape[:2]
    acc = np.zeros((h, w), dtype=np.float64)
    target = phrase.strip().lower()
    for region in scene_set.all_regions():
        if not _label_names_phrase(region.label_norm, target):
            continue
        hit = (crop == np.array(region.color, dtype=np.uint8)).all(axis=2)
        ys, xs = np.nonzero(hit)
        if xs.size == 0:
            continue
        minx, maxx = int(xs.min()), int(xs.max())
        miny, maxy = int(ys.min()), int(ys.max())
        cx = (minx + maxx + 1) / 2.0
        cy = (miny + maxy + 1) / 2.0
        sx = (maxx - minx + 1) / 4.0
        sy = (maxy - miny + 1) / 4.0
        xg = np.arange(w, dtype=np.float64) + 0.5 - cx
        yg = np.arange(h, dtype=np.float64) + 0.5 - cy
        d = xg[None, :] ** 2 / (2.0 * sx * sx) + yg[:, None] ** 2 / (2.0 * sy * sy)
        acc = np.maximum(acc, np.exp(-d))
    return acc


def segment_by_points(scene_set: SceneSet, crop: np.ndarray, points) -> np.ndarray:
    """Union of the full visible extent of the region under each point."""
    h, w = crop.shape[:2]
    out = np.zeros((h, w), dtype=np.uint8)
    known = {r.color for r in scene_set.all_regions()}
    for x, y in points:
        px = min(max(int(np.floor(float(x))), 0), w - 1)
        py = min(max(int(np.floor(float(y))), 0), h - 1)
        color = tuple(int(c) for c in crop[py, px])
        if color in known:
            out |= (crop == np.array(color, dtype=np.uint8)).all(axis=2).astype(np.uint8)
    return out


def segment_by_text(scene_set: SceneSet, crop: np.ndarray, text: str) -> np.ndarray:
    """Union of regions whose label contains the prompt, case-insensitive."""
    h, w = crop.shape[:2]
    out = np.zeros((h, w), dtype=np.uint8)
    needle = text.strip().lower()
    if not needle:
        return out
    for region in scene_set.all_regions():
        if needle in region.label_norm:
            out |= (crop == np.array(region.color, dtype=np.uint8)).all(axis=2).astype(np.uint8)
    return out


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major alternating run lengths starting with zeros, as a JSON object."""
    h, w = mask.shape
    flat = np.asarray(mask, dtype=np.uint8).reshape(-1)
    counts: list[int] = []
    if flat.size:
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        counts = [int(c) for c in np.diff(bounds)]
        if flat[0] == 1:
            counts = [0] + counts
    return {"size": [int(h), int(w)], "counts": counts}
