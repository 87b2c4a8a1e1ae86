"""Deterministic in-process backend set driven by fixture scenes.

Fixture file format (JSON, shared with the wire-served mock server so both
answer identically from the same file):

.. code-block:: json

    {
      "scenes": [
        {
          "id": "s01",
          "width": 96, "height": 96,
          "regions": [{"label": "blue lake", "box": [30, 36, 66, 68]}],
          "grounder": {"find the lake": "{\\"bbox_2d\\": [28, 34, 64, 66], \\"label\\": \\"blue lake\\"}"},
          "grounder_fail": false,
          "judge": "{\\"faithfulness\\": 4, ...}"
        }
      ],
      "judge_rules": [{"contains": "a lake", "text": "..."}],
      "judge_default": "..."
    }

Scene rendering is part of the contract: the canvas starts black and regions
are painted in file order (later over earlier) with the palette color of
their global index across the whole file. Backends resolve a full image to
its scene by the sha256 digest of the raw RGB bytes; crops are resolved by
the palette colors visible in them, so no offset bookkeeping is needed.

Backend behavior:

* grounder: scripted text per query; unknown query answers "" (an
  empty result, not an error); unknown image digest raises StubMissError.
* matcher: one Gaussian bump per region whose label names the phrase, i.e.
  equals it or starts with it as a whole word ("pond east" matches "pond",
  "big blue lake" does not match "blue lake"); case-insensitive. Each bump
  is centered on the region's visible bounding box in the crop with
  sigma = visible span / 4; bumps combine by elementwise max; the map is
  returned at crop resolution. The matcher is deliberately stricter than
  the text route so fixtures can drive the two routes apart.
* segmenter, point prompt: union over points of the full visible extent of
  the region whose color sits under each point.
* segmenter, text prompt: union of regions whose label contains the prompt
  (case-insensitive substring).
* judge: first judge_rules entry whose "contains" appears in the prompt,
  else judge_default, else the single scene's "judge" text, else "".
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .backends import Backends, image_from_png_bytes
from .errors import BackendUnavailableError, StubMissError
from .keypoints import SimilarityMap

__all__ = ["FixtureScene", "Fixture", "ScriptedStub", "palette_color", "render_scene"]

MAX_REGIONS = 255


def palette_color(global_index: int) -> tuple[int, int, int]:
    """Distinct, non-black RGB color for the i-th region across the fixture file."""
    if not 0 <= global_index < MAX_REGIONS:
        raise ValueError(f"region index {global_index} outside palette range")
    n = global_index + 1
    return (n % 256, (37 * n) % 256, (151 * n) % 256)


@dataclass(frozen=True)
class Region:
    label: str
    box: tuple[int, int, int, int]  # x1, y1, x2, y2 exclusive
    color: tuple[int, int, int]

    @property
    def label_norm(self) -> str:
        return self.label.strip().lower()


@dataclass(frozen=True)
class FixtureScene:
    scene_id: str
    width: int
    height: int
    regions: tuple[Region, ...]
    grounder: dict[str, str] = field(default_factory=dict)
    judge_text: str | None = None
    grounder_fail: bool = False


def render_scene(scene: FixtureScene) -> np.ndarray:
    """Black canvas with regions painted in order using their palette colors."""
    canvas = np.zeros((scene.height, scene.width, 3), dtype=np.uint8)
    for region in scene.regions:
        x1, y1, x2, y2 = region.box
        canvas[y1:y2, x1:x2] = region.color
    return canvas


def _image_digest(image: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(image, dtype=np.uint8).tobytes()).hexdigest()


@dataclass(frozen=True)
class Fixture:
    scenes: tuple[FixtureScene, ...]
    judge_rules: tuple[tuple[str, str], ...] = ()
    judge_default: str | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "Fixture":
        raw_scenes = obj["scenes"] if "scenes" in obj else [obj]
        scenes = []
        region_index = 0
        for si, raw in enumerate(raw_scenes):
            width = int(raw["width"])
            height = int(raw["height"])
            regions = []
            labels_seen = set()
            for r in raw.get("regions", []):
                label = str(r["label"])
                if label in labels_seen:
                    raise ValueError(f"duplicate region label {label!r} in scene {si}")
                labels_seen.add(label)
                x1, y1, x2, y2 = (int(v) for v in r["box"])
                if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
                    raise ValueError(f"region {label!r} box {r['box']} outside {width}x{height} canvas")
                regions.append(Region(label=label, box=(x1, y1, x2, y2), color=palette_color(region_index)))
                region_index += 1
            scenes.append(
                FixtureScene(
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

    @classmethod
    def from_file(cls, path) -> "Fixture":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def all_regions(self) -> list[Region]:
        return [r for scene in self.scenes for r in scene.regions]


class ScriptedStub(Backends):
    """Fixture-driven backends; identical inputs always get identical answers."""

    def __init__(self, fixture: Fixture):
        self.fixture = fixture
        self.calls = {"ground": 0, "similarity": 0, "segment": 0, "judge": 0}
        self._by_digest = {}
        for scene in fixture.scenes:
            digest = _image_digest(render_scene(scene))
            if digest in self._by_digest:
                raise ValueError(f"scenes {self._by_digest[digest].scene_id} and {scene.scene_id} render identically")
            self._by_digest[digest] = scene

    @classmethod
    def from_file(cls, path) -> "ScriptedStub":
        return cls(Fixture.from_file(path))

    # -- helpers ------------------------------------------------------------

    def _visible_box(self, crop: np.ndarray, color: tuple[int, int, int]):
        """Inclusive bounding box of crop pixels carrying the region color."""
        hit = (crop == np.array(color, dtype=np.uint8)).all(axis=2)
        ys, xs = np.nonzero(hit)
        if xs.size == 0:
            return None, hit
        return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())), hit

    @staticmethod
    def _label_names_phrase(label_norm: str, phrase_norm: str) -> bool:
        return label_norm == phrase_norm or label_norm.startswith(phrase_norm + " ")

    # -- Backends interface --------------------------------------------------

    def ground(self, image_png: bytes, query: str) -> str:
        self.calls["ground"] += 1
        image = image_from_png_bytes(image_png)
        digest = _image_digest(image)
        scene = self._by_digest.get(digest)
        if scene is None:
            raise StubMissError(f"no fixture scene matches image digest {digest[:12]}")
        if scene.grounder_fail:
            raise BackendUnavailableError(f"scripted grounder failure for scene {scene.scene_id}")
        return scene.grounder.get(query, "")

    def similarity(self, crop_png: bytes, phrase: str) -> SimilarityMap:
        self.calls["similarity"] += 1
        crop = image_from_png_bytes(crop_png)
        h, w = crop.shape[:2]
        acc = np.zeros((h, w), dtype=np.float64)
        target = phrase.strip().lower()
        for region in self.fixture.all_regions():
            if not self._label_names_phrase(region.label_norm, target):
                continue
            box, _ = self._visible_box(crop, region.color)
            if box is None:
                continue
            minx, miny, maxx, maxy = box
            cx = (minx + maxx + 1) / 2.0
            cy = (miny + maxy + 1) / 2.0
            sx = (maxx - minx + 1) / 4.0
            sy = (maxy - miny + 1) / 4.0
            xs = np.arange(w, dtype=np.float64) + 0.5 - cx
            ys = np.arange(h, dtype=np.float64) + 0.5 - cy
            d = xs[None, :] ** 2 / (2.0 * sx * sx) + ys[:, None] ** 2 / (2.0 * sy * sy)
            acc = np.maximum(acc, np.exp(-d))
        return SimilarityMap(width=w, height=h, values=tuple(float(v) for v in acc.reshape(-1)))

    def segment_points(self, crop_png: bytes, points: list[tuple[float, float]]) -> np.ndarray:
        self.calls["segment"] += 1
        crop = image_from_png_bytes(crop_png)
        h, w = crop.shape[:2]
        out = np.zeros((h, w), dtype=np.uint8)
        by_color = {r.color: r for r in self.fixture.all_regions()}
        for x, y in points:
            px = min(max(int(np.floor(x)), 0), w - 1)
            py = min(max(int(np.floor(y)), 0), h - 1)
            color = tuple(int(c) for c in crop[py, px])
            if color in by_color:
                hit = (crop == np.array(color, dtype=np.uint8)).all(axis=2)
                out |= hit.astype(np.uint8)
        return out

    def segment_text(self, crop_png: bytes, text: str) -> np.ndarray:
        self.calls["segment"] += 1
        crop = image_from_png_bytes(crop_png)
        h, w = crop.shape[:2]
        out = np.zeros((h, w), dtype=np.uint8)
        needle = text.strip().lower()
        if not needle:
            return out
        for region in self.fixture.all_regions():
            if needle in region.label_norm:
                hit = (crop == np.array(region.color, dtype=np.uint8)).all(axis=2)
                out |= hit.astype(np.uint8)
        return out

    def judge(self, image_png: bytes, prompt: str) -> str:
        self.calls["judge"] += 1
        for contains, text in self.fixture.judge_rules:
            if contains in prompt:
                return text
        if self.fixture.judge_default is not None:
            return self.fixture.judge_default
        if len(self.fixture.scenes) == 1 and self.fixture.scenes[0].judge_text is not None:
            return self.fixture.scenes[0].judge_text
        return ""
