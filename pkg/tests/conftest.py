"""Shared fixtures: materialize the scene suite into images, manifests, GT masks."""
import json
from pathlib import Path

import numpy as np
import pytest

from geoseg.bench import BenchmarkSample, write_manifest
from geoseg.raster import save_image, save_mask
from geoseg.stub import Fixture, render_scene

FIXTURES_DIR = Path(__file__).resolve().parents[1] / "fixtures"
SUITE_FIXTURE = FIXTURES_DIR / "suite.json"
FAULT_FIXTURE = FIXTURES_DIR / "fault.json"


def rect_mask(width, height, box):
    mask = np.zeros((height, width), dtype=np.uint8)
    x1, y1, x2, y2 = box
    mask[y1:y2, x1:x2] = 1
    return mask


# the ten-sample batch over the shared scene suite: per sample the scene id,
# query, expected fusion branch, and expected final mask (None = all-zero)
SUITE_SAMPLES = [
    ("s01", "lake", "find the blue lake", "intersection", [30, 36, 66, 68], "lake", "urban", 1),
    ("s02", "lake", "locate the large water body", "intersection", [30, 36, 66, 68], "lake", "urban", 1),
    ("s03", "plaza", "the marker in the big plaza", "fallback_A", [43, 20, 46, 76], "plaza", "urban", 2),
    ("s04", "bignamedlake", "the lake", "fallback_B", [30, 36, 66, 68], "lake", "nature", 1),
    ("s05", "parking", "the dot", "fallback_B", [20, 20, 80, 80], "parking lot", "urban", 2),
    ("s06", "greenhouse", "find the pond", "empty", None, "pond", "rural", 1),
    ("s07", "tower", "where is the stadium", "empty", None, "stadium", "traffic", 3),
    ("s08", "ponddeck", "the pond by the deck", "intersection", None, "pond", "rural", 2),
    ("s09", "runway", "the long runway", "intersection", [10, 60, 90, 80], "runway", "traffic", 1),
    ("s10", "warehouses", "the red warehouse", "intersection", [12, 12, 36, 30], "warehouse", "urban", 1),
]


def materialize_suite(root: Path):
    """Render scene images, GT masks, and the batch manifest under root.

    Returns (manifest_path, expected) where expected maps sample_id to
    (branch, mask ndarray).
    """
    fixture = Fixture.from_file(SUITE_FIXTURE)
    scenes = {s.scene_id: s for s in fixture.scenes}
    images_dir = root / "images"
    gt_dir = root / "gt"
    images_dir.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)

    for scene in fixture.scenes:
        save_image(render_scene(scene), images_dir / f"{scene.scene_id}.png")

    samples = []
    expected = {}
    for sid, scene_id, query, branch, gt_box, class_name, scenario, level in SUITE_SAMPLES:
        scene = scenes[scene_id]
        mask = (
            rect_mask(scene.width, scene.height, gt_box)
            if gt_box is not None
            else np.zeros((scene.height, scene.width), dtype=np.uint8)
        )
        save_mask(mask, gt_dir / f"{sid}.png")
        samples.append(
            BenchmarkSample(
                sample_id=sid,
                image=f"images/{scene_id}.png",
                query=query,
                mask=f"gt/{sid}.png",
                scenario=scenario,
                level=level,
                class_name=class_name,
            )
        )
        expected[sid] = (branch, mask)
    manifest = root / "manifest.jsonl"
    write_manifest(samples, manifest)
    return manifest, expected


@pytest.fixture()
def suite(tmp_path):
    manifest, expected = materialize_suite(tmp_path)
    return {
        "root": tmp_path,
        "manifest": manifest,
        "expected": expected,
        "fixture_path": SUITE_FIXTURE,
    }


def stub_config(fixture_path, **overrides):
    from geoseg.backends import BackendEndpoint
    from geoseg.pipeline import PipelineConfig

    endpoints = {
        role: BackendEndpoint(role=role, url=f"stub://{fixture_path}")
        for role in ("grounder", "matcher", "segmenter", "judge")
    }
    return PipelineConfig(endpoints=endpoints, **overrides)


def write_stub_config_file(path: Path, fixture_path) -> Path:
    cfg = {
        "endpoints": {
            role: {"url": f"stub://{fixture_path}"}
            for role in ("grounder", "matcher", "segmenter", "judge")
        }
    }
    path.write_text(json.dumps(cfg))
    return path
