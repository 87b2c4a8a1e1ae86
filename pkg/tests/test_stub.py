import numpy as np
import pytest

from geoseg.backends import image_to_png_bytes
from geoseg.errors import BackendUnavailableError, StubMissError
from geoseg.keypoints import extract_keypoints
from geoseg.stub import Fixture, ScriptedStub, palette_color, render_scene

from conftest import FAULT_FIXTURE, SUITE_FIXTURE


@pytest.fixture(scope="module")
def stub():
    return ScriptedStub.from_file(SUITE_FIXTURE)


def scene_png(stub, scene_id):
    scene = next(s for s in stub.fixture.scenes if s.scene_id == scene_id)
    return scene, image_to_png_bytes(render_scene(scene))


def test_palette_is_distinct_and_nonblack():
    colors = [palette_color(i) for i in range(64)]
    assert len(set(colors)) == 64
    assert (0, 0, 0) not in colors


def test_render_paints_in_order(stub):
    scene, _ = scene_png(stub, "plaza")
    canvas = render_scene(scene)
    marker, plaza = scene.regions
    # the plaza bar is painted over the marker's middle columns
    assert tuple(canvas[44, 44]) == plaza.color
    assert tuple(canvas[44, 41]) == marker.color
    assert tuple(canvas[0, 0]) == (0, 0, 0)


class TestGrounder:
    def test_scripted_answer(self, stub):
        _, png = scene_png(stub, "lake")
        text = stub.ground(png, "find the blue lake")
        assert "bbox_2d" in text

    def test_unknown_query_is_empty_result(self, stub):
        _, png = scene_png(stub, "lake")
        assert stub.ground(png, "unscripted question") == ""

    def test_unknown_digest_is_stub_miss(self, stub):
        foreign = np.full((8, 8, 3), 200, dtype=np.uint8)
        with pytest.raises(StubMissError):
            stub.ground(image_to_png_bytes(foreign), "find the blue lake")

    def test_deterministic(self, stub):
        _, png = scene_png(stub, "lake")
        assert stub.ground(png, "find the blue lake") == stub.ground(png, "find the blue lake")

    def test_scripted_failure(self):
        fault = ScriptedStub.from_file(FAULT_FIXTURE)
        scene, png = scene_png(fault, "silo")
        with pytest.raises(BackendUnavailableError):
            fault.ground(png, "the silo")


class TestMatcher:
    def test_peak_on_visible_region_center(self, stub):
        scene, png = scene_png(stub, "lake")
        sim = stub.similarity(png, "blue lake")
        assert sim.width == scene.width and sim.height == scene.height
        grid = sim.grid()
        i, j = np.unravel_index(np.argmax(grid), grid.shape)
        # lake spans [30,66)x[36,68); its center is (48, 52)
        assert abs((j + 0.5) - 48.0) <= 1.0
        assert abs((i + 0.5) - 52.0) <= 1.0

    def test_no_matching_label_gives_zero_map(self, stub):
        _, png = scene_png(stub, "lake")
        sim = stub.similarity(png, "volcano")
        assert max(sim.values) == 0.0
        kps = extract_keypoints(sim, 96, 96, k=5, tau=0.3, radius=1)
        assert len(kps) == 0

    def test_exact_label_match_only(self, stub):
        _, png = scene_png(stub, "bignamedlake")
        assert max(stub.similarity(png, "blue lake").values) == 0.0
        assert max(stub.similarity(png, "big blue lake").values) > 0.0

    def test_two_peaks_for_two_qualified_ponds(self, stub):
        scene, png = scene_png(stub, "twoponds")
        grid = stub.similarity(png, "pond").grid()
        # one bump per pond, peaks at the region centers (22, 50) and (74, 50)
        west = grid[:, :48]
        east = grid[:, 48:]
        wi, wj = np.unravel_index(np.argmax(west), west.shape)
        ei, ej = np.unravel_index(np.argmax(east), east.shape)
        assert abs((wj + 0.5) - 22.0) <= 1.0 and abs((wi + 0.5) - 50.0) <= 1.0
        assert abs((ej + 48 + 0.5) - 74.0) <= 1.0 and abs((ei + 0.5) - 50.0) <= 1.0
        assert west.max() == pytest.approx(east.max())
        # a leading-word qualifier does not match: "pond west" vs "west pond"
        assert max(stub.similarity(png, "west").values) == 0.0


class TestSegmenter:
    def test_point_inside_region(self, stub):
        scene, png = scene_png(stub, "lake")
        mask = stub.segment_points(png, [(48.0, 52.0)])
        assert mask.sum() == 36 * 32
        assert mask[52, 48] == 1 and mask[0, 0] == 0

    def test_point_on_background(self, stub):
        _, png = scene_png(stub, "lake")
        assert stub.segment_points(png, [(2.0, 2.0)]).sum() == 0

    def test_text_contains_match(self, stub):
        _, png = scene_png(stub, "bignamedlake")
        assert stub.segment_text(png, "blue lake").sum() == 36 * 32

    def test_text_union(self, stub):
        _, png = scene_png(stub, "parking")
        # "dot" matches both "dot" and "dotted parking lot"
        assert stub.segment_text(png, "dot").sum() == 60 * 60

    def test_text_no_match_is_empty(self, stub):
        _, png = scene_png(stub, "lake")
        assert stub.segment_text(png, "harbor").sum() == 0


def test_judge_rules(stub):
    png = image_to_png_bytes(np.zeros((4, 4, 3), dtype=np.uint8))
    assert '"faithfulness": 4' in stub.judge(png, "Evaluate the segmentation quality of a lake ...")
    assert '"faithfulness": 2' in stub.judge(png, "quality of a runway here")
    assert '"faithfulness": 5' in stub.judge(png, "something else entirely")


def test_identical_requests_identical_responses(stub):
    scene, png = scene_png(stub, "ponddeck")
    a = stub.similarity(png, "pond")
    b = stub.similarity(png, "pond")
    assert a == b
    ma = stub.segment_text(png, "pond")
    mb = stub.segment_text(png, "pond")
    assert (ma == mb).all()


def test_fixture_validation():
    with pytest.raises(ValueError):
        Fixture.from_json(
            {"width": 10, "height": 10, "regions": [{"label": "a", "box": [0, 0, 20, 5]}]}
        )
    with pytest.raises(ValueError):
        Fixture.from_json(
            {
                "width": 10,
                "height": 10,
                "regions": [
                    {"label": "a", "box": [0, 0, 5, 5]},
                    {"label": "a", "box": [5, 5, 9, 9]},
                ],
            }
        )


def test_single_scene_file_shape():
    fx = Fixture.from_json(
        {"width": 8, "height": 8, "regions": [{"label": "a", "box": [1, 1, 4, 4]}], "judge": "ok"}
    )
    assert len(fx.scenes) == 1
    stub = ScriptedStub(fx)
    assert stub.judge(b"", "anything") == "ok"
