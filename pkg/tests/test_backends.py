import numpy as np
import pytest

from geoseg.backends import (
    BackendEndpoint,
    extract_json_object,
    image_from_png_bytes,
    image_to_png_bytes,
    parse_grounding,
    png_b64,
    png_from_b64,
    serialize_segment_response,
    validate_segment_response,
    validate_similarity_response,
    validate_text_response,
)
from geoseg.errors import GroundingParseError, ProtocolError


class TestParseGrounding:
    def test_plain_json(self):
        text = 'Here it is: {"bbox_2d": [100, 120, 200, 260], "label": "blue lake"} done.'
        out = parse_grounding(text, 810, 810)
        assert out.box.as_list() == [100, 120, 200, 260]
        assert out.phrase == "blue lake"

    def test_reversed_coordinates_swapped(self):
        out = parse_grounding('{"bbox_2d": [200, 260, 100, 120], "label": "pond"}', 810, 810)
        assert out.box.as_list() == [100, 120, 200, 260]

    def test_nothing_extractable(self):
        with pytest.raises(GroundingParseError):
            parse_grounding("no target present", 810, 810)

    def test_fenced_block_preferred(self):
        text = (
            'ignore {"bbox_2d": [1, 1, 2, 2], "label": "wrong"} this\n'
            "```json\n"
            '{"bbox_2d": [10, 10, 20, 20], "label": "right"}\n'
            "```\n"
        )
        out = parse_grounding(text, 100, 100)
        assert out.phrase == "right"
        assert out.box.as_list() == [10, 10, 20, 20]

    def test_integer_fallback_uses_query(self):
        text = "top-left (30, 40), bottom-right (90, 120)"
        out = parse_grounding(text, 200, 200, fallback_phrase="the barn")
        assert out.box.as_list() == [30, 40, 90, 120]
        assert out.phrase == "the barn"

    def test_integer_fallback_without_phrase_fails(self):
        with pytest.raises(GroundingParseError):
            parse_grounding("coords 1 2 3 4", 10, 10)

    def test_clamps_against_image(self):
        out = parse_grounding('{"bbox_2d": [-10, 5, 900, 50], "label": "strip"}', 810, 810)
        assert out.box.as_list() == [0, 5, 810, 50]

    def test_float_coordinates_accepted(self):
        out = parse_grounding('{"bbox_2d": [1.5, 2.5, 9.5, 8.5], "label": "x"}', 100, 100)
        assert out.box.as_list() == [1.5, 2.5, 9.5, 8.5]

    def test_empty_label_falls_back(self):
        out = parse_grounding('{"bbox_2d": [1, 2, 9, 8], "label": "  "}', 100, 100, fallback_phrase="q")
        assert out.phrase == "q"

    def test_nested_braces_in_prose(self):
        text = 'notes {"a": 1} then {"bbox_2d": [5, 5, 15, 15], "label": "hut {small}"}'
        out = parse_grounding(text, 100, 100)
        assert out.phrase == "hut {small}"


def test_extract_json_object_scans_candidates():
    assert extract_json_object("{broken {\"k\": 1}", ("k",)) == {"k": 1}
    assert extract_json_object("nothing here", ("k",)) is None


def test_png_round_trips():
    rng = np.random.default_rng(11)
    image = rng.integers(0, 256, size=(7, 9, 3), dtype=np.uint8)
    again = image_from_png_bytes(image_to_png_bytes(image))
    assert (again == image).all()
    data = image_to_png_bytes(image)
    assert png_from_b64(png_b64(data)) == data


class TestResponseValidation:
    def test_text(self):
        assert validate_text_response({"text": "hi"}) == "hi"
        with pytest.raises(ProtocolError):
            validate_text_response({"message": "hi"})

    def test_similarity(self):
        m = validate_similarity_response({"width": 2, "height": 1, "values": [0.1, 0.9]})
        assert m.width == 2 and m.height == 1
        with pytest.raises(ProtocolError):
            validate_similarity_response({"width": 2, "height": 2, "values": [0.1]})
        with pytest.raises(ProtocolError):
            validate_similarity_response({"width": 2, "values": [0.1, 0.2]})

    def test_segment_round_trip(self):
        mask = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        body = serialize_segment_response(mask)
        assert (validate_segment_response(body) == mask).all()
        with pytest.raises(ProtocolError):
            validate_segment_response({"mask_rle": {"size": [2, 2], "counts": [3]}})


def test_endpoint_validation():
    with pytest.raises(ValueError):
        BackendEndpoint(role="oracle", url="http://x")
    with pytest.raises(ValueError):
        BackendEndpoint(role="grounder", url="http://x", timeout=0)
    with pytest.raises(ValueError):
        BackendEndpoint(role="grounder", url="http://x", retry_count=-1)
