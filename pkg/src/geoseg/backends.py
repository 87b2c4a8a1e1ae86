"""Backend interfaces: grounding-output parsing, wire protocol, HTTP clients.

The four model roles (grounder, matcher, segmenter, judge) are reached over a
small JSON/HTTP protocol; rasters travel as base64 PNG. Endpoints with a
``stub://<fixture-path>`` URL are served by the in-process scripted stub
instead (see :mod:`geoseg.stub`).

Wire protocol (all POST, JSON bodies; errors are non-2xx with {"error": msg}):

  /v1/ground      {"image_png_b64", "query"}            -> {"text"}
  /v1/similarity  {"image_png_b64", "phrase"}           -> {"width","height","values"}
  /v1/segment     {"image_png_b64", "prompt"}           -> {"mask_rle": {"size","counts"}}
                   prompt: {"type":"points","points":[[x,y],...]} or {"type":"text","text":...}
  /v1/judge       {"image_png_b64", "prompt"}           -> {"text"}

Environment variables GEOSEG_GROUNDER_URL, GEOSEG_MATCHER_URL,
GEOSEG_SEGMENTER_URL, GEOSEG_JUDGE_URL override configured endpoint URLs.
"""
from __future__ import annotations

import base64
import io
import json
import re
from dataclasses import dataclass

import numpy as np
import requests
from PIL import Image

from .errors import BackendUnavailableError, GroundingParseError, ProtocolError
from .geometry import BBox, clamp_box
from .keypoints import SimilarityMap
from .raster import RleMask, rle_decode, rle_encode

__all__ = [
    "ROLES",
    "ENV_VARS",
    "GroundingResult",
    "BackendEndpoint",
    "parse_grounding",
    "extract_json_object",
    "Backends",
    "WireBackends",
    "make_backends",
    "image_to_png_bytes",
    "image_from_png_bytes",
    "png_b64",
    "png_from_b64",
    "validate_similarity_response",
    "validate_segment_response",
    "validate_text_response",
    "DEFAULT_GROUNDING_PROMPT",
]

ROLES = ("grounder", "matcher", "segmenter", "judge")
ENV_VARS = {
    "grounder": "GEOSEG_GROUNDER_URL",
    "matcher": "GEOSEG_MATCHER_URL",
    "segmenter": "GEOSEG_SEGMENTER_URL",
    "judge": "GEOSEG_JUDGE_URL",
}

DEFAULT_GROUNDING_PROMPT = (
    "Locate the single region of this {width}x{height} image that answers the query: "
    "\"{query}\". Reply with JSON {{\"bbox_2d\": [x1, y1, x2, y2], \"label\": "
    "\"<concise phrase>\"}} using absolute pixel coordinates."
)


@dataclass(frozen=True)
class GroundingResult:
    box: BBox
    phrase: str


@dataclass(frozen=True)
class BackendEndpoint:
    role: str
    url: str
    timeout: float = 30.0
    retry_count: int = 1

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {self.timeout}")
        if self.retry_count < 0:
            raise ValueError(f"retry_count must be >= 0, got {self.retry_count}")


# ---------------------------------------------------------------------------
# raster <-> PNG <-> base64

def image_to_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    if image.ndim == 2:
        Image.fromarray(image.astype(np.uint8), mode="L").save(buf, format="PNG")
    else:
        Image.fromarray(image.astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def png_b64(png: bytes) -> str:
    return base64.b64encode(png).decode("ascii")


def png_from_b64(value: str) -> bytes:
    return base64.b64decode(value.encode("ascii"))


# ---------------------------------------------------------------------------
# grounding-output parsing

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
# standalone integers only; digits glued to identifiers (bbox_2d) don't count
_INT_RE = re.compile(r"(?<![A-Za-z_\d.])-?\d+(?![A-Za-z_\d.])")


def extract_json_object(text: str, required_keys: tuple[str, ...]) -> dict | None:
    """First JSON object carrying the required keys, fenced blocks searched first."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)]
    candidates.append(text)
    decoder = json.JSONDecoder()
    for chunk in candidates:
        for start in range(len(chunk)):
            if chunk[start] != "{":
                continue
            try:
                obj, _ = decoder.raw_decode(chunk[start:])
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict) and all(k in obj for k in required_keys):
                return obj
    return None


def parse_grounding(raw_text: str, width: int, height: int, fallback_phrase: str | None = None) -> GroundingResult:
    """Recover (box, phrase) from a grounder's textual response.

    Primary path: the first JSON object with "bbox_2d" (4 numbers) and
    "label" (non-empty string). Fallback: the first 4 integers in the text
    form the box and ``fallback_phrase`` (normally the query) is the phrase.
    The box is swap/clamp-canonicalized against the image bounds.
    """
    obj = extract_json_object(raw_text or "", ("bbox_2d", "label"))
    if obj is not None:
        coords = obj["bbox_2d"]
        label = obj["label"]
        if (
            isinstance(coords, list)
            and len(coords) == 4
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in coords)
        ):
            phrase = label.strip() if isinstance(label, str) and label.strip() else (fallback_phrase or "").strip()
            if phrase:
                box = clamp_box(BBox(*[float(v) for v in coords]), width, height)
                return GroundingResult(box=box, phrase=phrase)

    ints = _INT_RE.findall(raw_text or "")
    if len(ints) >= 4:
        phrase = (fallback_phrase or "").strip()
        if phrase:
            box = clamp_box(BBox(*[float(v) for v in ints[:4]]), width, height)
            return GroundingResult(box=box, phrase=phrase)
    raise GroundingParseError(f"no bounding box recoverable from grounder output: {raw_text!r:.200}")


# ---------------------------------------------------------------------------
# response validation (shared by the client and conformance tests)

def validate_text_response(obj) -> str:
    if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
        raise ProtocolError(f"expected {{'text': str}}, got {obj!r:.200}")
    return obj["text"]


def validate_similarity_response(obj) -> SimilarityMap:
    if not isinstance(obj, dict):
        raise ProtocolError("similarity response is not an object")
    try:
        width = int(obj["width"])
        height = int(obj["height"])
        values = obj["values"]
        if not isinstance(values, list):
            raise TypeError("values must be a list")
        return SimilarityMap(width=width, height=height, values=tuple(float(v) for v in values))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed similarity response: {exc}") from exc


def validate_segment_response(obj) -> np.ndarray:
    if not isinstance(obj, dict) or "mask_rle" not in obj:
        raise ProtocolError("segment response lacks mask_rle")
    try:
        return rle_decode(RleMask.from_json(obj["mask_rle"]))
    except Exception as exc:
        raise ProtocolError(f"malformed mask_rle: {exc}") from exc


# ---------------------------------------------------------------------------
# clients

class Backends:
    """Role-dispatch interface the pipeline talks to."""

    def ground(self, image_png: bytes, query: str) -> str:
        raise NotImplementedError

    def similarity(self, crop_png: bytes, phrase: str) -> SimilarityMap:
        raise NotImplementedError

    def segment_points(self, crop_png: bytes, points: list[tuple[float, float]]) -> np.ndarray:
        raise NotImplementedError

    def segment_text(self, crop_png: bytes, text: str) -> np.ndarray:
        raise NotImplementedError

    def judge(self, image_png: bytes, prompt: str) -> str:
        raise NotImplementedError


class WireBackends(Backends):
    """HTTP client speaking the wire protocol, one endpoint per role."""

    def __init__(self, endpoints: dict[str, BackendEndpoint], session: requests.Session | None = None):
        self.endpoints = endpoints
        self.session = session or requests.Session()

    def _post(self, role: str, path: str, payload: dict) -> dict:
        if role not in self.endpoints:
            raise BackendUnavailableError(f"no endpoint configured for role {role!r}")
        ep = self.endpoints[role]
        url = ep.url.rstrip("/") + path
        last_exc: Exception | None = None
        for _ in range(ep.retry_count + 1):
            try:
                resp = self.session.post(url, json=payload, timeout=ep.timeout)
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = BackendUnavailableError(f"{role} returned {resp.status_code}")
                continue
            if resp.status_code >= 300:
                try:
                    message = resp.json().get("error", resp.text)
                except ValueError:
                    message = resp.text
                raise ProtocolError(f"{role} rejected the request ({resp.status_code}): {message}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{role} returned a non-JSON body") from exc
        raise BackendUnavailableError(f"{role} unreachable at {url}: {last_exc}")

    def ground(self, image_png: bytes, query: str) -> str:
        obj = self._post("grounder", "/v1/ground", {"image_png_b64": png_b64(image_png), "query": query})
        return validate_text_response(obj)

    def similarity(self, crop_png: bytes, phrase: str) -> SimilarityMap:
        obj = self._post("matcher", "/v1/similarity", {"image_png_b64": png_b64(crop_png), "phrase": phrase})
        return validate_similarity_response(obj)

    def segment_points(self, crop_png: bytes, points: list[tuple[float, float]]) -> np.ndarray:
        payload = {
            "image_png_b64": png_b64(crop_png),
            "prompt": {"type": "points", "points": [[float(x), float(y)] for x, y in points]},
        }
        obj = self._post("segmenter", "/v1/segment", payload)
        return validate_segment_response(obj)

    def segment_text(self, crop_png: bytes, text: str) -> np.ndarray:
        payload = {"image_png_b64": png_b64(crop_png), "prompt": {"type": "text", "text": text}}
        obj = self._post("segmenter", "/v1/segment", payload)
        return validate_segment_response(obj)

    def judge(self, image_png: bytes, prompt: str) -> str:
        obj = self._post("judge", "/v1/judge", {"image_png_b64": png_b64(image_png), "prompt": prompt})
        return validate_text_response(obj)


class _RoutedBackends(Backends):
    """Per-role dispatch when stub and wire endpoints are mixed."""

    def __init__(self, by_role: dict[str, Backends]):
        self.by_role = by_role

    def ground(self, image_png: bytes, query: str) -> str:
        return self.by_role["grounder"].ground(image_png, query)

    def similarity(self, crop_png: bytes, phrase: str) -> SimilarityMap:
        return self.by_role["matcher"].similarity(crop_png, phrase)

    def segment_points(self, crop_png: bytes, points: list[tuple[float, float]]) -> np.ndarray:
        return self.by_role["segmenter"].segment_points(crop_png, points)

    def segment_text(self, crop_png: bytes, text: str) -> np.ndarray:
        return self.by_role["segmenter"].segment_text(crop_png, text)

    def judge(self, image_png: bytes, prompt: str) -> str:
        return self.by_role["judge"].judge(image_png, prompt)


def make_backends(endpoints: dict[str, BackendEndpoint]) -> Backends:
    """Build a backend set; stub:// URLs load the in-process scripted stub."""
    from .stub import ScriptedStub  # local import to avoid a cycle

    wire_eps = {r: ep for r, ep in endpoints.items() if not ep.url.startswith("stub://")}
    if len(wire_eps) == len(endpoints):
        return WireBackends(wire_eps)

    stubs: dict[str, ScriptedStub] = {}
    by_role: dict[str, Backends] = {}
    wire = WireBackends(wire_eps) if wire_eps else None
    for role, ep in endpoints.items():
        if ep.url.startswith("stub://"):
            path = ep.url[len("stub://") :]
            if path not in stubs:
                stubs[path] = ScriptedStub.from_file(path)
            by_role[role] = stubs[path]
        else:
            by_role[role] = wire
    if not wire_eps and len(stubs) == 1:
        return next(iter(stubs.values()))
    return _RoutedBackends(by_role)


def serialize_segment_response(mask: np.ndarray) -> dict:
    """Response body for /v1/segment given a binary mask."""
    return {"mask_rle": rle_encode(mask).to_json()}
