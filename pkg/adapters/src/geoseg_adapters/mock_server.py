"""Deterministic mock backend speaking the four-endpoint wire protocol.

Serves grounder, matcher, segmenter, and judge from one fixture file so a
full pipeline can run against it over HTTP. Unknown queries and labels get
empty-result responses (not errors) to exercise downstream validity
fallbacks; an image digest no scene covers is a hard 422 because it means
the caller and the fixture disagree about the test setup.
"""
from __future__ import annotations

import base64
import io
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .scenes import (
    SceneSet,
    image_digest,
    render_scene,
    rle_encode,
    segment_by_points,
    segment_by_text,
    similarity_map,
)


def _decode_image(b64: str) -> np.ndarray:
    data = base64.b64decode(b64.encode("ascii"))
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


class MockBackend:
    """Request handling logic, separated from HTTP plumbing for testability."""

    def __init__(self, scene_set: SceneSet):
        self.scene_set = scene_set
        self._by_digest = {}
        for scene in scene_set.scenes:
            digest = image_digest(render_scene(scene))
            if digest in self._by_digest:
                raise ValueError(f"scenes render identically: {scene.scene_id}")
            self._by_digest[digest] = scene

    def ground(self, payload: dict) -> tuple[int, dict]:
        image = _decode_image(payload["image_png_b64"])
        query = str(payload["query"])
        scene = self._by_digest.get(image_digest(image))
        if scene is None:
            return 422, {"error": "unknown image digest; fixture does not cover this image"}
        if scene.grounder_fail:
            return 503, {"error": f"scripted grounder failure for scene {scene.scene_id}"}
        return 200, {"text": scene.grounder.get(query, "")}

    def similarity(self, payload: dict) -> tuple[int, dict]:
        crop = _decode_image(payload["image_png_b64"])
        phrase = str(payload["phrase"])
        acc = similarity_map(self.scene_set, crop, phrase)
        h, w = acc.shape
        return 200, {"width": int(w), "height": int(h), "values": [float(v) for v in acc.reshape(-1)]}

    def segment(self, payload: dict) -> tuple[int, dict]:
        crop = _decode_image(payload["image_png_b64"])
        prompt = payload["prompt"]
        kind = prompt.get("type")
        if kind == "points":
            mask = segment_by_points(self.scene_set, crop, prompt["points"])
        elif kind == "text":
            mask = segment_by_text(self.scene_set, crop, str(prompt["text"]))
        else:
            raise ValueError(f"unknown prompt type {kind!r}")
        return 200, {"mask_rle": rle_encode(mask)}

    def judge(self, payload: dict) -> tuple[int, dict]:
        _decode_image(payload["image_png_b64"])  # validate the overlay decodes
        prompt = str(payload["prompt"])
        return 200, {"text": self.scene_set.resolve_judge(prompt)}


ROUTES = {
    "/v1/ground": "ground",
    "/v1/similarity": "similarity",
    "/v1/segment": "segment",
    "/v1/judge": "judge",
}


def serve_mock(fixture_path, port: int = 0, host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Build (but do not start) a mock server bound to host:port."""
    backend = MockBackend(SceneSet.from_file(fixture_path))

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *_):
            pass

        def _reply(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/healthz":
                self._reply(200, {"ok": True, "role": "mock"})
            else:
                self._reply(404, {"error": f"unknown path {self.path}"})

        def do_POST(self):
            method = ROUTES.get(self.path)
            if method is None:
                self._reply(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length))
            except (ValueError, TypeError) as exc:
                self._reply(400, {"error": f"bad request body: {exc}"})
                return
            try:
                status, body = getattr(backend, method)(payload)
            except (KeyError, ValueError, TypeError) as exc:
                self._reply(400, {"error": f"bad request: {exc}"})
                return
            except Exception as exc:  # pragma: no cover - defensive
                self._reply(500, {"error": f"{type(exc).__name__}: {exc}"})
                return
            self._reply(status, body)

    return ThreadingHTTPServer((host, port), Handler)
