"""Thin wire-protocol wrappers around real models. Optional extras.

Each wrapper loads one model kind and serves its single endpoint (plus
/healthz). Model libraries are imported lazily; a missing dependency or
missing weights is a startup error, never an import-time one. These are
convenience shims for local experimentation - CI never requires them.

Supported kinds:
  grounder / judge  image-text-to-text models via transformers
  matcher           CLIPSeg similarity logits at the model's native map size
  segmenter         SAM point prompts; CLIPSeg thresholded for text prompts
"""
from __future__ import annotations

import base64
import io
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .scenes import rle_encode

KINDS = ("grounder", "matcher", "segmenter", "judge")

DEFAULT_GROUNDING_PROMPT = (
    "Locate the single region of this {width}x{height} image that answers the query: "
    "\"{query}\". Reply with JSON {{\"bbox_2d\": [x1, y1, x2, y2], \"label\": "
    "\"<concise phrase>\"}} using absolute pixel coordinates."
)


def _image_from_b64(b64: str) -> Image.Image:
    data = base64.b64decode(b64.encode("ascii"))
    return Image.open(io.BytesIO(data)).convert("RGB")


class StartupError(RuntimeError):
    pass


def _load_text_model(model_id: str):
    try:
        from transformers import pipeline
    except ImportError as exc:
        raise StartupError(f"transformers not installed: {exc}") from exc
    try:
        return pipeline("image-text-to-text", model=model_id)
    except Exception as exc:
        raise StartupError(f"could not load model {model_id!r}: {exc}") from exc


def _load_clipseg(model_id: str):
    try:
        import torch  # noqa: F401
        from transformers import CLIPSegForImageSegmentation, CLIPSegProcessor
    except ImportError as exc:
        raise StartupError(f"torch/transformers not installed: {exc}") from exc
    try:
        return (
            CLIPSegProcessor.from_pretrained(model_id),
            CLIPSegForImageSegmentation.from_pretrained(model_id),
        )
    except Exception as exc:
        raise StartupError(f"could not load model {model_id!r}: {exc}") from exc


def _load_sam(model_id: str):
    try:
        import torch  # noqa: F401
        from transformers import SamModel, SamProcessor
    except ImportError as exc:
        raise StartupError(f"torch/transformers not installed: {exc}") from exc
    try:
        return SamProcessor.from_pretrained(model_id), SamModel.from_pretrained(model_id)
    except Exception as exc:
        raise StartupError(f"could not load model {model_id!r}: {exc}") from exc


class RealBackend:
    def __init__(
        self,
        kind: str,
        model_id: str,
        text_model_id: str | None = None,
        grounding_prompt: str | None = None,
    ):
        if kind not in KINDS:
            raise StartupError(f"unknown kind {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.model_id = model_id
        self.grounding_prompt = grounding_prompt or DEFAULT_GROUNDING_PROMPT
        if kind in ("grounder", "judge"):
            self.pipe = _load_text_model(model_id)
        elif kind == "matcher":
            self.clipseg_processor, self.clipseg = _load_clipseg(model_id)
        elif kind == "segmenter":
            self.sam_processor, self.sam = _load_sam(model_id)
            # text prompts go through CLIPSeg; SAM itself is point/box prompted
            self.clipseg_processor, self.clipseg = _load_clipseg(
                text_model_id or "CIDAS/clipseg-rd64-refined"
            )

    def _chat(self, image: Image.Image, text: str) -> str:
        messages = [
            {
                "role": "user",
                "content": [{"type": "image", "image": image}, {"type": "text", "text": text}],
            }
        ]
        out = self.pipe(text=messages, max_new_tokens=256)
        reply = out[0]["generated_text"]
        if isinstance(reply, list):  # chat-style outputs carry the turn list
            reply = reply[-1].get("content", "")
        return str(reply)

    def ground(self, payload: dict) -> dict:
        image = _image_from_b64(payload["image_png_b64"])
        prompt = self.grounding_prompt.format(
            width=image.width, height=image.height, query=payload["query"]
        )
        return {"text": self._chat(image, prompt)}

    def judge(self, payload: dict) -> dict:
        image = _image_from_b64(payload["image_png_b64"])
        return {"text": self._chat(image, str(payload["prompt"]))}

    def _clipseg_logits(self, image: Image.Image, phrase: str) -> np.ndarray:
        import torch

        inputs = self.clipseg_processor(
            text=[phrase], images=[image], return_tensors="pt", padding=True
        )
        with torch.no_grad():
            logits = self.clipseg(**inputs).logits
        return logits.reshape(logits.shape[-2], logits.shape[-1]).cpu().numpy()

    def similarity(self, payload: dict) -> dict:
        image = _image_from_b64(payload["image_png_b64"])
        grid = self._clipseg_logits(image, str(payload["phrase"]))
        h, w = grid.shape
        return {"width": int(w), "height": int(h), "values": [float(v) for v in grid.reshape(-1)]}

    def segment(self, payload: dict) -> dict:
        import torch

        image = _image_from_b64(payload["image_png_b64"])
        prompt = payload["prompt"]
        if prompt.get("type") == "points":
            pts = [[[float(x), float(y)] for x, y in prompt["points"]]]
            inputs = self.sam_processor(image, input_points=pts, return_tensors="pt")
            with torch.no_grad():
                outputs = self.sam(**inputs)
            masks = self.sam_processor.image_processor.post_process_masks(
                outputs.pred_masks.cpu(),
                inputs["original_sizes"].cpu(),
                inputs["reshaped_input_sizes"].cpu(),
            )[0]
            # union over returned instances -> single binary mask
            union = masks.any(dim=0).any(dim=0).numpy().astype(np.uint8)
        elif prompt.get("type") == "text":
            grid = self._clipseg_logits(image, str(prompt["text"]))
            prob = 1.0 / (1.0 + np.exp(-grid))
            small = (prob >= 0.5).astype(np.uint8)
            union = np.asarray(
                Image.fromarray(small * 255, mode="L").resize(image.size, Image.NEAREST)
            )
            union = (union != 0).astype(np.uint8)
        else:
            raise ValueError(f"unknown prompt type {prompt.get('type')!r}")
        return {"mask_rle": rle_encode(union)}


def serve_real(
    kind: str,
    model_id: str,
    port: int = 0,
    host: str = "127.0.0.1",
    grounding_prompt: str | None = None,
) -> ThreadingHTTPServer:
    """Build (but do not start) a single-role real-model server."""
    backend = RealBackend(kind, model_id, grounding_prompt=grounding_prompt)
    route = {
        "grounder": "/v1/ground",
        "matcher": "/v1/similarity",
        "segmenter": "/v1/segment",
        "judge": "/v1/judge",
    }[kind]
    method = {"grounder": "ground", "matcher": "similarity", "segmenter": "segment", "judge": "judge"}[kind]

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *_):
            pass

        def _reply(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path == "/healthz":
                self._reply(200, {"ok": True, "role": kind})
            else:
                self._reply(404, {"error": f"unknown path {self.path}"})

        def do_POST(self):
            if self.path != route:
                self._reply(404, {"error": f"this server only handles {route}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length))
            except (ValueError, TypeError) as exc:
                self._reply(400, {"error": f"bad request body: {exc}"})
                return
            try:
                self._reply(200, getattr(backend, method)(payload))
            except (KeyError, ValueError, TypeError) as exc:
                self._reply(400, {"error": f"bad request: {exc}"})
            except Exception as exc:
                self._reply(500, {"error": f"{type(exc).__name__}: {exc}"})

    return ThreadingHTTPServer((host, port), Handler)
