"""Binary mask representation, RLE/PNG codecs, resizing, and overlay rendering.

Masks are numpy uint8 arrays of shape (H, W) holding exactly 0 or 1.
All functions here are pure and never mutate their inputs.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import CodecError

__all__ = [
    "RleMask",
    "validate_mask",
    "rle_encode",
    "rle_decode",
    "mask_area",
    "resize_nearest",
    "render_overlay",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "mask_to_png_bytes",
    "mask_from_png_bytes",
]

GT_COLOR = (0, 255, 0)
PRED_COLOR = (255, 0, 0)
BOTH_COLOR = (255, 255, 0)


@dataclass(frozen=True)
class RleMask:
    """Row-major run-length encoding, alternating runs starting with zeros.

    A leading 0 encodes a mask that starts with foreground. Runs after the
    first must be positive.
    """

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def to_json(self) -> dict:
        return {"size": [self.size[0], self.size[1]], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = tuple(int(c) for c in obj["counts"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CodecError(f"malformed RLE object: {exc}") from exc
        return cls(size=(int(h), int(w)), counts=counts)


def validate_mask(mask: np.ndarray) -> np.ndarray:
    """Check shape and binary content; returns the mask unchanged."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask elements must be exactly 0 or 1")
    return mask


def rle_encode(mask: np.ndarray) -> RleMask:
    """Encode a binary mask as alternating row-major run lengths."""
    validate_mask(mask)
    h, w = mask.shape
    flat = np.asarray(mask, dtype=np.uint8).reshape(-1)
    if flat.size == 0:
        return RleMask(size=(h, w), counts=())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0] == 1:
        runs = [0] + runs
    return RleMask(size=(h, w), counts=tuple(int(r) for r in runs))


def rle_decode(rle: RleMask) -> np.ndarray:
    """Reconstruct the unique mask whose row-major runs match the counts."""
    h, w = rle.size
    if h < 0 or w < 0:
        raise CodecError(f"negative size {rle.size}")
    counts = rle.counts
    if any(c < 0 for c in counts):
        raise CodecError("negative run length")
    if any(c == 0 for c in counts[1:]):
        raise CodecError("zero-length run after the first")
    total = sum(counts)
    if total != h * w:
        raise CodecError(f"run lengths sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for run in counts:
        if value:
            flat[pos : pos + run] = 1
        pos += run
        value ^= 1
    return flat.reshape(h, w)


def mask_area(mask: np.ndarray) -> int:
    """Number of foreground pixels."""
    validate_mask(mask)
    return int(mask.sum())


def resize_nearest(mask: np.ndarray, target_width: int, target_height: int) -> np.ndarray:
    """Nearest-neighbor resize; target (i,j) reads source (floor(i*hs/ht), floor(j*ws/wt))."""
    validate_mask(mask)
    if target_width < 1 or target_height < 1:
        raise ValueError(f"target dims must be >= 1, got {target_width}x{target_height}")
    src_h, src_w = mask.shape
    rows = (np.arange(target_height) * src_h) // target_height
    cols = (np.arange(target_width) * src_w) // target_width
    return mask[rows[:, None], cols[None, :]]


def render_overlay(image: np.ndarray, gt: np.ndarray, pred: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend gt/pred agreement colors over an RGB image.

    Per pixel: gt&pred -> yellow, gt only -> green, pred only -> red,
    neither -> untouched. blend = (1-alpha)*original + alpha*color, rounded
    half-up per channel.
    """
    validate_mask(gt)
    validate_mask(pred)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got shape {image.shape}")
    if image.shape[:2] != gt.shape or gt.shape != pred.shape:
        raise ValueError(
            f"dimension mismatch: image {image.shape[:2]}, gt {gt.shape}, pred {pred.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")

    color = np.zeros_like(image, dtype=np.float64)
    both = (gt == 1) & (pred == 1)
    gt_only = (gt == 1) & (pred == 0)
    pred_only = (gt == 0) & (pred == 1)
    color[both] = BOTH_COLOR
    color[gt_only] = GT_COLOR
    color[pred_only] = PRED_COLOR

    tinted = both | gt_only | pred_only
    out = image.astype(np.float64).copy()
    blended = (1.0 - alpha) * out + alpha * color
    out[tinted] = blended[tinted]
    return np.floor(out + 0.5).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read any PIL-supported image as an RGB uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a grayscale PNG mask; any nonzero value decodes as foreground."""
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    return (gray != 0).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    """Write the mask as 8-bit grayscale PNG, 0=background, 255=foreground."""
    validate_mask(mask)
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    validate_mask(mask)
    buf = io.BytesIO()
    Image.fromarray((mask * 255).astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        gray = np.asarray(img.convert("L"))
    return (gray != 0).astype(np.uint8)
