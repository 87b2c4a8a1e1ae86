"""End-to-end orchestration: ground, refine, dual-route segment, fuse.

run_sample executes one (image, query) pair against a backend set and
returns the fused canvas mask plus a full trace of every intermediate
artifact. run_batch fans samples out over a bounded thread pool, isolates
per-sample failures, and optionally serves repeats from a content-addressed
cache keyed by (image bytes, query, config).
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backends as be
from .errors import GeosegError, GroundingDegenerateError, GroundingParseError
from .fusion import (
    ROUTE_POINT,
    ROUTE_TEXT,
    FusionParams,
    RouteOutput,
    assess_validity,
    fuse,
)
from .geometry import BBox, RefineParams, crop_region, int_grid, paste_mask, refine_box
from .keypoints import KeypointSet, extract_keypoints
from .raster import rle_encode, save_mask

__all__ = [
    "PipelineConfig",
    "PipelineTrace",
    "BatchItem",
    "BatchResult",
    "run_sample",
    "run_batch",
    "load_batch_manifest",
    "config_digest",
    "trace_to_dict",
    "trace_from_dict",
]

BRANCH_ERROR = "error"


@dataclass(frozen=True)
class KeypointConfig:
    k: int = 5
    tau: float = 0.3
    radius: int | None = None  # None -> scale with map resolution


@dataclass
class PipelineConfig:
    refine: RefineParams = field(default_factory=RefineParams)
    keypoints: KeypointConfig = field(default_factory=KeypointConfig)
    fusion: FusionParams = field(default_factory=FusionParams)
    endpoints: dict[str, be.BackendEndpoint] = field(default_factory=dict)
    fallback_full_image: bool = True
    parallel_routes: bool = True
    cache_dir: str | None = None
    workers: int | None = None  # None -> cpu count

    def to_dict(self) -> dict:
        return {
            "refine": {"alpha": self.refine.alpha, "beta": self.refine.beta},
            "keypoints": {
                "k": self.keypoints.k,
                "tau": self.keypoints.tau,
                "radius": self.keypoints.radius,
            },
            "fusion": {"gamma": self.fusion.gamma},
            "endpoints": {
                role: {"url": ep.url, "timeout": ep.timeout, "retry_count": ep.retry_count}
                for role, ep in sorted(self.endpoints.items())
            },
            "fallback_full_image": self.fallback_full_image,
            "parallel_routes": self.parallel_routes,
            "cache_dir": self.cache_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        refine = obj.get("refine", {})
        kp = obj.get("keypoints", {})
        fusion = obj.get("fusion", {})
        endpoints = {
            role: be.BackendEndpoint(
                role=role,
                url=spec["url"],
                timeout=float(spec.get("timeout", 30.0)),
                retry_count=int(spec.get("retry_count", 1)),
            )
            for role, spec in obj.get("endpoints", {}).items()
        }
        return cls(
            refine=RefineParams(
                alpha=float(refine.get("alpha", 0.2)), beta=float(refine.get("beta", 0.1))
            ),
            keypoints=KeypointConfig(
                k=int(kp.get("k", 5)),
                tau=float(kp.get("tau", 0.3)),
                radius=None if kp.get("radius") is None else int(kp["radius"]),
            ),
            fusion=FusionParams(gamma=float(fusion.get("gamma", 0.01))),
            endpoints=endpoints,
            fallback_full_image=bool(obj.get("fallback_full_image", True)),
            parallel_routes=bool(obj.get("parallel_routes", True)),
            cache_dir=obj.get("cache_dir"),
            workers=None if obj.get("workers") is None else int(obj["workers"]),
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def apply_env(self, environ=None) -> "PipelineConfig":
        """Override endpoint URLs from GEOSEG_*_URL environment variables."""
        environ = os.environ if environ is None else environ
        for role, var in be.ENV_VARS.items():
            url = environ.get(var)
            if url:
                current = self.endpoints.get(role)
                self.endpoints[role] = be.BackendEndpoint(
                    role=role,
                    url=url,
                    timeout=current.timeout if current else 30.0,
                    retry_count=current.retry_count if current else 1,
                )
        return self


def config_digest(config: PipelineConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class PipelineTrace:
    sample_id: str
    query: str
    image_size: tuple[int, int]  # (W, H)
    grounder_text: str | None = None
    box: list[float] | None = None
    refined_box: list[float] | None = None
    roi: list[int] | None = None
    phrase: str | None = None
    keypoints: list[list[float]] = field(default_factory=list)
    keypoint_scores: list[float] = field(default_factory=list)
    route_masks: dict = field(default_factory=dict)  # route -> RLE json or None
    validity: dict = field(default_factory=dict)
    fusion_branch: str | None = None
    fallback_full_image: bool = False
    errors: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timings_ms: dict = field(default_factory=dict)


def trace_to_dict(trace: PipelineTrace, include_timings: bool = True) -> dict:
    out = {
        "sample_id": trace.sample_id,
        "query": trace.query,
        "image_size": list(trace.image_size),
        "grounder_text": trace.grounder_text,
        "box": trace.box,
        "refined_box": trace.refined_box,
        "roi": trace.roi,
        "phrase": trace.phrase,
        "keypoints": trace.keypoints,
        "keypoint_scores": trace.keypoint_scores,
        "route_masks": trace.route_masks,
        "validity": trace.validity,
        "fusion_branch": trace.fusion_branch,
        "fallback_full_image": trace.fallback_full_image,
        "errors": trace.errors,
        "config": trace.config,
    }
    if include_timings:
        out["timings_ms"] = trace.timings_ms
    return out


def trace_from_dict(obj: dict) -> PipelineTrace:
    return PipelineTrace(
        sample_id=obj["sample_id"],
        query=obj["query"],
        image_size=tuple(obj["image_size"]),
        grounder_text=obj.get("grounder_text"),
        box=obj.get("box"),
        refined_box=obj.get("refined_box"),
        roi=obj.get("roi"),
        phrase=obj.get("phrase"),
        keypoints=obj.get("keypoints", []),
        keypoint_scores=obj.get("keypoint_scores", []),
        route_masks=obj.get("route_masks", {}),
        validity=obj.get("validity", {}),
        fusion_branch=obj.get("fusion_branch"),
        fallback_full_image=obj.get("fallback_full_image", False),
        errors=obj.get("errors", []),
        config=obj.get("config", {}),
        timings_ms=obj.get("timings_ms", {}),
    )


def _ground_with_retry(backend: be.Backends, image_png: bytes, query: str, width: int, height: int, trace: PipelineTrace):
    """Parse the grounder answer, retrying the call once on parse failure."""
    last_exc = None
    for attempt in range(2):
        raw = backend.ground(image_png, query)
        trace.grounder_text = raw
        try:
            return be.parse_grounding(raw, width, height, fallback_phrase=query)
        except (GroundingParseError, GroundingDegenerateError) as exc:
            last_exc = exc
            trace.errors.append(f"grounding attempt {attempt + 1}: {exc}")
    raise last_exc


def run_sample(
    image: np.ndarray,
    query: str,
    config: PipelineConfig,
    backend: be.Backends,
    sample_id: str = "sample",
) -> tuple[np.ndarray, PipelineTrace]:
    """Execute the three-stage pipeline on one image/query pair.

    Backend transport failures yield an all-zero mask with branch tag
    "error"; grounding failures fall back to the full-image RoI with the
    query as phrase when the policy allows it.
    """
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    height, width = image.shape[:2]
    trace = PipelineTrace(
        sample_id=sample_id,
        query=query,
        image_size=(width, height),
        config=config.to_dict(),
    )
    timings = trace.timings_ms
    image_png = be.image_to_png_bytes(image)

    t0 = time.perf_counter()
    try:
        try:
            grounding = _ground_with_retry(backend, image_png, query, width, height, trace)
            box = grounding.box
            phrase = grounding.phrase
        except (GroundingParseError, GroundingDegenerateError) as exc:
            if not config.fallback_full_image:
                raise
            box = None
            phrase = query.strip()
            trace.fallback_full_image = True
            trace.errors.append(f"grounding fallback to full image: {exc}")
        timings["ground_ms"] = (time.perf_counter() - t0) * 1000.0

        if box is None:
            refined = BBox(0.0, 0.0, float(width), float(height))
        else:
            trace.box = box.as_list()
            refined = refine_box(box, width, height, config.refine)
        trace.refined_box = refined.as_list()
        trace.phrase = phrase
        roi = int_grid(refined)
        trace.roi = list(roi)
        roi_box = BBox(*[float(v) for v in roi])
        crop = crop_region(image, roi_box)
        crop_h, crop_w = crop.shape[:2]
        crop_png = be.image_to_png_bytes(crop)

        def route_point() -> tuple[RouteOutput, KeypointSet]:
            sim = backend.similarity(crop_png, phrase)
            kps = extract_keypoints(
                sim,
                crop_width=crop_w,
                crop_height=crop_h,
                k=config.keypoints.k,
                tau=config.keypoints.tau,
                radius=config.keypoints.radius,
            )
            if len(kps) == 0:
                crop_mask = np.zeros((crop_h, crop_w), dtype=np.uint8)
            else:
                crop_mask = backend.segment_points(crop_png, list(kps.points))
            canvas = paste_mask(crop_mask, roi_box, width, height)
            return RouteOutput(mask=canvas, route=ROUTE_POINT, keypoint_count=len(kps)), kps

        def route_text() -> RouteOutput:
            crop_mask = backend.segment_text(crop_png, phrase)
            canvas = paste_mask(crop_mask, roi_box, width, height)
            return RouteOutput(mask=canvas, route=ROUTE_TEXT)

        t1 = time.perf_counter()
        if config.parallel_routes:
            with ThreadPoolExecutor(max_workers=2) as pool:
                fut_pt = pool.submit(route_point)
                fut_txt = pool.submit(route_text)
                pt_out, kps = fut_pt.result()
                txt_out = fut_txt.result()
        else:
            pt_out, kps = route_point()
            txt_out = route_text()
        timings["routes_ms"] = (time.perf_counter() - t1) * 1000.0

        trace.keypoints = [[x, y] for x, y in kps.points]
        trace.keypoint_scores = list(kps.scores)
        trace.route_masks = {
            "point": rle_encode(pt_out.mask).to_json(),
            "text": rle_encode(txt_out.mask).to_json(),
        }
        pt_valid = assess_validity(pt_out, roi_box, config.fusion)
        txt_valid = assess_validity(txt_out, roi_box, config.fusion)
        trace.validity = {"point": pt_valid, "text": txt_valid}
        mask, branch = fuse(pt_out, txt_out, pt_valid, txt_valid)
        trace.fusion_branch = branch
    except GeosegError as exc:
        trace.errors.append(f"{type(exc).__name__}: {exc}")
        trace.fusion_branch = BRANCH_ERROR
        mask = np.zeros((height, width), dtype=np.uint8)
    timings["total_ms"] = (time.perf_counter() - t0) * 1000.0
    return mask, trace


# ---------------------------------------------------------------------------
# batch driver

@dataclass(frozen=True)
class BatchItem:
    sample_id: str
    image_path: str
    query: str


@dataclass
class BatchResult:
    masks: dict  # sample_id -> np.ndarray
    traces: list[PipelineTrace]
    failures: int
    cache_hits: int = 0


def load_batch_manifest(path) -> list[BatchItem]:
    """Minimal JSONL reader for prediction runs: id, image, query per line."""
    items: list[BatchItem] = []
    base = Path(path).parent
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                image = obj["image"]
                items.append(
                    BatchItem(
                        sample_id=str(obj["id"]),
                        image_path=str(base / image) if not os.path.isabs(image) else image,
                        query=str(obj["query"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"manifest line {lineno}: {exc}") from exc
    if not items:
        raise ValueError(f"manifest {path} contains no samples")
    seen = set()
    for item in items:
        if item.sample_id in seen:
            raise ValueError(f"duplicate sample id {item.sample_id!r} in manifest")
        seen.add(item.sample_id)
    return items


def _cache_key(image_png: bytes, query: str, cfg_digest: str) -> str:
    h = hashlib.sha256()
    h.update(image_png)
    h.update(b"\x00")
    h.update(query.encode("utf-8"))
    h.update(b"\x00")
    h.update(cfg_digest.encode("ascii"))
    return h.hexdigest()


def run_batch(
    items: list[BatchItem],
    config: PipelineConfig,
    backend: be.Backends | None = None,
    out_dir=None,
    workers: int | None = None,
) -> BatchResult:
    """Run every item with bounded parallelism; failures stay per-sample.

    When out_dir is given, prediction masks are written as PNG under
    out_dir/masks and traces to out_dir/traces.jsonl, in manifest order.
    """
    from .raster import load_image  # deferred; keeps import graph flat

    if backend is None:
        backend = be.make_backends(config.endpoints)
    if workers is None:
        workers = config.workers or os.cpu_count() or 1
    workers = max(1, workers)
    cfg_digest = config_digest(config)
    cache_dir = Path(config.cache_dir) if config.cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)

    cache_hits = 0

    def process(item: BatchItem) -> tuple[str, np.ndarray, PipelineTrace, bool]:
        try:
            image = load_image(item.image_path)
            key = None
            if cache_dir:
                image_png = be.image_to_png_bytes(image)
                key = _cache_key(image_png, item.query, cfg_digest)
                mask_file = cache_dir / f"{key}.png"
                trace_file = cache_dir / f"{key}.json"
                if mask_file.exists() and trace_file.exists():
                    from .raster import load_mask

                    with open(trace_file, "r", encoding="utf-8") as fh:
                        trace = trace_from_dict(json.load(fh))
                    return item.sample_id, load_mask(mask_file), trace, True
            mask, trace = run_sample(image, item.query, config, backend, sample_id=item.sample_id)
            if cache_dir and key is not None and trace.fusion_branch != BRANCH_ERROR:
                # write-then-rename so concurrent workers never read half a file
                tmp_mask = cache_dir / f"{key}.png.tmp-{item.sample_id}"
                save_mask(mask, tmp_mask)
                os.replace(tmp_mask, cache_dir / f"{key}.png")
                tmp_trace = cache_dir / f"{key}.json.tmp-{item.sample_id}"
                with open(tmp_trace, "w", encoding="utf-8") as fh:
                    json.dump(trace_to_dict(trace), fh, sort_keys=True)
                os.replace(tmp_trace, cache_dir / f"{key}.json")
            return item.sample_id, mask, trace, False
        except Exception as exc:  # isolate sample failures from the rest of the batch
            trace = PipelineTrace(
                sample_id=item.sample_id,
                query=item.query,
                image_size=(1, 1),
                fusion_branch=BRANCH_ERROR,
                errors=[f"{type(exc).__name__}: {exc}"],
                config=config.to_dict(),
            )
            return item.sample_id, np.zeros((1, 1), dtype=np.uint8), trace, False

    results: dict[str, tuple[np.ndarray, PipelineTrace, bool]] = {}
    if workers == 1:
        for item in items:
            sid, mask, trace, hit = process(item)
            results[sid] = (mask, trace, hit)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for sid, mask, trace, hit in pool.map(process, items):
                results[sid] = (mask, trace, hit)

    masks = {}
    traces = []
    failures = 0
    for item in items:  # manifest order, regardless of completion order
        mask, trace, hit = results[item.sample_id]
        masks[item.sample_id] = mask
        traces.append(trace)
        cache_hits += 1 if hit else 0
        if trace.fusion_branch == BRANCH_ERROR:
            failures += 1

    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "masks").mkdir(parents=True, exist_ok=True)
        for item in items:
            save_mask(masks[item.sample_id], out_dir / "masks" / f"{item.sample_id}.png")
        with open(out_dir / "traces.jsonl", "w", encoding="utf-8") as fh:
            for trace in traces:
                fh.write(json.dumps(trace_to_dict(trace), sort_keys=True, separators=(",", ":")) + "\n")

    return BatchResult(masks=masks, traces=traces, failures=failures, cache_hits=cache_hits)
