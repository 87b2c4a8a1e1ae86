"""Command-line entry point: run, bench, eval, calibrate, judge, serve.

Config precedence: CLI flag > GEOSEG_*_URL environment variables >
config file > built-in defaults. The effective config is echoed into every
trace for reproducibility. Exit codes: 0 success, 1 batch partial failure,
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import backends as be
from . import bench, calibration, pipeline
from .metrics import format_metrics_table
from .raster import load_image, rle_encode, save_mask

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def _load_config(args) -> pipeline.PipelineConfig:
    if getattr(args, "config", None):
        config = pipeline.PipelineConfig.from_file(args.config)
    else:
        config = pipeline.PipelineConfig()
    config.apply_env()
    for role in be.ROLES:
        url = getattr(args, f"{role}_url", None)
        if url:
            current = config.endpoints.get(role)
            config.endpoints[role] = be.BackendEndpoint(
                role=role,
                url=url,
                timeout=current.timeout if current else 30.0,
                retry_count=current.retry_count if current else 1,
            )
    if getattr(args, "workers", None) is not None:
        config.workers = args.workers
    if getattr(args, "cache_dir", None) is not None:
        config.cache_dir = args.cache_dir
    return config


def _require_endpoints(config: pipeline.PipelineConfig, roles) -> None:
    missing = [r for r in roles if r not in config.endpoints]
    if missing:
        raise SystemExit(
            f"no endpoint configured for: {', '.join(missing)} "
            f"(set {', '.join(be.ENV_VARS[r] for r in missing)} or provide a config file)"
        )


def _add_endpoint_flags(p: argparse.ArgumentParser) -> None:
    for role in be.ROLES:
        p.add_argument(f"--{role}-url", dest=f"{role}_url", help=f"{role} endpoint URL")


def cmd_run(args) -> int:
    config = _load_config(args)
    _require_endpoints(config, ("grounder", "matcher", "segmenter"))
    backend = be.make_backends(config.endpoints)
    image = load_image(args.image)
    mask, trace = pipeline.run_sample(
        image, args.query, config, backend, sample_id=Path(args.out).stem
    )
    save_mask(mask, args.out)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            json.dump(pipeline.trace_to_dict(trace), fh, sort_keys=True, indent=2)
    print(f"wrote {args.out} (branch: {trace.fusion_branch})")
    return EXIT_OK if trace.fusion_branch != pipeline.BRANCH_ERROR else EXIT_PARTIAL


def cmd_bench(args) -> int:
    config = _load_config(args)
    _require_endpoints(config, ("grounder", "matcher", "segmenter"))
    samples, _ = bench.load_manifest(args.manifest, strict=args.strict)
    items = pipeline.load_batch_manifest(args.manifest)
    result = pipeline.run_batch(items, config, out_dir=args.out_dir, workers=config.workers)
    print(f"processed {len(items)} samples, {result.failures} failures, {result.cache_hits} cache hits")
    branches = {t.sample_id: t.fusion_branch for t in result.traces}
    reports, summary = bench.evaluate(
        Path(args.out_dir) / "masks",
        samples,
        manifest_base=Path(args.manifest).parent,
        theta=args.theta,
        averaging=args.averaging,
        traces=branches,
    )
    _write_eval_outputs(reports, summary, Path(args.out_dir))
    print(format_metrics_table(summary))
    return EXIT_PARTIAL if result.failures else EXIT_OK


def _write_eval_outputs(reports, summary, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
    with open(out_dir / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(format_metrics_table(summary) + "\n")


def cmd_eval(args) -> int:
    samples, _ = bench.load_manifest(args.manifest, strict=args.strict)
    reports, summary = bench.evaluate(
        args.pred_dir,
        samples,
        manifest_base=Path(args.manifest).parent,
        theta=args.theta,
        averaging=args.averaging,
    )
    _write_eval_outputs(reports, summary, Path(args.out_dir))
    print(format_metrics_table(summary))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    offsets = calibration.load_pairs(args.pairs)
    params = calibration.derive_margins(offsets, quantile=args.quantile)
    print(f"alpha={params.alpha:.2f} beta={params.beta:.2f}")
    if args.hist_out:
        rows = calibration.export_offset_histogram(offsets, bin_width=args.bin_width)
        with open(args.hist_out, "w", encoding="utf-8") as fh:
            fh.write(calibration.histogram_csv(rows))
        print(f"wrote {args.hist_out}")
    return EXIT_OK


def cmd_judge(args) -> int:
    config = _load_config(args)
    _require_endpoints(config, ("judge",))
    backend = be.make_backends(config.endpoints)
    samples, _ = bench.load_manifest(args.manifest)
    result = bench.judge_run(
        samples,
        args.pred_dir,
        backend,
        manifest_base=Path(args.manifest).parent,
        alpha=args.alpha,
        overlay_dir=args.overlay_dir,
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, sort_keys=True, indent=2)
    print(bench.format_judge_table(result))
    return EXIT_OK


def cmd_serve(args) -> int:
    config = _load_config(args)
    _require_endpoints(config, ("grounder", "matcher", "segmenter"))
    backend = be.make_backends(config.endpoints)
    server = make_pipeline_server(args.host, args.port, config, backend)
    print(f"serving pipeline on {args.host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def make_pipeline_server(host: str, port: int, config, backend) -> ThreadingHTTPServer:
    """POST /v1/pipeline {"image_png_b64","query"} -> {"mask_rle","trace"}.

    Responses for identical bodies are byte-identical under a stub backend:
    volatile timings are excluded from the served trace.
    """

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
                self._reply(200, {"ok": True, "role": "pipeline"})
            else:
                self._reply(404, {"error": f"unknown path {self.path}"})

        def do_POST(self):
            if self.path != "/v1/pipeline":
                self._reply(404, {"error": f"unknown path {self.path}"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length))
                image = be.image_from_png_bytes(be.png_from_b64(payload["image_png_b64"]))
                query = payload["query"]
            except (KeyError, ValueError, TypeError) as exc:
                self._reply(400, {"error": f"bad request: {exc}"})
                return
            try:
                mask, trace = pipeline.run_sample(image, query, config, backend)
            except Exception as exc:
                self._reply(500, {"error": f"{type(exc).__name__}: {exc}"})
                return
            self._reply(
                200,
                {
                    "mask_rle": rle_encode(mask).to_json(),
                    "trace": pipeline.trace_to_dict(trace, include_timings=False),
                },
            )

    return ThreadingHTTPServer((host, port), Handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="segment one image for one query")
    p.add_argument("--image", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output mask PNG")
    p.add_argument("--trace", help="optional trace JSON path")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="run a manifest batch, then evaluate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir")
    p.add_argument("--strict", action="store_true", help="assert benchmark composition")
    p.add_argument("--theta", type=float)
    p.add_argument("--averaging", choices=("macro", "micro"), default="macro")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="score existing predictions against a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--theta", type=float)
    p.add_argument("--averaging", choices=("macro", "micro"), default="macro")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="derive expansion margins from box pairs")
    p.add_argument("--pairs", required=True, help="JSONL of {pred, gt} boxes")
    p.add_argument("--quantile", type=float, default=0.8)
    p.add_argument("--hist-out", help="optional histogram CSV path")
    p.add_argument("--bin-width", type=float, default=0.05)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("judge", help="model-as-a-judge scoring of predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--config")
    p.add_argument("--alpha", type=float, default=0.5, help="overlay blend fraction")
    p.add_argument("--overlay-dir", help="persist judge overlays for audit")
    p.add_argument("--out", help="result JSON path")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("serve", help="HTTP service exposing the pipeline")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--config")
    _add_endpoint_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
