"""CLI: serve the fixture-driven mock or a real-model wrapper."""
from __future__ import annotations

import argparse
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="geoseg-adapters")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve-mock", help="deterministic fixture-driven backend set")
    p.add_argument("--fixture", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8090)

    p = sub.add_parser("serve-real", help="thin wrapper around one real model")
    p.add_argument("--kind", required=True, choices=("grounder", "matcher", "segmenter", "judge"))
    p.add_argument("--model-id", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8091)
    p.add_argument(
        "--grounding-prompt-file",
        help="template with {width}, {height}, {query} placeholders (grounder kind only)",
    )

    args = parser.parse_args(argv)
    if args.command == "serve-mock":
        from .mock_server import serve_mock

        server = serve_mock(args.fixture, port=args.port, host=args.host)
    else:
        from .real import StartupError, serve_real

        prompt = None
        if args.grounding_prompt_file:
            with open(args.grounding_prompt_file, "r", encoding="utf-8") as fh:
                prompt = fh.read()
        try:
            server = serve_real(
                args.kind, args.model_id, port=args.port, host=args.host, grounding_prompt=prompt
            )
        except StartupError as exc:
            print(f"startup error: {exc}", file=sys.stderr)
            return 1
    print(f"listening on {args.host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
