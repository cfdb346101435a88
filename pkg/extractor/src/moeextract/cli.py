"""Command-line entry point: one flag per ExtractorConfig field."""

from __future__ import annotations

import argparse
import json
import sys

from .extract import DEFAULT_ROUTER_PATTERN, ExtractorConfig, dump_traces


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeextract",
        description="Dump MoE routing traces from a checkpoint to .trace.jsonl",
    )
    parser.add_argument("--model", required=True,
                        help="checkpoint directory or identifier")
    parser.add_argument("--corpus", required=True,
                        help="CoNLL-U gold file supplying sentences and tags")
    parser.add_argument("--output", required=True,
                        help="destination .trace.jsonl path")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--precision", default="float32",
                        choices=("float32", "float16", "bfloat16"))
    parser.add_argument("--router-pattern", default=DEFAULT_ROUTER_PATTERN,
                        help="regex over module names; group 1 is the layer index")
    parser.add_argument("--exclude-shared", default=True,
                        action=argparse.BooleanOptionalAction,
                        help="skip shared-expert gates (they carry no routing signal)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractorConfig(
        model=args.model, corpus=args.corpus, output=args.output,
        device=args.device, precision=args.precision,
        router_pattern=args.router_pattern, exclude_shared=args.exclude_shared,
    )
    try:
        report = dump_traces(config)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(f"wrote {report.path} ({report.n_records} records, "
          f"{report.alignment_warnings} alignment warnings, "
          f"L={report.n_layers} N={report.n_experts} k={report.k})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
