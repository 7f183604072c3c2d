"""Command-line entry point for the dataset converter.

Subcommands run independently and share one output directory:

* ``kg`` — triples and id sidecars (run this first; later steps read the
  sidecars to learn the engine's id assignment).
* ``queries`` — one JSONL file per query template for a split.
* ``embeddings`` — the binary embedding table, reordered to engine ids.

Each prints a JSON summary on success; failures print ``error: ...`` and
exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import ConversionError
from .convert import convert_embeddings, convert_kg, convert_queries


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsmp-convert",
        description="Convert archived benchmark datasets into engine-readable files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("kg", help="convert integer triples into label TSVs")
    kg.add_argument("--src", required=True, type=Path, help="archive directory")
    kg.add_argument("--out", required=True, type=Path, help="output dataset directory")

    queries = sub.add_parser("queries", help="convert one split's queries to JSONL")
    queries.add_argument("--src", required=True, type=Path, help="archive directory")
    queries.add_argument("--out", required=True, type=Path, help="output dataset directory")
    queries.add_argument(
        "--split",
        default="test",
        choices=("train", "valid", "test"),
        help="which split to convert (default: test)",
    )

    emb = sub.add_parser("embeddings", help="convert an .npz checkpoint to the binary table")
    emb.add_argument("--src", required=True, type=Path, help="archive directory")
    emb.add_argument("--out", required=True, type=Path, help="output dataset directory")
    emb.add_argument(
        "--checkpoint",
        type=Path,
        default=None,
        help="checkpoint path (default: <src>/checkpoint.npz)",
    )
    emb.add_argument(
        "--expect-rank",
        type=int,
        default=None,
        help="fail unless the checkpoint has this rank",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "kg":
            summary = convert_kg(args.src, args.out)
        elif args.command == "queries":
            summary = {args.split: convert_queries(args.src, args.out, args.split)}
        else:
            summary = convert_embeddings(
                args.src, args.out, checkpoint=args.checkpoint, expect_rank=args.expect_rank
            )
    except ConversionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
