"""Command-line entry point for bundle extraction."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import FeatexError
from .extract import ExtractJob, extract


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="featex",
        description="Export image/text embedding bundles from a frozen encoder",
    )
    p.add_argument("--dataset", required=True, help="dataset name (provenance)")
    p.add_argument("--root", required=True, help="image-folder dataset root")
    p.add_argument("--backbone", default="hash",
                   help="'hash', 'hash-<dim>' or 'clip:<model-id>'")
    p.add_argument("--split", action="append", dest="splits",
                   help="split to export (repeatable; default train,val,test)")
    p.add_argument("--template", default="a photo of a {}.",
                   help="class-name prompt template with one {} placeholder")
    p.add_argument("--out", required=True, help="output directory for bundles")
    p.add_argument("--batch-size", type=int, default=64)
    return p


def run_cli(argv=None) -> int:
    args = _parser().parse_args(argv)
    job = ExtractJob(
        dataset=args.dataset,
        root=args.root,
        out=args.out,
        backbone=args.backbone,
        splits=tuple(args.splits) if args.splits else ("train", "val", "test"),
        template=args.template,
        batch_size=args.batch_size,
    )
    try:
        written = extract(job)
    except FeatexError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(written, indent=2, sort_keys=True))
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
