"""Command line: export call-level SSL embeddings as feature CSVs."""

from __future__ import annotations

import argparse
import sys

from .export import (MODEL_NAMES, SELECTIONS, ExportError, LayerSelector,
                     export_all_selectors, export_embeddings)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meerkit-export",
        description="Export call-level SSL embeddings in the meerkit feature CSV format",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="export one layer selection to one CSV")
    p.add_argument("--manifest", required=True, help="manifest CSV (call_id,path,label)")
    p.add_argument("--audio-dir", help="base directory for relative audio paths")
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--selection", required=True, choices=SELECTIONS)
    p.add_argument("--out", required=True, help="output feature CSV path")
    p.add_argument("--checkpoint", help="local path or hub name overriding the default")

    p = sub.add_parser("export-all", help="export all six selections for one model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-dir")
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            selector = LayerSelector(args.model, args.selection)
            out = export_embeddings(args.manifest, args.audio_dir, selector,
                                    args.out, checkpoint=args.checkpoint)
            print(f"wrote {out}")
        else:
            written = export_all_selectors(args.manifest, args.audio_dir, args.model,
                                           args.out_dir, checkpoint=args.checkpoint)
            print(f"wrote {len(written)} CSVs to {args.out_dir}")
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
