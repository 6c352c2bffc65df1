"""Command-line wrapper: extract a manifest or validate a written directory.

Exit codes: 0 success, 1 extraction/validation failure, 2 bad flags.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ExtractError
from .extract import ExtractConfig, extract
from .validate import validate_directory


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps(
            {"error": {"type": "UsageError", "message": message}}) + "\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trust-extract")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("extract", help="encode a CSV/JSONL manifest into a dataset directory")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    # no canonical pretrained checkpoints exist here, so ids are mandatory
    e.add_argument("--image-encoder", required=True, help="e.g. pix-16")
    e.add_argument("--text-encoder", required=True, help="e.g. tok-24")
    e.add_argument("--joint-encoder", required=True, help="e.g. cliptoy-12")
    e.add_argument("--classes", type=int, default=None,
                   help="class count for unlabeled manifests")
    e.add_argument("--batch-size", type=int, default=32)
    e.add_argument("--device", default="cpu")

    v = sub.add_parser("validate", help="byte-level check of a dataset directory")
    v.add_argument("directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "extract":
            config = ExtractConfig(
                image_encoder=args.image_encoder,
                text_encoder=args.text_encoder,
                joint_encoder=args.joint_encoder,
                classes=args.classes,
                batch_size=args.batch_size,
                device=args.device,
            )
            out = extract(args.manifest, config, args.out)
            report = validate_directory(out)
            sys.stdout.write(json.dumps(report.to_dict(), sort_keys=True,
                                        indent=2) + "\n")
            return 0 if report.ok else 1
        report = validate_directory(args.directory)
        sys.stdout.write(json.dumps(report.to_dict(), sort_keys=True,
                                    indent=2) + "\n")
        return 0 if report.ok else 1
    except (ExtractError, OSError) as e:
        sys.stderr.write(json.dumps(
            {"error": {"type": type(e).__name__, "message": str(e)}}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
