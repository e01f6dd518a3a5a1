"""Exporter command line: export a corpus, validate an export."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .export import export, validate
from .parsing import BackendUnavailable, ParserError

log = logging.getLogger("rwen_dataprep")


def cmd_export(args) -> int:
    report = export(
        args.corpus, args.out, parser=args.parser, encoder=args.encoder,
        d_h=args.d_h, seed=args.seed, batch_size=args.batch_size,
        phonemizer=args.phonemizer,
        log=lambda msg: log.info("%s", msg),
    )
    print(
        f"exported {len(report.exported)} sentences to {report.out_dir} "
        f"({len(report.skipped)} skipped, alignment rate "
        f"{report.alignment_rate:.3f})"
    )
    return 0


def cmd_validate(args) -> int:
    report = validate(args.out)
    for err in report.errors:
        print(f"ERROR: {err}", file=sys.stderr)
    print(f"checked {report.records} records: "
          f"{'ok' if report.ok else f'{len(report.errors)} errors'}")
    return 0 if report.ok else 1


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="rwen-dataprep",
        description="Export corpora into the rwen-tts interchange formats",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export")
    p.add_argument("--corpus", required=True, type=Path,
                   help="UTF-8 text, one sentence per line")
    p.add_argument("--parser", default="chain",
                   help="dependency parser backend (chain, stanza)")
    p.add_argument("--encoder", default="hash",
                   help="contextual encoder backend (hash, hf:<model>)")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--d-h", type=int, default=32,
                   help="embedding size for the hash encoder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phonemizer", default="none", choices=("none", "chars"))
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate")
    p.add_argument("--out", required=True, type=Path,
                   help="directory produced by export")
    p.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BackendUnavailable, ParserError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
