"""Operator command line: parse, paths, encode, train, eval, gradcheck,
synth-data.

Exit codes: 0 success, 1 validation failure (bad input, bad flags, format
problems), 2 numerical failure (gradcheck or non-finite loss). Every run
logs the hash of its resolved configuration to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import NumericalError, ValidationError

log = logging.getLogger("rwen_tts")


class _Parser(argparse.ArgumentParser):
    # usage problems are validation failures: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _log_config_hash(args: argparse.Namespace, extra: dict | None = None) -> None:
    from .training import config_hash

    payload = {k: v for k, v in vars(args).items() if k != "func"}
    if extra:
        payload.update(extra)
    payload = json.loads(json.dumps(payload, default=str))
    log.info("config hash %s", config_hash(payload))


def cmd_parse(args) -> int:
    from . import featstore
    from .deptree import parse_conllu

    text = Path(args.conllu).read_text(encoding="utf-8")
    parsed = parse_conllu(text)
    _log_config_hash(args)
    sentences = []
    for k, sent in enumerate(parsed):
        sid = sent.sent_id if sent.sent_id else f"s{k + 1:04d}"
        sentences.append(
            featstore.PreparedSentence(
                id=sid, words=sent.forms, tree=sent.tree, notes=sent.notes
            )
        )
    manifest = featstore.save_manifest(sentences, args.out)
    words = sum(s.tree.n for s in sentences)
    print(f"wrote {manifest}: {len(sentences)} sentences, {words} words")
    return 0


def cmd_paths(args) -> int:
    from . import featstore
    from .deptree import sentence_paths

    _log_config_hash(args)
    sentences = featstore.load_manifest(args.manifest, allow_skeleton=True)
    by_id = {s.id: s for s in sentences}
    if args.sentence not in by_id:
        raise ValidationError(
            f"sentence {args.sentence!r} not in manifest "
            f"({len(by_id)} sentences)"
        )
    sentence = by_id[args.sentence]
    paths = sentence_paths(sentence.tree, args.kind)
    if args.machine:
        for pos, path in enumerate(paths):
            print(json.dumps({
                "position": pos,
                "indexes": list(path.indexes),
                "directions": list(path.directions),
                "kind": path.kind,
            }, sort_keys=True))
    else:
        print(f"# sentence {sentence.id}, kind={args.kind}")
        print(f"{'pos':>4}  {'indexes':<24} directions")
        for pos, path in enumerate(paths):
            idx = " ".join(str(i) for i in path.indexes)
            dirs = " ".join(path.directions)
            print(f"{pos:>4}  {idx:<24} {dirs}")
    return 0


def cmd_synth_data(args) -> int:
    from . import featstore

    _log_config_hash(args)
    cfg = featstore.SynthConfig(
        n_sentences=args.n, max_words=args.max_words,
        phoneme_vocab=args.phoneme_vocab, d_h=args.d_h, n_mels=args.n_mels,
        seed=args.seed,
    )
    sentences = featstore.synth_dataset(cfg)
    manifest = featstore.save_manifest(sentences, args.out)
    print(f"wrote {manifest}: {len(sentences)} sentences")
    return 0


def cmd_train(args) -> int:
    from . import featstore
    from .training import TrainConfig, train

    config = TrainConfig.from_json(args.config)
    if args.seed is not None:
        config = TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    _log_config_hash(args, {"train_config": config.to_dict()})
    sentences = featstore.load_manifest(args.manifest)
    result = train(sentences, config, args.out,
                   log=lambda msg: log.info("%s", msg))
    print(
        f"trained {config.steps} steps on {len(sentences)} sentences: "
        f"initial total {result.initial_losses['total']:.4f}, "
        f"final total {result.final_losses['total']:.4f} "
        f"(ratio {result.loss_ratio:.3f})"
    )
    print(f"checkpoint: {result.checkpoint_dir}")
    print(f"metrics: {result.metrics_path}")
    return 0


def cmd_encode(args) -> int:
    from . import featstore
    from .training import encode_features, load_checkpoint

    _log_config_hash(args)
    config, mparams, _meta = load_checkpoint(args.ckpt)
    sentences = featstore.load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for sid, feats in encode_features(sentences, mparams, config):
        featstore.write_tensor(out_dir / f"{sid}.rwt", feats)
        count += 1
    print(f"encoded {count} sentences to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    from . import featstore
    from .training import (
        ablation_label, evaluate, load_checkpoint, prepare_example,
    )

    _log_config_hash(args)
    sentences = featstore.load_manifest(args.manifest)
    rows = []
    for ckpt in args.ckpt:
        config, mparams, meta = load_checkpoint(ckpt)
        examples = [prepare_example(s, require_targets=True)
                    for s in sentences]
        losses = evaluate(examples, mparams, config)
        rows.append((ablation_label(config), ckpt, losses))
    if args.machine:
        for label, ckpt, losses in rows:
            print(json.dumps(
                {"config": label, "checkpoint": str(ckpt), **losses},
                sort_keys=True,
            ))
    else:
        header = f"{'config':<16} {'total':>10} {'mel':>10} {'pitch':>10} " \
                 f"{'energy':>10} {'duration':>10}"
        print(header)
        for label, _ckpt, losses in rows:
            print(
                f"{label:<16} {losses['total']:>10.4f} {losses['mel']:>10.4f} "
                f"{losses['pitch']:>10.4f} {losses['energy']:>10.4f} "
                f"{losses['duration']:>10.4f}"
            )
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck

    _log_config_hash(args)
    reports = run_gradcheck(args.module, seed=args.seed,
                            log=lambda msg: print(msg))
    failed = [name for name, rep in reports.items() if not rep.ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 2
    print(f"all {len(reports)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rwen-tts",
                     description="Relation-aware word encoding toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("parse", help="validate CoNLL-U into a manifest skeleton")
    p.add_argument("--conllu", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("paths", help="print tree paths for one sentence")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--sentence", required=True)
    p.add_argument("--kind", required=True, choices=("root", "prev", "next"))
    p.add_argument("--machine", action="store_true",
                   help="emit line-delimited JSON instead of a table")
    p.set_defaults(func=cmd_paths)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--max-words", type=int, default=8)
    p.add_argument("--phoneme-vocab", type=int, default=40)
    p.add_argument("--d-h", type=int, default=16)
    p.add_argument("--n-mels", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train on a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="dump word-feature tensors per sentence")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("eval", help="print a loss table for checkpoints")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--ckpt", required=True, type=Path, nargs="+")
    p.add_argument("--machine", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--module", default="all",
                   choices=("nncore", "rwen", "tts", "all"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, stream=sys.stderr,
        format="%(name)s: %(message)s",
    )
    try:
        import torch

        # tensors here are tiny; thread sync costs more than it buys, and a
        # fixed thread count keeps runs bit-reproducible on one machine
        torch.set_num_threads(1)
    except ImportError:
        pass
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
