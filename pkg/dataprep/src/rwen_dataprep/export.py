"""Corpus export into the manifest/tensor interchange formats, plus an
independent validator that re-checks every invariant the consumer enforces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .alignment import AlignmentError, align_words_to_subwords
from .encoding import get_encoder
from .formats import FormatError, MANIFEST_NAME, manifest_line, read_tensor, \
    write_manifest, write_tensor
from .parsing import ParserError, get_parser

CORPUS_CONLLU = "corpus.conllu"


def _phonemize(name: str, form: str, vocab: int) -> list[int]:
    if name == "none":
        return []
    if name == "chars":
        return [ord(ch) % vocab for ch in form.lower() if ch.isalnum()]
    raise ParserError(f"unknown phonemizer {name!r}")


@dataclass
class ExportReport:
    out_dir: Path
    manifest_path: Path | None
    exported: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    empty_lines: int = 0

    @property
    def alignment_rate(self) -> float:
        total = len(self.exported) + len(self.skipped)
        return len(self.exported) / total if total else 1.0


def export(
    corpus, out_dir, *, parser: str = "chain", encoder: str = "hash",
    d_h: int = 32, seed: int = 0, batch_size: int = 16,
    phonemizer: str = "none", phoneme_vocab: int = 40,
    log: Callable[[str], None] | None = None,
) -> ExportReport:
    """Parse, encode, align, and write manifest + tensors for a corpus.

    The corpus is UTF-8 text, one sentence per line; blank lines are
    ignored. Sentences that fail parsing or word/subword alignment are
    skipped with a logged reason, never patched. ``batch_size`` is a hint
    for encoder backends that batch internally.
    """
    del batch_size  # the builtin backends encode sentence by sentence
    corpus = Path(corpus)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tensors").mkdir(exist_ok=True)
    parse = get_parser(parser)
    encode = get_encoder(encoder, d_h=d_h, seed=seed)
    report = ExportReport(out_dir=out_dir, manifest_path=None)
    lines: list[str] = []
    conllu_blocks: list[str] = []

    for lineno, raw in enumerate(
        corpus.read_text(encoding="utf-8").splitlines(), start=1
    ):
        text = raw.strip()
        if not text:
            report.empty_lines += 1
            continue
        sid = f"line{lineno:05d}"

        def skip(reason: str) -> None:
            report.skipped.append((sid, reason))
            if log:
                log(f"skip {sid}: {reason}")

        try:
            parsed = parse(text)
        except ParserError as exc:
            skip(f"parser: {exc}")
            continue
        if parsed is None:
            skip("parser produced no words")
            continue
        result = encode(text, sid)
        if result is None:
            skip("encoder produced no tokens")
            continue
        try:
            spans = align_words_to_subwords(parsed.words, result.tokens)
        except AlignmentError as exc:
            skip(f"alignment: {exc}")
            continue
        if result.matrix.shape[1] != len(result.tokens) + 2:
            skip(
                f"encoder matrix has {result.matrix.shape[1]} columns for "
                f"{len(result.tokens)} tokens"
            )
            continue

        tensor_rel = f"tensors/{sid}.emb.rwt"
        write_tensor(out_dir / tensor_rel, result.matrix)
        record = {
            "id": sid,
            "words": [w.form for w in parsed.words],
            "head": [w.head for w in parsed.words],
            "rel": [w.rel for w in parsed.words],
            "spans": [[s, e] for s, e in spans],
            "phonemes": [
                _phonemize(phonemizer, w.form, phoneme_vocab)
                for w in parsed.words
            ],
            "embeddings": {"file": tensor_rel},
        }
        lines.append(manifest_line(record))
        conllu_blocks.append(parsed.conllu(sid))
        report.exported.append(sid)

    report.manifest_path = write_manifest(lines, out_dir)
    (out_dir / CORPUS_CONLLU).write_text(
        "".join(block + "\n\n" for block in conllu_blocks), encoding="utf-8"
    )
    if log:
        log(
            f"exported {len(report.exported)} sentences, "
            f"skipped {len(report.skipped)}, "
            f"alignment rate {report.alignment_rate:.3f}"
        )
    return report


# ---------------------------------------------------------------------------
# Independent validation.

_REQUIRED = ("id", "words", "head", "rel", "spans", "phonemes", "embeddings")
_ALLOWED = set(_REQUIRED) | {"targets", "notes"}


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    records: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


def _check_tree(heads: list[int]) -> str | None:
    n = len(heads)
    roots = [i for i, h in enumerate(heads, start=1) if h == 0]
    for i, h in enumerate(heads, start=1):
        if not isinstance(h, int) or not 0 <= h <= n or h == i:
            return f"head[{i}]={h!r} invalid"
    if len(roots) != 1:
        return f"{len(roots)} roots"
    for i in range(1, n + 1):
        node, steps = i, 0
        while node != 0:
            node = heads[node - 1]
            steps += 1
            if steps > n:
                return f"cycle reachable from word {i}"
    return None


def validate(out_dir) -> ValidationReport:
    """Re-check every manifest invariant without using the consumer's code."""
    out_dir = Path(out_dir)
    report = ValidationReport()
    manifest = out_dir / MANIFEST_NAME
    if not manifest.is_file():
        report.errors.append(f"missing {MANIFEST_NAME}")
        return report
    seen: set[str] = set()
    for lineno, line in enumerate(
        manifest.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        report.records += 1
        err = _validate_record(out_dir, lineno, line, seen)
        report.errors.extend(err)
    return report


def _validate_record(out_dir: Path, lineno: int, line: str,
                     seen: set[str]) -> list[str]:
    where = f"line {lineno}"
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        return [f"{where}: bad JSON: {exc}"]
    if not isinstance(rec, dict):
        return [f"{where}: record is not an object"]
    errors = []
    for key in _REQUIRED:
        if key not in rec:
            return [f"{where}: missing field {key!r}"]
    unknown = set(rec) - _ALLOWED
    if unknown:
        errors.append(f"{where}: unknown fields {sorted(unknown)}")
    sid = rec["id"]
    where = f"sentence {sid}"
    if sid in seen:
        errors.append(f"{where}: duplicate id")
    seen.add(sid)
    n = len(rec["words"])
    if n == 0:
        errors.append(f"{where}: no words")
        return errors
    for fieldname in ("head", "rel", "spans", "phonemes"):
        if len(rec[fieldname]) != n:
            errors.append(
                f"{where}: {fieldname} has {len(rec[fieldname])} entries "
                f"for {n} words"
            )
            return errors
    tree_err = _check_tree(rec["head"])
    if tree_err:
        errors.append(f"{where}: {tree_err}")
    cursor = 1
    for w, span in enumerate(rec["spans"], start=1):
        if (not isinstance(span, list)) or len(span) != 2:
            errors.append(f"{where}: span {w} malformed")
            return errors
        s, e = span
        if s != cursor or e <= s:
            errors.append(
                f"{where}: span {w} is [{s},{e}), expected to start at "
                f"{cursor} and be non-empty"
            )
            return errors
        cursor = e
    m = cursor - 1
    for w, ids in enumerate(rec["phonemes"], start=1):
        if any((not isinstance(p, int)) or p < 0 for p in ids):
            errors.append(f"{where}: phonemes of word {w} invalid")
    emb = rec["embeddings"]
    if isinstance(emb, dict) and "file" in emb:
        target = out_dir / emb["file"]
        if not target.is_file():
            errors.append(f"{where}: embeddings file {emb['file']!r} missing")
        else:
            try:
                matrix = read_tensor(target)
            except FormatError as exc:
                errors.append(f"{where}: {exc}")
            else:
                if matrix.ndim != 2 or matrix.shape[1] != m + 2:
                    errors.append(
                        f"{where}: embeddings shaped {matrix.shape}, "
                        f"expected (d_h, {m + 2})"
                    )
                elif not np.isfinite(matrix).all():
                    errors.append(f"{where}: non-finite embeddings")
    elif not (isinstance(emb, dict) and emb.get("provider") == "pseudo"):
        errors.append(f"{where}: embeddings neither file nor pseudo provider")
    return errors
