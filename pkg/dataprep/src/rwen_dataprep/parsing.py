"""Dependency-parser backends producing words with character offsets.

Every backend returns one ParsedSentence per input line: tokens with their
character spans in the original text, a head index per token (0 = root) and
a relation tag, plus the equivalent CoNLL-U block. The "chain" backend is a
deterministic offline stand-in; "stanza" wraps the real parser when it is
installed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable


class BackendUnavailable(RuntimeError):
    pass


class ParserError(ValueError):
    pass


@dataclass(frozen=True)
class Word:
    form: str
    start: int
    end: int
    head: int
    rel: str


@dataclass(frozen=True)
class ParsedSentence:
    words: tuple[Word, ...]

    def conllu(self, sent_id: str) -> str:
        lines = [f"# sent_id = {sent_id}"]
        for i, w in enumerate(self.words, start=1):
            lines.append(
                "\t".join((str(i), w.form, "_", "_", "_", "_", str(w.head),
                           w.rel, "_", "_"))
            )
        return "\n".join(lines)


_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_PUNCT = re.compile(r"^[^\w\s]+$", re.UNICODE)


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


def chain_parse(text: str) -> ParsedSentence | None:
    """Left-branching heuristic tree: deterministic, always valid.

    The first non-punctuation token is the root; every other content token
    attaches to the closest content token to its left (or to the root when
    none exists), punctuation attaches the same way with tag "punct".
    """
    tokens = tokenize_with_offsets(text)
    if not tokens:
        return None
    is_punct = [_PUNCT.match(t[0]) is not None for t in tokens]
    root = next((i for i, p in enumerate(is_punct, start=1) if not p), 1)
    words = []
    for i, (form, start, end) in enumerate(tokens, start=1):
        if i == root:
            head, rel = 0, "root"
        else:
            prev = next(
                (j for j in range(i - 1, 0, -1) if not is_punct[j - 1]), 0
            )
            head = prev if prev else root
            rel = "punct" if is_punct[i - 1] else "dep"
        words.append(Word(form, start, end, head, rel))
    return ParsedSentence(tuple(words))


def _stanza_factory() -> Callable[[str], ParsedSentence | None]:
    try:
        import stanza
    except ImportError as exc:
        raise BackendUnavailable(
            "parser 'stanza' needs the stanza package installed"
        ) from exc
    pipeline = stanza.Pipeline(
        "en", processors="tokenize,pos,lemma,depparse", verbose=False
    )

    def parse(text: str) -> ParsedSentence | None:
        doc = pipeline(text)
        if not doc.sentences:
            return None
        if len(doc.sentences) > 1:
            # one corpus line must stay one tree; splitting would create
            # multiple roots
            raise ParserError(
                f"line splits into {len(doc.sentences)} sentences"
            )
        sent = doc.sentences[0]
        words = tuple(
            Word(
                form=w.text,
                start=w.parent.start_char,
                end=w.parent.end_char,
                head=w.head,
                rel=w.deprel,
            )
            for w in sent.words
        )
        return ParsedSentence(words) if words else None

    return parse


def get_parser(name: str) -> Callable[[str], ParsedSentence | None]:
    if name == "chain":
        return chain_parse
    if name == "stanza":
        return _stanza_factory()
    raise ParserError(f"unknown parser backend {name!r}")
