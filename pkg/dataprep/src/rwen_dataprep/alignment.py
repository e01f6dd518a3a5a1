"""Character-offset alignment of parser words to encoder subword tokens.

A sentence aligns when every subword token lies entirely inside exactly one
word, every word receives at least one token, and each word's tokens are
consecutive. Anything else raises AlignmentError with the reason; callers
skip such sentences rather than patching them, since a silent misalignment
would corrupt the pooled word vectors downstream.
"""

from __future__ import annotations

from .encoding import SubwordToken
from .parsing import Word


class AlignmentError(ValueError):
    pass


def align_words_to_subwords(
    words: tuple[Word, ...], tokens: tuple[SubwordToken, ...]
) -> list[tuple[int, int]]:
    """Returns one half-open span per word over 1-based subword positions."""
    if not words:
        raise AlignmentError("no words to align")
    if not tokens:
        raise AlignmentError("encoder produced no tokens")
    owner: list[int] = []
    for t in tokens:
        hosts = [
            i for i, w in enumerate(words)
            if w.start <= t.start and t.end <= w.end
        ]
        if len(hosts) != 1:
            raise AlignmentError(
                f"subword {t.text!r}@[{t.start},{t.end}) lies in "
                f"{len(hosts)} words"
            )
        owner.append(hosts[0])
    spans: list[tuple[int, int]] = []
    cursor = 0
    for i, w in enumerate(words):
        first = cursor
        while cursor < len(owner) and owner[cursor] == i:
            cursor += 1
        if cursor == first:
            raise AlignmentError(f"word {w.form!r} received no subwords")
        spans.append((first + 1, cursor + 1))
    if cursor != len(owner):
        raise AlignmentError(
            "subword order does not follow word order "
            f"(stopped at token {cursor} of {len(owner)})"
        )
    return spans
