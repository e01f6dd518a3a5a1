"""Dependency-tree data model, CoNLL-U ingestion, and tree-path extraction.

Word indexes are 1-based. Index 0 is the virtual root in head arrays; in
sentence-level path lists it doubles as the [CLS] boundary slot, with n+1
the [SEP] slot. Trees and paths are immutable and all functions here are
pure, so everything can be shared freely across threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ValidationError

SELF = "self"
PARENT = "parent"
CHILD = "child"
DIRECTIONS = (SELF, PARENT, CHILD)

ROOT_KIND = "root"
PREV_KIND = "prev"
NEXT_KIND = "next"
BOUNDARY_KIND = "boundary"
PATH_KINDS = (ROOT_KIND, PREV_KIND, NEXT_KIND, BOUNDARY_KIND)

# The 37 universal dependency relations. Subtyped tags ("acl:relcl") are
# truncated at ":" before any vocabulary lookup; tags outside this list fall
# back to UNK_RELATION, and the [CLS]/[SEP] slots use BOUNDARY_RELATION.
UNIVERSAL_RELATIONS = (
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp",
    "clf", "compound", "conj", "cop", "csubj", "dep", "det", "discourse",
    "dislocated", "expl", "fixed", "flat", "goeswith", "iobj", "list", "mark",
    "nmod", "nsubj", "nummod", "obj", "obl", "orphan", "parataxis", "punct",
    "reparandum", "root", "vocative", "xcomp",
)
UNK_RELATION = "unk"
BOUNDARY_RELATION = "boundary"

_UNIVERSAL_SET = frozenset(UNIVERSAL_RELATIONS)


class TreeError(ValidationError):
    """A head/relation array does not describe a valid dependency tree."""


class ConlluError(ValidationError):
    """Malformed CoNLL-U input, annotated with sentence and line position."""


def normalize_relation(tag: str) -> str:
    """Reduce a relation tag to its universal base ("acl:relcl" -> "acl")."""
    base = tag.split(":", 1)[0].strip().lower()
    return base if base in _UNIVERSAL_SET else UNK_RELATION


@dataclass(frozen=True)
class DependencyTree:
    """Heads and relation tags for one sentence.

    ``heads[k]`` is the head of word ``k + 1``; head 0 denotes the virtual
    root. Exactly one word is attached to the root and following head
    pointers from any word reaches it, both checked at construction.
    """

    heads: tuple[int, ...]
    rels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        object.__setattr__(self, "rels", tuple(str(r) for r in self.rels))
        n = len(self.heads)
        if n == 0:
            raise TreeError("tree must contain at least one word")
        if len(self.rels) != n:
            raise TreeError(
                f"{n} heads but {len(self.rels)} relation tags"
            )
        roots = []
        for i, h in enumerate(self.heads, start=1):
            if not 0 <= h <= n:
                raise TreeError(f"head[{i}]={h} out of range 0..{n}")
            if h == i:
                raise TreeError(f"head[{i}]={h} points at itself")
            if h == 0:
                roots.append(i)
        if not roots:
            raise TreeError("no root (no word with head 0)")
        if len(roots) > 1:
            raise TreeError(f"multiple roots at words {roots}")
        for i in range(1, n + 1):
            j, steps = i, 0
            while j != 0:
                j = self.heads[j - 1]
                steps += 1
                if steps > n:
                    raise TreeError(f"cycle reachable from word {i}")

    @property
    def n(self) -> int:
        return len(self.heads)

    def head(self, i: int) -> int:
        self._check_index(i)
        return self.heads[i - 1]

    def rel(self, i: int) -> str:
        self._check_index(i)
        return self.rels[i - 1]

    @property
    def root(self) -> int:
        return self.heads.index(0) + 1

    def depth(self) -> int:
        """Number of edges on the longest word-to-root chain."""
        best = 0
        for i in range(1, self.n + 1):
            j, steps = i, 0
            while j != 0:
                j = self.heads[j - 1]
                steps += 1
            best = max(best, steps)
        return best

    def _check_index(self, i: int) -> None:
        if not 1 <= i <= self.n:
            raise ValidationError(f"word index {i} out of range 1..{self.n}")


@dataclass(frozen=True)
class RelationPath:
    """A walk through the tree plus the step direction at each hop.

    ``directions[0]`` is always "self"; for later steps the label says
    whether the walk moved to the previous node's parent or down to one of
    its children.
    """

    indexes: tuple[int, ...]
    directions: tuple[str, ...]
    kind: str

    def __post_init__(self) -> None:
        if not self.indexes:
            raise ValidationError("path must be non-empty")
        if len(self.indexes) != len(self.directions):
            raise ValidationError("indexes and directions differ in length")
        if self.directions[0] != SELF:
            raise ValidationError("first direction must be 'self'")
        for d in self.directions:
            if d not in DIRECTIONS:
                raise ValidationError(f"unknown direction {d!r}")
        if self.kind not in PATH_KINDS:
            raise ValidationError(f"unknown path kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.indexes)


def _step_directions(tree: DependencyTree, indexes: Sequence[int]) -> tuple[str, ...]:
    dirs = [SELF]
    for a, b in zip(indexes, indexes[1:]):
        if tree.head(a) == b:
            dirs.append(PARENT)
        elif tree.head(b) == a:
            dirs.append(CHILD)
        else:
            raise ValidationError(f"words {a} and {b} are not tree-adjacent")
    return tuple(dirs)


def root_path(tree: DependencyTree, i: int) -> RelationPath:
    """Path of word indexes from word ``i`` up to the sentence root."""
    tree._check_index(i)
    indexes = [i]
    while tree.heads[indexes[-1] - 1] != 0:
        indexes.append(tree.heads[indexes[-1] - 1])
    directions = (SELF,) + (PARENT,) * (len(indexes) - 1)
    return RelationPath(tuple(indexes), directions, ROOT_KIND)


def adjacent_path(tree: DependencyTree, i: int, target: str) -> RelationPath:
    """Unique simple tree path from word ``i`` to word ``i - 1`` or ``i + 1``.

    Built by intersecting the two root paths at their lowest common
    ancestor; sentences are short, so the O(depth) ancestor scan beats any
    preprocessing structure.
    """
    if target not in (PREV_KIND, NEXT_KIND):
        raise ValidationError(f"target must be 'prev' or 'next', got {target!r}")
    tree._check_index(i)
    j = i - 1 if target == PREV_KIND else i + 1
    if not 1 <= j <= tree.n:
        raise ValidationError(
            f"word {i} has no {'previous' if target == PREV_KIND else 'next'} word"
        )
    up = root_path(tree, i).indexes
    seen = {node: pos for pos, node in enumerate(up)}
    climb: list[int] = []
    node = j
    while node not in seen:
        climb.append(node)
        node = tree.heads[node - 1]
    indexes = up[: seen[node] + 1] + tuple(reversed(climb))
    return RelationPath(indexes, _step_directions(tree, indexes), target)


def sentence_paths(tree: DependencyTree, kind: str) -> list[RelationPath]:
    """One path per slot 0..n+1; slots 0 and n+1 are the boundary singletons.

    For kind "prev" the first word (and for "next" the last word) has no
    neighbour inside the tree and degrades to a singleton self-path, the
    same treatment the boundary slots get.
    """
    if kind not in (ROOT_KIND, PREV_KIND, NEXT_KIND):
        raise ValidationError(f"kind must be one of root/prev/next, got {kind!r}")
    n = tree.n
    paths = [RelationPath((0,), (SELF,), BOUNDARY_KIND)]
    for i in range(1, n + 1):
        if kind == ROOT_KIND:
            paths.append(root_path(tree, i))
        elif (kind == PREV_KIND and i == 1) or (kind == NEXT_KIND and i == n):
            paths.append(RelationPath((i,), (SELF,), kind))
        else:
            paths.append(adjacent_path(tree, i, kind))
    paths.append(RelationPath((n + 1,), (SELF,), BOUNDARY_KIND))
    return paths


@dataclass(frozen=True)
class ConlluSentence:
    """One parsed sentence: surface forms, the tree, and parser notes."""

    forms: tuple[str, ...]
    tree: DependencyTree
    sent_id: str | None = None
    notes: tuple[str, ...] = field(default=())


_RANGE_ID = re.compile(r"^\d+-\d+$")
_EMPTY_ID = re.compile(r"^\d+\.\d+$")
_SENT_ID = re.compile(r"^#\s*sent_id\s*=\s*(.+)$")


def parse_conllu(text: str) -> list[ConlluSentence]:
    """Parse a CoNLL-U document; only ID, FORM, HEAD and DEPREL are read.

    Multiword-token and empty-node lines (range or decimal IDs) are skipped
    with a note on the sentence; any structural problem raises ConlluError
    naming the sentence and line.
    """
    sentences: list[ConlluSentence] = []
    rows: list[tuple[int, int, str, int, str]] = []  # (line, id, form, head, rel)
    notes: list[str] = []
    sent_id: str | None = None
    block_line = 0

    def flush(end_line: int) -> None:
        nonlocal rows, notes, sent_id, block_line
        if not rows and not notes:
            sent_id = None
            return
        index = len(sentences) + 1
        if not rows:
            raise ConlluError(
                f"sentence {index} (line {block_line}): no word lines"
            )
        ids = [r[1] for r in rows]
        seen: dict[int, int] = {}
        for line_no, wid, *_ in rows:
            if wid in seen:
                raise ConlluError(
                    f"sentence {index} (line {line_no}): duplicate word ID {wid}"
                )
            seen[wid] = line_no
        n = len(rows)
        if sorted(ids) != list(range(1, n + 1)):
            raise ConlluError(
                f"sentence {index} (line {block_line}): word IDs not consecutive "
                f"1..{n}: {sorted(ids)}"
            )
        rows.sort(key=lambda r: r[1])
        for line_no, wid, _form, head, _rel in rows:
            if not 0 <= head <= n:
                raise ConlluError(
                    f"sentence {index} (line {line_no}): HEAD {head} out of "
                    f"range 0..{n}"
                )
            if head == wid:
                raise ConlluError(
                    f"sentence {index} (line {line_no}): HEAD {head} points at "
                    "its own word"
                )
        try:
            tree = DependencyTree(
                tuple(r[3] for r in rows), tuple(r[4] for r in rows)
            )
        except TreeError as exc:
            raise ConlluError(
                f"sentence {index} (line {block_line}): {exc}"
            ) from exc
        sentences.append(
            ConlluSentence(
                forms=tuple(r[2] for r in rows),
                tree=tree,
                sent_id=sent_id,
                notes=tuple(notes),
            )
        )
        rows, notes, sent_id = [], [], None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            flush(line_no)
            continue
        if line.startswith("#"):
            if not rows and block_line == 0:
                block_line = line_no
            m = _SENT_ID.match(line.strip())
            if m:
                sent_id = m.group(1).strip()
            continue
        if not rows and not notes:
            block_line = line_no
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(
                f"sentence {len(sentences) + 1} (line {line_no}): expected 10 "
                f"tab-separated columns, got {len(cols)}"
            )
        raw_id = cols[0]
        if _RANGE_ID.match(raw_id) or _EMPTY_ID.match(raw_id):
            notes.append(f"skipped non-word line {line_no} (ID '{raw_id}')")
            continue
        try:
            wid = int(raw_id)
        except ValueError:
            notes.append(f"skipped non-word line {line_no} (ID '{raw_id}')")
            continue
        if wid < 1:
            raise ConlluError(
                f"sentence {len(sentences) + 1} (line {line_no}): word ID "
                f"{wid} must be >= 1"
            )
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluError(
                f"sentence {len(sentences) + 1} (line {line_no}): malformed "
                f"HEAD {cols[6]!r}"
            ) from None
        rows.append((line_no, wid, cols[1], head, cols[7]))
    flush(len(text.splitlines()) + 1)
    return sentences


def serialize_conllu(sentences: Iterable[ConlluSentence]) -> str:
    """Render sentences back to CoNLL-U; unused columns are '_'."""
    out: list[str] = []
    for sent in sentences:
        if sent.sent_id is not None:
            out.append(f"# sent_id = {sent.sent_id}")
        for i, form in enumerate(sent.forms, start=1):
            out.append(
                "\t".join(
                    (
                        str(i), form, "_", "_", "_", "_",
                        str(sent.tree.heads[i - 1]), sent.tree.rels[i - 1],
                        "_", "_",
                    )
                )
            )
        out.append("")
    return "\n".join(out)
