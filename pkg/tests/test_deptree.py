from collections import deque

import pytest
from hypothesis import given, strategies as st

from rwen_tts.deptree import (
    CHILD, ConlluError, DependencyTree, PARENT, SELF, TreeError,
    UNIVERSAL_RELATIONS, adjacent_path, normalize_relation, parse_conllu,
    root_path, sentence_paths, serialize_conllu,
)
from rwen_tts.errors import ValidationError


# --- oracles -----------------------------------------------------------

def head_iteration_oracle(tree: DependencyTree, i: int) -> list[int]:
    """Follow head pointers until the virtual root."""
    out = [i]
    while tree.heads[out[-1] - 1] != 0:
        out.append(tree.heads[out[-1] - 1])
    return out


def bfs_oracle(tree: DependencyTree, src: int, dst: int) -> list[int]:
    """Breadth-first shortest path on the undirected tree."""
    adj: dict[int, list[int]] = {i: [] for i in range(1, tree.n + 1)}
    for i in range(1, tree.n + 1):
        h = tree.heads[i - 1]
        if h != 0:
            adj[i].append(h)
            adj[h].append(i)
    parent = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for nxt in adj[node]:
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [dst]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return list(reversed(path))


@st.composite
def trees(draw, max_words: int = 60) -> DependencyTree:
    n = draw(st.integers(min_value=1, max_value=max_words))
    order = draw(st.permutations(list(range(1, n + 1))))
    heads = [0] * n
    for pos in range(1, n):
        anchor = draw(st.integers(min_value=0, max_value=pos - 1))
        heads[order[pos] - 1] = order[anchor]
    rels = draw(st.lists(st.sampled_from(UNIVERSAL_RELATIONS),
                         min_size=n, max_size=n))
    return DependencyTree(tuple(heads), tuple(rels))


# --- tree validation ---------------------------------------------------

def test_two_word_tree():
    tree = DependencyTree((2, 0), ("nsubj", "root"))
    assert tree.n == 2
    assert tree.root == 2
    assert tree.head(1) == 2


@pytest.mark.parametrize(
    "heads, rels, message",
    [
        ((2, 1), ("a", "b"), "no root"),
        ((0, 0), ("a", "b"), "multiple roots"),
        ((1, 0), ("a", "b"), "points at itself"),
        ((5, 0), ("a", "b"), "out of range"),
        ((), (), "at least one word"),
        ((0,), ("a", "b"), "relation tags"),
    ],
)
def test_invalid_trees(heads, rels, message):
    with pytest.raises(TreeError, match=message):
        DependencyTree(heads, rels)


def test_normalize_relation():
    assert normalize_relation("acl:relcl") == "acl"
    assert normalize_relation("nsubj") == "nsubj"
    assert normalize_relation("weird") == "unk"


# --- root paths --------------------------------------------------------

def test_root_path_worked_example(shark_tree):
    assert shark_tree.heads[1] == 3 and shark_tree.heads[2] == 8
    assert shark_tree.heads[7] == 0
    path = root_path(shark_tree, 2)
    assert path.indexes == (2, 3, 8)
    assert path.directions == (SELF, PARENT, PARENT)
    assert path.kind == "root"


def test_root_path_of_root_is_singleton(shark_tree):
    path = root_path(shark_tree, shark_tree.root)
    assert path.indexes == (8,)
    assert path.directions == (SELF,)


def test_root_path_out_of_range(shark_tree):
    with pytest.raises(ValidationError):
        root_path(shark_tree, 0)
    with pytest.raises(ValidationError):
        root_path(shark_tree, 11)


@given(trees())
def test_root_path_matches_head_iteration(tree):
    for i in range(1, tree.n + 1):
        path = root_path(tree, i)
        assert list(path.indexes) == head_iteration_oracle(tree, i)
        assert path.indexes[-1] == tree.root
        for a, b in zip(path.indexes, path.indexes[1:]):
            assert tree.head(a) == b


# --- adjacent paths ----------------------------------------------------

def test_adjacent_path_worked_example(shark_tree):
    path = adjacent_path(shark_tree, 2, "prev")
    assert path.indexes == (2, 3, 1)
    assert path.directions == (SELF, PARENT, CHILD)
    assert path.kind == "prev"


def test_adjacent_path_direct_edge():
    # head[i] = i - 1 for every non-root word: chains give two-step paths
    tree = DependencyTree((0, 1, 2, 3), ("root", "a", "b", "c"))
    path = adjacent_path(tree, 3, "prev")
    assert path.indexes == (3, 2)
    assert path.directions == (SELF, PARENT)


def test_adjacent_path_bounds(shark_tree):
    with pytest.raises(ValidationError):
        adjacent_path(shark_tree, 1, "prev")
    with pytest.raises(ValidationError):
        adjacent_path(shark_tree, 10, "next")
    with pytest.raises(ValidationError):
        adjacent_path(shark_tree, 3, "sideways")


@given(trees(max_words=40))
def test_adjacent_path_matches_bfs(tree):
    for i in range(2, tree.n + 1):
        assert list(adjacent_path(tree, i, "prev").indexes) == \
            bfs_oracle(tree, i, i - 1)
    for i in range(1, tree.n):
        assert list(adjacent_path(tree, i, "next").indexes) == \
            bfs_oracle(tree, i, i + 1)


@given(trees(max_words=40))
def test_adjacent_path_reversal(tree):
    flip = {SELF: SELF, PARENT: CHILD, CHILD: PARENT}
    for i in range(2, tree.n + 1):
        prev = adjacent_path(tree, i, "prev")
        nxt = adjacent_path(tree, i - 1, "next")
        assert tuple(reversed(prev.indexes)) == nxt.indexes
        # step labels describe the same edges walked the other way
        for y in range(1, len(prev)):
            mirrored = nxt.directions[len(prev) - y]
            assert prev.directions[y] == flip[mirrored]


@given(trees(max_words=40))
def test_path_length_bounds(tree):
    depth = tree.depth()
    for i in range(1, tree.n + 1):
        assert len(root_path(tree, i)) <= depth + 1
        if i >= 2:
            assert len(adjacent_path(tree, i, "prev")) <= 2 * depth + 1


# --- sentence paths ----------------------------------------------------

def test_sentence_paths_single_word_prev():
    tree = DependencyTree((0,), ("root",))
    paths = sentence_paths(tree, "prev")
    assert [p.indexes for p in paths] == [(0,), (1,), (2,)]
    assert [p.directions for p in paths] == [(SELF,), (SELF,), (SELF,)]
    assert [p.kind for p in paths] == ["boundary", "prev", "boundary"]


def test_sentence_paths_root_worked(shark_tree):
    paths = sentence_paths(shark_tree, "root")
    assert len(paths) == 12
    assert paths[2].indexes == (2, 3, 8)
    assert paths[0].indexes == (0,)
    assert paths[11].indexes == (11,)


def test_sentence_paths_prev_first_word_singleton(shark_tree):
    paths = sentence_paths(shark_tree, "prev")
    assert paths[1].indexes == (1,)
    assert paths[2].indexes == (2, 3, 1)
    nxt = sentence_paths(shark_tree, "next")
    assert nxt[10].indexes == (10,)


def test_sentence_paths_rejects_bad_kind(shark_tree):
    with pytest.raises(ValidationError):
        sentence_paths(shark_tree, "boundary")


# --- CoNLL-U -----------------------------------------------------------

def test_parse_two_word_sentence():
    text = ("1\tHello\t_\t_\t_\t_\t2\tnsubj\t_\t_\n"
            "2\tworld\t_\t_\t_\t_\t0\troot\t_\t_\n")
    sentences = parse_conllu(text)
    assert len(sentences) == 1
    assert sentences[0].forms == ("Hello", "world")
    assert sentences[0].tree.heads == (2, 0)
    assert sentences[0].tree.rels == ("nsubj", "root")


def test_parse_cycle_is_error():
    text = ("1\ta\t_\t_\t_\t_\t2\tdep\t_\t_\n"
            "2\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n")
    with pytest.raises(ConlluError, match="no root"):
        parse_conllu(text)


def test_parse_worked_sentence(shark_conllu, shark_tree):
    sentences = parse_conllu(shark_conllu)
    assert len(sentences) == 1
    assert sentences[0].sent_id == "shark"
    assert sentences[0].tree == shark_tree


def test_parse_skips_multiword_and_empty_nodes():
    text = ("# a comment\n"
            "1-2\tdont\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "2\tnot\t_\t_\t_\t_\t1\tadvmod\t_\t_\n"
            "2.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_\n")
    sentences = parse_conllu(text)
    assert sentences[0].forms == ("do", "not")
    assert len(sentences[0].notes) == 2
    assert "1-2" in sentences[0].notes[0]


@pytest.mark.parametrize(
    "line, message",
    [
        ("1\ta\t_\t_\t_\t_\tx\troot\t_\t_", "malformed HEAD"),
        ("1\ta\t_\t_\t_\t_\t9\troot\t_\t_", "out of range"),
        ("1\ta\t_\t_\t_\t_\t0\troot\t_", "10 tab-separated"),
    ],
)
def test_parse_line_errors(line, message):
    with pytest.raises(ConlluError, match=message):
        parse_conllu(line + "\n")


def test_parse_duplicate_ids():
    text = ("1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "1\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n")
    with pytest.raises(ConlluError, match="duplicate word ID"):
        parse_conllu(text)


def test_parse_non_consecutive_ids():
    text = ("1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "3\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n")
    with pytest.raises(ConlluError, match="not consecutive"):
        parse_conllu(text)


def test_parse_multiple_roots_names_sentence():
    text = ("1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n"
            "2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n")
    with pytest.raises(ConlluError, match="sentence 1.*multiple roots"):
        parse_conllu(text)


def test_parse_empty_document():
    assert parse_conllu("") == []
    assert parse_conllu("\n\n# only comments\n\n") == []


@given(st.lists(trees(max_words=12), min_size=1, max_size=4))
def test_conllu_round_trip(tree_list):
    sentences = parse_conllu(serialize_conllu(
        parse_conllu(serialize_conllu(
            _as_sentences(tree_list)
        ))
    ))
    assert [s.tree.heads for s in sentences] == [t.heads for t in tree_list]
    assert [s.tree.rels for s in sentences] == [t.rels for t in tree_list]


def _as_sentences(tree_list):
    from rwen_tts.deptree import ConlluSentence

    return [
        ConlluSentence(
            forms=tuple(f"w{i}" for i in range(1, t.n + 1)),
            tree=t,
            sent_id=f"t{k}",
        )
        for k, t in enumerate(tree_list)
    ]
