"""Relation-aware word encoding.

Per word, two encodings are built from tree paths and combined: a GRU over
the word-to-root path (each step sees the word vector concatenated with its
relation-tag embedding), and two GRUs over the shortest tree paths to the
previous/next word (each step additionally sees a direction embedding,
which only these adjacent-word branches use). Branch outputs go through
per-branch projections, the adjacent pair is merged, and a final combiner
maps the concatenated branch outputs to the feature size the acoustic
model consumes. Word columns are then repeated per phoneme.

Forward passes are pure given immutable parameters and may run in parallel
across sentences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .deptree import (
    BOUNDARY_RELATION, CHILD, PARENT, RelationPath, SELF, UNIVERSAL_RELATIONS,
    UNK_RELATION, normalize_relation,
)
from .errors import ValidationError
from .nncore import (
    GruCell, Param, gru_forward_masked, init_gru, linear, normal_param,
    uniform_param, zeros_param,
)

RELATION_VOCAB = UNIVERSAL_RELATIONS + (UNK_RELATION, BOUNDARY_RELATION)
_REL_TO_ID = {tag: i for i, tag in enumerate(RELATION_VOCAB)}
_DIR_TO_ID = {SELF: 0, PARENT: 1, CHILD: 2}


@dataclass(frozen=True)
class RwenConfig:
    """Feature sizes and the two ablation switches.

    With both branches disabled the encoder is bypassed entirely and
    contributes an all-zero feature block of width d_out.
    """

    d_h: int
    d_et: int = 64
    d_de: int = 16
    d_out: int = 256
    enable_sre: bool = True
    enable_awre: bool = True

    def __post_init__(self) -> None:
        for name in ("d_h", "d_et", "d_de", "d_out"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    @property
    def bypassed(self) -> bool:
        return not (self.enable_sre or self.enable_awre)


@dataclass
class RwenParams:
    rte: Param          # relation-tag embedding table (d_et, |vocab|)
    de: Param           # direction embedding table (d_de, 3)
    gru_sre: GruCell
    gru_prev: GruCell
    gru_next: GruCell
    w_sre: Param        # (d_h, d_h + d_et)
    b_sre: Param
    w_prev: Param       # (d_h, d_h + d_et + d_de)
    b_prev: Param
    w_next: Param
    b_next: Param
    w_pair: Param       # (d_h, 2 * d_h), merges the two adjacent branches
    b_pair: Param
    w_comb: Param       # (d_out, 2 * d_h), final combiner
    b_comb: Param

    def params(self) -> list[Param]:
        return (
            [self.rte, self.de]
            + self.gru_sre.params() + self.gru_prev.params()
            + self.gru_next.params()
            + [self.w_sre, self.b_sre, self.w_prev, self.b_prev,
               self.w_next, self.b_next, self.w_pair, self.b_pair,
               self.w_comb, self.b_comb]
        )

    def sre_branch_params(self) -> list[Param]:
        """Parameters used only when the root-path branch is enabled."""
        return self.gru_sre.params() + [self.w_sre, self.b_sre]

    def awre_branch_params(self) -> list[Param]:
        """Parameters used only when the adjacent-word branch is enabled."""
        return (
            [self.de] + self.gru_prev.params() + self.gru_next.params()
            + [self.w_prev, self.b_prev, self.w_next, self.b_next,
               self.w_pair, self.b_pair]
        )


def init_rwen_params(config: RwenConfig, *, seed: int,
                     dtype=torch.float32) -> RwenParams:
    gen = torch.Generator().manual_seed(seed)
    d_h, d_et, d_de = config.d_h, config.d_et, config.d_de
    d_sre_in = d_h + d_et
    d_awre_in = d_h + d_et + d_de
    return RwenParams(
        rte=normal_param("rwen.rte", (d_et, len(RELATION_VOCAB)), 0.02, gen, dtype),
        de=normal_param("rwen.de", (d_de, 3), 0.02, gen, dtype),
        gru_sre=init_gru("rwen.gru_sre", d_sre_in, d_sre_in, gen, dtype),
        gru_prev=init_gru("rwen.gru_prev", d_awre_in, d_awre_in, gen, dtype),
        gru_next=init_gru("rwen.gru_next", d_awre_in, d_awre_in, gen, dtype),
        w_sre=uniform_param("rwen.w_sre", (d_h, d_sre_in), d_sre_in, gen, dtype),
        b_sre=zeros_param("rwen.b_sre", (d_h,), dtype),
        w_prev=uniform_param("rwen.w_prev", (d_h, d_awre_in), d_awre_in, gen, dtype),
        b_prev=zeros_param("rwen.b_prev", (d_h,), dtype),
        w_next=uniform_param("rwen.w_next", (d_h, d_awre_in), d_awre_in, gen, dtype),
        b_next=zeros_param("rwen.b_next", (d_h,), dtype),
        w_pair=uniform_param("rwen.w_pair", (d_h, 2 * d_h), 2 * d_h, gen, dtype),
        b_pair=zeros_param("rwen.b_pair", (d_h,), dtype),
        w_comb=uniform_param("rwen.w_comb", (config.d_out, 2 * d_h), 2 * d_h,
                             gen, dtype),
        b_comb=zeros_param("rwen.b_comb", (config.d_out,), dtype),
    )


def relation_ids(rels: Sequence[str]) -> torch.Tensor:
    """Vocabulary ids for one sentence's tags, with boundary slots added."""
    ids = [_REL_TO_ID[BOUNDARY_RELATION]]
    ids += [_REL_TO_ID[normalize_relation(r)] for r in rels]
    ids.append(_REL_TO_ID[BOUNDARY_RELATION])
    return torch.tensor(ids, dtype=torch.long)


def rte_columns(ids: torch.Tensor, params: RwenParams) -> torch.Tensor:
    """Embed precomputed vocabulary ids to (d_et, n + 2)."""
    return params.rte.data[:, ids]


def rte_lookup(rels: Sequence[str], params: RwenParams) -> torch.Tensor:
    """Embed relation tags to a (d_et, n + 2) matrix; unknown tags map to unk."""
    return rte_columns(relation_ids(rels), params)


@dataclass(frozen=True)
class PackedPaths:
    """Path lists padded to a rectangle for batched GRU runs."""

    indexes: torch.Tensor     # (B, L_max) long, tail-padded with 0
    mask: torch.Tensor        # (B, L_max) bool, True on real steps
    directions: torch.Tensor  # (B, L_max) long over {self, parent, child}


def pack_paths(paths: Sequence[RelationPath]) -> PackedPaths:
    longest = max(len(p) for p in paths)
    batch = len(paths)
    indexes = torch.zeros((batch, longest), dtype=torch.long)
    mask = torch.zeros((batch, longest), dtype=torch.bool)
    directions = torch.zeros((batch, longest), dtype=torch.long)
    for b, path in enumerate(paths):
        steps = len(path)
        indexes[b, :steps] = torch.tensor(path.indexes, dtype=torch.long)
        mask[b, :steps] = True
        directions[b, :steps] = torch.tensor(
            [_DIR_TO_ID[d] for d in path.directions], dtype=torch.long
        )
    return PackedPaths(indexes, mask, directions)


def _packed(paths) -> PackedPaths:
    return paths if isinstance(paths, PackedPaths) else pack_paths(paths)


def sre_forward(hw: torch.Tensor, et: torch.Tensor, paths,
                params: RwenParams) -> torch.Tensor:
    """Encode every word-to-root path; returns (d_h, n + 2).

    Step inputs are word columns concatenated with their relation-tag
    embeddings, gathered along the path; the projection of each last hidden
    state is the output column.
    """
    packed = _packed(paths)
    seq = torch.cat([hw[:, packed.indexes], et[:, packed.indexes]], dim=0)
    last = gru_forward_masked(params.gru_sre, seq, packed.mask)
    return linear(params.w_sre, params.b_sre, last)


def awre_forward(hw: torch.Tensor, et: torch.Tensor, prev_paths, next_paths,
                 params: RwenParams) -> torch.Tensor:
    """Encode shortest paths to the previous and next word; (d_h, n + 2).

    Each step additionally sees the direction embedding of how the path
    moved (self/parent/child). The two branch outputs are concatenated and
    merged by one projection.
    """
    def branch(paths, cell, w, b):
        packed = _packed(paths)
        seq = torch.cat(
            [hw[:, packed.indexes], et[:, packed.indexes],
             params.de.data[:, packed.directions]],
            dim=0,
        )
        last = gru_forward_masked(cell, seq, packed.mask)
        return linear(w, b, last)

    out_prev = branch(prev_paths, params.gru_prev, params.w_prev, params.b_prev)
    out_next = branch(next_paths, params.gru_next, params.w_next, params.b_next)
    both = torch.cat([out_prev, out_next], dim=0)
    return linear(params.w_pair, params.b_pair, both)


def combine(o_sre, o_awre, params: RwenParams, config: RwenConfig) -> torch.Tensor:
    """Merge branch outputs into (d_out, n + 2) word features.

    A disabled branch contributes a zero block of its usual shape, keeping
    parameter shapes identical across ablation configurations.
    """
    if config.bypassed:
        raise ValidationError("combine called with both branches disabled")
    ref = o_sre if config.enable_sre else o_awre
    if config.enable_sre and o_sre is None:
        raise ValidationError("enable_sre is set but no branch output given")
    if config.enable_awre and o_awre is None:
        raise ValidationError("enable_awre is set but no branch output given")
    zero = torch.zeros((config.d_h, ref.shape[1]), dtype=ref.dtype)
    stacked = torch.cat(
        [o_sre if config.enable_sre else zero,
         o_awre if config.enable_awre else zero],
        dim=0,
    )
    return linear(params.w_comb, params.b_comb, stacked)


def upsample_to_phonemes(word_features: torch.Tensor,
                         phoneme_counts) -> torch.Tensor:
    """Repeat each word column once per phoneme; boundary columns carry none.

    ``word_features`` is (d_out, n + 2); the result is (d_out, sum(counts)).
    """
    counts = torch.as_tensor(phoneme_counts, dtype=torch.long)
    if counts.numel() != word_features.shape[1] - 2:
        raise ValidationError(
            f"{counts.numel()} phoneme counts for "
            f"{word_features.shape[1] - 2} words"
        )
    if (counts < 0).any():
        raise ValidationError("negative phoneme count")
    return torch.repeat_interleave(word_features[:, 1:-1], counts, dim=1)


def rwen_forward(hw: torch.Tensor, rels, root_paths, prev_paths,
                 next_paths, params: RwenParams,
                 config: RwenConfig) -> torch.Tensor:
    """Full word-feature forward honoring the ablation flags.

    ``rels`` is either the sentence's tag sequence or a precomputed id
    tensor from :func:`relation_ids`.
    """
    if config.bypassed:
        return torch.zeros((config.d_out, hw.shape[1]), dtype=hw.dtype)
    et = (rte_columns(rels, params) if isinstance(rels, torch.Tensor)
          else rte_lookup(rels, params))
    o_sre = sre_forward(hw, et, root_paths, params) if config.enable_sre else None
    o_awre = (awre_forward(hw, et, prev_paths, next_paths, params)
              if config.enable_awre else None)
    return combine(o_sre, o_awre, params, config)
