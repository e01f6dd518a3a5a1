"""Contextual-encoder backends producing subword tokens with offsets plus
one embedding column per token (and the two boundary columns).

The "hash" backend is a deterministic offline stand-in: it chunks words
into short subword pieces and derives every column from a counter-based
hash, so re-exports are byte-identical. "hf:<model>" wraps a Hugging Face
encoder when transformers is installed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .parsing import BackendUnavailable

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_WORDISH = re.compile(r"\w+|[^\w\s]", re.UNICODE)

HASH_CHUNK = 4  # max characters per builtin subword piece


@dataclass(frozen=True)
class SubwordToken:
    text: str
    start: int
    end: int


@dataclass(frozen=True)
class EncoderResult:
    tokens: tuple[SubwordToken, ...]
    matrix: np.ndarray  # (d_h, m + 2) float32, columns 0 / m+1 = boundaries


Encoder = Callable[[str, str], "EncoderResult | None"]


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def _key(*parts: int) -> int:
    k = 0
    for p in parts:
        k = _mix64_int(k ^ _mix64_int(p & _MASK64))
    return k


def _normal_column(key: int, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    ctr = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    raw = _mix64(np.uint64(key & _MASK64) + ctr * _GAMMA)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = (2.0 * math.pi) * u[1::2]
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:count]


def hash_subwords(text: str) -> list[SubwordToken]:
    """Word-ish pieces further chunked to at most HASH_CHUNK characters."""
    tokens = []
    for m in _WORDISH.finditer(text):
        start = m.start()
        piece = m.group()
        for off in range(0, len(piece), HASH_CHUNK):
            chunk = piece[off:off + HASH_CHUNK]
            tokens.append(
                SubwordToken(chunk, start + off, start + off + len(chunk))
            )
    return tokens


def make_hash_encoder(d_h: int, seed: int) -> Encoder:
    def encode(text: str, sentence_id: str) -> EncoderResult | None:
        tokens = hash_subwords(text)
        if not tokens:
            return None
        sent_key = _key(seed, _fnv1a64(sentence_id))
        cols = len(tokens) + 2
        out = np.empty((cols, d_h), dtype=np.float64)
        for p in range(cols):
            out[p] = _normal_column(_key(sent_key, p), d_h)
        return EncoderResult(
            tokens=tuple(tokens),
            matrix=np.ascontiguousarray(out.T, dtype=np.float32),
        )

    return encode


def make_hf_encoder(model_name: str, d_h_unused: int, seed_unused: int) -> Encoder:
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise BackendUnavailable(
            "encoder 'hf:...' needs transformers and torch installed"
        ) from exc
    tokenizer = AutoTokenizer.from_pretrained(model_name)
    model = AutoModel.from_pretrained(model_name)
    model.eval()

    def encode(text: str, sentence_id: str) -> EncoderResult | None:
        enc = tokenizer(text, return_offsets_mapping=True, return_tensors="pt")
        offsets = enc.pop("offset_mapping")[0].tolist()
        with torch.no_grad():
            hidden = model(**enc).last_hidden_state[0]  # (m + 2, d_h)
        tokens = []
        interior = [i for i, (s, e) in enumerate(offsets) if e > s]
        for i in interior:
            s, e = offsets[i]
            tokens.append(SubwordToken(text[s:e], s, e))
        if not tokens:
            return None
        order = [0] + interior + [len(offsets) - 1]
        matrix = hidden[order].T.contiguous().numpy().astype(np.float32)
        return EncoderResult(tokens=tuple(tokens), matrix=matrix)

    return encode


def get_encoder(name: str, *, d_h: int, seed: int) -> Encoder:
    if name == "hash":
        return make_hash_encoder(d_h, seed)
    if name.startswith("hf:"):
        return make_hf_encoder(name[3:], d_h, seed)
    raise BackendUnavailable(f"unknown encoder backend {name!r}")
