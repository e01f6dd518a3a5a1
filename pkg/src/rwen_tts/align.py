"""Subword-to-word pooling of contextual embedding matrices.

Matrices are feature-by-position: column 0 is the [CLS] slot, the last
column the [SEP] slot. Pooling is a pure function and safe for parallel
batch use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


class SegmentationError(ValidationError):
    """Subword spans do not tile the interior subword positions."""


@dataclass(frozen=True)
class SubwordSegmentation:
    """Half-open subword spans per word over interior positions 1..m.

    Spans must be sorted, non-empty, contiguous, and cover [1, m + 1)
    exactly, so every interior subword belongs to exactly one word.
    """

    spans: tuple[tuple[int, int], ...]
    m: int

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "spans", tuple((int(s), int(e)) for s, e in self.spans)
        )
        if not self.spans:
            raise SegmentationError("at least one word span required")
        if self.spans[0][0] != 1:
            raise SegmentationError(
                f"first span starts at {self.spans[0][0]}, expected 1"
            )
        for w, (start, end) in enumerate(self.spans, start=1):
            if start >= end:
                raise SegmentationError(f"span {w} ({start}, {end}) is empty")
            if w < len(self.spans) and end != self.spans[w][0]:
                raise SegmentationError(
                    f"span {w} ends at {end} but span {w + 1} starts at "
                    f"{self.spans[w][0]}"
                )
        if self.spans[-1][1] != self.m + 1:
            raise SegmentationError(
                f"spans cover [1, {self.spans[-1][1]}) but m={self.m} requires "
                f"[1, {self.m + 1})"
            )

    @property
    def n(self) -> int:
        return len(self.spans)

    @classmethod
    def from_widths(cls, widths: list[int]) -> "SubwordSegmentation":
        spans, start = [], 1
        for w in widths:
            spans.append((start, start + w))
            start += w
        return cls(tuple(spans), start - 1)


def word_average_pool(subword, seg: SubwordSegmentation):
    """Mean-pool interior subword columns into one column per word.

    Accepts a (d, m + 2) numpy array or torch tensor; boundary columns 0 and
    m+1 are copied through to output columns 0 and n+1. Means are taken in
    double precision then cast back to the input dtype, which makes the
    result independent of summation order.
    """
    if subword.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got {subword.ndim}-D")
    if subword.shape[1] != seg.m + 2:
        raise SegmentationError(
            f"matrix has {subword.shape[1]} columns but segmentation needs "
            f"{seg.m + 2}"
        )
    if isinstance(subword, np.ndarray):
        if not np.isfinite(subword).all():
            raise ValidationError("non-finite entries in subword matrix")
        out = np.empty((subword.shape[0], seg.n + 2), dtype=subword.dtype)
        out[:, 0] = subword[:, 0]
        out[:, -1] = subword[:, -1]
        for w, (start, end) in enumerate(seg.spans, start=1):
            out[:, w] = (
                subword[:, start:end].astype(np.float64).mean(axis=1)
            ).astype(subword.dtype)
        return out

    import torch

    if not torch.isfinite(subword).all():
        raise ValidationError("non-finite entries in subword matrix")
    cols = [subword[:, :1]]
    for start, end in seg.spans:
        cols.append(
            subword[:, start:end]
            .to(torch.float64)
            .mean(dim=1, keepdim=True)
            .to(subword.dtype)
        )
    cols.append(subword[:, -1:])
    return torch.cat(cols, dim=1)
