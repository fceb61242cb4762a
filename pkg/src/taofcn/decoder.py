"""Column integration and segmentation beam search.

A decode path tiles the columns ``[0, W)`` with contiguous segments, each
labelled with a character class or background. Its score is the mean, over
all columns, of the probability of the label assigned to that column.
Background segments emit nothing; adjacent character segments are allowed.

Ranking among complete paths: higher score, then shorter transcript, then
lexicographically smaller transcript (as class ids), then fewer segments.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import DenseOutput

MAX_ENUMERATION = 10 ** 7


class EnumerationRefused(ValueError):
    """The exhaustive decoder was asked to enumerate too many paths."""


@dataclass
class ColumnSeries:
    probs: np.ndarray  # (W, C) float64, background is the last channel
    charset: str
    stride: int = 1
    offset: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1:
            raise ValueError(f"series must be (W, C) with W >= 1, got {self.probs.shape}")
        if self.probs.shape[1] != len(self.charset) + 1:
            raise ValueError(f"{self.probs.shape[1]} channels do not match charset {self.charset!r} + background")

    @property
    def width(self) -> int:
        return self.probs.shape[0]

    @property
    def background(self) -> int:
        return self.probs.shape[1] - 1


@dataclass
class BeamConfig:
    beam_width: int = 16
    min_char_width: int = 2

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.min_char_width < 1:
            raise ValueError("min_char_width must be >= 1")


@dataclass
class DecodePath:
    segments: list[tuple[int, int, int]]  # (start, end exclusive, label)
    score_sum: float = 0.0

    def transcript(self, charset: str, background: int) -> str:
        return "".join(charset[l] for _, _, l in self.segments if l != background)


@dataclass
class DecodeResult:
    transcript: str
    path: DecodePath
    score: float

    def to_json(self, sample_id: str, charset: str, background: int) -> str:
        segs = [[s, e, None if l == background else charset[l]] for s, e, l in self.path.segments]
        return json.dumps({"sample_id": sample_id, "transcript": self.transcript,
                           "score": self.score, "segments": segs})


def integrate_columns(dense: DenseOutput, charset: str) -> ColumnSeries:
    """Average the probability vectors of every column over its rows."""
    if dense.probs.shape[1] < 1:
        raise ValueError("dense map has zero height")
    probs = dense.probs.astype(np.float64).mean(axis=1).T
    return ColumnSeries(probs, charset, dense.stride, dense.offset[1])


def check_tiling(path: DecodePath, width: int) -> None:
    pos = 0
    for s, e, _ in path.segments:
        if s != pos or e <= s:
            raise ValueError(f"segments do not tile [0, {width}) contiguously: {path.segments}")
        pos = e
    if pos != width:
        raise ValueError(f"segments cover [0, {pos}) but the series has {width} columns")


def score_path(path: DecodePath, series: ColumnSeries) -> float:
    """Mean over all columns of the probability of the column's segment label."""
    check_tiling(path, series.width)
    total = 0.0
    for s, e, label in path.segments:
        for t in range(s, e):
            total += series.probs[t, label]
    return total / series.width


def _rank_key(score_sum: float, transcript: tuple, nsegs: int):
    return (-score_sum, len(transcript), transcript, nsegs)


@dataclass
class _Hyp:
    label: int
    run: int
    score_sum: float
    transcript: tuple
    segments: list  # closed segments plus the open one as [start, label]
    start: int

    def key(self):
        return _rank_key(self.score_sum, self.transcript, len(self.segments) + 1)


def beam_search(series: ColumnSeries, config: BeamConfig | None = None) -> DecodeResult:
    """Left-to-right beam over segment tilings.

    Hypotheses sharing the same open label (and, for characters, the same run
    length up to ``min_char_width``) have identical futures, so only the best
    of them is kept before the top ``beam_width`` are selected.
    """
    config = config or BeamConfig()
    p = series.probs
    bg, mw = series.background, config.min_char_width
    nlab = p.shape[1]

    def state(h):
        return (h.label, 0 if h.label == bg else min(h.run, mw))

    def closable(h):
        return h.label == bg or h.run >= mw

    def prune(hyps):
        best = {}
        for h in hyps:
            s = state(h)
            if s not in best or h.key() < best[s].key():
                best[s] = h
        return sorted(best.values(), key=_Hyp.key)[: config.beam_width]

    beam = prune([_Hyp(l, 1, 0.0 + p[0, l], () if l == bg else (l,), [], 0) for l in range(nlab)])
    for t in range(1, series.width):
        cand = []
        for h in beam:
            cand.append(_Hyp(h.label, h.run + 1, h.score_sum + p[t, h.label], h.transcript, h.segments, h.start))
            if closable(h):
                closed = h.segments + [(h.start, t, h.label)]
                for l in range(nlab):
                    tr = h.transcript if l == bg else h.transcript + (l,)
                    cand.append(_Hyp(l, 1, h.score_sum + p[t, l], tr, closed, t))
        beam = prune(cand)
    finals = [h for h in beam if closable(h)]
    if not finals:
        # every surviving hypothesis ends in a too-short character run
        return _fallback_background(series)
    best = min(finals, key=_Hyp.key)
    path = DecodePath(best.segments + [(best.start, series.width, best.label)], best.score_sum)
    return DecodeResult(path.transcript(series.charset, bg), path, best.score_sum / series.width)


def _fallback_background(series: ColumnSeries) -> DecodeResult:
    bg = series.background
    total = 0.0
    for t in range(series.width):
        total += series.probs[t, bg]
    path = DecodePath([(0, series.width, bg)], total)
    return DecodeResult("", path, total / series.width)


def count_paths(width: int, num_labels: int, min_char_width: int = 2) -> int:
    """Number of valid label tilings (paths) of ``width`` columns."""
    chars = num_labels - 1
    # ways[t]: tilings of the first t columns
    ways = [0] * (width + 1)
    ways[0] = 1
    for t in range(1, width + 1):
        total = 0
        for length in range(1, t + 1):
            choices = 1 + (chars if length >= min_char_width else 0)
            total += ways[t - length] * choices
        ways[t] = total
    return ways[width]


def exhaustive_decode(series: ColumnSeries, min_char_width: int = 2, limit: int = MAX_ENUMERATION) -> DecodeResult:
    """Enumerate every valid tiling and return the best under the beam's ranking."""
    n = count_paths(series.width, series.probs.shape[1], min_char_width)
    if n > limit:
        raise EnumerationRefused(f"{n} paths exceed the enumeration limit {limit}")
    p = series.probs
    bg, W = series.background, series.width
    best = None

    def visit(t, label, run, total, transcript, segments, start):
        nonlocal best
        total = total + p[t, label]
        done = label == bg or run >= min_char_width
        if t == W - 1:
            if done:
                key = _rank_key(total, transcript, len(segments) + 1)
                if best is None or key < best[0]:
                    best = (key, segments + [(start, W, label)], total)
            return
        visit(t + 1, label, run + 1, total, transcript, segments, start)
        if done:
            closed = segments + [(start, t + 1, label)]
            for l in range(p.shape[1]):
                visit(t + 1, l, 1, total, transcript if l == bg else transcript + (l,), closed, t + 1)

    for l in range(p.shape[1]):
        visit(0, l, 1, 0.0, () if l == bg else (l,), [], 0)
    if best is None:
        return _fallback_background(series)
    path = DecodePath(best[1], best[2])
    return DecodeResult(path.transcript(series.charset, bg), path, best[2] / W)


def decode_dense(dense: DenseOutput, charset: str, config: BeamConfig | None = None) -> DecodeResult:
    return beam_search(integrate_columns(dense, charset), config)
