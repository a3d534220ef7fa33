"""Importance scores from the change in normalised ``||L + U||_F``.

A site's score is the difference between its current normalised norm and
the one recorded at the previous evaluation. Only ``L``, ``U`` and the rank
enter the computation, so evaluating a site costs O(r^2) no matter how
large ``W0``, ``A`` or ``B`` are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .exceptions import ConfigurationError
from .linalg import frobenius_norm

__all__ = [
    "NormVariant",
    "FlopCounter",
    "ScoreEntry",
    "ScoreBoard",
    "normalize",
    "normalized_norm",
    "score",
    "evaluate_all",
]


class NormVariant(str, Enum):
    BY_RANK = "by_rank"
    BY_SQRT_RANK = "by_sqrt_rank"
    NONE = "none"

    @classmethod
    def parse(cls, value):
        try:
            return cls(value)
        except ValueError:
            raise ConfigurationError(
                f"unknown norm variant {value!r}; expected one of {[v.value for v in cls]}"
            ) from None


class FlopCounter:
    """Tally of floating-point operations spent on importance evaluation."""

    def __init__(self):
        self.count = 0

    def add(self, n):
        self.count += int(n)

    def reset(self):
        self.count = 0


def normalize(raw_norm: float, rank: int, variant) -> float:
    variant = NormVariant.parse(variant)
    if variant is NormVariant.BY_RANK:
        return raw_norm / rank
    if variant is NormVariant.BY_SQRT_RANK:
        return raw_norm / math.sqrt(rank)
    return raw_norm


def _raw_norm(state, counter):
    L, U = state.L, state.U
    norm = frobenius_norm(L + U)
    if counter is not None:
        k = L.size
        # L+U, max-abs scan, rescale, square, sum (k-1), then sqrt and rescale
        counter.add(k + k + k + k + (k - 1) + 2)
    return norm


def normalized_norm(state, variant=NormVariant.BY_RANK, counter=None) -> float:
    raw = _raw_norm(state, counter)
    if counter is not None and NormVariant.parse(variant) is not NormVariant.NONE:
        counter.add(1)
    return normalize(raw, state.r, variant)


@dataclass
class ScoreEntry:
    norm: float
    prev_norm: float
    score: float
    rank: int
    prev_rank: int
    t: int


@dataclass
class ScoreBoard:
    """Latest score per site, keyed by ``site_id``."""

    variant: NormVariant = NormVariant.BY_RANK
    entries: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        self.variant = NormVariant.parse(self.variant)

    def scores(self) -> dict:
        return {sid: e.score for sid, e in self.entries.items()}

    def __len__(self):
        return len(self.entries)


def score(board: ScoreBoard, state, variant=None, t=None, counter=None) -> float:
    """Score ``state`` against its previous record and roll the record forward.

    The previous record lives on ``state.norm_record`` as a raw norm plus the
    rank it was measured at; it is seeded when the adapter is built, so the
    first evaluation is well defined.
    """
    variant = board.variant if variant is None else NormVariant.parse(variant)
    raw = _raw_norm(state, counter)
    now = normalize(raw, state.r, variant)
    rec = state.norm_record
    prev = normalize(rec["prev_norm"], rec["prev_rank"], variant)
    if counter is not None:
        counter.add(1 + (2 if variant is not NormVariant.NONE else 0))
    s = now - prev
    board.entries[state.site_id] = ScoreEntry(
        norm=now,
        prev_norm=prev,
        score=s,
        rank=state.r,
        prev_rank=int(rec["prev_rank"]),
        t=board.t if t is None else int(t),
    )
    state.norm_record = {"prev_norm": raw, "prev_rank": state.r}
    return s


def evaluate_all(board: ScoreBoard, states, t, counter=None) -> dict:
    """Score every site at step ``t``; returns ``{site_id: score}``."""
    board.t = int(t)
    return {st.site_id: score(board, st, t=t, counter=counter) for st in states}
