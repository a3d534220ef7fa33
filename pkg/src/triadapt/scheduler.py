"""Global rank budget and per-interval selection of the sites that grow.

The budget starts at ``r_ref * M``. The first update charges the initial
ranks of all ``M`` sites; each later update charges ``delta_r`` per grown
site. Growth is evaluated every ``incre_interval`` steps after the warm-up
``t0`` and stops for good once the budget is no longer positive.

``k`` (sites grown per event) comes from one of three rules:

* ``linear``:    ``ceil(R * a)``
* ``nonlinear``: ``ceil(R ** a)``
* ``fixed_k``:   a constant

with ``a = (t - t0) / (T - t0)``, floored at 1 and capped at ``M``. Both
ceilings are computed exactly in integer arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .exceptions import ConfigurationError, ScheduleError

__all__ = [
    "MODES",
    "ScheduleConfig",
    "BudgetState",
    "alpha_fraction",
    "linear_k",
    "nonlinear_k",
    "fixed_k",
    "select_growth_set",
    "consume_budget",
    "is_update_step",
    "RankScheduler",
]

MODES = ("linear", "nonlinear", "fixed_k")


@dataclass
class ScheduleConfig:
    mode: str = "linear"
    t0: int = 0
    T: int = 100
    k_fixed: int = 1
    incre_interval: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.t0 < self.T:
            raise ConfigurationError(f"need 0 <= t0 < T, got t0={self.t0}, T={self.T}")
        if self.incre_interval < 1:
            raise ConfigurationError("incre_interval must be >= 1")
        if self.k_fixed < 1:
            raise ConfigurationError("k_fixed must be >= 1")


@dataclass
class BudgetState:
    r_ref: int
    M: int
    r_init: int = 1
    delta_r: int = 1
    R_t: int = None
    update_index: int = 0

    def __post_init__(self):
        if self.M < 1 or self.r_ref < 0 or self.r_init < 1 or self.delta_r < 1:
            raise ConfigurationError(
                f"invalid budget constants r_ref={self.r_ref}, M={self.M}, "
                f"r_init={self.r_init}, delta_r={self.delta_r}"
            )
        if self.R_t is None:
            self.R_t = self.R_0

    @property
    def R_0(self) -> int:
        return self.r_ref * self.M

    @property
    def exhausted(self) -> bool:
        return self.R_t <= 0


def alpha_fraction(t, t0, T) -> float:
    """Fraction ``(t - t0) / (T - t0)`` of the post-warm-up horizon elapsed."""
    if t0 >= T:
        raise ScheduleError(f"t0={t0} must be smaller than T={T}")
    if t < t0:
        raise ScheduleError(f"growth requested at t={t} inside warm-up (t0={t0})")
    if t > T:
        raise ScheduleError(f"t={t} is past the horizon T={T}")
    return (t - t0) / (T - t0)


def _clamp(k, M):
    k = max(k, 1)
    if M is not None:
        k = min(k, M)
    return k


def linear_k(R_t, t, t0, T, M=None) -> int:
    alpha_fraction(t, t0, T)
    if R_t < 0:
        raise ScheduleError(f"budget must be non-negative, got {R_t}")
    num = int(R_t) * (t - t0)
    den = T - t0
    return _clamp(-(-num // den), M)


def _ceil_rational_power(R, p, q):
    """Smallest integer m with m**q >= R**p, i.e. ceil(R ** (p/q))."""
    if p == 0:
        return 1
    target = R**p
    m = max(1, math.ceil(R ** (p / q)))
    while m > 1 and (m - 1) ** q >= target:
        m -= 1
    while m**q < target:
        m += 1
    return m


def nonlinear_k(R_t, t, t0, T, M=None) -> int:
    alpha_fraction(t, t0, T)
    if R_t < 1:
        raise ScheduleError(f"nonlinear threshold needs a budget >= 1, got {R_t}")
    p, q = t - t0, T - t0
    g = math.gcd(p, q) or 1
    return _clamp(_ceil_rational_power(int(R_t), p // g, q // g), M)


def fixed_k(k_fixed, M=None) -> int:
    return _clamp(int(k_fixed), M)


def select_growth_set(scores: dict, k: int):
    """Top-``k`` site ids by score, ties to the smaller id, and the threshold.

    Returns ``(selected, s_theta)`` where ``s_theta`` is the smallest
    selected score.
    """
    if not scores:
        raise ScheduleError("no scores to select from")
    if k < 1:
        raise ScheduleError(f"k must be >= 1, got {k}")
    ranked = sorted(scores, key=lambda sid: (-scores[sid], sid))
    selected = ranked[:k]
    s_theta = min(scores[sid] for sid in selected)
    return selected, s_theta


def consume_budget(budget: BudgetState, k=None) -> BudgetState:
    """Charge the budget in place and return it.

    The first call charges ``r_init * M`` for the initial ranks and ignores
    ``k``. Later calls charge ``delta_r * k``. A single overshoot below
    zero is allowed; calling again afterwards is an error.
    """
    if budget.R_t <= 0:
        raise ScheduleError(f"budget exhausted (R={budget.R_t}); no further growth allowed")
    if budget.update_index == 0:
        budget.R_t -= budget.r_init * budget.M
    else:
        if k is None or k < 1:
            raise ScheduleError(f"k must be a positive integer, got {k}")
        budget.R_t -= budget.delta_r * int(k)
    budget.update_index += 1
    return budget


def is_update_step(t, t0, interval) -> bool:
    return t > t0 and (t - t0) % interval == 0


@dataclass
class RankScheduler:
    """Stateful driver around ``BudgetState`` for one training run.

    ``plan`` is called at update boundaries with the fresh scores and the
    ids of sites that still have room to grow; it returns the event record
    (including the selected ids) or ``None`` when the budget gate is shut.
    """

    config: ScheduleConfig
    budget: BudgetState
    events: list = field(default_factory=list)

    def is_boundary(self, t) -> bool:
        return is_update_step(t, self.config.t0, self.config.incre_interval) and t <= self.config.T

    def gate_open(self) -> bool:
        return self.budget.R_t > 0

    def compute_k(self, t, M):
        cfg = self.config
        R = self.budget.R_t
        if cfg.mode == "linear":
            return linear_k(R, t, cfg.t0, cfg.T, M)
        if cfg.mode == "nonlinear":
            return nonlinear_k(R, t, cfg.t0, cfg.T, M)
        return fixed_k(cfg.k_fixed, M)

    def plan(self, t, scores: dict, eligible=None):
        if not self.gate_open():
            return None
        if self.budget.update_index == 0:
            consume_budget(self.budget)
            if not self.gate_open():
                return None
        M = self.budget.M
        candidates = dict(scores) if eligible is None else {s: scores[s] for s in eligible}
        if not candidates:
            return None
        k = min(self.compute_k(t, M), len(candidates))
        selected, s_theta = select_growth_set(candidates, k)
        R_before = self.budget.R_t
        consume_budget(self.budget, len(selected))
        event = {
            "t": int(t),
            "k": len(selected),
            "S_theta": float(s_theta),
            "selected": list(selected),
            "R_before": int(R_before),
            "R_after": int(self.budget.R_t),
            "n_eligible": len(candidates),
        }
        self.events.append(event)
        return event
