"""Triangular-split low-rank adapter for one frozen weight matrix.

A site holds a frozen ``W0`` (d x n) and the trainable factors ``A`` (r x n),
``B`` (d x r), ``L`` and ``U`` (r x r). The adapted map is::

    h = W0 x + s * B (L + U) A x,     s = alpha / (r + epsilon)

``L`` owns the diagonal and everything below it; ``U`` is strictly upper
triangular. Ranks only grow, by appending rows to ``A``, columns to ``B`` and
border blocks to ``L`` and ``U``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapacityError, ConfigurationError, DimensionError
from .linalg import (
    RngState,
    apply_lower_mask,
    apply_upper_mask,
    as_matrix,
    frobenius_norm,
    gaussian_matrix,
    lower_mask,
    strict_upper_mask,
)

__all__ = [
    "AdapterState",
    "AdapterGrads",
    "init_adapter",
    "forward",
    "forward_batch",
    "delta_weight",
    "grow_rank",
    "orth_penalty",
    "orth_grads",
    "analytic_grads",
    "batch_grads",
    "input_grad",
    "state_to_dict",
    "state_from_dict",
]

INIT_POLICIES = ("gaussian", "zero_B")


@dataclass
class AdapterState:
    W0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    U: np.ndarray
    alpha: float
    epsilon: float = 1e-6
    site_id: str = "site"
    # raw ||L + U||_F and rank at the last importance evaluation
    norm_record: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.norm_record:
            self.norm_record = {"prev_norm": frobenius_norm(self.L + self.U), "prev_rank": self.r}

    @property
    def r(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.W0.shape[0]

    @property
    def n(self) -> int:
        return self.W0.shape[1]

    @property
    def scale(self) -> float:
        return self.alpha / (self.r + self.epsilon)

    @property
    def D(self) -> np.ndarray:
        return self.L + self.U

    def copy(self) -> "AdapterState":
        return AdapterState(
            W0=self.W0,  # frozen, shared
            A=self.A.copy(),
            B=self.B.copy(),
            L=self.L.copy(),
            U=self.U.copy(),
            alpha=self.alpha,
            epsilon=self.epsilon,
            site_id=self.site_id,
            norm_record=dict(self.norm_record),
        )

    def check(self):
        """Raise ``DimensionError`` if shapes or triangular structure are broken."""
        r, d, n = self.r, self.d, self.n
        if self.A.shape != (r, n) or self.B.shape != (d, r):
            raise DimensionError(
                f"{self.site_id}: A {self.A.shape}, B {self.B.shape} inconsistent with r={r}"
            )
        if self.L.shape != (r, r) or self.U.shape != (r, r):
            raise DimensionError(f"{self.site_id}: L/U must be {r}x{r}")
        if np.any(self.L[strict_upper_mask(r)] != 0.0):
            raise DimensionError(f"{self.site_id}: L has entries above the diagonal")
        if np.any(self.U[lower_mask(r)] != 0.0):
            raise DimensionError(f"{self.site_id}: U has entries on or below the diagonal")


@dataclass
class AdapterGrads:
    gA: np.ndarray
    gB: np.ndarray
    gL: np.ndarray
    gU: np.ndarray

    def __iter__(self):
        return iter((self.gA, self.gB, self.gL, self.gU))

    def __add__(self, other):
        return AdapterGrads(*(a + b for a, b in zip(self, other)))

    def scaled(self, c):
        return AdapterGrads(*(c * g for g in self))


def init_adapter(W0, alpha, epsilon=1e-6, std=0.02, rng=None, site_id="site"):
    """Build a rank-1 site around frozen ``W0``.

    ``A`` and ``L`` are Gaussian, ``B`` is zero, so the site initially
    computes exactly ``W0 @ x``. ``U`` is 1x1 and strictly upper, hence zero.
    """
    W0 = as_matrix(W0, "W0")
    if not np.all(np.isfinite(W0)):
        raise ConfigurationError(f"{site_id}: W0 contains non-finite values")
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if not epsilon >= 0:
        raise ConfigurationError(f"epsilon must be non-negative, got {epsilon}")
    if rng is None:
        rng = RngState(0)
    d, n = W0.shape
    W0 = W0.copy()
    W0.flags.writeable = False
    state = AdapterState(
        W0=W0,
        A=gaussian_matrix(1, n, std, rng),
        B=np.zeros((d, 1)),
        L=gaussian_matrix(1, 1, std, rng),
        U=np.zeros((1, 1)),
        alpha=float(alpha),
        epsilon=float(epsilon),
        site_id=site_id,
    )
    state.norm_record = {"prev_norm": frobenius_norm(state.D), "prev_rank": 1}
    return state


def _as_vector(x, size, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != size:
        raise DimensionError(f"{what} must have length {size}, got shape {x.shape}")
    return x


def forward(state: AdapterState, x) -> np.ndarray:
    """Adapted output for one input vector; ``Delta W`` is never formed."""
    x = _as_vector(x, state.n, "x")
    ax = state.A @ x
    dax = state.L @ ax + state.U @ ax
    return state.W0 @ x + state.scale * (state.B @ dax)


def forward_batch(state: AdapterState, X) -> np.ndarray:
    """Row-wise ``forward`` for ``X`` of shape (batch, n)."""
    X = as_matrix(X, "X")
    if X.shape[1] != state.n:
        raise DimensionError(f"{state.site_id}: expected {state.n} input columns, got {X.shape[1]}")
    XA = X @ state.A.T
    XAD = XA @ state.D.T
    return X @ state.W0.T + state.scale * (XAD @ state.B.T)


def delta_weight(state: AdapterState) -> np.ndarray:
    return state.scale * (state.B @ state.D @ state.A)


def grow_rank(state: AdapterState, delta_r: int, init_policy="gaussian", std=0.02, rng=None):
    """Append ``delta_r`` rank units to ``state`` in place and return it.

    Under ``init_policy="gaussian"`` existing entries of A, B, L and U keep
    their positions and values, and every new block is Gaussian: rows of
    ``A``, columns of ``B``, the ``L`` border (dense bottom strip plus lower
    triangular corner) and the ``U`` border (dense right strip plus strictly
    upper corner).

    ``init_policy="zero_B"`` keeps the site's function unchanged across the
    step. New ``B`` columns and the ``U`` right strip start at zero (the strip
    would otherwise feed new directions into the old rows of ``D``), and the
    old ``B`` columns are multiplied by ``(r + delta_r + eps) / (r + eps)`` to
    cancel the drop in ``alpha / (r + eps)``.
    """
    delta_r = int(delta_r)
    if delta_r < 1:
        raise ConfigurationError(f"delta_r must be positive, got {delta_r}")
    if init_policy not in INIT_POLICIES:
        raise ConfigurationError(f"unknown init_policy {init_policy!r}")
    r, d, n = state.r, state.d, state.n
    new_r = r + delta_r
    if new_r > min(n, d):
        raise CapacityError(
            state.site_id, f"rank {r} + {delta_r} exceeds min(n, d) = {min(n, d)}"
        )
    if rng is None:
        rng = RngState(0)

    gaussian = init_policy == "gaussian"
    A_aug = gaussian_matrix(delta_r, n, std, rng)
    B_aug = gaussian_matrix(d, delta_r, std, rng) if gaussian else np.zeros((d, delta_r))
    L_down = gaussian_matrix(delta_r, r, std, rng)
    L_aug = apply_lower_mask(gaussian_matrix(delta_r, delta_r, std, rng))
    U_up = gaussian_matrix(r, delta_r, std, rng) if gaussian else np.zeros((r, delta_r))
    U_aug = apply_upper_mask(gaussian_matrix(delta_r, delta_r, std, rng))
    B_old = state.B
    if not gaussian:
        B_old = B_old * ((new_r + state.epsilon) / (r + state.epsilon))

    L = np.zeros((new_r, new_r))
    L[:r, :r] = state.L
    L[r:, :r] = L_down
    L[r:, r:] = L_aug
    U = np.zeros((new_r, new_r))
    U[:r, :r] = state.U
    U[:r, r:] = U_up
    U[r:, r:] = U_aug

    state.A = np.vstack([state.A, A_aug])
    state.B = np.hstack([B_old, B_aug])
    state.L = L
    state.U = U
    return state


def orth_penalty(state: AdapterState) -> float:
    """``||A A^T - I_r||_F^2 + ||B^T B - I_r||_F^2``."""
    eye = np.eye(state.r)
    ga = state.A @ state.A.T - eye
    gb = state.B.T @ state.B - eye
    return float(np.sum(ga * ga) + np.sum(gb * gb))


def orth_grads(state: AdapterState):
    """Gradients of ``orth_penalty`` with respect to ``A`` and ``B``."""
    eye = np.eye(state.r)
    gA = 4.0 * (state.A @ state.A.T - eye) @ state.A
    gB = 4.0 * state.B @ (state.B.T @ state.B - eye)
    return gA, gB


def _mask_pair(gD):
    r = gD.shape[0]
    return np.where(lower_mask(r), gD, 0.0), np.where(strict_upper_mask(r), gD, 0.0)


def analytic_grads(state: AdapterState, x, upstream) -> AdapterGrads:
    """Gradients of ``upstream . h`` for a single input ``x``."""
    x = _as_vector(x, state.n, "x")
    g = _as_vector(upstream, state.d, "upstream")
    s = state.scale
    D = state.D
    ax = state.A @ x
    btg = state.B.T @ g
    gB = s * np.outer(g, D @ ax)
    gL, gU = _mask_pair(s * np.outer(btg, ax))
    gA = s * np.outer(D.T @ btg, x)
    return AdapterGrads(gA=gA, gB=gB, gL=gL, gU=gU)


def batch_grads(state: AdapterState, X, G) -> AdapterGrads:
    """Sum of ``analytic_grads`` over the rows of ``X`` and ``G``."""
    X = as_matrix(X, "X")
    G = as_matrix(G, "G")
    if X.shape[1] != state.n or G.shape[1] != state.d or X.shape[0] != G.shape[0]:
        raise DimensionError(
            f"{state.site_id}: X {X.shape} / upstream {G.shape} do not fit d={state.d}, n={state.n}"
        )
    s = state.scale
    D = state.D
    XA = X @ state.A.T  # (batch, r)
    GB = G @ state.B  # (batch, r)
    gB = s * (G.T @ (XA @ D.T))
    gL, gU = _mask_pair(s * (GB.T @ XA))
    gA = s * ((GB @ D).T @ X)
    return AdapterGrads(gA=gA, gB=gB, gL=gL, gU=gU)


def input_grad(state: AdapterState, G) -> np.ndarray:
    """Back-propagate upstream rows ``G`` (batch, d) to the inputs (batch, n)."""
    G = as_matrix(G, "G")
    return G @ state.W0 + state.scale * (((G @ state.B) @ state.D) @ state.A)


def _rows(m):
    return [[float(v) for v in row] for row in np.asarray(m)]


def state_to_dict(state: AdapterState) -> dict:
    """JSON-ready record of a site.

    Floats are emitted through ``float.__repr__`` (shortest round-trip form),
    so ``state_from_dict(json.loads(json.dumps(rec)))`` restores every
    payload bit for bit.
    """
    return {
        "site_id": state.site_id,
        "d": state.d,
        "n": state.n,
        "r": state.r,
        "alpha": float(state.alpha),
        "epsilon": float(state.epsilon),
        "W0": _rows(state.W0),
        "A": _rows(state.A),
        "B": _rows(state.B),
        "L": _rows(state.L),
        "U": _rows(state.U),
        "norm_record": {
            "prev_norm": float(state.norm_record["prev_norm"]),
            "prev_rank": int(state.norm_record["prev_rank"]),
        },
    }


def state_from_dict(rec: dict) -> AdapterState:
    d, n, r = int(rec["d"]), int(rec["n"]), int(rec["r"])

    def mat(key, shape):
        arr = np.array(rec[key], dtype=np.float64).reshape(shape)
        return arr

    W0 = mat("W0", (d, n))
    W0.flags.writeable = False
    state = AdapterState(
        W0=W0,
        A=mat("A", (r, n)),
        B=mat("B", (d, r)),
        L=mat("L", (r, r)),
        U=mat("U", (r, r)),
        alpha=float(rec["alpha"]),
        epsilon=float(rec["epsilon"]),
        site_id=rec["site_id"],
        norm_record={
            "prev_norm": float(rec["norm_record"]["prev_norm"]),
            "prev_rank": int(rec["norm_record"]["prev_rank"]),
        },
    )
    state.check()
    return state
