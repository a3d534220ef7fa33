"""Dense float64 helpers and seeded Gaussian initialisation.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype ``float64``. The
helpers here add the shape checks and error types the rest of the package
relies on; numpy does the arithmetic.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, DimensionError

__all__ = [
    "RngState",
    "as_matrix",
    "matmul",
    "frobenius_norm",
    "gaussian_matrix",
    "apply_lower_mask",
    "apply_upper_mask",
    "lower_mask",
    "strict_upper_mask",
]


class RngState:
    """Seeded Gaussian stream with a draw counter.

    Wraps a PCG64 ``numpy.random.Generator``; PCG64 output is stable across
    platforms and numpy releases, so a seed plus call sequence fixes every
    sample. ``position`` counts scalars drawn so far.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ConfigurationError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def standard_normal(self, shape) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.position += out.size
        return out

    def uniform(self, shape) -> np.ndarray:
        out = self._gen.random(shape)
        self.position += out.size
        return out

    def permutation(self, n: int) -> np.ndarray:
        self.position += n
        return self._gen.permutation(n)

    def spawn(self, index: int) -> "RngState":
        """Independent stream for worker ``index`` (seed XOR index)."""
        return RngState(self.seed ^ int(index))

    def __repr__(self):
        return f"RngState(seed={self.seed}, position={self.position})"


def as_matrix(m, name="matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=np.float64)
    # scaled by the largest entry so tiny or huge entries neither underflow nor overflow
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale == 0.0:
        return 0.0
    s = m / scale
    return scale * float(np.sqrt(np.sum(s * s)))


def gaussian_matrix(rows: int, cols: int, std: float, rng: RngState) -> np.ndarray:
    """Draw a ``rows x cols`` matrix of i.i.d. N(0, std^2) samples."""
    if int(rows) < 1 or int(cols) < 1:
        raise ConfigurationError(f"shape must be positive, got ({rows}, {cols})")
    if not std > 0:
        raise ConfigurationError(f"std must be positive, got {std}")
    return std * rng.standard_normal((int(rows), int(cols)))


def _check_square(m, name):
    m = as_matrix(m, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got {m.shape[0]}x{m.shape[1]}")
    return m


def lower_mask(r: int) -> np.ndarray:
    """Boolean mask of the lower triangle including the diagonal."""
    return np.tril(np.ones((r, r), dtype=bool))


def strict_upper_mask(r: int) -> np.ndarray:
    return np.triu(np.ones((r, r), dtype=bool), k=1)


def apply_lower_mask(m) -> np.ndarray:
    """Zero the entries strictly above the diagonal."""
    m = _check_square(m, "m")
    return np.where(lower_mask(m.shape[0]), m, 0.0)


def apply_upper_mask(m) -> np.ndarray:
    """Zero the diagonal and everything below it.

    The diagonal belongs to the lower factor, so ``apply_lower_mask(m) +
    apply_upper_mask(m)`` rebuilds ``m`` exactly.
    """
    m = _check_square(m, "m")
    return np.where(strict_upper_mask(m.shape[0]), m, 0.0)
