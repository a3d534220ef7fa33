import numpy as np
import pytest

from triadapt.adapter import AdapterState
from triadapt.linalg import RngState, apply_lower_mask, apply_upper_mask


def central_diff(f, arr, h=1e-6, mask=None):
    """Central-difference gradient of scalar ``f()`` w.r.t. ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        if mask is not None and not mask[idx]:
            continue
        orig = arr[idx]
        arr[idx] = orig + h
        fp = f()
        arr[idx] = orig - h
        fm = f()
        arr[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def assert_grad_close(analytic, numeric, rtol=1e-5, atol_small=1e-8):
    """Relative error per entry; entries with tiny FD values compared absolutely."""
    small = np.abs(numeric) < atol_small
    abs_err = np.abs(analytic - numeric)
    assert np.all(abs_err[small] < 1e-7), abs_err[small].max()
    big = ~small
    if big.any():
        rel = abs_err[big] / np.abs(numeric[big])
        assert rel.max() < rtol, rel.max()


def random_state(r, n, d, seed, alpha=4.0, epsilon=1e-6, scale=1.0):
    """Adapter with every factor populated (B nonzero), respecting the masks."""
    rng = np.random.default_rng(seed)
    return AdapterState(
        W0=rng.standard_normal((d, n)),
        A=scale * rng.standard_normal((r, n)),
        B=scale * rng.standard_normal((d, r)),
        L=apply_lower_mask(scale * rng.standard_normal((r, r))),
        U=apply_upper_mask(scale * rng.standard_normal((r, r))),
        alpha=alpha,
        epsilon=epsilon,
        site_id=f"s{seed}",
        norm_record={"prev_norm": 1.0, "prev_rank": 1},
    )


@pytest.fixture
def rng():
    return RngState(1234)
