import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_grad_close, central_diff, random_state
from triadapt.adapter import (
    AdapterState,
    analytic_grads,
    batch_grads,
    delta_weight,
    forward,
    forward_batch,
    grow_rank,
    init_adapter,
    input_grad,
    orth_grads,
    orth_penalty,
    state_from_dict,
    state_to_dict,
)
from triadapt.exceptions import CapacityError, DimensionError
from triadapt.linalg import RngState, apply_lower_mask


def triangular_ok(state):
    r = state.r
    return (
        np.all(state.L[np.triu_indices(r, 1)] == 0.0)
        and np.all(state.U[np.tril_indices(r)] == 0.0)
    )


class TestInit:
    def test_zero_B_gives_base_output(self, rng):
        W0 = np.random.default_rng(1).standard_normal((5, 7))
        st_ = init_adapter(W0, alpha=16.0, rng=rng)
        for x in np.random.default_rng(2).standard_normal((10, 7)):
            assert np.array_equal(forward(st_, x), W0 @ x)

    def test_rank_one_and_empty_U(self, rng):
        st_ = init_adapter(np.ones((4, 6)), alpha=8.0, rng=rng)
        assert st_.r == 1
        assert st_.A.shape == (1, 6) and st_.B.shape == (4, 1)
        assert st_.U[0, 0] == 0.0
        assert np.all(st_.B == 0.0)
        assert st_.L[0, 0] != 0.0

    def test_norm_record_seeded_from_initial_D(self, rng):
        st_ = init_adapter(np.ones((4, 6)), alpha=8.0, rng=rng)
        assert st_.norm_record == {"prev_norm": abs(st_.L[0, 0]), "prev_rank": 1}

    def test_W0_is_frozen(self, rng):
        st_ = init_adapter(np.ones((3, 3)), alpha=1.0, rng=rng)
        with pytest.raises(ValueError):
            st_.W0[0, 0] = 2.0


class TestForward:
    def test_hand_example(self):
        eps = 1e-6
        st_ = AdapterState(
            W0=np.zeros((2, 2)),
            A=np.array([[1.0, 0.0]]),
            B=np.array([[3.0], [0.0]]),
            L=np.array([[2.0]]),
            U=np.array([[0.0]]),
            alpha=1 + eps,
            epsilon=eps,
        )
        assert np.allclose(forward(st_, [1.0, 1.0]), [6.0, 0.0], rtol=1e-15, atol=0)
        assert np.allclose(delta_weight(st_), [[6.0, 0.0], [0.0, 0.0]], rtol=1e-15, atol=0)

    def test_matches_materialised_delta(self):
        for seed in range(10):
            st_ = random_state(3, 6, 5, seed)
            x = np.random.default_rng(seed + 100).standard_normal(6)
            h = forward(st_, x)
            ref = st_.W0 @ x + delta_weight(st_) @ x
            assert np.linalg.norm(h - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_batch_matches_rowwise(self):
        st_ = random_state(3, 6, 5, 0)
        X = np.random.default_rng(1).standard_normal((8, 6))
        H = forward_batch(st_, X)
        for x, h in zip(X, H):
            assert np.allclose(h, forward(st_, x), rtol=1e-13, atol=1e-13)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            forward(random_state(2, 4, 3, 0), np.ones(5))

    def test_lora_reduction(self):
        st_ = random_state(3, 6, 5, 4)
        st_.L = np.eye(3)
        st_.U = np.zeros((3, 3))
        x = np.random.default_rng(0).standard_normal(6)
        lora = st_.W0 @ x + st_.scale * (st_.B @ (st_.A @ x))
        assert np.allclose(forward(st_, x), lora, rtol=1e-12, atol=1e-12)


class TestDeltaWeight:
    def test_zero_B(self):
        st_ = random_state(2, 5, 4, 0)
        st_.B[:] = 0.0
        assert np.array_equal(delta_weight(st_), np.zeros((4, 5)))

    @pytest.mark.parametrize("seed", range(10))
    def test_rank_bounded(self, seed):
        r = 1 + seed % 4
        st_ = random_state(r, 9, 8, seed)
        sv = np.linalg.svd(delta_weight(st_), compute_uv=False)
        assert np.sum(sv > 1e-10) <= r


class TestGrow:
    def test_blocks_preserved(self, rng):
        st_ = random_state(2, 8, 7, 3)
        old = st_.copy()
        grow_rank(st_, 1, "gaussian", 0.02, rng)
        assert st_.r == 3
        assert np.array_equal(st_.A[:2], old.A)
        assert np.array_equal(st_.B[:, :2], old.B)
        assert np.array_equal(st_.L[:2, :2], old.L)
        assert np.array_equal(st_.U[:2, :2], old.U)
        assert np.all(st_.L[:2, 2:] == 0.0)
        assert np.all(st_.U[2:, :2] == 0.0)
        assert triangular_ok(st_)
        assert st_.norm_record == old.norm_record
        assert st_.W0 is old.W0

    def test_new_blocks_are_gaussian(self, rng):
        st_ = random_state(2, 8, 7, 3)
        grow_rank(st_, 2, "gaussian", 0.02, rng)
        assert np.all(st_.A[2:] != 0.0)
        assert np.all(st_.B[:, 2:] != 0.0)
        assert np.all(st_.L[2:, :2] != 0.0)  # dense L_down
        assert np.all(st_.U[:2, 2:] != 0.0)  # dense U_up
        assert st_.L[3, 2] != 0.0 and st_.U[2, 3] != 0.0

    def test_triangular_counts(self, rng):
        st_ = init_adapter(np.ones((6, 6)), alpha=2.0, rng=rng)
        st_.U[:] = 0.0
        grow_rank(st_, 4, "gaussian", 0.02, rng)
        assert st_.r == 5
        assert np.count_nonzero(st_.L) == 15
        assert np.count_nonzero(st_.U) == 10

    def test_zero_B_preserves_function(self, rng):
        st_ = random_state(2, 8, 7, 5)
        X = np.random.default_rng(9).standard_normal((100, 8))
        before = forward_batch(st_, X)
        grow_rank(st_, 2, "zero_B", 0.02, rng)
        after = forward_batch(st_, X)
        assert np.max(np.abs(after - before)) <= 1e-15 * max(1.0, np.max(np.abs(before)))
        assert np.all(st_.B[:, 2:] == 0.0)
        assert triangular_ok(st_)

    def test_gaussian_policy_moves_function(self, rng):
        st_ = random_state(2, 8, 7, 5)
        x = np.ones(8)
        before = forward(st_, x)
        grow_rank(st_, 1, "gaussian", 0.5, rng)
        assert not np.allclose(forward(st_, x), before)

    def test_capacity(self, rng):
        st_ = random_state(3, 4, 5, 0)
        with pytest.raises(CapacityError, match="s0"):
            grow_rank(st_, 2, "gaussian", 0.02, rng)
        grow_rank(st_, 1, "gaussian", 0.02, rng)
        assert st_.r == 4

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 3), min_size=1, max_size=5), st.integers(0, 2**32 - 1),
           st.sampled_from(["gaussian", "zero_B"]))
    def test_growth_sequences_keep_structure(self, steps, seed, policy):
        rng = RngState(seed)
        st_ = init_adapter(np.ones((16, 16)), alpha=4.0, rng=rng)
        for dr in steps:
            prev_r = st_.r
            old_L, old_U, old_A = st_.L.copy(), st_.U.copy(), st_.A.copy()
            grow_rank(st_, dr, policy, 0.02, rng)
            assert st_.r == prev_r + dr
            assert np.array_equal(st_.L[:prev_r, :prev_r], old_L)
            assert np.array_equal(st_.U[:prev_r, :prev_r], old_U)
            assert np.array_equal(st_.A[:prev_r], old_A)
            assert triangular_ok(st_)
            st_.check()


class TestOrthogonality:
    def test_orthonormal_factors(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))
        st_ = random_state(3, 6, 6, 0)
        st_.A = Q.T.copy()
        st_.B = Q.copy()
        assert orth_penalty(st_) == pytest.approx(0.0, abs=1e-24)

    def test_zero_B(self):
        Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))
        st_ = random_state(3, 6, 6, 0)
        st_.A = Q.T.copy()
        st_.B[:] = 0.0
        assert orth_penalty(st_) == pytest.approx(3.0, rel=1e-12)

    def test_entrywise_oracle(self):
        st_ = random_state(2, 4, 4, 11)
        A, B, r = st_.A, st_.B, st_.r
        total = 0.0
        for i in range(r):
            for j in range(r):
                ga = sum(A[i, k] * A[j, k] for k in range(A.shape[1])) - (i == j)
                gb = sum(B[k, i] * B[k, j] for k in range(B.shape[0])) - (i == j)
                total += ga * ga + gb * gb
        assert orth_penalty(st_) == pytest.approx(total, rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_vs_finite_differences(self, seed):
        st_ = random_state(1 + seed % 4, 6, 5, seed, scale=0.7)
        gA, gB = orth_grads(st_)
        assert_grad_close(gA, central_diff(lambda: orth_penalty(st_), st_.A))
        assert_grad_close(gB, central_diff(lambda: orth_penalty(st_), st_.B))


class TestGradients:
    def test_zero_input(self):
        st_ = random_state(3, 5, 4, 0)
        g = analytic_grads(st_, np.zeros(5), np.ones(4))
        for m in g:
            assert np.all(m == 0.0)

    def test_zero_B(self):
        st_ = random_state(3, 5, 4, 0)
        st_.B[:] = 0.0
        g = analytic_grads(st_, np.ones(5), np.ones(4))
        assert np.all(g.gA == 0) and np.all(g.gL == 0) and np.all(g.gU == 0)
        assert np.any(g.gB != 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        st_ = random_state(3, 5, 4, seed)
        rng = np.random.default_rng(seed + 50)
        x, up = rng.standard_normal(5), rng.standard_normal(4)
        g = analytic_grads(st_, x, up)

        def loss():
            return float(up @ forward(st_, x))

        r = st_.r
        assert_grad_close(g.gA, central_diff(loss, st_.A))
        assert_grad_close(g.gB, central_diff(loss, st_.B))
        assert_grad_close(g.gL, central_diff(loss, st_.L, mask=np.tril(np.ones((r, r), bool))))
        assert_grad_close(g.gU, central_diff(loss, st_.U, mask=np.triu(np.ones((r, r), bool), 1)))
        assert np.all(g.gL[np.triu_indices(r, 1)] == 0)
        assert np.all(g.gU[np.tril_indices(r)] == 0)

    def test_batch_is_sum_of_single(self):
        st_ = random_state(3, 5, 4, 2)
        rng = np.random.default_rng(0)
        X, G = rng.standard_normal((6, 5)), rng.standard_normal((6, 4))
        total = analytic_grads(st_, X[0], G[0])
        for x, g in zip(X[1:], G[1:]):
            total = total + analytic_grads(st_, x, g)
        batch = batch_grads(st_, X, G)
        for a, b in zip(total, batch):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_input_gradient(self):
        st_ = random_state(2, 5, 4, 3)
        rng = np.random.default_rng(1)
        x, up = rng.standard_normal(5), rng.standard_normal(4)
        gx = input_grad(st_, up[None])[0]
        assert_grad_close(gx, central_diff(lambda: float(up @ forward(st_, x)), x))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            analytic_grads(random_state(2, 5, 4, 0), np.ones(5), np.ones(3))


class TestSerialization:
    def test_round_trip_bit_exact(self, rng):
        st_ = random_state(3, 6, 5, 8)
        st_.A[0, 0] = 0.1 + 0.2  # non-terminating binary fraction
        st_.B[1, 1] = 1e-300
        text = json.dumps(state_to_dict(st_))
        back = state_from_dict(json.loads(text))
        for name in ("W0", "A", "B", "L", "U"):
            assert getattr(back, name).tobytes() == getattr(st_, name).tobytes()
        assert back.alpha == st_.alpha and back.epsilon == st_.epsilon
        assert back.norm_record == st_.norm_record
        assert back.site_id == st_.site_id

    def test_layout(self):
        rec = state_to_dict(random_state(2, 4, 3, 0))
        assert set(rec) >= {"site_id", "d", "n", "r", "alpha", "epsilon", "A", "B", "L", "U", "norm_record"}
        assert (rec["d"], rec["n"], rec["r"]) == (3, 4, 2)
        assert set(rec["norm_record"]) == {"prev_norm", "prev_rank"}

    def test_rejects_broken_triangle(self):
        rec = state_to_dict(random_state(2, 4, 3, 0))
        rec["U"][1][0] = 1.0
        with pytest.raises(DimensionError):
            state_from_dict(rec)
