import math

import numpy as np
import pytest

from conftest import random_state
from triadapt.adapter import AdapterState, init_adapter
from triadapt.exceptions import ConfigurationError
from triadapt.importance import (
    FlopCounter,
    NormVariant,
    ScoreBoard,
    evaluate_all,
    normalized_norm,
    score,
)
from triadapt.linalg import RngState, apply_lower_mask, apply_upper_mask


def state_with(L, U, site_id="s", prev=None):
    r = len(L)
    st = AdapterState(
        W0=np.zeros((r, r)),
        A=np.zeros((r, r)),
        B=np.zeros((r, r)),
        L=np.array(L, dtype=float),
        U=np.array(U, dtype=float),
        alpha=1.0,
        site_id=site_id,
    )
    st.norm_record = prev or {"prev_norm": 0.0, "prev_rank": 1}
    return st


class TestNormalizedNorm:
    def test_identity_by_rank(self):
        assert normalized_norm(state_with(np.eye(4), np.zeros((4, 4))), "by_rank") == 0.5

    def test_identity_by_sqrt_rank(self):
        assert normalized_norm(state_with(np.eye(4), np.zeros((4, 4))), "by_sqrt_rank") == 1.0

    def test_split_matrix(self):
        M = np.array([[1.0, 2.0], [0.0, 3.0]])
        st = state_with(apply_lower_mask(M), apply_upper_mask(M))
        assert normalized_norm(st, NormVariant.BY_RANK) == pytest.approx(math.sqrt(14) / 2, rel=1e-15)
        assert normalized_norm(st, NormVariant.NONE) == pytest.approx(math.sqrt(14), rel=1e-15)

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            normalized_norm(state_with(np.eye(2), np.zeros((2, 2))), "by_cube_rank")


class TestScore:
    def test_unchanged_state_scores_zero(self):
        board = ScoreBoard()
        st = random_state(3, 5, 4, 0)
        score(board, st)
        assert score(board, st) == 0.0

    def test_substitution_example(self):
        # previous: ||D|| = 2 at r = 4; now ||D|| = 3 at r = 5
        L = np.zeros((5, 5))
        L[0, 0] = 3.0
        st = state_with(L, np.zeros((5, 5)), prev={"prev_norm": 2.0, "prev_rank": 4})
        board = ScoreBoard("by_rank")
        assert score(board, st) == pytest.approx(0.1, abs=1e-15)
        e = board.entries["s"]
        assert (e.norm, e.prev_norm) == (pytest.approx(0.6), pytest.approx(0.5))
        assert st.norm_record == {"prev_norm": 3.0, "prev_rank": 5}

    def test_negative_scores(self):
        L = np.array([[1.5]])
        st = state_with(L, [[0.0]], prev={"prev_norm": 2.0, "prev_rank": 1})
        assert score(ScoreBoard("none"), st) == -0.5

    def test_first_evaluation_uses_init_record(self):
        st = init_adapter(np.ones((4, 4)), alpha=2.0, rng=RngState(0))
        board = ScoreBoard()
        assert len(board) == 0
        assert score(board, st) == 0.0  # nothing trained since init

    def test_invariant_to_A_B_W0(self):
        st = random_state(3, 6, 5, 1)
        board = ScoreBoard()
        score(board, st)
        st.L = st.L * 1.1
        other = st.copy()
        other.A = other.A + 5.0
        other.B = -other.B
        other.W0 = np.zeros_like(other.W0)
        assert score(ScoreBoard(), st) == score(ScoreBoard(), other)

    def test_evaluate_all_covers_every_site(self):
        states = [random_state(2, 4, 4, s) for s in range(4)]
        board = ScoreBoard()
        out = evaluate_all(board, states, t=50)
        assert set(out) == {s.site_id for s in states}
        assert all(e.t == 50 for e in board.entries.values())

    def test_board_rolls_forward_one_interval(self):
        st = random_state(2, 4, 4, 0)
        board = ScoreBoard()
        evaluate_all(board, [st], t=10)
        first = board.entries[st.site_id].norm
        st.L = st.L * 2
        evaluate_all(board, [st], t=20)
        assert board.entries[st.site_id].prev_norm == first


class TestCost:
    def test_independent_of_n_and_d(self):
        counts = []
        for n, d in ((8, 8), (64, 64), (8, 64), (64, 8)):
            states = [random_state(4, n, d, s) for s in range(6)]
            counter = FlopCounter()
            evaluate_all(ScoreBoard(), states, t=1, counter=counter)
            counts.append(counter.count)
        assert len(set(counts)) == 1

    def test_quadratic_in_rank(self):
        def cost(r):
            c = FlopCounter()
            evaluate_all(ScoreBoard(), [random_state(r, 32, 32, 0)], t=1, counter=c)
            return c.count

        # O(r^2): doubling r roughly quadruples the work
        assert 3.5 < cost(16) / cost(8) < 4.5
