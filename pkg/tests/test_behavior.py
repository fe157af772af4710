import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refsteer.behavior import (AERIAL, GROUND, HankelSet, IOTrajectory, LTISystem,
                               concat_columns, hankel, lag, max_pe_order, partition,
                               pe_order, simulate, spans_trajectory, toeplitz_response)
from refsteer.densemath import rank
from refsteer.errors import InvalidInputError, NotObservableError
from refsteer.excitation import PRBSConfig, prbs

from helpers import gauss_rank, lti_data, random_lti


def test_hankel_scalar_example():
    assert np.array_equal(hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])


def test_hankel_single_column():
    seq = np.arange(6.0).reshape(3, 2)
    H = hankel(seq, 3)
    assert H.shape == (6, 1)
    assert np.array_equal(H[:, 0], seq.reshape(-1))


def test_hankel_windows_match_naive():
    seq = np.random.default_rng(2).normal(size=10)
    H = hankel(seq, 4)
    for j in range(7):
        assert np.array_equal(H[:, j], seq[j:j + 4])


def test_hankel_too_short():
    with pytest.raises(InvalidInputError):
        hankel([1.0, 2.0], 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 3), st.data())
def test_hankel_dimension_law(T, c, data):
    L = data.draw(st.integers(1, T))
    H = hankel(np.zeros((T, c)), L)
    assert H.shape == (c * L, T - L + 1)


def test_pe_examples():
    assert not pe_order(np.full(20, 3.0), 2)
    assert not pe_order(np.zeros(5), 1)
    seq = prbs(PRBSConfig(1.0, 1, seed=3, length=60))
    assert pe_order(seq, 10)
    assert gauss_rank(hankel(seq, 10)) == 10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(20, 80))
def test_pe_order_monotone(seed, T):
    seq = np.random.default_rng(seed).choice([-1.0, 1.0], size=T)
    best = max_pe_order(seq)
    for L in range(1, best + 1):
        assert pe_order(seq, L)
    if best < T:
        assert not pe_order(seq, best + 1)


def test_partition_single_column_and_restack():
    rng = np.random.default_rng(0)
    tr = IOTrajectory(1.0, rng.normal(size=(7, 2)), rng.normal(size=(7, 1)))
    hs = partition(tr, 4, 3)
    assert hs.cols == 1
    assert np.array_equal(np.vstack([hs.U_p, hs.U_f]), hankel(tr.u, 7))
    assert hs.U_p.shape == (8, 1) and hs.Y_f.shape == (3, 1)


def test_partition_rank_matches_theory():
    rng = np.random.default_rng(5)
    sys = random_lti(rng, n=2, m=1, p=1)
    L = 6
    tr = lti_data(sys, 200, rng)
    assert pe_order(tr.u, L + 2)
    hs = partition(tr, 3, 3)
    assert rank(hs.stacked(), 1e-8) == L + 2 == gauss_rank(hs.stacked(), 1e-7)


def test_partition_too_short():
    tr = IOTrajectory(1.0, np.zeros(4), np.zeros(4))
    with pytest.raises(InvalidInputError):
        partition(tr, 3, 2)


def test_hankelset_is_read_only():
    tr = lti_data(random_lti(np.random.default_rng(1)), 30, np.random.default_rng(1))
    hs = partition(tr, 3, 2)
    with pytest.raises(ValueError):
        hs.U_p[0, 0] = 1.0


def test_concat_columns():
    rng = np.random.default_rng(9)
    sets = [partition(lti_data(random_lti(rng, 2, 1, 1), 30 + k, rng), 4, 3)
            for k in range(5)]
    assert concat_columns(sets[:1]) is sets[0]
    twice = concat_columns([sets[0], sets[0]])
    assert twice.cols == 2 * sets[0].cols
    assert rank(twice.stacked()) == rank(sets[0].stacked())
    assert concat_columns(sets).cols == sum(s.cols for s in sets)
    with pytest.raises(InvalidInputError):
        concat_columns([sets[0], partition(lti_data(random_lti(rng, 2, 1, 1), 30, rng), 3, 4)])


def test_spans_trajectory_examples():
    rng = np.random.default_rng(12)
    sys = random_lti(rng, n=3, m=1, p=1)
    L = 8
    hs = partition(lti_data(sys, 150, rng), 4, 4)
    col = hs.stacked()[:, 17]
    own = IOTrajectory(1.0, col[:L], col[L:])
    assert spans_trajectory(hs, own) < 1e-10
    fresh = lti_data(sys, L, rng)
    assert spans_trajectory(hs, fresh) < 1e-8
    y = fresh.y.copy()
    y[3, 0] += 1.0
    assert spans_trajectory(hs, IOTrajectory(1.0, fresh.u, y)) > 1e-3
    with pytest.raises(InvalidInputError):
        spans_trajectory(hs, lti_data(sys, L + 1, rng))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fundamental_lemma_property(seed):
    rng = np.random.default_rng(seed)
    sys = random_lti(rng)
    L = 10
    tr = lti_data(sys, 40 * (sys.m + 1) * (L + sys.n), rng)
    assert pe_order(tr.u, L + sys.n)
    hs = partition(tr, 5, 5)
    for _ in range(3):
        assert spans_trajectory(hs, lti_data(sys, L, rng)) < 1e-8


def test_lag_examples():
    full = LTISystem(np.array([[0.5, 0.1], [0.0, 0.3]]), np.eye(2), np.eye(2))
    assert lag(full) == 1
    dint = LTISystem(np.array([[1.0, 1.0], [0.0, 1.0]]), [[0.0], [1.0]], [[1.0, 0.0]])
    assert lag(dint) == 2
    with pytest.raises(NotObservableError):
        lag(LTISystem(np.eye(2), np.ones((2, 1)), np.zeros((1, 2))))


def test_toeplitz_examples():
    rng = np.random.default_rng(4)
    sys = random_lti(rng, 3, 2, 2)
    sys.D = rng.normal(size=(2, 2))
    O, T = toeplitz_response(sys, 1)
    assert np.array_equal(O, sys.C) and np.array_equal(T, sys.D)
    Tf = 6
    O, T = toeplitz_response(sys, Tf)
    imp = np.zeros((Tf, 2))
    imp[0, 0] = 1.0
    y, _ = simulate(sys, imp)
    assert np.allclose(T[:, 0], y.reshape(-1), atol=1e-12)
    x0 = rng.normal(size=3)
    u = rng.normal(size=(Tf, 2))
    y, _ = simulate(sys, u, x0)
    assert np.allclose(O @ x0 + T @ u.reshape(-1), y.reshape(-1), atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unique_continuation(seed):
    # Two different data records give the same continuation once T_ini >= lag.
    rng = np.random.default_rng(seed)
    sys = random_lti(rng)
    Ti, Tf = lag(sys) + 1, 5
    sets = [partition(lti_data(sys, 40 * (sys.m + 1) * (Ti + Tf + sys.n), rng), Ti, Tf)
            for _ in range(2)]
    query = lti_data(sys, Ti + Tf, rng)
    preds = []
    for hs in sets:
        A = np.vstack([hs.U_p, hs.Y_p, hs.U_f])
        b = np.concatenate([query.u[:Ti].reshape(-1), query.y[:Ti].reshape(-1),
                            query.u[Ti:].reshape(-1)])
        g = np.linalg.lstsq(A, b, rcond=None)[0]
        preds.append(hs.Y_f @ g)
    assert np.allclose(preds[0], preds[1], atol=1e-8)
    assert np.allclose(preds[0], query.y[Ti:].reshape(-1), atol=1e-8)


def test_iotrajectory_validation():
    with pytest.raises(InvalidInputError):
        IOTrajectory(0.0, [1.0], [1.0])
    with pytest.raises(InvalidInputError):
        IOTrajectory(1.0, [1.0, 2.0], [1.0])
    with pytest.raises(InvalidInputError):
        IOTrajectory(1.0, [np.nan], [1.0])
    with pytest.raises(InvalidInputError):
        IOTrajectory(1.0, [1.0], [1.0], phase=[2])
    tr = IOTrajectory(1.0, [1.0, 2.0], [3.0, 4.0], phase=[AERIAL, GROUND])
    assert tr.window(1, 2).phase.tolist() == [GROUND]


def test_hankelset_shape_check():
    with pytest.raises(InvalidInputError):
        HankelSet(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 3)), np.zeros((1, 3)),
                  T_ini=2, T_f=2, m=1, p=1)
