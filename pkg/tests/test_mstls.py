import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from trtclosure.mstls import (
    LinearConstraints,
    MSTLSRegressor,
    _smallest_minimizer,
    group_mstls,
    mstls_step,
    select_lambda,
    threshold_bounds,
)


def sparse_problem(seed=0, n=200, J=10, support=(1, 4, 7), noise=0.0):
    r = np.random.default_rng(seed)
    G = r.normal(size=(n, J))
    w = np.zeros(J)
    w[list(support)] = [1.5, -2.0, 0.8][: len(support)]
    return G, G @ w + noise * r.normal(size=n), w


def test_threshold_bounds_formula():
    G = np.array([[1.0, 0.0], [0.0, 4.0]])
    b = np.array([2.0, 0.0])
    L, U = threshold_bounds(G, b, 0.1)
    assert np.allclose(L, [0.2, 0.1])
    assert np.allclose(U, [10.0, 5.0])


def test_recovers_sparse_support():
    G, b, w = sparse_problem(noise=1e-3)
    lam, coef, path = select_lambda(G, b)
    assert set(np.flatnonzero(coef)) == {1, 4, 7}
    assert np.allclose(coef, w, atol=1e-3)


def test_large_lambda_keeps_only_forced():
    G, b, _ = sparse_problem()
    w, s = mstls_step(G, b, 1e6, forced=(2, 5))
    assert list(s) == [2, 5]
    assert np.count_nonzero(w[[0, 1, 3, 4, 6, 7, 8, 9]]) == 0


def test_tiny_lambda_keeps_full_support():
    G, b, _ = sparse_problem(noise=0.1)
    w, s = mstls_step(G, b, 1e-12)
    assert s.size == G.shape[1]
    assert np.allclose(w, np.linalg.lstsq(G, b, rcond=None)[0], atol=1e-9)


def test_smallest_minimizer_on_two_minimum_loss():
    losses = np.array([0.9, 0.3, 0.5, 0.3, 0.7])
    assert _smallest_minimizer(losses) == 1
    assert _smallest_minimizer(np.array([np.inf, 0.2, 0.2])) == 1


def test_select_lambda_picks_smallest_lambda_of_plateau():
    # exact sparse data: every λ in a wide range returns the same model, so
    # the loss is flat there and the smallest λ of the plateau must win
    G, b, _ = sparse_problem()
    lams = np.logspace(-3, -0.5, 30)
    lam, coef, path = select_lambda(G, b, lams)
    best = np.min(path.losses)
    ties = lams[np.isclose(path.losses, best, rtol=1e-12, atol=0)]
    assert ties.size > 1
    assert lam == ties.min()


def test_constraints_are_honored():
    G, b, _ = sparse_problem(noise=1e-2)
    A = np.zeros((1, 10))
    A[0, 1], A[0, 4] = 1.0, 1.0  # w1 + w4 = 0
    C = np.zeros((1, 10))
    C[0, 7] = 1.0  # w7 ≤ 0.5
    cons = LinearConstraints(10, A, C, np.array([0.5]))
    _, coef, _ = select_lambda(G, b, cons=cons)
    assert abs(coef[1] + coef[4]) < 1e-9
    assert coef[7] <= 0.5 + 1e-9


def test_group_mstls_shares_support():
    r = np.random.default_rng(3)
    systems = []
    for p in range(3):
        G = r.normal(size=(150, 8))
        w = np.zeros(8)
        w[[0, 5]] = [1.0 + p, -0.5 * (p + 1)]
        systems.append((G, G @ w + 1e-4 * r.normal(size=150)))
    lam, ws, path = group_mstls(systems)
    supports = [set(np.flatnonzero(w)) for w in ws]
    assert supports[0] == supports[1] == supports[2] == {0, 5}
    assert ws[2][0] == pytest.approx(3.0, rel=1e-3)


def test_group_of_one_reduces_to_select_lambda():
    G, b, _ = sparse_problem(noise=1e-3)
    lam_g, ws, _ = group_mstls([(G, b)])
    lam, w, _ = select_lambda(G, b)
    assert lam_g == lam
    assert np.array_equal(ws[0], w)


def test_group_of_copies_gives_identical_models():
    G, b, _ = sparse_problem(noise=1e-3)
    _, ws, _ = group_mstls([(G, b), (G.copy(), b.copy())])
    assert np.array_equal(ws[0], ws[1])


def test_group_planted_ensemble():
    r = np.random.default_rng(11)
    systems, truths = [], []
    for p in range(4):
        G = r.normal(size=(200, 12))
        w = np.zeros(12)
        w[[2, 7, 9]] = np.array([1.0, -2.0, 0.7]) * (1 + 0.3 * p)
        systems.append((G, G @ w))
        truths.append(w)
    _, ws, _ = group_mstls(systems)
    for w, wt in zip(ws, truths):
        assert set(np.flatnonzero(w)) == {2, 7, 9}
        assert np.max(np.abs(w - wt)) / np.max(np.abs(wt)) < 1e-5


def test_planted_recovery_inside_lambda_window():
    # well-conditioned 20-column system; the window is found by brute force
    r = np.random.default_rng(5)
    G = r.normal(size=(300, 20))
    G /= np.linalg.norm(G, axis=0)
    wt = np.zeros(20)
    wt[[3, 8, 15]] = [0.9, -0.6, 0.4]
    b = G @ wt
    lams = np.logspace(-4, 0, 100)
    window = [lam for lam in lams if set(mstls_step(G, b, lam)[1]) == {3, 8, 15}]
    assert window
    for lam in window:
        w, _ = mstls_step(G, b, lam)
        assert np.max(np.abs(w - wt) / np.abs(wt).max()) < 1e-6
    lam_hat, w, _ = select_lambda(G, b, lams)
    assert lam_hat in window


def test_regressor_sklearn_api():
    G, b, w = sparse_problem(noise=1e-4)
    est = MSTLSRegressor(forced=(1,))
    params = est.get_params()
    assert params["forced"] == (1,) and params["lambdas"] is None
    fitted = clone(est).fit(G, b)
    assert np.allclose(fitted.predict(G), G @ fitted.coef_)
    assert fitted.score(G, b) > 0.999
    assert fitted.kkt_["stationarity"] < 1e-8


def test_regressor_rejects_bad_input():
    with pytest.raises(ValueError):
        MSTLSRegressor().fit(np.ones((5, 2)), np.ones(4))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), lam=st.floats(1e-3, 0.5))
def test_step_support_respects_bounds(seed, lam):
    G, b, _ = sparse_problem(seed, noise=0.05)
    w, s = mstls_step(G, b, lam)
    L, U = threshold_bounds(G, b, lam)
    kept = np.abs(w[s])
    assert np.all(kept >= L[s] * (1 - 1e-9)) and np.all(kept <= U[s] * (1 + 1e-9))
    assert np.count_nonzero(np.delete(w, s)) == 0
