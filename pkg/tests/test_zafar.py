import cvxpy as cp
import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, strategies as st
from scipy.optimize import nnls

from fairfit.errors import SchemaError
from fairfit.zafar import (
    fit_zlm, fit_zlm_orig, fit_zlrm, fit_zlrm_orig, marginal_stats)

from conftest import correlated, response

BINARY = {"gaussian": False, "binomial": True}


def instance(rng, kind="gaussian", n=300, p=4, q=2, strength=1.5):
    X, S = correlated(rng, n, p, q, mix=1.0)
    y, _ = response(rng, kind, X, S, strength=strength)
    return y, X, S


def cvx_oracle(kind, y, X, S, c):
    """Covariance-bounded fit solved by a generic conic solver."""
    n, p = X.shape
    A = (S - S.mean(0)).T @ (X - X.mean(0)) / (n - 1)
    b0, b = cp.Variable(), cp.Variable(p)
    eta = b0 + X @ b
    if kind == "gaussian":
        loss = 0.5 * cp.sum_squares(y - eta)
    else:
        loss = cp.sum(cp.logistic(eta) - cp.multiply(y, eta))
    prob = cp.Problem(cp.Minimize(loss), [cp.abs(A @ b) <= c])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    return float(b0.value), np.asarray(b.value), float(prob.value)


def loss(kind, y, eta):
    if kind == "gaussian":
        return 0.5 * float(np.sum((y - eta) ** 2))
    return float(np.sum(np.logaddexp(0, eta) - y * eta))


def eta_of(m, X):
    return m.coefficients.intercept + X @ m.coefficients.beta


@pytest.mark.parametrize("kind,fit", [("gaussian", fit_zlm_orig), ("binomial", fit_zlrm_orig)])
@pytest.mark.parametrize("c", [0.0, 0.02, 0.1])
def test_covariance_form_matches_conic_solver(rng, kind, fit, c):
    y, X, S = instance(rng, kind)
    m = fit(y, X, S, c)
    b0, b, val = cvx_oracle(kind, y, X, S, c)
    ours = loss(kind, y, eta_of(m, X))
    assert ours <= val + 1e-6 * (1 + abs(val))
    assert abs(ours - val) <= 1e-6 * (1 + abs(val))
    assert np.allclose(m.coefficients.beta, b, atol=1e-4)
    cov, _ = marginal_stats(X, S, m.coefficients.beta)
    assert np.all(np.abs(cov) <= c + 1e-6)


@pytest.mark.parametrize("kind,fit", [("gaussian", fit_zlm), ("binomial", fit_zlrm)])
@pytest.mark.parametrize("r", [0.05, 0.2])
def test_correlation_form_is_optimal_at_its_own_bound(rng, kind, fit, r):
    y, X, S = instance(rng, kind)
    m = fit(y, X, S, r)
    _, corr = marginal_stats(X, S, m.coefficients.beta)
    assert np.max(np.abs(corr)) <= r + 1e-6
    c = r * np.std(X @ m.coefficients.beta, ddof=1) * np.std(S, axis=0, ddof=1)
    _, b, val = cvx_oracle(kind, y, X, S, c)
    assert abs(loss(kind, y, eta_of(m, X)) - val) <= 1e-6 * (1 + abs(val))
    assert np.allclose(m.coefficients.beta, b, atol=1e-4)


def test_r_one_is_ols(rng):
    y, X, S = instance(rng)
    m = fit_zlm(y, X, S, 1.0)
    ref = sm.OLS(y, sm.add_constant(X)).fit().params
    assert np.allclose([m.coefficients.intercept, *m.coefficients.beta], ref, atol=1e-5)


def test_r_one_is_logistic_mle(rng):
    y, X, S = instance(rng, "binomial", strength=0.8)
    m = fit_zlrm(y, X, S, 1.0)
    ref = sm.Logit(y, sm.add_constant(X)).fit(disp=0, tol=1e-12).params
    assert np.allclose([m.coefficients.intercept, *m.coefficients.beta], ref, atol=1e-5)


def test_huge_covariance_bound_is_unconstrained(rng):
    y, X, S = instance(rng)
    a, b = fit_zlm_orig(y, X, S, 1e12), fit_zlm(y, X, S, 1.0)
    assert np.allclose(a.coefficients.beta, b.coefficients.beta, atol=1e-10)


def test_shared_column_at_zero_gives_null_model(rng):
    n = 200
    z = rng.normal(size=(n, 1))
    y = 2 + 3 * z[:, 0] + rng.normal(size=n)
    for m in (fit_zlm(y, z, z, 0.0), fit_zlm_orig(y, z, z, 0.0)):
        assert np.abs(m.coefficients.beta).max() <= 1e-10
        assert m.coefficients.intercept == pytest.approx(y.mean(), abs=1e-10)
    yb = (y > 2).astype(float)
    for m in (fit_zlrm(yb, z, z, 0.0), fit_zlrm_orig(yb, z, z, 0.0)):
        assert np.abs(m.coefficients.beta).max() <= 1e-8
        assert m.coefficients.intercept == pytest.approx(
            np.log(yb.mean() / (1 - yb.mean())), abs=1e-8)


def test_separable_by_sensitive_data(rng):
    n = 400
    S = rng.normal(size=(n, 1))
    X = np.hstack([S + 0.3 * rng.normal(size=(n, 1)), rng.normal(size=(n, 2))])
    y = (S[:, 0] + 0.2 * X[:, 1] > 0).astype(float)
    free, m = fit_zlrm(y, X, S, 1.0), fit_zlrm(y, X, S, 0.05)
    assert m.achieved_value <= 0.05 + 1e-6
    assert m.stats.loglik < free.stats.loglik


@pytest.mark.parametrize("kind,fit", [("gaussian", fit_zlm), ("binomial", fit_zlrm)])
def test_training_loss_monotone_in_r(rng, kind, fit):
    y, X, S = instance(rng, kind)
    losses = [loss(kind, y, eta_of(fit(y, X, S, r), X)) for r in np.linspace(0, 1, 11)]
    assert np.all(np.diff(losses) <= 1e-8 * (1 + abs(losses[0])))


@pytest.mark.parametrize("kind", ["gaussian", "binomial"])
def test_cross_form_consistency(rng, kind):
    y, X, S = instance(rng, kind)
    corr_fit, cov_fit = (fit_zlm, fit_zlm_orig) if kind == "gaussian" else (fit_zlrm, fit_zlrm_orig)
    m = corr_fit(y, X, S, 0.1)
    c = 0.1 * np.std(X @ m.coefficients.beta, ddof=1) * np.std(S, axis=0, ddof=1)
    o = cov_fit(y, X, S, c)
    assert np.abs(eta_of(m, X) - eta_of(o, X)).max() <= 1e-4


@pytest.mark.parametrize("kind,fit", [("gaussian", fit_zlm_orig), ("binomial", fit_zlrm_orig)])
def test_kkt_conditions(rng, kind, fit):
    y, X, S = instance(rng, kind, q=3)
    c = 0.03
    m = fit(y, X, S, c)
    n = len(y)
    Xc = X - X.mean(0)
    A = (S - S.mean(0)).T @ Xc / (n - 1)
    eta = eta_of(m, X)
    mu = eta if kind == "gaussian" else 1 / (1 + np.exp(-eta))
    grad = X.T @ (mu - y)
    assert abs(np.sum(mu - y)) <= 1e-6 * n
    v = A @ m.coefficients.beta
    active = np.abs(v) >= c - 1e-7
    assert active.any()
    # -grad = sum_k w_k sign(v_k) A_k with w >= 0
    G = (A[active] * np.sign(v[active])[:, None]).T
    w, res = nnls(G, -grad)
    assert res <= 1e-4 * (1 + np.linalg.norm(grad))


def test_bounds_hold_on_random_instances():
    @given(st.integers(0, 10_000), st.sampled_from([0.0, 0.01, 0.1, 0.5]),
           st.sampled_from(["gaussian", "binomial"]))
    def check(seed, r, kind):
        rng = np.random.default_rng(seed)
        y, X, S = instance(rng, kind, n=150, p=3, q=2)
        m = (fit_zlm if kind == "gaussian" else fit_zlrm)(y, X, S, r)
        _, corr = marginal_stats(X, S, m.coefficients.beta)
        assert np.max(np.abs(corr)) <= r + 1e-6
        assert m.coefficients.alpha.size == 0
    check()


def test_bad_bounds_rejected(rng):
    y, X, S = instance(rng)
    with pytest.raises(SchemaError):
        fit_zlm(y, X, S, -0.1)
    with pytest.raises(SchemaError):
        fit_zlm(y, X, S, 1.5)
    with pytest.raises(SchemaError):
        fit_zlm_orig(y, X, S, -1.0)


def test_per_attribute_covariance_bounds(rng):
    y, X, S = instance(rng, q=2)
    m = fit_zlm_orig(y, X, S, [0.01, 10.0])
    cov, _ = marginal_stats(X, S, m.coefficients.beta)
    assert abs(cov[0]) <= 0.01 + 1e-9
    assert m.achieved["covariances"] == pytest.approx(cov.tolist())


def test_zafar_model_does_not_use_sensitive(rng):
    y, X, S = instance(rng)
    assert not fit_zlm(y, X, S, 0.1).uses_sensitive
