"""Acceptance suite: one group of tests per criterion.

Run with ``pytest tests/test_acceptance.py`` (or ``python tests/test_acceptance.py``);
the terminal summary prints one PASS/FAIL line per criterion.
"""

import os
import sys
import time

import numpy as np
import pytest
import scipy.linalg
import statsmodels.api as sm

from fairfit import fairness as F
from fairfit import glm, model as M, validation as V
from fairfit.data import Schema, encode, infer_factors, load_csv, response_values
from fairfit.decorrelation import decorrelate
from fairfit.frrm import fit_fgrrm, fit_frrm
from fairfit.synth import SynthConfig, dataset
from fairfit.zafar import fit_zlm, fit_zlrm, marginal_stats

sys.path.insert(0, os.path.dirname(__file__))
from conftest import correlated, response  # noqa: E402

pytestmark = pytest.mark.acceptance

FAMILIES = ("gaussian", "binomial", "poisson", "multinomial")
DEFINITIONS = tuple(F.BUILTINS)
_clock = {}


def c(num, title):
    return pytest.mark.criterion(num, title)


def arrays(fam, n=300, g0=0.7, seed=11, p=3, q=2):
    """Synthetic sample as (y, X, S, levels, U, family, working y)."""
    ds, _ = dataset(SynthConfig(n=n, family=fam, g0=g0, seed=seed, p=p, q=q))
    y, lv = response_values(ds)
    X = encode(ds, "predictor").values
    S = encode(ds, "sensitive").values
    U = decorrelate(X, S)[0].values
    f, yw = glm.make_response(fam, y, lv)
    return y, X, S, lv, U, f, yw


def fit(fam, y, X, S, r, lv, definition="sp-komiyama"):
    if fam == "gaussian":
        return fit_frrm(y, X, S, r, definition=definition)
    return fit_fgrrm(y, X, S, r, definition=definition, family=fam, levels=lv)


def value_at(defn, coefs, stats, yw, S, U, f, ref):
    return F.evaluate(defn, F.make_view(coefs, stats, 0.0, ref), yw, S, U, f)


# ----------------------------------------------------------------------------
# 1. closed form against a dense least-squares oracle
# ----------------------------------------------------------------------------

@c(1, "closed-form ridge equals a dense least-squares oracle")
def test_closed_form_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(60, 501))
        q = int(rng.integers(1, 11))
        p = int(rng.integers(1, 50 - q + 1))
        X, S = correlated(rng, n, p, q)
        U = decorrelate(X, S)[0].values if i % 2 == 0 else X
        y = rng.normal(size=n) + S @ rng.normal(size=q) + U @ rng.normal(size=p)
        la, lb = 10 ** rng.uniform(-3, 3), (0.0 if i % 3 else 10 ** rng.uniform(-3, 2))
        f, yw = glm.make_response("gaussian", y)
        coefs, _ = glm.fit_penalized(f, yw, S, U, la, lb, method="closed")
        Z = np.hstack([np.ones((n, 1)), S, U])
        pen = np.diag(np.sqrt(np.r_[0.0, np.full(q, la), np.full(p, lb)]))
        ref = scipy.linalg.lstsq(np.vstack([Z, pen]), np.r_[y, np.zeros(1 + q + p)],
                                 lapack_driver="gelsd")[0]
        worst = max(worst, np.linalg.norm(coefs.vector() - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-8, worst
    assert elapsed < 10, elapsed


# ----------------------------------------------------------------------------
# 2. constraint attainment against a dense lambda grid
# ----------------------------------------------------------------------------

def grid_oracle(defn, f, yw, S, U):
    grid = np.concatenate([[0.0], np.logspace(-4, 8, 199)])
    ref, vals = None, []
    for lam in grid:
        coefs, stats = glm.fit_penalized(f, yw, S, U, lam)
        ref = coefs if ref is None else ref
        vals.append(value_at(defn, coefs, stats, yw, S, U, f, ref))
    return grid, np.array(vals), ref


@c(2, "fitted unfairness equals r (dense lambda-grid oracle)")
@pytest.mark.parametrize("fam", FAMILIES)
@pytest.mark.parametrize("defn", DEFINITIONS)
def test_constraint_attainment(fam, defn):
    t0 = time.perf_counter()
    y, X, S, lv, U, f, yw = arrays(fam)
    grid, vals, ref = grid_oracle(defn, f, yw, S, U)
    assert vals[0] > 0.3
    for r in (0.01, 0.05, 0.2):
        m = fit(fam, y, X, S, r, lv, defn)
        k = int(np.flatnonzero(vals <= r)[0])
        assert grid[k - 1] <= m.lambda_alpha <= grid[k]
        again = value_at(defn, m.coefficients, m.stats, yw, S, U, f, ref)
        assert abs(again - r) <= 1e-4
        assert abs(m.achieved_value - r) <= 1e-4
    _clock[2] = _clock.get(2, 0.0) + time.perf_counter() - t0


@c(2, "fitted unfairness equals r (dense lambda-grid oracle)")
def test_constraint_attainment_runtime():
    if len(_clock) == 0:
        pytest.skip("attainment tests did not run in this session")
    assert _clock[2] < 60, _clock[2]


# ----------------------------------------------------------------------------
# 3. r = 1 is the unpenalised GLM
# ----------------------------------------------------------------------------

@c(3, "r = 1 matches an independent unpenalised GLM fit")
@pytest.mark.parametrize("fam", FAMILIES)
def test_inactive_constraint_identity(fam):
    y, X, S, lv, U, f, yw = arrays(fam, g0=0.5, seed=3)
    m = fit(fam, y, X, S, 1.0, lv)
    Z = np.hstack([np.ones((len(y), 1)), S, U])
    t = m.coefficients.table()
    if fam == "gaussian":
        ref = scipy.linalg.lstsq(Z, yw)[0]
        got = t[:, 0]
    elif fam == "multinomial":
        codes = np.argmax(yw, axis=1)
        res = sm.MNLogit(codes, Z).fit(method="newton", maxiter=200, disp=0)
        ref = np.asarray(res.params)
        got = t[:, 1:] - t[:, :1]
    else:
        sm_fam = sm.families.Binomial() if fam == "binomial" else sm.families.Poisson()
        ref = sm.GLM(yw, Z, family=sm_fam).fit(tol=1e-14, maxiter=200).params
        got = t[:, 0]
    assert m.lambda_alpha == 0.0
    assert np.max(np.abs(got - ref)) <= 1e-6


# ----------------------------------------------------------------------------
# 4. Gaussian beta does not move with r
# ----------------------------------------------------------------------------

@c(4, "Gaussian predictor coefficients are invariant in r")
def test_gaussian_beta_invariance():
    y, X, S, lv, U, f, yw = arrays("gaussian", n=500, p=6, q=3, seed=4)
    b1 = fit_frrm(y, X, S, 1.0).coefficients.beta
    dev = max(np.max(np.abs(fit_frrm(y, X, S, r).coefficients.beta - b1))
              for r in np.linspace(0.0, 0.9, 10))
    assert dev < 1e-6, dev


# ----------------------------------------------------------------------------
# 5. decorrelated predictors are orthogonal to S
# ----------------------------------------------------------------------------

@c(5, "decorrelated predictors are uncorrelated with S")
def test_orthogonality():
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(20, 400))
        q = int(rng.integers(1, 6))
        p = int(rng.integers(1, 12))
        X, S = correlated(rng, n, p, q, mix=rng.uniform(0.1, 5.0))
        if i % 4 == 0:
            S[:, 0] = (S[:, 0] > 0).astype(float)
        if i % 5 == 0:
            X = X * 10 ** rng.uniform(-3, 3) + 10 ** rng.uniform(-2, 4)
        U = decorrelate(X, S)[0].values
        C = np.corrcoef(np.hstack([U, S]).T)[:p, p:]
        worst = max(worst, np.max(np.abs(C)))
    assert worst < 1e-10, worst


# ----------------------------------------------------------------------------
# 6. monotonicity in lambda and r
# ----------------------------------------------------------------------------

@c(6, "unfairness monotone in lambda and r; fit monotone in r")
@pytest.mark.parametrize("fam", FAMILIES)
@pytest.mark.parametrize("defn", DEFINITIONS)
def test_monotonicity(fam, defn):
    y, X, S, lv, U, f, yw = arrays(fam, seed=6)
    ref = None
    vals = []
    for lam in np.concatenate([[0.0], np.logspace(-3, 6, 40)]):
        coefs, stats = glm.fit_penalized(f, yw, S, U, lam)
        ref = coefs if ref is None else ref
        vals.append(value_at(defn, coefs, stats, yw, S, U, f, ref))
    assert np.all(np.diff(vals) <= 1e-8)
    ms = [fit(fam, y, X, S, r, lv, defn) for r in np.linspace(0.0, 1.0, 11)]
    ach = np.array([m.achieved_value for m in ms])
    negdev = -np.array([m.stats.deviance for m in ms])
    assert np.all(np.diff(ach) >= -1e-8)
    assert np.all(np.diff(negdev) >= -1e-8 * (1 + np.abs(negdev[:-1])))


# ----------------------------------------------------------------------------
# 7. individual fairness against a pairwise double loop
# ----------------------------------------------------------------------------

def berk_oracle(coefs, ref, yw, S, factor):
    if factor:
        codes = np.argmax(yw, axis=1)
        w = lambda i, j: float(codes[i] != codes[j])  # noqa: E731
        sa, sr = S @ coefs.alpha.T, S @ ref.alpha.T
    else:
        w = lambda i, j: abs(yw[i] - yw[j])  # noqa: E731
        sa, sr = S @ coefs.alpha, S @ ref.alpha
    num, den = F.pairwise_brute(w, sa), F.pairwise_brute(w, sr)
    return min(max(num / den, 0.0), 1.0) if den > 0 else 0.0


@c(7, "if-berk equals an O(n^2) brute-force oracle exactly")
@pytest.mark.parametrize("fam", FAMILIES)
def test_if_berk_brute_force(fam):
    rng = np.random.default_rng(7)
    for n in (2, 17, 120, 200):
        X, S = correlated(rng, n, 3, 2)
        y, lv = response(rng, fam, X, S, strength=0.8)
        U = decorrelate(X, S)[0].values
        f, yw = glm.make_response(fam, y, lv)
        ref = glm.fit_penalized(f, yw, S, U, 0.0, 1.0)[0]
        for lam in (0.3, 10.0):
            coefs, stats = glm.fit_penalized(f, yw, S, U, lam, 1.0)
            got = value_at("if-berk", coefs, stats, yw, S, U, f, ref)
            assert got == berk_oracle(coefs, ref, yw, S, fam == "multinomial")


# ----------------------------------------------------------------------------
# 8. definition swap reproduces the fit
# ----------------------------------------------------------------------------

@c(8, "swapping definitions at the attained value reproduces the fit")
@pytest.mark.parametrize("fam", FAMILIES)
@pytest.mark.parametrize("other", ["eo-komiyama", "if-berk"])
def test_modularity(fam, other):
    y, X, S, lv, U, f, yw = arrays(fam, seed=8)
    m1 = fit(fam, y, X, S, 0.05, lv, "sp-komiyama")
    yw_, S_, U_, ref = m1.training
    v = value_at(other, m1.coefficients, m1.stats, yw_, S_, U_, m1.family, ref)
    m2 = fit(fam, y, X, S, v, lv, other)
    assert np.max(np.abs(m1.coefficients.vector() - m2.coefficients.vector())) < 1e-3


# ----------------------------------------------------------------------------
# 9. Zafar models
# ----------------------------------------------------------------------------

@c(9, "ZLM/ZLRM satisfy their bounds; r=1 unconstrained; X=S, r=0 gives beta=0")
@pytest.mark.parametrize("kind", ["gaussian", "binomial"])
def test_zafar(kind):
    rng = np.random.default_rng(9)
    fitter = fit_zlm if kind == "gaussian" else fit_zlrm
    for trial in range(6):
        X, S = correlated(rng, 300, 4, 3, mix=1.0)
        y, _ = response(rng, kind, X, S, strength=1.2)
        for r in (0.0, 0.01, 0.05, 0.2, 0.6):
            m = fitter(y, X, S, r)
            _, corr = marginal_stats(X, S, m.coefficients.beta)
            assert np.max(np.abs(corr)) <= r + 1e-6
        m = fitter(y, X, S, 1.0)
        Z = sm.add_constant(X)
        ref = (sm.OLS(y, Z).fit() if kind == "gaussian"
               else sm.Logit(y, Z).fit(disp=0, tol=1e-12)).params
        assert np.max(np.abs(np.r_[m.coefficients.intercept, m.coefficients.beta] - ref)) <= 1e-5
    z = rng.normal(size=(200, 1))
    y = 1 + 2 * z[:, 0] + rng.normal(size=200)
    if kind == "binomial":
        y = (y > 1).astype(float)
    m = fitter(y, z, z, 0.0)
    assert np.max(np.abs(m.coefficients.beta)) <= 1e-8


# ----------------------------------------------------------------------------
# 10. profile flattens once the bound exceeds the planted value
# ----------------------------------------------------------------------------

@c(10, "coefficient profile flattens above the planted g0 = 0.85")
def test_tradeoff_shape():
    ds, truth = dataset(SynthConfig(n=5000, p=4, q=2, g0=0.85, seed=0))
    prof = V.profile(ds, "frrm", grid=V.DEFAULT_GRID)
    r, coefs = prof.values[:, 0], prof.values[:, 1:]
    above = r >= 0.85 + 0.02 - 1e-12
    idx = np.flatnonzero(above)
    steps = np.abs(np.diff(coefs[idx], axis=0)).max()
    assert steps < 1e-3, steps
    # below the planted value the path still moves
    below = np.flatnonzero(r <= 0.8)
    assert np.abs(np.diff(coefs[below], axis=0)).max() > 1e-3


# ----------------------------------------------------------------------------
# 11. real NLS data, if supplied
# ----------------------------------------------------------------------------

@c(11, "NLS: Komiyama R^2 = 0.05 and multiple R^2 near 0.2337")
def test_nls_reproduction():
    path = os.environ.get("FAIRFIT_NLS_CSV")
    if not path:
        pytest.skip("set FAIRFIT_NLS_CSV to the prepared NLS CSV to run this check")
    schema = Schema(response="income90", sensitive=("gender", "age", "race"),
                    factors=tuple(infer_factors(path)), ignored=("income96", "income06"))
    ds = load_csv(path, schema)
    m = M.fit_model(ds, "frrm", 0.05)
    assert abs(m.achieved_value - 0.05) <= 1e-4
    assert abs(M.r_squared(m) - 0.2337) <= 0.01


# ----------------------------------------------------------------------------
# 12. determinism and scale
# ----------------------------------------------------------------------------

@c(12, "deterministic under fixed seeds; n=5000, p+q=70 FGRRM in < 5 s")
def test_scale():
    rng = np.random.default_rng(12)
    X, S = correlated(rng, 5000, 60, 10, mix=0.5)
    y, _ = response(rng, "binomial", X, S, strength=0.3)
    t0 = time.perf_counter()
    m = fit_fgrrm(y, X, S, 0.05)
    elapsed = time.perf_counter() - t0
    assert abs(m.achieved_value - 0.05) <= 1e-4
    assert elapsed < 5, elapsed


@c(12, "deterministic under fixed seeds; n=5000, p+q=70 FGRRM in < 5 s")
def test_determinism():
    a, _ = dataset(SynthConfig(n=400, family="binomial", seed=21))
    b, _ = dataset(SynthConfig(n=400, family="binomial", seed=21))
    assert all(np.array_equal(a.columns[k], b.columns[k]) for k in a.columns)
    m1 = M.fit_model(a, "fgrrm", 0.1, family="binomial")
    m2 = M.fit_model(b, "fgrrm", 0.1, family="binomial")
    assert M.dumps(m1) == M.dumps(m2)
    p1, p2 = (V.make_plan(a.n, k=5, runs=2, seed=3) for _ in range(2))
    r1 = V.cross_validate(a, "fgrrm", 0.1, {"family": "binomial"}, p1, threads=1)
    r2 = V.cross_validate(b, "fgrrm", 0.1, {"family": "binomial"}, p2, threads=4)
    assert np.array_equal(r1.run_losses, r2.run_losses)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
