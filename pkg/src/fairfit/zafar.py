"""Linear and logistic models with per-attribute covariance/correlation bounds.

These fit on the raw predictors ``X`` (no decorrelation), so prediction
never needs the sensitive attributes.  The constraint for each sensitive
column ``S_k`` is::

    |cov(X beta, S_k)| <= c_k                      (original form)
    |corr(X beta, S_k)| <= r                       (rescaled form)

The covariance form is a convex problem with linear constraints, solved by
an augmented Lagrangian with semismooth Newton inner steps followed by an
active-set polish.  The correlation form is not convex because of the
``sd(X beta)`` in the denominator; it is solved as a sequence of
covariance-form problems with ``c_k = r * sd(X beta_t) * sd(S_k)``, where
``beta_t`` is the previous solution, iterated until ``sd(X beta)`` stops
changing.  At that fixed point every correlation is within ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from . import glm
from .data import as_design
from .errors import ConvergenceError, SchemaError
from .frrm import FairModel

INNER_TOL = 1e-10
FEAS_TOL = 1e-10
SD_TOL = 1e-12
MAX_RESCALE = 500


@dataclass(frozen=True)
class ZafarModel(FairModel):
    """Fitted ZLM/ZLRM; ``coefficients.alpha`` is empty."""

    @property
    def uses_sensitive(self):
        return False


# ----------------------------------------------------------------------------
# objectives on theta = (intercept, beta) with centred X
# ----------------------------------------------------------------------------

class _LeastSquares:
    """Half the residual sum of squares; the intercept is profiled out."""

    def __init__(self, Xc, yc):
        self.Xc, self.yc = Xc, yc
        self.H = Xc.T @ Xc
        self.Xty = Xc.T @ yc
        self.d = Xc.shape[1]

    def value(self, beta):
        r = self.yc - self.Xc @ beta
        return 0.5 * float(r @ r)

    def grad_hess(self, beta):
        return self.H @ beta - self.Xty, self.H

    def unconstrained(self):
        coef, *_ = scipy.linalg.lstsq(self.Xc, self.yc, lapack_driver="gelsd",
                                      check_finite=False)
        return coef


class _Logistic:
    """Negative log-likelihood; variable 0 is the unconstrained intercept."""

    def __init__(self, Xc, y):
        self.Z = np.hstack([np.ones((Xc.shape[0], 1)), Xc])
        self.y = y
        self.d = self.Z.shape[1]

    def value(self, theta):
        eta = self.Z @ theta
        return float(np.sum(np.logaddexp(0.0, eta) - self.y * eta))

    def grad_hess(self, theta):
        mu = expit(self.Z @ theta)
        w = np.clip(mu * (1 - mu), glm.PROB_EPS, None)
        return self.Z.T @ (mu - self.y), (self.Z * w[:, None]).T @ self.Z

    def unconstrained(self):
        theta = np.zeros(self.d)
        m = min(max(self.y.mean(), 1e-6), 1 - 1e-6)
        theta[0] = math.log(m / (1 - m))
        return _newton(self, theta, lambda t: (0.0, np.zeros_like(t), None))


def _solve(H, g):
    try:
        c = scipy.linalg.cho_factor(H, check_finite=False)
        return scipy.linalg.cho_solve(c, g, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        x, *_ = scipy.linalg.lstsq(H, g, lapack_driver="gelsd", check_finite=False)
        return x


def _newton(obj, theta, extra, max_iter=200):
    """Minimise ``obj + extra`` (extra returns value, gradient, Hessian or None)."""
    def total(t):
        return obj.value(t) + extra(t)[0]

    f = total(theta)
    for _ in range(max_iter):
        g, H = obj.grad_hess(theta)
        ev, eg, eH = extra(theta)
        g = g + eg
        if eH is not None:
            H = H + eH
        step = _solve(H, -g)
        dec = -float(g @ step)
        if dec <= INNER_TOL * (1.0 + abs(f)):
            return theta
        t = 1.0
        while t > 1e-14:
            cand = theta + t * step
            fc = total(cand)
            if fc <= f - 1e-4 * t * dec:
                break
            t *= 0.5
        else:
            return theta
        theta, f = cand, fc
    raise ConvergenceError("Newton iterations did not converge", last=theta)


def _project(z, c):
    return np.clip(z, -c, c)


def _augmented_lagrangian(obj, A, c, theta0, max_outer=100):
    """Minimise ``obj`` subject to ``|A @ theta| <= c`` elementwise."""
    q = A.shape[0]
    mu = np.zeros(q)
    _, H0 = obj.grad_hess(theta0)
    rho = max(np.trace(H0) / obj.d, 1e-8) / max(float(np.mean(np.sum(A * A, axis=1))), 1e-300)
    theta = theta0.copy()
    scale = 1.0 + float(np.max(c, initial=0.0))
    trace = []
    viol_prev = np.inf
    for _ in range(max_outer):
        def extra(t, mu=mu, rho=rho):
            z = A @ t + mu / rho
            e = z - _project(z, c)
            active = e != 0
            val = 0.5 * rho * float(e @ e) - float(mu @ mu) / (2 * rho)
            grad = rho * (A.T @ e)
            Aa = A[active]
            return val, grad, rho * (Aa.T @ Aa)

        theta = _newton(obj, theta, extra)
        v = A @ theta
        viol = float(np.max(np.abs(v) - c, initial=0.0))
        mu = rho * ((v + mu / rho) - _project(v + mu / rho, c))
        trace.append(obj.value(theta))
        if viol <= FEAS_TOL * scale:
            return theta, mu, trace
        if viol > 0.25 * viol_prev:
            rho *= 10.0
        viol_prev = viol
    raise ConvergenceError("augmented Lagrangian did not reach feasibility", last=theta,
                           trace=trace)


def _polish(obj, A, c, theta, mu):
    """Re-solve with the active constraints as equalities, if that stays valid."""
    v = A @ theta
    active = np.flatnonzero((mu != 0) | (np.abs(v) >= c - 1e-9 * (1 + c)))
    if active.size == 0:
        return theta
    sign = np.sign(np.where(mu[active] != 0, mu[active], v[active]))
    Aa = A[active]
    b = sign * c[active]
    x = theta.copy()
    for _ in range(50):
        g, H = obj.grad_hess(x)
        m = len(active)
        K = np.block([[H, Aa.T], [Aa, np.zeros((m, m))]])
        rhs = np.concatenate([-g, b - Aa @ x])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            return theta
        dx, lam = sol[:len(x)], sol[len(x):]
        x = x + dx
        if np.max(np.abs(dx), initial=0.0) <= 1e-13 * (1 + np.max(np.abs(x))):
            break
    else:
        return theta
    # multipliers must push outwards and inactive rows must stay feasible
    if np.any(lam * sign < -1e-10 * (1 + np.abs(lam).max())):
        return theta
    if np.any(np.abs(A @ x) > c + FEAS_TOL * (1 + c)):
        return theta
    if obj.value(x) > obj.value(theta) + 1e-9 * (1 + abs(obj.value(theta))):
        return theta
    return x


def _free(obj):
    if getattr(obj, "_free", None) is None:
        obj._free = obj.unconstrained()
    return obj._free


def solve_bounded(obj, A, c, start=None):
    """Minimise ``obj`` subject to ``|A @ theta| <= c``; returns theta."""
    free = _free(obj)
    if np.all(np.abs(A @ free) <= c):
        return free
    theta0 = free if start is None else start
    theta, mu, _ = _augmented_lagrangian(obj, A, c, theta0)
    return _polish(obj, A, c, theta, mu)


# ----------------------------------------------------------------------------
# model fitting
# ----------------------------------------------------------------------------

def _prepare(y, X, S, kind, levels=None):
    X = as_design(X, "x")
    S = as_design(S, "s")
    if X.n != S.n:
        raise SchemaError("X and S have different numbers of rows")
    fam, yw = glm.make_response(kind, y, levels)
    n = X.n
    if n < 3:
        raise SchemaError("need at least 3 observations")
    xm = X.values.mean(axis=0)
    Xc = X.values - xm
    Sc = S.values - S.values.mean(axis=0)
    sd_s = np.std(S.values, axis=0, ddof=1)
    # row k maps beta to cov(X beta, S_k)
    A = Sc.T @ Xc / (n - 1)
    return X, S, fam, yw, xm, Xc, Sc, sd_s, A


def _fitted_sd(Xc, beta):
    return float(np.std(Xc @ beta, ddof=1))


def marginal_stats(X, S, beta):
    """Per-attribute covariances and correlations of ``X @ beta`` with ``S``."""
    X = np.asarray(X, float)
    S = np.asarray(S, float)
    f = X @ beta
    fc = f - f.mean()
    Sc = S - S.mean(axis=0)
    n = len(f)
    cov = Sc.T @ fc / (n - 1)
    sd_f = np.std(f, ddof=1)
    sd_s = np.std(S, axis=0, ddof=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where((sd_f > 0) & (sd_s > 0), cov / (sd_f * sd_s), 0.0)
    return cov, corr


def _objective(kind, Xc, yw):
    if kind == "gaussian":
        return _LeastSquares(Xc, yw - yw.mean())
    return _Logistic(Xc, yw)


def _split(kind, theta, yw, xm):
    if kind == "gaussian":
        beta = theta
        b0 = float(yw.mean() - xm @ beta)
    else:
        beta = theta[1:]
        b0 = float(theta[0] - xm @ beta)
    return b0, beta


def _constraint_matrix(kind, A):
    if kind == "gaussian":
        return A
    return np.hstack([np.zeros((A.shape[0], 1)), A])


def _solve_correlation(obj, kind, A, Xc, sd_s, r):
    free = _free(obj)
    beta_free = free if kind == "gaussian" else free[1:]
    sd0 = _fitted_sd(Xc, beta_free)
    if r >= 1.0 or sd0 == 0.0:
        return free, 0
    Af = _constraint_matrix(kind, A)
    theta = free
    sd_t = sd0
    trace = [sd0]
    for it in range(1, MAX_RESCALE + 1):
        c = r * sd_t * sd_s
        theta = solve_bounded(obj, Af, c, start=theta)
        beta = theta if kind == "gaussian" else theta[1:]
        sd_new = _fitted_sd(Xc, beta)
        trace.append(sd_new)
        if sd_new <= 1e-10 * sd0:
            break
        if abs(sd_new - sd_t) <= SD_TOL * sd_t:
            return theta, it
        sd_t = sd_new
    else:
        raise ConvergenceError(
            f"correlation rescaling did not settle after {MAX_RESCALE} passes",
            last=theta, trace=trace)
    # fitted values collapsed: only the null direction satisfies the bound
    theta = np.zeros_like(theta)
    if kind == "gaussian":
        return theta, it
    return _null_logistic(obj, theta), it


def _null_logistic(obj, theta):
    m = min(max(obj.y.mean(), 1e-12), 1 - 1e-12)
    theta = np.zeros_like(theta)
    theta[0] = math.log(m / (1 - m))
    return theta


def _build(method, kind, y, X, S, bound, form, levels=None):
    X, S, fam, yw, xm, Xc, Sc, sd_s, A = _prepare(y, X, S, kind, levels)
    obj = _objective(kind, Xc, yw)
    if form == "correlation":
        if bound < 0 or bound > 1 or math.isnan(bound):
            raise SchemaError(f"unfairness must lie in [0, 1], got {bound}")
        theta, iters = _solve_correlation(obj, kind, A, Xc, sd_s, float(bound))
    else:
        c = np.broadcast_to(np.asarray(bound, float), (S.p,)).copy()
        if np.any(c < 0) or np.any(np.isnan(c)):
            raise SchemaError("covariance bound must be non-negative")
        theta = solve_bounded(obj, _constraint_matrix(kind, A), c)
        iters = 1
    b0, beta = _split(kind, theta, yw, xm)
    coefs = glm.CoefficientSet(b0, np.zeros(0), beta)
    eta = b0 + X.values @ beta
    stats = glm.make_stats(fam, yw, eta, 0, X.p, iterations=iters)
    cov, corr = marginal_stats(X.values, S.values, beta)
    if form == "correlation":
        value = float(np.max(np.abs(corr), initial=0.0))
    else:
        value = float(np.max(np.abs(cov), initial=0.0))
    achieved = {"value": value, "correlations": corr.tolist(), "covariances": cov.tolist()}
    return ZafarModel(
        method=method, family=fam, coefficients=coefs, lambda_alpha=0.0, lambda_beta=0.0,
        r_bound=float(np.max(bound)) if np.ndim(bound) else float(bound),
        achieved_value=value, achieved=achieved,
        definition_name="correlation" if form == "correlation" else "covariance",
        definition_label="Marginal correlation (disparate impact)" if form == "correlation"
        else "Marginal covariance (disparate impact)",
        stats=stats, sensitive_names=S.names, predictor_names=X.names,
        raw_coefficients=coefs,
        call={"unfairness": bound if np.ndim(bound) == 0 else list(np.asarray(bound, float)),
              "family": fam.kind},
        sensitive_specs=S.specs, predictor_specs=X.specs,
        training=(yw, S.values, X.values, None))


def fit_zlm(y, X, S, unfairness, *, levels=None):
    """Least squares with ``|corr(X beta, S_k)| <= unfairness`` for every k."""
    return _build("zlm", "gaussian", y, X, S, float(unfairness), "correlation", levels)


def fit_zlrm(y, X, S, unfairness, *, levels=None):
    """Logistic regression with ``|corr(X beta, S_k)| <= unfairness`` for every k."""
    return _build("zlrm", "binomial", y, X, S, float(unfairness), "correlation", levels)


def fit_zlm_orig(y, X, S, c, *, levels=None):
    """Least squares with ``|cov(X beta, S_k)| <= c`` (scalar or per attribute)."""
    return _build("zlm_orig", "gaussian", y, X, S, c, "covariance", levels)


def fit_zlrm_orig(y, X, S, c, *, levels=None):
    """Logistic regression with ``|cov(X beta, S_k)| <= c``."""
    return _build("zlrm_orig", "binomial", y, X, S, c, "covariance", levels)
