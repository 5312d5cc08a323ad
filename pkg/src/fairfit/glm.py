"""GLM families and a partially penalised ridge fitter.

The fitted model has linear predictor ``mu + S @ alpha + U @ beta`` and
minimises::

    D(alpha, beta) + lambda_alpha * |alpha|^2 + lambda_beta * |beta|^2

with the intercept(s) left unpenalised.  The penalty is applied to the
deviance as written, with no ``1/n`` rescaling of the loss.

The Gaussian family uses the closed-form ridge estimates, which decouple
into one solve per block when ``S`` and ``U`` are orthogonal after
centring (``U`` from :func:`fairfit.decorrelation.decorrelate` always is).
Other families use Newton's method on the penalised deviance (IRLS) with
step halving, so the penalised objective never increases.  The multinomial
family uses the symmetric parameterisation with one coefficient vector per
class; coefficients that carry no penalty are recentred to sum to zero
over the classes after every step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit, gammaln, logsumexp, xlogy

from .errors import ConvergenceError, DomainError, SchemaError

KINDS = ("gaussian", "binomial", "poisson", "multinomial")
PROB_EPS = 1e-10
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class Family:
    kind: str
    K: int | None = None
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown family {self.kind!r}; expected one of {KINDS}")
        if self.kind == "multinomial" and self.K is not None and self.K < 2:
            raise SchemaError("multinomial family needs at least 2 classes")

    @property
    def classification(self):
        return self.kind in ("binomial", "multinomial")

    @property
    def multinomial(self):
        return self.kind == "multinomial"

    def to_dict(self):
        return {"kind": self.kind, "K": self.K, "levels": list(self.levels)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("K"), tuple(d.get("levels", ())))


def make_response(kind, y, levels=None):
    """Validate a response against a family and convert it to working form.

    Returns ``(family, y)`` where ``y`` is a float vector (Gaussian, Poisson,
    binomial 0/1) or an ``n x K`` indicator matrix (multinomial).  Factor
    responses are given as integer codes plus ``levels``, or as labels.
    """
    fam = kind if isinstance(kind, Family) else Family(kind)
    y = np.asarray(y)
    if fam.kind in ("gaussian", "poisson"):
        if levels is not None or y.dtype.kind in "OUS":
            raise SchemaError(f"{fam.kind} family needs a numeric response")
        y = y.astype(float)
        if not np.all(np.isfinite(y)):
            raise SchemaError("response holds non-finite values")
        if fam.kind == "poisson" and np.any(y < 0):
            raise SchemaError("poisson family needs a non-negative response")
        return Family(fam.kind), y
    if fam.multinomial and y.ndim == 2:
        K = y.shape[1]
        return Family("multinomial", K, tuple(levels or range(K))), y.astype(float)
    if levels is None:
        if y.dtype.kind in "OUS" or fam.multinomial:
            labels = [str(v) for v in y] if y.dtype.kind in "OUS" else list(y)
            levels = tuple(sorted(set(labels), key=labels.index)) if y.dtype.kind in "OUS" \
                else tuple(np.unique(y).tolist())
            lookup = {lv: i for i, lv in enumerate(levels)}
            codes = np.array([lookup[v] for v in labels], dtype=np.int64)
        else:
            vals = np.unique(y)
            if not np.all(np.isin(vals, (0, 1))):
                raise SchemaError("binomial response must be 0/1 or a 2-level factor")
            levels = (0, 1)
            codes = y.astype(np.int64)
    else:
        levels = tuple(levels)
        codes = y.astype(np.int64)
    K = len(levels)
    if fam.kind == "binomial":
        if K != 2:
            raise SchemaError(f"binomial family needs a 2-level response, got {K} levels")
        return Family("binomial", 2, levels), (codes == 1).astype(float)
    if K < 2:
        raise SchemaError("multinomial family needs at least 2 levels")
    Y = (codes[:, None] == np.arange(K)[None, :]).astype(float)
    return Family("multinomial", K, levels), Y


def linkinv(fam, eta):
    if fam.kind == "gaussian":
        return eta
    if fam.kind == "binomial":
        return expit(eta)
    if fam.kind == "poisson":
        return np.exp(eta)
    return np.exp(eta - logsumexp(eta, axis=1, keepdims=True))


def link(fam, mu):
    if fam.kind == "gaussian":
        return mu
    if fam.kind == "binomial":
        return np.log(mu) - np.log1p(-mu)
    if fam.kind == "poisson":
        return np.log(mu)
    return np.log(mu)


def _check_mu(fam, mu):
    if fam.kind == "binomial" and np.any((mu <= 0) | (mu >= 1)):
        raise DomainError("binomial means must lie in (0, 1)")
    if fam.kind == "poisson" and np.any(mu <= 0):
        raise DomainError("poisson means must be positive")
    if fam.kind == "multinomial" and np.any((mu <= 0) | (mu > 1)):
        raise DomainError("class probabilities must lie in (0, 1]")


def unit_deviance(fam, y, mu):
    """Per-observation deviance contributions."""
    _check_mu(fam, mu)
    if fam.kind == "gaussian":
        return (y - mu) ** 2
    if fam.kind == "binomial":
        return 2.0 * (xlogy(y, y / mu) + xlogy(1 - y, (1 - y) / (1 - mu)))
    if fam.kind == "poisson":
        return 2.0 * (xlogy(y, y / mu) - (y - mu))
    return 2.0 * np.sum(xlogy(y, y / mu), axis=1)


def deviance(fam, y, mu):
    return float(np.sum(unit_deviance(fam, np.asarray(y, float), np.asarray(mu, float))))


def _loglik_eta(fam, y, eta):
    # evaluated on the linear predictor so no probability ever rounds to 0 or 1
    if fam.kind == "binomial":
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    if fam.kind == "poisson":
        return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1)))
    return float(np.sum(y * eta) - np.sum(logsumexp(eta, axis=1)))


def _saturated_loglik(fam, y):
    if fam.kind == "poisson":
        return float(np.sum(xlogy(y, y) - y - gammaln(y + 1)))
    return float(np.sum(xlogy(y, y)))


def _deviance_eta(fam, y, eta):
    if fam.kind == "gaussian":
        return float(np.sum((y - eta) ** 2))
    return max(2.0 * (_saturated_loglik(fam, y) - _loglik_eta(fam, y, eta)), 0.0)


def loglik(fam, y, mu, n=None):
    """Log-likelihood at the fitted means.

    The Gaussian case plugs in the maximum-likelihood variance ``RSS / n``,
    floored at ``1e-12`` so perfect fits stay finite.
    """
    y = np.asarray(y, float)
    mu = np.asarray(mu, float)
    n = len(y) if n is None else n
    if fam.kind == "gaussian":
        s2 = max(float(np.sum((y - mu) ** 2)) / n, SIGMA2_FLOOR)
        return -0.5 * n * (math.log(2 * math.pi * s2) + 1.0)
    _check_mu(fam, mu)
    if fam.kind == "binomial":
        return float(np.sum(xlogy(y, mu) + xlogy(1 - y, 1 - mu)))
    if fam.kind == "poisson":
        return float(np.sum(xlogy(y, mu) - mu - gammaln(y + 1)))
    return float(np.sum(xlogy(y, mu)))


def aic(ll, df):
    return -2.0 * ll + 2.0 * df


def bic(ll, df, n):
    return -2.0 * ll + math.log(n) * df


@dataclass(frozen=True)
class CoefficientSet:
    """Intercept(s), sensitive-attribute and predictor coefficients.

    For the multinomial family ``intercept`` has shape ``(K,)`` and
    ``alpha``/``beta`` have shapes ``(K, q)``/``(K, p)``.
    """

    intercept: np.ndarray | float
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def multinomial(self):
        return np.ndim(self.intercept) == 1

    def eta(self, S, U):
        S = np.asarray(S, float)
        U = np.asarray(U, float)
        if self.multinomial:
            return self.intercept[None, :] + S @ self.alpha.T + U @ self.beta.T
        return self.intercept + S @ self.alpha + U @ self.beta

    def vector(self):
        """All coefficients flattened as ``[intercept, alpha, beta]`` per class."""
        if self.multinomial:
            return np.column_stack([self.intercept, self.alpha, self.beta]).ravel()
        return np.concatenate([[self.intercept], self.alpha, self.beta])

    def table(self):
        """``(1 + q + p) x K`` matrix (``K = 1`` unless multinomial)."""
        if self.multinomial:
            return np.vstack([self.intercept[None, :], self.alpha.T, self.beta.T])
        return np.concatenate([[self.intercept], self.alpha, self.beta])[:, None]

    @classmethod
    def from_table(cls, table, q):
        table = np.asarray(table, float)
        if table.shape[1] == 1:
            t = table[:, 0]
            return cls(float(t[0]), t[1:1 + q].copy(), t[1 + q:].copy())
        return cls(table[0].copy(), table[1:1 + q].T.copy(), table[1 + q:].T.copy())

    def with_alpha(self, alpha):
        return CoefficientSet(self.intercept, np.asarray(alpha, float), self.beta)

    def zero_alpha(self):
        return self.with_alpha(np.zeros_like(self.alpha))


@dataclass(frozen=True)
class FitStats:
    deviance: float
    null_deviance: float
    loglik: float
    df: int
    n: int
    fitted: np.ndarray
    deviance_residuals: np.ndarray
    iterations: int = 0
    trace: tuple = ()
    separation: bool = False


def deviance_residuals(fam, y, mu):
    if fam.kind == "multinomial":
        p_obs = np.clip(np.sum(y * mu, axis=1), PROB_EPS, 1.0)
        return np.sqrt(np.maximum(-2.0 * np.log(p_obs), 0.0))
    mu_c = mu
    if fam.kind == "binomial":
        mu_c = np.clip(mu, PROB_EPS, 1 - PROB_EPS)
    elif fam.kind == "poisson":
        mu_c = np.maximum(mu, PROB_EPS)
    d = np.maximum(unit_deviance(fam, y, mu_c), 0.0)
    return np.sign(y - mu) * np.sqrt(d)


def null_deviance(fam, y):
    if fam.multinomial:
        freq = y.mean(axis=0)
        return float(-2.0 * np.sum(xlogy(y, np.broadcast_to(freq, y.shape)))
                     + 2.0 * _saturated_loglik(fam, y))
    mu = np.full_like(y, y.mean())
    if fam.kind == "gaussian":
        return float(np.sum((y - mu) ** 2))
    if np.all(y == y[0]) and fam.kind == "binomial":
        return 0.0
    return deviance(fam, y, np.clip(mu, PROB_EPS, None) if fam.kind == "poisson" else mu)


def count_df(fam, q, p):
    k = fam.K if fam.multinomial else 1
    return k * (1 + q + p) + (1 if fam.kind == "gaussian" else 0)


def make_stats(fam, y, eta, q, p, iterations=0, trace=(), separation=False):
    mu = linkinv(fam, eta)
    n = y.shape[0]
    if fam.kind == "gaussian":
        dev = float(np.sum((y - mu) ** 2))
        ll = loglik(fam, y, mu, n)
    else:
        dev = _deviance_eta(fam, y, eta)
        ll = _loglik_eta(fam, y, eta)
    return FitStats(dev, null_deviance(fam, y), ll, count_df(fam, q, p), n, mu,
                    deviance_residuals(fam, y, mu), iterations, tuple(trace), separation)


# ----------------------------------------------------------------------------
# Gaussian closed form
# ----------------------------------------------------------------------------

def _ridge_svd(A, b, lam):
    """argmin |b - A x|^2 + lam |x|^2, minimum-norm when lam == 0."""
    if A.shape[1] == 0:
        return np.zeros(0)
    Uq, d, Vt = np.linalg.svd(A, full_matrices=False)
    keep = d > d.max(initial=0.0) * max(A.shape) * np.finfo(float).eps
    f = np.zeros_like(d)
    f[keep] = d[keep] / (d[keep] ** 2 + lam)
    return Vt.T @ (f * (Uq.T @ b))


def _gaussian_closed_form(y, S, U, lam_a, lam_b):
    ym = y.mean()
    Sm, Um = S.mean(axis=0), U.mean(axis=0)
    Sc, Uc = S - Sm, U - Um
    yc = y - ym
    cross = Sc.T @ Uc
    scale = (np.linalg.norm(Sc) * np.linalg.norm(Uc)) or 1.0
    if cross.size and np.max(np.abs(cross)) > 1e-10 * scale:
        A = np.hstack([Sc, Uc])
        pen = np.concatenate([np.full(S.shape[1], lam_a), np.full(U.shape[1], lam_b)])
        Aaug = np.vstack([A, np.diag(np.sqrt(pen))])
        baug = np.concatenate([yc, np.zeros(len(pen))])
        coef, *_ = scipy.linalg.lstsq(Aaug, baug, lapack_driver="gelsd", check_finite=False)
        alpha, beta = coef[:S.shape[1]], coef[S.shape[1]:]
    else:
        alpha = _ridge_svd(Sc, yc, lam_a)
        beta = _ridge_svd(Uc, yc, lam_b)
    b0 = ym - Sm @ alpha - Um @ beta
    return CoefficientSet(float(b0), alpha, beta)


# ----------------------------------------------------------------------------
# Newton / IRLS
# ----------------------------------------------------------------------------

def _solve_psd(H, g):
    try:
        c = scipy.linalg.cho_factor(H, check_finite=False)
        x = scipy.linalg.cho_solve(c, g, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    x, *_ = scipy.linalg.lstsq(H, g, lapack_driver="gelsd", check_finite=False)
    return x


class _Problem:
    """Penalised deviance of a GLM with design ``Z`` and optional offset."""

    def __init__(self, fam, y, Z, pen, offset=None):
        self.fam, self.y, self.Z, self.pen = fam, y, Z, pen
        self.offset = offset
        self.free = pen == 0.0  # coefficients left unpenalised

    def eta(self, theta):
        eta = self.Z @ theta
        return eta if self.offset is None else eta + self.offset

    def objective(self, theta):
        if theta.ndim == 1:
            pen = float(np.sum(self.pen * theta ** 2))
        else:
            pen = float(np.sum(self.pen[:, None] * theta ** 2))
        return _deviance_eta(self.fam, self.y, self.eta(theta)) + pen

    def newton(self, theta):
        """Newton direction for half the penalised objective, and the gradient."""
        fam, Z, y = self.fam, self.Z, self.y
        eta = self.eta(theta)
        if not fam.multinomial:
            mu = linkinv(fam, eta)
            if fam.kind == "binomial":
                mc = np.clip(mu, PROB_EPS, 1 - PROB_EPS)
                w = mc * (1 - mc)
            elif fam.kind == "poisson":
                w = np.maximum(mu, PROB_EPS)
            else:
                w = np.ones_like(mu)
            g = Z.T @ (y - mu) - self.pen * theta
            H = (Z * w[:, None]).T @ Z + np.diag(self.pen)
            return _solve_psd(H, g), g
        d, K = theta.shape
        mu = linkinv(fam, eta)
        mc = np.clip(mu, PROB_EPS, 1.0)
        G = Z.T @ (y - mu) - self.pen[:, None] * theta
        H = np.empty((K * d, K * d))
        for k in range(K):
            for l in range(k, K):
                w = mc[:, k] * ((1.0 if k == l else 0.0) - mc[:, l])
                blk = (Z * w[:, None]).T @ Z
                if k == l:
                    blk = blk + np.diag(self.pen)
                H[k * d:(k + 1) * d, l * d:(l + 1) * d] = blk
                H[l * d:(l + 1) * d, k * d:(k + 1) * d] = blk.T
        # shifting an unpenalised row equally across classes leaves the
        # objective unchanged; fill that null space so Cholesky applies
        scale = max(np.trace(H) / (K * d), 1.0)
        for j in np.flatnonzero(self.free):
            idx = j + d * np.arange(K)
            H[np.ix_(idx, idx)] += scale / K
        g = G.T.ravel()
        step = _solve_psd(H, g).reshape(K, d).T
        return step, G

    def recentre(self, theta):
        if theta.ndim == 2 and np.any(self.free):
            theta = theta.copy()
            theta[self.free] -= theta[self.free].mean(axis=1, keepdims=True)
        return theta


def _irls(prob, theta, tol=IRLS_TOL, max_iter=IRLS_MAX_ITER):
    theta = prob.recentre(theta)
    obj = prob.objective(theta)
    trace = [obj]
    for it in range(1, max_iter + 1):
        step, grad = prob.newton(theta)
        decrement = float(np.sum(step * grad))
        t = 1.0
        for _ in range(60):
            cand = prob.recentre(theta + t * step)
            new = prob.objective(cand)
            if np.isfinite(new) and new <= obj + 1e-12 * abs(obj):
                break
            t *= 0.5
        else:
            cand, new = theta, obj
        change = abs(obj - new) / (0.1 + abs(new))
        theta, obj = cand, new
        trace.append(obj)
        if change < tol and decrement / (0.1 + abs(obj)) < tol:
            # one more full step lands at rounding level (quadratic convergence)
            step, _ = prob.newton(theta)
            cand = prob.recentre(theta + step)
            new = prob.objective(cand)
            if np.isfinite(new) and new <= obj:
                theta, obj = cand, new
                trace.append(obj)
            return theta, it, trace
        if t < 1e-15:
            break
    raise ConvergenceError(
        f"IRLS did not converge after {max_iter} iterations (deviance trace tail "
        f"{trace[-3:]})", last=theta, trace=trace)


def _design(S, U):
    return np.hstack([np.ones((S.shape[0], 1)), S, U])


def _start(fam, y, d, offset=None):
    if fam.multinomial:
        freq = np.clip(y.mean(axis=0), PROB_EPS, None)
        theta = np.zeros((d, y.shape[1]))
        theta[0] = np.log(freq) - np.log(freq).mean()
        return theta
    theta = np.zeros(d)
    m = y.mean()
    if fam.kind == "binomial":
        m = min(max(m, 1e-6), 1 - 1e-6)
        theta[0] = math.log(m / (1 - m))
    elif fam.kind == "poisson":
        theta[0] = math.log(max(m, 1e-6))
    else:
        theta[0] = m
    return theta


def _coefs_from_theta(theta, q):
    if theta.ndim == 2:
        return CoefficientSet(theta[0].copy(), theta[1:1 + q].T.copy(), theta[1 + q:].T.copy())
    return CoefficientSet(float(theta[0]), theta[1:1 + q].copy(), theta[1 + q:].copy())


def _theta_from_coefs(c):
    if c.multinomial:
        return np.vstack([c.intercept[None, :], c.alpha.T, c.beta.T])
    return np.concatenate([[c.intercept], c.alpha, c.beta])


def fit_penalized(fam, y, S, U, lam_alpha=0.0, lam_beta=0.0, *, method="auto",
                  start=None, tol=IRLS_TOL, max_iter=IRLS_MAX_ITER):
    """Fit the partially penalised GLM.

    Parameters
    ----------
    fam : Family
        As returned by :func:`make_response`.
    y : ndarray
        Working response from :func:`make_response`.
    S, U : ndarray
        Sensitive attributes (``n x q``) and decorrelated predictors (``n x p``).
    lam_alpha, lam_beta : float
        Ridge penalties on ``alpha`` and ``beta``.
    method : {"auto", "closed", "irls"}
        ``"auto"`` uses the closed form for the Gaussian family.
    start : CoefficientSet, optional
        Warm start for the iterative path.

    Returns
    -------
    (CoefficientSet, FitStats)
    """
    S = np.asarray(getattr(S, "values", S), float)
    U = np.asarray(getattr(U, "values", U), float)
    if S.ndim == 1:
        S = S[:, None]
    if U.ndim == 1:
        U = U[:, None]
    n, q = S.shape
    p = U.shape[1]
    if U.shape[0] != n or y.shape[0] != n:
        raise SchemaError("y, S and U must have the same number of rows")
    if not (np.isfinite(lam_alpha) and np.isfinite(lam_beta)) or lam_alpha < 0 or lam_beta < 0:
        raise SchemaError("penalties must be finite and non-negative")

    if fam.kind == "gaussian" and method in ("auto", "closed"):
        coefs = _gaussian_closed_form(y, S, U, float(lam_alpha), float(lam_beta))
        return coefs, make_stats(fam, y, coefs.eta(S, U), q, p)

    Z = _design(S, U)
    pen = np.concatenate([[0.0], np.full(q, float(lam_alpha)), np.full(p, float(lam_beta))])
    prob = _Problem(fam, y, Z, pen)
    theta = _theta_from_coefs(start) if start is not None else _start(fam, y, 1 + q + p)
    theta, iters, trace = _irls(prob, theta, tol, max_iter)
    coefs = _coefs_from_theta(theta, q)
    eta = prob.eta(theta)
    separation = False
    if fam.classification and lam_alpha == 0 and lam_beta == 0:
        mu = linkinv(fam, eta)
        if np.any(mu < 1e-8) or np.any(mu > 1 - 1e-8):
            separation = True
            warnings.warn("fitted probabilities pinned at 0 or 1: possible separation",
                          RuntimeWarning, stacklevel=2)
    return coefs, make_stats(fam, y, eta, q, p, iters, trace, separation)


def refit_intercept(fam, y, offset):
    """Deviance-minimising intercept(s) for a fixed offset; returns ``(b0, D)``."""
    offset = np.asarray(offset, float)
    n = y.shape[0]
    if fam.kind == "gaussian":
        b0 = float(np.mean(y - offset))
        return b0, float(np.sum((y - offset - b0) ** 2))
    Z = np.ones((n, 1))
    prob = _Problem(fam, y, Z, np.zeros(1), offset)
    if fam.multinomial:
        theta = np.zeros((1, y.shape[1]))
    else:
        theta = np.zeros(1)
        mu_off = linkinv(fam, offset)
        m = y.mean()
        if fam.kind == "poisson":
            theta[0] = math.log(max(m, 1e-12) / max(float(np.mean(mu_off)), 1e-300))
        elif fam.kind == "binomial":
            m = min(max(m, 1e-6), 1 - 1e-6)
            theta[0] = math.log(m / (1 - m)) - float(np.mean(offset))
    theta, _, _ = _irls(prob, theta)
    dev = _deviance_eta(fam, y, prob.eta(theta))
    b0 = theta[0].copy() if fam.multinomial else float(theta[0])
    return b0, dev


def gradient(fam, y, S, U, coefs, lam_alpha, lam_beta):
    """Analytic gradient of the penalised deviance at ``coefs`` (flattened)."""
    S = np.asarray(S, float)
    U = np.asarray(U, float)
    Z = _design(S, U)
    q, p = S.shape[1], U.shape[1]
    pen = np.concatenate([[0.0], np.full(q, lam_alpha), np.full(p, lam_beta)])
    theta = _theta_from_coefs(coefs)
    mu = linkinv(fam, Z @ theta)
    if theta.ndim == 2:
        return (-2.0 * Z.T @ (y - mu) + 2.0 * pen[:, None] * theta).T.ravel()
    return -2.0 * Z.T @ (y - mu) + 2.0 * pen * theta


def penalized_objective(fam, y, S, U, coefs, lam_alpha, lam_beta):
    eta = coefs.eta(S, U)
    pen = lam_alpha * float(np.sum(np.asarray(coefs.alpha) ** 2)) + \
        lam_beta * float(np.sum(np.asarray(coefs.beta) ** 2))
    return _deviance_eta(fam, y, eta) + pen


def deviance_at(fam, y, eta):
    """Deviance for a given linear predictor (stable for extreme values)."""
    return _deviance_eta(fam, y, np.asarray(eta, float))
