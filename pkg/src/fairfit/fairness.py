"""Fairness definitions: functionals mapping a fitted model to [0, 1].

A definition is any callable ``f(model, y, S, U, family)`` returning a
mapping with a ``"value"`` entry, where ``model`` is a read-only
:class:`ModelView`, ``y`` the working response (a 0/1 vector for binomial
models, an indicator matrix for multinomial ones), ``S`` the sensitive
design matrix and ``U`` the decorrelated predictors.  0 means perfectly
fair, 1 means unconstrained.

Built-ins:

``sp-komiyama``
    Share of the fitted-value variance due to ``S @ alpha``; for
    non-Gaussian families the share of the explained deviance lost when
    ``alpha`` is set to zero.
``eo-komiyama``
    As above, but only counting the part of ``S @ alpha`` that the
    observed response does not explain linearly.
``if-berk``
    Pairwise individual fairness, relative to the unconstrained model.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import glm
from .errors import ContractError

EXACT_PAIRS_MAX_N = 500
CLAMP_SLACK = 1e-8


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModelView:
    """Read-only snapshot of a fit as seen by a fairness definition.

    ``reference`` holds the coefficients of the same model fitted without
    the fairness penalty; ``if-berk`` normalises against it.
    """

    coefficients: glm.CoefficientSet
    deviance: float
    loglik: float
    fitted: np.ndarray
    residuals: np.ndarray
    lambda_beta: float = 0.0
    reference: glm.CoefficientSet | None = None


def make_view(coefs, stats, lambda_beta=0.0, reference=None):
    freeze = lambda c: None if c is None else glm.CoefficientSet(  # noqa: E731
        c.intercept if not c.multinomial else _frozen(c.intercept),
        _frozen(c.alpha), _frozen(c.beta))
    return ModelView(freeze(coefs), stats.deviance, stats.loglik, _frozen(stats.fitted),
                     _frozen(stats.deviance_residuals), lambda_beta, freeze(reference))


def _as2d(a):
    a = np.asarray(a, float)
    return a[:, None] if a.ndim == 1 else a


def _components(coefs, S, U):
    """Sensitive and decorrelated parts of the linear predictor (n x K)."""
    if coefs.multinomial:
        return S @ coefs.alpha.T, U @ coefs.beta.T
    return _as2d(S @ coefs.alpha), _as2d(U @ coefs.beta)


def _var(a):
    a = _as2d(a)
    if a.shape[0] < 2:
        return 0.0
    return float(np.sum(np.var(a, axis=0, ddof=1)))


def _ratio(num, den):
    if den <= 0 or not math.isfinite(den):
        return 0.0
    return min(max(num / den, 0.0), 1.0)


def sp_komiyama(model, y, S, U, family):
    """Statistical parity: proportion of variance (or deviance) due to S."""
    S = np.asarray(S, float)
    U = np.asarray(U, float)
    c = model.coefficients
    sa, ub = _components(c, S, U)
    if family.kind == "gaussian":
        vs, vu = _var(sa), _var(ub)
        tot = vs + vu
        value = _ratio(vs, tot)
        return {"value": value, "S_component": value,
                "U_component": (1.0 - value) if tot > 0 else 0.0,
                "var_S": vs, "var_U": vu}
    off = ub if c.multinomial else ub[:, 0]
    d_ab = glm.deviance_at(family, y, c.eta(S, U))
    _, d_0b = glm.refit_intercept(family, y, off)
    d_00 = glm.null_deviance(family, y)
    explained = d_00 - d_ab
    value = _ratio(d_0b - d_ab, explained)
    return {"value": value, "S_component": value,
            "U_component": (1.0 - value) if explained > 0 else 0.0,
            "deviance": d_ab, "deviance_no_S": d_0b, "null_deviance": d_00}


def _response_design(y, family):
    y = _as2d(y)
    if family.multinomial:
        y = y[:, 1:]  # drop the reference class; the intercept spans it
    return np.hstack([np.ones((y.shape[0], 1)), y])


def eo_komiyama(model, y, S, U, family):
    """Equality of opportunity.

    The sensitive part ``S @ alpha`` of the linear predictor is regressed by
    least squares on ``[1, y]``; its residual is the variation due to the
    sensitive attributes that the response does not explain.  The value is
    that residual variance over itself plus the variance of ``U @ beta``.
    """
    S = np.asarray(S, float)
    U = np.asarray(U, float)
    sa, ub = _components(model.coefficients, S, U)
    Z = _response_design(y, family)
    gamma, *_ = np.linalg.lstsq(Z, sa, rcond=None)
    resid = sa - Z @ gamma
    vs, vu = _var(resid), _var(ub)
    tot = vs + vu
    value = _ratio(vs, tot)
    return {"value": value, "S_component": value,
            "U_component": (1.0 - value) if tot > 0 else 0.0,
            "var_S_given_y": vs, "var_U": vu}


def pairwise_brute(w_of, A):
    """Reference O(n^2) double loop: sum over i < j of w(i, j) |A_i - A_j|^2.

    Terms are summed with ``math.fsum`` (correctly rounded), as in the
    blocked exact path, so both give bit-identical totals.
    """
    A = _as2d(A)
    n = A.shape[0]
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            d = A[i] - A[j]
            terms.append(w_of(i, j) * float(np.sum(d * d)))
    return math.fsum(terms)


def _pairwise_exact(y, A, factor):
    n = A.shape[0]
    terms = []
    for start in range(0, n, 256):
        stop = min(start + 256, n)
        blk = A[start:stop]
        d2 = np.sum((blk[:, None, :] - A[None, :, :]) ** 2, axis=2)
        if factor:
            w = 1.0 - y[start:stop] @ y.T
        else:
            w = np.abs(y[start:stop, None] - y[None, :])
        mask = np.arange(start, stop)[:, None] < np.arange(n)[None, :]
        terms.append((w * d2)[mask])
    return math.fsum(np.concatenate(terms)) if terms else 0.0


def _spread(A):
    # sum over i < j of |A_i - A_j|^2 within one set
    if A.shape[0] < 2:
        return 0.0
    s = A.sum(axis=0)
    return float(A.shape[0] * np.sum(A * A) - s @ s)


def _pairwise_fast(y, A, factor):
    if factor:
        codes = np.argmax(y, axis=1)
        total = _spread(A)
        for k in np.unique(codes):
            total -= _spread(A[codes == k])
        return total
    order = np.argsort(y, kind="stable")
    ys, As = y[order], A[order]
    sq = np.sum(As * As, axis=1)
    cnt = np.arange(len(ys), dtype=float)
    c1 = np.vstack([np.zeros((1, As.shape[1])), np.cumsum(As, axis=0)[:-1]])
    c2 = np.concatenate([[0.0], np.cumsum(sq)[:-1]])
    cy = np.concatenate([[0.0], np.cumsum(ys)[:-1]])
    cya = np.vstack([np.zeros((1, As.shape[1])), np.cumsum(ys[:, None] * As, axis=0)[:-1]])
    cy2 = np.concatenate([[0.0], np.cumsum(ys * sq)[:-1]])
    # for each j: sum over earlier i of (y_j - y_i)(|A_i|^2 + |A_j|^2 - 2 A_i.A_j)
    part = ys * (cnt * sq + c2 - 2.0 * np.sum(As * c1, axis=1)) \
        - (cy * sq + cy2 - 2.0 * np.sum(As * cya, axis=1))
    return float(np.sum(part))


def pairwise_disparity(y, A, factor, method="auto"):
    """Sum over pairs of |y_i - y_j| (or 0/1 disagreement) times |A_i - A_j|^2."""
    A = _as2d(A)
    y = np.asarray(y, float)
    if not factor and y.ndim == 2:
        y = y[:, 0]
    if method == "auto":
        method = "exact" if A.shape[0] <= EXACT_PAIRS_MAX_N else "fast"
    if method == "exact":
        return _pairwise_exact(y, A, factor)
    return _pairwise_fast(y, A, factor)


def _reference_alpha(model, y, S, U, family):
    if model.reference is not None:
        return model.reference
    coefs, _ = glm.fit_penalized(family, y, S, U, 0.0, model.lambda_beta)
    return coefs


def if_berk(model, y, S, U, family):
    """Individual fairness, normalised by the unconstrained model."""
    S = np.asarray(S, float)
    U = np.asarray(U, float)
    factor = family.multinomial
    ref = _reference_alpha(model, y, S, U, family)
    sa, _ = _components(model.coefficients, S, U)
    sa_ref, _ = _components(ref, S, U)
    num = pairwise_disparity(y, sa, factor)
    den = pairwise_disparity(y, sa_ref, factor)
    if den <= 0:
        return {"value": 0.0, "numerator": num, "denominator": den}
    return {"value": min(max(num / den, 0.0), 1.0), "numerator": num, "denominator": den}


def max_corr(model, y, S, U, family):
    """Largest absolute correlation between a fitted-value column and a sensitive column."""
    F = _as2d(model.fitted)
    S = _as2d(S)
    best = 0.0
    for f in F.T:
        sf = np.std(f)
        if sf == 0:
            continue
        for s in S.T:
            ss = np.std(s)
            if ss == 0:
                continue
            best = max(best, abs(float(np.corrcoef(f, s)[0, 1])))
    return {"value": min(best, 1.0)}


BUILTINS = {
    "sp-komiyama": sp_komiyama,
    "eo-komiyama": eo_komiyama,
    "if-berk": if_berk,
}

NAMED = dict(BUILTINS, **{"max-corr": max_corr})

LABELS = {
    "sp-komiyama": "Komiyama's R^2 (statistical parity)",
    "eo-komiyama": "Komiyama's R^2 (equality of opportunity)",
    "if-berk": "Berk's individual fairness",
    "max-corr": "Maximum correlation with sensitive attributes",
}


@dataclass(frozen=True)
class FairnessDefinition:
    name: str
    evaluator: Callable

    @property
    def builtin(self):
        return self.name in BUILTINS and self.evaluator is BUILTINS[self.name]

    @property
    def label(self):
        return LABELS.get(self.name, f"Custom fairness ({self.name})")


def resolve(definition):
    """Turn a name, callable or :class:`FairnessDefinition` into a definition."""
    if isinstance(definition, FairnessDefinition):
        return definition
    if isinstance(definition, str):
        if definition not in NAMED:
            raise ContractError(f"unknown fairness definition {definition!r}; "
                                f"expected one of {sorted(NAMED)}")
        return FairnessDefinition(definition, NAMED[definition])
    if callable(definition):
        return FairnessDefinition(getattr(definition, "__name__", "custom"), definition)
    raise ContractError(f"cannot use {definition!r} as a fairness definition")


def evaluate_record(definition, model, y, S, U, family):
    """Run a definition and validate its ``"value"``.

    Built-in definitions keep all their entries; for anything else only
    ``"value"`` is retained.
    """
    d = resolve(definition)
    out = d.evaluator(model, y, S, U, family)
    if isinstance(out, Mapping):
        if "value" not in out:
            raise ContractError(f"fairness definition {d.name!r} returned no 'value'")
        value = out["value"]
    elif hasattr(out, "dtype") and out.dtype.names and "value" in out.dtype.names:
        value = out["value"]
    else:
        raise ContractError(f"fairness definition {d.name!r} must return a mapping with 'value'")
    value = float(np.asarray(value).ravel()[0])
    if not math.isfinite(value):
        raise ContractError(f"fairness definition {d.name!r} returned a non-finite value")
    if value < 0 or value > 1:
        excess = -value if value < 0 else value - 1
        if excess > CLAMP_SLACK:
            raise ContractError(
                f"fairness definition {d.name!r} returned {value}, outside [0, 1]")
        warnings.warn(f"clamping fairness value {value} into [0, 1]", RuntimeWarning,
                      stacklevel=2)
        value = min(max(value, 0.0), 1.0)
    if d.builtin:
        rec = dict(out)
        rec["value"] = value
        return rec
    return {"value": value}


def evaluate(definition, model, y, S, U, family):
    return evaluate_record(definition, model, y, S, U, family)["value"]
