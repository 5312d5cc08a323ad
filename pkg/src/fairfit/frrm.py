"""Fair (generalised) ridge regression.

The unfairness bound ``r`` is met by tuning the ridge penalty on the
sensitive-attribute coefficients: ``g(lam)`` is the chosen fairness
definition evaluated at the fit with penalty ``lam``, and
:func:`solve_lambda` finds ``g(lam) = r``.  Estimation itself never looks
at the definition, so any definition that decreases with ``lam`` works.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import fairness, glm
from .data import as_design
from .decorrelation import AuxiliaryModel, decorrelate
from .errors import IncompatibleDefinitionError, SchemaError

LAMBDA_MAX = 1e12
ROOT_TOL = 1e-4
MONOTONE_SLACK = 1e-6


@dataclass(frozen=True)
class FairModel:
    """A fitted fair model (FRRM, FGRRM or one of the Zafar variants).

    For F(G)RRM ``coefficients`` holds ``(mu, alpha, beta)`` on ``[1, S, U]``
    and ``raw_coefficients`` the same linear predictor re-expressed on
    ``[1, S, X]``, which is what prediction uses when no auxiliary model was
    saved.  Zafar models leave ``alpha`` empty.
    """

    method: str
    family: glm.Family
    coefficients: glm.CoefficientSet
    lambda_alpha: float
    lambda_beta: float
    r_bound: float
    achieved_value: float
    achieved: dict
    definition_name: str
    definition_label: str
    stats: glm.FitStats
    sensitive_names: tuple
    predictor_names: tuple
    raw_coefficients: glm.CoefficientSet | None = None
    auxiliary: AuxiliaryModel | None = None
    unconstrained_value: float | None = None
    flags: tuple = ()
    call: dict = field(default_factory=dict)
    sensitive_specs: tuple = ()
    predictor_specs: tuple = ()
    response_spec: object = None
    training: object = field(default=None, repr=False, compare=False)

    @property
    def uses_sensitive(self):
        return self.method in ("frrm", "fgrrm")

    @property
    def bound_attained(self):
        return "bound not attained" not in self.flags


def _check_r(r):
    r = float(r)
    if not (0.0 <= r <= 1.0) or math.isnan(r):
        raise SchemaError(f"unfairness must lie in [0, 1], got {r}")
    return r


def solve_lambda(g, r, lambda_max=LAMBDA_MAX, tol=ROOT_TOL, g0=None):
    """Find ``lam`` in ``(0, lambda_max]`` with ``g(lam) = r``.

    ``g`` must be non-increasing with ``g(0) > r``.  The root is bracketed
    by doubling (or halving) from ``lam = 1`` and then refined with Brent's
    method to a relative bracket width of ``1e-8``.  Returns ``lambda_max``
    when even the largest penalty leaves ``g > r``.

    Raises
    ------
    IncompatibleDefinitionError
        If a bracketing probe shows ``g`` increasing with ``lam`` by more
        than ``1e-6``.
    """
    def probe(lam, prev_lam, prev_val):
        val = g(lam)
        if prev_val is not None:
            rising = val > prev_val + MONOTONE_SLACK if lam > prev_lam \
                else val < prev_val - MONOTONE_SLACK
            if rising:
                raise IncompatibleDefinitionError(
                    f"fairness value is not monotone in the penalty: g({prev_lam:g}) = "
                    f"{prev_val:.6g}, g({lam:g}) = {val:.6g}")
        return val

    prev = g0
    prev_lam = 0.0
    lam = 1.0
    val = probe(lam, prev_lam, prev)
    if val > r:
        lo, hi = lam, None
        while hi is None:
            if lam >= lambda_max:
                return lambda_max
            prev, prev_lam = val, lam
            lam = min(2.0 * lam, lambda_max)
            val = probe(lam, prev_lam, prev)
            if val <= r:
                hi = lam
            else:
                lo = lam
    else:
        hi, lo = lam, None
        while lo is None:
            prev, prev_lam = val, lam
            lam = 0.5 * lam
            if lam < 1e-12:
                lo = 0.0
                break
            val = probe(lam, prev_lam, prev)
            if val > r:
                lo = lam
            else:
                hi = lam
    f = lambda x: g(x) - r  # noqa: E731
    return brentq(f, lo, hi, xtol=1e-8 * hi, rtol=1e-10, maxiter=200)


class _Calibration:
    """Penalised fits indexed by ``lambda_alpha``, with fairness values."""

    def __init__(self, fam, y, S, U, lam_beta, definition):
        self.fam, self.y, self.S, self.U = fam, y, S, U
        self.lam_beta = lam_beta
        self.definition = definition
        self.cache = {}
        self.reference = None

    def fit(self, lam):
        if lam in self.cache:
            return self.cache[lam]
        start = None
        if self.fam.kind != "gaussian" and self.cache:
            # warm start from the nearest probe in log-penalty
            key = min(self.cache, key=lambda k: abs(math.log1p(k) - math.log1p(lam)))
            start = self.cache[key][0]
        coefs, stats = glm.fit_penalized(self.fam, self.y, self.S, self.U, lam,
                                         self.lam_beta, start=start)
        if self.reference is None:
            self.reference = coefs
        view = fairness.make_view(coefs, stats, self.lam_beta, self.reference)
        rec = fairness.evaluate_record(self.definition, view, self.y, self.S, self.U, self.fam)
        self.cache[lam] = (coefs, stats, rec)
        return self.cache[lam]

    def g(self, lam):
        return self.fit(lam)[2]["value"]


def _raw_coefficients(coefs, aux):
    """Fold ``U = X - [1, S] B`` into coefficients on ``[1, S, X]``."""
    B0, BS = aux.B[0], aux.B[1:]
    if coefs.multinomial:
        return glm.CoefficientSet(coefs.intercept - coefs.beta @ B0,
                                  coefs.alpha - coefs.beta @ BS.T, coefs.beta.copy())
    return glm.CoefficientSet(float(coefs.intercept - B0 @ coefs.beta),
                              coefs.alpha - BS @ coefs.beta, coefs.beta.copy())


def fit_fgrrm(y, X, S, unfairness, definition="sp-komiyama", family="binomial",
              lambda_beta=0.0, save_auxiliary=False, *, levels=None,
              lambda_max=LAMBDA_MAX, method="fgrrm"):
    """Fit a fair generalised ridge regression model.

    Parameters
    ----------
    y : array-like
        Response: numeric, 0/1, or factor codes with ``levels``.
    X, S : DesignMatrix or array-like
        Predictors and sensitive attributes.
    unfairness : float
        Bound ``r`` in [0, 1] on the fairness definition.
    definition : str or callable
        Built-in name or ``f(model, y, S, U, family)``.
    family : str or Family
    lambda_beta : float
        Extra ridge penalty on the decorrelated-predictor coefficients.
    save_auxiliary : bool
        Keep the model producing the decorrelated predictors.

    Returns
    -------
    FairModel
    """
    r = _check_r(unfairness)
    if lambda_beta < 0 or not math.isfinite(lambda_beta):
        raise SchemaError("lambda must be finite and non-negative")
    X = as_design(X, "x")
    S = as_design(S, "s")
    fam, yw = glm.make_response(family, y, levels)
    U, aux = decorrelate(X, S)
    defn = fairness.resolve(definition)
    cal = _Calibration(fam, yw, S.values, U.values, float(lambda_beta), defn)

    flags = []
    g0 = cal.g(0.0)
    if g0 <= r:
        lam = 0.0
    elif r == 0.0:
        lam = lambda_max
    else:
        lam = solve_lambda(cal.g, r, lambda_max, g0=g0)
    if lam >= lambda_max and cal.g(lam) > r + ROOT_TOL:
        flags.append("bound not attained")
        warnings.warn(f"unfairness bound {r} not attained at the largest penalty "
                      f"{lambda_max:g}", RuntimeWarning, stacklevel=2)
    coefs, stats, rec = cal.fit(lam)
    if stats.separation:
        flags.append("separation")
    return FairModel(
        method=method, family=fam, coefficients=coefs, lambda_alpha=float(lam),
        lambda_beta=float(lambda_beta), r_bound=r, achieved_value=rec["value"],
        achieved=rec, definition_name=defn.name, definition_label=defn.label,
        stats=stats, sensitive_names=S.names, predictor_names=X.names,
        raw_coefficients=_raw_coefficients(coefs, aux),
        auxiliary=aux if save_auxiliary else None, unconstrained_value=g0,
        flags=tuple(flags),
        call={"unfairness": r, "definition": defn.name, "family": fam.kind,
              "lambda": float(lambda_beta)},
        sensitive_specs=S.specs, predictor_specs=X.specs,
        training=(yw, S.values, U.values, cal.reference))


def fit_frrm(y, X, S, unfairness, definition="sp-komiyama", lambda_beta=0.0,
             save_auxiliary=False, **kwargs):
    """Fair ridge regression: the Gaussian case of :func:`fit_fgrrm`."""
    return fit_fgrrm(y, X, S, unfairness, definition, "gaussian", lambda_beta,
                     save_auxiliary, method="frrm", **kwargs)
