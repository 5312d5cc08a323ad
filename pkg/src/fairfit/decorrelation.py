"""Residualise predictors on the sensitive attributes.

Each predictor column is regressed on ``[1, S]`` by least squares and
replaced by its residual, so the result has zero column means and is
orthogonal to every sensitive column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import DesignMatrix, as_design
from .errors import SchemaError


@dataclass(frozen=True)
class AuxiliaryModel:
    """Coefficients of X on [1, S]; row 0 is the intercept row."""

    B: np.ndarray
    sensitive_names: tuple
    predictor_names: tuple

    def apply(self, S_new, X_new):
        return apply_aux(self, S_new, X_new)

    def to_dict(self):
        return {"B": self.B.tolist(),
                "sensitive_names": list(self.sensitive_names),
                "predictor_names": list(self.predictor_names)}

    @classmethod
    def from_dict(cls, d):
        B = np.asarray(d["B"], dtype=float).reshape(len(d["sensitive_names"]) + 1,
                                                    len(d["predictor_names"]))
        return cls(B, tuple(d["sensitive_names"]), tuple(d["predictor_names"]))


def _with_intercept(S):
    return np.hstack([np.ones((S.shape[0], 1)), S])


def _lstsq(Z, Y):
    # pivoted QR; minimum-norm solution for rank-deficient Z
    coef, *_ = scipy.linalg.lstsq(Z, Y, lapack_driver="gelsy", check_finite=False)
    return coef


def decorrelate(X, S):
    """Return ``(U, aux)`` with ``U = X - [1, S] @ aux.B``.

    One step of iterative refinement is applied to the least-squares
    solution, which brings ``S.T @ U`` down to rounding level even for
    badly scaled inputs.
    """
    X = as_design(X, "x")
    S = as_design(S, "s")
    if X.n != S.n:
        raise SchemaError("X and S have different numbers of rows")
    Z = _with_intercept(S.values)
    B = _lstsq(Z, X.values)
    R = X.values - Z @ B
    B = B + _lstsq(Z, R)
    U = X.values - Z @ B
    aux = AuxiliaryModel(B, tuple(S.names), tuple(X.names))
    return DesignMatrix(U, X.names, X.source, X.specs), aux


def apply_aux(aux, S_new, X_new):
    """Decorrelated predictors for new rows using training coefficients."""
    # bare arrays are matched by position, design matrices by name
    named = isinstance(S_new, DesignMatrix)
    S_new = as_design(S_new, "s")
    X_new = as_design(X_new, "x")
    if (named and S_new.names != aux.sensitive_names) or S_new.p != len(aux.sensitive_names):
        raise SchemaError(
            f"sensitive columns {list(S_new.names)} do not match training "
            f"columns {list(aux.sensitive_names)}")
    if X_new.p != len(aux.predictor_names):
        raise SchemaError(
            f"predictor columns {list(X_new.names)} do not match training "
            f"columns {list(aux.predictor_names)}")
    U = X_new.values - _with_intercept(S_new.values) @ aux.B
    return DesignMatrix(U, X_new.names, X_new.source, X_new.specs)
