"""Fitted-model surface: prediction, accessors, summaries, comparison, persistence."""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np
from scipy.stats import norm

from . import glm
from .data import Dataset, DesignMatrix, VariableSpec, as_design, encode, encode_columns, \
    response_values
from .decorrelation import AuxiliaryModel, apply_aux
from .errors import ContractError, SchemaError, UnsupportedOperation
from .frrm import FairModel, fit_fgrrm, fit_frrm
from .zafar import ZafarModel, fit_zlm, fit_zlm_orig, fit_zlrm, fit_zlrm_orig

FORMAT = "fairfit-model/1"

ESTIMATORS = ("frrm", "fgrrm", "zlm", "zlrm", "zlm_orig", "zlrm_orig")
METHOD_NAMES = {
    "frrm": "Fair Ridge Regression",
    "fgrrm": "Fair Generalized Ridge Regression",
    "zlm": "Zafar's Linear Regression",
    "zlrm": "Zafar's Logistic Regression",
    "zlm_orig": "Zafar's Linear Regression (covariance bound)",
    "zlrm_orig": "Zafar's Logistic Regression (covariance bound)",
}
# families each estimator accepts; the first is the default
FAMILIES = {
    "frrm": ("gaussian",),
    "fgrrm": ("binomial", "gaussian", "poisson", "multinomial"),
    "zlm": ("gaussian",),
    "zlrm": ("binomial",),
    "zlm_orig": ("gaussian",),
    "zlrm_orig": ("binomial",),
}


def canonical_estimator(name):
    key = str(name).lower().replace("-", "_")
    if key not in ESTIMATORS:
        raise SchemaError(f"unknown estimator {name!r}; expected one of "
                          f"{[e.replace('_', '-') for e in ESTIMATORS]}")
    return key


def check_family(estimator, family=None):
    """Resolve the family for ``estimator``, rejecting incompatible ones."""
    est = canonical_estimator(estimator)
    allowed = FAMILIES[est]
    if family is None:
        return allowed[0]
    if family not in glm.KINDS:
        raise SchemaError(f"unknown family {family!r}; expected one of {list(glm.KINDS)}")
    if family not in allowed:
        raise SchemaError(f"estimator {est.replace('_', '-')} does not support the "
                          f"{family} family (supported: {', '.join(allowed)})")
    return family


# ----------------------------------------------------------------------------
# fitting from a Dataset
# ----------------------------------------------------------------------------

def fit_model(ds, estimator, unfairness, *, definition="sp-komiyama", family=None,
              lambda_beta=0.0, save_auxiliary=False):
    """Fit ``estimator`` to the roles declared in ``ds``.

    ``unfairness`` is the bound r, or the covariance bound c for the
    ``*_orig`` estimators.
    """
    est = canonical_estimator(estimator)
    fam = check_family(est, family)
    ds.check_roles()
    y, levels = response_values(ds)
    X = encode(ds, "predictor")
    S = encode(ds, "sensitive")
    if est == "frrm":
        m = fit_frrm(y, X, S, unfairness, definition, lambda_beta, save_auxiliary,
                     levels=levels)
    elif est == "fgrrm":
        m = fit_fgrrm(y, X, S, unfairness, definition, fam, lambda_beta, save_auxiliary,
                      levels=levels)
    else:
        fitter = {"zlm": fit_zlm, "zlrm": fit_zlrm, "zlm_orig": fit_zlm_orig,
                  "zlrm_orig": fit_zlrm_orig}[est]
        m = fitter(y, X, S, unfairness, levels=levels)
    call = dict(m.call, estimator=est, response=ds.response_name,
                predictors=ds.names("predictor"), sensitive=ds.names("sensitive"))
    return dataclasses.replace(m, call=call, response_spec=ds.specs[ds.response_name])


# ----------------------------------------------------------------------------
# prediction
# ----------------------------------------------------------------------------

def _names(specs):
    return [s.name for s in specs]


def _predictor_matrix(m, newdata):
    if isinstance(newdata, Dataset):
        return encode_columns(newdata, _names(m.predictor_specs), m.predictor_specs).values
    X = newdata.values if isinstance(newdata, DesignMatrix) else as_design(newdata).values
    if X.shape[1] != len(m.predictor_names):
        raise SchemaError(f"expected {len(m.predictor_names)} predictor columns, "
                          f"got {X.shape[1]}")
    return X


def _sensitive_matrix(m, newdata, sensitive):
    src = sensitive if sensitive is not None else newdata
    need = _names(m.sensitive_specs)
    if isinstance(src, Dataset):
        missing = [c for c in need if c not in src.columns]
        if missing:
            raise ContractError(
                f"{m.method} models use the sensitive attributes in the model equation, so "
                f"prediction needs them; missing columns: {', '.join(missing)}")
        return encode_columns(src, need, m.sensitive_specs).values
    if sensitive is None:
        raise ContractError(f"{m.method} models use the sensitive attributes in the model "
                            "equation, so prediction needs them")
    S = src.values if isinstance(src, DesignMatrix) else as_design(src).values
    if S.shape[1] != len(m.sensitive_names):
        raise SchemaError(f"expected {len(m.sensitive_names)} sensitive columns, "
                          f"got {S.shape[1]}")
    return S


def predict_link(m, newdata, sensitive=None):
    X = _predictor_matrix(m, newdata)
    c = m.coefficients
    if not m.uses_sensitive:
        # Zafar models never look at the sensitive attributes here
        return c.intercept + X @ c.beta
    S = _sensitive_matrix(m, newdata, sensitive)
    if S.shape[0] != X.shape[0]:
        raise SchemaError("predictors and sensitive attributes have different row counts")
    if m.auxiliary is not None:
        return c.eta(S, apply_aux(m.auxiliary, S, X).values)
    return m.raw_coefficients.eta(S, X)


def classify(fam, mu):
    levels = np.asarray(fam.levels, dtype=object)
    if fam.kind == "binomial":
        return levels[(mu > 0.5).astype(int)]
    return levels[np.argmax(mu, axis=1)]


def predict(m, newdata, sensitive=None, type="response"):
    """Predictions for new rows.

    ``newdata`` is a :class:`Dataset` (encoded with the training schema) or
    a predictor matrix; ``sensitive`` supplies the sensitive attributes
    separately when they are not columns of ``newdata``.  ``type`` is
    ``"link"``, ``"response"`` or ``"class"``.
    """
    if type not in ("link", "response", "class"):
        raise SchemaError(f"unknown prediction type {type!r}")
    eta = predict_link(m, newdata, sensitive)
    if type == "link":
        return eta
    mu = glm.linkinv(m.family, eta)
    if type == "response":
        return mu
    if not m.family.classification:
        raise UnsupportedOperation(f"class predictions need a classification family, "
                                   f"not {m.family.kind}")
    return classify(m.family, mu)


# ----------------------------------------------------------------------------
# accessors
# ----------------------------------------------------------------------------

def coefficient_names(m):
    names = ["(Intercept)"]
    if m.uses_sensitive:
        names += list(m.sensitive_names)
    return names + list(m.predictor_names)


def coefficient_table(m):
    """``(row names, column names, matrix)`` of the model coefficients."""
    c = m.coefficients
    t = c.table()
    cols = [str(lv) for lv in m.family.levels] if m.family.multinomial else ["Estimate"]
    return coefficient_names(m), cols, t


def coef(m):
    rows, _, t = coefficient_table(m)
    if m.family.multinomial:
        return {r: t[i].copy() for i, r in enumerate(rows)}
    return {r: float(t[i, 0]) for i, r in enumerate(rows)}


def fitted(m):
    return m.stats.fitted


def residuals(m):
    """Deviance residuals."""
    return m.stats.deviance_residuals


def deviance(m):
    return m.stats.deviance


def nobs(m):
    return m.stats.n


def loglik(m):
    return m.stats.loglik


def aic(m):
    return glm.aic(m.stats.loglik, m.stats.df)


def bic(m):
    return glm.bic(m.stats.loglik, m.stats.df, m.stats.n)


def _n_coef(m):
    return len(coefficient_names(m))


def sigma(m):
    """Residual standard error of a Gaussian model."""
    if m.family.kind != "gaussian":
        raise UnsupportedOperation(f"sigma is only defined for gaussian models, "
                                   f"not {m.family.kind}")
    dof = max(m.stats.n - _n_coef(m), 1)
    return math.sqrt(m.stats.deviance / dof)


def r_squared(m):
    if m.family.kind != "gaussian":
        raise UnsupportedOperation("multiple R^2 is only defined for gaussian models")
    if m.stats.null_deviance <= 0:
        return 0.0
    return 1.0 - m.stats.deviance / m.stats.null_deviance


# ----------------------------------------------------------------------------
# summary
# ----------------------------------------------------------------------------

def _fmt(x):
    return f"{x:.4g}"


def summary(m):
    """Structured report of a fitted model (see :func:`format_summary`)."""
    rows, cols, t = coefficient_table(m)
    rep = {
        "method": m.method,
        "method_name": METHOD_NAMES[m.method],
        "call": dict(m.call),
        "family": m.family.kind,
        "coefficient_names": rows,
        "coefficient_columns": cols,
        "coefficients": t.tolist(),
        "lambda_alpha": m.lambda_alpha,
        "lambda_beta": m.lambda_beta,
        "loglik": m.stats.loglik,
        "deviance": m.stats.deviance,
        "aic": aic(m),
        "bic": bic(m),
        "nobs": m.stats.n,
        "definition": m.definition_name,
        "definition_label": m.definition_label,
        "achieved": m.achieved_value,
        "bound": m.r_bound,
        "flags": list(m.flags),
    }
    if m.family.kind == "gaussian":
        rep["sigma"] = sigma(m)
        rep["r_squared"] = r_squared(m)
    if not m.uses_sensitive:
        key = "correlations" if m.definition_name == "correlation" else "covariances"
        rep["marginal"] = dict(zip(m.sensitive_names, m.achieved[key]))
    return rep


def _call_text(m):
    call = m.call
    est = call.get("estimator", m.method)
    parts = []
    for key in ("response", "predictors", "sensitive"):
        if key in call:
            v = call[key]
            parts.append(f"{key} = {', '.join(v) if isinstance(v, list) else v}")
    parts.append(f"unfairness = {_fmt_bound(call.get('unfairness', m.r_bound))}")
    if m.method == "fgrrm":
        parts.append(f'family = "{m.family.kind}"')
    if m.uses_sensitive:
        if call.get("definition", "sp-komiyama") != "sp-komiyama":
            parts.append(f'definition = "{call["definition"]}"')
        if m.lambda_beta:
            parts.append(f"lambda = {_fmt(m.lambda_beta)}")
    return f"{est.replace('_', '.')}({', '.join(parts)})"


def _fmt_bound(b):
    if isinstance(b, (list, tuple)):
        return "c(" + ", ".join(_fmt(x) for x in b) + ")"
    return _fmt(float(b))


def _table_text(rows, cols, t):
    width = max(len(r) for r in rows)
    cells = [[f"{v:.7g}" for v in row] for row in t]
    cw = [max(len(c), *(len(cells[i][j]) for i in range(len(rows)))) for j, c in enumerate(cols)]
    out = [" " * width + "".join(f"  {c:>{cw[j]}}" for j, c in enumerate(cols))]
    for i, r in enumerate(rows):
        out.append(f"{r:<{width}}" + "".join(f"  {cells[i][j]:>{cw[j]}}"
                                              for j in range(len(cols))))
    return out


def format_summary(m):
    """Human-readable summary text."""
    rep = summary(m)
    lines = ["", "Fair Linear Regression Model", "", f"Method: {rep['method_name']}", "",
             "Call:", _call_text(m), "", "Coefficients:"]
    lines += _table_text(rep["coefficient_names"], rep["coefficient_columns"],
                         np.asarray(rep["coefficients"]))
    lines.append("")
    if m.uses_sensitive:
        lines.append(f"Ridge penalty (sensitive attributes): {_fmt(m.lambda_alpha)} "
                     f"(predictors): {_fmt(m.lambda_beta)}")
    lines.append(f"Log-likelihood: {_fmt(rep['loglik'])}")
    if "sigma" in rep:
        lines.append(f"Residual standard error: {_fmt(rep['sigma'])}")
        lines.append(f"Multiple R^2: {_fmt(rep['r_squared'])}")
    if m.uses_sensitive:
        lines.append(f"{m.definition_label}: {_fmt(m.achieved_value)} with bound: "
                     f"{_fmt(m.r_bound)}")
    else:
        lines.append(f"{m.definition_label}:")
        names = list(rep["marginal"])
        w = [max(len(n), 9) for n in names]
        lines.append(" ".join(f"{n:>{w[j]}}" for j, n in enumerate(names)))
        lines.append(" ".join(f"{abs(v):>{w[j]}.6f}" for j, v in enumerate(rep["marginal"].values())))
        lines.append(f"with bound: {_fmt_bound(m.call.get('unfairness', m.r_bound))}")
    for flag in m.flags:
        lines.append(f"Note: {flag}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# comparison
# ----------------------------------------------------------------------------

def _kind(m):
    # FGRRM with a Gaussian family is FRRM
    return "frrm" if m.method == "fgrrm" and m.family.kind == "gaussian" else m.method


def models_equal(a, b, tol=1e-8):
    """Compare two models; returns ``(equal, first difference or None)``."""
    if _kind(a) != _kind(b):
        return False, f"method: {a.method} vs {b.method}"
    if a.family.kind != b.family.kind or tuple(map(str, a.family.levels)) != \
            tuple(map(str, b.family.levels)):
        return False, f"family: {a.family.kind} vs {b.family.kind}"
    if tuple(a.sensitive_names) != tuple(b.sensitive_names):
        return False, "sensitive columns differ"
    if tuple(a.predictor_names) != tuple(b.predictor_names):
        return False, "predictor columns differ"
    rows, cols, ta = coefficient_table(a)
    _, _, tb = coefficient_table(b)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            x, y = ta[i, j], tb[i, j]
            if abs(x - y) > tol * max(1.0, abs(x), abs(y)):
                where = r if len(cols) == 1 else f"{r} [{c}]"
                return False, f"coefficient {where}: {x!r} vs {y!r}"
    return True, None


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------

def roc_curve(labels, scores):
    """One ROC curve: ``(fpr, tpr, auc)``; tied scores share a single step."""
    labels = np.asarray(labels, bool)
    scores = np.asarray(scores, float)
    order = np.argsort(-scores, kind="stable")
    s, lab = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(lab)[last]
    fp = np.cumsum(~lab)[last]
    P, N = lab.sum(), (~lab).sum()
    tpr = np.r_[0.0, tp / P] if P else np.zeros(len(last) + 1)
    fpr = np.r_[0.0, fp / N] if N else np.zeros(len(last) + 1)
    auc = float(np.trapezoid(tpr, fpr)) if P and N else float("nan")
    return fpr, tpr, auc


def observed_response(m):
    if m.training is None:
        raise UnsupportedOperation("the model carries no training response")
    return m.training[0]


def diagnostics(m):
    """Data behind the diagnostic plots.

    Gaussian: ``observed_fitted``, ``residuals_fitted`` and ``qq`` pairs.
    Classification: ``confusion`` (rows observed, columns predicted) and a
    one-vs-rest ``roc`` curve per class.
    """
    y = observed_response(m)
    mu = m.stats.fitted
    res = m.stats.deviance_residuals
    fam = m.family
    out = {"family": fam.kind}
    if not fam.classification:
        out["observed_fitted"] = np.column_stack([y, mu])
        out["residuals_fitted"] = np.column_stack([mu, res])
        n = len(res)
        theo = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
        sd = np.std(res, ddof=1) if n > 1 else 0.0
        sample = np.sort(res) / sd if sd > 0 else np.zeros(n)
        out["qq"] = np.column_stack([theo, sample])
        return out
    levels = [str(lv) for lv in fam.levels]
    K = len(levels)
    if fam.multinomial:
        obs = np.argmax(y, axis=1)
        pred = np.argmax(mu, axis=1)
        P = mu
    else:
        obs = y.astype(int)
        pred = (mu > 0.5).astype(int)
        P = np.column_stack([1.0 - mu, mu])
    conf = np.zeros((K, K), dtype=int)
    np.add.at(conf, (obs, pred), 1)
    out["levels"] = levels
    out["confusion"] = conf
    out["residuals_fitted"] = np.column_stack([P[:, -1] if not fam.multinomial
                                               else P[np.arange(len(obs)), obs], res])
    out["roc"] = {}
    for k in range(K) if fam.multinomial else [1]:
        fpr, tpr, auc = roc_curve(obs == k, P[:, k])
        out["roc"][levels[k]] = {"fpr": fpr, "tpr": tpr, "auc": auc}
    return out


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _spec_list(specs):
    return [s.to_dict() for s in specs]


def to_dict(m):
    rows, cols, t = coefficient_table(m)
    d = {
        "format": FORMAT,
        "method": m.method,
        "family": m.family.to_dict(),
        "definition": m.definition_name,
        "definition_label": m.definition_label,
        "bound": m.r_bound,
        "lambda_alpha": m.lambda_alpha,
        "lambda_beta": m.lambda_beta,
        "coefficients": {"rows": rows, "columns": cols, "values": t.tolist(),
                         "n_sensitive": len(m.sensitive_names) if m.uses_sensitive else 0},
        "raw_coefficients": None if m.raw_coefficients is None or not m.uses_sensitive
        else m.raw_coefficients.table().tolist(),
        "achieved": _plain(m.achieved),
        "achieved_value": m.achieved_value,
        "unconstrained_value": m.unconstrained_value,
        "flags": list(m.flags),
        "call": _plain(m.call),
        "stats": {
            "deviance": m.stats.deviance, "null_deviance": m.stats.null_deviance,
            "loglik": m.stats.loglik, "df": m.stats.df, "n": m.stats.n,
            "iterations": m.stats.iterations,
            "fitted": m.stats.fitted.tolist(),
            "deviance_residuals": m.stats.deviance_residuals.tolist(),
            "observed": None if m.training is None else np.asarray(m.training[0]).tolist(),
        },
        "auxiliary": None if m.auxiliary is None else m.auxiliary.to_dict(),
        "schema": {
            "response": None if m.response_spec is None else m.response_spec.to_dict(),
            "sensitive_names": list(m.sensitive_names),
            "predictor_names": list(m.predictor_names),
            "sensitive": _spec_list(m.sensitive_specs),
            "predictors": _spec_list(m.predictor_specs),
        },
    }
    return d


def from_dict(d):
    if d.get("format") != FORMAT:
        raise SchemaError(f"unsupported model file format {d.get('format')!r}; "
                          f"expected {FORMAT!r}")
    method = d["method"]
    fam = glm.Family.from_dict(d["family"])
    cf = d["coefficients"]
    q = cf["n_sensitive"]
    table = np.asarray(cf["values"], float)
    if method in ("frrm", "fgrrm"):
        coefs = glm.CoefficientSet.from_table(table, q)
        raw = None if d["raw_coefficients"] is None else \
            glm.CoefficientSet.from_table(np.asarray(d["raw_coefficients"], float), q)
        cls = FairModel
    else:
        coefs = glm.CoefficientSet(float(table[0, 0]), np.zeros(0), table[1:, 0].copy())
        raw = coefs
        cls = ZafarModel
    st = d["stats"]
    stats = glm.FitStats(st["deviance"], st["null_deviance"], st["loglik"], st["df"], st["n"],
                         np.asarray(st["fitted"], float),
                         np.asarray(st["deviance_residuals"], float), st.get("iterations", 0))
    sc = d["schema"]
    obs = st.get("observed")
    return cls(
        method=method, family=fam, coefficients=coefs, lambda_alpha=d["lambda_alpha"],
        lambda_beta=d["lambda_beta"], r_bound=d["bound"], achieved_value=d["achieved_value"],
        achieved=d["achieved"], definition_name=d["definition"],
        definition_label=d["definition_label"], stats=stats,
        sensitive_names=tuple(sc["sensitive_names"]),
        predictor_names=tuple(sc["predictor_names"]), raw_coefficients=raw,
        auxiliary=None if d["auxiliary"] is None else AuxiliaryModel.from_dict(d["auxiliary"]),
        unconstrained_value=d.get("unconstrained_value"), flags=tuple(d.get("flags", ())),
        call=d.get("call", {}),
        sensitive_specs=tuple(VariableSpec.from_dict(s) for s in sc["sensitive"]),
        predictor_specs=tuple(VariableSpec.from_dict(s) for s in sc["predictors"]),
        response_spec=None if sc["response"] is None else VariableSpec.from_dict(sc["response"]),
        training=None if obs is None else (np.asarray(obs, float), None, None, None))


def dumps(m):
    return json.dumps(to_dict(m), indent=1)


def save_model(m, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(m))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not a model file ({exc})") from None
    return from_dict(d)
