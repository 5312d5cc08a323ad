"""Synthetic data with a planted unconstrained unfairness level.

The sensitive attributes are standard normal (plus optional binary
factors), the predictors are ``X = S @ Gamma + E``, and the linear
predictor is ``mu + S @ alpha + U @ beta`` with ``U`` the decorrelated
predictors of the sample itself.  ``alpha`` is scaled so that
``var(S alpha) / (var(S alpha) + var(U beta))`` equals ``g0`` exactly on
the sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import from_arrays
from .decorrelation import decorrelate
from .errors import SchemaError
from .glm import KINDS
from .validation import write_table


@dataclass(frozen=True)
class SynthConfig:
    n: int = 1000
    p: int = 3
    q: int = 2
    family: str = "gaussian"
    g0: float = 0.5
    seed: int = 0
    binary_factors: int = 0
    classes: int = 3
    signal_sd: float = 2.0
    noise_sd: float = 1.0
    zero_alpha: bool = False


def _check(cfg):
    if cfg.family not in KINDS:
        raise SchemaError(f"unknown family {cfg.family!r}")
    if cfg.n < 10 or cfg.p < 1 or cfg.q + cfg.binary_factors < 1:
        raise SchemaError("synthetic data needs n >= 10, p >= 1 and a sensitive column")
    if not cfg.zero_alpha and not 0.0 < cfg.g0 < 1.0:
        raise SchemaError(f"planted unfairness must lie strictly inside (0, 1), got {cfg.g0}")
    if cfg.family == "multinomial" and cfg.classes < 3:
        raise SchemaError("multinomial synthetic data needs at least 3 classes")


def _plant(sa, ub, g0, total_sd, zero_alpha):
    vs, vu = np.var(sa, ddof=1), np.var(ub, ddof=1)
    a = 0.0 if zero_alpha else math.sqrt(g0 * vu / ((1.0 - g0) * vs))
    scale = total_sd / math.sqrt(max(a * a * vs + vu, 1e-300))
    return a * scale, scale


def generate(cfg):
    """Return ``(header, rows, truth)`` for ``cfg``."""
    _check(cfg)
    rng = np.random.default_rng(cfg.seed)
    n, p, q, b = cfg.n, cfg.p, cfg.q, cfg.binary_factors
    Sn = rng.normal(size=(n, q))
    F = rng.integers(0, 2, size=(n, b))
    S = np.hstack([Sn, F.astype(float)])
    Gamma = rng.normal(scale=0.7, size=(q + b, p))
    X = S @ Gamma + rng.normal(size=(n, p))
    U = decorrelate(X, S)[0].values
    K = cfg.classes if cfg.family == "multinomial" else 1
    alpha = np.zeros((K, q + b))
    beta = np.zeros((K, p))
    for k in range(K):
        a0 = rng.normal(size=q + b)
        b0 = rng.normal(size=p)
        ca, cb = _plant(S @ a0, U @ b0, cfg.g0, cfg.signal_sd, cfg.zero_alpha)
        alpha[k], beta[k] = ca * a0, cb * b0
    eta = S @ alpha.T + U @ beta.T
    if cfg.family == "gaussian":
        mu0 = 1.0
        y = mu0 + eta[:, 0] + cfg.noise_sd * rng.normal(size=n)
        ycol = [float(v) for v in y]
    elif cfg.family == "binomial":
        mu0 = 0.0
        pr = 1.0 / (1.0 + np.exp(-(mu0 + eta[:, 0])))
        ycol = ["yes" if u < v else "no" for u, v in zip(rng.random(n), pr)]
    elif cfg.family == "poisson":
        mu0 = math.log(3.0)
        # keep the counts sensible: scale the linear predictor down
        eta = eta * (0.5 / cfg.signal_sd)
        alpha, beta = alpha * (0.5 / cfg.signal_sd), beta * (0.5 / cfg.signal_sd)
        ycol = [int(v) for v in rng.poisson(np.exp(mu0 + eta[:, 0]))]
    else:
        mu0 = 0.0
        e = eta - eta.max(axis=1, keepdims=True)
        pr = np.exp(e) / np.exp(e).sum(axis=1, keepdims=True)
        u = rng.random(n)
        codes = np.minimum((np.cumsum(pr, axis=1) < u[:, None]).sum(axis=1), K - 1)
        ycol = [f"c{c + 1}" for c in codes]
    snames = [f"s{j + 1}" for j in range(q)]
    fnames = [f"g{j + 1}" for j in range(b)]
    xnames = [f"x{j + 1}" for j in range(p)]
    header = ["y", *snames, *fnames, *xnames]
    rows = []
    for i in range(n):
        rows.append([ycol[i], *Sn[i], *["b" if f else "a" for f in F[i]], *X[i]])
    sa, ub = S @ alpha.T, U @ beta.T
    vs = float(np.sum(np.var(sa, axis=0, ddof=1)))
    vu = float(np.sum(np.var(ub, axis=0, ddof=1)))
    truth = {
        "config": asdict(cfg),
        "response": "y",
        "sensitive": snames + fnames,
        "predictors": xnames,
        "factors": (["y"] if cfg.family in ("binomial", "multinomial") else []) + fnames,
        "intercept": mu0,
        "alpha": alpha.tolist() if K > 1 else alpha[0].tolist(),
        "beta": beta.tolist() if K > 1 else beta[0].tolist(),
        "gamma": Gamma.tolist(),
        "planted_value": vs / (vs + vu) if vs + vu > 0 else 0.0,
    }
    return header, rows, truth


def write(cfg, path, truth_path=None):
    """Write the CSV and its ground-truth sidecar (``<path>.truth.json`` by default)."""
    header, rows, truth = generate(cfg)
    write_table(path, header, rows)
    truth_path = truth_path or f"{path}.truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1)
        fh.write("\n")
    return truth


def dataset(cfg):
    """The synthetic sample as an in-memory :class:`~fairfit.data.Dataset`."""
    header, rows, truth = generate(cfg)
    cols = {h: [r[j] for r in rows] for j, h in enumerate(header)}
    return from_arrays(
        ("y", cols["y"]),
        {c: cols[c] for c in truth["predictors"]},
        {c: cols[c] for c in truth["sensitive"]},
        factors=truth["factors"]), truth
