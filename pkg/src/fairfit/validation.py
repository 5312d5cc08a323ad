"""Cross-validation and fairness profiles.

Fold shuffling uses ``numpy.random.default_rng(seed)`` (PCG64), so a seed
gives the same folds on every platform.  Fits run in a thread pool but
results are always gathered in (run, fold) or grid order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import glm
from .errors import SchemaError
from .model import canonical_estimator, check_family, coefficient_table, fit_model, predict

SCHEMES = ("k_fold", "hold_out", "custom")
DEFAULT_GRID = tuple(round(0.02 * i, 2) for i in range(51))
PROFILE_KINDS = ("coefficients", "constraints", "precision_recall", "rmse")


@dataclass(frozen=True)
class FoldPlan:
    """Test-fold index of every row, per run.

    A row with fold ``-1`` is never tested (hold-out training rows, or rows
    excluded by a custom plan).
    """

    scheme: str
    assignments: tuple
    k: int | None = None
    ratio: float | None = None
    seed: int | None = None

    @property
    def runs(self):
        return len(self.assignments)

    @property
    def n(self):
        return len(self.assignments[0]) if self.assignments else 0

    def folds(self, run):
        a = self.assignments[run]
        return [int(f) for f in np.unique(a[a >= 0])]

    def splits(self, run):
        a = self.assignments[run]
        for f in self.folds(run):
            yield f, np.flatnonzero(a != f), np.flatnonzero(a == f)


def make_plan(n, scheme="k_fold", k=10, runs=1, seed=0, ratio=0.2, assignments=None):
    """Build a :class:`FoldPlan` for ``n`` rows."""
    scheme = scheme.replace("-", "_")
    if scheme == "custom_folds":
        scheme = "custom"
    if scheme not in SCHEMES:
        raise SchemaError(f"unknown cross-validation scheme {scheme!r}")
    if scheme == "custom":
        if assignments is None:
            raise SchemaError("a custom plan needs fold assignments")
        rows = tuple(np.asarray(a, dtype=np.int64) for a in assignments)
        if any(len(a) != n for a in rows):
            raise SchemaError(f"fold assignments must have one entry per row ({n})")
        if any(np.sum(a >= 0) == 0 for a in rows):
            raise SchemaError("every run needs at least one test fold")
        return FoldPlan("custom", rows)
    if runs < 1:
        raise SchemaError("runs must be at least 1")
    rng = np.random.default_rng(seed)
    out = []
    if scheme == "k_fold":
        if not 2 <= k <= n:
            raise SchemaError(f"k must lie in [2, n={n}], got {k}")
        for _ in range(runs):
            a = np.empty(n, dtype=np.int64)
            a[rng.permutation(n)] = np.arange(n) % k
            out.append(a)
        return FoldPlan("k_fold", tuple(out), k=k, seed=seed)
    if not 0 < ratio < 1:
        raise SchemaError(f"hold-out ratio must lie in (0, 1), got {ratio}")
    m = min(max(int(round(ratio * n)), 1), n - 1)
    for _ in range(runs):
        a = np.full(n, -1, dtype=np.int64)
        a[rng.permutation(n)[:m]] = 0
        out.append(a)
    return FoldPlan("hold_out", tuple(out), ratio=ratio, seed=seed)


# ----------------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------------

def loss_names(family):
    return ("precision", "recall") if family in ("binomial", "multinomial") else ("rmse",)


def rmse(y, mu):
    return math.sqrt(float(np.mean((np.asarray(y, float) - mu) ** 2)))


def precision_recall(obs, pred, K, positive=None):
    """Precision and recall; macro-averaged unless ``positive`` is given.

    An empty denominator counts as 0.
    """
    classes = [positive] if positive is not None else range(K)
    prec, rec = [], []
    for k in classes:
        tp = np.sum((pred == k) & (obs == k))
        pp = np.sum(pred == k)
        ap = np.sum(obs == k)
        prec.append(tp / pp if pp else 0.0)
        rec.append(tp / ap if ap else 0.0)
    return float(np.mean(prec)), float(np.mean(rec))


def _codes(fam, y):
    return np.argmax(y, axis=1) if fam.multinomial else np.asarray(y).astype(int)


def losses(m, y_working, mu):
    """Losses of response-scale predictions ``mu`` against working ``y``."""
    fam = m.family
    if not fam.classification:
        return (rmse(y_working, mu),)
    obs = _codes(fam, y_working)
    pred = np.argmax(mu, axis=1) if fam.multinomial else (mu > 0.5).astype(int)
    return precision_recall(obs, pred, fam.K or 2, None if fam.multinomial else 1)


# ----------------------------------------------------------------------------
# cross-validation
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CVResult:
    estimator: str
    plan: FoldPlan
    loss_names: tuple
    fold_losses: tuple  # per run: (n_folds x n_losses) array
    run_losses: np.ndarray  # runs x n_losses
    call: dict = field(default_factory=dict)

    @property
    def mean(self):
        return self.run_losses.mean(axis=0)

    @property
    def sd(self):
        if self.run_losses.shape[0] < 2:
            return np.full(self.run_losses.shape[1], np.nan)
        return self.run_losses.std(axis=0, ddof=1)

    def report(self):
        lines = [f"Cross-validated {self.estimator.replace('_', '-')} "
                 f"({self.plan.scheme.replace('_', '-')}, {self.plan.runs} run(s))", ""]
        for j, name in enumerate(self.loss_names):
            lines.append(f"{name}:")
            lines.append(f"  average loss over the runs: {self.mean[j]:.7g}")
            lines.append(f"  standard deviation of the loss: {self.sd[j]:.7g}")
        return "\n".join(lines) + "\n"


def _factor_roles(ds):
    return [c for c in ds.names("response") + ds.names("sensitive") + ds.names("predictor")
            if ds.specs[c].is_factor]


def _check_training_fold(ds, rows, run, fold):
    for name in _factor_roles(ds):
        spec = ds.specs[name]
        present = np.unique(ds.columns[name][rows])
        if name == ds.response_name and len(present) < len(spec.levels):
            lost = [spec.levels[i] for i in range(len(spec.levels)) if i not in present]
            raise SchemaError(f"run {run + 1}, fold {fold + 1}: training rows lose level(s) "
                              f"{', '.join(map(str, lost))} of response {name!r}")
        if len(present) < 2:
            raise SchemaError(f"run {run + 1}, fold {fold + 1}: factor {name!r} has a single "
                              "level in the training rows")


def _pool(threads, fn, items):
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _model_args(estimator, args):
    args = dict(args or {})
    args["family"] = check_family(estimator, args.get("family"))
    return args


def cross_validate(ds, estimator, unfairness, model_args=None, plan=None, threads=1):
    """Refit ``estimator`` inside each training fold and score the test rows.

    The decorrelation is re-estimated on every training fold and applied to
    the test rows through the fold's own auxiliary model.
    """
    est = canonical_estimator(estimator)
    args = _model_args(est, model_args)
    args.pop("save_auxiliary", None)
    ds.check_roles()
    if plan is None:
        plan = make_plan(ds.n)
    if plan.n != ds.n:
        raise SchemaError(f"fold plan covers {plan.n} rows but the data has {ds.n}")
    tasks = [(run, f, tr, te) for run in range(plan.runs) for f, tr, te in plan.splits(run)]
    for run, f, tr, _ in tasks:
        _check_training_fold(ds, tr, run, f)

    def work(task):
        run, f, tr, te = task
        m = fit_model(ds.take(tr), est, unfairness, save_auxiliary=True, **args)
        test = ds.take(te)
        mu = predict(m, test, type="response")
        _, yw = glm.make_response(m.family.kind, *_response(test, m))
        return losses(m, yw, mu)

    results = _pool(threads, work, tasks)
    names = loss_names(args["family"])
    folds, runs = [], []
    i = 0
    for run in range(plan.runs):
        nf = len(plan.folds(run))
        block = np.array(results[i:i + nf], dtype=float).reshape(nf, len(names))
        i += nf
        folds.append(block)
        runs.append(block.mean(axis=0))
    return CVResult(est, plan, names, tuple(folds), np.array(runs),
                    {"unfairness": unfairness, **{k: v for k, v in args.items()
                                                  if not callable(v)}})


def _response(ds, m):
    y = ds.columns[ds.response_name]
    spec = ds.specs[ds.response_name]
    return (y, spec.levels) if spec.is_factor else (y, None)


def extract_folds(res):
    return res.plan


@dataclass(frozen=True)
class LossTable:
    names: tuple
    values: np.ndarray  # runs x losses

    def summary(self):
        out = {}
        for j, name in enumerate(self.names):
            v = self.values[:, j]
            q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
            out[name] = {"min": q[0], "q1": q[1], "median": q[2], "mean": float(v.mean()),
                         "q3": q[3], "max": q[4]}
        return out


def extract_loss(res):
    return LossTable(res.loss_names, res.run_losses.copy())


# ----------------------------------------------------------------------------
# profiles
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    kind: str
    columns: tuple
    values: np.ndarray  # one row per grid point; column 0 is r
    models: tuple = field(default=(), repr=False, compare=False)


def _coef_columns(m):
    rows, cols, _ = coefficient_table(m)
    if len(cols) == 1:
        return rows
    return [f"{r}[{c}]" for r in rows for c in cols]


def _profile_row(kind, r, m):
    if kind == "coefficients":
        return [r, *coefficient_table(m)[2].ravel()]
    if kind == "constraints":
        if not m.uses_sensitive:
            key = "correlations" if m.definition_name == "correlation" else "covariances"
            return [r, *m.achieved[key]]
        rec = m.achieved
        return [r, rec.get("S_component", rec["value"]), rec.get("U_component", math.nan)]
    yw = m.training[0]
    if kind == "rmse":
        if m.family.classification:
            raise SchemaError("rmse profiles need a gaussian or poisson model")
        return [r, rmse(yw, m.stats.fitted)]
    if not m.family.classification:
        raise SchemaError("precision-recall profiles need a classification model")
    return [r, *losses(m, yw, m.stats.fitted)]


def _profile_columns(kind, m):
    if kind == "coefficients":
        return ("r", *_coef_columns(m))
    if kind == "constraints":
        if not m.uses_sensitive:
            return ("r", *m.sensitive_names)
        return ("r", "S_component", "U_component")
    if kind == "rmse":
        return ("r", "rmse")
    return ("r", "precision", "recall")


def profile(ds, estimator, model_args=None, grid=DEFAULT_GRID, kind="coefficients",
            threads=1):
    """One fit per bound in ``grid``; returns the requested profile table."""
    kind = kind.replace("-", "_")
    if kind not in PROFILE_KINDS:
        raise SchemaError(f"unknown profile type {kind!r}; expected one of {PROFILE_KINDS}")
    grid = [float(r) for r in grid]
    if not grid:
        raise SchemaError("empty profile grid")
    if any(r < 0 or r > 1 for r in grid) or any(b < a for a, b in zip(grid, grid[1:])):
        raise SchemaError("profile grid must be sorted and lie in [0, 1]")
    est = canonical_estimator(estimator)
    args = _model_args(est, model_args)
    models = _pool(threads, lambda r: fit_model(ds, est, r, **args), grid)
    cols = _profile_columns(kind, models[0])
    rows = np.array([_profile_row(kind, r, m) for r, m in zip(grid, models)], dtype=float)
    return Profile(kind, cols, rows, tuple(models))


# ----------------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------------

def fmt17(x):
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NA"
    return f"{x:.17g}"


def write_table(path_or_fh, header, rows):
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt17(v) for v in row])

    if hasattr(path_or_fh, "write"):
        emit(path_or_fh)
    else:
        with open(path_or_fh, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def cv_rows(res):
    header = ["run", "fold", *res.loss_names]
    rows = []
    for run, block in enumerate(res.fold_losses):
        for f, vals in zip(res.plan.folds(run), block):
            rows.append([run + 1, f + 1, *vals])
        rows.append([run + 1, "all", *res.run_losses[run]])
    rows.append(["mean", "", *res.mean])
    rows.append(["sd", "", *res.sd])
    return header, rows


def save_folds(plan, path, row_ids=None):
    n = plan.n
    ids = np.arange(1, n + 1) if row_ids is None else row_ids
    header = ["row", *[f"run{r + 1}" for r in range(plan.runs)]]
    rows = [[int(ids[i]), *[int(a[i]) + (1 if a[i] >= 0 else 0) for a in plan.assignments]]
            for i in range(n)]
    write_table(path, header, rows)


def load_folds(path):
    """Read a folds CSV written by :func:`save_folds` as a custom plan."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "row":
        raise SchemaError(f"{path}: not a folds file")
    try:
        a = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    except ValueError as exc:
        raise SchemaError(f"{path}: bad fold index ({exc})") from None
    a = np.where(a > 0, a - 1, -1)
    return make_plan(a.shape[0], "custom", assignments=[a[:, j] for j in range(a.shape[1])])
