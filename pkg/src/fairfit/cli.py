"""Command-line interface.

Exit status: 0 on success, 2 for usage or schema errors, 3 for numerical
failures.  Every flag can also come from a ``key = value`` config file
given with ``--config`` (alias ``--schema``); flags on the command line win.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import warnings

import numpy as np

from . import model as M
from . import synth, validation as V
from .data import Schema, infer_factors, load_csv, read_rows
from .errors import ContractError, FairfitError, NumericError, SchemaError
from .svg import line_plot, scatter_plot

DEFINITIONS = ("sp-komiyama", "eo-komiyama", "if-berk", "max-corr")
ESTIMATORS = ("frrm", "fgrrm", "zlm", "zlrm", "zlm-orig", "zlrm-orig")
FAMILIES = ("gaussian", "binomial", "poisson", "multinomial")
BOOL_KEYS = {"save_auxiliary", "zero_alpha"}


class Stage:
    """Name of the step in progress, for error messages."""

    def __init__(self):
        self.name = "setup"

    def __call__(self, name):
        self.name = name


def _csv_list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip()) if text else ()


def _threads_default():
    env = os.environ.get("FAIRFIT_THREADS")
    try:
        return max(int(env), 1) if env else 1
    except ValueError:
        return 1


def _data_args(p, response_required=True):
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--response", required=response_required, help="response column")
    p.add_argument("--sensitive", required=True, type=_csv_list,
                   help="comma-separated sensitive columns")
    p.add_argument("--predictors", type=_csv_list, default=None,
                   help="comma-separated predictors (default: all other columns)")
    p.add_argument("--factors", type=_csv_list, default=(),
                   help="columns to treat as factors (non-numeric columns always are)")
    p.add_argument("--ignore", type=_csv_list, default=(), help="columns to leave out")


def _model_args(p):
    p.add_argument("--estimator", choices=ESTIMATORS, default="frrm")
    p.add_argument("--family", choices=FAMILIES, default=None)
    p.add_argument("--unfairness", type=float, default=0.05,
                   help="bound r in [0, 1] (covariance bound c >= 0 for *-orig)")
    p.add_argument("--definition", choices=DEFINITIONS, default="sp-komiyama")
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.0,
                   help="extra ridge penalty on the predictor coefficients")


def _config_arg(p):
    p.add_argument("--config", "--schema", dest="config", help="key = value config file")


def build_parser():
    parser = argparse.ArgumentParser(prog="fairfit", description="Fair ridge regression models")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["fit"] = sub.add_parser("fit", help="fit a model and print its summary")
    _config_arg(p)
    _data_args(p)
    _model_args(p)
    p.add_argument("--save-auxiliary", action="store_true",
                   help="store the decorrelation model in the model file")
    p.add_argument("--out", help="model JSON output path")
    p.add_argument("--fitted", help="write fitted values CSV here")

    p = subs["predict"] = sub.add_parser("predict", help="predict new rows from a model file")
    _config_arg(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--type", choices=("link", "response", "class"), default="response")
    p.add_argument("--out", help="predictions CSV (default: stdout)")

    p = subs["summary"] = sub.add_parser("summary", help="print a model summary")
    _config_arg(p)
    p.add_argument("--model", required=True)
    p.add_argument("--diagnostics", help="directory for diagnostic CSV files")
    p.add_argument("--svg", action="store_true", help="also write SVG diagnostic plots")

    p = subs["cv"] = sub.add_parser("cv", help="cross-validate a model")
    _config_arg(p)
    _data_args(p)
    _model_args(p)
    p.add_argument("--method", choices=("k-fold", "hold-out", "custom-folds"), default="k-fold")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--ratio", type=float, default=0.2, help="hold-out test fraction")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=_threads_default())
    p.add_argument("--folds-file", help="reuse fold assignments from this CSV")
    p.add_argument("--save-folds", help="write the fold assignments here")
    p.add_argument("--out", help="per-fold loss CSV")

    p = subs["profile"] = sub.add_parser("profile", help="fit over a grid of bounds")
    _config_arg(p)
    _data_args(p)
    _model_args(p)
    p.add_argument("--grid", default=None,
                   help="comma-separated bounds or start:stop:step (default 0:1:0.02)")
    p.add_argument("--type", choices=("coefficients", "constraints", "precision-recall",
                                      "rmse"), default="coefficients")
    p.add_argument("--threads", type=int, default=_threads_default())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="profile CSV (default: stdout)")
    p.add_argument("--svg", help="write an SVG line plot here")

    p = subs["synth"] = sub.add_parser("synth", help="generate synthetic data")
    _config_arg(p)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--binary-factors", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--family", choices=FAMILIES, default="gaussian")
    p.add_argument("--g0", type=float, default=0.5, help="planted unconstrained unfairness")
    p.add_argument("--zero-alpha", action="store_true", help="plant no sensitive effect")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth JSON (default: <out>.truth.json)")
    return parser, subs


def read_config(path):
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise SchemaError(f"cannot read config file {path}: {exc.strerror}") from None
    try:
        cp.read_string("[fairfit]\n" + text)
    except configparser.Error as exc:
        raise SchemaError(f"{path}: {exc}") from None
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            value = value.strip()
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key.strip().replace("-", "_")] = value
    return out


def _apply_config(argv, subs):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", "--schema", dest="config")
    known, _ = pre.parse_known_args(argv)
    cmd = next((a for a in argv if a in subs), None)
    if not known.config or cmd is None:
        return
    cfg = read_config(known.config)
    p = subs[cmd]
    dests = {a.dest: a for a in p._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = "lambda_" if key == "lambda" else key
        if dest not in dests or dest in ("help", "config"):
            raise SchemaError(f"config file {known.config}: unknown key {key!r} for {cmd}")
        if dest in BOOL_KEYS:
            defaults[dest] = value.lower() in ("1", "true", "yes", "on")
        else:
            act = dests[dest]
            conv = act.type or str
            try:
                defaults[dest] = conv(value)
            except (TypeError, ValueError):
                raise SchemaError(f"config file {known.config}: bad value for {key!r}") from None
            if act.choices is not None and defaults[dest] not in act.choices:
                raise SchemaError(f"config file {known.config}: {key} must be one of "
                                  f"{list(act.choices)}")
        # a config value satisfies a required flag
        dests[dest].required = False
    p.set_defaults(**defaults)


# ----------------------------------------------------------------------------
# shared steps
# ----------------------------------------------------------------------------

def _validate_model_args(args):
    est = M.canonical_estimator(args.estimator)
    M.check_family(est, args.family)
    r = args.unfairness
    if est.endswith("_orig"):
        if not (r >= 0):
            raise SchemaError(f"covariance bound must be non-negative, got {r}")
    elif not (0.0 <= r <= 1.0):
        raise SchemaError(f"--unfairness must lie in [0, 1], got {r}")
    if not (args.lambda_ >= 0) or not np.isfinite(args.lambda_):
        raise SchemaError(f"--lambda must be finite and non-negative, got {args.lambda_}")
    if est.startswith("z") and args.definition != "sp-komiyama":
        raise SchemaError(f"{args.estimator} uses correlation bounds; --definition applies "
                          "to frrm and fgrrm only")
    return est


def _load(args):
    factors = set(args.factors) | set(infer_factors(args.data))
    schema = Schema(response=args.response, sensitive=tuple(args.sensitive),
                    predictors=None if args.predictors is None else tuple(args.predictors),
                    factors=tuple(sorted(factors)), ignored=tuple(args.ignore))
    ds = load_csv(args.data, schema)
    if ds.dropped:
        print(f"note: {ds.dropped} row(s) with missing values dropped", file=sys.stderr)
    return ds


def _fit_kwargs(args):
    kw = {"family": args.family, "lambda_beta": args.lambda_}
    if args.estimator in ("frrm", "fgrrm"):
        kw["definition"] = args.definition
    return kw


def _open_out(path):
    return open(path, "w", newline="", encoding="utf-8") if path else sys.stdout


def _prediction_table(m, ds, kind):
    out = M.predict(m, ds, type="link" if kind == "link" else "response")
    fam = m.family
    cols, data = [], []
    if kind == "class":
        cols, data = ["class"], [M.classify(fam, out)]
    elif fam.multinomial:
        cols = [f"{'link' if kind == 'link' else 'prob'}_{lv}" for lv in fam.levels]
        data = [out[:, k] for k in range(out.shape[1])]
        if kind == "response":
            cols.append("class")
            data.append(M.classify(fam, out))
    elif fam.kind == "binomial" and kind == "response":
        cols = [f"prob_{fam.levels[0]}", f"prob_{fam.levels[1]}", "class"]
        data = [1.0 - out, out, M.classify(fam, out)]
    else:
        cols, data = ["link" if kind == "link" else "fit"], [out]
    rows = [[int(ds.row_ids[i]), *[d[i] for d in data]] for i in range(ds.n)]
    return ["row", *cols], rows


def _parse_grid(text):
    if not text:
        return list(V.DEFAULT_GRID)
    if ":" in text:
        parts = [float(t) for t in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise SchemaError("--grid start:stop:step needs a positive step")
        start, stop, step = parts
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise SchemaError(f"bad --grid value {text!r}") from None


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_fit(args, stage):
    est = _validate_model_args(args)
    stage("loading data")
    ds = _load(args)
    stage("fitting")
    m = M.fit_model(ds, est, args.unfairness, save_auxiliary=args.save_auxiliary,
                    **_fit_kwargs(args))
    sys.stdout.write(M.format_summary(m))
    stage("writing output")
    if args.out:
        M.save_model(m, args.out)
    if args.fitted:
        header, rows = _prediction_table(m, ds, "response")
        V.write_table(args.fitted, header, rows)
    return 0


def cmd_predict(args, stage):
    stage("loading model")
    m = M.load_model(args.model)
    stage("loading data")
    header, _ = read_rows(args.data)
    need_s = [s.name for s in m.sensitive_specs]
    if m.uses_sensitive:
        missing = [c for c in need_s if c not in header]
        if missing:
            raise ContractError(
                f"{m.method} models include the sensitive attributes in the model equation, "
                f"so they must be supplied at prediction time; missing: {', '.join(missing)}")
    specs = list(m.predictor_specs) + (list(m.sensitive_specs) if m.uses_sensitive else [])
    levels = {s.name: s.levels for s in specs if s.is_factor}
    schema = Schema(response=None, sensitive=tuple(need_s) if m.uses_sensitive else (),
                    predictors=tuple(s.name for s in m.predictor_specs),
                    factors=tuple(levels))
    ds = load_csv(args.data, schema, levels=levels, require_response=False)
    stage("predicting")
    if args.type == "class" and not m.family.classification:
        raise SchemaError(f"--type class needs a classification model, not {m.family.kind}")
    header, rows = _prediction_table(m, ds, args.type)
    stage("writing output")
    fh = _open_out(args.out)
    try:
        V.write_table(fh, header, rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_summary(args, stage):
    stage("loading model")
    m = M.load_model(args.model)
    sys.stdout.write(M.format_summary(m))
    if args.diagnostics:
        stage("diagnostics")
        os.makedirs(args.diagnostics, exist_ok=True)
        d = M.diagnostics(m)
        join = lambda name: os.path.join(args.diagnostics, name)  # noqa: E731
        if "confusion" in d:
            lv = d["levels"]
            V.write_table(join("confusion.csv"), ["observed", *lv],
                          [[lv[i], *map(int, row)] for i, row in enumerate(d["confusion"])])
            rows = [[k, f, t] for k, c in d["roc"].items() for f, t in zip(c["fpr"], c["tpr"])]
            V.write_table(join("roc.csv"), ["class", "fpr", "tpr"], rows)
            V.write_table(join("auc.csv"), ["class", "auc"],
                          [[k, c["auc"]] for k, c in d["roc"].items()])
            if args.svg:
                series = {f"{k} (AUC {c['auc']:.3f})": (c["fpr"], c["tpr"])
                          for k, c in d["roc"].items()}
                _write(join("roc.svg"), line_plot(series, "ROC", "false positive rate",
                                                  "true positive rate"))
        else:
            V.write_table(join("observed_fitted.csv"), ["observed", "fitted"],
                          d["observed_fitted"].tolist())
            V.write_table(join("qq.csv"), ["theoretical", "sample"], d["qq"].tolist())
            if args.svg:
                of = d["observed_fitted"]
                _write(join("observed_fitted.svg"),
                       scatter_plot(of[:, 1], of[:, 0], "Observed vs fitted", "fitted",
                                    "observed", diagonal=True))
                _write(join("qq.svg"), scatter_plot(d["qq"][:, 0], d["qq"][:, 1], "Normal Q-Q",
                                                    "theoretical", "sample", diagonal=True))
        V.write_table(join("residuals_fitted.csv"), ["fitted", "deviance_residual"],
                      d["residuals_fitted"].tolist())
        if args.svg:
            rf = d["residuals_fitted"]
            _write(join("residuals_fitted.svg"),
                   scatter_plot(rf[:, 0], rf[:, 1], "Residuals vs fitted", "fitted",
                                "deviance residual"))
    return 0


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_cv(args, stage):
    est = _validate_model_args(args)
    if args.threads < 1:
        raise SchemaError("--threads must be at least 1")
    if args.method == "custom-folds" and not args.folds_file:
        raise SchemaError("--method custom-folds needs --folds-file")
    stage("loading data")
    ds = _load(args)
    stage("building folds")
    if args.folds_file:
        plan = V.load_folds(args.folds_file)
    else:
        plan = V.make_plan(ds.n, args.method, k=args.k, runs=args.runs, seed=args.seed,
                           ratio=args.ratio)
    stage("cross-validating")
    res = V.cross_validate(ds, est, args.unfairness, _fit_kwargs(args), plan,
                           threads=args.threads)
    sys.stdout.write(res.report())
    stage("writing output")
    if args.save_folds:
        V.save_folds(plan, args.save_folds, ds.row_ids)
    if args.out:
        V.write_table(args.out, *V.cv_rows(res))
    return 0


def cmd_profile(args, stage):
    est = _validate_model_args(args)
    grid = _parse_grid(args.grid)
    if args.threads < 1:
        raise SchemaError("--threads must be at least 1")
    stage("loading data")
    ds = _load(args)
    stage("profiling")
    prof = V.profile(ds, est, _fit_kwargs(args), grid, args.type, threads=args.threads)
    stage("writing output")
    fh = _open_out(args.out)
    try:
        V.write_table(fh, list(prof.columns), prof.values.tolist())
    finally:
        if fh is not sys.stdout:
            fh.close()
    if args.svg:
        r = prof.values[:, 0]
        series = {name: (r, prof.values[:, j]) for j, name in enumerate(prof.columns) if j}
        _write(args.svg, line_plot(series, f"{args.estimator} {args.type} profile",
                                   "unfairness", args.type))
    return 0


def cmd_synth(args, stage):
    cfg = synth.SynthConfig(n=args.n, p=args.p, q=args.q, family=args.family, g0=args.g0,
                            seed=args.seed, binary_factors=args.binary_factors,
                            classes=args.classes, zero_alpha=args.zero_alpha)
    stage("generating")
    truth = synth.write(cfg, args.out, args.truth)
    print(f"wrote {args.out} (n = {cfg.n}, planted value {truth['planted_value']:.4g})")
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "summary": cmd_summary, "cv": cmd_cv,
            "profile": cmd_profile, "synth": cmd_synth}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    stage = Stage()
    try:
        _apply_config(argv, subs)
        args = parser.parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _show_warning
            return COMMANDS[args.command](args, stage)
    except SchemaError as exc:
        print(f"fairfit: error ({stage.name}): {exc}", file=sys.stderr)
        return 2
    except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"fairfit: numerical failure ({stage.name}): {exc}", file=sys.stderr)
        return 3
    except FairfitError as exc:
        print(f"fairfit: error ({stage.name}): {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # downstream reader went away (e.g. piped into head)
        sys.stdout = open(os.devnull, "w")
        return 0


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"fairfit: warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
