#!/usr/bin/env python3
"""Wall-clock timings of single fits across families and problem sizes."""

import argparse
import time

import numpy as np

from fairfit.frrm import fit_fgrrm, fit_frrm
from fairfit.zafar import fit_zlm, fit_zlrm


def problem(rng, n, p, q, family, K=3):
    S = rng.normal(size=(n, q))
    X = S @ rng.normal(scale=0.5, size=(q, p)) + rng.normal(size=(n, p))
    eta = 0.3 * (S @ rng.normal(size=q) + X @ rng.normal(size=p) / np.sqrt(p))
    if family == "gaussian":
        return X, S, eta + rng.normal(size=n), None
    if family == "binomial":
        return X, S, (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float), None
    if family == "poisson":
        return X, S, rng.poisson(np.exp(0.5 + 0.3 * eta)).astype(float), None
    E = eta[:, None] * np.linspace(-1, 1, K)[None, :]
    P = np.exp(E - E.max(axis=1, keepdims=True))
    codes = (np.cumsum(P / P.sum(axis=1, keepdims=True), axis=1) < rng.random(n)[:, None]).sum(1)
    return X, S, np.minimum(codes, K - 1), tuple(f"c{k}" for k in range(K))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="1000x20x5,5000x60x10")
    ap.add_argument("--r", type=float, default=0.05)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'model':<22}{'n':>7}{'p':>5}{'q':>5}{'best s':>10}")
    for size in args.sizes.split(","):
        n, p, q = map(int, size.split("x"))
        for name in ("frrm", "fgrrm-binomial", "fgrrm-poisson", "fgrrm-multinomial",
                     "zlm", "zlrm"):
            family = {"frrm": "gaussian", "zlm": "gaussian", "zlrm": "binomial"}.get(
                name, name.split("-")[-1])
            X, S, y, lv = problem(rng, n, p, q, family)
            if name == "frrm":
                call = lambda: fit_frrm(y, X, S, args.r)  # noqa: E731
            elif name == "zlm":
                call = lambda: fit_zlm(y, X, S, args.r)  # noqa: E731
            elif name == "zlrm":
                call = lambda: fit_zlrm(y, X, S, args.r)  # noqa: E731
            else:
                call = lambda: fit_fgrrm(y, X, S, args.r, family=family, levels=lv)  # noqa
            best = np.inf
            for _ in range(args.repeat):
                t = time.perf_counter()
                call()
                best = min(best, time.perf_counter() - t)
            print(f"{name:<22}{n:>7}{p:>5}{q:>5}{best:>10.3f}")


if __name__ == "__main__":
    main()
