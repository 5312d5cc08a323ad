import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "fairfit", derandomize=True, deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fairfit")


def correlated(rng, n, p, q, mix=0.8):
    """Sensitive attributes S and predictors X sharing a common component."""
    S = rng.normal(size=(n, q))
    X = S @ rng.normal(scale=mix, size=(q, p)) + rng.normal(size=(n, p))
    return X, S


def response(rng, family, X, S, strength=1.0, K=3):
    """Draw a response from ``family``; returns ``(y, levels)``."""
    n = X.shape[0]
    if family == "multinomial":
        eta = 0.5 * strength * (S @ rng.normal(size=(S.shape[1], K))
                                + X @ rng.normal(size=(X.shape[1], K)))
        pr = np.exp(eta - eta.max(axis=1, keepdims=True))
        pr /= pr.sum(axis=1, keepdims=True)
        codes = (pr.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1)
        return np.minimum(codes, K - 1), tuple(f"c{k}" for k in range(K))
    eta = strength * (S @ rng.normal(size=S.shape[1]) + 0.5 * X @ rng.normal(size=X.shape[1]))
    if family == "gaussian":
        return 1.0 + eta + rng.normal(size=n), None
    if family == "binomial":
        return (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float), None
    return rng.poisson(np.exp(0.5 + 0.4 * eta / max(np.std(eta), 1e-12))).astype(float), None


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ----------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion
# ----------------------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not (rep.skipped or rep.failed)):
        return
    num, title = mark.args
    prev = _CRITERIA.get(num, (title, "PASS", ""))
    if rep.failed:
        status = "FAIL"
    elif rep.skipped:
        status = prev[1] if num in _CRITERIA else "SKIP"
    else:
        status = prev[1]
    detail = prev[2]
    if rep.skipped and isinstance(rep.longrepr, tuple):
        detail = rep.longrepr[2]
    _CRITERIA[num] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[num]
        extra = f" ({detail.removeprefix('Skipped: ')})" if status == "SKIP" and detail else ""
        terminalreporter.write_line(f"criterion {num:>2} {status}: {title}{extra}")
