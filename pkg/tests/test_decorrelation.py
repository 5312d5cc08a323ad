import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairfit.decorrelation import AuxiliaryModel, apply_aux, decorrelate
from fairfit.data import as_design
from fairfit.errors import SchemaError

from conftest import correlated


def max_abs_corr(U, S):
    Uc, Sc = U - U.mean(0), S - S.mean(0)
    num = Uc.T @ Sc
    den = np.outer(np.linalg.norm(Uc, axis=0), np.linalg.norm(Sc, axis=0))
    return float(np.max(np.abs(num / np.where(den > 0, den, 1))))


def test_orthogonal_input_unchanged():
    t = np.linspace(-1, 1, 8)
    S = np.column_stack([t])
    X = np.column_stack([t ** 2 - np.mean(t ** 2)])  # even vs odd
    U, aux = decorrelate(X, S)
    assert np.allclose(U.values, X, atol=1e-14)
    assert np.allclose(aux.B[1:], 0, atol=1e-14)


def test_collinear_gives_zero():
    s = np.arange(10.0)
    U, _ = decorrelate(s[:, None], s[:, None])
    assert np.max(np.abs(U.values)) < 1e-12


def test_random_against_lstsq(rng):
    X, S = correlated(rng, 100, 3, 2)
    U, aux = decorrelate(X, S)
    Z = np.column_stack([np.ones(100), S])
    B = np.linalg.lstsq(Z, X, rcond=None)[0]
    assert np.allclose(aux.B, B, atol=1e-12)
    assert max_abs_corr(U.values, S) < 1e-10
    assert np.allclose(U.values.mean(0), 0, atol=1e-13)


def test_rank_deficient_sensitive(rng):
    S = rng.normal(size=(50, 2))
    S = np.column_stack([S, S[:, 0] + S[:, 1]])
    X = S[:, :1] + rng.normal(size=(50, 2))
    U, _ = decorrelate(X, S)
    assert max_abs_corr(U.values, S) < 1e-10


@given(st.integers(0, 10_000), st.integers(12, 80), st.integers(1, 4), st.integers(1, 4))
def test_orthogonality_property(seed, n, p, q):
    rng = np.random.default_rng(seed)
    X, S = correlated(rng, n, p, q, mix=3.0)
    X = X * rng.uniform(0.01, 100, size=p)
    U, _ = decorrelate(X, S)
    for j in range(p):
        for k in range(q):
            bound = 1e-8 * n * np.std(U.values[:, j]) * np.std(S[:, k])
            assert abs(U.values[:, j] @ S[:, k]) <= max(bound, 1e-300) or \
                np.std(U.values[:, j]) < 1e-12 * np.std(X[:, j])
        vx = np.var(X[:, j])
        assert np.isclose(vx, np.var(U.values[:, j]) + np.var(X[:, j] - U.values[:, j]),
                          rtol=1e-8)


def test_apply_aux_roundtrip(rng):
    X, S = correlated(rng, 60, 3, 2)
    U, aux = decorrelate(X, S)
    assert np.allclose(apply_aux(aux, S, X).values, U.values, atol=1e-13)


def test_apply_aux_null_model(rng):
    aux = AuxiliaryModel(np.zeros((3, 2)), ("s1", "s2"), ("x1", "x2"))
    Xn = rng.normal(size=(4, 2))
    assert np.array_equal(apply_aux(aux, rng.normal(size=(4, 2)), Xn).values, Xn)


def test_apply_aux_single_row_by_hand():
    aux = AuxiliaryModel(np.array([[1.0, -2.0], [0.5, 3.0]]), ("s1",), ("x1", "x2"))
    U = apply_aux(aux, np.array([[2.0]]), np.array([[4.0, 1.0]])).values
    # x - (b0 + s * b1): 4 - (1 + 1) = 2 ; 1 - (-2 + 6) = -3
    assert U.tolist() == [[2.0, -3.0]]


def test_apply_aux_mismatch(rng):
    X, S = correlated(rng, 30, 2, 2)
    _, aux = decorrelate(as_design(X), as_design(S, "s"))
    with pytest.raises(SchemaError):
        apply_aux(aux, S[:, :1], X)
    bad = as_design(S, "z")
    with pytest.raises(SchemaError):
        apply_aux(aux, bad, X)


def test_aux_serialisation(rng):
    X, S = correlated(rng, 30, 2, 2)
    _, aux = decorrelate(X, S)
    back = AuxiliaryModel.from_dict(aux.to_dict())
    assert np.array_equal(back.B, aux.B)
