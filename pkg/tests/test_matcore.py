import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinvar.errors import (
    DimensionMismatch,
    NotPositiveDefinite,
    ValidationError,
    ZeroDivisor,
)
from spinvar.matcore import (
    MixtureSpec,
    admissible_radius,
    chol_logdet,
    check_constraint,
    dir_derivative,
    frobenius,
    hadamard_div,
    mixture_apply,
    spectral_floor,
    sym_inverse,
    symmetrize,
    INV_TOL,
)


def test_frobenius_examples():
    assert frobenius(np.eye(2), np.eye(2)) == 2.0
    a = np.array([[1.0, 2.0], [2.0, 3.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert frobenius(a, b) == pytest.approx(4.0)
    h = np.array([1.0, 0.0])
    assert frobenius(np.outer(h, h), a) == pytest.approx(a[0, 0])


def test_frobenius_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        frobenius(np.eye(2), np.eye(3))


def test_mixture_apply_examples():
    mix = MixtureSpec.pure(2, [1.0, 1.0])
    a = np.array([[1.0, 0.5], [0.5, 0.2]])
    np.testing.assert_allclose(mix.xi(a), a**2)
    np.testing.assert_allclose(mix.xi_prime(a), 2 * a)
    np.testing.assert_allclose(mix.theta(a), a**2)
    zero = np.zeros((2, 2))
    for kind in ("xi", "xi_prime", "theta"):
        np.testing.assert_array_equal(mixture_apply(kind, mix, zero), zero)
    # xi_second of a pure quadratic term is the constant weight matrix
    np.testing.assert_allclose(mix.xi_second(zero), 2 * np.ones((2, 2)))


def test_mixture_theta_identity():
    rng = np.random.default_rng(0)
    mix = MixtureSpec(n=3, terms=((2, rng.uniform(0, 1, 3)), (4, rng.uniform(0, 1, 3))),
                      h=np.zeros(3))
    a = symmetrize(rng.uniform(-1, 1, (3, 3)))
    np.testing.assert_allclose(mix.theta(a), a * mix.xi_prime(a) - mix.xi(a), atol=1e-14)


def test_mixture_validation():
    with pytest.raises(ValidationError):
        MixtureSpec(n=1, terms=((3, [1.0]),), h=[0.0])  # odd p
    with pytest.raises(ValidationError):
        MixtureSpec(n=2, terms=((2, [1.0]),), h=[0.0, 0.0])  # wrong beta length
    with pytest.raises(ValidationError):
        MixtureSpec(n=1, terms=((2, [-0.1]),), h=[0.0])  # negative weight


def test_chol_logdet_examples():
    assert chol_logdet(np.eye(3)) == 0.0
    assert chol_logdet(np.diag([2.0, 3.0])) == pytest.approx(np.log(6.0))
    with pytest.raises(NotPositiveDefinite):
        chol_logdet(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_sym_inverse_examples():
    np.testing.assert_allclose(sym_inverse(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(sym_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    with pytest.raises(NotPositiveDefinite):
        sym_inverse(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_sym_inverse_contract():
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(1, 8))
        a = rng.normal(size=(n, n))
        a = symmetrize(a @ a.T + np.eye(n))
        inv = sym_inverse(a)
        np.testing.assert_array_equal(inv, inv.T)
        assert np.max(np.abs(a @ inv - np.eye(n))) < INV_TOL


def test_spectral_floor_examples():
    assert spectral_floor(np.eye(2)) == pytest.approx(1.0)
    assert spectral_floor(np.array([[1.0, 1.0], [1.0, 1.0]])) == pytest.approx(0.0, abs=1e-12)
    assert spectral_floor(np.diag([2.0, -1.0])) == pytest.approx(-1.0)


def test_hadamard_div_examples():
    a = np.array([[4.0, 2.0], [2.0, 4.0]])
    b = np.full((2, 2), 2.0)
    np.testing.assert_allclose(hadamard_div(a, b), np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(hadamard_div(a, a), np.ones((2, 2)))
    with pytest.raises(ZeroDivisor) as info:
        hadamard_div(a, np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert info.value.index == (0, 1)


def test_dir_derivative_examples():
    assert dir_derivative("logdet", (np.eye(2),), np.eye(2)) == pytest.approx(2.0)
    assert dir_derivative("inverse_pair", (np.eye(2), np.eye(2)), np.eye(2)) == pytest.approx(-2.0)
    mix = MixtureSpec.pure(2, [1.0, 1.0])
    assert dir_derivative("sum_mixture", (mix, np.eye(2)), np.ones((2, 2))) == pytest.approx(4.0)
    assert dir_derivative("trace_pair", (np.diag([1.0, 2.0]),), np.eye(2)) == pytest.approx(3.0)


def test_dir_derivative_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(20):
        n = int(rng.integers(1, 5))
        a = symmetrize(rng.normal(size=(n, n)))
        a = a @ a.T + np.eye(n)
        b = symmetrize(rng.normal(size=(n, n)))
        c = symmetrize(rng.uniform(-1, 1, (n, n)))
        mix = MixtureSpec(n=n, terms=((2, rng.uniform(0.1, 1, n)),), h=np.zeros(n))
        cases = {
            "trace_pair": ((b,), lambda t: np.trace(b @ (a + t * c))),
            "logdet": ((a,), lambda t: chol_logdet(a + t * c)),
            "inverse_pair": ((a, b), lambda t: np.trace(b @ np.linalg.inv(a + t * c))),
            "sum_mixture": ((mix, a), lambda t: float(np.sum(mix.xi(a + t * c)))),
        }
        for kind, (args, f) in cases.items():
            analytic = dir_derivative(kind, args, c)
            fd = (f(h) - f(-h)) / (2 * h)
            if abs(analytic) < 1e-2:
                assert abs(analytic - fd) <= 1e-8, kind
            else:
                assert abs(analytic - fd) / abs(analytic) <= 1e-6, kind


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_admissible_radius_keeps_pd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    a = symmetrize(a @ a.T + 0.5 * np.eye(n))
    c = symmetrize(rng.normal(size=(n, n)))
    radius = admissible_radius(a, c)
    if np.isfinite(radius):
        assert spectral_floor(a + 0.99 * radius * c) > 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_hadamard_div_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    a = symmetrize(rng.uniform(-1, 1, (n, n)))
    b = symmetrize(rng.uniform(0.5, 2.0, (n, n)))
    np.testing.assert_allclose(hadamard_div(a, b) * b, symmetrize(a), atol=1e-12)


def test_check_constraint():
    assert check_constraint(np.eye(2)) == []
    assert any("unit diagonal" in p for p in check_constraint(np.diag([1.0, 2.0])))
    singular = np.ones((2, 2))
    assert any("positive definite" in p for p in check_constraint(singular))


def test_l1_delta():
    m1 = MixtureSpec.pure(2, [1.0])
    m2 = MixtureSpec.pure(2, [1.1])
    assert m1.l1_delta(m2) == pytest.approx(abs(1.0 - 1.21))
