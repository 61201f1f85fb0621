import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_vecchia.kernel import KernelParams, grad_logparams, gram, k

# (1 + sqrt5 + 5/3) exp(-sqrt5) evaluated at 40 decimal digits, then rounded
SCALAR_ORACLE_R1 = 0.5239941088318203


def _params(d, seed=0, log_noise=np.log(0.01)):
    rng = np.random.default_rng(seed)
    return KernelParams(
        float(rng.uniform(-0.5, 1.0)), np.log(rng.uniform(0.4, 2.5, d)), float(log_noise)
    )


def test_value_at_zero_distance_is_output_var():
    p = _params(3, seed=1)
    x = np.array([0.3, -1.2, 4.0])
    assert k(x, x, p) == p.output_var


def test_scalar_oracle_r_equals_one():
    p = KernelParams(0.0, np.array([0.0]), np.log(0.01))
    got = k(np.array([0.0]), np.array([1.0]), p)
    assert got == pytest.approx(SCALAR_ORACLE_R1, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    p = _params(d, seed=seed)
    x, x2 = rng.standard_normal(d), rng.standard_normal(d)
    assert abs(k(x, x2, p) - k(x2, x, p)) <= 1e-15


def test_bounds_positive_and_below_output_var():
    rng = np.random.default_rng(7)
    p = _params(4, seed=7)
    for _ in range(200):
        x, x2 = rng.standard_normal(4), 5.0 * rng.standard_normal(4)
        v = k(x, x2, p)
        assert 0.0 < v <= p.output_var


def test_dimension_mismatch():
    p = _params(3)
    with pytest.raises(ValueError):
        k(np.zeros(2), np.zeros(2), p)
    with pytest.raises(ValueError):
        gram(np.zeros((4, 2)), None, p)


def test_gram_matches_scalar_entrywise():
    rng = np.random.default_rng(3)
    p = _params(2, seed=3)
    A = rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 2))
    G = gram(A, B, p)
    for i in range(2):
        for j in range(2):
            assert G[i, j] == pytest.approx(k(A[i], B[j], p), rel=1e-12)


def test_gram_empty_rows():
    p = _params(3)
    G = gram(np.zeros((4, 3)), np.zeros((0, 3)), p)
    assert G.shape == (4, 0)


def test_gram_posdef_with_noise():
    # distinct rows + noise diagonal must factor, up to n = 512 with tiny tau2
    for seed, n, tau2 in [(0, 64, 1e-4), (1, 256, 1e-6), (2, 512, 1e-8)]:
        rng = np.random.default_rng(seed)
        X = rng.uniform(-3, 3, (n, 3))
        p = _params(3, seed=seed, log_noise=np.log(tau2))
        K = gram(X, None, p, add_noise_diag=True)
        np.linalg.cholesky(K)  # raises on failure
        assert np.array_equal(K, K.T)


def test_gram_noise_requires_self():
    p = _params(2)
    with pytest.raises(ValueError):
        gram(np.zeros((3, 2)), np.ones((3, 2)), p, add_noise_diag=True)


def test_grad_output_var_component_is_value():
    rng = np.random.default_rng(11)
    p = _params(5, seed=11)
    x, x2 = rng.standard_normal(5), rng.standard_normal(5)
    g = grad_logparams(x, x2, p)
    assert g[0] == pytest.approx(k(x, x2, p), rel=1e-14)
    assert g[-1] == 0.0


def test_grad_zero_at_coincident_points():
    p = _params(4, seed=2)
    x = np.random.default_rng(2).standard_normal(4)
    g = grad_logparams(x, x, p)
    assert np.all(g[1:-1] == 0.0)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 6))
        p = KernelParams(
            float(rng.uniform(-1, 1)), np.log(rng.uniform(0.3, 3.0, d)), float(np.log(0.01))
        )
        x, x2 = rng.standard_normal(d), rng.standard_normal(d)
        g = grad_logparams(x, x2, p)
        theta = p.to_vector()
        h = 1e-6
        for j in range(d + 2):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            fd = (
                k(x, x2, KernelParams.from_vector(tp)) - k(x, x2, KernelParams.from_vector(tm))
            ) / (2 * h)
            rel = abs(g[j] - fd) / max(abs(fd), 1e-10)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_params_validation():
    with pytest.raises(ValueError):
        KernelParams(np.inf, np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        KernelParams(0.0, np.zeros((2, 2)), 0.0)


def test_params_vector_roundtrip():
    p = _params(3, seed=9)
    back = KernelParams.from_vector(p.to_vector())
    assert back.log_output_var == p.log_output_var
    assert np.array_equal(back.log_lengthscales, p.log_lengthscales)
    assert back.log_noise_var == p.log_noise_var
