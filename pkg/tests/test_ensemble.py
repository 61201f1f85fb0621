import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deep_vecchia.ensemble import EnsembleConfig, combine, weights


def _cfg(**kw):
    return EnsembleConfig(**kw)


def test_uniform_weights():
    w, fb = weights([(0.0, 1.0, 1.0)] * 3, _cfg(scheme="uniform"))
    assert np.allclose(w, 1.0 / 3.0)
    assert not fb


def test_posterior_variance_worked_example():
    w, fb = weights([(0.0, 1.0, 2.0), (0.0, 4.0, 2.0)], _cfg(scheme="posterior_variance"))
    assert np.allclose(w, [0.8, 0.2])
    assert not fb


def test_differential_entropy_worked_example():
    members = [(0.0, np.exp(-2.0), 1.0), (0.0, np.exp(-1.0), 1.0)]
    w, fb = weights(members, _cfg(scheme="differential_entropy"))
    # raw 0.5*(0 - log var) = (1.0, 0.5) -> (2/3, 1/3)
    assert np.allclose(w, [2.0 / 3.0, 1.0 / 3.0])
    assert not fb


def test_differential_entropy_zero_falls_back_uniform():
    members = [(0.0, 1.0, 1.0), (0.0, 1.0, 1.0)]  # posterior == prior, raw weights 0
    w, fb = weights(members, _cfg(scheme="differential_entropy"))
    assert fb
    assert np.allclose(w, 0.5)


def test_wasserstein_weights_verbatim_form():
    members = [(1.0, 0.5, 1.0), (2.0, 0.25, 1.0)]
    raw = np.array([1.0**2 + (1.0 - 0.5) ** 2, 2.0**2 + (1.0 - 0.25) ** 2])
    w, _ = weights(members, _cfg(scheme="wasserstein"))
    assert np.allclose(w, raw / raw.sum())


def test_softmax_temperature_sharpens():
    members = [(0.0, 0.5, 1.0), (0.0, 1.5, 1.0)]
    w1, _ = weights(members, _cfg(scheme="posterior_variance", use_softmax=True, temperature=1.0))
    w5, _ = weights(members, _cfg(scheme="posterior_variance", use_softmax=True, temperature=5.0))
    assert w1[0] > 0.5  # lower variance upweighted
    assert w5[0] > w1[0]  # higher temperature sharpens


def test_softmax_uniform_scheme_stays_uniform():
    members = [(0.0, 0.5, 1.0), (0.0, 1.5, 1.0), (0.0, 3.0, 1.0)]
    w, _ = weights(members, _cfg(scheme="uniform", use_softmax=True, temperature=3.0))
    assert np.allclose(w, 1.0 / 3.0)


def test_softmax_overflow_safe():
    members = [(0.0, 1e-300, 1.0), (0.0, 1e6, 1.0)]
    w, fb = weights(members, _cfg(scheme="posterior_variance", use_softmax=True, temperature=5.0))
    assert not fb
    assert np.all(np.isfinite(w))
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(-5, 5),
            st.floats(0.01, 10.0),
            st.floats(0.5, 10.0),
        ),
        min_size=1,
        max_size=6,
    ),
    st.sampled_from(["uniform", "posterior_variance", "differential_entropy", "wasserstein"]),
    st.booleans(),
)
def test_weights_normalized_and_nonnegative(members, scheme, softmax):
    w, _ = weights(members, _cfg(scheme=scheme, use_softmax=softmax, temperature=2.0))
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all(w >= 0.0)


def test_posterior_variance_weight_order_reverses_variance_order():
    rng = np.random.default_rng(0)
    for _ in range(20):
        vars_ = rng.uniform(0.05, 5.0, 5)
        members = [(0.0, v, 10.0) for v in vars_]
        w, _ = weights(members, _cfg(scheme="posterior_variance"))
        assert np.array_equal(np.argsort(w), np.argsort(vars_)[::-1])


def test_combine_single_member_identity():
    for space in ("y", "f"):
        c = combine([(1.3, 0.7, 2.0)], np.array([1.0]), space, [0.1])
        assert c.mean == pytest.approx(1.3, rel=1e-14)
        if space == "y":
            assert c.variance == pytest.approx(0.7, rel=1e-14)
        else:
            assert c.variance == pytest.approx(0.7 + 0.1, rel=1e-14)


def test_combine_symmetric_members():
    c = combine([(0.0, 1.0, 2.0), (2.0, 1.0, 2.0)], np.array([0.5, 0.5]), "y", [0.1, 0.1])
    assert c.mean == pytest.approx(1.0, abs=1e-14)
    assert c.variance == pytest.approx(1.0, abs=1e-14)


def test_combine_idempotent_on_identical_members():
    members = [(0.8, 0.3, 1.5)] * 4
    for w in (np.full(4, 0.25), np.array([0.7, 0.1, 0.1, 0.1])):
        c = combine(members, w, "y", [0.1] * 4)
        assert c.mean == pytest.approx(0.8, rel=1e-12)
        assert c.variance == pytest.approx(0.3, rel=1e-12)


def test_combine_permutation_invariant():
    rng = np.random.default_rng(1)
    members = [(float(m), float(v), 2.0) for m, v in rng.uniform(0.2, 2.0, (5, 2))]
    w, _ = weights(members, _cfg())
    base = combine(members, w, "y", [0.1] * 5)
    for _ in range(5):
        perm = rng.permutation(5)
        c = combine([members[i] for i in perm], w[perm], "y", [0.1] * 5)
        assert c.mean == pytest.approx(base.mean, abs=1e-13)
        assert c.variance == pytest.approx(base.variance, abs=1e-13)


def test_combined_precision_is_weighted_average_of_precisions():
    rng = np.random.default_rng(2)
    members = [(float(m), float(v), 3.0) for m, v in rng.uniform(0.3, 3.0, (4, 2))]
    w, _ = weights(members, _cfg(scheme="posterior_variance"))
    c = combine(members, w, "y", [0.1] * 4)
    prec_direct = sum(wi / vi for wi, (_, vi, _) in zip(w, members))
    assert 1.0 / c.variance == pytest.approx(prec_direct, rel=1e-12)


def test_fspace_adds_mean_noise():
    members = [(0.0, 0.5, 1.0), (0.0, 0.5, 1.0)]
    cy = combine(members, np.array([0.5, 0.5]), "y", [0.2, 0.4])
    cf = combine(members, np.array([0.5, 0.5]), "f", [0.2, 0.4])
    assert cf.variance == pytest.approx(cy.variance + 0.3, rel=1e-12)


def test_temperature_ignored_without_softmax():
    members = [(0.0, 0.5, 1.0), (0.0, 1.5, 1.0)]
    w1, _ = weights(members, _cfg(scheme="posterior_variance", temperature=1.0))
    w9, _ = weights(members, _cfg(scheme="posterior_variance", temperature=9.0))
    assert np.array_equal(w1, w9)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(scheme="median")
    with pytest.raises(ValueError):
        EnsembleConfig(space="z")
    with pytest.raises(ValueError):
        EnsembleConfig(temperature=0.0)
    with pytest.raises(ValueError):
        weights([], _cfg())
    with pytest.raises(ValueError):
        weights([(0.0, -1.0, 1.0)], _cfg())
