import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dershap.gradients import EvalCounter
from dershap.inputs import CorrelatedNormal, IndependentInputs, SpecError, Uniform
from dershap.measures import dershap
from dershap.models import additive_sine_model, bilinear_model, linear_model, sobol_g_model
from dershap.oracles import MAX_ENUM_DIM, imp, shapley_exact, sobol_estimate, subset_mask

BILINEAR_ABS = np.array([[1 / 3, 1 / 4], [1 / 4, 1 / 3]])


def abs_psd(seed, d):
    x = np.random.default_rng(seed).normal(size=(d, d))
    return np.abs(x @ x.T)


abs_matrices = st.tuples(st.integers(1, 9), st.integers(0, 2**32 - 1)).map(lambda t: abs_psd(t[1], t[0]))


def test_imp_examples():
    assert imp(BILINEAR_ABS, []) == 0.0
    assert imp(BILINEAR_ABS, [0]) == 1 / 3
    assert imp(BILINEAR_ABS, [0, 1]) == pytest.approx(11 / 12, rel=1e-15)
    a = abs_psd(0, 5)
    assert imp(a, range(5)) == pytest.approx(np.triu(a).sum(), rel=1e-14)


def test_subset_mask():
    assert subset_mask([0, 2]) == 0b101
    assert subset_mask(6) == 6
    assert imp(BILINEAR_ABS, 0b10) == 1 / 3


def test_shapley_examples():
    assert shapley_exact(np.array([[1.7]]))[0] == 1.7
    np.testing.assert_allclose(shapley_exact(BILINEAR_ABS), [11 / 24, 11 / 24], rtol=1e-14)


def test_shapley_dimension_guard():
    with pytest.raises(ValueError):
        shapley_exact(np.zeros((MAX_ENUM_DIM + 1, MAX_ENUM_DIM + 1)))


def test_shapley_counts_subsets():
    for d in (2, 4, 8):
        counter = EvalCounter()
        shapley_exact(abs_psd(d, d), counter=counter)
        assert counter.model_evaluations == 2**d


def test_shapley_matches_textbook_enumeration():
    # independent loop over subsets using imp directly
    a = abs_psd(3, 4)
    d = 4
    from math import comb

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for mask in range(1 << (d - 1)):
            u = [others[b] for b in range(d - 1) if mask >> b & 1]
            phi[i] += (imp(a, u + [i]) - imp(a, u)) / (d * comb(d - 1, len(u)))
    np.testing.assert_allclose(shapley_exact(a), phi, rtol=1e-13)


@settings(max_examples=100, deadline=None)
@given(abs_matrices)
def test_efficiency(a):
    assert shapley_exact(a).sum() == pytest.approx(imp(a, range(a.shape[0])), rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(abs_matrices, st.data())
def test_dummy(a, data):
    i = data.draw(st.integers(0, a.shape[0] - 1))
    a = a.copy()
    a[i, :] = a[:, i] = 0.0
    assert shapley_exact(a)[i] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**32 - 1), st.data())
def test_symmetry(d, seed, data):
    i = data.draw(st.integers(0, d - 1))
    j = data.draw(st.integers(0, d - 1).filter(lambda k: k != i))
    perm = np.arange(d)
    perm[[i, j]] = perm[[j, i]]
    base = abs_psd(seed, d)
    a = 0.5 * (base + base[np.ix_(perm, perm)])
    phi = shapley_exact(a)
    assert phi[i] == pytest.approx(phi[j], rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
def test_additivity(d, s1, s2):
    a, b = abs_psd(s1, d), abs_psd(s2, d)
    np.testing.assert_allclose(shapley_exact(a + b), shapley_exact(a) + shapley_exact(b), rtol=1e-12, atol=1e-12)


def test_oracle_equivalence_200_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        d = int(rng.integers(2, 11))
        x = rng.normal(size=(d, d))
        c = x @ x.T
        assert np.abs(dershap(c).values - shapley_exact(np.abs(c))).max() <= 1e-10


# ----- Sobol' pick-freeze ---------------------------------------------------

def test_sobol_linear():
    model = linear_model((3.0, 1.0))
    est = sobol_estimate(model, model.default_spec, 100_000, seed=0)
    np.testing.assert_allclose(est.total, [0.9, 0.1], atol=0.01)
    np.testing.assert_allclose(est.main, [0.9, 0.1], atol=0.01)
    assert est.evaluations == 100_000 * 4


def test_sobol_bilinear():
    model = bilinear_model()
    est = sobol_estimate(model, model.default_spec, 100_000, seed=0)
    assert abs(est.main[0] - 3 / 7) <= 0.01
    assert abs(est.total[0] - 4 / 7) <= 0.01
    assert abs(est.variance - 7 / 144) <= 3 * est.variance_se


def test_sobol_constant_is_degenerate():
    spec = IndependentInputs((Uniform(0.0, 1.0),) * 2)
    est = sobol_estimate(lambda x: np.full(x.shape[0], 2.0), spec, 1000, seed=0)
    assert est.degenerate and np.all(np.isnan(est.total))


def test_sobol_counts_and_guards():
    spec = IndependentInputs((Uniform(0.0, 1.0),) * 3)
    counter = EvalCounter()
    sobol_estimate(lambda x: x.sum(axis=1), spec, 2000, seed=0, counter=counter)
    assert counter.model_evaluations == 2000 * 5
    with pytest.raises(ValueError):
        sobol_estimate(lambda x: x.sum(axis=1), spec, 999, seed=0)
    with pytest.raises(SpecError):
        sobol_estimate(lambda x: x.sum(axis=1), CorrelatedNormal(np.zeros(2), np.eye(2)), 2000, seed=0)


def test_sobol_deterministic():
    model = bilinear_model()
    a = sobol_estimate(model, model.default_spec, 5000, seed=3)
    b = sobol_estimate(model, model.default_spec, 5000, seed=3)
    assert np.array_equal(a.total, b.total) and np.array_equal(a.main, b.main)


def test_sobol_main_below_total():
    for model in (bilinear_model(), sobol_g_model(), additive_sine_model()):
        est = sobol_estimate(model, model.default_spec, 50_000, seed=5)
        assert np.all(est.main >= -3 * est.main_se)
        assert np.all(est.main <= est.total + 3 * np.hypot(est.main_se, est.total_se))


def test_additive_main_equals_total():
    model = additive_sine_model()
    est = sobol_estimate(model, model.default_spec, 100_000, seed=8)
    assert np.all(np.abs(est.main - est.total) <= 3 * np.hypot(est.main_se, est.total_se))
    np.testing.assert_allclose(est.total, model.analytic_sobol["total"], atol=0.01)


def _mean_se(model, n, seeds):
    runs = [sobol_estimate(model, model.default_spec, n, seed=s) for s in seeds]
    return np.concatenate([np.mean([r.total_se for r in runs], axis=0), np.mean([r.main_se for r in runs], axis=0)])


def test_standard_errors_shrink_like_root_n():
    # a 10-batch s.e. is itself ~25% noisy, so compare means over independent replicates
    for model in (bilinear_model(), additive_sine_model(), linear_model()):
        ratio = _mean_se(model, 10_000, range(8)) / _mean_se(model, 40_000, range(100, 108))
        # quadrupling n halves the s.e. within a factor 1.5
        assert np.all((ratio >= 2 / 1.5) & (ratio <= 2 * 1.5)), (model.id, ratio)
