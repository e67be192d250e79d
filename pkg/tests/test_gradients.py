import threading

import numpy as np
import pytest

from dershap.expr import parse_expression
from dershap.gradients import (
    ADProvider,
    EvalCounter,
    ExternalModel,
    FDProvider,
    ModelEvaluationError,
    ScaledProvider,
    external_model_call,
    gradient_at,
    unit_scaling,
)
from dershap.inputs import IndependentInputs, Uniform, sample
from dershap.models import builtin_catalog, ebola_model


def test_forward_difference_on_square():
    prov = FDProvider(lambda x: x[:, 0] ** 2, 1)
    val, grad = gradient_at(prov, [3.0])
    assert val == 9.0
    assert abs(grad[0] - 6.0) < 1e-5


def test_central_difference_is_more_accurate():
    prov = FDProvider(lambda x: x[:, 0] ** 3, 1, h=1e-4, central=True)
    _, grad = gradient_at(prov, [2.0])
    assert abs(grad[0] - 12.0) < 1e-7
    assert prov.counter.model_evaluations == 3


def test_forward_gradient_costs_d_plus_one_evaluations():
    for d in (1, 3, 8):
        prov = FDProvider(lambda x: x.sum(axis=1), d)
        gradient_at(prov, np.zeros(d))
        assert prov.counter.model_evaluations == d + 1
        assert prov.counter.gradient_evaluations == 1
        prov.value_and_grad(np.zeros((10, d)))
        assert prov.counter.model_evaluations == 11 * (d + 1)


def test_constant_model_has_zero_gradient():
    e = parse_expression("2.5", ["x0", "x1"])
    _, g_ad = gradient_at(ADProvider(e), [0.3, 0.4])
    _, g_fd = gradient_at(FDProvider(e, 2), [0.3, 0.4])
    np.testing.assert_array_equal(g_ad, [0.0, 0.0])
    np.testing.assert_array_equal(g_fd, [0.0, 0.0])


@pytest.mark.parametrize("country", ["liberia", "sierra_leone"])
def test_r0_ad_matches_forward_fd_at_midpoint(country):
    model = ebola_model(country)
    mid = np.array([(m.a + m.b) / 2 for m in model.default_spec.marginals])
    _, g_ad = gradient_at(ADProvider(model.expression), mid)
    _, g_fd = gradient_at(FDProvider(model, 8), mid)
    assert (np.abs(g_fd - g_ad) / np.abs(g_ad).max()).max() < 1e-5


@pytest.mark.parametrize("country", ["liberia", "sierra_leone"])
def test_r0_ad_matches_central_fd_everywhere(country):
    # forward differences carry O(h) truncation error that reaches ~1.2e-5 near small gamma1
    model = ebola_model(country)
    pts = sample(model.default_spec, 1000, seed=4)
    _, g_ad = ADProvider(model.expression).value_and_grad(pts)
    _, g_fd = FDProvider(model, 8, central=True).value_and_grad(pts)
    rel = np.abs(g_fd - g_ad) / np.abs(g_ad).max(axis=1, keepdims=True)
    assert rel.max() < 1e-5


def test_builtin_suite_ad_vs_fd():
    for model in builtin_catalog():
        if not model.smooth:
            continue
        pts = sample(model.default_spec, 100, seed=5)
        _, g_ad = ADProvider(model.expression).value_and_grad(pts)
        _, g_fd = FDProvider(model, model.dim).value_and_grad(pts)
        scale = np.abs(g_ad).max(axis=1, keepdims=True)
        assert (np.abs(g_fd - g_ad) / scale).max() <= 1e-4, model.id


def test_fd_failure_names_point_and_index():
    def f(x):
        out = x[:, 0].copy()
        out[x[:, 1] > 0.5] = np.inf
        return out

    prov = FDProvider(f, 2, h=0.3)
    with pytest.raises(ModelEvaluationError) as info:
        prov.value_and_grad(np.array([[0.0, 0.0], [0.0, 0.3]]))
    assert info.value.row == 1 and info.value.index == 1
    np.testing.assert_array_equal(info.value.point, [0.0, 0.3])


def test_ad_counts_one_model_evaluation_per_gradient():
    prov = ADProvider(parse_expression("x0*x1", ["x0", "x1"]))
    prov.value_and_grad(np.ones((7, 2)))
    assert prov.counter.snapshot() == {"model_evaluations": 7, "gradient_evaluations": 7}


def test_counter_is_exact_under_concurrency():
    counter = EvalCounter()
    prov = FDProvider(lambda x: x.sum(axis=1), 3, counter=counter)

    def hammer():
        for _ in range(200):
            prov.value_and_grad(np.zeros((5, 3)))

    threads = [threading.Thread(target=hammer) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counter.gradient_evaluations == 8 * 200 * 5
    assert counter.model_evaluations == 8 * 200 * 5 * 4


def test_scaled_provider_maps_to_unit_interval():
    spec = IndependentInputs((Uniform(0.0, 4.0), Uniform(1.0, 2.0)))
    np.testing.assert_array_equal(unit_scaling(spec), [2.0, 0.5])
    inner = ADProvider(parse_expression("3*x0 + x1", ["x0", "x1"]))
    _, grad = gradient_at(ScaledProvider(inner, unit_scaling(spec)), [1.0, 1.5])
    np.testing.assert_array_equal(grad, [6.0, 0.5])


def test_external_echo_sum(sum_model_cmd):
    np.testing.assert_array_equal(external_model_call(sum_model_cmd, [[1, 2], [3, 4]]), [3.0, 7.0])


def test_external_nan_names_row(nan_model_cmd):
    with pytest.raises(ModelEvaluationError, match="non-finite") as info:
        external_model_call(nan_model_cmd, [[1, 2], [3, 4], [5, 6]])
    assert info.value.row == 1


def test_external_nonzero_exit(sum_model_cmd):
    with pytest.raises(ModelEvaluationError, match="status 5"):
        external_model_call(sum_model_cmd + " --fail", [[1.0]])


def test_external_count_mismatch():
    with pytest.raises(ModelEvaluationError, match="lines"):
        external_model_call(["python3", "-c", "print(1)"], [[1.0], [2.0]])


def test_external_malformed_line():
    with pytest.raises(ModelEvaluationError, match="malformed"):
        external_model_call(["python3", "-c", "import sys; [print('x') for _ in sys.stdin]"], [[1.0]])


def test_external_batch_uses_one_spawn(sum_model_cmd):
    pts = np.random.default_rng(0).uniform(size=(100_000, 2))
    model = ExternalModel(sum_model_cmd, 2)
    out = model(pts)
    assert model.spawns == 1
    assert out.shape == (100_000,)
    np.testing.assert_allclose(out, pts.sum(axis=1), rtol=1e-15)


def test_external_workers_preserve_order(sum_model_cmd):
    pts = np.arange(30.0).reshape(10, 3)
    model = ExternalModel(sum_model_cmd, 3, workers=3)
    np.testing.assert_array_equal(model(pts), pts.sum(axis=1))
    assert model.spawns == 3


def test_external_fd_gradient(sum_model_cmd):
    prov = FDProvider(ExternalModel(sum_model_cmd, 2), 2)
    _, grad = prov.value_and_grad(np.array([[0.1, 0.2], [0.3, 0.4]]))
    np.testing.assert_allclose(grad, 1.0, rtol=1e-8)
