import numpy as np
import pytest
from scipy.special import erfc

from app.landscape.errors import (
    InvalidArgumentError,
    PrecisionError,
    ZeroDenominatorError,
)
from app.landscape.model import (
    LossSpec,
    curvature_weight,
    generate_instance,
    gradient,
    loss_derivative,
    loss_pair,
    sphere_normalize,
    total_loss,
)
from app.landscape.quadrature import (
    converged_by_doubling,
    graded_rule,
    hermite_rule,
)


def test_loss_vanishes_at_matching_labels(loss):
    y = np.array([0.3, -1.2, 2.0])
    assert np.allclose(loss_pair(loss, y, y), 0.0)
    assert np.allclose(loss_pair(loss, y, -y), 0.0)


def test_loss_values():
    spec = LossSpec(1.0)
    assert loss_pair(spec, 1.0, 0.0) == pytest.approx(0.5)
    assert curvature_weight(spec, 1.0, 1.0) == pytest.approx(4.0)
    assert loss_derivative(spec, 1.0, 0.0) == pytest.approx(0.0)


def test_negative_a_rejected():
    with pytest.raises(InvalidArgumentError):
        LossSpec(-0.1)


def test_zero_denominator():
    spec = LossSpec(0.0)
    with pytest.raises(ZeroDenominatorError):
        loss_pair(spec, 0.0, 1.0)
    assert np.isfinite(loss_pair(spec, 0.5, 1.0))


@pytest.mark.parametrize("a", [0.01, 0.1, 1.0])
def test_derivatives_match_finite_differences(a):
    spec = LossSpec(a)
    y = np.array([0.2, 0.9, 1.7])
    yhat = np.array([-0.4, 0.5, 1.1])
    h = 1e-4
    first = (loss_pair(spec, y, yhat + h) - loss_pair(spec, y, yhat - h)) / (
        2 * h
    )
    second = (
        loss_pair(spec, y, yhat + h)
        - 2 * loss_pair(spec, y, yhat)
        + loss_pair(spec, y, yhat - h)
    ) / h**2
    assert np.allclose(loss_derivative(spec, y, yhat), first, rtol=1e-6)
    assert np.allclose(curvature_weight(spec, y, yhat), second, rtol=1e-5)


def test_instance_shapes_and_determinism():
    first = generate_instance(16, 2.5, seed=3)
    second = generate_instance(16, 2.5, seed=3)
    assert first.M == 40
    assert first.sensing.shape == (40, 16)
    assert np.dot(first.signal, first.signal) == pytest.approx(16.0)
    assert np.array_equal(first.sensing, second.sensing)
    assert np.array_equal(first.labels, np.abs(first.sensing @ first.signal))
    assert not np.array_equal(
        first.sensing, generate_instance(16, 2.5, seed=4).sensing
    )


def test_instance_arrays_are_read_only():
    inst = generate_instance(8, 2.0, seed=0)
    with pytest.raises(ValueError):
        inst.labels[0] = 1.0


def test_unit_norm_rows():
    inst = generate_instance(10, 2.0, seed=1, unit_norm_rows=True)
    assert np.allclose(np.linalg.norm(inst.sensing, axis=1), 1.0)


@pytest.mark.parametrize("N, alpha", [(1, 2.0), (10, 0.0), (10, -1.0),
                                      (10, 0.01)])
def test_invalid_instances(N, alpha):
    with pytest.raises(InvalidArgumentError):
        generate_instance(N, alpha, seed=0)


def test_loss_is_zero_at_the_signal(small_instance, loss):
    assert total_loss(loss, small_instance, small_instance.signal) == 0.0
    assert np.allclose(
        gradient(loss, small_instance, -small_instance.signal), 0.0
    )


def test_gradient_matches_finite_differences(small_instance, rng):
    spec = LossSpec(0.1)
    w = sphere_normalize(rng.standard_normal(small_instance.N))
    g = gradient(spec, small_instance, w)
    h = 1e-6
    numeric = np.array([
        (total_loss(spec, small_instance, w + h * e)
         - total_loss(spec, small_instance, w - h * e)) / (2 * h)
        for e in np.eye(small_instance.N)
    ])
    assert np.linalg.norm(g - numeric) <= 1e-6 * np.linalg.norm(g)


def test_dimension_mismatch(small_instance, loss):
    with pytest.raises(InvalidArgumentError):
        gradient(loss, small_instance, np.ones(small_instance.N + 1))


def test_quadrature_rules_integrate_gaussian_moments():
    for rule in (hermite_rule(40), graded_rule(200, 0.1)):
        assert rule.expect(np.ones(len(rule))) == pytest.approx(1.0)
        assert rule.expect(rule.z**2) == pytest.approx(1.0, rel=1e-8)
        assert rule.expect(rule.z**4) == pytest.approx(3.0, rel=1e-8)


def test_graded_rule_resolves_narrow_kernels():
    a = 1e-4
    exact = np.pi / np.sqrt(2 * np.pi) / np.sqrt(a) * np.exp(a / 2) * erfc(
        np.sqrt(a / 2)
    )
    rule = graded_rule(400, np.sqrt(a))
    assert rule.expect(1.0 / (a + rule.z**2)) == pytest.approx(exact,
                                                              rel=1e-6)


def test_doubling_check():
    assert converged_by_doubling(lambda n: 1.0 + 1.0 / n**4, 50,
                                 1e-6) == pytest.approx(1.0)
    with pytest.raises(PrecisionError):
        converged_by_doubling(lambda n: float(n), 10, 1e-6)
