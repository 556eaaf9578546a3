import numpy as np
import pytest

from app.landscape.dynamics import init_random
from app.landscape.errors import InvalidArgumentError, ResourceLimitError
from app.landscape.model import (
    LossSpec,
    curvature_weight,
    generate_instance,
    gradient,
)
from app.landscape.spectrum import (
    Which,
    detachment,
    empirical_density,
    extreme_eigenpair,
    full_spectrum,
    hessian_dense,
    hessian_times_vector,
    ks_distance,
    spherical_shift,
)


def marchenko_pastur(lam, alpha):
    lo, hi = (1 - np.sqrt(alpha)) ** 2, (1 + np.sqrt(alpha)) ** 2
    inside = np.clip((hi - lam) * (lam - lo), 0.0, None)
    return np.sqrt(inside) / (2 * np.pi * np.maximum(lam, 1e-300))


def test_hessian_vector_matches_gradient_differences(small_instance, rng):
    spec = LossSpec(0.1)
    w = init_random(small_instance.N, seed=2)
    u = rng.standard_normal(small_instance.N)
    h = 1e-5
    numeric = 2 * (
        gradient(spec, small_instance, w + h * u)
        - gradient(spec, small_instance, w - h * u)
    ) / (2 * h)
    hv = hessian_times_vector(spec, small_instance, w, u,
                              include_mu_shift=False)
    assert np.linalg.norm(hv - numeric) <= 1e-5 * np.linalg.norm(hv)


def test_spherical_shift_is_twice_the_lagrange_multiplier(small_instance):
    spec = LossSpec(0.1)
    w = init_random(small_instance.N, seed=2)
    mu = np.dot(w, gradient(spec, small_instance, w)) / small_instance.N
    assert spherical_shift(spec, small_instance, w) == pytest.approx(2 * mu)


def test_dense_and_matrix_free_agree(medium_instance, loss, rng):
    w = init_random(medium_instance.N, seed=1)
    H = hessian_dense(loss, medium_instance, w)
    u = rng.standard_normal(medium_instance.N)
    assert np.allclose(H, H.T)
    assert np.allclose(H @ u, hessian_times_vector(loss, medium_instance, w,
                                                   u))


def test_trace_identity(medium_instance, loss):
    w = init_random(medium_instance.N, seed=1)
    report = full_spectrum(loss, medium_instance, w)
    f = curvature_weight(loss, medium_instance.labels,
                         medium_instance.estimated_labels(w))
    norms = np.sum(medium_instance.sensing**2, axis=1)
    expected = np.dot(f, norms) - medium_instance.N * report.mu_shift
    assert report.eigenvalues.sum() == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("which", [Which.SMALLEST, Which.LARGEST])
def test_lanczos_matches_dense_diagonalization(medium_instance, which):
    spec = LossSpec(1.0)
    w = init_random(medium_instance.N, seed=3)
    lam, v = extreme_eigenpair(spec, medium_instance, w, which)
    values = np.linalg.eigvalsh(hessian_dense(spec, medium_instance, w))
    expected = values[0] if which is Which.SMALLEST else values[-1]
    assert lam == pytest.approx(expected, abs=1e-8 * np.abs(values).max())
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_small_dimensions_use_dense_solver(small_instance, loss):
    w = init_random(small_instance.N, seed=0)
    lam, _ = extreme_eigenpair(loss, small_instance, w)
    values = np.linalg.eigvalsh(hessian_dense(loss, small_instance, w))
    assert lam == pytest.approx(values[0])


def test_marchenko_pastur_edges_and_bulk():
    alpha = 4.0
    inst = generate_instance(1024, alpha, seed=0)
    w = init_random(inst.N, seed=0)
    report = full_spectrum(LossSpec(1.0), inst, w, include_mu_shift=False,
                           weights=np.ones(inst.M))
    assert report.eigenvalues[0] == pytest.approx(1.0, rel=0.05)
    assert report.eigenvalues[-1] == pytest.approx(9.0, rel=0.05)
    grid = np.linspace(1.0, 9.0, 4001)
    ks = ks_distance(report.eigenvalues, grid,
                     marchenko_pastur(grid, alpha))
    assert ks <= 0.05
    assert not report.outlier_detached


def test_detachment_flags_isolated_eigenvalues():
    bulk = np.linspace(1.0, 2.0, 100)
    detached, left = detachment(np.concatenate([[-1.0], bulk]))
    assert detached and left == pytest.approx(1.0)
    detached, left = detachment(bulk)
    assert not detached and left == pytest.approx(1.0)


def test_empirical_density_is_normalized(rng):
    hist = empirical_density(rng.standard_normal(1000), bins=40)
    assert hist.total_mass() == pytest.approx(1.0)
    assert len(hist.centers) == 40
    with pytest.raises(InvalidArgumentError):
        empirical_density([1.0, 2.0], bins=5)
    with pytest.raises(InvalidArgumentError):
        empirical_density([])


def test_resource_limits():
    inst = generate_instance(4097, 0.001, seed=0)
    w = init_random(inst.N, seed=0)
    with pytest.raises(ResourceLimitError):
        full_spectrum(LossSpec(1.0), inst, w)


def test_signal_state_has_a_nonnegative_shifted_spectrum(medium_instance,
                                                        loss):
    report = full_spectrum(loss, medium_instance, medium_instance.signal)
    scale = np.abs(report.eigenvalues).max()
    assert report.mu_shift == pytest.approx(0.0, abs=1e-12)
    assert report.lambda_min >= -1e-6 * scale
