from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logsumexp

from app.harness.run_configs.normalized_intensity import ALPHA_BBP_1RSB
from app.landscape.errors import InvalidArgumentError
from app.landscape.model import LossSpec, loss_pair
from app.landscape.replica import (
    Q0_CEILING,
    Q0_START,
    ReplicaConfig,
    ReplicaLabelDensity,
    SaddleParams,
    free_energy_1rsb,
    joint_density_1rsb,
    params_from_coordinates,
    psi0,
    psi0_grid,
    saddle_coordinates,
    saddle_residuals,
    solve_threshold_state,
)
from app.landscape.rmt import bbp_alpha

SMALL = ReplicaConfig(n_r0=60, n_eta=16, n_eta_p=160, n_y=60, n_yhat=401)


@pytest.mark.parametrize("a", [0.01, 1.0])
@pytest.mark.parametrize("r0, h, chi", [(0.8, 0.2, 0.5), (2.5, -1.0, 0.1),
                                        (0.1, 3.0, 2.0), (1.5, 0.0, 4.0)])
def test_closed_form_minimum_matches_the_scan(a, r0, h, chi):
    spec = LossSpec(a)
    value, r_star = psi0_grid(spec, r0, h, chi)
    assert value == pytest.approx(psi0(spec, r0, h, 0.0, chi), rel=1e-7,
                                  abs=1e-12)
    assert value == pytest.approx(
        (r0**2 - r_star**2) ** 2 / (a + r0**2) + (h - r_star) ** 2
        / (2 * chi)
    )


def test_psi0_grid_broadcasts():
    spec = LossSpec(0.1)
    r0 = np.linspace(0.0, 3.0, 5)[:, None]
    h = np.linspace(-2.0, 2.0, 7)[None, :]
    value, r_star = psi0_grid(spec, r0, h, 0.3)
    assert value.shape == r_star.shape == (5, 7)
    assert np.all(np.isfinite(value))


def test_psi0_requires_positive_chi():
    with pytest.raises(InvalidArgumentError):
        psi0(LossSpec(0.1), 1.0, 0.0, 0.0, 0.0)


def test_psi0_limits_in_chi():
    spec = LossSpec(0.1)
    r0, eta_p, eta = 1.2, 0.3, 0.1
    pinned = psi0(spec, r0, eta_p, eta, 1e-8)
    assert pinned == pytest.approx(loss_pair(spec, r0, eta_p + eta),
                                   abs=1e-4)
    assert psi0(spec, r0, eta_p, eta, 1e8) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("r0, h", [(0.5, 1.5), (2.0, -0.3), (0.05, 0.0)])
def test_psi0_grows_with_the_penalty(r0, h):
    spec = LossSpec(0.01)
    chis = np.geomspace(1e3, 1e-3, 13)
    values = [psi0(spec, r0, h, 0.0, chi) for chi in chis]
    assert np.all(np.diff(values) >= -1e-9)


@pytest.mark.parametrize("kwargs", [
    {"chi": 0.0, "z": 1.0, "q0": 0.1},
    {"chi": 1.0, "z": -1.0, "q0": 0.1},
    {"chi": 1.0, "z": 1.0, "q0": 1.0},
    {"chi": 1.0, "z": 1.0, "q0": 0.1, "m_overlap": 0.2},
])
def test_saddle_params_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        SaddleParams(**kwargs)


def test_doubled_config():
    doubled = SMALL.doubled()
    assert (doubled.n_r0, doubled.n_eta, doubled.n_eta_p) == (120, 32, 320)
    assert doubled.n_yhat == SMALL.n_yhat


def test_residuals_are_free_energy_derivatives():
    spec, alpha = LossSpec(0.1), 4.0
    params = SaddleParams(chi=0.2, z=1.5, q0=0.3)

    def phi(**changes):
        values = {**params.as_dict(), **changes}
        return free_energy_1rsb(spec, alpha, SaddleParams(**values), SMALL,
                                check=False)

    h = 1e-5
    d_chi = (phi(chi=params.chi + h) - phi(chi=params.chi - h)) / (2 * h)
    d_q0 = (phi(q0=params.q0 + h) - phi(q0=params.q0 - h)) / (2 * h)
    chi_residual, q0_residual = saddle_residuals(spec, alpha, params, SMALL)
    assert chi_residual == pytest.approx(2 * d_chi, rel=2e-2, abs=1e-4)
    assert q0_residual == pytest.approx(2 * d_q0 / params.z, rel=2e-2,
                                        abs=1e-4)


def test_label_density_is_normalized_with_gaussian_labels():
    spec = LossSpec(0.1)
    params = SaddleParams(chi=0.5, z=2.0, q0=0.2)
    density = joint_density_1rsb(spec, 3.0, params, SMALL)
    assert isinstance(density, ReplicaLabelDensity)
    assert density.variant == "replica-1rsb"
    assert density.weights.sum() == pytest.approx(1.0)
    assert density.expectation(lambda y, _: y**2) == pytest.approx(
        1.0, rel=1e-3
    )
    assert density.settings["q0"] == 0.2


def test_minimizer_label_map_keeps_the_label_marginal():
    spec = LossSpec(0.1)
    params = SaddleParams(chi=0.5, z=2.0, q0=0.2)
    config = replace(SMALL, label_map="minimizer")
    density = joint_density_1rsb(spec, 3.0, params, config)
    assert density.expectation(lambda y, _: y**2) == pytest.approx(
        1.0, rel=1e-3
    )
    with pytest.raises(InvalidArgumentError):
        joint_density_1rsb(
            spec, 3.0, params,
            replace(SMALL, label_map="other"),
        )


def test_pointwise_density_integrates_to_the_label_marginal():
    spec = LossSpec(0.1)
    params = SaddleParams(chi=0.5, z=2.0, q0=0.0)
    density = joint_density_1rsb(spec, 3.0, params, SMALL)
    grid = np.linspace(-8.0, 8.0, 401)
    values = [density.density_at(1.0, t) for t in grid]
    marginal = np.trapezoid(values, grid)
    assert marginal == pytest.approx(np.exp(-0.5) / np.sqrt(2 * np.pi),
                                     rel=1e-3)


def test_solver_rejects_nonpositive_alpha():
    with pytest.raises(InvalidArgumentError):
        solve_threshold_state(LossSpec(0.01), 0.0)


def test_uncorrelated_free_energy_matches_sampling(rng):
    spec, alpha = LossSpec(0.1), 3.0
    params = SaddleParams(chi=0.5, z=2.0, q0=0.0)
    phi = free_energy_1rsb(spec, alpha, params, SMALL, check=False)

    grid = np.linspace(-10.0, 10.0, 2001)
    log_w = -0.5 * grid**2 + np.log(grid[1] - grid[0])
    log_w -= logsumexp(log_w)
    samples = []
    for r0 in np.array_split(rng.standard_normal(4000), 8):
        psi, _ = psi0_grid(spec, r0[:, None], grid[None, :], params.chi)
        samples.append(logsumexp(log_w - params.z * psi, axis=1))
    log_partition = np.concatenate(samples)

    dn = params.chi + params.z
    entropic = -np.log(dn / params.chi) / (2 * params.z)
    estimate = entropic - alpha * log_partition.mean() / params.z
    error = alpha * log_partition.std(ddof=1) / params.z / np.sqrt(4000)
    assert abs(phi - estimate) <= 3.0 * error


@pytest.mark.parametrize("y, yhat", [(0.7, 0.4), (1.5, -1.1), (0.2, 2.0)])
def test_pointwise_density_is_even_in_both_labels(y, yhat):
    spec = LossSpec(0.1)
    params = SaddleParams(chi=0.5, z=2.0, q0=0.3)
    density = joint_density_1rsb(spec, 3.0, params, SMALL)
    value = density.density_at(y, yhat)
    assert value > 0
    assert density.density_at(-y, yhat) == pytest.approx(value, rel=1e-7)
    assert density.density_at(y, -yhat) == pytest.approx(value, rel=1e-7)


def test_solver_coordinates_move_q0_smoothly():
    u = np.linspace(-8.0, 8.0, 33)
    q0 = np.array([params_from_coordinates([0.0, 0.0, t]).q0 for t in u])
    assert np.all((q0 > 0) & (q0 < Q0_CEILING))
    assert np.all(np.diff(q0) > 0)

    x = saddle_coordinates(0.4, 2.5, 0.3)
    params = params_from_coordinates(x)
    assert (params.chi, params.z, params.q0) == pytest.approx((0.4, 2.5, 0.3))
    assert params_from_coordinates(
        saddle_coordinates(1.0, 1.0, 0.0)
    ).q0 == pytest.approx(Q0_START)


@pytest.mark.slow
def test_threshold_state_threshold_at_small_a():
    spec = LossSpec(0.01)
    alpha = ALPHA_BBP_1RSB[0.01]
    solution = solve_threshold_state(spec, alpha)
    assert solution.converged
    assert max(abs(r) for r in solution.residuals) <= 1e-4
    density = joint_density_1rsb(spec, alpha, solution.params)
    assert bbp_alpha(density) == pytest.approx(4.29, abs=0.15)
