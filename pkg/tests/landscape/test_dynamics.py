import numpy as np
import pytest

from app.landscape import dynamics
from app.landscape.dynamics import (
    InitKind,
    TrajectoryConfig,
    constrained_path,
    gd_step,
    init_constrained,
    init_random,
    init_spectral,
    magnetization,
    run_trajectory,
    steps_for_dimension,
)
from app.landscape.errors import InvalidArgumentError
from app.landscape.model import (
    LossSpec,
    generate_instance,
    gradient,
    total_loss,
)
from app.landscape.spectrum import hessian_dense


def test_steps_rule():
    assert steps_for_dimension(512) == 108000
    assert steps_for_dimension(1024, 6000) == 60000


def test_random_init_is_on_the_sphere_and_seeded():
    w = init_random(64, seed=5)
    assert np.dot(w, w) == pytest.approx(64.0)
    assert np.array_equal(w, init_random(64, seed=5))
    assert not np.array_equal(w, init_random(64, seed=6))


def test_random_init_overlap_spreads_as_inverse_root_n():
    inst = generate_instance(1024, 0.1, seed=0)
    m0 = [magnetization(inst, init_random(1024, seed)) for seed in range(1000)]
    assert np.std(m0, ddof=1) == pytest.approx(1 / 32, rel=0.1)


def test_gd_step_leaves_a_radial_gradient_fixed(monkeypatch, small_instance,
                                                loss):
    monkeypatch.setattr(dynamics, "gradient", lambda spec, inst, w: 3.7 * w)
    w = init_random(small_instance.N, seed=1)
    w_next = gd_step(loss, small_instance, w, eta=0.1, renormalize=False)
    assert np.allclose(w_next, w, rtol=0, atol=1e-14)


def test_signal_is_a_fixed_point(small_instance, loss):
    w = np.array(small_instance.signal)
    assert np.allclose(gd_step(loss, small_instance, w, eta=1e-3), w)


@pytest.mark.parametrize("eta", [1e-3, 1e-4])
def test_unnormalized_step_drifts_at_second_order(medium_instance, loss,
                                                  eta):
    N = medium_instance.N
    w = init_random(N, seed=0)
    g = gradient(loss, medium_instance, w)
    tangential = g - (np.dot(w, g) / N) * w
    w_next = gd_step(loss, medium_instance, w, eta, renormalize=False)
    drift = np.dot(w_next, w_next) - N
    assert drift > 0
    assert drift == pytest.approx(eta**2 * np.dot(tangential, tangential),
                                  rel=1e-6)


def test_loss_does_not_increase_at_small_eta(medium_instance, loss):
    config = TrajectoryConfig(steps=300, eta=2e-5, dense_steps=300, seed=5)
    record = run_trajectory(loss, medium_instance, config)
    assert len(record.loss) == 301
    assert np.all(np.diff(record.loss) <= 1e-12)


def test_trajectory_is_odd_in_the_start(medium_instance, loss):
    w0 = init_random(medium_instance.N, seed=8)
    config = TrajectoryConfig(steps=100, eta=1e-4, dense_steps=100)
    plus = run_trajectory(loss, medium_instance, config, w0=w0)
    minus = run_trajectory(loss, medium_instance, config, w0=-w0)
    assert np.allclose(minus.final_state, -plus.final_state, atol=1e-12)
    assert np.allclose(minus.magnetization, -np.array(plus.magnetization),
                       atol=1e-12)
    assert np.allclose(minus.loss, plus.loss, rtol=1e-12)


def test_gd_step_stays_on_the_sphere_and_descends(medium_instance, loss):
    w = init_random(medium_instance.N, seed=0)
    w_next = gd_step(loss, medium_instance, w, eta=1e-5)
    assert np.dot(w_next, w_next) == pytest.approx(medium_instance.N)
    assert total_loss(loss, medium_instance, w_next) < total_loss(
        loss, medium_instance, w
    )


def test_gd_step_rejects_states_off_the_sphere(medium_instance, loss):
    w = 2.0 * init_random(medium_instance.N, seed=0)
    with pytest.raises(InvalidArgumentError):
        gd_step(loss, medium_instance, w, eta=1e-4)


def test_constrained_path_keeps_zero_magnetization(medium_instance, loss):
    steps = []
    for step, w in constrained_path(loss, medium_instance, 50, 2e-4, seed=2):
        steps.append(step)
        assert abs(magnetization(medium_instance, w)) < 1e-12
        assert np.dot(w, w) == pytest.approx(medium_instance.N)
    assert steps == list(range(51))


def test_constrained_descent_lowers_the_loss(medium_instance, loss):
    start = next(constrained_path(loss, medium_instance, 1, 2e-4, seed=2))[1]
    end = init_constrained(loss, medium_instance, t_c=200, eta=2e-4, seed=2)
    assert total_loss(loss, medium_instance, end) < total_loss(
        loss, medium_instance, start
    )


def test_spectral_init_is_the_smallest_eigenvector(medium_instance, loss):
    w0 = init_spectral(loss, medium_instance, seed=4)
    reference = init_random(medium_instance.N, seed=4)
    H = hessian_dense(loss, medium_instance, reference)
    values = np.linalg.eigvalsh(H)
    rayleigh = w0 @ H @ w0 / medium_instance.N
    assert np.dot(w0, w0) == pytest.approx(medium_instance.N)
    assert np.dot(w0, reference) >= 0
    assert rayleigh == pytest.approx(
        values[0], abs=1e-6 * np.abs(values).max()
    )


def test_trajectory_records_dense_then_sparse(medium_instance, loss):
    config = TrajectoryConfig(steps=1500, eta=1e-4, dense_steps=10,
                              record_every=500, snapshot_times=(0, 1000),
                              seed=3)
    record = run_trajectory(loss, medium_instance, config)
    assert record.times == list(range(11)) + [500, 1000, 1500]
    assert [step for step, _ in record.snapshots] == [0, 1000]
    assert record.valid and record.final_state is not None
    assert np.allclose(record.descent_time, 1e-4 * np.array(record.times))
    assert record.loss[-1] < record.loss[0]


def test_trajectory_is_deterministic(medium_instance, loss):
    config = TrajectoryConfig(steps=200, eta=1e-4, seed=9)
    first = run_trajectory(loss, medium_instance, config)
    second = run_trajectory(loss, medium_instance, config)
    assert first.magnetization == second.magnetization
    assert first.loss == second.loss


def test_start_at_the_signal_is_recovered_with_early_exit(
    medium_instance, loss
):
    config = TrajectoryConfig(steps=100, early_exit=True)
    record = run_trajectory(loss, medium_instance, config,
                            w0=np.array(medium_instance.signal))
    assert record.recovered
    assert record.times == [0]
    assert record.final_magnetization == pytest.approx(1.0)


def test_overflow_returns_an_invalid_partial_record(medium_instance, loss):
    config = TrajectoryConfig(steps=1000, eta=1e4, renormalize=False)
    with np.errstate(all="ignore"):
        record = run_trajectory(loss, medium_instance, config)
    assert not record.valid
    assert not record.recovered
    assert "Non-finite" in record.error
    assert len(record.times) >= 1


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrajectoryConfig(steps=10, eta=0.0)
    with pytest.raises(InvalidArgumentError):
        TrajectoryConfig(steps=10, snapshot_times=(11,))
    assert TrajectoryConfig(steps=1, init="spectral").init is InitKind.SPECTRAL


def test_constrained_init_runs_through_the_trajectory(loss):
    inst = generate_instance(32, 2.0, seed=1)
    config = TrajectoryConfig(steps=10, init="constrained", t_c=20, seed=1)
    record = run_trajectory(loss, inst, config)
    assert abs(record.initial_magnetization) < 1e-12


@pytest.mark.slow
def test_large_alpha_random_init_recovers():
    spec = LossSpec(0.01)
    inst = generate_instance(256, 5.0, seed=0)
    config = TrajectoryConfig.for_dimension(256, seed=0, early_exit=True)
    record = run_trajectory(spec, inst, config)
    assert record.recovered
    assert abs(record.final_magnetization) >= 0.99
