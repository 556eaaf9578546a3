import numpy as np
import pytest

from app.harness.harness_utils import ThresholdSamplePool
from app.harness.run_configs.normalized_intensity import (
    ALPHA_BBP_THRESHOLD_STATES,
    LOSS_PARAMETERS,
    T_BBP_REFERENCE,
)
from app.harness.threshold import (
    PLATEAU,
    finite_size_extrapolate,
    label_correlation,
    phase_diagram,
    pool_density,
    resolve_steps,
    sample_threshold_pool,
)
from app.landscape.errors import InvalidArgumentError, MissingInputError


def test_resolve_steps():
    assert resolve_steps([0, PLATEAU, 5], 10) == {0: 0, PLATEAU: 10, 5: 5}
    with pytest.raises(InvalidArgumentError):
        resolve_steps(["later"], 10)
    with pytest.raises(InvalidArgumentError):
        resolve_steps([11], 10)
    with pytest.raises(InvalidArgumentError):
        resolve_steps([], 10)


@pytest.fixture(scope="module")
def pools():
    return sample_threshold_pool(0.01, 4.0, 64, [0, 5, PLATEAU], seeds=4,
                                 t_c=10, workers=1, progress=False)


def test_pools_hold_every_seed_at_every_time(pools):
    assert set(pools) == {0, 5, PLATEAU}
    for tag, pool in pools.items():
        assert pool.pairs.shape == (4 * 256, 2)
        assert len(pool.provenance) == 4
        assert np.all(pool.pairs[:, 0] >= 0)
    assert pools[PLATEAU].descent_step is None
    assert pools[5].descent_step == 5
    assert {run["step"] for run in pools[PLATEAU].provenance} == {10}


def test_pools_are_reproducible(pools):
    again = sample_threshold_pool(0.01, 4.0, 64, [5], seeds=4, t_c=10,
                                  workers=1, progress=False)
    assert np.array_equal(again[5].pairs, pools[5].pairs)
    hashes = [run["instance_hash"] for run in pools[5].provenance]
    assert len(set(hashes)) == 4


def test_equatorial_labels_start_uncorrelated(pools):
    assert abs(label_correlation(pools[0])) < 0.15


def test_pool_density_records_its_origin(pools):
    density = pool_density(pools[PLATEAU])
    assert density.variant == "empirical"
    assert density.size == pools[PLATEAU].size
    assert density.settings["N"] == 64
    assert density.settings["time_tag"] == PLATEAU


def test_correlation_needs_two_pairs():
    pool = ThresholdSamplePool(0.01, 4.0, 8, 0, np.ones((1, 2)))
    with pytest.raises(InvalidArgumentError):
        label_correlation(pool)


def test_pool_needs_a_seed():
    with pytest.raises(InvalidArgumentError):
        sample_threshold_pool(0.01, 4.0, 16, [0], seeds=0)


@pytest.mark.parametrize("a", LOSS_PARAMETERS)
def test_finite_size_extrapolation(a):
    alpha_inf = ALPHA_BBP_THRESHOLD_STATES[a]
    values = [(N, alpha_inf + 7.0 / N) for N in (512, 1024, 2048)]
    fit = finite_size_extrapolate(values)
    assert fit.alpha_inf == pytest.approx(alpha_inf)
    assert fit.slope == pytest.approx(7.0)
    assert np.allclose(fit.residuals, 0.0, atol=1e-10)
    assert fit.summary()["N"] == [512, 1024, 2048]

    flat = finite_size_extrapolate([(N, 4.2) for N in (256, 512, 1024)])
    assert flat.alpha_inf == pytest.approx(4.2)
    assert flat.slope == pytest.approx(0.0, abs=1e-9)


def test_finite_size_extrapolation_errors():
    with pytest.raises(MissingInputError):
        finite_size_extrapolate([])
    with pytest.raises(InvalidArgumentError):
        finite_size_extrapolate([(512, 4.1), (1024, 4.05)])
    with pytest.raises(InvalidArgumentError):
        finite_size_extrapolate([(512, 4.1), (1024, np.nan), (2048, 4.0)])


@pytest.mark.slow
def test_bbp_time_along_the_constrained_descent():
    alpha, t_bbp = T_BBP_REFERENCE[0.01]
    diagram = phase_diagram(0.01, alpha, 512, [0.0, 0.5, 1.0, 2.0, 4.0],
                            seeds=8, progress=False)
    assert diagram.rows[0][1] < alpha
    assert diagram.t_bbp == pytest.approx(t_bbp, abs=0.75)
