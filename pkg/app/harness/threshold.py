"""Threshold-state pools, empirical BBP estimates and their scaling.

Pools are sampled along the equatorial (constrained) descent, so every
stored (y, yhat) pair comes from a state with zero magnetization.
"""
import logging
import sys
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from app import settings
from app.harness.artifacts import instance_hash
from app.harness.generic_sweep import cell_seeds
from app.harness.harness_utils import ThresholdSamplePool
from app.landscape.dynamics import (
    DEFAULT_ETA,
    DEFAULT_T_C,
    constrained_path,
    magnetization,
)
from app.landscape.errors import (
    InvalidArgumentError,
    MissingInputError,
    SolverError,
)
from app.landscape.model import LossSpec, generate_instance
from app.landscape.rmt import (
    JointLabelDensity,
    bbp_alpha,
    bbp_time,
    dynamical_bbp,
    self_consistent_bbp,
)

logger = logging.getLogger(__name__)

PLATEAU = "plateau"
POOL_STREAM = 1
EQUATOR_TOLERANCE = 1e-8

TimeTag = Union[int, str]


@dataclass(frozen=True)
class FiniteSizeFit:
    alpha_inf: float
    slope: float
    residuals: np.ndarray
    rank: int
    dimensions: Tuple[int, ...]

    def summary(self) -> dict:
        return {
            "alpha_inf": self.alpha_inf,
            "slope": self.slope,
            "residuals": self.residuals.tolist(),
            "rank": self.rank,
            "N": list(self.dimensions),
        }


@dataclass(frozen=True)
class PhaseDiagram:
    loss_a: float
    alpha: float
    N: int
    rows: List[Tuple[float, float]]
    t_bbp: float

    def summary(self) -> dict:
        return {
            "loss_a": self.loss_a,
            "alpha": self.alpha,
            "N": self.N,
            "t_bbp": self.t_bbp,
            "rows": [list(row) for row in self.rows],
        }


def resolve_steps(times: Iterable[TimeTag], t_c: int) -> Dict[TimeTag, int]:
    """Step index of every requested time tag; "plateau" means t_c."""
    steps = {}
    for tag in times:
        step = t_c if tag == PLATEAU else tag
        if isinstance(step, str) or int(step) != step:
            raise InvalidArgumentError(f"Unknown time tag {tag!r}")
        if not 0 <= step <= t_c:
            raise InvalidArgumentError(
                f"Time {tag} outside the constrained run [0, {t_c}]"
            )
        steps[tag] = int(step)
    if not steps:
        raise InvalidArgumentError("At least one time is required")
    return steps


def _sample_run(
    loss_a: float,
    alpha: float,
    N: int,
    steps: Dict[TimeTag, int],
    eta: float,
    base_seed: int,
    index: int,
) -> Tuple[Dict[TimeTag, np.ndarray], dict]:
    instance_seed, init_seed = cell_seeds(
        base_seed, N, alpha, index, stream=POOL_STREAM
    )
    inst = generate_instance(N, alpha, instance_seed)
    wanted = {}
    for tag, step in steps.items():
        wanted.setdefault(step, []).append(tag)
    pairs = {}
    last = max(wanted)
    for step, w in constrained_path(
        LossSpec(loss_a), inst, max(last, 1), eta, init_seed
    ):
        if step in wanted:
            m = magnetization(inst, w)
            if abs(m) > EQUATOR_TOLERANCE:
                raise SolverError(
                    f"Constrained state left the equator: m={m:.3e}"
                )
            for tag in wanted[step]:
                pairs[tag] = inst.label_pairs(w)
        if step >= last:
            break
    provenance = {
        "index": index,
        "instance_seed": instance_seed,
        "init_seed": init_seed,
        "instance_hash": instance_hash(inst),
    }
    return pairs, provenance


def sample_threshold_pool(
    loss_a: float,
    alpha: float,
    N: int,
    times: Sequence[TimeTag],
    seeds: int,
    eta: float = DEFAULT_ETA,
    t_c: int = DEFAULT_T_C,
    base_seed: int = 0,
    workers: Optional[int] = None,
    progress: Optional[bool] = None,
) -> Dict[TimeTag, ThresholdSamplePool]:
    """Pools (y, yhat) pairs of constrained runs across seeds, per time."""
    if seeds < 1:
        raise InvalidArgumentError("seeds must be >= 1")
    steps = resolve_steps(times, t_c)
    progress = sys.stderr.isatty() if progress is None else progress
    results = Parallel(
        n_jobs=workers or settings.WORKERS, return_as="generator"
    )(
        delayed(_sample_run)(loss_a, alpha, N, steps, eta, base_seed, i)
        for i in range(seeds)
    )
    collected = {tag: [] for tag in steps}
    provenance = []
    for pairs, run in tqdm(
        results, total=seeds, disable=not progress, desc="pool"
    ):
        for tag, block in pairs.items():
            collected[tag].append(block)
        provenance.append(run)

    pools = {}
    for tag, blocks in collected.items():
        pools[tag] = ThresholdSamplePool(
            loss_a=loss_a,
            alpha=alpha,
            N=N,
            time_tag=tag,
            pairs=np.concatenate(blocks),
            provenance=[dict(run, step=steps[tag], eta=eta)
                        for run in provenance],
        )
        logger.info("Pool a=%g alpha=%g N=%d t=%s: %d pairs", loss_a,
                    alpha, N, tag, pools[tag].size)
    return pools


def pool_density(pool: ThresholdSamplePool) -> JointLabelDensity:
    density = JointLabelDensity.empirical(LossSpec(pool.loss_a), pool.pairs)
    density.settings.update(N=pool.N, time_tag=pool.time_tag,
                            alpha_sampled=pool.alpha)
    return density


def label_correlation(pool: ThresholdSamplePool) -> float:
    if pool.size < 2:
        raise InvalidArgumentError("Correlation needs at least two pairs")
    return float(np.corrcoef(pool.pairs[:, 0], pool.pairs[:, 1])[0, 1])


def finite_size_extrapolate(
    values: Sequence[Tuple[int, float]]
) -> FiniteSizeFit:
    """Least-squares fit alpha(N) = alpha_inf + c / N."""
    if not values:
        raise MissingInputError("No (N, alpha) values to extrapolate")
    dims = np.array([n for n, _ in values], dtype=float)
    alphas = np.array([a for _, a in values], dtype=float)
    if len(np.unique(dims)) < 3:
        raise InvalidArgumentError(
            "Extrapolation needs at least three distinct N"
        )
    if not np.all(np.isfinite(alphas)) or np.any(dims <= 0):
        raise InvalidArgumentError("N must be positive, alphas finite")
    design = np.column_stack([np.ones_like(dims), 1.0 / dims])
    coefficients, _, rank, _ = np.linalg.lstsq(design, alphas, rcond=None)
    if rank < 2:
        raise SolverError("Singular design in the finite-size fit")
    fit = FiniteSizeFit(
        alpha_inf=float(coefficients[0]),
        slope=float(coefficients[1]),
        residuals=alphas - design @ coefficients,
        rank=int(rank),
        dimensions=tuple(int(n) for n in dims),
    )
    logger.info("alpha_inf = %.4f (c = %.3f)", fit.alpha_inf, fit.slope)
    return fit


def pooled_bbp(
    loss_a: float,
    alpha: float,
    N_list: Sequence[int],
    seeds: int,
    time_tag: TimeTag = PLATEAU,
    **kwargs,
) -> Tuple[List[Tuple[int, float]], FiniteSizeFit]:
    """alpha_BBP of pooled densities per N, extrapolated in 1/N."""
    values = []
    for N in N_list:
        pool = sample_threshold_pool(
            loss_a, alpha, N, [time_tag], seeds, **kwargs
        )[time_tag]
        values.append((N, bbp_alpha(pool_density(pool))))
    return values, finite_size_extrapolate(values)


def self_consistent_pool_bbp(
    loss_a: float,
    N: int,
    seeds: int,
    alpha0: float,
    tol: float = 1e-2,
    **kwargs,
) -> Tuple[float, List[float]]:
    """Iterates alpha <- alpha_BBP(plateau pool sampled at alpha)."""

    def factory(alpha: float) -> JointLabelDensity:
        pool = sample_threshold_pool(
            loss_a, alpha, N, [PLATEAU], seeds, **kwargs
        )[PLATEAU]
        return pool_density(pool)

    return self_consistent_bbp(factory, alpha0, tol=tol)


def phase_diagram(
    loss_a: float,
    alpha: float,
    N: int,
    time_grid: Sequence[float],
    seeds: int,
    eta: float = DEFAULT_ETA,
    **kwargs,
) -> PhaseDiagram:
    """alpha_BBP along the equatorial descent; times in eta * step units."""
    steps = sorted({int(round(t / eta)) for t in time_grid})
    kwargs.setdefault("t_c", max(steps + [1]))
    pools = sample_threshold_pool(
        loss_a, alpha, N, steps, seeds, eta=eta, **kwargs
    )
    rows = dynamical_bbp(
        lambda t: pool_density(pools[int(round(t / eta))]),
        alpha,
        [eta * step for step in steps],
    )
    return PhaseDiagram(
        loss_a=loss_a,
        alpha=alpha,
        N=N,
        rows=rows,
        t_bbp=bbp_time(rows, alpha),
    )
