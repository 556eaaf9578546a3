"""Spherical gradient descent and its initialization schemes."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Tuple

import numpy as np

from app.landscape.errors import (
    InvalidArgumentError,
    NumericalOverflowError,
)
from app.landscape.model import (
    Instance,
    LossSpec,
    check_dimension,
    gradient,
    sphere_normalize,
    total_loss,
)
from app.landscape.spectrum import Which, extreme_eigenpair

logger = logging.getLogger(__name__)

DEFAULT_ETA = 2e-4
DEFAULT_STEPS_PER_LOG2N = 12000
DEFAULT_T_C = 60000
RECOVERY_THRESHOLD = 0.99
EARLY_EXIT_LOSS = 1e-12


class InitKind(str, Enum):
    RANDOM = "random"
    SPECTRAL = "spectral"
    CONSTRAINED = "constrained"


def steps_for_dimension(
    N: int, steps_per_log2n: int = DEFAULT_STEPS_PER_LOG2N
) -> int:
    """T = P * log2(N) with P = 12000 by default."""
    return int(round(steps_per_log2n * np.log2(N)))


@dataclass(frozen=True)
class TrajectoryConfig:
    steps: int
    eta: float = DEFAULT_ETA
    record_every: int = 100
    dense_steps: int = 1000
    snapshot_times: Tuple[int, ...] = ()
    init: InitKind = InitKind.RANDOM
    t_c: int = DEFAULT_T_C
    renormalize: bool = True
    early_exit: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise InvalidArgumentError("eta must be positive")
        if self.steps < 1 or self.record_every < 1 or self.t_c < 1:
            raise InvalidArgumentError(
                "steps, record_every and t_c must be positive"
            )
        if any(t < 0 or t > self.steps for t in self.snapshot_times):
            raise InvalidArgumentError("snapshot_times must lie in [0, steps]")
        object.__setattr__(self, "init", InitKind(self.init))

    @classmethod
    def for_dimension(cls, N: int, **overrides) -> "TrajectoryConfig":
        overrides.setdefault("steps", steps_for_dimension(N))
        return cls(**overrides)

    def is_recorded(self, step: int) -> bool:
        return (
            step <= self.dense_steps
            or step % self.record_every == 0
            or step == self.steps
        )


@dataclass
class TrajectoryRecord:
    times: List[int] = field(default_factory=list)
    magnetization: List[float] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    snapshots: List[Tuple[int, np.ndarray]] = field(default_factory=list)
    final_state: Optional[np.ndarray] = None
    recovered: bool = False
    valid: bool = True
    error: Optional[str] = None
    eta: float = DEFAULT_ETA

    def record(self, step: int, m: float, loss_per_variable: float) -> None:
        self.times.append(step)
        self.magnetization.append(m)
        self.loss.append(loss_per_variable)

    @property
    def descent_time(self) -> np.ndarray:
        """Simulation time eta * step of every recorded point."""
        return self.eta * np.asarray(self.times, dtype=float)

    @property
    def initial_magnetization(self) -> float:
        return self.magnetization[0] if self.magnetization else float("nan")

    @property
    def final_magnetization(self) -> float:
        return self.magnetization[-1] if self.magnetization else float("nan")


def magnetization(inst: Instance, w: np.ndarray) -> float:
    """Overlap (w . w*) / N with the planted signal."""
    check_dimension(inst, w)
    return float(np.dot(w, inst.signal)) / inst.N


def gd_step(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    eta: float,
    renormalize: bool = True,
    step: Optional[int] = None,
    check_norm: bool = True,
) -> np.ndarray:
    """One update w - eta g + eta mu w with mu = (w . g) / N."""
    if check_norm:
        norm2 = float(np.dot(w, w))
        if abs(norm2 / inst.N - 1.0) > 2e-6:
            raise InvalidArgumentError(
                f"State is off the sphere: |w|^2/N = {norm2 / inst.N}"
            )
    g = gradient(spec, inst, w)
    if not np.all(np.isfinite(g)):
        raise NumericalOverflowError(
            f"Non-finite gradient at step {step}", step=step
        )
    mu = float(np.dot(w, g)) / inst.N
    w_next = w - eta * g + eta * mu * w
    if renormalize:
        w_next = sphere_normalize(w_next)
    return w_next


def init_random(N: int, seed: int) -> np.ndarray:
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return sphere_normalize(rng.standard_normal(int(N)))


def init_spectral(
    spec: LossSpec, inst: Instance, seed: int, tol: float = 1e-8
) -> np.ndarray:
    """Smallest Hessian eigenvector at a random reference state."""
    reference = init_random(inst.N, seed)
    _, v_min = extreme_eigenpair(spec, inst, reference, Which.SMALLEST, tol)
    w0 = sphere_normalize(v_min)
    if np.dot(w0, reference) < 0:
        w0 = -w0
    return w0


def project_out_signal(inst: Instance, w: np.ndarray) -> np.ndarray:
    projected = w - (np.dot(w, inst.signal) / inst.N) * inst.signal
    return sphere_normalize(projected)


def constrained_path(
    spec: LossSpec,
    inst: Instance,
    t_c: int,
    eta: float,
    seed: int,
) -> Iterator[Tuple[int, np.ndarray]]:
    """Yields (step, state) along the descent restricted to the equator.

    Every update is followed by the projection onto w* orthogonal and a
    rescaling onto the sphere, so m = 0 holds at every step.
    """
    if t_c < 1:
        raise InvalidArgumentError("t_c must be >= 1")
    w = project_out_signal(inst, init_random(inst.N, seed))
    yield 0, w
    for step in range(1, t_c + 1):
        w = gd_step(spec, inst, w, eta, renormalize=False, step=step,
                    check_norm=False)
        w = project_out_signal(inst, w)
        yield step, w


def init_constrained(
    spec: LossSpec,
    inst: Instance,
    t_c: int = DEFAULT_T_C,
    eta: float = DEFAULT_ETA,
    seed: int = 0,
) -> np.ndarray:
    """Threshold-state proxy reached by t_c equatorial descent steps."""
    w = None
    for _, w in constrained_path(spec, inst, t_c, eta, seed):
        pass
    return w


def initial_state(
    spec: LossSpec, inst: Instance, config: TrajectoryConfig
) -> np.ndarray:
    if config.init is InitKind.RANDOM:
        return init_random(inst.N, config.seed)
    if config.init is InitKind.SPECTRAL:
        return init_spectral(spec, inst, config.seed)
    return init_constrained(spec, inst, config.t_c, config.eta, config.seed)


def run_trajectory(
    spec: LossSpec,
    inst: Instance,
    config: TrajectoryConfig,
    w0: Optional[np.ndarray] = None,
) -> TrajectoryRecord:
    """Iterates gd_step from the configured start and records m(t), L(t)/N.

    An overflow stops the run and returns the partial record flagged
    invalid.
    """
    record = TrajectoryRecord(eta=config.eta)
    snapshot_times = set(config.snapshot_times)
    try:
        w = initial_state(spec, inst, config) if w0 is None else w0.copy()
        check_dimension(inst, w)
        step = 0
        while True:
            recorded = config.is_recorded(step)
            if recorded or config.early_exit:
                loss = total_loss(spec, inst, w) / inst.N
                if recorded:
                    record.record(step, magnetization(inst, w), loss)
            if step in snapshot_times:
                record.snapshots.append((step, w.copy()))
            if step == config.steps:
                break
            if config.early_exit and loss < EARLY_EXIT_LOSS:
                if not recorded:
                    record.record(step, magnetization(inst, w), loss)
                logger.debug("Early exit at step %d", step)
                break
            step += 1
            w = gd_step(
                spec,
                inst,
                w,
                config.eta,
                renormalize=config.renormalize,
                step=step,
                check_norm=config.renormalize,
            )
    except NumericalOverflowError as e:
        logger.warning("Trajectory aborted: %s", e)
        record.valid = False
        record.error = str(e)
        return record

    record.final_state = w
    record.recovered = abs(record.final_magnetization) >= RECOVERY_THRESHOLD
    return record
