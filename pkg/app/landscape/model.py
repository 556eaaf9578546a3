"""Phase-retrieval problem: loss family, planted instances and gradients."""
import logging
from dataclasses import dataclass, field

import numpy as np

from app.landscape.errors import InvalidArgumentError, ZeroDenominatorError

logger = logging.getLogger(__name__)

RNG_ID = "numpy.random.PCG64"


@dataclass(frozen=True)
class LossSpec:
    """Normalized intensity loss (y^2 - yhat^2)^2 / (a + y^2)."""

    a: float = 0.01

    def __post_init__(self) -> None:
        if not np.isfinite(self.a) or self.a < 0:
            raise InvalidArgumentError(
                f"Loss parameter a must be nonnegative, got {self.a}"
            )

    def denominator(self, y):
        denom = self.a + np.square(y)
        if np.any(denom == 0):
            raise ZeroDenominatorError("a + y^2 vanishes (a = 0 and y = 0)")
        return denom


@dataclass(frozen=True, eq=False)
class Instance:
    N: int
    M: int
    alpha: float
    signal: np.ndarray
    sensing: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    seed: int
    unit_norm_rows: bool = False

    def estimated_labels(self, w: np.ndarray) -> np.ndarray:
        check_dimension(self, w)
        return self.sensing @ w

    def label_pairs(self, w: np.ndarray) -> np.ndarray:
        """(y_i, yhat_i) pairs of shape (M, 2) at state w."""
        return np.column_stack([self.labels, self.estimated_labels(w)])


def check_dimension(inst: Instance, w: np.ndarray) -> None:
    if np.ndim(w) != 1 or len(w) != inst.N:
        raise InvalidArgumentError(
            f"State has shape {np.shape(w)}, expected ({inst.N},)"
        )


def sphere_normalize(w: np.ndarray) -> np.ndarray:
    """Rescales w onto the sphere of radius sqrt(N)."""
    norm = np.linalg.norm(w)
    if norm == 0:
        raise InvalidArgumentError("Cannot normalize the zero vector")
    return w * (np.sqrt(len(w)) / norm)


def generate_instance(
    N: int, alpha: float, seed: int, unit_norm_rows: bool = False
) -> Instance:
    """Draws sensing vectors, a spherical signal and the |x_i . w*| labels.

    Sensing entries are i.i.d. N(0, 1/N), so each x_i has unit norm in
    expectation; ``unit_norm_rows`` rescales every row to norm one exactly.
    """
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N}")
    if not np.isfinite(alpha) or alpha <= 0:
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")
    N = int(N)
    M = int(round(alpha * N))
    if M < 1:
        raise InvalidArgumentError(f"round(alpha * N) = {M} < 1")

    rng = np.random.Generator(np.random.PCG64(seed))
    signal = sphere_normalize(rng.standard_normal(N))
    sensing = rng.standard_normal((M, N)) / np.sqrt(N)
    if unit_norm_rows:
        sensing /= np.linalg.norm(sensing, axis=1, keepdims=True)
    labels = np.abs(sensing @ signal)

    for array in (signal, sensing, labels):
        array.setflags(write=False)
    logger.debug("Generated instance N=%d M=%d seed=%d", N, M, seed)
    return Instance(
        N=N,
        M=M,
        alpha=M / N,
        signal=signal,
        sensing=sensing,
        labels=labels,
        seed=int(seed),
        unit_norm_rows=unit_norm_rows,
    )


def loss_pair(spec: LossSpec, y, yhat):
    """l_a(y, yhat); works elementwise on arrays."""
    return (np.square(y) - np.square(yhat)) ** 2 / spec.denominator(y)


def loss_derivative(spec: LossSpec, y, yhat):
    """First label-derivative -4 yhat (y^2 - yhat^2) / (a + y^2)."""
    y2, yhat = np.square(y), np.asarray(yhat)
    return -4.0 * yhat * (y2 - yhat**2) / spec.denominator(y)


def curvature_weight(spec: LossSpec, y, yhat):
    """Second label-derivative f = (12 yhat^2 - 4 y^2) / (a + y^2)."""
    return (12.0 * np.square(yhat) - 4.0 * np.square(y)) / spec.denominator(
        y
    )


def total_loss(spec: LossSpec, inst: Instance, w: np.ndarray) -> float:
    """L(w) = 1/2 sum_i l_a(y_i, x_i . w)."""
    yhat = inst.estimated_labels(w)
    return 0.5 * float(np.sum(loss_pair(spec, inst.labels, yhat)))


def gradient(spec: LossSpec, inst: Instance, w: np.ndarray) -> np.ndarray:
    """Gradient of total_loss: 1/2 sum_i dl/dyhat(y_i, yhat_i) x_i."""
    yhat = inst.estimated_labels(w)
    return 0.5 * (inst.sensing.T @ loss_derivative(spec, inst.labels, yhat))
