"""Quadrature rules for expectations over the standard normal measure.

Every rule returns nodes ``z`` and weights ``w`` with

    E[g(Z)] ~ sum(w * g(z)),   Z ~ N(0, 1),   sum(w) = 1.

The graded rule places Gauss-Legendre panels on a geometric grid around
the origin. Label expectations in this project carry factors such as
1/(a + y^2), which vary on the scale sqrt(a); plain Gauss-Hermite nodes
are far too sparse there when a is small.
"""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

from app.landscape.errors import InvalidArgumentError, PrecisionError

logger = logging.getLogger(__name__)

GAUSSIAN_CUTOFF = 10.0


@dataclass(frozen=True)
class GaussianRule:
    """Nodes/weights for a standard-normal expectation."""

    z: np.ndarray
    w: np.ndarray

    def expect(self, values: np.ndarray) -> float:
        return float(np.dot(self.w, values))

    def __len__(self) -> int:
        return len(self.z)


def hermite_rule(n_nodes: int) -> GaussianRule:
    """Gauss-Hermite rule rescaled to the standard normal."""
    if n_nodes < 2:
        raise InvalidArgumentError("n_nodes must be >= 2")
    x, w = hermgauss(n_nodes)
    return GaussianRule(z=np.sqrt(2.0) * x, w=w / np.sqrt(np.pi))


def graded_breakpoints(scale: float, cutoff: float = GAUSSIAN_CUTOFF):
    """Positive panel breakpoints 0, scale, 2*scale, 4*scale, ..., cutoff."""
    if scale <= 0:
        raise InvalidArgumentError("scale must be positive")
    points = [0.0]
    edge = scale
    while edge < cutoff:
        points.append(edge)
        edge *= 2.0
    points.append(cutoff)
    return np.asarray(points)


def graded_rule(
    n_nodes: int, scale: float, cutoff: float = GAUSSIAN_CUTOFF
) -> GaussianRule:
    """Composite Gauss-Legendre rule against the Gaussian density.

    Panels are symmetric around 0 and geometrically refined towards it on
    the given scale. ``n_nodes`` is the approximate total node count; it is
    spread evenly over the panels.
    """
    if n_nodes < 2:
        raise InvalidArgumentError("n_nodes must be >= 2")
    half = graded_breakpoints(scale, cutoff)
    n_panels = 2 * (len(half) - 1)
    per_panel = max(2, int(np.ceil(n_nodes / n_panels)))
    x, w = leggauss(per_panel)

    lo, hi = half[:-1], half[1:]
    mid = 0.5 * (hi + lo)[:, None]
    rad = 0.5 * (hi - lo)[:, None]
    pos_z = (mid + rad * x[None, :]).ravel()
    pos_w = (rad * w[None, :]).ravel()

    z = np.concatenate([-pos_z[::-1], pos_z])
    w = np.concatenate([pos_w[::-1], pos_w])
    w = w * np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
    return GaussianRule(z=z, w=w / w.sum())


def gaussian_rule(
    n_nodes: int, rule: str = "graded", scale: float = 1.0
) -> GaussianRule:
    if rule == "graded":
        return graded_rule(n_nodes, scale)
    if rule == "hermite":
        return hermite_rule(n_nodes)
    raise InvalidArgumentError(f"Unknown quadrature rule: {rule}")


def converged_by_doubling(
    evaluate: Callable[[int], float],
    n_nodes: int,
    rtol: float,
    max_doublings: int = 2,
) -> float:
    """Evaluates at n and 2n nodes until two successive values agree.

    Returns the value at the finest resolution. Raises PrecisionError with
    the last estimate when the agreement is never reached.
    """
    previous = evaluate(n_nodes)
    for _ in range(max_doublings):
        n_nodes *= 2
        current = evaluate(n_nodes)
        change = abs(current - previous) / max(abs(current), 1e-300)
        logger.debug("doubling to %d nodes: change %.3e", n_nodes, change)
        if change <= rtol:
            return current
        previous = current
    raise PrecisionError(
        f"Quadrature did not converge by doubling (rtol={rtol})",
        estimate=previous,
    )
