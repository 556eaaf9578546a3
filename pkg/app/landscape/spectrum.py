"""Hessian of the loss landscape and its spectrum.

The matrix built here is H = sum_i f_i x_i x_i^T - mu_H I, where f is the
curvature weight and mu_H = w . grad(sum_i l_i) / N is the spherical
shift. It is the Hessian of the unhalved loss sum_i l_i on the sphere,
i.e. twice the Hessian of total_loss; the factor does not move zero
crossings, outliers or eigenvectors.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from app.landscape.errors import (
    ConvergenceError,
    InvalidArgumentError,
    ResourceLimitError,
)
from app.landscape.model import (
    Instance,
    LossSpec,
    check_dimension,
    curvature_weight,
    loss_derivative,
)

logger = logging.getLogger(__name__)

DENSE_LIMIT = 8192
DIAGONALIZATION_LIMIT = 4096
SMALL_DIMENSION = 64
DETACHMENT_FACTOR = 5.0
EDGE_WINDOW = 32


class Which(str, Enum):
    SMALLEST = "smallest"
    LARGEST = "largest"


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray
    lambda_min: float
    v_min: np.ndarray
    signal_overlap_sq: float
    mu_shift: float
    outlier_detached: bool
    bulk_left_estimate: float

    def summary(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "signal_overlap_sq": self.signal_overlap_sq,
            "mu_shift": self.mu_shift,
            "outlier_detached": self.outlier_detached,
            "bulk_left_estimate": self.bulk_left_estimate,
            "lambda_max": float(self.eigenvalues[-1]),
            "N": len(self.eigenvalues),
        }


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    density: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def total_mass(self) -> float:
        return float(np.sum(self.density * np.diff(self.edges)))


def curvature_weights(
    spec: LossSpec, inst: Instance, w: np.ndarray
) -> np.ndarray:
    return curvature_weight(spec, inst.labels, inst.estimated_labels(w))


def spherical_shift(spec: LossSpec, inst: Instance, w: np.ndarray) -> float:
    """mu_H = (1/N) sum_i yhat_i dl/dyhat(y_i, yhat_i)."""
    yhat = inst.estimated_labels(w)
    slope = loss_derivative(spec, inst.labels, yhat)
    return float(np.dot(yhat, slope)) / inst.N


def _weights_and_shift(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    include_mu_shift: bool,
    weights: Optional[np.ndarray],
) -> Tuple[np.ndarray, float]:
    check_dimension(inst, w)
    if weights is None:
        weights = curvature_weights(spec, inst, w)
    elif np.shape(weights) != (inst.M,):
        raise InvalidArgumentError("weights must have one entry per sample")
    mu = spherical_shift(spec, inst, w) if include_mu_shift else 0.0
    return np.asarray(weights, dtype=float), mu


def hessian_dense(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    include_mu_shift: bool = True,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    if inst.N > DENSE_LIMIT:
        raise ResourceLimitError(
            f"Dense Hessian requested for N={inst.N} > {DENSE_LIMIT}"
        )
    f, mu = _weights_and_shift(spec, inst, w, include_mu_shift, weights)
    H = (inst.sensing.T * f) @ inst.sensing
    H = 0.5 * (H + H.T)
    H[np.diag_indices_from(H)] -= mu
    return H


def hessian_times_vector(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    u: np.ndarray,
    include_mu_shift: bool = True,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """H u in O(MN) without forming H."""
    if np.shape(u) != (inst.N,):
        raise InvalidArgumentError(
            f"Vector has shape {np.shape(u)}, expected ({inst.N},)"
        )
    f, mu = _weights_and_shift(spec, inst, w, include_mu_shift, weights)
    return inst.sensing.T @ (f * (inst.sensing @ u)) - mu * u


def hessian_operator(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    include_mu_shift: bool = True,
    weights: Optional[np.ndarray] = None,
) -> LinearOperator:
    f, mu = _weights_and_shift(spec, inst, w, include_mu_shift, weights)
    X = inst.sensing

    def matvec(u):
        u = np.ravel(u)
        return X.T @ (f * (X @ u)) - mu * u

    return LinearOperator((inst.N, inst.N), matvec=matvec, dtype=float)


def _residual(op, lam: float, v: np.ndarray) -> float:
    return float(np.linalg.norm(op.matvec(v) - lam * v))


def extreme_eigenpair(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    which: Which = Which.SMALLEST,
    tol: float = 1e-10,
    include_mu_shift: bool = True,
    weights: Optional[np.ndarray] = None,
    maxiter: Optional[int] = None,
) -> Tuple[float, np.ndarray]:
    """Extreme eigenpair by Lanczos iterations on the Hessian operator.

    The smallest pair is obtained as the largest pair of sigma I - H, with
    sigma an upper bound of the spectrum.
    """
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    which = Which(which)
    if inst.N <= SMALL_DIMENSION:
        H = hessian_dense(spec, inst, w, include_mu_shift, weights)
        values, vectors = scipy.linalg.eigh(H)
        idx = 0 if which is Which.SMALLEST else -1
        return float(values[idx]), vectors[:, idx]

    op = hessian_operator(spec, inst, w, include_mu_shift, weights)
    try:
        top, top_vec = eigsh(op, k=1, which="LA", tol=tol * 0.1,
                             maxiter=maxiter)
        lam, v = float(top[0]), top_vec[:, 0]
        scale = max(1.0, abs(lam))
        if which is Which.SMALLEST:
            sigma = lam + 1e-3 * max(1.0, abs(lam))
            shifted = LinearOperator(
                op.shape, matvec=lambda u: sigma * np.ravel(u) - op.matvec(u),
                dtype=float,
            )
            theta, vec = eigsh(shifted, k=1, which="LA", tol=tol * 0.1,
                               maxiter=maxiter)
            lam, v = sigma - float(theta[0]), vec[:, 0]
            scale = max(scale, abs(lam))
    except ArpackNoConvergence as e:
        residual = float("nan")
        if len(e.eigenvalues):
            residual = _residual(op, float(e.eigenvalues[0]),
                                 e.eigenvectors[:, 0])
        raise ConvergenceError(
            f"Lanczos iterations did not converge for the {which.value} "
            "eigenpair",
            residual=residual,
        ) from e

    v = v / np.linalg.norm(v)
    residual = _residual(op, lam, v)
    # Residuals are measured against the spectral norm of H.
    if residual > tol * scale:
        lam = float(v @ op.matvec(v))
        residual = _residual(op, lam, v)
        if residual > tol * scale:
            raise ConvergenceError(
                f"Eigenpair residual {residual:.3e} above tolerance",
                residual=residual,
            )
    return lam, v


def detachment(eigenvalues: np.ndarray) -> Tuple[bool, float]:
    """Whether the smallest eigenvalue is isolated from the bulk.

    Detached means lambda_2 - lambda_1 exceeds 5 times the median spacing
    among the 32 smallest remaining eigenvalues. Returns the flag and the
    bulk left-edge estimate.
    """
    window = eigenvalues[1:EDGE_WINDOW + 1]
    if len(window) < 3:
        return False, float(eigenvalues[0])
    spacing = float(np.median(np.diff(window)))
    gap = float(eigenvalues[1] - eigenvalues[0])
    detached = gap > DETACHMENT_FACTOR * max(spacing, 0.0) and gap > 0
    return detached, float(eigenvalues[1] if detached else eigenvalues[0])


def full_spectrum(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    include_mu_shift: bool = True,
    weights: Optional[np.ndarray] = None,
) -> SpectrumReport:
    if inst.N > DIAGONALIZATION_LIMIT:
        raise ResourceLimitError(
            f"Dense diagonalization requested for N={inst.N} > "
            f"{DIAGONALIZATION_LIMIT}"
        )
    H = hessian_dense(spec, inst, w, include_mu_shift, weights)
    try:
        values, vectors = scipy.linalg.eigh(H)
    except scipy.linalg.LinAlgError as e:
        raise ConvergenceError(f"Diagonalization failed: {e}") from e
    v_min = vectors[:, 0]
    overlap = float(np.dot(v_min, inst.signal) ** 2) / inst.N
    detached, bulk_left = detachment(values)
    mu = spherical_shift(spec, inst, w) if include_mu_shift else 0.0
    logger.debug(
        "Spectrum N=%d: lambda_min=%.4g detached=%s", inst.N, values[0],
        detached,
    )
    return SpectrumReport(
        eigenvalues=values,
        lambda_min=float(values[0]),
        v_min=v_min,
        signal_overlap_sq=overlap,
        mu_shift=mu,
        outlier_detached=detached,
        bulk_left_estimate=bulk_left,
    )


def empirical_density(eigenvalues, bins: int = 50) -> Histogram:
    """Normalized histogram over [min, max] of the eigenvalues."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if eigenvalues.size == 0:
        raise InvalidArgumentError("No eigenvalues to histogram")
    if bins < 10:
        raise InvalidArgumentError("bins must be >= 10")
    lo, hi = float(eigenvalues.min()), float(eigenvalues.max())
    if hi == lo:
        hi = lo + 1.0
    density, edges = np.histogram(
        eigenvalues, bins=bins, range=(lo, hi), density=True
    )
    return Histogram(edges=edges, density=density)


def ks_distance(eigenvalues, grid, density) -> float:
    """Kolmogorov-Smirnov distance between eigenvalues and a density curve."""
    grid = np.asarray(grid, dtype=float)
    cdf = cumulative_trapezoid(np.asarray(density, dtype=float), grid,
                               initial=0.0)
    if cdf[-1] <= 0:
        raise InvalidArgumentError("Density has no mass on the grid")
    cdf = cdf / cdf[-1]
    result = stats.kstest(
        np.asarray(eigenvalues, dtype=float),
        lambda x: np.interp(x, grid, cdf, left=0.0, right=1.0),
    )
    return float(result.statistic)
