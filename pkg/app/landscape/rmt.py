"""Large-N spectrum of the weighted Wishart Hessian sum_i f_i x_i x_i^T.

Everything here is a function of a joint label density p(y, yhat), given
as weighted nodes, and of the sample ratio alpha. The Stieltjes transform
follows the resolvent convention

    S(z) = lim (1/N) Tr (z I - H)^(-1),

so Im S < 0 above the real axis and rho(l) = -Im S(l + i eps) / pi. It
solves 1/S = z - alpha E[f / (1 - f S)]. Below the bulk, the real branch
is parametrized by S itself through z(S) = 1/S + alpha E[f / (1 - f S)].
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from app.landscape.errors import (
    ConvergenceError,
    InvalidArgumentError,
    PrecisionError,
    SolverError,
    StructuralError,
)
from app.landscape.model import LossSpec, curvature_weight, loss_derivative
from app.landscape.quadrature import gaussian_rule

logger = logging.getLogger(__name__)

MIN_EMPIRICAL_PAIRS = 10_000
CHUNK_ENTRIES = 4_000_000
ALPHA_BRACKET = (0.1, 100.0)


@dataclass(frozen=True, eq=False)
class JointLabelDensity:
    """Joint density of true and estimated labels as weighted nodes.

    ``curvature`` holds f(y, yhat) at every node; it is derived from the
    loss unless a constant weight overrides it.
    """

    variant: str
    y: np.ndarray
    yhat: np.ndarray
    weights: np.ndarray
    curvature: np.ndarray
    loss: Optional[LossSpec] = None
    settings: dict = field(default_factory=dict)

    @classmethod
    def from_nodes(
        cls,
        spec: LossSpec,
        y,
        yhat,
        weights,
        variant: str,
        settings: Optional[dict] = None,
        prune: float = 1e-15,
    ) -> "JointLabelDensity":
        y, yhat = np.ravel(y).astype(float), np.ravel(yhat).astype(float)
        weights = np.ravel(weights).astype(float)
        if not (len(y) == len(yhat) == len(weights)) or len(y) == 0:
            raise InvalidArgumentError("Label nodes must be non-empty and "
                                       "of equal length")
        if np.any(weights < 0):
            raise InvalidArgumentError("Density weights must be nonnegative")
        keep = weights > prune * weights.max()
        y, yhat, weights = y[keep], yhat[keep], weights[keep]
        return cls(
            variant=variant,
            y=y,
            yhat=yhat,
            weights=weights / weights.sum(),
            curvature=curvature_weight(spec, y, yhat),
            loss=spec,
            settings=dict(settings or {}),
        )

    @classmethod
    def analytic_init(
        cls, spec: LossSpec, n_nodes: int = 200, rule: str = "graded"
    ) -> "JointLabelDensity":
        """Independent standard Gaussian labels (a random initial state)."""
        scale = np.sqrt(spec.a) if spec.a > 0 else 1e-3
        axis = gaussian_rule(n_nodes, rule=rule, scale=scale)
        y, yhat = np.meshgrid(axis.z, axis.z, indexing="ij")
        weights = np.outer(axis.w, axis.w)
        return cls.from_nodes(
            spec,
            y,
            yhat,
            weights,
            variant="analytic-init",
            settings={"n_nodes": n_nodes, "rule": rule, "a": spec.a},
        )

    @classmethod
    def empirical(cls, spec: LossSpec, pairs) -> "JointLabelDensity":
        """Plain average over sampled (y, yhat) pairs."""
        pairs = np.asarray(pairs, dtype=float)
        if pairs.ndim != 2 or pairs.shape[1] != 2 or len(pairs) == 0:
            raise InvalidArgumentError("pairs must have shape (n, 2)")
        n = len(pairs)
        return cls.from_nodes(
            spec,
            pairs[:, 0],
            pairs[:, 1],
            np.full(n, 1.0 / n),
            variant="empirical",
            settings={"n_pairs": n, "a": spec.a},
            prune=0.0,
        )

    @classmethod
    def constant_weight(
        cls, value: float = 1.0, label_second_moment: float = 1.0
    ) -> "JointLabelDensity":
        """f = value everywhere: the (scaled) Marchenko-Pastur ensemble."""
        y = np.array([np.sqrt(label_second_moment)])
        return cls(
            variant="constant-weight",
            y=y,
            yhat=np.zeros(1),
            weights=np.ones(1),
            curvature=np.full(1, float(value)),
            settings={"value": float(value)},
        )

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def f_min(self) -> float:
        return float(self.curvature.min())

    def expectation(self, kernel: Callable) -> float:
        """E[kernel(y, yhat)]."""
        return float(np.dot(self.weights, kernel(self.y, self.yhat)))

    def spherical_shift(self, alpha: float) -> float:
        """Large-N spherical shift mu_H = alpha E[yhat dl/dyhat]."""
        if self.loss is None:
            raise InvalidArgumentError(
                "Spherical shift needs the loss of the density"
            )
        return alpha * self.expectation(
            lambda y, yhat: yhat * loss_derivative(self.loss, y, yhat)
        )

    def spectral_scale(self, alpha: float) -> float:
        return 1.0 + alpha * float(np.dot(self.weights,
                                          np.abs(self.curvature)))


class LeftEdge(NamedTuple):
    S_minus: float
    lambda_minus: float


@dataclass(frozen=True)
class BulkSolution:
    alpha: float
    grid: np.ndarray
    stieltjes: np.ndarray
    rho: np.ndarray
    left_edge_lambda: float
    left_edge_stieltjes: float
    epsilon: float

    @property
    def density(self) -> List[Tuple[float, float]]:
        return list(zip(self.grid.tolist(), self.rho.tolist()))

    def mass(self) -> float:
        return float(np.trapezoid(self.rho, self.grid))


@dataclass(frozen=True)
class OutlierReport:
    exists: bool
    lambda_star: float = float("nan")
    overlap_sq: float = 0.0
    sigma_at_star: float = float("nan")
    S_star: float = float("nan")
    left_edge_lambda: float = float("nan")


@dataclass(frozen=True)
class BBPSolution:
    alpha: float
    margin: float
    iterations: int
    left_edge: LeftEdge
    bracket: Tuple[float, float]
    settings: dict

    def summary(self) -> dict:
        return {
            "alpha_bbp": self.alpha,
            "margin": self.margin,
            "iterations": self.iterations,
            "S_minus": self.left_edge.S_minus,
            "lambda_minus": self.left_edge.lambda_minus,
            "bracket": list(self.bracket),
            "settings": self.settings,
        }


def _check_alpha(alpha: float, allow_zero: bool = False) -> None:
    if not np.isfinite(alpha) or alpha < 0 or (alpha == 0 and not
                                                allow_zero):
        raise InvalidArgumentError(f"alpha must be positive, got {alpha}")


def _moments(density: JointLabelDensity, S, extra=None):
    """E[f g / (1 - f S)] and E[f^2 g / (1 - f S)^2] for every S.

    g is ``extra`` at the nodes, 1 when omitted.
    """
    S = np.atleast_1d(S)
    f = density.curvature
    g = density.weights if extra is None else density.weights * extra
    first = np.empty(S.shape, dtype=np.result_type(S, float))
    second = np.empty_like(first)
    chunk = max(1, CHUNK_ENTRIES // len(f))
    for start in range(0, len(S), chunk):
        part = slice(start, start + chunk)
        fR = f / (1.0 - np.outer(S[part], f))
        first[part] = fR @ g
        second[part] = (fR * fR) @ g
    return first, second


def _z_of_S(density, alpha, S):
    first, _ = _moments(density, S)
    return 1.0 / np.atleast_1d(S) + alpha * first


def _edge_function(density, alpha, S):
    """1/S^2 - alpha E[f^2 / (1 - f S)^2], i.e. -dz/dS."""
    _, second = _moments(density, S)
    return 1.0 / np.atleast_1d(S) ** 2 - alpha * second


def _outlier_function(density, alpha, S):
    """z(S) - Sigma(S) = 1/S + alpha E[f (1 - y^2) / (1 - f S)]."""
    first, _ = _moments(density, S, extra=1.0 - density.y**2)
    return 1.0 / np.atleast_1d(S) + alpha * first


def _sigma(density, alpha, S):
    first, second = _moments(density, S, extra=density.y**2)
    return alpha * first, alpha * second


def _real_scan(S_minus: float, n: int = 400) -> np.ndarray:
    """Points of (S_minus, 0) ordered from 0- towards S_minus."""
    if np.isinf(S_minus):
        return -np.logspace(-8, 8, n)
    u = np.concatenate([
        np.logspace(-8, np.log10(0.5), n // 2, endpoint=False),
        1.0 - np.logspace(np.log10(0.5), -12, n // 2),
    ])
    return u * S_minus


def left_edge(density: JointLabelDensity, alpha: float) -> LeftEdge:
    """Left edge of the bulk from the stationary point of z(S).

    Scans S from 0- towards the pole 1/f_min (or -inf for nonnegative
    weights) and returns the first root of dz/dS. Nonnegative weights
    without a stationary point have the hard edge lambda_- = 0.
    """
    _check_alpha(alpha)
    f_min = density.f_min
    S_lo = 1.0 / f_min if f_min < 0 else -np.inf
    scan = _real_scan(S_lo)
    values = _edge_function(density, alpha, scan)
    crossings = np.flatnonzero((values[:-1] > 0) & (values[1:] <= 0))
    if len(crossings) == 0:
        if f_min >= 0:
            return LeftEdge(-np.inf, 0.0)
        raise StructuralError(
            f"No stationary point of z(S) below the bulk at alpha={alpha}"
        )
    i = crossings[0]
    S_minus = brentq(
        lambda s: _edge_function(density, alpha, s)[0],
        scan[i],
        scan[i + 1],
        xtol=1e-15,
        rtol=1e-14,
        maxiter=200,
    )
    lam = float(_z_of_S(density, alpha, S_minus)[0])
    return LeftEdge(float(S_minus), lam)


def real_branch(
    density: JointLabelDensity,
    alpha: float,
    z: float,
    edge: Optional[LeftEdge] = None,
) -> float:
    """Real Stieltjes transform S(z) for z below the left edge."""
    edge = edge or left_edge(density, alpha)
    if z >= edge.lambda_minus:
        raise InvalidArgumentError(
            f"z={z} is not below the left edge {edge.lambda_minus}"
        )

    def shifted(s):
        return float(_z_of_S(density, alpha, s)[0]) - z

    hi = -1e-3 if np.isinf(edge.S_minus) else 0.5 * edge.S_minus
    while shifted(hi) > 0:
        hi *= 0.5
        if hi > -1e-300:
            raise SolverError(f"Cannot bracket S({z}) near 0-")
    if np.isinf(edge.S_minus):
        lo = 2.0 * hi
        while shifted(lo) <= 0:
            lo *= 2.0
            if lo < -1e300:
                raise SolverError(f"Cannot bracket S({z}) below the bulk")
    else:
        lo = edge.S_minus
    return float(brentq(shifted, lo, hi, xtol=1e-15, rtol=1e-14,
                        maxiter=200))


def _residual(density, alpha, z, S):
    first, _ = _moments(density, S)
    return np.abs((1.0 / S - z + alpha * first) * S)


def _solve_complex(
    density: JointLabelDensity,
    alpha: float,
    z: np.ndarray,
    S: np.ndarray,
    tol: float,
    max_iter: int,
    damping: float,
    fixed_point_iter: int = 20,
) -> np.ndarray:
    """Damped fixed point followed by a Newton polish, elementwise in z."""
    for _ in range(fixed_point_iter):
        first, _ = _moments(density, S)
        S = (1.0 - damping) * S + damping / (z - alpha * first)

    residual = _residual(density, alpha, z, S)
    for iteration in range(max_iter):
        if np.max(residual) <= tol:
            return S
        first, second = _moments(density, S)
        F = 1.0 / S - z + alpha * first
        dF = -1.0 / S**2 + alpha * second
        step = F / dF
        active = residual > tol
        trial = S.copy()
        for _ in range(30):
            trial[active] = S[active] - step[active]
            wrong = active & (
                ~np.isfinite(trial) | (trial.imag * z.imag > 0)
            )
            new_residual = np.full_like(residual, np.inf)
            ok = active & ~wrong
            if ok.any():
                new_residual[ok] = _residual(
                    density, alpha, z[ok], trial[ok]
                )
            worse = active & (new_residual > residual)
            if not worse.any():
                break
            step[worse] *= 0.5
        improved = active & (new_residual <= residual)
        S[improved] = trial[improved]
        residual[improved] = new_residual[improved]
        logger.debug("Newton %d: max residual %.3e", iteration,
                     np.max(residual))
    raise ConvergenceError(
        "Stieltjes equation did not converge",
        residual=float(np.max(residual)),
        iterations=max_iter,
    )


def stieltjes_many(
    density: JointLabelDensity,
    alpha: float,
    z: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 0.5,
) -> np.ndarray:
    """S(z) at points above the real axis, by continuation in Im z."""
    _check_alpha(alpha, allow_zero=True)
    z = np.asarray(z, dtype=complex)
    if np.any(z.imag <= 0):
        raise InvalidArgumentError("Continuation needs Im z > 0")
    bottom = float(z.imag.min())
    top = max(density.spectral_scale(alpha), float(z.imag.max()))
    n_levels = 2 * int(np.ceil(np.log10(top / bottom))) + 1
    S = None
    for level in np.geomspace(top, bottom, n_levels):
        zl = z.real + 1j * np.maximum(z.imag, level)
        if S is None:
            S = 1.0 / zl
        S = _solve_complex(density, alpha, zl, S, tol, max_iter, damping)
    if np.any(S.imag * z.imag > 1e-14 * np.abs(S)):
        raise SolverError("Stieltjes transform left the physical branch")
    return S


def stieltjes_at(
    density: JointLabelDensity,
    alpha: float,
    z: complex,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 0.5,
) -> complex:
    """Solves 1/S = z - alpha E[f / (1 - f S)] at one point.

    Real z is accepted below the bulk (real branch) or far above it.
    """
    z = complex(z)
    if z.imag > 0:
        return complex(stieltjes_many(density, alpha, np.array([z]), tol,
                                      max_iter, damping)[0])
    if z.imag < 0:
        return np.conj(stieltjes_at(density, alpha, np.conj(z), tol,
                                    max_iter, damping))
    if alpha == 0:
        return 1.0 / z
    edge = left_edge(density, alpha)
    if z.real < edge.lambda_minus:
        return complex(real_branch(density, alpha, z.real, edge))
    S = np.array([1.0 / z.real])
    zr = np.array([z.real])
    for _ in range(max_iter):
        first, second = _moments(density, S)
        F = 1.0 / S - zr + alpha * first
        if abs(F[0] * S[0]) <= tol:
            break
        S = S - F / (-1.0 / S**2 + alpha * second)
    else:
        raise ConvergenceError(f"No real solution at z={z.real}")
    if S[0] <= 0 or not np.isfinite(S[0]):
        raise SolverError(f"Real z={z.real} lies inside the support")
    return complex(S[0])


def bulk_density(
    density: JointLabelDensity,
    alpha: float,
    lambda_grid,
    epsilon: Optional[float] = None,
) -> BulkSolution:
    """rho(l) = -Im S(l + i eps) / pi on a grid, with the left edge."""
    _check_alpha(alpha)
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise InvalidArgumentError("lambda_grid needs at least two points")
    if epsilon is None:
        epsilon = 1e-6 * density.spectral_scale(alpha)
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be positive")
    try:
        S = stieltjes_many(density, alpha, grid + 1j * epsilon)
    except ConvergenceError as e:
        raise ConvergenceError(
            f"Bulk solve failed on [{grid[0]}, {grid[-1]}]: {e}",
            residual=e.residual,
            iterations=e.iterations,
        ) from e
    rho = np.clip(-S.imag / np.pi, 0.0, None)
    edge = left_edge(density, alpha)
    return BulkSolution(
        alpha=alpha,
        grid=grid,
        stieltjes=S,
        rho=rho,
        left_edge_lambda=edge.lambda_minus,
        left_edge_stieltjes=edge.S_minus,
        epsilon=epsilon,
    )


def _sigma_of_z(density, alpha, z, edge):
    S = real_branch(density, alpha, z, edge)
    return float(_sigma(density, alpha, S)[0][0])


def sigma_derivative(
    density: JointLabelDensity,
    alpha: float,
    z: float,
    edge: LeftEdge,
    method: str = "numeric",
) -> float:
    """d Sigma / dz on the real branch below the bulk.

    ``numeric``: central differences with h = 1e-4 (lambda_- - z) and one
    Richardson step. ``analytic``: Sigma_S(S) / z'(S).
    """
    if method == "analytic":
        S = real_branch(density, alpha, z, edge)
        _, sigma_S = _sigma(density, alpha, S)
        dz = -float(_edge_function(density, alpha, S)[0])
        return float(sigma_S[0]) / dz
    if method != "numeric":
        raise InvalidArgumentError(f"Unknown derivative method {method}")
    h = 1e-4 * (edge.lambda_minus - z)

    def central(step):
        return (
            _sigma_of_z(density, alpha, z + step, edge)
            - _sigma_of_z(density, alpha, z - step, edge)
        ) / (2.0 * step)

    return (4.0 * central(0.5 * h) - central(h)) / 3.0


def outlier(
    density: JointLabelDensity,
    alpha: float,
    derivative: str = "numeric",
) -> OutlierReport:
    """Isolated eigenvalue below the bulk solving z = Sigma(z)."""
    edge = left_edge(density, alpha)
    scan = _real_scan(edge.S_minus)
    values = _outlier_function(density, alpha, scan)
    crossings = np.flatnonzero((values[:-1] < 0) & (values[1:] >= 0))
    margin = _margin(density, alpha, edge)
    if len(crossings) == 0:
        if margin > 0:
            raise SolverError(
                f"Outlier root predicted but not bracketed at alpha={alpha}"
            )
        return OutlierReport(exists=False,
                             left_edge_lambda=edge.lambda_minus)

    i = crossings[0]
    S_star = float(brentq(
        lambda s: _outlier_function(density, alpha, s)[0],
        scan[i],
        scan[i + 1],
        xtol=1e-15,
        rtol=1e-14,
        maxiter=200,
    ))
    lambda_star = float(_z_of_S(density, alpha, S_star)[0])
    sigma_star = float(_sigma(density, alpha, S_star)[0][0])
    if lambda_star >= edge.lambda_minus:
        return OutlierReport(exists=False,
                             left_edge_lambda=edge.lambda_minus)
    slope = sigma_derivative(density, alpha, lambda_star, edge, derivative)
    overlap = float(np.clip(1.0 / (1.0 - slope), 0.0, 1.0))
    return OutlierReport(
        exists=True,
        lambda_star=lambda_star,
        overlap_sq=overlap,
        sigma_at_star=sigma_star,
        S_star=S_star,
        left_edge_lambda=edge.lambda_minus,
    )


def _margin(
    density: JointLabelDensity, alpha: float, edge: Optional[LeftEdge] = None
) -> float:
    """lambda_- - Sigma(S_-); positive exactly when an outlier exists."""
    edge = edge or left_edge(density, alpha)
    if np.isinf(edge.S_minus):
        return -np.inf
    return float(_outlier_function(density, alpha, edge.S_minus)[0])


def _check_samples(density: JointLabelDensity) -> None:
    if density.variant == "empirical" and density.size < MIN_EMPIRICAL_PAIRS:
        raise PrecisionError(
            f"BBP estimation needs >= {MIN_EMPIRICAL_PAIRS} label pairs, "
            f"got {density.size}",
            estimate=float(density.size),
        )


def bbp_solve(
    density: JointLabelDensity,
    bracket: Tuple[float, float] = ALPHA_BRACKET,
    xtol: float = 1e-6,
) -> BBPSolution:
    """Smallest alpha with an outlier, where lambda_-(alpha) = lambda*."""
    _check_samples(density)
    lo, hi = bracket
    if _margin(density, lo) > 0:
        raise StructuralError(
            f"An outlier already exists at the lower end alpha={lo}"
        )
    for _ in range(4):
        if _margin(density, hi) > 0:
            break
        hi *= 2.0
    else:
        raise StructuralError(
            f"No BBP transition found for alpha in [{lo}, {hi / 2}]"
        )
    alpha, result = brentq(
        lambda a: _margin(density, a),
        lo,
        hi,
        xtol=xtol,
        rtol=1e-12,
        maxiter=200,
        full_output=True,
    )
    edge = left_edge(density, alpha)
    margin = _margin(density, alpha, edge)
    logger.info("alpha_BBP = %.6f (%s, %d iterations)", alpha,
                density.variant, result.iterations)
    return BBPSolution(
        alpha=float(alpha),
        margin=margin,
        iterations=result.iterations,
        left_edge=edge,
        bracket=(lo, hi),
        settings=dict(density.settings, variant=density.variant),
    )


def bbp_alpha(density: JointLabelDensity) -> float:
    return bbp_solve(density).alpha


def bbp_alpha_curve(
    a_values: Iterable[float], n_nodes: int = 200
) -> List[Tuple[float, float]]:
    """Initialization threshold as a function of the loss parameter."""
    return [
        (a, bbp_alpha(JointLabelDensity.analytic_init(LossSpec(a), n_nodes)))
        for a in a_values
    ]


def self_consistent_bbp(
    density_factory: Callable[[float], JointLabelDensity],
    alpha0: float,
    tol: float = 1e-3,
    max_iter: int = 20,
) -> Tuple[float, List[float]]:
    """Fixed point alpha = alpha_BBP(p_alpha) for alpha-dependent densities."""
    history = [alpha0]
    alpha = alpha0
    for _ in range(max_iter):
        alpha_next = bbp_alpha(density_factory(alpha))
        history.append(alpha_next)
        if abs(alpha_next - alpha) <= tol:
            return alpha_next, history
        alpha = alpha_next
    raise ConvergenceError(
        "Self-consistent threshold did not converge",
        residual=abs(history[-1] - history[-2]),
        iterations=max_iter,
    )


def overlap_curve(
    density: JointLabelDensity, alpha_grid
) -> List[Tuple[float, float]]:
    """Predicted (v_1 . w*)^2 / N along alpha, zero without an outlier."""
    alphas = [float(a) for a in alpha_grid]
    if alphas != sorted(alphas):
        raise InvalidArgumentError("alpha_grid must be sorted")
    return [(a, outlier(density, a).overlap_sq) for a in alphas]


def dynamical_bbp(
    trajectory_sampler: Callable[[float], JointLabelDensity],
    alpha: float,
    time_grid,
) -> List[Tuple[float, float]]:
    """alpha_BBP(t) from densities sampled along the descent at ``alpha``."""
    rows = []
    for t in time_grid:
        density = trajectory_sampler(t)
        _check_samples(density)
        rows.append((float(t), bbp_alpha(density)))
        logger.info("alpha=%.3f t=%.4g: alpha_BBP=%.4f", alpha, t,
                    rows[-1][1])
    return rows


def bbp_time(rows: List[Tuple[float, float]], alpha: float) -> float:
    """First time where alpha_BBP(t) reaches alpha, linearly interpolated.

    Returns nan when the curve never crosses alpha.
    """
    times = np.array([t for t, _ in rows])
    values = np.array([v for _, v in rows]) - alpha
    if len(values) and values[0] >= 0:
        return float(times[0])
    for i in range(len(values) - 1):
        if values[i] < 0 <= values[i + 1]:
            frac = -values[i] / (values[i + 1] - values[i])
            return float(times[i] + frac * (times[i + 1] - times[i]))
    return float("nan")
