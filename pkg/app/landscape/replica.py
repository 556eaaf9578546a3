"""One-step replica symmetry breaking description of threshold states.

Notation: r0 is the true label, eta ~ N(0, q0) the frozen part of the
cavity field and eta_P ~ N(0, 1 - q0) its fluctuating part. Psi0 is the
zero-temperature effective potential

    Psi0(r0, h, chi) = min_r l(r0, r) + (h - r)^2 / (2 chi)

with h = eta_P + eta.

Stationarity in r is the cubic

    (4 / c) r^3 + (1/chi - 4 r0^2 / c) r - h / chi = 0,  c = a + r0^2,

which ``psi0_grid`` solves in closed form for whole grids at once.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar, root
from scipy.special import expit, logit, logsumexp

from app.landscape.errors import (
    InvalidArgumentError,
    LandscapeError,
    PrecisionError,
)
from app.landscape.model import LossSpec, loss_pair
from app.landscape.quadrature import graded_rule, hermite_rule
from app.landscape.rmt import JointLabelDensity, left_edge

logger = logging.getLogger(__name__)

Q0_FLOOR = 1e-8
Q0_CEILING = 0.999
# Smallest q0 a solve starts from; the logistic map is flat below it.
Q0_START = 1e-2


@dataclass(frozen=True)
class SaddleParams:
    chi: float
    z: float
    q0: float
    m_overlap: float = 0.0

    def __post_init__(self) -> None:
        if not self.chi > 0 or not self.z > 0:
            raise InvalidArgumentError("chi and z must be positive")
        if not 0 <= self.q0 < 1:
            raise InvalidArgumentError("q0 must lie in [0, 1)")
        if self.m_overlap != 0:
            raise InvalidArgumentError("Threshold states have m = 0")

    def as_dict(self) -> dict:
        return {"chi": self.chi, "z": self.z, "q0": self.q0,
                "m_overlap": self.m_overlap}


@dataclass(frozen=True)
class ReplicaConfig:
    n_r0: int = 120
    n_eta: int = 24
    n_eta_p: int = 200
    n_y: int = 120
    n_yhat: int = 1201
    yhat_max: float = 8.0
    rtol: float = 1e-5
    label_map: str = "field"
    tol: float = 1e-4
    max_evaluations: int = 400
    homotopy_start: float = 8.0
    homotopy_steps: int = 5

    def doubled(self) -> "ReplicaConfig":
        return replace(
            self,
            n_r0=2 * self.n_r0,
            n_eta=2 * self.n_eta,
            n_eta_p=2 * self.n_eta_p,
        )


@dataclass(frozen=True)
class ThresholdStateSolution:
    alpha: float
    params: SaddleParams
    converged: bool
    residuals: Tuple[float, float, float]
    evaluations: int
    message: str = ""
    path: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "params": self.params.as_dict(),
            "converged": self.converged,
            "residuals": {
                "chi": self.residuals[0],
                "q0": self.residuals[1],
                "marginality": self.residuals[2],
            },
            "evaluations": self.evaluations,
            "message": self.message,
            "path": self.path,
        }


def _objective(spec, r0, r, h, chi):
    return loss_pair(spec, r0, r) + (h - r) ** 2 / (2.0 * chi)


def psi0(
    spec: LossSpec, r0: float, etaP: float, eta: float, chi: float
) -> float:
    """Global minimum of l(r0, r) + (etaP + eta - r)^2 / (2 chi) over r.

    Coarse scan at resolution 1e-2, then a bounded Brent refinement around
    every local minimum of the scan.
    """
    if not chi > 0:
        raise InvalidArgumentError("chi must be positive")
    h = etaP + eta
    R = 3.0 * (abs(h) + abs(r0)) + 5.0
    grid = np.arange(-R, R + 1e-2, 1e-2)
    values = _objective(spec, r0, grid, h, chi)
    interior = np.flatnonzero(
        (values[1:-1] <= values[:-2]) & (values[1:-1] <= values[2:])
    ) + 1
    candidates = set(interior.tolist()) | {int(np.argmin(values))}
    best = float(values.min())
    for i in candidates:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        result = minimize_scalar(
            lambda r: _objective(spec, r0, r, h, chi),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        best = min(best, float(result.fun))
    return best


def psi0_grid(
    spec: LossSpec, r0, h, chi: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Psi0 and its minimizer on broadcast arrays of r0 and h."""
    shape = np.broadcast(np.asarray(r0), np.asarray(h)).shape
    r0 = np.broadcast_to(np.asarray(r0, float), shape).ravel()
    h = np.broadcast_to(np.asarray(h, float), shape).ravel()
    c = spec.denominator(r0)
    p = c / (4.0 * chi) - r0**2
    q = -h * c / (4.0 * chi)

    roots = np.full((3, len(p)), np.nan)
    sp = np.sqrt(np.abs(p) / 3.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.where(p != 0, 1.5 * q / (p * sp), 0.0)

        pos = p > 0
        roots[0, pos] = -2.0 * sp[pos] * np.sinh(np.arcsinh(arg[pos]) / 3.0)

        flat = p == 0
        roots[0, flat] = np.cbrt(-q[flat])

        three = (p < 0) & (np.abs(arg) <= 1.0)
        theta = np.arccos(np.clip(arg[three], -1.0, 1.0)) / 3.0
        for k in range(3):
            roots[k, three] = 2.0 * sp[three] * np.cos(
                theta - 2.0 * np.pi * k / 3.0
            )

        one = (p < 0) & (np.abs(arg) > 1.0)
        roots[0, one] = (
            -2.0
            * np.sign(q[one])
            * sp[one]
            * np.cosh(np.arccosh(np.abs(arg[one])) / 3.0)
        )

    values = _objective(spec, r0[None], np.nan_to_num(roots), h[None], chi)
    values = np.where(np.isnan(roots), np.inf, values)
    best = np.argmin(values, axis=0)
    minimum = np.take_along_axis(values, best[None], axis=0)[0]
    minimizer = np.take_along_axis(roots, best[None], axis=0)[0]
    return minimum.reshape(shape), minimizer.reshape(shape)


def _eta_rule(q0: float, n_eta: int, collapse: bool = True):
    """Nodes of eta ~ N(0, q0) and of the standardized variable.

    With ``collapse`` a vanishing q0 gives the single node eta = 0;
    otherwise q0 is floored so the frozen-field score stays defined.
    """
    if collapse and q0 < Q0_FLOOR:
        return np.zeros(1), np.zeros(1), np.ones(1)
    rule = hermite_rule(n_eta)
    return np.sqrt(max(q0, Q0_FLOOR)) * rule.z, rule.z, rule.w


@dataclass(frozen=True)
class _Averages:
    log_partition: float
    field_slope_sq: float
    fluctuation_sq: float
    frozen_log_partition: float


def _averages(
    spec: LossSpec, params: SaddleParams, config: ReplicaConfig
) -> _Averages:
    """Outer expectations over (r0, eta) of the eta_P-tilted quantities."""
    chi, z, q0 = params.chi, params.z, params.q0
    v = 1.0 - q0
    r0_rule = graded_rule(config.n_r0, np.sqrt(spec.a) if spec.a > 0
                          else 1e-3)
    eta, xi, w_eta = _eta_rule(q0, config.n_eta, collapse=False)
    fluct_rule = graded_rule(config.n_eta_p, 0.5)
    eta_p = np.sqrt(v) * fluct_rule.z

    h = eta[None, :, None] + eta_p[None, None, :]
    r0 = r0_rule.z[:, None, None]
    psi, r_star = psi0_grid(spec, r0, h, chi)

    log_terms = -z * psi + np.log(fluct_rule.w)[None, None, :]
    log_partition = logsumexp(log_terms, axis=2)
    tilted = np.exp(log_terms - log_partition[..., None])
    slope_sq = np.sum(tilted * ((h - r_star) / chi) ** 2, axis=2)
    fluct_sq = np.sum(tilted * eta_p[None, None, :] ** 2, axis=2)

    outer = np.outer(r0_rule.w, w_eta)
    frozen = (xi**2 - 1.0)[None, :] / (2.0 * max(q0, Q0_FLOOR))
    return _Averages(
        log_partition=float(np.sum(outer * log_partition)),
        field_slope_sq=float(np.sum(outer * slope_sq)),
        fluctuation_sq=float(np.sum(outer * fluct_sq)),
        frozen_log_partition=float(np.sum(outer * frozen * log_partition)),
    )


def _free_energy(spec, alpha, params, config) -> float:
    chi, z, q0 = params.chi, params.z, params.q0
    dn = chi + z * (1.0 - q0)
    avg = _averages(spec, params, config)
    return (
        -np.log(dn / chi) / (2.0 * z)
        - q0 / (2.0 * dn)
        - alpha * avg.log_partition / z
    )


def _residuals(spec, alpha, params, config) -> Tuple[float, float]:
    chi, z, q0 = params.chi, params.z, params.q0
    v = 1.0 - q0
    dn = chi + z * v
    avg = _averages(spec, params, config)
    chi_residual = (
        (1.0 / chi - 1.0 / dn) / z
        + q0 / dn**2
        - alpha * avg.field_slope_sq
    )
    q0_residual = (
        -q0 / dn**2
        - 2.0 * alpha * avg.frozen_log_partition / z**2
        - alpha / (z**2 * v)
        + alpha * avg.fluctuation_sq / (z**2 * v**2)
    )
    return float(chi_residual), float(q0_residual)


def _checked(evaluate, config: ReplicaConfig, what: str):
    coarse = np.atleast_1d(evaluate(config))
    fine = np.atleast_1d(evaluate(config.doubled()))
    scale = np.maximum(np.abs(fine), 1e-8)
    change = float(np.max(np.abs(fine - coarse) / scale))
    if change > config.rtol:
        raise PrecisionError(
            f"{what} not converged under node doubling "
            f"(relative change {change:.2e} > {config.rtol:.1e})",
            estimate=float(fine[0]),
        )
    return fine


def free_energy_1rsb(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    config: ReplicaConfig = ReplicaConfig(),
    check: bool = True,
) -> float:
    """1RSB free energy phi(chi, z, q0) at zero temperature."""
    if check:
        return float(_checked(
            lambda c: _free_energy(spec, alpha, params, c), config,
            "Free energy",
        )[0])
    return float(_free_energy(spec, alpha, params, config))


def saddle_residuals(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    config: ReplicaConfig = ReplicaConfig(),
    check: bool = False,
) -> Tuple[float, float]:
    """Residuals of the chi and q0 saddle equations.

    They equal 2 d(phi)/d(chi) and (2/z) d(phi)/d(q0), so both vanish at a
    stationary point of the free energy.
    """
    if check:
        values = _checked(
            lambda c: np.array(_residuals(spec, alpha, params, c)),
            config,
            "Saddle residuals",
        )
        return float(values[0]), float(values[1])
    return _residuals(spec, alpha, params, config)


@dataclass(frozen=True, eq=False)
class ReplicaLabelDensity(JointLabelDensity):
    """Threshold-state label density with its pointwise formula."""

    params: Optional[SaddleParams] = None

    def density_at(self, y: float, yhat: float, n_eta: int = 24) -> float:
        spec, params = self.loss, self.params
        v = 1.0 - params.q0
        eta, _, w_eta = _eta_rule(params.q0, n_eta)
        total = 0.0
        for e, w in zip(eta, w_eta):

            def integrand(t):
                psi, _ = psi0_grid(spec, y, t + e, params.chi)
                return float(np.exp(-t * t / (2.0 * v) - params.z * psi))

            norm, _ = integrate.quad(integrand, -np.inf, np.inf,
                                     epsabs=0.0, epsrel=1e-11, limit=400)
            total += w * integrand(yhat) / norm
        return float(total * np.exp(-0.5 * y * y) / np.sqrt(2.0 * np.pi))


def joint_density_1rsb(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    config: ReplicaConfig = ReplicaConfig(),
) -> ReplicaLabelDensity:
    """p(y, yhat) on threshold states as weighted (y, yhat) nodes.

    ``label_map="field"`` evaluates the displayed formula with yhat in the
    fluctuating-field slot; ``"minimizer"`` pushes the tilted field forward
    through the minimizer of Psi0 and bins it on the yhat grid.
    """
    chi, z, q0 = params.chi, params.z, params.q0
    v = 1.0 - q0
    y_rule = graded_rule(config.n_y, np.sqrt(spec.a) if spec.a > 0
                         else 1e-3)
    eta, _, w_eta = _eta_rule(q0, config.n_eta)
    grid = np.linspace(-config.yhat_max, config.yhat_max, config.n_yhat)
    trap = np.full(grid.shape, grid[1] - grid[0])
    trap[[0, -1]] *= 0.5

    y = y_rule.z[:, None, None]
    h = grid[None, None, :] + eta[None, :, None]
    psi, r_star = psi0_grid(spec, y, h, chi)
    log_w = -grid[None, None, :] ** 2 / (2.0 * v) - z * psi
    log_w = log_w + np.log(trap)[None, None, :]
    cond = np.exp(log_w - logsumexp(log_w, axis=2, keepdims=True))
    outer = (y_rule.w[:, None] * w_eta[None, :])[..., None]

    if config.label_map == "field":
        weights = np.sum(outer * cond, axis=1)
    elif config.label_map == "minimizer":
        step = grid[1] - grid[0]
        bins = np.clip(
            np.rint((r_star + config.yhat_max) / step).astype(int),
            0,
            len(grid) - 1,
        )
        rows = np.broadcast_to(
            np.arange(len(y_rule.z))[:, None, None], bins.shape
        )
        weights = np.zeros((len(y_rule.z), len(grid)))
        np.add.at(weights, (rows, bins), outer * cond)
    else:
        raise InvalidArgumentError(f"Unknown label map {config.label_map}")

    Y, YHAT = np.meshgrid(y_rule.z, grid, indexing="ij")
    base = JointLabelDensity.from_nodes(
        spec,
        Y,
        YHAT,
        weights,
        variant="replica-1rsb",
        settings={
            "a": spec.a,
            "alpha": alpha,
            "label_map": config.label_map,
            "n_y": config.n_y,
            "n_yhat": config.n_yhat,
            **params.as_dict(),
        },
    )
    return ReplicaLabelDensity(
        variant=base.variant,
        y=base.y,
        yhat=base.yhat,
        weights=base.weights,
        curvature=base.curvature,
        loss=spec,
        settings=base.settings,
        params=params,
    )


def marginality(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    config: ReplicaConfig = ReplicaConfig(),
) -> float:
    """Left edge of the spherically shifted bulk for the 1RSB density."""
    density = joint_density_1rsb(spec, alpha, params, config)
    edge = left_edge(density, alpha)
    return edge.lambda_minus - density.spherical_shift(alpha)


def params_from_coordinates(x) -> SaddleParams:
    """Maps unconstrained solver coordinates onto (chi, z, q0).

    chi and z are log-parametrized, q0 = Q0_CEILING * expit(u), so every
    coordinate moves the parameters smoothly.
    """
    return SaddleParams(
        chi=float(np.exp(x[0])),
        z=float(np.exp(x[1])),
        q0=float(Q0_CEILING * expit(x[2])),
    )


def saddle_coordinates(chi: float, z: float, q0: float) -> np.ndarray:
    q0 = float(np.clip(q0, Q0_START, 0.99 * Q0_CEILING))
    return np.array([np.log(chi), np.log(z), logit(q0 / Q0_CEILING)])


def _solve_at(spec, alpha, x0, config):
    best = {"norm": np.inf, "x": np.asarray(x0, float), "res": None}
    count = {"n": 0}

    def system(x):
        count["n"] += 1
        params = params_from_coordinates(x)
        try:
            res = np.array([
                *_residuals(spec, alpha, params, config),
                marginality(spec, alpha, params, config),
            ])
        except LandscapeError as e:
            logger.debug("Replica system failed at %s: %s", params, e)
            return np.full(3, 1e3)
        norm = float(np.max(np.abs(res)))
        if norm < best["norm"]:
            best.update(norm=norm, x=np.array(x, float), res=res)
        logger.debug("alpha=%.3f %s residuals %s", alpha, params, res)
        return res

    result = root(system, x0, method="hybr",
                  options={"maxfev": config.max_evaluations, "xtol": 1e-10})
    return best, result, count["n"]


def solve_threshold_state(
    spec: LossSpec,
    alpha: float,
    config: ReplicaConfig = ReplicaConfig(),
    initial: Tuple[float, float, float] = (1.0, 1.0, 0.0),
) -> ThresholdStateSolution:
    """Saddle equations plus marginal stability for (chi, z, q0).

    Continues from ``config.homotopy_start`` down to ``alpha``. A failed
    solve returns the best iterate flagged as not converged.
    """
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    chi0, z0, q00 = initial
    x = saddle_coordinates(chi0, z0, q00)
    if config.homotopy_start > alpha and config.homotopy_steps > 1:
        path_alphas = np.linspace(config.homotopy_start, alpha,
                                  config.homotopy_steps)
    else:
        path_alphas = np.array([alpha])

    path, evaluations = [], 0
    best, result = None, None
    for a in path_alphas:
        best, result, n = _solve_at(spec, float(a), x, config)
        evaluations += n
        x = best["x"]
        path.append({"alpha": float(a),
                     **params_from_coordinates(x).as_dict(),
                     "max_residual": best["norm"]})
        logger.info("Replica homotopy alpha=%.3f max residual %.2e",
                    a, best["norm"])

    params = params_from_coordinates(best["x"])
    if best["res"] is None:
        residuals = (np.inf, np.inf, np.inf)
    else:
        residuals = tuple(float(r) for r in best["res"])
    converged = bool(np.max(np.abs(residuals)) <= config.tol)
    if not converged:
        logger.warning("Threshold-state solve did not converge: %s",
                       result.message)
    return ThresholdStateSolution(
        alpha=float(alpha),
        params=params,
        converged=converged,
        residuals=residuals,
        evaluations=evaluations,
        message=str(result.message),
        path=path,
    )
