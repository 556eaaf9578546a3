"""Report bundles: CSV tables, SVG plots and their manifests."""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from scipy import stats  # noqa: E402

from app.harness.artifacts import (  # noqa: E402
    build_manifest,
    find_manifest,
    instance_hash,
    trajectory_frame,
    write_json_atomic,
    write_table,
)
from app.harness.config import SweepSpec, config_hash  # noqa: E402
from app.harness.generic_sweep import RECOVERY_FILE, tabulate  # noqa: E402
from app.harness.harness_utils import (  # noqa: E402
    RecoveryTable,
    crossing_alpha,
    is_monotone_within_ci,
)
from app.landscape.dynamics import (  # noqa: E402
    DEFAULT_ETA,
    TrajectoryConfig,
    init_constrained,
    init_random,
    run_trajectory,
)
from app.landscape.errors import (  # noqa: E402
    InvalidArgumentError,
    ResourceLimitError,
)
from app.landscape.model import LossSpec, generate_instance  # noqa: E402
from app.landscape.rmt import (  # noqa: E402
    BulkSolution,
    JointLabelDensity,
    OutlierReport,
    bulk_density,
    outlier,
    overlap_curve,
)
from app.landscape.spectrum import (  # noqa: E402
    DIAGONALIZATION_LIMIT,
    Histogram,
    SpectrumReport,
    empirical_density,
    full_spectrum,
    ks_distance,
)

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "hessian-landscape"
SVG_METADATA = {"Date": None}
GRID_POINTS = 400


def _save_figure(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.info("Wrote %s", path)
    return path


@dataclass
class StateSpectrum:
    """Empirical spectrum of one state next to its RMT prediction.

    The prediction uses the empirical label pairs of the same state, so the
    comparison isolates the large-N approximation of the bulk.
    """

    step: int
    time: float
    magnetization: float
    report: SpectrumReport
    histogram: Histogram
    bulk: BulkSolution
    predicted_outlier: OutlierReport
    ks: float

    def summary(self) -> dict:
        shift = self.report.mu_shift
        return dict(
            self.report.summary(),
            step=self.step,
            time=self.time,
            m=self.magnetization,
            ks=self.ks,
            predicted_left_edge=self.bulk.left_edge_lambda - shift,
            predicted_outlier=(
                self.predicted_outlier.lambda_star - shift
                if self.predicted_outlier.exists else None
            ),
            predicted_overlap_sq=self.predicted_outlier.overlap_sq,
        )


def state_spectrum(
    spec: LossSpec, inst, w: np.ndarray, step: int = 0,
    eta: float = DEFAULT_ETA, bins: int = 50,
) -> StateSpectrum:
    if inst.N > DIAGONALIZATION_LIMIT:
        raise ResourceLimitError(
            f"Spectral reports need N <= {DIAGONALIZATION_LIMIT}"
        )
    report = full_spectrum(spec, inst, w)
    density = JointLabelDensity.empirical(spec, inst.label_pairs(w))
    # The RMT bulk lives in unshifted coordinates.
    unshifted = report.eigenvalues + report.mu_shift
    width = unshifted[-1] - unshifted[0]
    grid = np.linspace(unshifted[0] - 0.1 * width,
                       unshifted[-1] + 0.1 * width, GRID_POINTS)
    bulk = bulk_density(density, inst.alpha, grid)
    return StateSpectrum(
        step=step,
        time=eta * step,
        magnetization=float(np.dot(w, inst.signal)) / inst.N,
        report=report,
        histogram=empirical_density(report.eigenvalues, bins),
        bulk=bulk,
        predicted_outlier=outlier(density, inst.alpha),
        ks=ks_distance(unshifted, grid, bulk.rho),
    )


def write_state_tables(state: StateSpectrum, output_dir: Path) -> None:
    tag = f"{state.step:08d}"
    shift = state.report.mu_shift
    write_table(output_dir / f"spectrum_{tag}.csv",
                pd.DataFrame({"lambda": state.report.eigenvalues}))
    write_table(output_dir / f"histogram_{tag}.csv", pd.DataFrame({
        "bin_center": state.histogram.centers,
        "density": state.histogram.density,
    }))
    write_table(output_dir / f"density_{tag}.csv", pd.DataFrame({
        "lambda": state.bulk.grid - shift,
        "rho": state.bulk.rho,
    }))


def _plot_states(states: List[StateSpectrum], record, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    colors = plt.cm.viridis(np.linspace(0, 0.9, max(len(states), 1)))
    for state, color in zip(states, colors):
        hist = state.histogram
        ax.stairs(hist.density, hist.edges, color=color, alpha=0.5,
                  fill=True, label=f"t = {state.time:.3g}")
        ax.plot(state.bulk.grid - state.report.mu_shift, state.bulk.rho,
                color=color, lw=1.2)
        ax.axvline(state.report.lambda_min, color=color, ls="--", lw=0.8)
    ax.set_xlabel(r"$\lambda$")
    ax.set_ylabel(r"$\rho(\lambda)$")
    ax.legend(fontsize=8)
    if record is not None and record.times:
        inset = ax.inset_axes([0.62, 0.5, 0.33, 0.35])
        inset.semilogy(record.descent_time,
                       np.maximum(record.loss, 1e-16), color="k", lw=0.8)
        twin = inset.twinx()
        twin.plot(record.descent_time, np.abs(record.magnetization),
                  color="tab:red", lw=0.8)
        inset.set_xlabel(r"$\eta t$", fontsize=7)
        inset.tick_params(labelsize=6)
        twin.tick_params(labelsize=6)
    return _save_figure(fig, path)


@dataclass
class SpectralEvolutionReport:
    output_dir: Path
    states: List[StateSpectrum]
    recovered: bool
    final_magnetization: float
    manifest: dict = field(default_factory=dict)


def spectral_evolution_report(
    loss_a: float,
    alpha: float,
    N: int,
    seed: int,
    snapshot_times: Sequence[int],
    output_dir: str,
    eta: float = DEFAULT_ETA,
    steps: Optional[int] = None,
    bins: int = 50,
) -> SpectralEvolutionReport:
    """Runs one random-init trajectory and reports spectra at snapshots."""
    if N > DIAGONALIZATION_LIMIT:
        raise ResourceLimitError(
            f"Spectral reports need N <= {DIAGONALIZATION_LIMIT}"
        )
    started = time.time()
    output_dir = Path(output_dir)
    spec = LossSpec(loss_a)
    inst = generate_instance(N, alpha, seed)
    config = TrajectoryConfig.for_dimension(
        N,
        eta=eta,
        seed=seed,
        snapshot_times=tuple(sorted(set(snapshot_times))),
        **({"steps": steps} if steps else {}),
    )
    record = run_trajectory(spec, inst, config)
    states = [
        state_spectrum(spec, inst, w, step, eta, bins)
        for step, w in record.snapshots
    ]
    for state in states:
        write_state_tables(state, output_dir)
        logger.info("t=%.4g lambda_1=%.4g detached=%s ks=%.3f",
                    state.time, state.report.lambda_min,
                    state.report.outlier_detached, state.ks)
    write_table(output_dir / "trajectory.csv", trajectory_frame(record))
    _plot_states(states, record, output_dir / "spectral_evolution.svg")

    settings = {
        "loss_a": loss_a,
        "alpha": alpha,
        "N": N,
        "seed": seed,
        "snapshot_times": list(config.snapshot_times),
        "eta": eta,
        "steps": config.steps,
        "bins": bins,
    }
    manifest = build_manifest(
        settings,
        config_hash(settings),
        started,
        kind="spectral-evolution",
        instance_hash=instance_hash(inst),
        snapshots=[state.summary() for state in states],
        recovered=record.recovered,
        valid=record.valid,
    )
    write_json_atomic(output_dir / "manifest.json", manifest)
    return SpectralEvolutionReport(
        output_dir=output_dir,
        states=states,
        recovered=record.recovered,
        final_magnetization=record.final_magnetization,
        manifest=manifest,
    )


def state_for(
    spec: LossSpec, inst, state: str, seed: int, steps: int, eta: float
) -> np.ndarray:
    """random, signal, or the constrained descent after ``steps`` steps."""
    if state == "random":
        return init_random(inst.N, seed)
    if state == "signal":
        return np.array(inst.signal)
    if state == "constrained":
        return init_constrained(spec, inst, max(steps, 1), eta, seed)
    raise InvalidArgumentError(f"Unknown state {state!r}")


def overlap_curve_report(
    curves: Dict[str, JointLabelDensity],
    alpha_grid: Sequence[float],
    output_dir: str,
) -> pd.DataFrame:
    """Predicted overlap curves for several label densities."""
    frames = []
    for label, density in curves.items():
        rows = overlap_curve(density, alpha_grid)
        frames.append(pd.DataFrame(
            {"curve": label, "alpha": [a for a, _ in rows],
             "overlap_sq": [q for _, q in rows]}
        ))
    frame = pd.concat(frames, ignore_index=True)
    output_dir = Path(output_dir)
    write_table(output_dir / "overlap.csv", frame)
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, group in frame.groupby("curve", sort=False):
        ax.plot(group["alpha"], group["overlap_sq"], label=label)
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel(r"$(v_1 \cdot w^\star)^2 / N$")
    ax.legend(fontsize=8)
    _save_figure(fig, output_dir / "overlap.svg")
    return frame


def phase_diagram_report(diagram, output_dir: str) -> pd.DataFrame:
    frame = pd.DataFrame(diagram.rows, columns=["t", "alpha_bbp"])
    output_dir = Path(output_dir)
    write_table(output_dir / "phase_diagram.csv", frame)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(frame["t"], frame["alpha_bbp"], marker="o")
    ax.axhline(diagram.alpha, color="grey", ls=":")
    ax.set_xlabel(r"$\eta t$")
    ax.set_ylabel(r"$\alpha_{BBP}(t)$")
    _save_figure(fig, output_dir / "phase_diagram.svg")
    return frame


@dataclass(frozen=True)
class LogScalingFit:
    level: float
    slope: float
    intercept: float
    slope_ci: Tuple[float, float]
    r_squared: float
    points: int
    note: Optional[str] = None

    @property
    def slope_ci_contains_zero(self) -> bool:
        low, high = self.slope_ci
        return bool(low <= 0.0 <= high)


def log_scaling_study(
    table: RecoveryTable,
    rate_levels: Sequence[float],
    N_list: Optional[Sequence[int]] = None,
) -> Tuple[pd.DataFrame, List[LogScalingFit]]:
    """alpha at every rate level per N, and its linear fit against log N.

    Levels a curve never reaches are skipped for that N; a level with
    fewer than two usable N gets a fit with a note instead of numbers.
    """
    dimensions = list(N_list or table.dimensions)
    missing = set(dimensions) - set(table.dimensions)
    if missing:
        raise InvalidArgumentError(f"No recovery rows for N={sorted(missing)}")
    rows, fits = [], []
    for level in rate_levels:
        if not 0.0 < level < 1.0:
            raise InvalidArgumentError("rate levels must lie in (0, 1)")
        points = []
        for N in dimensions:
            curve = table.curve(N)
            value = crossing_alpha(
                [r.alpha for r in curve],
                [r.rate for r in curve],
                level,
                weights=[max(r.trials, 1) for r in curve],
            )
            if np.isnan(value):
                logger.warning("Level %.2f not reached for N=%d", level, N)
                continue
            points.append((N, value))
            rows.append({"level": level, "N": N, "alpha_at_level": value})
        fits.append(_fit_log_scaling(level, points))
    frame = pd.DataFrame(rows, columns=["level", "N", "alpha_at_level"])
    return frame, fits


def _fit_log_scaling(level: float, points) -> LogScalingFit:
    nan = float("nan")
    if len(points) < 2:
        return LogScalingFit(level, nan, nan, (nan, nan), nan, len(points),
                             note="fewer than two N reach this level")
    x = np.log([n for n, _ in points])
    y = np.array([a for _, a in points])
    fit = stats.linregress(x, y)
    if len(points) > 2:
        half = stats.t.ppf(0.975, len(points) - 2) * fit.stderr
        ci = (fit.slope - half, fit.slope + half)
    else:
        ci = (-np.inf, np.inf)
    return LogScalingFit(
        level=level,
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_ci=(float(ci[0]), float(ci[1])),
        r_squared=float(fit.rvalue ** 2),
        points=len(points),
    )


def _plot_recovery(table: RecoveryTable, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for N in table.dimensions:
        curve = table.curve(N)
        alphas = [r.alpha for r in curve]
        rates = np.array([r.rate for r in curve])
        err = np.array([
            [r.rate - r.ci_low for r in curve],
            [r.ci_high - r.rate for r in curve],
        ])
        ax.errorbar(alphas, rates, yerr=np.clip(err, 0, None), marker="o",
                    capsize=2, label=f"N = {N}")
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel("strong recovery rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=8)
    return _save_figure(fig, path)


def build_sweep_report(run_dir: str, rate_levels=(0.25, 0.5, 0.75)) -> dict:
    """Tables and plots of a sweep directory; reruns give the same files."""
    run_dir = Path(run_dir)
    manifest = find_manifest(run_dir)
    spec = SweepSpec.model_validate(manifest["config"])
    table = tabulate(spec, manifest.get("cells", {}).values())
    write_table(run_dir / RECOVERY_FILE, table.to_frame())
    _plot_recovery(table, run_dir / "recovery.svg")
    frame, fits = log_scaling_study(table, rate_levels)
    write_table(run_dir / "log_scaling.csv", frame)
    crossings = {
        N: crossing_alpha([r.alpha for r in table.curve(N)],
                          [r.rate for r in table.curve(N)])
        for N in table.dimensions
    }
    summary = {
        "init": spec.init,
        "loss_a": spec.loss_a,
        "crossing_50": {str(N): v for N, v in crossings.items()},
        "monotone": {
            str(N): is_monotone_within_ci(table.curve(N))
            for N in table.dimensions
        },
        "incomplete_cells": table.incomplete_cells,
        "log_scaling": [fit.__dict__ for fit in fits],
    }
    write_json_atomic(run_dir / "report.json", summary)
    return summary
