"""Command-line entry point of the landscape toolkit.

Exit codes:
  0  success
  1  unexpected failure
  2  usage error (unknown flag or option value)
  3  config file not found
  4  malformed config file
  5  missing input (run directory, manifest, pool or instance file)
  6  numerical failure (any other landscape error)

Failures print one JSON line {"error", "exit_code", "message"} to stderr.
"""
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import click
import numpy as np
import pandas as pd

from app import settings
from app.harness.artifacts import (
    build_manifest,
    instance_hash,
    load_pairs,
    read_json,
    save_instance,
    save_pairs,
    trajectory_frame,
    write_json_atomic,
    write_table,
)
from app.harness.config import (
    BBPConfig,
    PhaseDiagramConfig,
    ReplicaSolveConfig,
    RmtDensityConfig,
    SimulateConfig,
    SpectrumConfig,
    SweepSpec,
    ThresholdSampleConfig,
    config_hash,
    load_config,
)
from app.harness.generic_sweep import (
    constrained_sweep,
    run_sweep,
    steps_study,
)
from app.harness.reports import (
    build_sweep_report,
    overlap_curve_report,
    phase_diagram_report,
    spectral_evolution_report,
    state_for,
    state_spectrum,
    write_state_tables,
)
from app.harness.run_configs.normalized_intensity import (
    PRESETS,
    STEPS_PER_LOG2N_STUDY,
)
from app.harness.threshold import (
    PLATEAU,
    finite_size_extrapolate,
    phase_diagram,
    pool_density,
    sample_threshold_pool,
)
from app.landscape.dynamics import run_trajectory
from app.landscape.errors import (
    ConfigError,
    ConfigNotFoundError,
    ConvergenceError,
    LandscapeError,
    MissingInputError,
)
from app.landscape.model import LossSpec, generate_instance
from app.landscape.replica import (
    SaddleParams,
    joint_density_1rsb,
    solve_threshold_state,
)
from app.landscape.rmt import (
    JointLabelDensity,
    bbp_alpha_curve,
    bbp_solve,
    bulk_density,
    left_edge,
    outlier,
    self_consistent_bbp,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG_NOT_FOUND = 3
EXIT_MALFORMED_CONFIG = 4
EXIT_MISSING_INPUT = 5
EXIT_NUMERICAL = 6

EXIT_CODES = (
    (ConfigNotFoundError, EXIT_CONFIG_NOT_FOUND),
    (ConfigError, EXIT_MALFORMED_CONFIG),
    (MissingInputError, EXIT_MISSING_INPUT),
    (LandscapeError, EXIT_NUMERICAL),
)

REPLICA_RESULT = "replica_solve"


def exit_code_for(error: Exception) -> int:
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return EXIT_UNEXPECTED


def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise click.BadParameter(f"expected comma-separated numbers: {e}")


def _times(text: Optional[str]) -> Optional[list]:
    if text is None:
        return None
    times = []
    for item in (part.strip() for part in text.split(",")):
        if item == PLATEAU:
            times.append(item)
        elif item.isdigit():
            times.append(int(item))
        elif item:
            raise click.BadParameter(f"not a step index or 'plateau': {item}")
    return times


def _given(flags: dict) -> dict:
    """Drops unset options; an absent boolean flag must not override files."""
    return {
        k: v for k, v in flags.items() if v is not None and v is not False
    }


def _emit(name: str, config, started: float, result: dict) -> dict:
    """Writes <output_dir>/<name>.json with the manifest and echoes result."""
    manifest = build_manifest(
        config.model_dump(), config_hash(config), started, kind=name,
        result=result,
    )
    path = Path(config.output_dir) / f"{name}.json"
    write_json_atomic(path, manifest)
    click.echo(json.dumps(result, default=str))
    return manifest


config_option = click.option(
    "--config", "config_path", default=None,
    help="YAML config file; command-line flags override its values.",
)
output_option = click.option("--output-dir", default=None)
loss_option = click.option("--a", "loss_a", type=float, default=None,
                           help="Loss parameter a of the intensity loss.")


@click.group(help=__doc__)
@click.option("--verbose", "-v", is_flag=True, help="Debug logging.")
@click.option("--quiet", "-q", is_flag=True,
              help="Warnings only, no progress bars.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool, quiet: bool) -> None:
    level = "DEBUG" if verbose else "WARNING" if quiet else settings.LOG_LEVEL
    logging.basicConfig(level=level)
    ctx.obj = {"progress": False if quiet else None}


@cli.command(help="Run one gradient-descent trajectory.")
@config_option
@loss_option
@click.option("--N", "N", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--init", type=click.Choice(
    ["random", "spectral", "constrained"]), default=None)
@click.option("--steps", type=int, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--save-instance", is_flag=True, default=None)
@output_option
def simulate(config_path, **flags) -> None:
    started = time.time()
    config = load_config(config_path, SimulateConfig, _given(flags))
    spec = LossSpec(config.loss_a)
    inst = generate_instance(config.N, config.alpha, config.seed)
    record = run_trajectory(spec, inst, config.trajectory_config())
    output_dir = Path(config.output_dir)
    write_table(output_dir / "trajectory.csv", trajectory_frame(record))
    if config.save_instance:
        save_instance(output_dir / "instance.npz", inst)
    _emit("simulate", config, started, {
        "recovered": record.recovered,
        "valid": record.valid,
        "error": record.error,
        "m0": record.initial_magnetization,
        "mT": record.final_magnetization,
        "steps": record.times[-1] if record.times else 0,
        "instance_hash": instance_hash(inst),
    })


@cli.command(help="Hessian spectrum of one state against its RMT bulk.")
@config_option
@loss_option
@click.option("--N", "N", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--state", type=click.Choice(
    ["random", "signal", "constrained"]), default=None)
@click.option("--steps", type=int, default=None,
              help="Constrained descent steps before the spectrum.")
@click.option("--snapshots", default=None,
              help="Comma-separated steps of a spectral-evolution report.")
@click.option("--bins", type=int, default=None)
@output_option
def spectrum(config_path, snapshots, **flags) -> None:
    started = time.time()
    flags["snapshot_times"] = _times(snapshots)
    config = load_config(config_path, SpectrumConfig, _given(flags))
    if config.snapshot_times:
        report = spectral_evolution_report(
            config.loss_a, config.alpha, config.N, config.seed,
            config.snapshot_times, config.output_dir, eta=config.eta,
            bins=config.bins,
        )
        click.echo(json.dumps({
            "recovered": report.recovered,
            "mT": report.final_magnetization,
            "snapshots": report.manifest["snapshots"],
        }, default=str))
        return

    spec = LossSpec(config.loss_a)
    inst = generate_instance(config.N, config.alpha, config.seed)
    w = state_for(spec, inst, config.state, config.seed, config.steps,
                  config.eta)
    state = state_spectrum(spec, inst, w, config.steps, config.eta,
                           config.bins)
    write_state_tables(state, Path(config.output_dir))
    _emit("spectrum", config, started, state.summary())


def _label_density(kind: str, loss_a: float, constant: float,
                   quadrature) -> JointLabelDensity:
    if kind == "constant":
        return JointLabelDensity.constant_weight(constant)
    return JointLabelDensity.analytic_init(
        LossSpec(loss_a), quadrature.n_nodes, quadrature.rule
    )


@cli.command("rmt-density", help="Bulk density, left edge and outlier.")
@config_option
@loss_option
@click.option("--alpha", type=float, default=None)
@click.option("--density", type=click.Choice(
    ["analytic-init", "constant"]), default=None)
@click.option("--constant", type=float, default=None)
@click.option("--lambda-min", type=float, default=None)
@click.option("--lambda-max", type=float, default=None)
@click.option("--points", type=int, default=None)
@output_option
def rmt_density(config_path, **flags) -> None:
    started = time.time()
    config = load_config(config_path, RmtDensityConfig, _given(flags))
    density = _label_density(config.density, config.loss_a,
                             config.constant, config.quadrature)
    alpha = config.alpha
    edge = left_edge(density, alpha)
    scale = (1.0 + np.sqrt(alpha)) ** 2 * float(
        np.dot(density.weights, np.abs(density.curvature))
    )
    lo = config.lambda_min
    if lo is None:
        lo = min(edge.lambda_minus, 0.0) - 0.05 * scale
    hi = config.lambda_max if config.lambda_max is not None else scale
    bulk = bulk_density(density, alpha, np.linspace(lo, hi, config.points))
    write_table(Path(config.output_dir) / "density.csv",
                pd.DataFrame({"lambda": bulk.grid, "rho": bulk.rho}))
    spike = outlier(density, alpha)
    _emit("rmt_density", config, started, {
        "alpha": alpha,
        "lambda_minus": edge.lambda_minus,
        "S_minus": edge.S_minus,
        "mass": bulk.mass(),
        "outlier": spike.exists,
        "lambda_star": spike.lambda_star,
        "overlap_sq": spike.overlap_sq,
    })


def _replica_density(config: BBPConfig) -> tuple:
    if config.replica_run is None:
        raise MissingInputError("--density replica needs --replica-run")
    stored = read_json(Path(config.replica_run) / f"{REPLICA_RESULT}.json")
    result = stored["result"]
    spec = LossSpec(result["loss_a"])
    replica_config = config.replica.replica_config()
    params = SaddleParams(**result["params"])
    density = joint_density_1rsb(spec, result["alpha"], params,
                                 replica_config)
    return spec, result["alpha"], params, replica_config, density


@cli.command(help="BBP threshold alpha_BBP of a label density.")
@config_option
@loss_option
@click.option("--density", type=click.Choice(
    ["analytic-init", "constant", "replica", "pool"]), default=None)
@click.option("--a-grid", default=None,
              help="Comma-separated loss parameters for alpha_BBP(a).")
@click.option("--constant", type=float, default=None)
@click.option("--pool", default=None, help="Pool .npz from threshold-sample.")
@click.option("--replica-run", default=None,
              help="Directory of a replica-solve run.")
@click.option("--self-consistent", is_flag=True, default=None)
@click.option("--alpha-grid", default=None,
              help="Comma-separated alphas for the overlap curve.")
@output_option
def bbp(config_path, a_grid, alpha_grid, **flags) -> None:
    started = time.time()
    flags["a_grid"] = _floats(a_grid)
    flags["alpha_grid"] = _floats(alpha_grid)
    config = load_config(config_path, BBPConfig, _given(flags))
    output_dir = Path(config.output_dir)

    if config.a_grid:
        curve = bbp_alpha_curve(config.a_grid, config.quadrature.n_nodes)
        write_table(output_dir / "bbp_curve.csv",
                    pd.DataFrame(curve, columns=["a", "alpha_bbp"]))
        _emit("bbp", config, started, {
            "curve": [{"a": a, "alpha_bbp": v} for a, v in curve]
        })
        return

    if config.density == "pool":
        if config.pool is None:
            raise MissingInputError("--density pool needs --pool")
        pairs, meta = load_pairs(config.pool)
        density = JointLabelDensity.empirical(
            LossSpec(meta.get("loss_a", config.loss_a)), pairs
        )
    elif config.density == "replica":
        spec, alpha0, params, replica_config, density = _replica_density(
            config
        )
    else:
        density = _label_density(config.density, config.loss_a,
                                 config.constant, config.quadrature)

    result = bbp_solve(density).summary()
    if config.density == "replica" and config.self_consistent:
        state = {"params": params}

        def factory(alpha: float) -> JointLabelDensity:
            p = state["params"]
            solution = solve_threshold_state(
                spec, alpha, replica_config, initial=(p.chi, p.z, p.q0)
            )
            state["params"] = solution.params
            return joint_density_1rsb(spec, alpha, solution.params,
                                      replica_config)

        alpha_sc, history = self_consistent_bbp(factory, result["alpha_bbp"])
        result.update(alpha_bbp=alpha_sc, self_consistent_history=history)
    if config.alpha_grid:
        overlap_curve_report({config.density: density}, config.alpha_grid,
                             config.output_dir)
    _emit("bbp", config, started, result)


@cli.command("replica-solve", help="1RSB threshold-state saddle point.")
@config_option
@loss_option
@click.option("--alpha", type=float, default=None,
              help="Defaults to the homotopy start.")
@output_option
def replica_solve(config_path, **flags) -> None:
    started = time.time()
    config = load_config(config_path, ReplicaSolveConfig, _given(flags))
    spec = LossSpec(config.loss_a)
    replica_config = config.replica.replica_config()
    alpha = config.alpha or replica_config.homotopy_start
    solution = solve_threshold_state(
        spec, alpha, replica_config, initial=(config.chi0, config.z0,
                                              config.q00)
    )
    density = joint_density_1rsb(spec, alpha, solution.params,
                                 replica_config)
    write_table(Path(config.output_dir) / "replica_density.csv",
                pd.DataFrame({"y": density.y, "yhat": density.yhat,
                              "p": density.weights}))
    _emit(REPLICA_RESULT, config, started,
          dict(solution.summary(), loss_a=config.loss_a))
    if not solution.converged:
        raise ConvergenceError(
            f"Saddle point not converged at alpha={alpha}: "
            f"{solution.message}",
            residual=float(np.max(np.abs(solution.residuals))),
            iterations=solution.evaluations,
        )


@cli.command(help="Seeded recovery-rate sweep over (N, alpha).")
@config_option
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@loss_option
@click.option("--N", "N_list", type=int, multiple=True)
@click.option("--alpha-grid", default=None)
@click.option("--seeds", "seeds_per_cell", type=int, default=None)
@click.option("--init", type=click.Choice(
    ["random", "spectral", "constrained"]), default=None)
@click.option("--steps-per-log2n", type=int, default=None)
@click.option("--steps-study", "study", is_flag=True,
              help="Repeat the sweep for several steps rules.")
@click.option("--workers", type=int, default=None)
@output_option
@click.pass_context
def sweep(ctx, config_path, preset, alpha_grid, study, workers,
          **flags) -> None:
    if preset and config_path:
        raise click.UsageError("--preset and --config are exclusive")
    flags["alpha_grid"] = _floats(alpha_grid)
    flags["N_list"] = list(flags["N_list"]) or None
    if preset:
        flags = {**PRESETS[preset].model_dump(),
                 **_given(flags)}
    spec = load_config(config_path, SweepSpec, flags)
    options = {"workers": workers, "progress": ctx.obj["progress"]}
    if study:
        tables = steps_study(spec, STEPS_PER_LOG2N_STUDY, **options)
        for P in tables:
            build_sweep_report(str(Path(spec.output_dir) / f"steps_{P}"))
        click.echo(json.dumps({"steps_per_log2n": list(tables)}))
        return
    runner = constrained_sweep if spec.init == "constrained" else run_sweep
    table = runner(spec, **options)
    summary = build_sweep_report(spec.output_dir)
    if table.incomplete_cells:
        logger.warning("%d incomplete cells", len(table.incomplete_cells))
    click.echo(json.dumps(summary, default=str))


@cli.command("threshold-sample",
             help="Pools of (y, yhat) pairs along constrained descents.")
@config_option
@loss_option
@click.option("--alpha", type=float, default=None)
@click.option("--N", "N_list", type=int, multiple=True)
@click.option("--times", default=None,
              help="Comma-separated steps and/or 'plateau'.")
@click.option("--seeds", type=int, default=None)
@click.option("--t-c", type=int, default=None)
@click.option("--extrapolate", is_flag=True, default=None,
              help="alpha_BBP per N of the last time, extrapolated in 1/N.")
@click.option("--workers", type=int, default=None)
@output_option
@click.pass_context
def threshold_sample(ctx, config_path, times, workers, **flags) -> None:
    started = time.time()
    flags["times"] = _times(times)
    flags["N_list"] = list(flags["N_list"]) or None
    config = load_config(config_path, ThresholdSampleConfig, _given(flags))
    output_dir = Path(config.output_dir)
    result = {"pools": [], "bbp": []}
    for N in config.N_list:
        pools = sample_threshold_pool(
            config.loss_a, config.alpha, N, config.times, config.seeds,
            eta=config.eta, t_c=config.t_c, base_seed=config.base_seed,
            workers=workers, progress=ctx.obj["progress"],
        )
        for tag, pool in pools.items():
            path = save_pairs(
                output_dir / f"pool_N{N}_t{tag}.npz", pool.pairs,
                loss_a=pool.loss_a, alpha=pool.alpha, N=pool.N,
                time_tag=str(tag),
            )
            result["pools"].append({
                "N": N, "time_tag": tag, "size": pool.size,
                "path": str(path), "provenance": pool.provenance,
            })
        if config.extrapolate:
            last = pools[config.times[-1]]
            result["bbp"].append(
                (N, bbp_solve(pool_density(last)).alpha)
            )
    if config.extrapolate:
        result["extrapolation"] = finite_size_extrapolate(
            result["bbp"]
        ).summary()
    _emit("threshold_sample", config, started, result)


@cli.command("phase-diagram",
             help="alpha_BBP(t) along the constrained descent.")
@config_option
@loss_option
@click.option("--alpha", type=float, default=None)
@click.option("--N", "N", type=int, default=None)
@click.option("--time-grid", default=None,
              help="Comma-separated descent times in eta * step units.")
@click.option("--seeds", type=int, default=None)
@click.option("--workers", type=int, default=None)
@output_option
@click.pass_context
def phase_diagram_command(ctx, config_path, time_grid, workers,
                          **flags) -> None:
    started = time.time()
    flags["time_grid"] = _floats(time_grid)
    config = load_config(config_path, PhaseDiagramConfig, _given(flags))
    diagram = phase_diagram(
        config.loss_a, config.alpha, config.N, config.time_grid,
        config.seeds, eta=config.eta, base_seed=config.base_seed,
        workers=workers, progress=ctx.obj["progress"],
    )
    phase_diagram_report(diagram, config.output_dir)
    _emit("phase_diagram", config, started, diagram.summary())


@cli.command(help="CSV tables and plots of a finished sweep directory.")
@click.option("--run", "run_dir", required=True)
@click.option("--levels", default="0.25,0.5,0.75",
              help="Rate levels of the log N scaling study.")
def report(run_dir, levels) -> None:
    if not Path(run_dir).is_dir():
        raise MissingInputError(f"Run directory not found: {run_dir}")
    summary = build_sweep_report(run_dir, _floats(levels))
    click.echo(json.dumps(summary, default=str))


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Runs the CLI and maps failures to the documented exit codes."""
    try:
        cli.main(args=argv, prog_name="landscape", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_UNEXPECTED
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_UNEXPECTED:
            logger.exception("Unexpected failure")
        kind = getattr(e, "kind", type(e).__name__)
        click.echo(json.dumps({
            "error": kind, "exit_code": code, "message": str(e)
        }), err=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(cli_dispatch())
