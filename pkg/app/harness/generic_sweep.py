"""Seeded, resumable recovery-rate sweeps over (N, alpha) cells.

Every cell derives its instance and initialization seeds from the base
seed, so a rerun of the same configuration skips finished cells and
reproduces the same table.
"""
import logging
import sys
import time
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from app import settings
from app.harness.artifacts import (
    MANIFEST_NAME,
    build_manifest,
    instance_hash,
    read_json,
    write_json_atomic,
    write_table,
)
from app.harness.config import SweepSpec, config_hash
from app.harness.harness_utils import RecoveryRow, RecoveryTable
from app.landscape.dynamics import run_trajectory
from app.landscape.errors import ConfigError, InvalidArgumentError
from app.landscape.model import LossSpec, generate_instance

logger = logging.getLogger(__name__)

RECOVERY_FILE = "recovery.csv"
CHECKPOINT_EVERY = 10


def cell_key(N: int, alpha: float, index: int) -> str:
    return f"{N}|{alpha:.6f}|{index}"


def cell_seeds(
    base_seed: int, N: int, alpha: float, index: int, stream: int = 0
) -> Tuple[int, int]:
    """Instance and initialization seeds of one sweep cell."""
    sequence = np.random.SeedSequence(
        [base_seed, N, int(round(alpha * 1e6)), index, stream]
    )
    instance_seed, init_seed = sequence.generate_state(2, dtype=np.uint64)
    return int(instance_seed), int(init_seed)


def run_cell(
    spec: SweepSpec, N: int, alpha: float, index: int
) -> dict:
    """One (N, alpha, seed) trajectory; failures are returned, not raised."""
    instance_seed, init_seed = cell_seeds(spec.base_seed, N, alpha, index)
    outcome = {
        "key": cell_key(N, alpha, index),
        "N": N,
        "alpha": alpha,
        "index": index,
        "instance_seed": instance_seed,
        "init_seed": init_seed,
        "error": None,
    }
    started = time.time()
    try:
        inst = generate_instance(N, alpha, instance_seed)
        record = run_trajectory(
            LossSpec(spec.loss_a), inst, spec.trajectory_config(N, init_seed)
        )
        outcome.update(
            instance_hash=instance_hash(inst),
            recovered=bool(record.recovered),
            m0=record.initial_magnetization,
            mT=record.final_magnetization,
            steps=record.times[-1] if record.times else 0,
        )
        if not record.valid:
            outcome["error"] = record.error
    except Exception as e:
        outcome["error"] = f"{type(e).__name__}: {e}"
    outcome["seconds"] = time.time() - started
    return outcome


class GenericSweep:
    def __init__(
        self,
        spec: SweepSpec,
        workers: Optional[int] = None,
        progress: Optional[bool] = None,
        checkpoint_every: int = CHECKPOINT_EVERY,
    ) -> None:
        """Sets up a resumable sweep writing into spec.output_dir.

        The manifest is rewritten every ``checkpoint_every`` finished cells
        and once when the run ends or is interrupted.
        """
        if checkpoint_every < 1:
            raise InvalidArgumentError("checkpoint_every must be >= 1")
        self.spec = spec
        self.checkpoint_every = checkpoint_every
        self.workers = workers or settings.WORKERS
        self.progress = sys.stderr.isatty() if progress is None else progress
        self.output_dir = Path(spec.output_dir)
        self.manifest_path = self.output_dir / MANIFEST_NAME
        self.config_sha256 = config_hash(spec)

    def cells(self) -> List[Tuple[int, float, int]]:
        return [
            (N, alpha, index)
            for N in self.spec.N_list
            for alpha in self.spec.alpha_grid
            for index in range(self.spec.seeds_per_cell)
        ]

    def load_completed(self) -> dict:
        """Cells finished by an earlier run of the same configuration."""
        if not self.manifest_path.is_file():
            return {}
        manifest = read_json(self.manifest_path)
        if manifest.get("config_sha256") != self.config_sha256:
            raise ConfigError(
                f"{self.manifest_path} belongs to a different configuration"
            )
        return {
            key: cell
            for key, cell in manifest.get("cells", {}).items()
            if cell.get("error") is None
        }

    def write_manifest(self, cells: dict, started: float) -> None:
        manifest = build_manifest(
            self.spec.model_dump(),
            self.config_sha256,
            started,
            kind="sweep",
            steps_rule=self.spec.steps_rule,
            cells=cells,
        )
        write_json_atomic(self.manifest_path, manifest)

    def run(self) -> RecoveryTable:
        started = time.time()
        cells = self.load_completed()
        pending = [
            cell for cell in self.cells() if cell_key(*cell) not in cells
        ]
        logger.info(
            "Sweep %s: %d cells done, %d pending", self.output_dir,
            len(cells), len(pending),
        )
        results = []
        if pending:
            results = Parallel(
                n_jobs=self.workers, return_as="generator_unordered"
            )(delayed(run_cell)(self.spec, *cell) for cell in pending)
        try:
            for done, outcome in enumerate(tqdm(
                results, total=len(pending), disable=not self.progress,
                desc="sweep",
            ), start=1):
                if outcome["error"]:
                    logger.warning("Cell %s failed: %s", outcome["key"],
                                   outcome["error"])
                cells[outcome["key"]] = outcome
                if done % self.checkpoint_every == 0:
                    self.write_manifest(cells, started)
        finally:
            self.write_manifest(cells, started)

        table = tabulate(self.spec, cells.values())
        write_table(self.output_dir / RECOVERY_FILE, table.to_frame())
        return table


def tabulate(spec: SweepSpec, cells: Iterable[dict]) -> RecoveryTable:
    """Recovery rows per (N, alpha) from per-cell outcomes."""
    grouped = {}
    for cell in cells:
        grouped.setdefault((cell["N"], round(cell["alpha"], 6)), []).append(
            cell
        )
    table = RecoveryTable()
    for N in spec.N_list:
        for alpha in spec.alpha_grid:
            group = grouped.get((N, round(alpha, 6)), [])
            ok = [c for c in group if c.get("error") is None]
            failed = [c for c in group if c.get("error") is not None]
            expected = {
                cell_key(N, alpha, i) for i in range(spec.seeds_per_cell)
            }
            table.incomplete_cells.extend(
                sorted(expected - {c["key"] for c in ok})
            )
            row = RecoveryRow(
                N=N,
                alpha=alpha,
                successes=sum(c["recovered"] for c in ok),
                trials=len(ok),
                failed=len(failed),
            )
            if ok:
                row.mean_m0_sq = float(np.mean([c["m0"] ** 2 for c in ok]))
                row.mean_mT_sq = float(np.mean([c["mT"] ** 2 for c in ok]))
            row.calculate_rate()
            table.rows.append(row)
    return table


def run_sweep(spec: SweepSpec, **kwargs) -> RecoveryTable:
    return GenericSweep(spec, **kwargs).run()


def constrained_sweep(spec: SweepSpec, **kwargs) -> RecoveryTable:
    """Unconstrained descent from equatorial threshold-state proxies."""
    if spec.init != "constrained":
        raise InvalidArgumentError("constrained_sweep needs init=constrained")
    return GenericSweep(spec, **kwargs).run()


def steps_study(
    spec: SweepSpec, steps_values: Iterable[int], **kwargs
) -> dict:
    """Recovery tables of the same sweep under several steps rules."""
    tables = {}
    for P in steps_values:
        variant = spec.model_copy(update={
            "steps_per_log2n": P,
            "output_dir": str(Path(spec.output_dir) / f"steps_{P}"),
        })
        tables[P] = GenericSweep(variant, **kwargs).run()
    return tables
