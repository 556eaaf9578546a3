"""Persistence of instances, tables and run manifests."""
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd
import scipy

from app.landscape.dynamics import TrajectoryRecord
from app.landscape.errors import MissingInputError
from app.landscape.model import RNG_ID, Instance, generate_instance

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _to_builtin(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def write_json_atomic(path: Path, data: dict) -> Path:
    """Writes JSON through a temporary file and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, default=_to_builtin))
    os.replace(tmp, path)
    return path


def read_json(path: Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Missing input file: {path}")
    return json.loads(path.read_text())


def write_table(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def environment_versions() -> dict:
    return {
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def instance_hash(inst: Instance) -> str:
    """Git-style blob SHA-1 of the sensing matrix, signal and labels."""
    payload = b"".join(
        np.ascontiguousarray(array, dtype="<f8").tobytes()
        for array in (inst.sensing, inst.signal, inst.labels)
    )
    header = f"blob {len(payload)}\0".encode()
    return hashlib.sha1(header + payload).hexdigest()


def build_manifest(
    config: dict,
    config_sha256: str,
    started: float,
    **extra,
) -> dict:
    manifest = {
        "config": config,
        "config_sha256": config_sha256,
        "rng": RNG_ID,
        "versions": environment_versions(),
        "started": started,
        "finished": time.time(),
    }
    manifest["elapsed_seconds"] = manifest["finished"] - started
    manifest.update(extra)
    return manifest


def save_instance(path: Path, inst: Instance, embed: bool = True) -> Path:
    """Stores dimensions, seed and RNG id; tensors only when ``embed``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "N": inst.N,
        "M": inst.M,
        "alpha": inst.alpha,
        "seed": inst.seed,
        "unit_norm_rows": inst.unit_norm_rows,
        "rng": RNG_ID,
        "numpy_version": np.__version__,
    }
    if embed:
        arrays.update(
            sensing=inst.sensing,
            signal=inst.signal,
            labels=inst.labels,
            content_hash=instance_hash(inst),
        )
    np.savez_compressed(path, **arrays)
    return path


def load_instance(path: Path) -> Instance:
    """Regenerates the instance and checks embedded tensors if present."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Missing instance file: {path}")
    with np.load(path) as data:
        N, M = int(data["N"]), int(data["M"])
        inst = generate_instance(
            N, M / N, int(data["seed"]), bool(data["unit_norm_rows"])
        )
        if "content_hash" in data.files:
            stored = str(data["content_hash"])
            if stored != instance_hash(inst):
                logger.warning(
                    "Regenerated instance differs from %s; using stored "
                    "tensors", path,
                )
                inst = Instance(
                    N=N,
                    M=M,
                    alpha=M / N,
                    signal=data["signal"],
                    sensing=data["sensing"],
                    labels=data["labels"],
                    seed=int(data["seed"]),
                    unit_norm_rows=bool(data["unit_norm_rows"]),
                )
    return inst


def trajectory_frame(record: TrajectoryRecord) -> pd.DataFrame:
    return pd.DataFrame({
        "step": record.times,
        "time": record.descent_time,
        "m": record.magnetization,
        "loss": record.loss,
    })


def save_pairs(path: Path, pairs: np.ndarray, **meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, pairs=pairs, **meta)
    return path


def load_pairs(path: Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"Missing pool file: {path}")
    with np.load(path) as data:
        meta = {k: data[k].item() for k in data.files if k != "pairs"}
        return data["pairs"], meta


def find_manifest(run_dir: Path, name: Optional[str] = None) -> dict:
    return read_json(Path(run_dir) / (name or MANIFEST_NAME))
