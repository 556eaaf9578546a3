"""Structured configuration files (YAML) validated with pydantic."""
import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Type, TypeVar, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic import field_validator

from app import settings
from app.landscape.dynamics import (
    DEFAULT_ETA,
    DEFAULT_STEPS_PER_LOG2N,
    DEFAULT_T_C,
    TrajectoryConfig,
    steps_for_dimension,
)
from app.landscape.errors import ConfigError, ConfigNotFoundError
from app.landscape.replica import ReplicaConfig

Model = TypeVar("Model", bound=BaseModel)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SweepSpec(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    N_list: List[int]
    alpha_grid: List[float]
    seeds_per_cell: int = Field(20, ge=1)
    init: Literal["random", "spectral", "constrained"] = "random"
    eta: float = Field(DEFAULT_ETA, gt=0)
    steps_per_log2n: int = Field(DEFAULT_STEPS_PER_LOG2N, ge=1)
    t_c: int = Field(DEFAULT_T_C, ge=1)
    renormalize: bool = True
    early_exit: bool = True
    base_seed: int = 0
    output_dir: str = settings.OUTPUT_DIR

    @field_validator("N_list", "alpha_grid")
    @classmethod
    def sorted_and_non_empty(cls, values):
        if not values:
            raise ValueError("grid must be non-empty")
        if list(values) != sorted(values):
            raise ValueError("grid must be sorted")
        return values

    @field_validator("N_list")
    @classmethod
    def dimensions_at_least_two(cls, values):
        if any(n < 2 for n in values):
            raise ValueError("every N must be >= 2")
        return values

    @property
    def steps_rule(self) -> str:
        return f"{self.steps_per_log2n}*log2(N)"

    def trajectory_config(self, N: int, seed: int) -> TrajectoryConfig:
        return TrajectoryConfig(
            steps=steps_for_dimension(N, self.steps_per_log2n),
            eta=self.eta,
            init=self.init,
            t_c=self.t_c,
            renormalize=self.renormalize,
            early_exit=self.early_exit,
            seed=seed,
        )


class SimulateConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    N: int = Field(512, ge=2)
    alpha: float = Field(3.1, gt=0)
    seed: int = 0
    init: Literal["random", "spectral", "constrained"] = "random"
    eta: float = Field(DEFAULT_ETA, gt=0)
    steps: Optional[int] = Field(None, ge=1)
    t_c: int = Field(DEFAULT_T_C, ge=1)
    renormalize: bool = True
    snapshot_times: List[int] = []
    save_instance: bool = False
    output_dir: str = settings.OUTPUT_DIR

    def trajectory_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(
            steps=self.steps or steps_for_dimension(self.N),
            eta=self.eta,
            init=self.init,
            t_c=self.t_c,
            renormalize=self.renormalize,
            snapshot_times=tuple(self.snapshot_times),
            seed=self.seed,
        )


class QuadratureConfig(StrictModel):
    n_nodes: int = Field(200, ge=2)
    rule: Literal["graded", "hermite"] = "graded"


class ReplicaSettings(StrictModel):
    n_r0: int = Field(120, ge=4)
    n_eta: int = Field(24, ge=2)
    n_eta_p: int = Field(200, ge=4)
    n_y: int = Field(120, ge=4)
    n_yhat: int = Field(1201, ge=11)
    yhat_max: float = Field(8.0, gt=0)
    rtol: float = Field(1e-5, gt=0)
    label_map: Literal["field", "minimizer"] = "field"
    tol: float = Field(1e-4, gt=0)
    max_evaluations: int = Field(400, ge=1)
    homotopy_start: float = Field(8.0, gt=0)
    homotopy_steps: int = Field(5, ge=1)

    def replica_config(self) -> ReplicaConfig:
        return ReplicaConfig(**self.model_dump())


def load_config(
    path: Optional[str], model: Type[Model], overrides: dict
) -> Model:
    """Reads a YAML file into ``model``; non-None overrides win."""
    data = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigNotFoundError(f"Config file not found: {path}")
        try:
            data = yaml.safe_load(config_path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must contain a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(
            f"Invalid {model.__name__}: {e.errors(include_url=False)}"
        ) from e


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON of a model or a plain dict."""
    if isinstance(config, BaseModel):
        config = config.model_dump()
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


class SpectrumConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    N: int = Field(1024, ge=2)
    alpha: float = Field(3.1, gt=0)
    seed: int = 0
    state: Literal["random", "signal", "constrained"] = "random"
    steps: int = Field(0, ge=0)
    snapshot_times: List[int] = []
    eta: float = Field(DEFAULT_ETA, gt=0)
    bins: int = Field(50, ge=10)
    output_dir: str = settings.OUTPUT_DIR


class RmtDensityConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    alpha: float = Field(4.0, gt=0)
    density: Literal["analytic-init", "constant"] = "analytic-init"
    constant: float = 1.0
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    points: int = Field(400, ge=2)
    quadrature: QuadratureConfig = QuadratureConfig()
    output_dir: str = settings.OUTPUT_DIR


class BBPConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    density: Literal["analytic-init", "constant", "replica", "pool"] = (
        "analytic-init"
    )
    a_grid: List[float] = []
    constant: float = 1.0
    pool: Optional[str] = None
    replica_run: Optional[str] = None
    self_consistent: bool = False
    alpha_grid: List[float] = []
    quadrature: QuadratureConfig = QuadratureConfig()
    replica: ReplicaSettings = ReplicaSettings()
    output_dir: str = settings.OUTPUT_DIR


class ReplicaSolveConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    alpha: Optional[float] = Field(None, gt=0)
    chi0: float = Field(1.0, gt=0)
    z0: float = Field(1.0, gt=0)
    q00: float = Field(0.0, ge=0, lt=1)
    replica: ReplicaSettings = ReplicaSettings()
    output_dir: str = settings.OUTPUT_DIR


class ThresholdSampleConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    alpha: float = Field(4.0, gt=0)
    N_list: List[int] = [512]
    times: List[Union[int, Literal["plateau"]]] = ["plateau"]
    seeds: int = Field(8, ge=1)
    eta: float = Field(DEFAULT_ETA, gt=0)
    t_c: int = Field(DEFAULT_T_C, ge=1)
    base_seed: int = 0
    extrapolate: bool = False
    output_dir: str = settings.OUTPUT_DIR


class PhaseDiagramConfig(StrictModel):
    loss_a: float = Field(0.01, ge=0)
    alpha: float = Field(3.57, gt=0)
    N: int = Field(512, ge=2)
    time_grid: List[float] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
    seeds: int = Field(8, ge=1)
    eta: float = Field(DEFAULT_ETA, gt=0)
    base_seed: int = 0
    output_dir: str = settings.OUTPUT_DIR
