"""Result records of the sweeps and the crossings read off them."""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import isotonic_regression
from scipy.stats import binomtest

from app.landscape.errors import InvalidArgumentError

RECOVERY_COLUMNS = [
    "N",
    "alpha",
    "successes",
    "trials",
    "rate",
    "ci_low",
    "ci_high",
    "mean_m0_sq",
    "mean_mT_sq",
    "failed",
]


def wilson_interval(successes: int, trials: int) -> tuple[float, float]:
    """95% Wilson score interval of a success rate."""
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(successes, trials).proportion_ci(
        confidence_level=0.95, method="wilson"
    )
    return float(ci.low), float(ci.high)


@dataclass
class RecoveryRow:
    N: int
    alpha: float
    successes: int
    trials: int
    rate: float = 0.0
    ci_low: float = 0.0
    ci_high: float = 1.0
    mean_m0_sq: float = float("nan")
    mean_mT_sq: float = float("nan")
    failed: int = 0

    def calculate_rate(self) -> None:
        """Fills the rate and its confidence interval from the tallies."""
        if self.successes > self.trials:
            raise InvalidArgumentError("successes exceed trials")
        self.rate = self.successes / self.trials if self.trials else 0.0
        self.ci_low, self.ci_high = wilson_interval(
            self.successes, self.trials
        )


@dataclass
class RecoveryTable:
    rows: List[RecoveryRow] = field(default_factory=list)
    incomplete_cells: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [row.__dict__ for row in self.rows], columns=RECOVERY_COLUMNS
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "RecoveryTable":
        return cls(rows=[
            RecoveryRow(**record) for record in frame.to_dict("records")
        ])

    def curve(self, N: int) -> List[RecoveryRow]:
        return sorted(
            (row for row in self.rows if row.N == N), key=lambda r: r.alpha
        )

    @property
    def dimensions(self) -> List[int]:
        return sorted({row.N for row in self.rows})


@dataclass
class ThresholdSamplePool:
    loss_a: float
    alpha: float
    N: int
    time_tag: int | str
    pairs: np.ndarray
    provenance: List[dict] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.pairs)

    @property
    def descent_step(self) -> Optional[int]:
        return None if isinstance(self.time_tag, str) else self.time_tag


def crossing_alpha(
    alphas: Sequence[float],
    rates: Sequence[float],
    level: float = 0.5,
    weights: Optional[Sequence[float]] = None,
) -> float:
    """alpha where the isotonic fit of the rate curve reaches ``level``.

    Returns nan when the fitted curve never reaches the level.
    """
    alphas = np.asarray(alphas, dtype=float)
    if len(alphas) == 0:
        return float("nan")
    order = np.argsort(alphas)
    alphas = alphas[order]
    rates = np.asarray(rates, dtype=float)[order]
    w = None if weights is None else np.asarray(weights, float)[order]
    fitted = isotonic_regression(rates, weights=w, increasing=True).x
    if fitted[0] >= level:
        return float(alphas[0]) if fitted[0] == level else float("nan")
    for i in range(len(fitted) - 1):
        if fitted[i] < level <= fitted[i + 1]:
            frac = (level - fitted[i]) / (fitted[i + 1] - fitted[i])
            return float(alphas[i] + frac * (alphas[i + 1] - alphas[i]))
    return float("nan")


def is_monotone_within_ci(rows: Sequence[RecoveryRow]) -> bool:
    """No later point lies entirely below an earlier one."""
    rows = sorted(rows, key=lambda r: r.alpha)
    return all(
        later.ci_high >= earlier.ci_low
        for i, earlier in enumerate(rows)
        for later in rows[i + 1:]
    )


def weak_recovery_band(
    rows: Sequence[RecoveryRow], N: int, max_rate: float = 0.05
) -> List[float]:
    """alphas where mean m(T)^2 exceeds 5/N while strong recovery fails."""
    return [
        row.alpha
        for row in sorted(rows, key=lambda r: r.alpha)
        if row.N == N and row.rate <= max_rate and row.mean_mT_sq > 5.0 / N
    ]
