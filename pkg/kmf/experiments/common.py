"""
Shared experiment plumbing: settings, fits, verdicts and replica fan-out
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd
from scipy import stats

from kmf.config import Config, get_config
from kmf.dynamics import InitialLaw
from kmf.io import optional_float, output_path, verdict_frame, write_csv
from kmf.model import Coefficients, ForceField, make_field
from kmf.noise import NoiseStream

logger = logging.getLogger('kmf.experiments')

T = TypeVar('T')


@dataclass
class ExperimentConfig:
    """Everything a driver needs; built from a RunConfig by the CLI"""
    kind: str
    coeffs: Coefficients
    N: int = 1000
    dt: float = 1e-3
    T: float = 20.0
    replicas: int = 1
    seed: int = 20240601
    stride: int = 100
    knobs: Dict[str, Any] = field(default_factory=dict)
    offset: float = 0.0

    def field(self) -> ForceField:
        return make_field(self.kind, self.coeffs, offset=self.offset)

    def noise(self) -> NoiseStream:
        return NoiseStream(self.seed)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def knob(self, name: str, default: Any = None) -> Any:
        value = self.knobs.get(name)
        return default if value is None else value

    def law(self, name: str, default: InitialLaw) -> InitialLaw:
        spec = self.knobs.get(name)
        if spec is None:
            return default
        if isinstance(spec, InitialLaw):
            return spec
        return InitialLaw(**spec)


@dataclass
class FitResult:
    slope: float
    half_width: float
    r_squared: float
    window: tuple
    intercept: float = 0.0
    status: str = "ok"

    @property
    def rate(self) -> float:
        """Decay rate of a log-linear fit"""
        return -self.slope

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def degenerate_fit(window: tuple, reason: str = "degenerate") -> FitResult:
    return FitResult(slope=math.nan, half_width=math.nan, r_squared=math.nan,
                     window=window, status=reason)


def linear_fit(x: np.ndarray, y: np.ndarray, window: tuple, confidence: float = 0.95) -> FitResult:
    """Least-squares line with a t-based confidence half-width on the slope"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or np.ptp(x) == 0:
        return degenerate_fit(window, "too few points")
    result = stats.linregress(x, y)
    quantile = stats.t.ppf(0.5 + confidence / 2.0, x.size - 2)
    r_squared = float(result.rvalue ** 2) if np.isfinite(result.rvalue) else 1.0
    return FitResult(
        slope=float(result.slope),
        half_width=float(quantile * result.stderr),
        r_squared=min(max(r_squared, 0.0), 1.0),
        window=window,
        intercept=float(result.intercept),
    )


def fit_loglinear(t: np.ndarray, values: np.ndarray, start: float, stop: float) -> FitResult:
    """Fit log(values) = a + slope * t on [start, stop]"""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    window = (float(start), float(stop))
    mask = (t >= start - 1e-12) & (t <= stop + 1e-12)
    selected = values[mask]
    if selected.size == 0 or np.all(selected == 0):
        return degenerate_fit(window)
    if np.any(selected <= 0):
        return degenerate_fit(window, "non-positive values in window")
    return linear_fit(t[mask], np.log(selected), window)


@dataclass
class Verdict:
    experiment: str
    theory_value: Optional[float]
    measured: Optional[float]
    threshold: Optional[float]
    passed: Optional[bool]

    def to_row(self) -> Dict[str, Any]:
        return {
            'experiment': self.experiment,
            'theory_value': optional_float(self.theory_value),
            'measured': optional_float(self.measured),
            'threshold': optional_float(self.threshold),
            'pass': '' if self.passed is None else str(bool(self.passed)).lower(),
        }


@dataclass
class ExperimentResult:
    name: str
    series: pd.DataFrame
    verdicts: List[Verdict]
    fit: Optional[FitResult] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        """Skipped verdicts (passed is None) do not count"""
        return all(v.passed for v in self.verdicts if v.passed is not None)

    def verdict_table(self) -> pd.DataFrame:
        return verdict_frame([v.to_row() for v in self.verdicts])

    def write(self, output_dir, timestamp: bool = False) -> Dict[str, Path]:
        paths = {
            'series': write_csv(self.series, output_path(output_dir, self.name, 'series'), timestamp),
            'verdict': write_csv(self.verdict_table(), output_path(output_dir, self.name, 'verdict'), timestamp),
        }
        logger.info("%s: wrote %s", self.name, ", ".join(str(p) for p in paths.values()))
        return paths


def replica_batches(n_replicas: int, batch_size: Optional[int] = None) -> List[tuple]:
    """Fixed (start, count) batches covering [0, n_replicas)"""
    batch_size = batch_size or get_config().REPLICA_BATCH
    return [(start, min(batch_size, n_replicas - start)) for start in range(0, n_replicas, batch_size)]


def run_parallel(fn: Callable[..., T], tasks: Sequence[tuple]) -> List[T]:
    """Map fn over tasks on KMF_THREADS workers; results keep task order"""
    workers = min(Config.threads(), max(len(tasks), 1))
    if workers <= 1:
        return [fn(*task) for task in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda task: fn(*task), tasks))
