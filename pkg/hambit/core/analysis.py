"""
Convergence studies, rate fits, moment estimators and CSV reports
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from hambit.core.errors import InsufficientLevelsError, OutputError
from hambit.core.fdscheme import FDConfig, exact_mild_reference, run
from hambit.core.hilbert import GridFunction, WeightFunction, hw_norm, space_constants
from hambit.core.kernels import KernelSpec, VolatilityModel, kernel_lipschitz_bound, sample_volatility
from hambit.core.noise import LevySpec, aggregate_increments, sample_increments
from hambit.core.simulate import PathEnsemble

logger = logging.getLogger(__name__)

PREDICTORS = ("dx_minus_dt", "dt")
REFERENCES = ("mild", "finest")
# Coarsest level is dropped from the fit below this r^2.
PRE_ASYMPTOTIC_R2 = 0.9
STEP_TOLERANCE = 1e-9

TABLE_COLUMNS = ["level", "dx", "dt", "lambda", "n_paths", "mse", "stderr", "bound_rhs"]


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    dx: float
    dt: float
    lam: float
    n_paths: int
    mse: float
    stderr: float
    bound_rhs: float = float("nan")


@dataclass(frozen=True)
class RateFit:
    predictor: str
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float = 0.0
    confidence: Tuple[float, float] = (float("nan"), float("nan"))
    n_rows: int = 0


@dataclass(frozen=True)
class ConvergenceTable:
    rows: List[ConvergenceRow] = field(default_factory=list)
    fit: Optional[RateFit] = None
    excluded_coarsest: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    mean_stderr: np.ndarray
    covariance: np.ndarray
    covariance_stderr: np.ndarray


def _predictor_value(row: ConvergenceRow, predictor: str) -> float:
    if predictor == "dx_minus_dt":
        return row.dx - row.dt
    if predictor == "dt":
        return row.dt
    raise ValueError(f"predictor must be one of {PREDICTORS}, got {predictor!r}")


def fit_rate(table: Union[ConvergenceTable, Sequence[ConvergenceRow]], predictor: str) -> RateFit:
    """Least squares fit of log(mse) against log(predictor)"""
    rows = table.rows if isinstance(table, ConvergenceTable) else list(table)
    xs, ys = [], []
    for row in rows:
        x = _predictor_value(row, predictor)
        if row.mse <= 0 or x <= 0:
            warnings.warn(f"level {row.level}: excluded from rate fit (mse={row.mse!r}, {predictor}={x!r})")
            continue
        xs.append(np.log(x))
        ys.append(np.log(row.mse))
    if len(xs) < 3:
        raise InsufficientLevelsError(f"rate fit needs at least 3 usable levels, got {len(xs)}")
    result = stats.linregress(xs, ys)
    r_squared = float(result.rvalue ** 2)
    half_width = float(stats.t.ppf(0.975, len(xs) - 2) * result.stderr) if len(xs) > 2 else float("inf")
    slope = float(result.slope)
    return RateFit(
        predictor=predictor,
        slope=slope,
        intercept=float(result.intercept),
        r_squared=r_squared,
        slope_stderr=float(result.stderr),
        confidence=(slope - half_width, slope + half_width),
        n_rows=len(xs),
    )


def _steps(total: float, step: float, name: str) -> int:
    count = int(round(total / step))
    if count < 1 or abs(count * step - total) > STEP_TOLERANCE * max(1.0, total):
        raise ValueError(f"{name}: {total} is not a multiple of {step}")
    return count


def _lipschitz_constant(kernel: KernelSpec, noise: LevySpec, sigma_sq: float,
                        weight: WeightFunction, dx: float, J: int) -> float:
    """C with E||(S_x beta - S_y beta) Q^{1/2}||^2 <= C |x - y|^2 in the discrete H_w norm"""
    nodes = dx * np.arange(J + 1)
    profile_sq = max(
        hw_norm(GridFunction(dx, np.exp(-c.g.decay_rate * nodes)), weight) ** 2 for c in kernel.components
    )
    return kernel_lipschitz_bound(kernel) * noise.covariance().trace * sigma_sq * profile_sq


def proposition_rhs(t: float, dx: float, dt: float, C: float, shift_bound: float, C0: float = 0.0,
                    initial_error_sq: float = 0.0, beta_error_sq: float = 0.0) -> float:
    """4t(C0^2 + 2Ct)(dx - dt) + 8Ct(1 + S^2/3) dt^2 + 4 S^2 e0 + 8 t S^2 e_beta"""
    s2 = shift_bound ** 2
    return (
        4.0 * t * (C0 ** 2 + 2.0 * C * t) * (dx - dt)
        + 8.0 * C * t * (1.0 + s2 / 3.0) * dt ** 2
        + 4.0 * s2 * initial_error_sq
        + 8.0 * t * s2 * beta_error_sq
    )


def convergence_study(
    base: FDConfig,
    levels: Sequence[Tuple[float, float]],
    kernel: KernelSpec,
    vol: VolatilityModel,
    noise: LevySpec,
    n_paths: int,
    seed: int,
    weight: Optional[WeightFunction] = None,
    reference: str = "mild",
    coupling: str = "independent",
    executor=None,
) -> ConvergenceTable:
    """Scheme error E|Y~^N - Y_ref|_w^2 at the horizon of `base` for each (dx, dt) level

    All levels are driven by aggregations of one master increment stream on the
    finest time grid, so each mse measures scheme error on shared noise.
    """
    if len(levels) < 3:
        raise InsufficientLevelsError(f"convergence study needs at least 3 levels, got {len(levels)}")
    if reference not in REFERENCES:
        raise ValueError(f"reference must be one of {REFERENCES}, got {reference!r}")
    weight = weight or WeightFunction(1.0)
    horizon = base.N * base.dt
    extent = base.J * base.dx
    ordered = sorted(((float(dx), float(dt)) for dx, dt in levels), key=lambda level: (-level[1], -level[0]))
    dt_min = ordered[-1][1]
    n_fine = _steps(horizon, dt_min, "horizon")
    master = sample_increments(noise, dt_min, n_fine, n_paths, seed, executor=executor)
    sigma = sample_volatility(vol, dt_min, n_fine, n_paths, seed, coupling, executor=executor)
    sigma_sq = float(np.max(np.mean(np.sum(sigma.data ** 2, axis=2), axis=0)))
    shift_bound = space_constants(weight).shift_bound

    solutions = []
    for dx, dt in ordered:
        factor = _steps(dt, dt_min, f"level dt={dt}")
        config = FDConfig(dt=dt, dx=dx, N=_steps(horizon, dt, "horizon"), J=_steps(extent, dx, "extent"))
        increments = aggregate_increments(master, factor)
        paths = sigma.subsample(factor)
        approx = run(config, kernel, None, noise, seed, n_paths=n_paths, increments=increments,
                     sigma_paths=paths, executor=executor)
        mild = None
        if reference == "mild":
            mild = exact_mild_reference(config, kernel, None, noise, seed, n_paths=n_paths,
                                        increments=increments, sigma_paths=paths, executor=executor)
        C = _lipschitz_constant(kernel, noise, sigma_sq, weight, dx, config.J)
        rhs = proposition_rhs(horizon, dx, dt, C, shift_bound)
        solutions.append((config, approx, mild, rhs))

    rows = []
    finest_config, finest, _, finest_rhs = solutions[-1]
    targets = solutions if reference == "mild" else solutions[:-1]
    for level, (config, approx, mild, rhs) in enumerate(targets):
        if reference == "mild":
            target = mild.final
        else:
            ratio = _steps(config.dx, finest_config.dx, f"level dx={config.dx}")
            target = finest.final[:, :: ratio][:, : config.J + 1]
            rhs = float((np.sqrt(rhs) + np.sqrt(finest_rhs)) ** 2)
        errors = np.array([
            hw_norm(GridFunction(config.dx, approx.final[p] - target[p]), weight) ** 2
            for p in range(approx.final.shape[0])
        ])
        stderr = float(errors.std(ddof=1) / np.sqrt(errors.size)) if errors.size > 1 else 0.0
        rows.append(ConvergenceRow(level, config.dx, config.dt, config.lam, int(errors.size),
                                   float(errors.mean()), stderr, float(rhs)))
        logger.debug("level %d: dx=%g dt=%g mse=%.3e", level, config.dx, config.dt, rows[-1].mse)

    metadata = {"seed": seed, "reference": reference, "horizon": horizon, "extent": extent,
                "alpha": weight.alpha}
    table = ConvergenceTable(rows, None, False, metadata)
    predictor = "dx_minus_dt" if any(row.lam < 1.0 for row in rows) else "dt"
    usable = [row for row in rows if row.mse > 0 and _predictor_value(row, predictor) > 0]
    if len(usable) < 3:
        logger.info("no rate fitted: fewer than 3 levels with positive error")
        return table
    fit = fit_rate(usable, predictor)
    excluded = False
    if fit.r_squared < PRE_ASYMPTOTIC_R2 and len(usable) >= 4:
        fit = fit_rate(usable[1:], predictor)
        excluded = True
    return replace(table, fit=fit, excluded_coarsest=excluded)


def empirical_moments(ensemble: PathEnsemble, t: float) -> Moments:
    """Sample mean and covariance of X(t) with standard errors"""
    x = ensemble.at(t)
    n = x.shape[0]
    mean = x.mean(axis=0)
    centered = x - mean
    products = centered[:, :, None] * centered[:, None, :]
    covariance = products.mean(axis=0) * (n / max(n - 1, 1))
    if n > 1:
        mean_stderr = x.std(axis=0, ddof=1) / np.sqrt(n)
        covariance_stderr = products.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        mean_stderr = np.zeros_like(mean)
        covariance_stderr = np.zeros_like(covariance)
    return Moments(mean, mean_stderr, covariance, covariance_stderr)


def config_hash(document: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a run configuration"""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _format(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_table(path: Union[str, Path], columns: Sequence[str], rows: Sequence[Sequence[Any]],
                metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write one CSV: '# key: value' metadata lines, a header row, then data rows"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            for key in sorted(metadata or {}):
                f.write(f"# {key}: {_format(metadata[key])}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format(value) for value in row])
    except OSError as e:
        raise OutputError(path, f"cannot write report ({e.strerror or e})") from e
    logger.debug("wrote %d rows to %s", len(rows), path)
    return path


def _table_rows(table: ConvergenceTable) -> List[List[Any]]:
    return [[r.level, r.dx, r.dt, r.lam, r.n_paths, r.mse, r.stderr, r.bound_rhs] for r in table.rows]


def _ensemble_rows(ensemble: PathEnsemble) -> List[List[Any]]:
    rows = []
    for p in range(ensemble.data.shape[0]):
        for k, t in enumerate(ensemble.t_grid):
            rows.append([p, k, float(t)] + [float(v) for v in ensemble.data[p, k]])
    return rows


def _moment_rows(moments: Moments) -> List[List[Any]]:
    d = moments.mean.size
    return [
        [i, j, moments.mean[i], moments.mean_stderr[i], moments.covariance[i, j], moments.covariance_stderr[i, j]]
        for i in range(d)
        for j in range(d)
    ]


def emit_report(obj: Union[ConvergenceTable, PathEnsemble, Moments], path: Union[str, Path],
                metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Serialize a table, ensemble or moment set as CSV"""
    header = dict(metadata or {})
    if isinstance(obj, ConvergenceTable):
        header.update(obj.metadata)
        header["excluded_coarsest"] = obj.excluded_coarsest
        if obj.fit is not None:
            header.update({
                "fit_predictor": obj.fit.predictor,
                "fit_slope": obj.fit.slope,
                "fit_intercept": obj.fit.intercept,
                "fit_r_squared": obj.fit.r_squared,
                "fit_slope_ci_low": obj.fit.confidence[0],
                "fit_slope_ci_high": obj.fit.confidence[1],
            })
        return write_table(path, TABLE_COLUMNS, _table_rows(obj), header)
    if isinstance(obj, PathEnsemble):
        header.update({k: v for k, v in obj.metadata.items() if k not in header})
        columns = ["path", "time_index", "t"] + [f"h{i}" for i in range(obj.data.shape[2])]
        return write_table(path, columns, _ensemble_rows(obj), header)
    if isinstance(obj, Moments):
        columns = ["i", "j", "mean_i", "mean_stderr_i", "covariance", "covariance_stderr"]
        return write_table(path, columns, _moment_rows(obj), header)
    raise TypeError(f"cannot emit a report for {type(obj).__name__}")


def _parse(token: str) -> Union[int, float, str]:
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def read_report(path: Union[str, Path]) -> Tuple[Dict[str, str], List[str], List[List[Any]]]:
    """Parse a CSV written by write_table into (metadata, columns, rows)"""
    path = Path(path)
    metadata: Dict[str, str] = {}
    try:
        with open(path, newline="") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise OutputError(path, f"cannot read report ({e.strerror or e})") from e
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            metadata[key] = value
        else:
            body.append(line)
    reader = csv.reader(body)
    columns = next(reader, [])
    rows = [[_parse(token) for token in row] for row in reader]
    return metadata, columns, rows
