"""
Simulate Experiment Plugin for Hambit
"""

from pathlib import Path
from typing import Dict

from hambit.core.analysis import emit_report, empirical_moments, write_table
from hambit.core.config import RunConfig
from hambit.core.fdscheme import run as run_scheme
from hambit.core.kernels import sample_volatility
from hambit.core.noise import sample_increments
from hambit.core.simulate import (
    hambit_direct,
    truncation_error_bound,
    truncation_error_mc,
    vmv_series,
)
from hambit.executors.ensemble_executor import EnsembleExecutor
from .base import ExperimentPlugin


class SimulateExperiment(ExperimentPlugin):
    """
    Direct quadrature, truncated series and finite difference paths side by side.

    All three routes consume the same increments and volatility paths.
    """

    @property
    def name(self) -> str:
        return "simulate"

    @property
    def description(self) -> str:
        return "sample X(t) by direct quadrature, truncated series and the FD scheme"

    def run(self, config: RunConfig, executor: EnsembleExecutor) -> Dict[str, Path]:
        grid = config.grid
        header = self.header(config)
        increments = sample_increments(config.noise, grid.dt, grid.N, config.n_paths, config.seed,
                                       executor=executor)
        sigma = sample_volatility(config.volatility, grid.dt, grid.N, config.n_paths, config.seed,
                                  config.coupling, executor=executor)
        drivers = dict(increments=increments, sigma_paths=sigma, coupling=config.coupling, executor=executor)

        direct = hambit_direct(config.kernel, None, config.noise, grid.t_grid, config.n_paths,
                               config.seed, **drivers)
        series = vmv_series(config.kernel, None, config.noise, config.truncation, grid.t_grid,
                            config.n_paths, config.seed, **drivers)
        scheme = run_scheme(grid, config.kernel, None, config.noise, config.seed, n_paths=config.n_paths,
                            snapshots=config.snapshots, **drivers)

        mse, stderr = truncation_error_mc(direct, series, grid.horizon)
        bound = truncation_error_bound(config.kernel, None, config.noise, config.truncation,
                                       grid.horizon, grid.dt, sigma_paths=sigma)
        series_header = {**header, "truncation_mse": mse, "truncation_mse_stderr": stderr,
                         "truncation_bound": bound}

        out = config.out_dir
        outputs = {
            "direct": emit_report(direct, out / "direct.csv", header),
            "series": emit_report(series.ensemble, out / "series.csv", series_header),
            "fd": emit_report(scheme.boundary_ensemble(), out / "fd.csv", header),
            "moments": emit_report(empirical_moments(direct, grid.horizon), out / "moments.csv",
                                   {**header, "t": grid.horizon}),
        }
        nodes = grid.internal_nodes
        for n, values in scheme.snapshots.items():
            columns = ["path", "node", "x"] + [f"h{k}" for k in range(values.shape[2])]
            rows = [
                [p, j, float(nodes[j])] + [float(v) for v in values[p, j]]
                for p in range(values.shape[0])
                for j in range(values.shape[1])
            ]
            outputs[f"fd_snapshot_{n}"] = write_table(
                out / f"fd_snapshot_{n}.csv", columns, rows, {**header, "step": n, "t": float(grid.t_grid[n])}
            )
        return outputs
