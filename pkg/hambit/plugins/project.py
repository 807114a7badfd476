"""
Projection Experiment Plugin for Hambit
"""

from pathlib import Path
from typing import Dict, List

import numpy as np

from hambit.core.analysis import write_table
from hambit.core.config import RunConfig
from hambit.core.kernels import sample_volatility
from hambit.core.simulate import grid_index, project
from hambit.executors.ensemble_executor import EnsembleExecutor
from .base import ExperimentPlugin


def _matrix_rows(matrix: np.ndarray) -> List[List[float]]:
    return [[i] + [float(v) for v in row] for i, row in enumerate(matrix)]


class ProjectExperiment(ExperimentPlugin):
    """
    Gram matrix, covariance C(t,s) and its square root for finitely many directions.
    """

    @property
    def name(self) -> str:
        return "project"

    @property
    def description(self) -> str:
        return "finite-dimensional projection of Gamma(t,s)(sigma(s)) onto span(xi)"

    @property
    def required_sections(self) -> List[str]:
        return ["projection"]

    def run(self, config: RunConfig, executor: EnsembleExecutor) -> Dict[str, Path]:
        section = config.projection
        grid = config.grid
        t, s = float(section["t"]), float(section["s"])
        path = int(section.get("path", 0))
        xi = np.asarray(section["xi"], dtype=float)

        sigma_paths = sample_volatility(config.volatility, grid.dt, grid.N, config.n_paths, config.seed,
                                        config.coupling, executor=executor)
        sigma = sigma_paths.data[path, grid_index(grid.t_grid, s)]
        result = project(config.kernel, sigma, config.noise.covariance(), t, s, xi)

        header = {**self.header(config), "t": t, "s": s, "path": path}
        columns = ["i"] + [f"j{j}" for j in range(xi.shape[0])]
        out = config.out_dir
        return {
            "gram": write_table(out / "gram.csv", columns, _matrix_rows(result.gram), header),
            "covariance": write_table(out / "covariance.csv", columns, _matrix_rows(result.C), header),
            "gamma": write_table(out / "gamma.csv", columns, _matrix_rows(result.gamma), header),
        }
