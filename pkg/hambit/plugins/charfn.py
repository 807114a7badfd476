"""
Characteristic Functional Experiment Plugin for Hambit
"""

from pathlib import Path
from typing import Dict, List

from hambit.core.analysis import write_table
from hambit.core.config import RunConfig
from hambit.core.kernels import sample_volatility
from hambit.core.noise import sample_increments
from hambit.core.simulate import char_functional_analytic, char_functional_mc, hambit_direct
from hambit.executors.ensemble_executor import EnsembleExecutor
from .base import ExperimentPlugin


class CharFnExperiment(ExperimentPlugin):
    """
    Monte Carlo E exp(i(h, X(t))) against the cumulant formula.
    """

    @property
    def name(self) -> str:
        return "charfn"

    @property
    def description(self) -> str:
        return "compare the empirical characteristic functional of X(t) with the analytic one"

    @property
    def required_sections(self) -> List[str]:
        return ["charfn"]

    def run(self, config: RunConfig, executor: EnsembleExecutor) -> Dict[str, Path]:
        grid = config.grid
        t = config.charfn_t if config.charfn_t is not None else grid.horizon
        k = int(round(t / grid.dt))
        t_grid = grid.t_grid[: k + 1]
        increments = sample_increments(config.noise, grid.dt, k, config.n_paths, config.seed, executor=executor)
        sigma = sample_volatility(config.volatility, grid.dt, k, config.n_paths, config.seed,
                                  config.coupling, executor=executor)
        # Only X(t) is needed
        ensemble = hambit_direct(config.kernel, None, config.noise, t_grid, config.n_paths, config.seed,
                                 increments=increments, sigma_paths=sigma, coupling=config.coupling,
                                 executor=executor, stride=k)
        t = float(t_grid[-1])

        columns = ["index"] + [f"h{i}" for i in range(config.kernel.dim_h)]
        columns += ["mc_real", "mc_imag", "mc_stderr", "analytic_real", "analytic_imag", "abs_diff"]
        rows = []
        for index, h in enumerate(config.charfn_h):
            estimate = char_functional_mc(ensemble, t, h)
            analytic = char_functional_analytic(config.kernel, sigma, config.noise, t, h)
            rows.append(
                [index] + [float(v) for v in h]
                + [estimate.value.real, estimate.value.imag, estimate.stderr,
                   analytic.real, analytic.imag, abs(estimate.value - analytic)]
            )
        header = {**self.header(config), "t": t, "noise": config.noise.name}
        return {"charfn": write_table(config.out_dir / "charfn.csv", columns, rows, header)}
