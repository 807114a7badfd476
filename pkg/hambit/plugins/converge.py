"""
Convergence Experiment Plugin for Hambit
"""

import logging
from pathlib import Path
from typing import Dict, List

from hambit.core.analysis import convergence_study, emit_report
from hambit.core.config import RunConfig
from hambit.executors.ensemble_executor import EnsembleExecutor
from .base import ExperimentPlugin

logger = logging.getLogger(__name__)


class ConvergeExperiment(ExperimentPlugin):
    """
    Mean-square error of the FD scheme over a ladder of (dx, dt) levels.
    """

    @property
    def name(self) -> str:
        return "converge"

    @property
    def description(self) -> str:
        return "scheme error against the mild solution over refinement levels, with a fitted rate"

    @property
    def required_sections(self) -> List[str]:
        return ["convergence"]

    def run(self, config: RunConfig, executor: EnsembleExecutor) -> Dict[str, Path]:
        table = convergence_study(
            config.grid,
            config.levels,
            config.kernel,
            config.volatility,
            config.noise,
            config.n_paths,
            config.seed,
            weight=config.weight,
            reference=config.reference,
            coupling=config.coupling,
            executor=executor,
        )
        if table.fit is not None:
            logger.info("fitted slope %.3f against %s (r^2 %.3f)", table.fit.slope, table.fit.predictor,
                        table.fit.r_squared)
        return {"convergence": emit_report(table, config.out_dir / "convergence.csv", self.header(config))}
