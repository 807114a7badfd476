"""
Base class for all experiment plugins in Hambit.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List

from hambit.core.config import RunConfig
from hambit.executors.ensemble_executor import EnsembleExecutor


class ExperimentPlugin(ABC):
    """
    Abstract base class for an experiment plugin.

    Each plugin backs one CLI subcommand: it consumes a validated RunConfig and
    writes its CSV outputs into the run's output directory.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """The subcommand name, e.g., 'simulate'."""
        pass

    @property
    def description(self) -> str:
        return ""

    @property
    def required_sections(self) -> List[str]:
        """Config sections that must be present before this experiment runs."""
        return []

    def header(self, config: RunConfig) -> Dict[str, Any]:
        """Metadata written at the top of every output file."""
        return {
            "command": self.name,
            "config_hash": config.config_hash,
            "seed": config.seed,
            "n_paths": config.n_paths,
        }

    @abstractmethod
    def run(self, config: RunConfig, executor: EnsembleExecutor) -> Dict[str, Path]:
        """
        Runs the experiment and returns the written files keyed by output name.
        """
        pass
