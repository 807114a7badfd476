"""
Experiment registry for hambit.

Every concrete ExperimentPlugin under hambit.plugins becomes a CLI
subcommand named after the plugin.
"""

import importlib
import inspect
import logging
import pkgutil
from typing import Dict, Optional

from hambit.plugins.base import ExperimentPlugin

logger = logging.getLogger(__name__)


class PluginManager:
    """Registry of experiments keyed by subcommand name."""

    def __init__(self):
        self.plugins: Dict[str, ExperimentPlugin] = {}
        self._load_plugins()

    def _load_plugins(self):
        """Import each hambit.plugins module and register its experiment classes.

        A module that fails to import is logged and skipped.
        """
        import hambit.plugins

        prefix = hambit.plugins.__name__ + "."
        for _, modname, _ in pkgutil.iter_modules(hambit.plugins.__path__, prefix):
            if modname == "hambit.plugins.base":
                continue
            try:
                module = importlib.import_module(modname)
            except Exception as e:
                logger.error("failed to load experiment module %s: %s", modname, e)
                continue
            for _, obj in inspect.getmembers(module, inspect.isclass):
                if issubclass(obj, ExperimentPlugin) and obj is not ExperimentPlugin and not inspect.isabstract(obj):
                    experiment = obj()
                    self.plugins[experiment.name] = experiment
                    logger.debug("registered experiment: %s", experiment.name)

    def get_plugin(self, name: str) -> Optional[ExperimentPlugin]:
        """The experiment run by subcommand `name`, or None"""
        return self.plugins.get(name)

    def get_all_plugins(self) -> Dict[str, ExperimentPlugin]:
        """Registered experiments in subcommand order"""
        return dict(sorted(self.plugins.items()))
