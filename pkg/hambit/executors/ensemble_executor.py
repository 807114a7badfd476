"""
Ensemble Executor - Runs path blocks of a Monte Carlo ensemble in parallel
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from hambit.core.errors import HambitError
from hambit.core.rng import PATH_BLOCK, path_blocks

logger = logging.getLogger(__name__)


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


class EnsembleExecutor:
    """Maps block functions over fixed path blocks and reassembles them in order"""

    def __init__(self, threads: Optional[int] = None, block_size: int = PATH_BLOCK):
        if threads is not None and threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = threads or default_threads()
        self.block_size = block_size

    def map_blocks(self, fn: Callable[[int, slice], Any], n_paths: int, axis: int = 0) -> Any:
        """Evaluate fn(block_index, path_slice) for every block

        Array results are concatenated along `axis`; tuples of arrays are
        concatenated element-wise. Block order, not completion order, decides
        the layout of the result.
        """
        blocks = list(path_blocks(n_paths, self.block_size))
        if self.threads == 1 or len(blocks) == 1:
            parts = [fn(index, paths) for index, paths in blocks]
        else:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(blocks))) as pool:
                futures = [pool.submit(fn, index, paths) for index, paths in blocks]
                parts = [future.result() for future in futures]
        logger.debug("evaluated %d path blocks on %d threads", len(blocks), self.threads)
        return _concatenate(parts, axis)

    def run(self, task: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        """Run an experiment task and report it as a result dictionary"""
        try:
            outputs = task()
            return {"success": True, "error": "", "outputs": outputs, "exit_code": 0}
        except HambitError as e:
            return {"success": False, "error": str(e), "outputs": {}, "exit_code": e.exit_code}
        except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as e:
            return {"success": False, "error": f"Numerical failure: {e}", "outputs": {}, "exit_code": 3}


def _concatenate(parts: List[Any], axis: int) -> Any:
    if isinstance(parts[0], tuple):
        return tuple(_concatenate(list(items), axis) for items in zip(*parts))
    return np.concatenate(parts, axis=axis)
