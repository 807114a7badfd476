import numpy as np
import pytest

from hambit.core.errors import ConfigError, OutputError, SingularGramError
from hambit.executors.ensemble_executor import EnsembleExecutor


def test_blocks_keep_path_order():
    executor = EnsembleExecutor(threads=4, block_size=3)
    result = executor.map_blocks(lambda index, paths: np.arange(paths.start, paths.stop), 10)
    np.testing.assert_array_equal(result, np.arange(10))


def test_tuple_results_concatenate_elementwise():
    executor = EnsembleExecutor(threads=2, block_size=4)

    def block(index, paths):
        size = paths.stop - paths.start
        return np.full(size, index), np.ones((size, 2))

    labels, ones = executor.map_blocks(block, 9)
    np.testing.assert_array_equal(labels, [0, 0, 0, 0, 1, 1, 1, 1, 2])
    assert ones.shape == (9, 2)


def test_invalid_thread_count():
    with pytest.raises(ValueError):
        EnsembleExecutor(threads=0)
    assert EnsembleExecutor().threads >= 1


def test_run_reports_success(tmp_path):
    result = EnsembleExecutor(threads=1).run(lambda: {"table": tmp_path / "t.csv"})
    assert result["success"]
    assert result["exit_code"] == 0
    assert result["outputs"] == {"table": tmp_path / "t.csv"}


@pytest.mark.parametrize("error, code", [
    (ConfigError("grid.dt", "too large"), 2),
    (SingularGramError(3.2e13, 1e12), 3),
    (OutputError("out/x.csv", "disk full"), 4),
    (np.linalg.LinAlgError("not positive definite"), 3),
])
def test_run_maps_failures_to_exit_codes(error, code):
    def task():
        raise error

    result = EnsembleExecutor(threads=1).run(task)
    assert not result["success"]
    assert result["exit_code"] == code
    assert result["outputs"] == {}
    assert result["error"]


def test_unexpected_errors_propagate():
    def task():
        raise KeyError("bug")

    with pytest.raises(KeyError):
        EnsembleExecutor(threads=1).run(task)


def test_threaded_blocks_match_serial():
    def block(index, paths):
        return np.full(paths.stop - paths.start, float(index)) + np.arange(paths.start, paths.stop)

    serial = EnsembleExecutor(threads=1, block_size=5).map_blocks(block, 23)
    threaded = EnsembleExecutor(threads=3, block_size=5).map_blocks(block, 23)
    np.testing.assert_array_equal(serial, threaded)
