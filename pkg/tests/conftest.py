import json

import numpy as np
import pytest

from hambit.core.hilbert import LinearMap
from hambit.core.kernels import ConstantKernel, ExponentialKernel, KernelComponent, KernelSpec


def scalar_kernel(g) -> KernelSpec:
    """One-dimensional kernel Gamma(t, s)(sigma) = sigma g(t, s)"""
    return KernelSpec((KernelComponent(0, g, LinearMap([[1.0]])),), 1)


@pytest.fixture
def ou_kernel():
    return scalar_kernel(ExponentialKernel(1.0))


@pytest.fixture
def unit_kernel():
    return scalar_kernel(ConstantKernel(1.0))


@pytest.fixture
def base_document():
    """A valid 1-dim run config: exponential kernel, unit volatility, standard Wiener noise"""
    return {
        "spaces": {"dim_u": 1, "dim_v": 1, "dim_h": 1},
        "kernel": {"components": [{"phi": 0, "g": {"type": "exponential", "kappa": 1.0}, "B": [[1.0]]}]},
        "volatility": {"type": "constant", "sigma0": [1.0]},
        "noise": {"type": "wiener", "eigenvalues": [1.0]},
        "grid": {"dt": 0.125, "dx": 0.125, "n_steps": 8, "n_nodes": 4},
        "seed": 5,
        "n_paths": 20,
    }


@pytest.fixture
def write_config(tmp_path):
    """Write a config document to a file and return its path"""
    def _write(document, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
