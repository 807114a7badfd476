"""
Square-integrable zero-mean Levy noise in coordinates of V

Two laws are supported: a Q-Wiener process and a compound Poisson process with
mean-zero Gaussian jumps (already a martingale, so no compensator is needed).
Coordinates are taken in the eigenbasis of the covariance operator.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from hambit.core.errors import DimensionError
from hambit.core.hilbert import CovarianceOp
from hambit.core.rng import NOISE_STREAM, path_blocks, stream

logger = logging.getLogger(__name__)


class LevySpec(ABC):
    """Law of the driving Levy process L"""

    @property
    @abstractmethod
    def name(self) -> str:
        pass

    @property
    @abstractmethod
    def dim(self) -> int:
        pass

    @abstractmethod
    def covariance(self) -> CovarianceOp:
        """Covariance operator of L(1)"""

    @abstractmethod
    def log_characteristic(self, v: np.ndarray) -> np.ndarray:
        """Cumulant of L(1) at v, vectorized over leading axes of v"""

    @abstractmethod
    def draw(self, rng: np.random.Generator, dt: float, n_paths: int, n_steps: int) -> np.ndarray:
        """Independent increments L(dt) of shape (n_paths, n_steps, dim)"""


@dataclass(frozen=True)
class WienerNoise(LevySpec):
    q: CovarianceOp

    @property
    def name(self) -> str:
        return "wiener"

    @property
    def dim(self) -> int:
        return self.q.dim

    def covariance(self) -> CovarianceOp:
        return self.q

    def log_characteristic(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return -0.5 * np.sum(self.q.eigenvalues * v * v, axis=-1)

    def draw(self, rng: np.random.Generator, dt: float, n_paths: int, n_steps: int) -> np.ndarray:
        z = rng.standard_normal((n_paths, n_steps, self.dim))
        return z * np.sqrt(self.q.eigenvalues * dt)


@dataclass(frozen=True)
class CompoundPoissonNoise(LevySpec):
    """Compound Poisson process with N(0, jump_cov) jumps"""

    intensity: float
    jump_cov: CovarianceOp

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError(f"jump intensity must be nonnegative, got {self.intensity}")

    @property
    def name(self) -> str:
        return "compound_poisson"

    @property
    def dim(self) -> int:
        return self.jump_cov.dim

    def covariance(self) -> CovarianceOp:
        return self.jump_cov.scaled(self.intensity)

    def log_characteristic(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        quad = np.sum(self.jump_cov.eigenvalues * v * v, axis=-1)
        return self.intensity * np.expm1(-0.5 * quad)

    def draw(self, rng: np.random.Generator, dt: float, n_paths: int, n_steps: int) -> np.ndarray:
        counts = rng.poisson(self.intensity * dt, size=(n_paths, n_steps))
        z = rng.standard_normal((n_paths, n_steps, self.dim))
        # A sum of n iid N(0, S) jumps is N(0, n S).
        return z * np.sqrt(counts[..., None] * self.jump_cov.eigenvalues)


@dataclass(frozen=True)
class IncrementBatch:
    """Increments Delta L^n for every (path, step)"""

    dt: float
    data: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def paths(self, selection: slice) -> IncrementBatch:
        return IncrementBatch(self.dt, self.data[selection])


def sample_increments(
    spec: LevySpec,
    dt: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    tag: int = NOISE_STREAM,
    executor=None,
) -> IncrementBatch:
    """Exact increments of L over n_steps steps of size dt for n_paths paths"""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if n_steps < 0 or n_paths < 1:
        raise ValueError(f"need n_steps >= 0 and n_paths >= 1, got {n_steps}, {n_paths}")

    def block(index: int, paths: slice) -> np.ndarray:
        rng = stream(seed, tag, index)
        return spec.draw(rng, dt, paths.stop - paths.start, n_steps)

    if executor is not None:
        data = executor.map_blocks(block, n_paths)
    else:
        data = np.concatenate([block(i, sl) for i, sl in path_blocks(n_paths)], axis=0)
    logger.debug("sampled %s increments: %d paths x %d steps, dt=%g", spec.name, n_paths, n_steps, dt)
    return IncrementBatch(dt, data)


def aggregate_increments(batch: IncrementBatch, factor: int) -> IncrementBatch:
    """Sum consecutive groups of `factor` increments onto a coarser nested grid"""
    if factor < 1 or batch.n_steps % factor:
        raise ValueError(f"cannot aggregate {batch.n_steps} steps in groups of {factor}")
    if factor == 1:
        return batch
    shape = (batch.n_paths, batch.n_steps // factor, factor, batch.dim)
    return IncrementBatch(batch.dt * factor, batch.data.reshape(shape).sum(axis=2))


def cumulant(spec: LevySpec, v: np.ndarray) -> complex:
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.dim,):
        raise DimensionError(f"vector of shape {v.shape} does not match noise dimension {spec.dim}")
    return complex(spec.log_characteristic(v))


def covariance_of(spec: LevySpec) -> CovarianceOp:
    return spec.covariance()


def build_noise(section: dict) -> LevySpec:
    """Construct a LevySpec from a validated config section"""
    kind = section["type"]
    if kind == "wiener":
        return WienerNoise(CovarianceOp(section["eigenvalues"]))
    if kind == "compound_poisson":
        return CompoundPoissonNoise(float(section["intensity"]), CovarianceOp(section["jump_eigenvalues"]))
    raise ValueError(f"unknown noise type {kind!r}")


def empirical_characteristic(increments: np.ndarray, v: np.ndarray) -> tuple:
    """Sample mean of exp(i(v, dL)) over paths with its standard error"""
    samples = np.exp(1j * (increments @ np.asarray(v, dtype=float)))
    n = samples.size
    if n < 2:
        return complex(samples.mean()), 0.0
    stderr = float(np.sqrt((samples.real.var(ddof=1) + samples.imag.var(ddof=1)) / n))
    return complex(samples.mean()), stderr
