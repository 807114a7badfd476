"""
Coordinate Hilbert spaces and the weighted function space H_w

The spaces U, V and H are realized in their standard coordinate basis. Functions of
the forward variable x >= 0 live on a uniform grid with linear interpolation between
nodes and a flat extension beyond the last node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.stats import binom

from hambit.core.errors import CFLViolation, DimensionError

# Relative slack when comparing dt against dx.
CFL_TOLERANCE = 1e-12
# Eigenvalues below this (relative to the largest) are treated as zero.
EIGEN_CLIP = 1e-12


@dataclass(frozen=True)
class CoordinateSpace:
    """Finite truncation of a separable Hilbert space"""

    dim: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise DimensionError(f"space dimension must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class LinearMap:
    """Bounded operator between coordinate spaces, stored as a matrix"""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if entries.ndim != 2:
            raise DimensionError(f"linear map must be a matrix, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("linear map entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def adjoint(self) -> LinearMap:
        return LinearMap(self.entries.T)

    def op_norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))

    @classmethod
    def identity(cls, dim: int) -> LinearMap:
        return cls(np.eye(dim))


@dataclass(frozen=True)
class CovarianceOp:
    """Covariance operator diagonal in the coordinate basis"""

    eigenvalues: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        if values.ndim != 1 or values.size == 0:
            raise DimensionError("covariance eigenvalues must be a nonempty vector")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("covariance eigenvalues must be finite and nonnegative")
        object.__setattr__(self, "eigenvalues", values)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    def sqrt_diagonal(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    def matrix(self) -> np.ndarray:
        return np.diag(self.eigenvalues)

    def scaled(self, factor: float) -> CovarianceOp:
        return CovarianceOp(factor * self.eigenvalues)

    @classmethod
    def identity(cls, dim: int) -> CovarianceOp:
        return cls(np.ones(dim))


@dataclass(frozen=True)
class WeightFunction:
    """Exponential weight w(x) = exp(alpha x) of the Filipovic space"""

    alpha: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"weight alpha must be positive, got {self.alpha}")

    def __call__(self, x: Union[float, np.ndarray]) -> np.ndarray:
        return np.exp(self.alpha * np.asarray(x, dtype=float))

    @property
    def c_squared(self) -> float:
        """Integral of 1/w over the half line"""
        return 1.0 / self.alpha


@dataclass(frozen=True)
class GridFunction:
    """H-valued function sampled at x_j = j * delta_x, j = 0..J"""

    delta_x: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.delta_x > 0:
            raise ValueError(f"grid step must be positive, got {self.delta_x}")
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 2:
            raise DimensionError(f"grid function needs at least two nodes, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_intervals(self) -> int:
        """J, the index of the last node"""
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> np.ndarray:
        return self.delta_x * np.arange(self.values.shape[0])

    def with_values(self, values: np.ndarray) -> GridFunction:
        return GridFunction(self.delta_x, values)

    @classmethod
    def sample(cls, profile, delta_x: float, n_intervals: int) -> GridFunction:
        """Sample a callable x -> H-vector(s) at the grid nodes"""
        nodes = delta_x * np.arange(n_intervals + 1)
        return cls(delta_x, np.asarray(profile(nodes), dtype=float))


@dataclass(frozen=True)
class SpaceConstants:
    c_squared: float
    shift_bound: float
    eval_bound: float


def check_cfl(dt: float, dx: float) -> float:
    """Return lambda = dt/dx, raising when the CFL condition fails"""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if dt > dx * (1.0 + CFL_TOLERANCE):
        raise CFLViolation(dt, dx)
    return min(dt / dx, 1.0)


def hs_norm_with_root(A: Union[LinearMap, np.ndarray], Q: CovarianceOp) -> float:
    """Hilbert-Schmidt norm of A Q^{1/2}"""
    entries = A.entries if isinstance(A, LinearMap) else np.atleast_2d(np.asarray(A, dtype=float))
    if entries.shape[1] != Q.dim:
        raise DimensionError(f"operator has {entries.shape[1]} columns but Q has dimension {Q.dim}")
    return float(np.linalg.norm(entries * Q.sqrt_diagonal()[None, :]))


def shift(f: GridFunction, k: int) -> GridFunction:
    """Apply the right shift by k grid steps with flat extension"""
    if k < 0:
        raise ValueError(f"shift must be nonnegative, got {k}")
    idx = np.minimum(np.arange(f.values.shape[0]) + int(k), f.n_intervals)
    return f.with_values(f.values[idx])


def hw_inner(f: GridFunction, g: GridFunction, w: WeightFunction) -> float:
    """Discrete inner product of H_w (forward differences, left-endpoint weights)"""
    if f.values.shape != g.values.shape or f.delta_x != g.delta_x:
        raise DimensionError("grid functions live on different grids")
    dx = f.delta_x
    df = np.diff(f.values, axis=0) / dx
    dg = np.diff(g.values, axis=0) / dx
    weights = w(f.nodes[:-1])
    return float(f.values[0] @ g.values[0] + np.sum(weights * np.sum(df * dg, axis=1)) * dx)


def hw_norm(f: GridFunction, w: WeightFunction) -> float:
    return float(np.sqrt(max(hw_inner(f, f, w), 0.0)))


def evaluate(f: GridFunction, x: float) -> np.ndarray:
    """Evaluation map delta_x: linear interpolation, flat beyond the last node"""
    if x < 0:
        raise ValueError(f"evaluation point must be nonnegative, got {x}")
    position = x / f.delta_x
    j = int(np.floor(position))
    if j >= f.n_intervals:
        return f.values[-1].copy()
    theta = position - j
    if theta == 0.0:
        return f.values[j].copy()
    return (1.0 - theta) * f.values[j] + theta * f.values[j + 1]


def apply_T(f: GridFunction, dt: float) -> GridFunction:
    """One step of T = I + (dt/dx)(S_dx - I)"""
    lam = check_cfl(dt, f.delta_x)
    return f.with_values((1.0 - lam) * f.values + lam * shift(f, 1).values)


def apply_T_power_binomial(f: GridFunction, dt: float, m: int) -> GridFunction:
    """T^m f as the binomial mixture of shifts sum_k C(m,k) lam^k (1-lam)^(m-k) S_k f"""
    lam = check_cfl(dt, f.delta_x)
    if m < 0:
        raise ValueError(f"power must be nonnegative, got {m}")
    ks = np.arange(m + 1)
    weights = binom.pmf(ks, m, lam)
    J = f.n_intervals
    nodes = np.arange(J + 1)
    out = np.zeros_like(f.values)
    for k, weight in zip(ks, weights):
        if weight == 0.0:
            continue
        out += weight * f.values[np.minimum(nodes + k, J)]
    return f.with_values(out)


def space_constants(w: WeightFunction) -> SpaceConstants:
    c2 = w.c_squared
    return SpaceConstants(
        c_squared=c2,
        shift_bound=float(np.sqrt(2.0 * (1.0 + c2))),
        eval_bound=float(np.sqrt(2.0 * max(1.0, c2))),
    )


def representer_hx(x: float, w: WeightFunction, grid: GridFunction) -> GridFunction:
    """Reproducing element h_x(y) = 1 + (1 - exp(-alpha min(x, y))) / alpha on the grid"""
    if x < 0:
        raise ValueError(f"evaluation point must be nonnegative, got {x}")
    y = np.minimum(grid.nodes, x)
    return GridFunction(grid.delta_x, 1.0 + (1.0 - np.exp(-w.alpha * y)) / w.alpha)


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root with eigenvalues clipped at zero, descending order"""
    matrix = np.asarray(matrix, dtype=float)
    sym = 0.5 * (matrix + np.swapaxes(matrix, -1, -2))
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    eigenvalues = eigenvalues[..., ::-1]
    eigenvectors = eigenvectors[..., ::-1]
    scale = np.maximum(np.abs(eigenvalues).max(axis=-1, keepdims=True), 1.0)
    eigenvalues = np.where(eigenvalues < EIGEN_CLIP * scale, 0.0, eigenvalues)
    root = eigenvectors * np.sqrt(eigenvalues)[..., None, :]
    return root @ np.swapaxes(eigenvectors, -1, -2)
