"""
Finite difference scheme for dY = d/dx Y dt + beta(t) dL(t)

    y_j^{n+1} = lam y_{j+1}^n + (1 - lam) y_j^n + beta_j^n(dL^n),   lam = dt/dx <= 1

The boundary value y_0^n approximates the Hambit field X(t_n) when
beta(t) = Gamma(t + ., t)(sigma(t)) and Y_0 = 0. The internal grid carries J + N
intervals; every step consumes the rightmost node, so after N steps the output
nodes 0..J are still defined.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional

import numpy as np
from scipy.stats import binom

from hambit.core.errors import GridExhausted
from hambit.core.hilbert import (
    GridFunction,
    WeightFunction,
    apply_T_power_binomial,
    check_cfl,
    evaluate,
    hw_norm,
)
from hambit.core.kernels import KernelSpec, VolatilityModel, VolatilityPaths
from hambit.core.noise import IncrementBatch, LevySpec
from hambit.core.simulate import PathEnsemble, prepare_drivers

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FDConfig:
    dt: float
    dx: float
    N: int
    J: int

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if self.N < 1 or self.J < 1:
            raise ValueError(f"need N >= 1 and J >= 1, got N={self.N}, J={self.J}")
        check_cfl(self.dt, self.dx)

    @property
    def lam(self) -> float:
        return check_cfl(self.dt, self.dx)

    @property
    def horizon(self) -> float:
        return self.N * self.dt

    @property
    def t_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.N + 1)

    @property
    def internal_nodes(self) -> np.ndarray:
        return self.dx * np.arange(self.J + self.N + 1)

    @property
    def output_nodes(self) -> np.ndarray:
        return self.dx * np.arange(self.J + 1)


@dataclass(frozen=True)
class SchemeState:
    """y_j^n on the active nodes j = 0..active-1"""

    n: int
    values: np.ndarray = field(repr=False)

    @property
    def active(self) -> int:
        return self.values.shape[-2]


@dataclass(frozen=True)
class FDResult:
    t_grid: np.ndarray
    boundary: np.ndarray = field(repr=False)
    final: np.ndarray = field(repr=False)
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    metadata: Dict[str, object] = field(default_factory=dict)

    def boundary_ensemble(self) -> PathEnsemble:
        return PathEnsemble(self.t_grid, self.boundary, dict(self.metadata))


def beta_field(kernel: KernelSpec, t: float, x: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """beta(t) at nodes x: Gamma(t + x_j, t)(sigma), shape (..., nodes, H, V)"""
    weights = kernel.weights(t + np.asarray(x, dtype=float), t)
    sigma_phi = np.asarray(sigma, dtype=float)[..., kernel.phi()]
    return np.einsum("...c,jc,chv->...jhv", sigma_phi, weights, kernel.stacked_B())


def _beta_increment(kernel: KernelSpec, t: float, x: np.ndarray, sigma: np.ndarray,
                    dL: np.ndarray) -> np.ndarray:
    """beta_j(dL) for every path without forming the operators, shape (P, nodes, H)"""
    weights = kernel.weights(t + x, t)
    BdL = np.einsum("chv,pv->pch", kernel.stacked_B(), dL)
    return np.einsum("pc,jc,pch->pjh", sigma[:, kernel.phi()], weights, BdL)


def _advance(values: np.ndarray, noise_term: np.ndarray, lam: float) -> np.ndarray:
    return (1.0 - lam) * values[..., :-1, :] + lam * values[..., 1:, :] + noise_term[..., : values.shape[-2] - 1, :]


def step(state: SchemeState, beta_row: np.ndarray, dL: np.ndarray, config: FDConfig) -> SchemeState:
    """One scheme step; the active range loses its rightmost node"""
    lam = config.lam
    if state.active - 1 < config.J + 1:
        raise GridExhausted(
            f"step {state.n}: only {state.active} active nodes left, output needs {config.J + 1}"
        )
    beta_row = np.asarray(beta_row, dtype=float)
    if beta_row.shape[-3] < state.active - 1:
        raise GridExhausted(f"beta row covers {beta_row.shape[-3]} nodes, step needs {state.active - 1}")
    noise_term = np.einsum("...jhv,...v->...jh", beta_row, np.asarray(dL, dtype=float))
    return SchemeState(state.n + 1, _advance(state.values, noise_term, lam))


def _initial_values(config: FDConfig, y0: Optional[GridFunction], dim_h: int) -> np.ndarray:
    nodes = config.internal_nodes
    if y0 is None:
        return np.zeros((nodes.size, dim_h))
    if y0.dim != dim_h:
        raise ValueError(f"initial curve has dimension {y0.dim}, H has {dim_h}")
    return np.stack([evaluate(y0, x) for x in nodes])


def run(
    config: FDConfig,
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    seed: int,
    y0: Optional[GridFunction] = None,
    n_paths: int = 1,
    increments: Optional[IncrementBatch] = None,
    sigma_paths: Optional[VolatilityPaths] = None,
    snapshots: Iterable[int] = (),
    coupling: str = "independent",
    executor=None,
) -> FDResult:
    """March the scheme N steps on every path and collect the boundary path y_0^n"""
    lam = config.lam
    increments, sigma_paths = prepare_drivers(
        kernel, vol, noise, config.dt, config.N, n_paths, seed, increments, sigma_paths, coupling, executor
    )
    wanted = sorted(set(int(n) for n in snapshots))
    if any(n < 0 or n > config.N for n in wanted):
        raise ValueError(f"snapshot indices must lie in 0..{config.N}")
    x = config.internal_nodes
    t_grid = config.t_grid
    start = _initial_values(config, y0, kernel.dim_h)

    def block(index: int, paths: slice):
        P = paths.stop - paths.start
        values = np.broadcast_to(start, (P,) + start.shape).copy()
        boundary = np.empty((P, config.N + 1, kernel.dim_h))
        boundary[:, 0] = values[:, 0]
        frames = [values.copy()] if 0 in wanted else []
        for n in range(config.N):
            active = values.shape[1]
            noise_term = _beta_increment(kernel, t_grid[n], x[: active - 1],
                                         sigma_paths.data[paths, n], increments.data[paths, n])
            values = _advance(values, noise_term, lam)
            boundary[:, n + 1] = values[:, 0]
            if n + 1 in wanted:
                frames.append(values.copy())
        return (boundary, values) + tuple(frames)

    if executor is not None:
        parts = executor.map_blocks(block, increments.n_paths)
    else:
        parts = block(0, slice(0, increments.n_paths))
    boundary, final = parts[0], parts[1]
    metadata = {"route": "fd", "seed": seed, "dt": config.dt, "dx": config.dx, **sigma_paths.metadata()}
    logger.debug("fd scheme: %d paths, N=%d, J=%d, lambda=%g", boundary.shape[0], config.N, config.J, lam)
    return FDResult(t_grid, boundary, final[:, : config.J + 1], dict(zip(wanted, parts[2:])), metadata)


def run_iterative_form(
    config: FDConfig,
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    seed: int,
    y0: Optional[GridFunction] = None,
    n_paths: int = 1,
    increments: Optional[IncrementBatch] = None,
    sigma_paths: Optional[VolatilityPaths] = None,
    coupling: str = "independent",
) -> FDResult:
    """The same approximation as T^n Y_0 + sum_i T^{n-1-i} beta_i(dL^i) with operator powers"""
    increments, sigma_paths = prepare_drivers(
        kernel, vol, noise, config.dt, config.N, n_paths, seed, increments, sigma_paths, coupling
    )
    x = config.internal_nodes
    t_grid = config.t_grid
    start = GridFunction(config.dx, _initial_values(config, y0, kernel.dim_h))
    P = increments.n_paths
    boundary = np.empty((P, config.N + 1, kernel.dim_h))
    final = np.empty((P, config.J + 1, kernel.dim_h))
    for p in range(P):
        sources = [
            GridFunction(config.dx, _beta_increment(kernel, t_grid[i], x, sigma_paths.data[p : p + 1, i],
                                                    increments.data[p : p + 1, i])[0])
            for i in range(config.N)
        ]
        current = start
        for n in range(config.N + 1):
            total = apply_T_power_binomial(start, config.dt, n).values.copy()
            for i in range(n):
                total += apply_T_power_binomial(sources[i], config.dt, n - 1 - i).values
            current = start.with_values(total)
            boundary[p, n] = current.values[0]
        final[p] = current.values[: config.J + 1]
    metadata = {"route": "fd_iterative", "seed": seed, "dt": config.dt, "dx": config.dx}
    return FDResult(t_grid, boundary, final, {}, metadata)


def exact_mild_reference(
    config: FDConfig,
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    seed: int,
    y0: Optional[GridFunction] = None,
    n_paths: int = 1,
    increments: Optional[IncrementBatch] = None,
    sigma_paths: Optional[VolatilityPaths] = None,
    coupling: str = "independent",
    executor=None,
) -> FDResult:
    """Discretized mild solution S_{t_n} Y_0 + sum_{i<n} S_{t_n - t_{i+1}} beta_i(dL^i)

    Shifts are exact: the kernel is evaluated at Gamma(t_i + x + t_n - t_{i+1}, t_i).
    At the boundary this is the direct quadrature with the first argument moved back
    by one step.
    """
    increments, sigma_paths = prepare_drivers(
        kernel, vol, noise, config.dt, config.N, n_paths, seed, increments, sigma_paths, coupling, executor
    )
    t_grid = config.t_grid
    x_out = config.output_nodes
    N = config.N
    phi = kernel.phi()

    def shifted_initial(x: np.ndarray, t: float) -> np.ndarray:
        if y0 is None:
            return np.zeros((x.size, kernel.dim_h))
        return np.stack([evaluate(y0, xi + t) for xi in x])

    def block(index: int, paths: slice):
        sigma_phi = sigma_paths.data[paths, :N][:, :, phi]
        BdL = np.einsum("chv,piv->pich", kernel.stacked_B(), increments.data[paths, :N])
        P = sigma_phi.shape[0]
        boundary = np.empty((P, N + 1, kernel.dim_h))
        for n in range(N + 1):
            s = t_grid[:n]
            lag = t_grid[n] - t_grid[1 : n + 1]
            weights = kernel.weights(s + lag, s)
            boundary[:, n] = shifted_initial(np.zeros(1), t_grid[n])[0]
            if n:
                boundary[:, n] += np.einsum("pic,ic,pich->ph", sigma_phi[:, :n], weights, BdL[:, :n])
        s = t_grid[:N]
        lag = t_grid[N] - t_grid[1 : N + 1]
        weights = kernel.weights(s[:, None] + x_out[None, :] + lag[:, None], s[:, None])
        final = shifted_initial(x_out, t_grid[N])[None] + np.einsum("pic,ijc,pich->pjh", sigma_phi, weights, BdL)
        return boundary, final

    if executor is not None:
        boundary, final = executor.map_blocks(block, increments.n_paths)
    else:
        boundary, final = block(0, slice(0, increments.n_paths))
    metadata = {"route": "mild_reference", "seed": seed, "dt": config.dt, "dx": config.dx}
    return FDResult(t_grid, boundary, final, {}, metadata)


@dataclass(frozen=True)
class VarianceIdentity:
    lhs: float
    rhs: float


def binomial_variance_identity(m: int, dt: float, dx: float) -> VarianceIdentity:
    """sum_k C(m,k) lam^k (1-lam)^(m-k) (k dx - t)^2 against t (dx - dt), t = m dt"""
    lam = check_cfl(dt, dx)
    t = m * dt
    ks = np.arange(m + 1)
    lhs = float(np.sum(binom.pmf(ks, m, lam) * (ks * dx - t) ** 2))
    return VarianceIdentity(lhs=lhs, rhs=t * (dx - dt))


def _binomial_mixture(values: np.ndarray, lam: float, m: int, stride: int) -> np.ndarray:
    """T^m on a grid where one dx is `stride` nodes; requires m * stride spare nodes"""
    out = np.zeros((values.shape[0] - m * stride,) + values.shape[1:])
    n = out.shape[0]
    for k, weight in enumerate(binom.pmf(np.arange(m + 1), m, lam)):
        out += weight * values[k * stride : k * stride + n]
    return out


def transport_error_sq(profile: Callable[[np.ndarray], np.ndarray], weight: WeightFunction,
                       dt: float, dx: float, m: int, n_nodes: int) -> float:
    """||T^m zeta - S_t zeta||_w^2 on nodes 0..n_nodes for a sampled profile zeta, t = m dt"""
    lam = check_cfl(dt, dx)
    t = m * dt
    nodes = dx * np.arange(n_nodes + m + 1)
    sampled = np.asarray(profile(nodes), dtype=float).reshape(nodes.size, -1)
    approx = _binomial_mixture(sampled, lam, m, 1)
    exact = np.asarray(profile(nodes[: n_nodes + 1] + t), dtype=float).reshape(n_nodes + 1, -1)
    return hw_norm(GridFunction(dx, approx - exact), weight) ** 2


@dataclass(frozen=True)
class InitialErrorReport:
    """Norms on a refined grid: |T^m Y0~ - S_t Y0|, |Y0~ - Y0| and |T^m Y0 - S_t Y0|"""

    lhs: float
    interpolation_error: float
    transport_error: float


def initial_condition_error(profile: Callable[[np.ndarray], np.ndarray], weight: WeightFunction,
                            dt: float, dx: float, m: int, n_nodes: int, refine: int = 8) -> InitialErrorReport:
    """Compare the scheme's transport of the interpolated initial curve with the exact shift"""
    lam = check_cfl(dt, dx)
    t = m * dt
    h = dx / refine
    extent = (n_nodes + m) * refine
    fine = h * np.arange(extent + 1)
    coarse = dx * np.arange(n_nodes + m + 1)
    exact = np.asarray(profile(fine), dtype=float).reshape(fine.size, -1)
    coarse_values = np.asarray(profile(coarse), dtype=float).reshape(coarse.size, -1)
    interpolated = np.stack([np.interp(fine, coarse, coarse_values[:, d]) for d in range(exact.shape[1])], axis=1)
    target = np.asarray(profile(fine[: n_nodes * refine + 1] + t), dtype=float).reshape(-1, exact.shape[1])
    moved = _binomial_mixture(interpolated, lam, m, refine)
    moved_exact = _binomial_mixture(exact, lam, m, refine)
    return InitialErrorReport(
        lhs=hw_norm(GridFunction(h, moved - target), weight),
        interpolation_error=hw_norm(GridFunction(h, interpolated - exact), weight),
        transport_error=hw_norm(GridFunction(h, moved_exact - target), weight),
    )
