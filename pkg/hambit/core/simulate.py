"""
Routes to the Hambit field X(t) = int_0^t Gamma(t,s)(sigma(s)) dL(s)

Direct left-point quadrature (the oracle), the truncated series representation,
finite-dimensional projections, and the covariance and characteristic-functional
calculators checked against them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import quad_vec

from hambit.core.errors import ComputationError, CouplingError, DimensionError, SingularGramError
from hambit.core.hilbert import CovarianceOp, psd_sqrt
from hambit.core.kernels import (
    KernelSpec,
    VolatilityModel,
    VolatilityPaths,
    eval_gamma,
    gamma_op_bound,
    sample_volatility,
)
from hambit.core.noise import IncrementBatch, LevySpec, sample_increments

logger = logging.getLogger(__name__)

GRAM_CONDITION_LIMIT = 1e12
GRID_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PathEnsemble:
    """Sample paths X_p(t) on t_grid, data indexed (path, time, H-coordinate)"""

    t_grid: np.ndarray
    data: np.ndarray = field(repr=False)
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    def index_of(self, t: float) -> int:
        return grid_index(self.t_grid, t)

    def at(self, t: float) -> np.ndarray:
        return self.data[:, self.index_of(t)]


@dataclass(frozen=True)
class TruncationLevels:
    N: int
    M: int
    K: int

    def validate(self, dim_u: int, dim_v: int, dim_h: int):
        for name, level, dim in (("N", self.N, dim_u), ("M", self.M, dim_v), ("K", self.K, dim_h)):
            if not 1 <= level <= dim:
                raise DimensionError(f"truncation level {name}={level} outside 1..{dim}")


@dataclass(frozen=True)
class SeriesResult:
    """Truncated series X_{N,M,K} and its terms Y[p, time, n, m, k]"""

    ensemble: PathEnsemble
    components: np.ndarray = field(repr=False)
    levels: TruncationLevels = None


@dataclass(frozen=True)
class CharFnEstimate:
    value: complex
    stderr: float


@dataclass(frozen=True)
class Projection:
    gram: np.ndarray
    C: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class IsometryResult:
    empirical: float
    stderr: float
    quadrature: float


@dataclass(frozen=True)
class ApproximationBound:
    """Two-field proximity bound; rhs = (sqrt(kernel_term) + sqrt(volatility_term))^2"""

    kernel_term: float
    volatility_term: float

    @property
    def rhs(self) -> float:
        return float((np.sqrt(self.kernel_term) + np.sqrt(self.volatility_term)) ** 2)


def grid_index(t_grid: np.ndarray, t: float) -> int:
    """Index of t on a uniform grid; raises when t is not a grid point"""
    t_grid = np.asarray(t_grid, dtype=float)
    index = int(np.argmin(np.abs(t_grid - t)))
    scale = max(1.0, abs(float(t)))
    if abs(t_grid[index] - t) > GRID_TOLERANCE * scale:
        raise ValueError(f"t={t} is not on the time grid")
    return index


def _uniform_step(t_grid: np.ndarray) -> float:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2 or t_grid[0] != 0.0:
        raise ValueError("time grid must start at 0 and have at least two points")
    steps = np.diff(t_grid)
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
        raise ValueError("time grid must be uniform and increasing")
    return dt


def _check_dims(kernel: KernelSpec, vol_dim: int, noise_dim: int):
    if kernel.dim_u != vol_dim:
        raise DimensionError(f"kernel expects U of dimension {kernel.dim_u}, volatility has {vol_dim}")
    if kernel.dim_v != noise_dim:
        raise DimensionError(f"kernel expects V of dimension {kernel.dim_v}, noise has {noise_dim}")


def prepare_drivers(
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    dt: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    increments: Optional[IncrementBatch] = None,
    sigma_paths: Optional[VolatilityPaths] = None,
    coupling: str = "independent",
    executor=None,
) -> Tuple[IncrementBatch, VolatilityPaths]:
    """Sample (or check) the increments and volatility paths a route consumes"""
    if increments is None:
        increments = sample_increments(noise, dt, n_steps, n_paths, seed, executor=executor)
    if sigma_paths is None:
        if vol is None:
            raise ValueError("either a volatility model or sampled volatility paths is required")
        sigma_paths = sample_volatility(vol, dt, n_steps, n_paths, seed, coupling, executor=executor)
    _check_dims(kernel, sigma_paths.data.shape[2], increments.dim)
    if increments.n_steps < n_steps or sigma_paths.n_steps < n_steps:
        raise DimensionError(f"drivers cover fewer than {n_steps} steps")
    if increments.n_paths != sigma_paths.n_paths:
        raise DimensionError("increments and volatility paths disagree on the number of paths")
    if not np.isclose(increments.dt, dt) or not np.isclose(sigma_paths.dt, dt):
        raise DimensionError(f"drivers were sampled with a step different from dt={dt}")
    return increments, sigma_paths


def _direct_block(kernel: KernelSpec, times: np.ndarray, s_grid: np.ndarray,
                  sigma: np.ndarray, dL: np.ndarray, indices: np.ndarray) -> np.ndarray:
    P = dL.shape[0]
    phi = kernel.phi()
    # B_c applied to every increment: (path, step, component, H)
    BdL = np.einsum("chv,piv->pich", kernel.stacked_B(), dL)
    sigma_phi = sigma[:, :, phi]
    out = np.zeros((P, indices.size, kernel.dim_h))
    for col, k in enumerate(indices):
        if k == 0:
            continue
        weights = kernel.weights(times[k], s_grid[:k])
        out[:, col] = np.einsum("pic,ic,pich->ph", sigma_phi[:, :k], weights, BdL[:, :k])
    return out


def hambit_direct(
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    t_grid: np.ndarray,
    n_paths: int,
    seed: int,
    increments: Optional[IncrementBatch] = None,
    sigma_paths: Optional[VolatilityPaths] = None,
    coupling: str = "independent",
    executor=None,
    stride: int = 1,
) -> PathEnsemble:
    """Left-point Riemann sums X(t_k) = sum_{i<k} Gamma(t_k, s_i)(sigma(s_i)) dL_i

    Only every `stride`-th grid time is evaluated (the last grid time must be one of them).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dt = _uniform_step(t_grid)
    n_steps = t_grid.size - 1
    if stride < 1 or n_steps % stride:
        raise ValueError(f"stride {stride} does not divide {n_steps} steps")
    increments, sigma_paths = prepare_drivers(
        kernel, vol, noise, dt, n_steps, n_paths, seed, increments, sigma_paths, coupling, executor
    )
    indices = np.arange(0, n_steps + 1, stride)

    def block(index: int, paths: slice) -> np.ndarray:
        return _direct_block(kernel, t_grid, t_grid, sigma_paths.data[paths, :n_steps],
                             increments.data[paths, :n_steps], indices)

    if executor is not None:
        data = executor.map_blocks(block, increments.n_paths)
    else:
        data = block(0, slice(0, increments.n_paths))
    metadata = {"route": "direct", "seed": seed, **sigma_paths.metadata()}
    return PathEnsemble(t_grid[indices], data, metadata)


def vmv_series(
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    levels: TruncationLevels,
    t_grid: np.ndarray,
    n_paths: int,
    seed: int,
    increments: Optional[IncrementBatch] = None,
    sigma_paths: Optional[VolatilityPaths] = None,
    coupling: str = "independent",
    executor=None,
) -> SeriesResult:
    """Truncated series X_{N,M,K} = sum_{n<N, m<M, k<K} Y_{n,m,k} h_k

    Each Y_{n,m,k}(t) is the scalar left-point sum of (Gamma(t,s)(u_n) v_m, h_k)
    (sigma(s), u_n) against the coordinate increments of L_m.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dt = _uniform_step(t_grid)
    n_steps = t_grid.size - 1
    levels.validate(kernel.dim_u, kernel.dim_v, kernel.dim_h)
    increments, sigma_paths = prepare_drivers(
        kernel, vol, noise, dt, n_steps, n_paths, seed, increments, sigma_paths, coupling, executor
    )
    N, M, K = levels.N, levels.M, levels.K

    def block(index: int, paths: slice) -> np.ndarray:
        sigma = sigma_paths.data[paths, :n_steps, :N]
        dL = increments.data[paths, :n_steps, :M]
        out = np.zeros((sigma.shape[0], n_steps + 1, N, M, K))
        for k in range(1, n_steps + 1):
            coefficients = kernel.tensor(t_grid[k], t_grid[:k])[:, :N, :K, :M]
            out[:, k] = np.einsum("inhv,pin,piv->pnvh", coefficients, sigma[:, :k], dL[:, :k])
        return out

    if executor is not None:
        components = executor.map_blocks(block, increments.n_paths)
    else:
        components = block(0, slice(0, increments.n_paths))
    data = np.zeros(components.shape[:2] + (kernel.dim_h,))
    data[:, :, :K] = components.sum(axis=(2, 3))
    metadata = {"route": "series", "seed": seed, "levels": (N, M, K), **sigma_paths.metadata()}
    return SeriesResult(PathEnsemble(t_grid, data, metadata), components, levels)


def _second_moments(vol: Optional[VolatilityModel], sigma_paths: Optional[VolatilityPaths],
                    s_grid: np.ndarray, seed: int = 0) -> np.ndarray:
    """E[(sigma(s_i), u_n)^2], empirical when paths are supplied"""
    if sigma_paths is not None:
        return np.mean(sigma_paths.data[:, : s_grid.size] ** 2, axis=0)
    if vol is None:
        raise ValueError("either a volatility model or sampled volatility paths is required")
    return vol.second_moments(s_grid, seed=seed)


def truncation_error_bound(
    kernel: KernelSpec,
    vol: Optional[VolatilityModel],
    noise: LevySpec,
    levels: TruncationLevels,
    t: float,
    dt: float,
    sigma_paths: Optional[VolatilityPaths] = None,
    seed: int = 0,
) -> float:
    """Minkowski bound on (E|X(t) - X_{N,M,K}(t)|^2)^{1/2}

    Sums (E|Y_{n,m,k}(t)|^2)^{1/2} over every index outside the kept box, with
    E|Y_{n,m,k}(t)|^2 = q_m sum_i a_{nmk}(t, s_i)^2 E[sigma_n(s_i)^2] dt.
    Without sampled paths, a volatility model lacking closed-form moments
    (operator OU) contributes a Monte Carlo estimate drawn from `seed`.
    """
    levels.validate(kernel.dim_u, kernel.dim_v, kernel.dim_h)
    _check_dims(kernel, kernel.dim_u if vol is None else vol.dim_u, noise.dim)
    k = int(round(t / dt))
    if k == 0:
        return 0.0
    s_grid = dt * np.arange(k)
    moments = _second_moments(vol, sigma_paths, s_grid, seed)
    coefficients = kernel.tensor(t, s_grid)
    q = noise.covariance().eigenvalues
    # E|Y|^2 indexed (n, h, v)
    energy = np.einsum("iuhv,iu,v->uhv", coefficients ** 2, moments, q) * dt
    tail = np.ones(energy.shape, dtype=bool)
    tail[: levels.N, : levels.K, : levels.M] = False
    return float(np.sum(np.sqrt(np.maximum(energy[tail], 0.0))))


def truncation_error_mc(direct: PathEnsemble, series: SeriesResult, t: float) -> Tuple[float, float]:
    """Monte Carlo E|X(t) - X_{N,M,K}(t)|^2 with its standard error"""
    diff = direct.at(t) - series.ensemble.at(t)
    sq = np.sum(diff ** 2, axis=1)
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else 0.0


def _sigma_gamma(kernel: KernelSpec, t: float, s_grid: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Gamma(t, s_i)(sigma_i) for each i, shape (i, H, V)"""
    return np.einsum("iuhv,iu->ihv", kernel.tensor(t, s_grid), sigma)


def conditional_covariance(kernel: KernelSpec, sigma_path: VolatilityPaths, Q: CovarianceOp,
                           t: float, path: int = 0) -> np.ndarray:
    """int_0^t Gamma(t,s)(sigma(s)) Q Gamma(t,s)(sigma(s))* ds on one volatility path"""
    k = grid_index(sigma_path.t_grid, t)
    if Q.dim != kernel.dim_v:
        raise DimensionError(f"Q has dimension {Q.dim}, kernel expects {kernel.dim_v}")
    cov = np.zeros((kernel.dim_h, kernel.dim_h))
    if k == 0:
        return cov
    G = _sigma_gamma(kernel, t, sigma_path.t_grid[:k], sigma_path.data[path, :k])
    cov = np.einsum("ihv,v,igv->hg", G, Q.eigenvalues, G) * sigma_path.dt
    return 0.5 * (cov + cov.T)


def stationary_covariance(kernel: KernelSpec, sigma0: np.ndarray, Q: CovarianceOp,
                          horizon: Optional[float] = None, tol: float = 1e-8) -> np.ndarray:
    """int_0^infty G(s) Q G(s)* ds with G(s) = Gamma(s, 0)(sigma0)

    The integral is truncated where the exponential tail drops below `tol`.
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    if sigma0.shape != (kernel.dim_u,):
        raise DimensionError(f"sigma0 of shape {sigma0.shape} does not match U of dimension {kernel.dim_u}")
    if not kernel.stationary:
        raise ComputationError("stationary covariance needs a kernel depending on t - s only")
    active = [c for c in kernel.components if sigma0[c.phi_index] != 0.0]
    if not active or Q.trace == 0.0:
        return np.zeros((kernel.dim_h, kernel.dim_h))
    kappa = min(c.g.decay_rate for c in active)
    if kappa <= 0:
        raise ComputationError("kernel does not decay; the stationary covariance is infinite")
    scale = sum(abs(sigma0[c.phi_index]) * abs(float(c.g(0.0, 0.0))) * c.B.op_norm() for c in active)
    weight = scale ** 2 * float(Q.eigenvalues.max())
    needed = max(np.log(max(weight / (2.0 * kappa * tol), 1.0)) / (2.0 * kappa), 0.0)
    if horizon is None or horizon < needed:
        if horizon is not None:
            logger.debug("extending stationary horizon from %g to %g", horizon, needed)
        horizon = needed

    def integrand(s: float) -> np.ndarray:
        G = eval_gamma(kernel, s, 0.0, sigma0).entries
        return (G * Q.eigenvalues) @ G.T

    value, error = quad_vec(integrand, 0.0, horizon, epsabs=tol / 10.0, epsrel=1e-12)
    logger.debug("stationary covariance: horizon=%g quadrature error=%.2e", horizon, error)
    return 0.5 * (value + value.T)


def char_functional_mc(ensemble: PathEnsemble, t: float, h: np.ndarray) -> CharFnEstimate:
    """Sample mean of exp(i(h, X_p(t))) with its jackknife standard error"""
    x = ensemble.at(t)
    h = np.asarray(h, dtype=float)
    if h.shape != (x.shape[1],):
        raise DimensionError(f"h of shape {h.shape} does not match H of dimension {x.shape[1]}")
    samples = np.exp(1j * (x @ h))
    value, stderr = jackknife_mean(samples)
    return CharFnEstimate(value, stderr)


def jackknife_mean(samples: np.ndarray) -> Tuple[complex, float]:
    """Mean and jackknife standard error of a (possibly complex) sample"""
    n = samples.size
    mean = samples.mean()
    if n < 2:
        return complex(mean), 0.0
    leave_one_out = (n * mean - samples) / (n - 1)
    spread = np.abs(leave_one_out - leave_one_out.mean()) ** 2
    return complex(mean), float(np.sqrt((n - 1) / n * spread.sum()))


def char_functional_analytic(kernel: KernelSpec, vol_paths: VolatilityPaths, noise: LevySpec,
                             t: float, h: np.ndarray) -> complex:
    """E exp(sum_i Psi_L(Gamma(t,s_i)(sigma(s_i))* h) dt), averaged over volatility paths"""
    if vol_paths.coupling == "shared":
        raise CouplingError("the analytic characteristic functional needs sigma independent of L")
    _check_dims(kernel, vol_paths.data.shape[2], noise.dim)
    h = np.asarray(h, dtype=float)
    if h.shape != (kernel.dim_h,):
        raise DimensionError(f"h of shape {h.shape} does not match H of dimension {kernel.dim_h}")
    k = grid_index(vol_paths.t_grid, t)
    if k == 0:
        return 1.0 + 0.0j
    s_grid = vol_paths.t_grid[:k]
    weights = kernel.weights(t, s_grid)
    Bh = np.einsum("chv,h->cv", kernel.stacked_B(), h)
    sigma_phi = vol_paths.data[:, :k, kernel.phi()]
    v = np.einsum("pic,ic,cv->piv", sigma_phi, weights, Bh)
    exponent = noise.log_characteristic(v).sum(axis=1) * vol_paths.dt
    return complex(np.mean(np.exp(exponent)))


def project(kernel: KernelSpec, sigma: np.ndarray, Q: CovarianceOp, t: float, s: float,
            xi: np.ndarray) -> Projection:
    """Gram matrix H_n, covariance C(t,s) and its square root for directions xi

    C_ij = (Q^{1/2} Gamma(t,s)(sigma)* xi_i, Q^{1/2} Gamma(t,s)(sigma)* xi_j).
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != kernel.dim_h:
        raise DimensionError(f"directions have dimension {xi.shape[1]}, H has {kernel.dim_h}")
    gram = xi @ xi.T
    condition = float(np.linalg.cond(gram))
    if not np.isfinite(condition) or condition > GRAM_CONDITION_LIMIT:
        raise SingularGramError(condition, GRAM_CONDITION_LIMIT)
    G = eval_gamma(kernel, t, s, sigma).entries
    root = Q.sqrt_diagonal()[:, None] * (G.T @ xi.T)
    C = root.T @ root
    C = 0.5 * (C + C.T)
    return Projection(gram=gram, C=C, gamma=psd_sqrt(C))


def project_field(x: np.ndarray, xi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinates (x, xi)' H^{-1} and the projection P_n(x), vectorized over leading axes"""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    gram = xi @ xi.T
    inner = np.asarray(x, dtype=float) @ xi.T
    coordinates = np.linalg.solve(gram, inner[..., None])[..., 0]
    return coordinates, coordinates @ xi


def _hs_energy(kernel: KernelSpec, Q: CovarianceOp, vol_paths: VolatilityPaths, t: float) -> np.ndarray:
    """||Gamma(t,s_i)(sigma_i) Q^{1/2}||_HS^2 dt per path and step"""
    k = grid_index(vol_paths.t_grid, t)
    B = kernel.stacked_B()
    gram = np.einsum("chv,v,dhv->cd", B, Q.eigenvalues, B)
    weights = kernel.weights(t, vol_paths.t_grid[:k])
    a = vol_paths.data[:, :k, kernel.phi()] * weights
    return np.einsum("pic,cd,pid->pi", a, gram, a) * vol_paths.dt


def isometry_check(ensemble: PathEnsemble, kernel: KernelSpec, vol_paths: VolatilityPaths,
                   Q: CovarianceOp, t: float) -> IsometryResult:
    """E|X(t)|^2 against E int_0^t ||Gamma(t,s)(sigma(s)) Q^{1/2}||_HS^2 ds"""
    x = ensemble.at(t)
    sq = np.sum(x ** 2, axis=1)
    stderr = float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else 0.0
    quadrature = float(_hs_energy(kernel, Q, vol_paths, t).sum(axis=1).mean())
    return IsometryResult(empirical=float(sq.mean()), stderr=stderr, quadrature=quadrature)


def integrability_bound(kernel: KernelSpec, vol: Optional[VolatilityModel], Q: CovarianceOp,
                        t: float, dt: float, sigma_paths: Optional[VolatilityPaths] = None) -> float:
    """||Q^{1/2}||_HS^2 int_0^t ||Gamma(t,s)||_op^2 E|sigma(s)|^2 ds (left point)"""
    k = int(round(t / dt))
    s_grid = dt * np.arange(k)
    if sigma_paths is not None:
        moments = _second_moments(vol, sigma_paths, s_grid).sum(axis=1)
    elif vol is None:
        raise ValueError("either a volatility model or sampled volatility paths is required")
    else:
        moments = vol.expected_norm_sq(s_grid)
    norms = np.array([gamma_op_bound(kernel, t, s) for s in s_grid])
    return float(Q.trace * np.sum(norms ** 2 * moments) * dt)


def approximation_bound(kernel1: KernelSpec, vol_paths1: VolatilityPaths, kernel2: KernelSpec,
                        vol_paths2: VolatilityPaths, Q: CovarianceOp, t: float) -> ApproximationBound:
    """Bound on E|X_1(t) - X_2(t)|^2 for two fields driven by the same noise"""
    if (kernel1.dim_u, kernel1.dim_v, kernel1.dim_h) != (kernel2.dim_u, kernel2.dim_v, kernel2.dim_h):
        raise DimensionError("kernels act between different spaces")
    if vol_paths1.data.shape != vol_paths2.data.shape:
        raise DimensionError("volatility paths have different shapes")
    k = grid_index(vol_paths1.t_grid, t)
    s_grid = vol_paths1.t_grid[:k]
    diff = (kernel1.tensor(t, s_grid) - kernel2.tensor(t, s_grid)).reshape(k, kernel1.dim_u, -1)
    diff_norms = np.array([np.linalg.norm(d, 2) for d in diff])
    norms2 = np.array([gamma_op_bound(kernel2, t, s) for s in s_grid])
    sigma1 = vol_paths1.data[:, :k]
    moment1 = np.mean(np.sum(sigma1 ** 2, axis=2), axis=0)
    moment_diff = np.mean(np.sum((sigma1 - vol_paths2.data[:, :k]) ** 2, axis=2), axis=0)
    scale = Q.trace * vol_paths1.dt
    return ApproximationBound(
        kernel_term=float(scale * np.sum(diff_norms ** 2 * moment1)),
        volatility_term=float(scale * np.sum(norms2 ** 2 * moment_diff)),
    )
