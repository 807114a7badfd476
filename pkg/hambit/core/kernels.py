"""
Kernels Gamma(t, s): U -> L(V, H) and volatility models sigma(t) in U

A kernel is a finite sum of separable components

    Gamma(t, s)(sigma) = sum_i (sigma, u_{phi_i}) g_i(t, s) B_i

with scalar kernels g_i and fixed matrices B_i: V -> H.
"""

from __future__ import annotations

import logging
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import expm

from hambit.core.errors import DimensionError, UnsupportedKernelError
from hambit.core.hilbert import CovarianceOp, LinearMap, psd_sqrt
from hambit.core.noise import LevySpec, WienerNoise, build_noise
from hambit.core.rng import NOISE_STREAM, VOLATILITY_STREAM, path_blocks, stream

logger = logging.getLogger(__name__)

COUPLINGS = ("independent", "shared")
# Eigenvalues of Y below this count as a positivity violation.
PSD_TOLERANCE = 1e-10


class ScalarKernel(ABC):
    """Real kernel g(t, s) for 0 <= s <= t"""

    @abstractmethod
    def __call__(self, t, s) -> np.ndarray:
        pass

    @property
    def stationary(self) -> bool:
        """True when g depends on t - s only"""
        return True

    @property
    def decay_rate(self) -> float:
        """Exponential decay rate in t - s (0 for no decay)"""
        return 0.0

    def lipschitz(self) -> float:
        """Bound on |dg/dt| over 0 <= s <= t"""
        raise UnsupportedKernelError(f"{type(self).__name__} has no Lipschitz bound")


@dataclass(frozen=True)
class ExponentialKernel(ScalarKernel):
    kappa: float

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {self.kappa}")

    def __call__(self, t, s) -> np.ndarray:
        return np.exp(-self.kappa * (np.asarray(t, dtype=float) - np.asarray(s, dtype=float)))

    @property
    def decay_rate(self) -> float:
        return self.kappa

    def lipschitz(self) -> float:
        return self.kappa


@dataclass(frozen=True)
class ConstantKernel(ScalarKernel):
    value: float = 1.0

    def __call__(self, t, s) -> np.ndarray:
        shape = np.broadcast(np.asarray(t), np.asarray(s)).shape
        return np.full(shape, float(self.value))

    def lipschitz(self) -> float:
        return 0.0


@dataclass(frozen=True)
class ShiftedExponentialKernel(ScalarKernel):
    """Exponential kernel seen from forward position `offset`: exp(-kappa (t - s + offset))"""

    kappa: float
    offset: float = 0.0

    def __post_init__(self):
        if self.kappa < 0 or self.offset < 0:
            raise ValueError("kappa and offset must be nonnegative")

    def __call__(self, t, s) -> np.ndarray:
        lag = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
        return np.exp(-self.kappa * (lag + self.offset))

    @property
    def decay_rate(self) -> float:
        return self.kappa

    def lipschitz(self) -> float:
        return self.kappa * np.exp(-self.kappa * self.offset)


@dataclass(frozen=True)
class KernelComponent:
    phi_index: int
    g: ScalarKernel
    B: LinearMap


@dataclass(frozen=True)
class KernelSpec:
    components: Tuple[KernelComponent, ...]
    dim_u: int

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise DimensionError("kernel needs at least one component")
        shape = components[0].B.entries.shape
        for i, component in enumerate(components):
            if component.B.entries.shape != shape:
                raise DimensionError(
                    f"component {i}: B has shape {component.B.entries.shape}, expected {shape}"
                )
            if not 0 <= component.phi_index < self.dim_u:
                raise DimensionError(
                    f"component {i}: phi_index {component.phi_index} outside U of dimension {self.dim_u}"
                )
        object.__setattr__(self, "components", components)

    @property
    def dim_h(self) -> int:
        return self.components[0].B.rows

    @property
    def dim_v(self) -> int:
        return self.components[0].B.cols

    @property
    def stationary(self) -> bool:
        return all(c.g.stationary for c in self.components)

    def tensor(self, t: float, s) -> np.ndarray:
        """Coefficients G[i, u, h, v] with Gamma(t, s_i)(sigma) = sum_u sigma_u G[i, u]"""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros((s.size, self.dim_u, self.dim_h, self.dim_v))
        for c in self.components:
            out[:, c.phi_index] += np.asarray(c.g(t, s)).reshape(-1)[:, None, None] * c.B.entries
        return out

    def weights(self, t, s) -> np.ndarray:
        """Scalar kernel values g_c(t, s), one column per component"""
        shape = np.broadcast(np.asarray(t), np.asarray(s)).shape
        return np.stack([np.broadcast_to(c.g(t, s), shape) for c in self.components], axis=-1)

    def phi(self) -> np.ndarray:
        return np.array([c.phi_index for c in self.components], dtype=int)

    def stacked_B(self) -> np.ndarray:
        return np.stack([c.B.entries for c in self.components])


def _check_times(t: float, s: float):
    if s > t or s < 0:
        raise ValueError(f"kernel needs 0 <= s <= t, got s={s}, t={t}")


def eval_gamma(spec: KernelSpec, t: float, s: float, sigma: np.ndarray) -> LinearMap:
    """The integrand operator Gamma(t, s)(sigma): V -> H"""
    _check_times(t, s)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (spec.dim_u,):
        raise DimensionError(f"sigma of shape {sigma.shape} does not match U of dimension {spec.dim_u}")
    entries = np.zeros((spec.dim_h, spec.dim_v))
    for c in spec.components:
        entries += sigma[c.phi_index] * float(c.g(t, s)) * c.B.entries
    return LinearMap(entries)


def gamma_op_bound(spec: KernelSpec, t: float, s: float) -> float:
    """Bound on ||Gamma(t, s)||_op from U to L(V, H)

    Uses the operator norm of the map U -> HS(V, H), which dominates the norm into
    L(V, H).
    """
    _check_times(t, s)
    coefficients = spec.tensor(t, s)[0].reshape(spec.dim_u, -1)
    return float(np.linalg.norm(coefficients, 2))


def kernel_lipschitz_bound(spec: KernelSpec) -> float:
    """C with ||Gamma(s+x,s)(sigma) - Gamma(s+y,s)(sigma)||_op <= sqrt(C)|x-y||sigma|"""
    total = 0.0
    for c in spec.components:
        total += c.g.lipschitz() * c.B.op_norm()
    return total ** 2


def build_kernel(section: dict, dim_u: int) -> KernelSpec:
    """Construct a KernelSpec from a validated config section"""
    components = []
    for item in section["components"]:
        g = item["g"]
        kind = g["type"]
        if kind == "exponential":
            scalar = ExponentialKernel(float(g["kappa"]))
        elif kind == "constant":
            scalar = ConstantKernel(float(g.get("value", 1.0)))
        elif kind == "shifted_exponential":
            scalar = ShiftedExponentialKernel(float(g["kappa"]), float(g.get("offset", 0.0)))
        else:
            raise ValueError(f"unknown kernel type {kind!r}")
        components.append(KernelComponent(int(item.get("phi", 0)), scalar, LinearMap(item["B"])))
    return KernelSpec(tuple(components), dim_u)


@dataclass(frozen=True)
class VolatilityPaths:
    """sigma(t_n) for n = 0..N on every path; sigma(t_n) acts on [t_n, t_{n+1})"""

    dt: float
    data: np.ndarray = field(repr=False)
    coupling: str = "independent"
    min_eigenvalue: float = np.inf

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1] - 1

    @property
    def clipped(self) -> bool:
        return self.min_eigenvalue < -PSD_TOLERANCE

    @property
    def t_grid(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def subsample(self, factor: int) -> VolatilityPaths:
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot subsample {self.n_steps} steps by {factor}")
        return VolatilityPaths(self.dt * factor, self.data[:, ::factor], self.coupling, self.min_eigenvalue)

    def paths(self, selection: slice) -> VolatilityPaths:
        return VolatilityPaths(self.dt, self.data[selection], self.coupling, self.min_eigenvalue)

    def metadata(self) -> Dict[str, object]:
        return {"coupling": self.coupling, "clipped": self.clipped, "min_eigenvalue": self.min_eigenvalue}


class VolatilityModel(ABC):
    """Law of the volatility process sigma(t)"""

    @property
    @abstractmethod
    def dim_u(self) -> int:
        pass

    @abstractmethod
    def draw(self, rng: np.random.Generator, dt: float, n_paths: int, n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
        """Paths of shape (n_paths, n_steps + 1, dim_u) and per-path minimum eigenvalue"""

    @abstractmethod
    def second_moments(self, times: np.ndarray, seed: int = 0) -> np.ndarray:
        """E[(sigma(s), u_n)^2] at each time, shape (len(times), dim_u)

        `seed` is used only by models without a closed form.
        """

    def expected_norm_sq(self, times: np.ndarray) -> np.ndarray:
        """E|sigma(s)|^2 at each time"""
        return self.second_moments(times).sum(axis=1)

    @property
    def exact_moments(self) -> bool:
        return True

    @property
    def deterministic(self) -> bool:
        return False


@dataclass(frozen=True)
class ConstantVolatility(VolatilityModel):
    sigma0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma0", np.atleast_1d(np.asarray(self.sigma0, dtype=float)))

    @property
    def dim_u(self) -> int:
        return self.sigma0.size

    @property
    def deterministic(self) -> bool:
        return True

    def draw(self, rng, dt, n_paths, n_steps):
        data = np.broadcast_to(self.sigma0, (n_paths, n_steps + 1, self.dim_u)).copy()
        return data, np.full(n_paths, np.inf)

    def second_moments(self, times, seed=0):
        return np.broadcast_to(self.sigma0 ** 2, (len(times), self.dim_u)).copy()


@dataclass(frozen=True)
class ScalarLSSVolatility(VolatilityModel):
    """sigma(t) = int_0^t exp(-rho (t - s)) dU(s), sampled by the exact OU recursion"""

    rho: float
    driver: LevySpec

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def dim_u(self) -> int:
        return self.driver.dim

    def draw(self, rng, dt, n_paths, n_steps):
        decay = np.exp(-self.rho * dt)
        innovations = self._innovations(rng, dt, n_paths, n_steps)
        data = np.zeros((n_paths, n_steps + 1, self.dim_u))
        for n in range(n_steps):
            data[:, n + 1] = decay * data[:, n] + innovations[:, n]
        return data, np.full(n_paths, np.inf)

    def _innovations(self, rng, dt, n_paths, n_steps) -> np.ndarray:
        """int_{t_n}^{t_{n+1}} exp(-rho (t_{n+1} - s)) dU(s) for every step"""
        eigenvalues = self.driver.covariance().eigenvalues
        if isinstance(self.driver, WienerNoise):
            z = rng.standard_normal((n_paths, n_steps, self.dim_u))
            variance = -np.expm1(-2.0 * self.rho * dt) / (2.0 * self.rho)
            return z * np.sqrt(eigenvalues * variance)
        # Compound Poisson: weight each jump by its own exponential discount.
        counts = rng.poisson(self.driver.intensity * dt, size=(n_paths, n_steps))
        kmax = int(counts.max()) if counts.size else 0
        discount = np.zeros((n_paths, n_steps))
        if kmax:
            lags = rng.random((n_paths, n_steps, kmax)) * dt
            mask = np.arange(kmax) < counts[..., None]
            discount = np.sum(np.exp(-2.0 * self.rho * lags) * mask, axis=-1)
        z = rng.standard_normal((n_paths, n_steps, self.dim_u))
        return z * np.sqrt(discount[..., None] * self.driver.jump_cov.eigenvalues)

    def second_moments(self, times, seed=0):
        times = np.asarray(times, dtype=float)
        integral = -np.expm1(-2.0 * self.rho * times) / (2.0 * self.rho)
        return integral[:, None] * self.driver.covariance().eigenvalues[None, :]


@dataclass(frozen=True)
class OperatorOUVolatility(VolatilityModel):
    """Matrix OU dY = C(Y) dt + dZ with C(Y) = (CY + YC')/2 and PSD rank-one jumps

    sigma = Y^{1/2}, flattened row-major into U = HS(R^d).
    """

    C: np.ndarray
    jump_intensity: float
    jump_scale: float
    y0: np.ndarray
    moment_paths: int = 2000

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        y0 = np.atleast_2d(np.asarray(self.y0, dtype=float))
        if C.shape[0] != C.shape[1] or y0.shape != C.shape:
            raise DimensionError(f"C {C.shape} and Y0 {y0.shape} must be square of equal size")
        if not np.allclose(y0, y0.T):
            raise ValueError("Y0 must be symmetric")
        if np.linalg.eigvalsh(y0).min() < -PSD_TOLERANCE:
            raise ValueError("Y0 must be positive semidefinite")
        if self.jump_intensity < 0 or self.jump_scale < 0:
            raise ValueError("jump intensity and scale must be nonnegative")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "y0", y0)

    @property
    def d(self) -> int:
        return self.C.shape[0]

    @property
    def dim_u(self) -> int:
        return self.d * self.d

    def generator(self) -> np.ndarray:
        """Matrix of Y -> (CY + YC')/2 acting on row-major vec(Y)"""
        eye = np.eye(self.d)
        return 0.5 * (np.kron(self.C, eye) + np.kron(eye, self.C))

    def mean_jump(self) -> np.ndarray:
        """E[Z(1)] for jumps scale * v v' with v ~ N(0, I)"""
        return self.jump_intensity * self.jump_scale * np.eye(self.d)

    def sample_states(self, rng, dt, n_paths, n_steps) -> np.ndarray:
        """Y_n for n = 0..N, shape (n_paths, n_steps + 1, d, d)"""
        d = self.d
        # Congruence form of the Euler step keeps Y positive semidefinite.
        half_step = np.eye(d) + 0.5 * dt * self.C
        counts = rng.poisson(self.jump_intensity * dt, size=(n_paths, n_steps))
        kmax = int(counts.max()) if counts.size else 0
        states = np.empty((n_paths, n_steps + 1, d, d))
        states[:, 0] = self.y0
        if kmax:
            v = rng.standard_normal((n_paths, n_steps, kmax, d))
            v = v * (np.arange(kmax) < counts[..., None])[..., None]
            jumps = self.jump_scale * np.einsum("pnki,pnkj->pnij", v, v)
        else:
            jumps = np.zeros((n_paths, n_steps, d, d))
        for n in range(n_steps):
            states[:, n + 1] = half_step @ states[:, n] @ half_step.T + jumps[:, n]
        return states

    def draw(self, rng, dt, n_paths, n_steps):
        states = self.sample_states(rng, dt, n_paths, n_steps)
        min_eig = np.linalg.eigvalsh(states).min(axis=(1, 2))
        roots = psd_sqrt(states)
        return roots.reshape(n_paths, n_steps + 1, self.dim_u), min_eig

    @property
    def exact_moments(self) -> bool:
        return False

    def second_moments(self, times, seed=0):
        """Monte Carlo estimate over `moment_paths` paths drawn from `seed`

        Entries of Y^{1/2} have no closed-form second moments; their sum does, see
        expected_norm_sq.
        """
        times = np.asarray(times, dtype=float)
        if times.size < 2:
            return np.broadcast_to(psd_sqrt(self.y0).reshape(-1) ** 2, (times.size, self.dim_u)).copy()
        dt = float(times[1] - times[0])
        paths = sample_volatility(self, dt, times.size - 1, self.moment_paths, seed=seed)
        return np.mean(paths.data ** 2, axis=0)

    def expected_norm_sq(self, times):
        """E||sigma(s)||_HS^2 = E Tr Y(s), exact"""
        return np.array([expected_hs_norm_sq(self, float(s), n_nodes=201) for s in np.asarray(times, dtype=float)])


def expected_hs_norm_sq(model: OperatorOUVolatility, t: float, n_nodes: int = 2001) -> float:
    """Tr(e^{Ct} Y0) + Tr(int_0^t e^{Cs} ds E[Z(1)]) for the operator OU model"""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    d = model.d
    L = model.generator()
    state = (expm(L * t) @ model.y0.reshape(-1)).reshape(d, d)
    if t == 0.0:
        return float(np.trace(state))
    grid = np.linspace(0.0, t, n_nodes)
    mean_jump = model.mean_jump().reshape(-1)
    integrand = np.array([np.trace((expm(L * s) @ mean_jump).reshape(d, d)) for s in grid])
    return float(np.trace(state) + simpson(integrand, x=grid))


def sample_volatility(
    model: VolatilityModel,
    dt: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    coupling: str = "independent",
    executor=None,
) -> VolatilityPaths:
    """Sample sigma on the grid t_n = n dt

    With coupling "shared" the volatility draws from the noise stream, so its
    driver is correlated with L.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}, got {coupling!r}")
    tag = NOISE_STREAM if coupling == "shared" else VOLATILITY_STREAM

    def block(index: int, paths: slice):
        return model.draw(stream(seed, tag, index), dt, paths.stop - paths.start, n_steps)

    if executor is not None:
        data, min_eig = executor.map_blocks(block, n_paths)
    else:
        parts = [block(i, sl) for i, sl in path_blocks(n_paths)]
        data = np.concatenate([p[0] for p in parts])
        min_eig = np.concatenate([p[1] for p in parts])
    smallest = float(min_eig.min())
    if smallest < -PSD_TOLERANCE:
        warnings.warn(f"volatility state lost positivity (min eigenvalue {smallest:.3e}); clipped at 0")
    logger.debug("sampled volatility %s: %d paths x %d steps", type(model).__name__, n_paths, n_steps)
    return VolatilityPaths(dt, data, coupling, smallest)


def build_volatility(section: dict) -> VolatilityModel:
    """Construct a VolatilityModel from a validated config section"""
    kind = section["type"]
    if kind == "constant":
        return ConstantVolatility(np.asarray(section["sigma0"], dtype=float))
    if kind == "scalar_lss":
        return ScalarLSSVolatility(float(section["rho"]), build_noise(section["driver"]))
    if kind == "operator_ou":
        return OperatorOUVolatility(
            np.asarray(section["C"], dtype=float),
            float(section.get("jump_intensity", 0.0)),
            float(section.get("jump_scale", 0.0)),
            np.asarray(section["Y0"], dtype=float),
        )
    raise ValueError(f"unknown volatility type {kind!r}")
