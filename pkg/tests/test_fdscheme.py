import numpy as np
import pytest

from hambit.core.errors import CFLViolation, GridExhausted
from hambit.core.fdscheme import (
    FDConfig,
    SchemeState,
    beta_field,
    binomial_variance_identity,
    exact_mild_reference,
    initial_condition_error,
    run,
    run_iterative_form,
    step,
    transport_error_sq,
)
from hambit.core.hilbert import (
    CovarianceOp,
    GridFunction,
    LinearMap,
    WeightFunction,
    apply_T_power_binomial,
    hw_norm,
    space_constants,
)
from hambit.core.kernels import (
    ConstantKernel,
    ConstantVolatility,
    ExponentialKernel,
    KernelComponent,
    KernelSpec,
    ScalarLSSVolatility,
    sample_volatility,
)
from hambit.core.noise import CompoundPoissonNoise, WienerNoise, sample_increments
from hambit.core.simulate import hambit_direct
from hambit.executors.ensemble_executor import EnsembleExecutor

WIENER = WienerNoise(CovarianceOp([1.0]))
ONE = ConstantVolatility(np.ones(1))


def test_config_checks_cfl():
    assert FDConfig(dt=0.5, dx=1.0, N=2, J=3).lam == 0.5
    with pytest.raises(CFLViolation):
        FDConfig(dt=0.2, dx=0.1, N=2, J=3)
    config = FDConfig(dt=0.25, dx=0.5, N=4, J=2)
    assert config.horizon == 1.0
    assert config.internal_nodes.size == 7
    np.testing.assert_allclose(config.output_nodes, [0.0, 0.5, 1.0])


def test_step_shrinks_active_range():
    config = FDConfig(dt=0.5, dx=1.0, N=1, J=1)
    state = SchemeState(0, np.array([[0.0], [2.0], [2.0]]))
    after = step(state, np.zeros((2, 1, 1)), np.zeros(1), config)
    assert after.n == 1
    np.testing.assert_allclose(after.values[:, 0], [1.0, 2.0])
    with pytest.raises(GridExhausted):
        step(after, np.zeros((1, 1, 1)), np.zeros(1), config)


def test_step_pure_transport_at_unit_ratio():
    config = FDConfig(dt=1.0, dx=1.0, N=2, J=1)
    state = SchemeState(0, np.array([[1.0], [2.0], [3.0], [4.0]]))
    after = step(state, np.zeros((3, 1, 1)), np.ones(1), config)
    np.testing.assert_array_equal(after.values[:, 0], [2.0, 3.0, 4.0])


def test_step_without_noise_ignores_beta(rng):
    config = FDConfig(dt=0.3, dx=1.0, N=2, J=1)
    values = rng.normal(size=(4, 2))
    noisy = step(SchemeState(0, values), rng.normal(size=(3, 2, 1)), np.zeros(1), config)
    np.testing.assert_allclose(noisy.values, 0.7 * values[:-1] + 0.3 * values[1:])


def test_beta_field_shape(rng):
    kernel = KernelSpec((KernelComponent(0, ExponentialKernel(1.0), LinearMap(rng.normal(size=(2, 3)))),), 1)
    beta = beta_field(kernel, 0.5, np.array([0.0, 0.1, 0.2]), np.ones(1))
    assert beta.shape == (3, 2, 3)
    np.testing.assert_allclose(beta[1], np.exp(-0.1) * kernel.components[0].B.entries)


def test_run_zero_volatility():
    kernel = KernelSpec((KernelComponent(0, ExponentialKernel(1.0), LinearMap([[1.0]])),), 1)
    result = run(FDConfig(dt=0.1, dx=0.2, N=10, J=5), kernel, ConstantVolatility(np.zeros(1)), WIENER,
                 seed=1, n_paths=20)
    assert not result.boundary.any()
    assert not result.final.any()


def test_unit_ratio_constant_kernel_matches_direct(unit_kernel):
    config = FDConfig(dt=0.1, dx=0.1, N=10, J=3)
    increments = sample_increments(WIENER, 0.1, 10, 25, seed=2)
    sigma = sample_volatility(ONE, 0.1, 10, 25, seed=2)
    scheme = run(config, unit_kernel, None, WIENER, seed=2, n_paths=25, increments=increments, sigma_paths=sigma)
    direct = hambit_direct(unit_kernel, None, WIENER, config.t_grid, 25, seed=2,
                           increments=increments, sigma_paths=sigma)
    np.testing.assert_allclose(scheme.boundary, direct.data, atol=1e-12)
    np.testing.assert_allclose(scheme.boundary[:, -1, 0], increments.data[:, :, 0].sum(axis=1), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_unit_ratio_is_exact_transport(ou_kernel, seed):
    config = FDConfig(dt=1.0 / 64, dx=1.0 / 64, N=64, J=4)
    increments = sample_increments(WIENER, config.dt, config.N, 5, seed=seed)
    sigma = sample_volatility(ONE, config.dt, config.N, 5, seed=seed)
    scheme = run(config, ou_kernel, None, WIENER, seed, n_paths=5, increments=increments, sigma_paths=sigma)
    mild = exact_mild_reference(config, ou_kernel, None, WIENER, seed, n_paths=5,
                                increments=increments, sigma_paths=sigma)
    np.testing.assert_allclose(scheme.boundary, mild.boundary, atol=1e-12, rtol=0)
    np.testing.assert_allclose(scheme.final, mild.final, atol=1e-12, rtol=0)


def test_mild_reference_constant_kernel(unit_kernel):
    config = FDConfig(dt=0.05, dx=0.1, N=20, J=4)
    increments = sample_increments(WIENER, 0.05, 20, 10, seed=3)
    mild = exact_mild_reference(config, unit_kernel, ONE, WIENER, 3, n_paths=10, increments=increments)
    np.testing.assert_allclose(mild.boundary[:, :, 0], np.concatenate(
        [np.zeros((10, 1)), np.cumsum(increments.data[:, :, 0], axis=1)], axis=1), atol=1e-12)
    np.testing.assert_allclose(mild.final[:, :, 0], np.repeat(mild.boundary[:, -1], 5, axis=1), atol=1e-12)


def test_run_matches_iterative_form(rng):
    """The marching scheme and its operator-power form agree on random small instances."""
    for trial in range(100):
        N, J = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        dim_u, dim_v, dim_h = (int(d) for d in rng.integers(1, 4, size=3))
        dx = 0.1
        dt = float(rng.uniform(0.01, 1.0)) * dx
        kernel = KernelSpec(tuple(
            KernelComponent(
                u,
                ExponentialKernel(float(rng.uniform(0.1, 2.0))) if rng.random() < 0.5 else ConstantKernel(float(rng.normal())),
                LinearMap(rng.normal(size=(dim_h, dim_v))),
            )
            for u in range(dim_u)
        ), dim_u)
        eigenvalues = rng.uniform(0.5, 1.5, size=dim_v)
        if trial % 2:
            noise = CompoundPoissonNoise(float(rng.uniform(0.5, 5.0)), CovarianceOp(eigenvalues))
            vol = ScalarLSSVolatility(float(rng.uniform(0.5, 2.0)), WienerNoise(CovarianceOp(np.ones(dim_u))))
        else:
            noise = WienerNoise(CovarianceOp(eigenvalues))
            vol = ConstantVolatility(rng.normal(size=dim_u))
        y0 = GridFunction(dx, rng.normal(size=(J + N + 1, dim_h)))
        config = FDConfig(dt=dt, dx=dx, N=N, J=J)
        seed = int(rng.integers(0, 1000))
        scheme = run(config, kernel, vol, noise, seed, y0=y0, n_paths=3)
        iterative = run_iterative_form(config, kernel, vol, noise, seed, y0=y0, n_paths=3)
        np.testing.assert_allclose(scheme.boundary, iterative.boundary, atol=1e-10)
        np.testing.assert_allclose(scheme.final, iterative.final, atol=1e-10)


def test_run_without_noise_transports_initial_curve():
    config = FDConfig(dt=0.05, dx=0.1, N=6, J=3)
    kernel = KernelSpec((KernelComponent(0, ExponentialKernel(1.0), LinearMap([[1.0]])),), 1)
    y0 = GridFunction.sample(lambda x: np.exp(-x), 0.1, 9)
    result = run(config, kernel, ConstantVolatility(np.zeros(1)), WIENER, seed=0, y0=y0)
    expected = apply_T_power_binomial(y0, 0.05, 6).values[: 4]
    np.testing.assert_allclose(result.final[0], expected, atol=1e-14)


def test_snapshots_and_threads(ou_kernel):
    config = FDConfig(dt=0.05, dx=0.1, N=8, J=4)
    serial = run(config, ou_kernel, ONE, WIENER, seed=4, n_paths=1100, snapshots=[0, 4, 8])
    threaded = run(config, ou_kernel, ONE, WIENER, seed=4, n_paths=1100, snapshots=[0, 4, 8],
                   executor=EnsembleExecutor(threads=2))
    np.testing.assert_array_equal(serial.boundary, threaded.boundary)
    assert sorted(serial.snapshots) == [0, 4, 8]
    assert serial.snapshots[4].shape == (1100, config.J + config.N + 1 - 4, 1)
    np.testing.assert_array_equal(serial.snapshots[8], serial.final)
    with pytest.raises(ValueError):
        run(config, ou_kernel, ONE, WIENER, seed=4, snapshots=[9])


def test_binomial_variance_identity():
    identity = binomial_variance_identity(4, 0.25, 0.5)
    assert identity.lhs == pytest.approx(0.25)
    assert identity.rhs == pytest.approx(0.25)
    assert binomial_variance_identity(5, 0.2, 0.2).lhs == pytest.approx(0.0, abs=1e-15)
    identity = binomial_variance_identity(1, 0.1, 0.4)
    assert identity.lhs == pytest.approx(0.03)
    assert identity.rhs == pytest.approx(0.03)


@pytest.mark.parametrize("lam", [0.1, 0.25, 0.5, 0.9, 1.0])
def test_binomial_variance_identity_grid(lam):
    for m in range(1, 65):
        identity = binomial_variance_identity(m, lam * 0.1, 0.1)
        assert identity.lhs == pytest.approx(identity.rhs, rel=1e-10, abs=1e-14)


def decaying(delta_x, n_intervals):
    """exp(-x) sampled as a one-component grid function"""
    return GridFunction(delta_x, np.exp(-delta_x * np.arange(n_intervals + 1))[:, None])


@pytest.mark.parametrize("dt, dx, m, n_nodes", [
    (0.05, 0.1, 10, 20),
    (0.025, 0.1, 20, 20),
    (0.1, 0.2, 5, 10),
    (0.01, 0.05, 30, 40),
    (0.1, 0.1, 10, 20),
])
@pytest.mark.parametrize("alpha", [0.5, 1.0])
def test_transport_error_bound(dt, dx, m, n_nodes, alpha):
    """exp(-x) shifts by a multiple of itself, so the error is at most t (dx - dt) times its squared norm."""
    w = WeightFunction(alpha)
    lipschitz_sq = hw_norm(decaying(dx, n_nodes), w) ** 2
    error = transport_error_sq(lambda x: np.exp(-x), w, dt, dx, m, n_nodes)
    t = m * dt
    assert error <= lipschitz_sq * t * (dx - dt) * (1 + 1e-6) + 1e-20


def test_transport_error_rate():
    """Squared transport error of a smooth curve shrinks like (dx - dt)^2 at fixed ratio."""
    w = WeightFunction(1.0)
    profile = lambda x: np.exp(-x)
    errors = []
    sizes = [0.2, 0.1, 0.05, 0.025]
    for dx in sizes:
        errors.append(transport_error_sq(profile, w, 0.5 * dx, dx, int(round(1.0 / (0.5 * dx))), int(round(2.0 / dx))))
    slope = np.polyfit(np.log(sizes), np.log(errors), 1)[0]
    assert 1.8 <= slope <= 2.2
    assert transport_error_sq(profile, w, 0.1, 0.1, 10, 20) == pytest.approx(0.0, abs=1e-20)


def test_initial_condition_error_triangle():
    w = WeightFunction(1.0)
    bound = space_constants(w).shift_bound
    report = initial_condition_error(lambda x: np.sin(2 * x) * np.exp(-x), w, 0.05, 0.1, 10, 20)
    assert report.lhs <= bound * report.interpolation_error + report.transport_error + 1e-12
    finer = initial_condition_error(lambda x: np.sin(2 * x) * np.exp(-x), w, 0.025, 0.05, 20, 40)
    assert finer.interpolation_error < report.interpolation_error


@pytest.mark.parametrize("dt, dx, m, n_nodes", [
    (0.05, 0.1, 10, 20),
    (0.025, 0.05, 20, 40),
    (0.0125, 0.025, 40, 80),
    (0.1, 0.1, 10, 20),
])
def test_initial_condition_error_bound(dt, dx, m, n_nodes):
    w = WeightFunction(1.0)
    refine = 8
    shift_bound = space_constants(w).shift_bound
    report = initial_condition_error(lambda x: 2.0 + np.exp(-x), w, dt, dx, m, n_nodes, refine=refine)
    lipschitz = hw_norm(decaying(dx / refine, n_nodes * refine), w)
    t = m * dt
    assert report.transport_error <= lipschitz * np.sqrt(t * (dx - dt)) + 1e-12
    assert report.lhs <= lipschitz * np.sqrt(t * (dx - dt)) + shift_bound * report.interpolation_error + 1e-12


def test_zero_volatility_is_max_norm_stable(ou_kernel, rng):
    config = FDConfig(dt=0.3, dx=1.0, N=20, J=5)
    y0 = GridFunction(1.0, rng.normal(size=(config.J + config.N + 1, 1)))
    result = run(config, ou_kernel, ConstantVolatility(np.zeros(1)), WIENER, seed=0, y0=y0, n_paths=1,
                 snapshots=range(config.N + 1))
    peaks = [np.abs(result.snapshots[n]).max() for n in range(config.N + 1)]
    assert peaks[0] == pytest.approx(np.abs(y0.values).max())
    assert all(later <= earlier + 1e-12 for earlier, later in zip(peaks, peaks[1:]))
