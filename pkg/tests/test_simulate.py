import numpy as np
import pytest

from hambit.core.errors import CouplingError, DimensionError, SingularGramError
from hambit.core.hilbert import CovarianceOp, LinearMap
from hambit.core.kernels import (
    ConstantKernel,
    ConstantVolatility,
    ExponentialKernel,
    KernelComponent,
    KernelSpec,
    OperatorOUVolatility,
    ScalarLSSVolatility,
    VolatilityPaths,
    expected_hs_norm_sq,
    gamma_op_bound,
    sample_volatility,
)
from hambit.core.noise import CompoundPoissonNoise, IncrementBatch, WienerNoise, sample_increments
from hambit.core.simulate import (
    TruncationLevels,
    approximation_bound,
    char_functional_analytic,
    char_functional_mc,
    conditional_covariance,
    grid_index,
    hambit_direct,
    integrability_bound,
    isometry_check,
    project,
    project_field,
    stationary_covariance,
    truncation_error_bound,
    truncation_error_mc,
    vmv_series,
)
from hambit.executors.ensemble_executor import EnsembleExecutor

WIENER = WienerNoise(CovarianceOp([1.0]))
OU_VARIANCE = (1.0 - np.exp(-2.0)) / 2.0


def scalar_kernel(g) -> KernelSpec:
    return KernelSpec((KernelComponent(0, g, LinearMap([[1.0]])),), 1)


def time_grid(dt, n_steps):
    return dt * np.arange(n_steps + 1)


def mixed_kernel(rng, dim_u=2, dim_v=3, dim_h=2) -> KernelSpec:
    return KernelSpec((
        KernelComponent(0, ExponentialKernel(0.8), LinearMap(rng.normal(size=(dim_h, dim_v)))),
        KernelComponent(1, ConstantKernel(0.5), LinearMap(rng.normal(size=(dim_h, dim_v)))),
        KernelComponent(1, ExponentialKernel(2.0), LinearMap(rng.normal(size=(dim_h, dim_v)))),
    ), dim_u)


def test_direct_telescoping_sum(unit_kernel):
    increments = IncrementBatch(1.0, np.array([[[0.1], [-0.2], [0.3]]]))
    sigma = VolatilityPaths(1.0, np.ones((1, 4, 1)))
    ensemble = hambit_direct(unit_kernel, None, WIENER, time_grid(1.0, 3), 1, seed=0,
                             increments=increments, sigma_paths=sigma)
    np.testing.assert_allclose(ensemble.data[0, :, 0], [0.0, 0.1, -0.1, 0.2], atol=1e-15)
    assert ensemble.at(3.0)[0, 0] == pytest.approx(0.2)


def test_direct_zero_volatility(ou_kernel):
    ensemble = hambit_direct(ou_kernel, ConstantVolatility(np.zeros(1)), WIENER, time_grid(0.1, 10), 50, seed=1)
    assert not ensemble.data.any()


def test_direct_variance_matches_isometry(ou_kernel):
    """Var X(1) for the OU field against the left-point quadrature and the closed form."""
    vol = ConstantVolatility(np.ones(1))
    dt = 1.0 / 64
    ensemble = hambit_direct(ou_kernel, vol, WIENER, time_grid(dt, 64), 20000, seed=2)
    sigma = sample_volatility(vol, dt, 64, 20000, seed=2)
    result = isometry_check(ensemble, ou_kernel, sigma, WIENER.covariance(), 1.0)
    assert abs(result.empirical - result.quadrature) <= 4 * result.stderr
    assert result.quadrature == pytest.approx(OU_VARIANCE, abs=0.01)


def test_direct_stride_and_threads(ou_kernel):
    vol = ScalarLSSVolatility(1.0, WienerNoise(CovarianceOp([0.5])))
    t_grid = time_grid(0.1, 8)
    full = hambit_direct(ou_kernel, vol, WIENER, t_grid, 1500, seed=4)
    strided = hambit_direct(ou_kernel, vol, WIENER, t_grid, 1500, seed=4, stride=4,
                            executor=EnsembleExecutor(threads=3))
    np.testing.assert_allclose(strided.t_grid, [0.0, 0.4, 0.8])
    np.testing.assert_allclose(strided.data, full.data[:, ::4], atol=1e-14)
    with pytest.raises(ValueError):
        hambit_direct(ou_kernel, vol, WIENER, t_grid, 10, seed=4, stride=3)


def test_series_collapses_in_one_dimension(ou_kernel):
    vol = ScalarLSSVolatility(1.0, WienerNoise(CovarianceOp([1.0])))
    t_grid = time_grid(0.1, 10)
    direct = hambit_direct(ou_kernel, vol, WIENER, t_grid, 30, seed=5)
    series = vmv_series(ou_kernel, vol, WIENER, TruncationLevels(1, 1, 1), t_grid, 30, seed=5)
    np.testing.assert_allclose(series.components[:, :, 0, 0, 0], direct.data[:, :, 0], atol=1e-12)


def test_series_full_truncation_equals_direct(rng):
    kernel = mixed_kernel(rng)
    vol = ScalarLSSVolatility(1.0, WienerNoise(CovarianceOp([1.0, 0.5])))
    noise = WienerNoise(CovarianceOp([1.0, 0.3, 0.1]))
    t_grid = time_grid(0.1, 10)
    increments = sample_increments(noise, 0.1, 10, 40, seed=6)
    sigma = sample_volatility(vol, 0.1, 10, 40, seed=6)
    direct = hambit_direct(kernel, None, noise, t_grid, 40, seed=6, increments=increments, sigma_paths=sigma)
    series = vmv_series(kernel, None, noise, TruncationLevels(2, 3, 2), t_grid, 40, seed=6,
                        increments=increments, sigma_paths=sigma)
    np.testing.assert_allclose(series.ensemble.data, direct.data, atol=1e-10)
    mse, _ = truncation_error_mc(direct, series, 1.0)
    assert mse == pytest.approx(0.0, abs=1e-20)


def test_series_orthogonal_direction_vanishes():
    kernel = KernelSpec((KernelComponent(0, ExponentialKernel(1.0), LinearMap([[0.0, 0.0], [1.0, 2.0]])),), 1)
    noise = WienerNoise(CovarianceOp([1.0, 1.0]))
    series = vmv_series(kernel, ConstantVolatility(np.ones(1)), noise, TruncationLevels(1, 2, 1),
                        time_grid(0.1, 5), 10, seed=7)
    assert not series.ensemble.data.any()


def test_truncation_levels_validated(ou_kernel):
    with pytest.raises(DimensionError):
        vmv_series(ou_kernel, ConstantVolatility(np.ones(1)), WIENER, TruncationLevels(1, 1, 2),
                   time_grid(0.1, 3), 2, seed=0)


def decaying_diagonal(dim=3):
    """Diagonal kernel and noise with weights n^-3"""
    weights = np.arange(1, dim + 1, dtype=float) ** -3
    components = tuple(
        KernelComponent(n, ExponentialKernel(1.0), LinearMap(np.diag(np.eye(dim)[n] * weights[n])))
        for n in range(dim)
    )
    return KernelSpec(components, dim), WienerNoise(CovarianceOp(weights))


def test_truncation_bound_monotone_and_valid():
    kernel, noise = decaying_diagonal()
    vol = ConstantVolatility(np.ones(3))
    dt = 0.05
    bound = lambda N, M, K: truncation_error_bound(kernel, vol, noise, TruncationLevels(N, M, K), 1.0, dt)
    assert bound(3, 3, 3) == 0.0
    for level in range(1, 3):
        assert bound(level, 3, 3) > bound(level + 1, 3, 3)
        assert bound(3, level, 3) > bound(3, level + 1, 3)
        assert bound(3, 3, level) > bound(3, 3, level + 1)

    t_grid = time_grid(dt, 20)
    increments = sample_increments(noise, dt, 20, 4000, seed=8)
    sigma = sample_volatility(vol, dt, 20, 4000, seed=8)
    direct = hambit_direct(kernel, None, noise, t_grid, 4000, seed=8, increments=increments, sigma_paths=sigma)
    for levels in (TruncationLevels(1, 3, 3), TruncationLevels(2, 2, 2), TruncationLevels(1, 1, 1)):
        series = vmv_series(kernel, None, noise, levels, t_grid, 4000, seed=8,
                            increments=increments, sigma_paths=sigma)
        mse, stderr = truncation_error_mc(direct, series, 1.0)
        rhs = truncation_error_bound(kernel, vol, noise, levels, 1.0, dt)
        assert mse <= rhs ** 2 + 4 * stderr


def test_truncation_bound_zero_volatility():
    kernel, noise = decaying_diagonal()
    assert truncation_error_bound(kernel, ConstantVolatility(np.zeros(3)), noise,
                                  TruncationLevels(1, 1, 1), 1.0, 0.1) == 0.0


def test_conditional_covariance(ou_kernel):
    sigma = sample_volatility(ConstantVolatility(np.ones(1)), 0.001, 1000, 1, seed=0)
    cov = conditional_covariance(ou_kernel, sigma, CovarianceOp([1.0]), 1.0)
    assert cov[0, 0] == pytest.approx(OU_VARIANCE, abs=1e-3)
    assert not conditional_covariance(ou_kernel, sigma, CovarianceOp([0.0]), 1.0).any()
    zero = sample_volatility(ConstantVolatility(np.zeros(1)), 0.001, 1000, 1, seed=0)
    assert not conditional_covariance(ou_kernel, zero, CovarianceOp([1.0]), 1.0).any()


def test_stationary_covariance():
    one = np.ones(1)
    q = CovarianceOp([1.0])
    assert stationary_covariance(scalar_kernel(ExponentialKernel(1.0)), one, q)[0, 0] == pytest.approx(0.5, abs=1e-6)
    assert stationary_covariance(scalar_kernel(ExponentialKernel(2.0)), one, q)[0, 0] == pytest.approx(0.25, abs=1e-6)
    assert not stationary_covariance(scalar_kernel(ExponentialKernel(1.0)), one, CovarianceOp([0.0])).any()


def test_stationary_covariance_matches_field_at_large_time(ou_kernel):
    dt = 1.0 / 64
    ensemble = hambit_direct(ou_kernel, ConstantVolatility(np.ones(1)), WIENER, time_grid(dt, 512), 10000,
                             seed=9, stride=512, executor=EnsembleExecutor(threads=2))
    x = ensemble.at(8.0)[:, 0]
    sq = x ** 2
    stderr = sq.std(ddof=1) / np.sqrt(sq.size)
    # left-point quadrature sits about dt / 2 below 1/2
    assert abs(sq.mean() - 0.5) <= 4 * stderr + 0.5 * dt


def test_char_functional_at_zero(ou_kernel):
    ensemble = hambit_direct(ou_kernel, ConstantVolatility(np.ones(1)), WIENER, time_grid(0.1, 10), 200, seed=3)
    estimate = char_functional_mc(ensemble, 1.0, np.zeros(1))
    assert estimate.value == 1.0
    assert estimate.stderr == 0.0
    sigma = sample_volatility(ConstantVolatility(np.ones(1)), 0.1, 10, 200, seed=3)
    assert char_functional_analytic(ou_kernel, sigma, WIENER, 1.0, np.zeros(1)) == 1.0


@pytest.mark.parametrize("h", [-1.5, 0.5, 1.0, 2.0])
def test_char_functional_gaussian(ou_kernel, h):
    dt = 1.0 / 64
    vol = ConstantVolatility(np.ones(1))
    ensemble = hambit_direct(ou_kernel, vol, WIENER, time_grid(dt, 64), 20000, seed=10)
    sigma = sample_volatility(vol, dt, 64, 20000, seed=10)
    estimate = char_functional_mc(ensemble, 1.0, np.array([h]))
    analytic = char_functional_analytic(ou_kernel, sigma, WIENER, 1.0, np.array([h]))
    assert abs(estimate.value) <= 1.0 + 1e-12
    assert abs(estimate.value - analytic) <= 4 * estimate.stderr
    if h == 1.0:
        assert analytic.real == pytest.approx(0.805560, abs=5e-3)


def test_char_functional_compound_poisson(unit_kernel):
    noise = CompoundPoissonNoise(2.0, CovarianceOp([1.0]))
    vol = ConstantVolatility(np.ones(1))
    sigma = sample_volatility(vol, 0.1, 10, 5, seed=0)
    h = 0.7
    expected = np.exp(2.0 * (np.exp(-h * h / 2.0) - 1.0))
    assert char_functional_analytic(unit_kernel, sigma, noise, 1.0, np.array([h])) == pytest.approx(expected)
    ensemble = hambit_direct(unit_kernel, vol, noise, time_grid(0.1, 10), 20000, seed=11)
    estimate = char_functional_mc(ensemble, 1.0, np.array([h]))
    assert abs(estimate.value - expected) <= 4 * estimate.stderr


def test_char_functional_with_stochastic_volatility(ou_kernel):
    vol = ScalarLSSVolatility(1.0, WienerNoise(CovarianceOp([1.0])))
    dt = 0.05
    ensemble = hambit_direct(ou_kernel, vol, WIENER, time_grid(dt, 20), 20000, seed=12)
    sigma = sample_volatility(vol, dt, 20, 20000, seed=12)
    estimate = char_functional_mc(ensemble, 1.0, np.array([1.5]))
    analytic = char_functional_analytic(ou_kernel, sigma, WIENER, 1.0, np.array([1.5]))
    assert abs(estimate.value - analytic) <= 4 * estimate.stderr


def test_char_functional_rejects_shared_coupling(ou_kernel):
    vol = ScalarLSSVolatility(1.0, WienerNoise(CovarianceOp([1.0])))
    sigma = sample_volatility(vol, 0.1, 10, 5, seed=0, coupling="shared")
    with pytest.raises(CouplingError):
        char_functional_analytic(ou_kernel, sigma, WIENER, 1.0, np.ones(1))


def test_project_scalar_case(ou_kernel):
    result = project(ou_kernel, np.ones(1), CovarianceOp([1.0]), 1.0, 0.25, np.array([[1.0]]))
    assert result.gram[0, 0] == 1.0
    assert result.C[0, 0] == pytest.approx(np.exp(-1.5))
    assert result.gamma[0, 0] == pytest.approx(np.exp(-0.75))


def test_project_orthonormal_and_zero(rng):
    kernel = mixed_kernel(rng, dim_h=3)
    q = CovarianceOp([1.0, 0.5, 0.2])
    xi, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    result = project(kernel, rng.normal(size=2), q, 1.0, 0.5, xi.T)
    np.testing.assert_allclose(result.gram, np.eye(3), atol=1e-12)
    zero = project(kernel, np.zeros(2), q, 1.0, 0.5, xi.T)
    assert not zero.C.any()
    assert not zero.gamma.any()


def test_project_covariance_properties(rng):
    for _ in range(20):
        n = int(rng.integers(1, 5))
        kernel = mixed_kernel(rng, dim_v=3, dim_h=4)
        result = project(kernel, rng.normal(size=2), CovarianceOp(rng.uniform(0.0, 2.0, size=3)),
                         1.0, float(rng.uniform(0.0, 1.0)), rng.normal(size=(n, 4)))
        np.testing.assert_allclose(result.C, result.C.T)
        assert np.linalg.eigvalsh(result.C).min() >= -1e-10
        np.testing.assert_allclose(result.gamma @ result.gamma.T, result.C, atol=1e-8)


def test_project_rejects_dependent_directions():
    kernel = KernelSpec((KernelComponent(0, ExponentialKernel(1.0), LinearMap.identity(2)),), 1)
    with pytest.raises(SingularGramError, match="condition number"):
        project(kernel, np.ones(1), CovarianceOp.identity(2), 1.0, 0.5, np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_project_field(rng):
    xi = rng.normal(size=(2, 4))
    coefficients = rng.normal(size=(5, 2))
    x = coefficients @ xi
    coordinates, projected = project_field(x, xi)
    np.testing.assert_allclose(projected, x, atol=1e-10)
    np.testing.assert_allclose(coordinates, coefficients, atol=1e-10)


def test_isometry_with_stochastic_volatility(rng):
    kernel = mixed_kernel(rng)
    noise = CompoundPoissonNoise(3.0, CovarianceOp([0.5, 0.2, 0.1]))
    vol = ScalarLSSVolatility(0.7, WienerNoise(CovarianceOp([1.0, 2.0])))
    dt = 0.05
    increments = sample_increments(noise, dt, 20, 10000, seed=13)
    sigma = sample_volatility(vol, dt, 20, 10000, seed=13)
    ensemble = hambit_direct(kernel, None, noise, time_grid(dt, 20), 10000, seed=13,
                             increments=increments, sigma_paths=sigma)
    result = isometry_check(ensemble, kernel, sigma, noise.covariance(), 1.0)
    assert abs(result.empirical - result.quadrature) <= 4 * result.stderr
    doubled = isometry_check(ensemble, kernel, sigma, noise.covariance().scaled(2.0), 1.0)
    assert doubled.quadrature == pytest.approx(2 * result.quadrature)
    assert integrability_bound(kernel, None, noise.covariance(), 1.0, dt, sigma_paths=sigma) >= result.quadrature


def test_operator_ou_bounds_without_paths():
    model = OperatorOUVolatility(-np.eye(2), 1.0, 0.5, np.eye(2), moment_paths=300)
    kernel = KernelSpec((
        KernelComponent(0, ExponentialKernel(1.0), LinearMap([[1.0]])),
        KernelComponent(3, ConstantKernel(0.5), LinearMap([[1.0]])),
    ), 4)
    q = CovarianceOp([2.0])
    dt = 0.25
    expected = 2.0 * dt * sum(
        gamma_op_bound(kernel, 1.0, s) ** 2 * expected_hs_norm_sq(model, s)
        for s in dt * np.arange(4)
    )
    assert integrability_bound(kernel, model, q, 1.0, dt) == pytest.approx(expected, rel=1e-8)

    noise = WienerNoise(q)
    levels = TruncationLevels(1, 1, 1)
    first = truncation_error_bound(kernel, model, noise, levels, 1.0, dt, seed=3)
    assert truncation_error_bound(kernel, model, noise, levels, 1.0, dt, seed=3) == first
    assert truncation_error_bound(kernel, model, noise, levels, 1.0, dt, seed=4) != first


def test_approximation_bound(ou_kernel):
    dt = 0.05
    vol = ScalarLSSVolatility(1.0, WienerNoise(CovarianceOp([1.0])))
    other = scalar_kernel(ExponentialKernel(1.5))
    increments = sample_increments(WIENER, dt, 20, 10000, seed=14)
    sigma = sample_volatility(vol, dt, 20, 10000, seed=14)
    q = WIENER.covariance()
    same = approximation_bound(ou_kernel, sigma, ou_kernel, sigma, q, 1.0)
    assert same.rhs == 0.0

    shifted = VolatilityPaths(dt, sigma.data + 0.1)
    bound = approximation_bound(ou_kernel, sigma, other, shifted, q, 1.0)
    x1 = hambit_direct(ou_kernel, None, WIENER, time_grid(dt, 20), 10000, seed=14,
                       increments=increments, sigma_paths=sigma)
    x2 = hambit_direct(other, None, WIENER, time_grid(dt, 20), 10000, seed=14,
                       increments=increments, sigma_paths=shifted)
    sq = np.sum((x1.at(1.0) - x2.at(1.0)) ** 2, axis=1)
    assert sq.mean() <= bound.rhs + 4 * sq.std(ddof=1) / np.sqrt(sq.size)


def test_grid_index():
    t_grid = time_grid(0.1, 10)
    assert grid_index(t_grid, 0.3) == 3
    with pytest.raises(ValueError):
        grid_index(t_grid, 0.35)
