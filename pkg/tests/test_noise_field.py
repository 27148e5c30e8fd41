"""
Tests for the noise basis, Brownian increments and Ito integrals.
"""
import math

import numpy as np
import pytest

from app.core.errors import AssumptionViolationError, InvalidArgumentError
from app.core.schemas import NoiseConfig
from app.core.spectral import RealField, Trajectory, make_grid, mass
from app.services.noise_field import (
    build_noise_basis,
    derive_seed,
    generate_test_fields,
    ito_integral,
    multiplier_norm_empirical,
    sample_brownian_increments,
    smooth_step,
    window,
)


@pytest.fixture
def grid():
    return make_grid(math.pi, 128)


def test_smooth_step_limits():
    """The step is 0 left of 0, 1 right of 1 and symmetric about 1/2."""
    value, _ = smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    np.testing.assert_allclose(value, [0.0, 0.0, 0.5, 1.0, 1.0])


def test_window_plateau_and_edge(grid):
    """The window is 1 in the middle and vanishes at the boundary."""
    w, dw = window(grid, 0.6, 0.9)
    centre = np.argmin(np.abs(grid.nodes))
    assert w[centre] == 1.0
    assert w[0] == 0.0
    assert dw[centre] == 0.0
    assert np.all((w >= 0.0) & (w <= 1.0))


def test_damped_trig_requires_summability(grid):
    """p <= 3/2 makes the derivative sums diverge."""
    with pytest.raises(AssumptionViolationError) as exc_info:
        build_noise_basis(NoiseConfig(N=4, p=1.5), grid)
    assert exc_info.value.assumption == "noise_summability"
    assert str(exc_info.value).startswith("assumption noise_summability (")
    assert "p=1.5" in str(exc_info.value)


def test_single_mode_multiplier_bound(grid):
    """e = 0.5 cos(xi) has sup norms 0.5 and 0.5, so C(e) = 1."""
    noise = build_noise_basis(NoiseConfig(N=1, c=0.5, p=2.0, use_window=False), grid)
    assert noise.n_modes == 1
    assert noise.sup_norms[0] == pytest.approx(0.5)
    assert noise.derivative_sup_norms[0] == pytest.approx(0.5)
    assert noise.multiplier_bounds[0] == pytest.approx(1.0)
    assert noise.drift_bound == 0.0


def test_partial_sum_plus_tail_is_truncation_independent():
    """Raising N moves mass from the closed-form tail into the partial sum."""
    grid = make_grid(math.pi, 4096)
    config = NoiseConfig(N=64, c=1.0, p=2.0, use_window=False)
    coarse = build_noise_basis(config, grid, n_modes=32)
    fine = build_noise_basis(config, grid)
    assert coarse.partial_sum + coarse.tail == pytest.approx(fine.partial_sum + fine.tail, rel=1e-9)
    assert fine.tail < coarse.tail


def test_negative_mode_count_rejected(grid):
    """Mode counts are nonnegative."""
    with pytest.raises(InvalidArgumentError):
        build_noise_basis(NoiseConfig(N=1), grid, n_modes=-1)
    with pytest.raises(InvalidArgumentError):
        sample_brownian_increments(-1, 10, 0.1, seed=0)


def test_gaussian_bumps_are_windowed(grid):
    """Bumps stay inside the window."""
    noise = build_noise_basis(NoiseConfig(family="gaussian_bumps", N=6, c=1.0, p=1.0), grid)
    assert noise.n_modes == 6
    assert np.all(noise.mode_matrix[:, 0] == 0.0)
    assert noise.tail > 0.0


def test_increments_are_deterministic_and_prefix_stable():
    """Mode i always draws from its own stream."""
    a = sample_brownian_increments(4, 50, 0.01, seed=11)
    b = sample_brownian_increments(4, 50, 0.01, seed=11)
    c = sample_brownian_increments(2, 50, 0.01, seed=11)
    np.testing.assert_array_equal(a.increments, b.increments)
    np.testing.assert_array_equal(a.increments[:2], c.increments)
    assert not np.array_equal(a.increments, sample_brownian_increments(4, 50, 0.01, seed=12).increments)


def test_increment_moments():
    """dW ~ Normal(0, dt)."""
    dt, count = 0.01, 100_000
    incs = sample_brownian_increments(1, count, dt, seed=3)
    samples = incs.increments[0]
    assert abs(samples.mean()) < 5.0 * math.sqrt(dt / count)
    assert abs(samples.var() - dt) < 5.0 * dt * math.sqrt(2.0 / count)


def test_seed_range():
    """Seeds are unsigned 64-bit integers."""
    with pytest.raises(InvalidArgumentError):
        sample_brownian_increments(1, 10, 0.1, seed=-1)
    with pytest.raises(InvalidArgumentError):
        sample_brownian_increments(1, 10, 0.1, seed=2 ** 64)
    sample_brownian_increments(1, 10, 0.1, seed=2 ** 64 - 1)


def test_coarsen_sums_increments():
    """Coarsening keeps the Brownian path."""
    incs = sample_brownian_increments(2, 10, 0.1, seed=5)
    coarse = incs.coarsen(2)
    assert coarse.n_steps == 5
    assert coarse.dt == pytest.approx(0.2)
    np.testing.assert_allclose(coarse.increments, incs.increments[:, ::2] + incs.increments[:, 1::2])
    with pytest.raises(InvalidArgumentError):
        incs.coarsen(3)


def test_consumed_view_is_read_only():
    """Path-dependent coefficients only see past increments and cannot change them."""
    incs = sample_brownian_increments(2, 10, 0.1, seed=5)
    past = incs.consumed(4)
    assert past.shape == (2, 4)
    with pytest.raises(ValueError):
        past[0, 0] = 1.0


def test_derive_seed():
    """Derived seeds are reproducible and differ between members."""
    assert derive_seed(42, 0) == derive_seed(42, 0)
    assert derive_seed(42, 0) != derive_seed(42, 1)
    assert 0 <= derive_seed(42, 7) < 2 ** 64


def test_drift_only_ito_integral(grid):
    """With no modes the integral of a frozen field is drift * mass * t."""
    noise = build_noise_basis(NoiseConfig(N=0, drift_amplitude=0.3, drift_shape="constant"), grid)
    f = RealField.from_function(grid, lambda x: np.exp(-x ** 2))
    path = Trajectory.frozen(f, 20, 0.05)
    incs = sample_brownian_increments(0, 20, 0.05, seed=1)
    integral = ito_integral(path, noise, incs)
    np.testing.assert_allclose(integral, 0.3 * mass(f) * path.times, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(ito_integral(path, noise, incs, include_drift=False), 0.0)


@pytest.fixture(scope="module")
def frozen_ensemble():
    """Final martingale values of a frozen integrand over 10^4 seeds, T = 1."""
    grid = make_grid(math.pi, 128)
    n_steps, dt, members = 10, 0.1, 10_000
    noise = build_noise_basis(NoiseConfig(N=8, c=1.0, p=2.0), grid)
    f = RealField.from_function(grid, lambda x: np.exp(-x ** 2))
    path = Trajectory.frozen(f, n_steps, dt)
    finals = np.array([
        ito_integral(path, noise, sample_brownian_increments(8, n_steps, dt, seed=s), include_drift=False)[-1]
        for s in range(members)
    ])
    expected = n_steps * dt * np.sum((noise.mode_matrix @ f.values * grid.dx) ** 2)
    return finals, expected


def test_ito_isometry(frozen_ensemble):
    """Sample variance at t = 1 matches T * sum_i <Z, e_i>^2 within 3 standard errors."""
    finals, expected = frozen_ensemble
    centred = (finals - finals.mean()) ** 2
    stderr = centred.std(ddof=1) / math.sqrt(len(finals))
    assert abs(finals.var(ddof=1) - expected) < 3.0 * stderr


def test_ito_integral_has_zero_mean(frozen_ensemble):
    """The martingale part averages to zero within 3 standard errors."""
    finals, _ = frozen_ensemble
    stderr = finals.std(ddof=1) / math.sqrt(len(finals))
    assert abs(finals.mean()) < 3.0 * stderr


def test_ito_integral_is_linear(grid):
    """I(aZ1 + bZ2) = a I(Z1) + b I(Z2) on one Brownian path."""
    rng = np.random.default_rng(4)
    n_steps, dt = 40, 0.025
    noise = build_noise_basis(NoiseConfig(N=6, c=1.0, p=2.0, drift_amplitude=0.2, drift_shape="constant"), grid)
    incs = sample_brownian_increments(6, n_steps, dt, seed=9)
    steps = np.arange(n_steps + 1)

    def path(values):
        return Trajectory(grid, steps * dt, steps, values, dt, 1)

    z1 = rng.normal(size=(n_steps + 1, grid.n_points))
    z2 = rng.normal(size=(n_steps + 1, grid.n_points))
    a, b = 1.7, -0.4
    combined = ito_integral(path(a * z1 + b * z2), noise, incs)
    separate = a * ito_integral(path(z1), noise, incs) + b * ito_integral(path(z2), noise, incs)
    np.testing.assert_allclose(combined, separate, rtol=1e-10, atol=1e-10 * np.max(np.abs(separate)))


def test_strided_ito_integral_holds_left_snapshot(grid):
    """With stride > 1 each interval pairs its left snapshot with the summed increments."""
    n_steps, dt, stride = 20, 0.05, 5
    noise = build_noise_basis(NoiseConfig(N=4, c=1.0, p=2.0), grid)
    incs = sample_brownian_increments(4, n_steps, dt, seed=2)
    f = RealField.from_function(grid, lambda x: np.exp(-x ** 2))

    fine = ito_integral(Trajectory.frozen(f, n_steps, dt), noise, incs)
    steps = np.arange(0, n_steps + 1, stride)
    snapshots = np.broadcast_to(f.values, (len(steps), grid.n_points)).copy()
    coarse = ito_integral(Trajectory(grid, steps * dt, steps, snapshots, dt, stride), noise, incs)
    np.testing.assert_allclose(coarse, fine[::stride], rtol=1e-12, atol=1e-14)

    varying = snapshots * np.arange(1, len(steps) + 1)[:, None]
    held = ito_integral(Trajectory(grid, steps * dt, steps, varying, dt, stride), noise, incs, include_drift=False)
    dw = incs.increments.reshape(4, -1, stride).sum(axis=2)
    pairings = varying[:-1] @ noise.mode_matrix.T * grid.dx
    np.testing.assert_allclose(held[1:], np.cumsum(np.einsum("ki,ik->k", pairings, dw)), rtol=1e-12, atol=1e-12)


def test_multiplier_norm_of_constants(grid):
    """e = 1 is the identity and e = 0 the zero operator, for 100 test fields."""
    fields = generate_test_fields(grid, 100, seed=3)
    for order in (-1, 1):
        assert multiplier_norm_empirical(RealField.constant(grid, 1.0), fields, order=order) == pytest.approx(
            1.0, rel=1e-12
        )
        assert multiplier_norm_empirical(RealField.zeros(grid), fields, order=order) == 0.0


def test_multiplier_norm_of_sine(grid):
    """sin(xi) has sup norms 1 and 1, so its multiplier norm is at most 2."""
    e = RealField.from_function(grid, np.sin)
    estimate = multiplier_norm_empirical(e, generate_test_fields(grid, 100, seed=5))
    assert 0.0 < estimate <= 2.0


def test_zero_test_fields_are_skipped(grid, caplog):
    """Zero fields contribute nothing and are logged."""
    e = RealField.from_function(grid, np.cos)
    fields = [RealField.zeros(grid)] + generate_test_fields(grid, 4, seed=1)
    with caplog.at_level("WARNING"):
        estimate = multiplier_norm_empirical(e, fields)
    assert estimate == multiplier_norm_empirical(e, fields[1:])
    assert "zero test field" in caplog.text


@pytest.mark.parametrize(
    "config",
    [
        NoiseConfig(N=8, c=1.0, p=2.0, use_window=False),
        NoiseConfig(N=8, c=1.0, p=2.0),
        NoiseConfig(family="gaussian_bumps", N=6, c=1.0, p=1.0),
    ],
    ids=["damped_trig", "damped_trig_windowed", "gaussian_bumps"],
)
def test_empirical_multiplier_norm_below_bound(grid, config):
    """No built-in basis member exceeds its closed-form multiplier bound on 100 test fields."""
    noise = build_noise_basis(config, grid)
    fields = generate_test_fields(grid, 100, seed=1)
    for e, bound in zip(noise.modes, noise.multiplier_bounds):
        estimate = multiplier_norm_empirical(e, fields)
        assert 0.0 < estimate <= bound * (1.0 + 1e-8)
