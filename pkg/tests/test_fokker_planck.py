"""
Tests for the Fokker-Planck solver, its coefficients and closed-form solutions.
"""
import math

import numpy as np
import pytest

from app.core.errors import AssumptionViolationError, BlowUpError, InvalidArgumentError, StabilityError
from app.core.schemas import NoiseConfig, Scheme
from app.core.spectral import RealField, bump_profile, l2_norm, make_grid, mass
from app.services.fokker_planck import (
    DiffusionCoefficient,
    gbm_oracle,
    heat_oracle,
    solve_fp,
    weak_form_residual_fp,
)
from app.services.noise_field import BrownianIncrements, NoiseModel, build_noise_basis, sample_brownian_increments


@pytest.fixture
def grid():
    return make_grid(math.pi, 64)


@pytest.fixture
def phi(grid):
    """Test function supported in |xi| < L/2."""
    return RealField(grid, bump_profile(grid.nodes / (0.5 * grid.half_length)))


def test_heat_oracle_semi_implicit():
    """Without noise the semi-implicit scheme tracks exp(-a0 t) cos(xi) to 1e-6."""
    grid = make_grid(math.pi, 256)
    a = DiffusionCoefficient.constant(grid, 0.3)
    noise = build_noise_basis(NoiseConfig(N=0), grid)
    dt, n_steps = 1e-3, 1000
    incs = sample_brownian_increments(0, n_steps, dt, seed=0)
    x0 = RealField.from_function(grid, np.cos)
    traj = solve_fp(x0, a, noise, incs, n_steps, dt, stride=100, scheme=Scheme.SEMI_IMPLICIT)
    for t, snapshot in zip(traj.times, traj.snapshots):
        error = l2_norm(RealField(grid, snapshot) - heat_oracle(x0, 0.3, t))
        assert error < 1e-6


def test_explicit_scheme_rejects_unstable_step():
    """dt * a0 * k_max^2 = 0.3 * 128^2 * 1e-3 > 2."""
    grid = make_grid(math.pi, 256)
    a = DiffusionCoefficient.constant(grid, 0.3)
    noise = build_noise_basis(NoiseConfig(N=0), grid)
    incs = sample_brownian_increments(0, 10, 1e-3, seed=0)
    x0 = RealField.from_function(grid, np.cos)
    with pytest.raises(StabilityError):
        solve_fp(x0, a, noise, incs, 10, 1e-3, scheme=Scheme.EXPLICIT)


def test_heat_oracle_decays_modes(grid):
    """The single mode cos(xi) decays like exp(-rate t)."""
    x0 = RealField.from_function(grid, np.cos)
    decayed = heat_oracle(x0, 0.4, 2.0)
    np.testing.assert_allclose(decayed.values, math.exp(-0.8) * np.cos(grid.nodes), atol=1e-12)


def test_degenerate_region_is_frozen_without_noise(grid):
    """Where a = 0 and there is no noise the solution does not move at all."""
    a = DiffusionCoefficient.degenerate_half(grid, 0.5)
    noise = build_noise_basis(NoiseConfig(N=0), grid)
    incs = sample_brownian_increments(0, 50, 1e-3, seed=0)
    x0 = RealField(grid, bump_profile((grid.nodes + 0.5 * grid.half_length) / (0.25 * grid.half_length)))
    traj = solve_fp(x0, a, noise, incs, 50, 1e-3)
    np.testing.assert_array_equal(traj.final.values, x0.values)


def test_degenerate_region_keeps_support_with_noise(grid):
    """Multiplicative noise cannot move mass into the half where it started at zero."""
    a = DiffusionCoefficient.degenerate_half(grid, 0.5)
    noise = build_noise_basis(NoiseConfig(N=2, c=0.5), grid)
    incs = sample_brownian_increments(2, 50, 1e-3, seed=4)
    x0 = RealField(grid, bump_profile((grid.nodes + 0.5 * grid.half_length) / (0.25 * grid.half_length)))
    traj = solve_fp(x0, a, noise, incs, 50, 1e-3)
    assert np.all(traj.snapshots[:, grid.nodes >= 0] == 0.0)
    assert not np.array_equal(traj.final.values, x0.values)


def test_degenerate_half_vanishes_on_left_half(grid):
    """a is zero on [-L, 0] and reaches a0 in the middle of (0, L)."""
    a = DiffusionCoefficient.degenerate_half(grid, 0.5)
    values = a.evaluate(0)
    assert np.all(values[grid.nodes <= 0] == 0.0)
    assert values[np.argmin(np.abs(grid.nodes - 0.5 * grid.half_length))] == pytest.approx(0.5)
    assert a.degenerate


def test_path_dependent_coefficient_reads_consumed_increments(grid):
    """a(t) only depends on the increments before t."""
    a = DiffusionCoefficient.path_dependent(grid, 0.4)
    incs = sample_brownian_increments(1, 10, 0.1, seed=2)
    altered = incs.increments.copy()
    altered[:, 5:] += 1.0
    other = BrownianIncrements(1, 10, 0.1, 2, altered)
    np.testing.assert_allclose(a.evaluate(0, incs), 0.2)
    expected = 0.2 * (1.0 + math.tanh(incs.increments[0, :5].sum()))
    np.testing.assert_allclose(a.evaluate(5, incs), expected)
    np.testing.assert_array_equal(a.evaluate(5, incs), a.evaluate(5, other))
    assert a.path_dependent


def test_coefficient_bounds_are_enforced(grid):
    """Negative tables and rules exceeding their declared bound are rejected."""
    table = np.full(grid.n_points, 0.1)
    table[3] = -0.01
    with pytest.raises(AssumptionViolationError):
        DiffusionCoefficient.tabulated(grid, table)
    rule = DiffusionCoefficient(grid, 0.1, lambda step, consumed: np.full(grid.n_points, 0.2))
    with pytest.raises(AssumptionViolationError) as exc_info:
        rule.evaluate(0)
    assert exc_info.value.assumption == "diffusion_bounds"
    assert "assumption diffusion_bounds" in str(exc_info.value)
    assert "leaves [0, 0.1]" in str(exc_info.value)
    with pytest.raises(InvalidArgumentError):
        DiffusionCoefficient(grid, -1.0, lambda step, consumed: 0.0)


def test_explicit_weak_form_residual_is_roundoff(grid, phi):
    """The solver's own quadrature satisfies the weak form to rounding error."""
    a = DiffusionCoefficient.constant(grid, 0.5)
    noise = build_noise_basis(NoiseConfig(N=3, c=0.5, drift_amplitude=0.2), grid)
    incs = sample_brownian_increments(3, 40, 1e-3, seed=8)
    x0 = RealField.from_function(grid, lambda x: np.exp(-x ** 2))
    traj = solve_fp(x0, a, noise, incs, 40, 1e-3)
    residual = weak_form_residual_fp(traj, a, noise, incs, phi)
    assert np.max(np.abs(residual)) < 1e-10


def test_too_few_increments(grid):
    """A solve cannot run past the sampled path."""
    a = DiffusionCoefficient.constant(grid, 0.1)
    noise = build_noise_basis(NoiseConfig(N=1), grid)
    incs = sample_brownian_increments(1, 5, 1e-3, seed=0)
    x0 = RealField.from_function(grid, np.cos)
    with pytest.raises(InvalidArgumentError):
        solve_fp(x0, a, noise, incs, 6, 1e-3)
    with pytest.raises(InvalidArgumentError):
        solve_fp(x0, a, noise, incs, 5, 2e-3)


def test_blow_up_reports_step(grid):
    """A huge multiplier overflows within a few steps and the step is reported."""
    noise = NoiseModel.from_fields(grid, [RealField.constant(grid, 1e150)])
    a = DiffusionCoefficient.constant(grid, 0.0)
    incs = sample_brownian_increments(1, 10, 1e-3, seed=1)
    x0 = RealField.constant(grid, 1.0)
    with pytest.raises(BlowUpError) as exc_info:
        solve_fp(x0, a, noise, incs, 10, 1e-3)
    assert 1 <= exc_info.value.step <= 10
    assert exc_info.value.exit_code == 3


def test_gbm_oracle_matches_closed_form(grid):
    """With W_t = 0 the geometric Brownian motion only carries the Ito correction."""
    x0 = RealField.constant(grid, 2.0)
    e = RealField.constant(grid, 0.5)
    result = gbm_oracle(x0, e, 0.0, 1.0)
    np.testing.assert_allclose(result.values, 2.0 * math.exp(-0.125))
    drift = RealField.constant(grid, 0.1)
    np.testing.assert_allclose(gbm_oracle(x0, e, 0.0, 1.0, drift).values, 2.0 * math.exp(-0.025))


@pytest.mark.parametrize("scheme", [Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT])
def test_mass_is_conserved_without_noise(grid, scheme):
    """The second derivative has no zero mode, so 10^4 noiseless steps keep the mass."""
    a = DiffusionCoefficient.degenerate_half(grid, 0.5)
    noise = build_noise_basis(NoiseConfig(N=0), grid)
    n_steps, dt = 10_000, 1e-3
    incs = sample_brownian_increments(0, n_steps, dt, seed=0)
    x0 = RealField.from_function(grid, lambda x: np.exp(-4.0 * (x - 1.0) ** 2))
    traj = solve_fp(x0, a, noise, incs, n_steps, dt, stride=1000, scheme=scheme)
    initial = mass(x0)
    for snapshot in traj.snapshots:
        assert abs(mass(RealField(grid, snapshot)) - initial) <= 1e-10 * abs(initial)


@pytest.mark.parametrize("scheme", [Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT])
def test_solution_is_linear_in_initial_data(grid, scheme):
    """On one Brownian path, solving from alpha x0 gives alpha times the solution from x0."""
    a = DiffusionCoefficient.constant(grid, 0.5)
    noise = build_noise_basis(NoiseConfig(N=3, c=0.5, drift_amplitude=0.1), grid)
    incs = sample_brownian_increments(3, 200, 1e-3, seed=6)
    x0 = RealField.from_function(grid, lambda x: np.exp(-x ** 2))
    alpha = 2.5
    base = solve_fp(x0, a, noise, incs, 200, 1e-3, stride=20, scheme=scheme)
    scaled = solve_fp(alpha * x0, a, noise, incs, 200, 1e-3, stride=20, scheme=scheme)
    expected = alpha * base.snapshots
    np.testing.assert_allclose(scaled.snapshots, expected, rtol=1e-10, atol=1e-10 * np.max(np.abs(expected)))


def test_solver_tracks_gbm_without_diffusion(grid):
    """With a = 0 every node follows x0 exp(e W_t - e^2 t / 2) up to the Euler-Maruyama error."""
    a = DiffusionCoefficient.constant(grid, 0.0)
    noise = build_noise_basis(NoiseConfig(N=1, c=0.5, p=2.0, use_window=False), grid)
    n_steps, dt = 1000, 1e-3
    incs = sample_brownian_increments(1, n_steps, dt, seed=12)
    x0 = RealField.from_function(grid, lambda x: 1.0 + 0.5 * np.cos(x))
    traj = solve_fp(x0, a, noise, incs, n_steps, dt, stride=n_steps)
    oracle = gbm_oracle(x0, noise.modes[0], float(incs.increments[0].sum()), n_steps * dt)
    relative = np.abs(traj.final.values - oracle.values) / oracle.values
    assert np.max(relative) < 0.05


def test_semi_implicit_weak_form_residual_is_first_order(grid, phi):
    """The theta part of the drift makes the left-point residual O(dt): halving dt halves it."""
    a = DiffusionCoefficient.constant(grid, 0.3)
    noise = build_noise_basis(NoiseConfig(N=0), grid)
    x0 = RealField.from_function(grid, np.cos)
    finals = []
    for dt in (1e-3, 5e-4):
        n_steps = int(round(1.0 / dt))
        incs = sample_brownian_increments(0, n_steps, dt, seed=0)
        traj = solve_fp(x0, a, noise, incs, n_steps, dt, scheme=Scheme.SEMI_IMPLICIT, theta=0.5)
        finals.append(abs(weak_form_residual_fp(traj, a, noise, incs, phi)[-1]))
    assert finals[0] > 0.0
    assert finals[1] / finals[0] == pytest.approx(0.5, rel=0.2)
