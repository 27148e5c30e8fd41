"""
Noise field mu(t, xi) = sum_i e^i(xi) W^i_t + e^0(xi) t.

Builds the basis {e^i}, checks the summability of sup norms of e^i and
(e^i)', computes multiplier bounds, samples seeded Brownian increments and
evaluates Ito integrals with the left-point rule.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import zeta

from app.core.errors import AssumptionViolationError, InvalidArgumentError
from app.core.schemas import NoiseConfig, NoiseFamily
from app.core.spectral import (
    Grid1D,
    RealField,
    Trajectory,
    derivative_values,
    sobolev_norm_squared_values,
)

logger = logging.getLogger(__name__)

# spawn-key prefixes keep per-mode streams and derived member seeds apart
_MODE_STREAM = 0
_DERIVED_SEED = 1


def _h(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """exp(-1/t) for t > 0 (zero otherwise) and its derivative."""
    t = np.asarray(t, dtype=float)
    value = np.zeros_like(t)
    slope = np.zeros_like(t)
    pos = t > 0
    value[pos] = np.exp(-1.0 / t[pos])
    slope[pos] = value[pos] / t[pos] ** 2
    return value, slope


def smooth_step(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1. Returns value and derivative."""
    a, da = _h(t)
    b, db = _h(1.0 - np.asarray(t, dtype=float))
    denom = a + b
    return a / denom, (da * b + a * db) / denom ** 2


def window(grid: Grid1D, plateau: float, edge: float) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetric window equal to 1 on |xi| <= plateau*L and 0 on |xi| >= edge*L."""
    inner, outer = plateau * grid.half_length, edge * grid.half_length
    xi = grid.nodes
    value, slope = smooth_step((outer - np.abs(xi)) / (outer - inner))
    return value, -np.sign(xi) * slope / (outer - inner)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Truncated noise basis with its sup norms and multiplier bounds."""

    grid: Grid1D
    drift: RealField
    drift_derivative: RealField
    modes: Tuple[RealField, ...]
    mode_derivatives: Tuple[RealField, ...]
    family: str = "custom"
    tail: Optional[float] = None
    mode_matrix: np.ndarray = field(init=False, repr=False)
    sup_norms: np.ndarray = field(init=False, repr=False)
    derivative_sup_norms: np.ndarray = field(init=False, repr=False)
    multiplier_bounds: np.ndarray = field(init=False, repr=False)
    drift_bound: float = field(init=False)
    partial_sum: float = field(init=False)

    def __post_init__(self):
        if len(self.modes) != len(self.mode_derivatives):
            raise InvalidArgumentError("every noise mode needs a derivative")
        for f in (self.drift, self.drift_derivative, *self.modes, *self.mode_derivatives):
            if not f.grid.same_as(self.grid):
                raise InvalidArgumentError("noise basis fields live on a different grid")
        n = self.grid.n_points
        matrix = np.array([m.values for m in self.modes]).reshape(len(self.modes), n)
        matrix.setflags(write=False)
        sup = np.max(np.abs(matrix), axis=1) if len(self.modes) else np.zeros(0)
        dsup = np.array([np.max(np.abs(d.values)) for d in self.mode_derivatives])
        object.__setattr__(self, "mode_matrix", matrix)
        object.__setattr__(self, "sup_norms", sup)
        object.__setattr__(self, "derivative_sup_norms", dsup.reshape(len(self.modes)))
        object.__setattr__(self, "multiplier_bounds", np.sqrt(2.0 * (sup ** 2 + self.derivative_sup_norms ** 2)))
        object.__setattr__(self, "drift_bound", multiplier_norm_bound(self.drift, self.drift_derivative))
        object.__setattr__(self, "partial_sum", float(np.sum(sup ** 2 + self.derivative_sup_norms ** 2)))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @classmethod
    def from_fields(
        cls,
        grid: Grid1D,
        modes: Sequence[RealField],
        derivatives: Optional[Sequence[RealField]] = None,
        drift: Optional[RealField] = None,
        drift_derivative: Optional[RealField] = None,
        family: str = "custom",
        tail: Optional[float] = None,
    ) -> "NoiseModel":
        """Basis from given fields; missing derivatives are taken spectrally."""
        if derivatives is None:
            derivatives = [RealField(grid, derivative_values(m.values, grid, 1)) for m in modes]
        drift = drift if drift is not None else RealField.zeros(grid)
        if drift_derivative is None:
            drift_derivative = RealField(grid, derivative_values(drift.values, grid, 1))
        return cls(grid, drift, drift_derivative, tuple(modes), tuple(derivatives), family, tail)


def _van_der_corput(i: int) -> float:
    value, denom = 0.0, 1.0
    while i:
        denom *= 2.0
        i, bit = divmod(i, 2)
        value += bit / denom
    return value


def _damped_trig(config: NoiseConfig, grid: Grid1D, n_modes: int, w, dw):
    if config.p <= 1.5:
        raise AssumptionViolationError(
            f"sum of |e_i'|^2 + |e_i|^2 diverges for p={config.p} <= 3/2",
            assumption="noise_summability",
        )
    xi, L = grid.nodes, grid.half_length
    modes, derivs = [], []
    for i in range(1, n_modes + 1):
        amplitude, k = config.c / i ** config.p, i * np.pi / L
        modes.append(RealField(grid, amplitude * w * np.cos(k * xi)))
        derivs.append(RealField(grid, amplitude * (dw * np.cos(k * xi) - w * k * np.sin(k * xi))))
    p2 = 2.0 * config.p
    tail = config.c ** 2 * (zeta(p2, n_modes + 1) + (np.pi / L) ** 2 * zeta(p2 - 2.0, n_modes + 1))
    return modes, derivs, float(tail)


def _gaussian_bumps(config: NoiseConfig, grid: Grid1D, n_modes: int, w, dw):
    if config.p <= 0.5:
        raise AssumptionViolationError(
            f"amplitudes c/i^p are not square summable for p={config.p}",
            assumption="noise_summability",
        )
    xi, L = grid.nodes, grid.half_length
    sigma = config.bump_width * L
    modes, derivs = [], []
    for i in range(1, n_modes + 1):
        amplitude = config.c / i ** config.p
        centre = (2.0 * _van_der_corput(i) - 1.0) * config.window_plateau * L
        bump = np.exp(-((xi - centre) ** 2) / (2.0 * sigma ** 2))
        slope = -(xi - centre) / sigma ** 2 * bump
        modes.append(RealField(grid, amplitude * w * bump))
        derivs.append(RealField(grid, amplitude * (dw * bump + w * slope)))
    tail = config.c ** 2 * (1.0 + 1.0 / (sigma ** 2 * np.e)) * zeta(2.0 * config.p, n_modes + 1)
    return modes, derivs, float(tail)


def _tabulated(config: NoiseConfig, grid: Grid1D, n_modes: int, w, dw):
    rows = (config.tabulated or [])[:n_modes]
    if len(rows) != n_modes:
        raise InvalidArgumentError(f"tabulated family has {len(rows)} rows, {n_modes} requested")
    modes = [RealField(grid, row) for row in rows]
    derivs = [RealField(grid, derivative_values(m.values, grid, 1)) for m in modes]
    return modes, derivs, None


_FAMILIES = {
    NoiseFamily.DAMPED_TRIG: _damped_trig,
    NoiseFamily.GAUSSIAN_BUMPS: _gaussian_bumps,
    NoiseFamily.TABULATED: _tabulated,
}


def build_noise_basis(config: NoiseConfig, grid: Grid1D, n_modes: Optional[int] = None) -> NoiseModel:
    """
    Build e^0 and e^1..e^N for one of the built-in families.

    Args:
        config: Noise section of the experiment configuration
        grid: Spatial grid
        n_modes: Overrides config.N when given

    Returns:
        NoiseModel with sup norms, multiplier bounds and the declared tail
    """
    n_modes = config.N if n_modes is None else n_modes
    if n_modes < 0:
        raise InvalidArgumentError(f"mode count must be nonnegative, got {n_modes}")
    if config.use_window:
        w, dw = window(grid, config.window_plateau, config.window_edge)
    else:
        w, dw = np.ones(grid.n_points), np.zeros(grid.n_points)

    modes, derivs, tail = _FAMILIES[NoiseFamily(config.family)](config, grid, n_modes, w, dw)

    if config.drift_shape == "window":
        drift, drift_slope = config.drift_amplitude * w, config.drift_amplitude * dw
    else:
        drift, drift_slope = np.full(grid.n_points, config.drift_amplitude), np.zeros(grid.n_points)

    model = NoiseModel(
        grid,
        RealField(grid, drift),
        RealField(grid, drift_slope),
        tuple(modes),
        tuple(derivs),
        family=NoiseFamily(config.family).value,
        tail=tail,
    )
    logger.debug(
        f"Built {model.family} noise basis: N={model.n_modes}, partial sum={model.partial_sum:.6g}, tail={tail}"
    )
    return model


def multiplier_norm_bound(e: RealField, e_derivative: Optional[RealField] = None) -> float:
    """sqrt(2) * (||e||_inf^2 + ||e'||_inf^2)^(1/2) with sup norms over the grid nodes."""
    if e_derivative is None:
        e_derivative = RealField(e.grid, derivative_values(e.values, e.grid, 1))
    sup = np.max(np.abs(e.values))
    dsup = np.max(np.abs(e_derivative.values))
    return float(np.sqrt(2.0 * (sup ** 2 + dsup ** 2)))


def generate_test_fields(grid: Grid1D, count: int, seed: int, band_fraction: float = 1.0 / 3.0) -> List[RealField]:
    """Random band-limited fields alternating with randomly scaled Gaussians."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_band = max(1, int(band_fraction * grid.n_points / 2))
    fields = []
    for j in range(count):
        if j % 2 == 0:
            spectrum = np.zeros(grid.n_points // 2 + 1, dtype=complex)
            spectrum[: n_band + 1] = rng.normal(size=n_band + 1) + 1j * rng.normal(size=n_band + 1)
            spectrum[0] = spectrum[0].real
            values = np.fft.irfft(spectrum, n=grid.n_points)
        else:
            centre = rng.uniform(-0.5, 0.5) * grid.half_length
            width = rng.uniform(4.0 * grid.dx, 0.25 * grid.half_length)
            values = rng.normal() * np.exp(-((grid.nodes - centre) ** 2) / (2.0 * width ** 2))
        fields.append(RealField(grid, values))
    return fields


def multiplier_norm_empirical(e: RealField, fields: Sequence[RealField], order: int = -1) -> float:
    """
    Lower bound of the multiplier norm of e over a finite family of test fields.

    Args:
        e: Multiplier
        fields: Nonzero test fields; zero fields are skipped
        order: Sobolev order of the norm (-1, or 1 for the dual estimate)

    Returns:
        max over fields g of ||e g||_{H^order} / ||g||_{H^order}
    """
    best = 0.0
    for g in fields:
        if not np.any(g.values):
            logger.warning("Skipping zero test field in multiplier norm estimate")
            continue
        stack = np.vstack([e.values * g.values, g.values])
        num, den = np.sqrt(sobolev_norm_squared_values(stack, e.grid, order))
        best = max(best, float(num / den))
    return best


@dataclass(frozen=True, eq=False)
class BrownianIncrements:
    """
    Seeded increments dW^i_step ~ Normal(0, dt) for modes i = 1..n_modes.

    ``seed`` is the seed the rows were drawn with. Ensemble members draw with
    a seed derived from the run's master seed. Increments loaded from a dump
    carry that master seed in ``master_seed``.
    """

    n_modes: int
    n_steps: int
    dt: float
    seed: int
    increments: np.ndarray
    master_seed: Optional[int] = None

    def __post_init__(self):
        increments = np.asarray(self.increments, dtype=float)
        if increments.shape != (self.n_modes, self.n_steps):
            raise InvalidArgumentError(
                f"increments have shape {increments.shape}, expected ({self.n_modes}, {self.n_steps})"
            )
        increments.setflags(write=False)
        object.__setattr__(self, "increments", increments)

    @property
    def drift_row(self) -> np.ndarray:
        """dW^0 = dt at every step (W^0_t = t)."""
        return np.full(self.n_steps, self.dt)

    def consumed(self, step: int) -> np.ndarray:
        """Read-only view of the increments of steps 0..step-1."""
        view = self.increments[:, :step].view()
        view.setflags(write=False)
        return view

    def coarsen(self, factor: int) -> "BrownianIncrements":
        """Same Brownian path on a grid with step factor*dt."""
        if factor < 1 or self.n_steps % factor:
            raise InvalidArgumentError(f"cannot coarsen {self.n_steps} steps by {factor}")
        summed = self.increments.reshape(self.n_modes, self.n_steps // factor, factor).sum(axis=2)
        return BrownianIncrements(
            self.n_modes, self.n_steps // factor, self.dt * factor, self.seed, summed, self.master_seed
        )

    def interval_sums(self, steps: np.ndarray) -> np.ndarray:
        """Increments summed over [steps[k], steps[k+1]), shape (n_modes, len(steps)-1)."""
        steps = np.asarray(steps, dtype=int)
        if len(steps) < 2:
            return np.zeros((self.n_modes, 0))
        cumulative = np.concatenate([np.zeros((self.n_modes, 1)), np.cumsum(self.increments, axis=1)], axis=1)
        if np.all(np.diff(steps) == 1):
            return self.increments[:, steps[0]:steps[-1]].copy()
        return cumulative[:, steps[1:]] - cumulative[:, steps[:-1]]


def derive_seed(master: int, index: int) -> int:
    """Deterministic 64-bit seed for member ``index`` of an ensemble or sweep."""
    sequence = np.random.SeedSequence(int(master), spawn_key=(_DERIVED_SEED, int(index)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def sample_brownian_increments(n_modes: int, n_steps: int, dt: float, seed: int) -> BrownianIncrements:
    """
    Draw increments for modes 1..n_modes from independent per-mode streams.

    Mode i always uses the stream SeedSequence(seed, spawn_key=(0, i)), so
    adding modes never changes the paths of the existing ones.
    """
    if n_modes < 0 or n_steps < 1 or not dt > 0:
        raise InvalidArgumentError(f"invalid increments request N={n_modes}, n_steps={n_steps}, dt={dt}")
    if not 0 <= int(seed) < 2 ** 64:
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed}")
    scale = np.sqrt(dt)
    rows = np.zeros((n_modes, n_steps))
    for i in range(1, n_modes + 1):
        stream = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_MODE_STREAM, i)))
        rows[i - 1] = stream.normal(0.0, scale, n_steps)
    return BrownianIncrements(n_modes, n_steps, float(dt), int(seed), rows)


def check_compatible(grid: Grid1D, noise: NoiseModel, incs: BrownianIncrements, dt: float) -> None:
    if not noise.grid.same_as(grid):
        raise InvalidArgumentError("noise model lives on a different grid")
    if noise.n_modes > incs.n_modes:
        raise InvalidArgumentError(f"noise has {noise.n_modes} modes but only {incs.n_modes} increment rows")
    if abs(incs.dt - dt) > 1e-12 * max(1.0, dt):
        raise InvalidArgumentError(f"increments were sampled with dt={incs.dt}, solver uses dt={dt}")


def noise_multiplier(noise: NoiseModel, incs: BrownianIncrements, step: int) -> np.ndarray:
    """Field sum_i e^i dW^i_step + e^0 dt."""
    if not 0 <= step < incs.n_steps:
        raise InvalidArgumentError(f"step {step} outside 0..{incs.n_steps - 1}")
    dw = incs.increments[: noise.n_modes, step]
    return dw @ noise.mode_matrix + noise.drift.values * incs.dt


def noise_increment(Z: RealField, noise: NoiseModel, incs: BrownianIncrements, step: int) -> RealField:
    """Ito increment of Z d(mu) over one step, Z evaluated at the left point."""
    if not Z.grid.same_as(noise.grid):
        raise InvalidArgumentError("field and noise model live on different grids")
    return RealField(Z.grid, Z.values * noise_multiplier(noise, incs, step))


def ito_integral(
    Z_path: Trajectory,
    noise: NoiseModel,
    incs: BrownianIncrements,
    include_drift: bool = True,
    weights: bool = False,
) -> np.ndarray:
    """
    Cumulative integral of Z against mu at the recorded snapshot times.

    Each interval between snapshots uses the left snapshot and the summed
    increments. This is the left-point Ito sum only for paths recorded at
    every step (stride 1). With a larger stride the integrand is held at
    the left snapshot over the whole interval, which is exact only for
    integrands constant between snapshots and otherwise adds an error of
    order stride*dt. With ``weights`` the snapshot values are point masses
    (the measure version of the integral) and the dx factor is dropped.

    Args:
        Z_path: Integrand at the left points
        noise: Noise basis
        incs: Brownian increments the path was driven by
        include_drift: Add the e^0 dt part
        weights: Treat values as masses instead of densities

    Returns:
        Array of the integral at Z_path.times, starting at 0
    """
    check_compatible(Z_path.grid, noise, incs, Z_path.dt)
    if Z_path.steps[-1] > incs.n_steps:
        raise InvalidArgumentError(
            f"path reaches step {Z_path.steps[-1]} but only {incs.n_steps} increments exist"
        )
    if np.any(np.diff(Z_path.steps) > 1):
        logger.debug(f"Ito integral over stride {Z_path.stride} snapshots holds the integrand at left points")
    quadrature = 1.0 if weights else Z_path.grid.dx
    left = Z_path.snapshots[:-1]
    pairings = left @ noise.mode_matrix.T * quadrature
    dw = incs.interval_sums(Z_path.steps)[: noise.n_modes]
    increments = np.einsum("ki,ik->k", pairings, dw)
    if include_drift:
        increments = increments + (left @ noise.drift.values) * quadrature * np.diff(Z_path.steps) * incs.dt
    return np.concatenate([[0.0], np.cumsum(increments)])
