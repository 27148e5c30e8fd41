"""
Stochastic Fokker-Planck equation dz = d_xx(a z) dt + z d(mu).

The coefficient a >= 0 is bounded and may vanish on whole regions. A
path-dependent coefficient sees only the increments consumed so far, which
is the discrete form of progressive measurability.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from app.core.errors import AssumptionViolationError, InvalidArgumentError
from app.core.schemas import DiffusionConfig, Scheme
from app.core.spectral import Grid1D, RealField, Trajectory, apply_symbol
from app.services.noise_field import BrownianIncrements, NoiseModel, check_compatible, smooth_step
from app.services.stepping import SolverState, advance, check_stability, integrate, weak_form_residual

logger = logging.getLogger(__name__)

# rule(step, consumed increments) -> nodal values of a
CoefficientRule = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class DiffusionCoefficient:
    """Sampled coefficient a(step, xi) with its declared bound ||a||_inf."""

    grid: Grid1D
    sup_bound: float
    rule: CoefficientRule
    kind: str = "custom"
    degenerate: bool = False
    path_dependent: bool = False

    def __post_init__(self):
        if not np.isfinite(self.sup_bound) or self.sup_bound < 0:
            raise InvalidArgumentError(f"coefficient bound must be finite and nonnegative, got {self.sup_bound}")

    def evaluate(self, step: int, incs: Optional[BrownianIncrements] = None) -> np.ndarray:
        """Nodal values of a at ``step``; raises if they leave [0, ||a||_inf]."""
        consumed = incs.consumed(step) if incs is not None else np.zeros((0, step))
        values = np.broadcast_to(np.asarray(self.rule(step, consumed), dtype=float), (self.grid.n_points,))
        if np.min(values) < 0 or np.max(values) > self.sup_bound * (1.0 + 1e-12):
            raise AssumptionViolationError(
                f"{self.kind} coefficient at step {step} leaves [0, {self.sup_bound}]",
                assumption="diffusion_bounds",
            )
        return values

    @classmethod
    def constant(cls, grid: Grid1D, value: float) -> "DiffusionCoefficient":
        values = np.full(grid.n_points, float(value))
        values.setflags(write=False)
        return cls(grid, float(value), lambda step, consumed: values, "constant", degenerate=value == 0)

    @classmethod
    def degenerate_half(cls, grid: Grid1D, value: float, transition: float = 0.1) -> "DiffusionCoefficient":
        """a0 on (0, L) with smooth rise after 0 and fall before L; zero on [-L, 0]."""
        xi, width = grid.nodes, transition * grid.half_length
        rise, _ = smooth_step(xi / width)
        fall, _ = smooth_step((grid.half_length - xi) / width)
        values = float(value) * rise * fall
        values.setflags(write=False)
        return cls(grid, float(value), lambda step, consumed: values, "degenerate_half", degenerate=True)

    @classmethod
    def path_dependent(cls, grid: Grid1D, value: float) -> "DiffusionCoefficient":
        """a(t) = a0 (1 + tanh W^1_t) / 2, read from the consumed increments."""

        def rule(step: int, consumed: np.ndarray) -> np.ndarray:
            w1 = consumed[0].sum() if consumed.shape[0] else 0.0
            return np.full(grid.n_points, 0.5 * value * (1.0 + np.tanh(w1)))

        return cls(grid, float(value), rule, "path_dependent", degenerate=True, path_dependent=True)

    @classmethod
    def tabulated(cls, grid: Grid1D, table: Sequence[float]) -> "DiffusionCoefficient":
        values = np.array(table, dtype=float)
        if values.shape != (grid.n_points,) or np.min(values) < 0:
            raise AssumptionViolationError(
                "tabulated coefficient must have one nonnegative value per node", assumption="diffusion_bounds"
            )
        values.setflags(write=False)
        return cls(
            grid, float(np.max(values)), lambda step, consumed: values, "tabulated", degenerate=bool(np.any(values == 0))
        )

    @classmethod
    def from_config(cls, config: DiffusionConfig, grid: Grid1D) -> "DiffusionCoefficient":
        if config.kind == "constant":
            return cls.constant(grid, config.value)
        if config.kind == "degenerate_half":
            return cls.degenerate_half(grid, config.value, config.transition)
        if config.kind == "path_dependent":
            return cls.path_dependent(grid, config.value)
        return cls.tabulated(grid, config.table)


def step_fp(
    state: SolverState,
    a: DiffusionCoefficient,
    noise: NoiseModel,
    incs: BrownianIncrements,
    dt: float,
    scheme: Scheme = Scheme.EXPLICIT,
    theta: float = 0.5,
) -> SolverState:
    """One Euler-Maruyama step of the Fokker-Planck equation."""
    flux = a.evaluate(state.step, incs) * state.values
    return advance(state, flux, a.sup_bound, noise, incs, dt, scheme, theta)


def solve_fp(
    x0: RealField,
    a: DiffusionCoefficient,
    noise: NoiseModel,
    incs: BrownianIncrements,
    n_steps: int,
    dt: float,
    stride: int = 1,
    scheme: Scheme = Scheme.EXPLICIT,
    theta: float = 0.5,
) -> Trajectory:
    """
    Integrate the Fokker-Planck equation from x0.

    Args:
        x0: Initial density on the grid
        a: Diffusion coefficient
        noise: Noise basis
        incs: Brownian increments, at least n_steps of them
        n_steps: Number of steps
        dt: Time step
        stride: Steps between recorded snapshots
        scheme: Explicit or semi-implicit
        theta: Implicitness of the frozen part

    Returns:
        Trajectory with n_steps // stride + 1 snapshots
    """
    check_stability(x0.grid, dt, a.sup_bound, scheme, theta)
    check_compatible(x0.grid, noise, incs, dt)
    if n_steps > incs.n_steps:
        raise InvalidArgumentError(f"{n_steps} steps requested but only {incs.n_steps} increments sampled")
    return integrate(
        x0, lambda state: step_fp(state, a, noise, incs, dt, scheme, theta), n_steps, dt, stride, label="FP"
    )


def weak_form_residual_fp(
    traj: Trajectory, a: DiffusionCoefficient, noise: NoiseModel, incs: BrownianIncrements, phi: RealField
) -> np.ndarray:
    """Residual of the weak form with flux a z, at every snapshot time."""
    flux_path = np.array([a.evaluate(int(step), incs) * snap for step, snap in zip(traj.steps, traj.snapshots)])
    return weak_form_residual(traj, flux_path, noise, incs, phi)


def heat_oracle(x0: RealField, rate: float, t: float) -> RealField:
    """Exact solution of dz = rate * d_xx z dt on the torus: modes decay like exp(-rate k^2 t)."""
    return RealField(x0.grid, apply_symbol(x0.values, np.exp(-rate * x0.grid.rwavenumbers ** 2 * t)))


def gbm_oracle(
    x0: RealField, e: RealField, w_t: float, t: float, drift: Optional[RealField] = None
) -> RealField:
    """Pointwise geometric Brownian motion x0 exp(e W_t + e0 t - e^2 t / 2), the solution when a = 0."""
    exponent = e.values * w_t - 0.5 * e.values ** 2 * t
    if drift is not None:
        exponent = exponent + drift.values * t
    return RealField(x0.grid, x0.values * np.exp(exponent))
