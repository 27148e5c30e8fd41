"""
Time stepping shared by the Fokker-Planck and porous-media solvers.

Both equations have the form dv = d_xx F(v) dt + v d(mu) with a flux
F = a z (Fokker-Planck) or F = psi(X)/2 (porous media). The explicit scheme
is Euler-Maruyama with a spectral second derivative. The semi-implicit scheme
treats a frozen part abar * d_xx with a theta rule and the remainder
F - theta * abar * v explicitly, so it stays diagonal in Fourier space.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from app.core.config import settings
from app.core.errors import BlowUpError, InvalidArgumentError, StabilityError
from app.core.schemas import Scheme
from app.core.spectral import Grid1D, RealField, Trajectory, boundary_leakage, derivative_values
from app.services.noise_field import (
    BrownianIncrements,
    NoiseModel,
    check_compatible,
    ito_integral,
    noise_multiplier,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SolverState:
    """Current field and the index of the next step to take."""

    grid: Grid1D
    values: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, x0: RealField) -> "SolverState":
        return cls(x0.grid, x0.values, 0)

    @property
    def field(self) -> RealField:
        return RealField(self.grid, self.values)


def check_stability(grid: Grid1D, dt: float, diffusion_bound: float, scheme: Scheme, theta: float = 0.5) -> None:
    """
    Reject time steps the scheme cannot take stably.

    The explicit part of the update needs dt * D * k_max^2 <= 2, where D is
    the largest diffusion rate it carries. The theta scheme with theta >= 1/2
    carries no restriction for the frozen part.
    """
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    rate = diffusion_bound if Scheme(scheme) == Scheme.EXPLICIT else diffusion_bound * max(0.0, 1.0 - 2.0 * theta)
    number = dt * rate * grid.k_max ** 2
    if number > 2.0:
        limit = 2.0 / (rate * grid.k_max ** 2)
        raise StabilityError(
            f"dt={dt} violates the {Scheme(scheme).value} stability rule dt <= {limit:.3e} "
            f"(diffusion bound {diffusion_bound}, k_max {grid.k_max:.4g})"
        )


def advance(
    state: SolverState,
    flux: np.ndarray,
    frozen: float,
    noise: NoiseModel,
    incs: BrownianIncrements,
    dt: float,
    scheme: Scheme = Scheme.EXPLICIT,
    theta: float = 0.5,
) -> SolverState:
    """
    One step v -> v + dt d_xx F + v (sum_i e^i dW^i + e^0 dt).

    Args:
        state: Current state
        flux: F evaluated at the current state
        frozen: Coefficient abar of the implicit part (semi-implicit only)
        noise: Noise basis
        incs: Brownian increments
        dt: Time step
        scheme: Explicit or semi-implicit
        theta: Implicitness of the frozen part

    Returns:
        State at step + 1
    """
    check_compatible(state.grid, noise, incs, dt)
    v = state.values
    noise_term = v * noise_multiplier(noise, incs, state.step)
    if Scheme(scheme) == Scheme.EXPLICIT:
        new = v + dt * derivative_values(flux, state.grid, 2) + noise_term
    else:
        k2 = state.grid.rwavenumbers ** 2
        v_hat = np.fft.rfft(v)
        rhs = v_hat - dt * k2 * (np.fft.rfft(flux) - theta * frozen * v_hat) + np.fft.rfft(noise_term)
        new = np.fft.irfft(rhs / (1.0 + theta * dt * frozen * k2), n=state.grid.n_points)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite values after step {state.step + 1}", step=state.step + 1, state=new)
    return SolverState(state.grid, new, state.step + 1)


def integrate(
    x0: RealField,
    step: Callable[[SolverState], SolverState],
    n_steps: int,
    dt: float,
    stride: int = 1,
    label: str = "solve",
) -> Trajectory:
    """Run ``step`` n_steps times, recording every ``stride``-th state."""
    if n_steps < 0 or stride < 1:
        raise InvalidArgumentError(f"invalid schedule n_steps={n_steps}, stride={stride}")
    n_snap = n_steps // stride + 1
    snapshots = np.empty((n_snap, x0.grid.n_points))
    snapshots[0] = x0.values
    state = SolverState.initial(x0)
    try:
        for n in range(1, n_steps + 1):
            state = step(state)
            if n % stride == 0:
                snapshots[n // stride] = state.values
    except BlowUpError as e:
        logger.error(f"{label}: blow-up at step {e.step} of {n_steps} (t={e.step * dt:.6g})")
        raise
    steps = np.arange(n_snap) * stride
    return Trajectory(x0.grid, steps * dt, steps, snapshots, dt, stride)


def progress(iterable, total: Optional[int] = None, desc: Optional[str] = None):
    """tqdm wrapper honouring SPDE_PROGRESS."""
    return tqdm(iterable, total=total, desc=desc, disable=None if settings.progress else True, leave=False)


def weak_form_residual(
    traj: Trajectory,
    flux_path: np.ndarray,
    noise: NoiseModel,
    incs: BrownianIncrements,
    phi: RealField,
) -> np.ndarray:
    """
    <v(t), phi> - <v(0), phi> - int_0^t <F, phi''> ds - int_0^t int phi v mu(ds, dxi).

    All integrals use the solver's discretization: dx quadrature, left
    endpoints between snapshots and ``ito_integral`` for the noise term.

    Args:
        traj: Solution snapshots
        flux_path: F at every snapshot, same shape as traj.snapshots
        noise: Noise basis the path was driven by
        incs: Brownian increments the path was driven by
        phi: Smooth test function supported away from the boundary

    Returns:
        Residual at every snapshot time
    """
    if not phi.grid.same_as(traj.grid):
        raise InvalidArgumentError("test function lives on a different grid")
    if flux_path.shape != traj.snapshots.shape:
        raise InvalidArgumentError(f"flux path has shape {flux_path.shape}, expected {traj.snapshots.shape}")
    peak = np.max(np.abs(phi.values))
    if peak > 0 and boundary_leakage(phi.values, phi.grid) > 1e-12 * peak:
        logger.warning("Test function reaches the outer 10% of the domain; residual includes wrap-around effects")

    dx = traj.grid.dx
    pairing = traj.snapshots @ phi.values * dx
    phi_xx = derivative_values(phi.values, phi.grid, 2)
    drift_rate = flux_path[:-1] @ phi_xx * dx
    drift = np.concatenate([[0.0], np.cumsum(drift_rate * np.diff(traj.times))])
    weighted = Trajectory(traj.grid, traj.times, traj.steps, traj.snapshots * phi.values, traj.dt, traj.stride)
    stochastic = ito_integral(weighted, noise, incs)
    return pairing - pairing[0] - drift - stochastic
