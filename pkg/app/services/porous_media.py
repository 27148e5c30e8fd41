"""Stochastic porous-media equation dX = 1/2 d_xx psi(X) dt + X d(mu)."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.core.errors import AssumptionViolationError, InvalidArgumentError
from app.core.schemas import PsiConfig, Scheme
from app.core.spectral import RealField, Trajectory, dealias_values, sobolev_norm_squared_values
from app.services.noise_field import BrownianIncrements, NoiseModel, check_compatible
from app.services.stepping import SolverState, advance, check_stability, integrate, weak_form_residual

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Monotone Lipschitz psi with psi(0) = 0 and its declared Lipschitz constant."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    parameters: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.lipschitz_constant) or self.lipschitz_constant < 0:
            raise InvalidArgumentError(f"Lipschitz constant must be finite and nonnegative, got {self.lipschitz_constant}")
        if float(self.fn(np.zeros(1))[0]) != 0.0:
            raise AssumptionViolationError(f"{self.name}: psi(0) must be 0", assumption="psi_monotone_lipschitz")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return self.fn(values)

    @property
    def alpha(self) -> float:
        """Constant of (psi(r)-psi(s))(r-s) >= alpha (psi(r)-psi(s))^2; infinite for psi = 0."""
        return 1.0 / self.lipschitz_constant if self.lipschitz_constant > 0 else np.inf

    @classmethod
    def identity(cls) -> "Nonlinearity":
        return cls("identity", lambda x: x, 1.0)

    @classmethod
    def saturated_power(cls, m: float = 2.0, K: float = 5.0) -> "Nonlinearity":
        """sign(x) min(|x|, K)^m / (m K^(m-1)): the power law up to K, constant beyond, Lipschitz 1."""

        def fn(x):
            return np.sign(x) * np.minimum(np.abs(x), K) ** m / (m * K ** (m - 1))

        return cls("saturated_power", fn, 1.0, {"m": m, "K": K})

    @classmethod
    def scaled_arctan(cls, scale: float = 1.0) -> "Nonlinearity":
        return cls("arctan", lambda x: scale * np.arctan(x), float(scale), {"scale": scale})

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls("zero", np.zeros_like, 0.0)

    @classmethod
    def from_config(cls, config: PsiConfig) -> "Nonlinearity":
        if config.name == "identity":
            return cls.identity()
        if config.name == "saturated_power":
            return cls.saturated_power(config.m, config.K)
        if config.name == "arctan":
            return cls.scaled_arctan(config.scale)
        return cls.zero()


@dataclass
class PsiReport:
    """Outcome of sampling the monotonicity, Lipschitz and alpha inequalities."""

    n_pairs: int
    max_lipschitz_ratio: float
    min_alpha: float
    violations: List[Tuple[float, float]]

    @property
    def ok(self) -> bool:
        return not self.violations


def default_lattice(low: float = -10.0, high: float = 10.0, count: int = 100) -> np.ndarray:
    """count points, hence count^2 ordered pairs."""
    return np.linspace(low, high, count)


def psi_alpha_check(psi: Nonlinearity, samples: Optional[np.ndarray] = None, atol: float = 1e-9) -> PsiReport:
    """
    Check monotonicity, the Lipschitz bound and the alpha inequality on all sample pairs.

    Args:
        psi: Nonlinearity with its declared Lipschitz constant
        samples: Points r; every pair (r, s) with r != s is tested
        atol: Absolute slack on the alpha and Lipschitz comparisons

    Returns:
        PsiReport with the witnessed constants

    Raises:
        AssumptionViolationError: if any pair violates one of the inequalities
    """
    r = np.asarray(default_lattice() if samples is None else samples, dtype=float)
    values = psi(r)
    dr = r[:, None] - r[None, :]
    dpsi = values[:, None] - values[None, :]
    distinct = dr != 0
    ratio = np.abs(dpsi[distinct]) / np.abs(dr[distinct])
    max_ratio = float(np.max(ratio, initial=0.0))

    moving = distinct & (dpsi != 0)
    alphas = dr[moving] / dpsi[moving]
    min_alpha = float(np.min(alphas, initial=np.inf))

    with np.errstate(invalid="ignore"):
        alpha_side = np.where(dpsi != 0, psi.alpha * dpsi ** 2, 0.0)
    bad = distinct & (
        (dpsi * dr < 0)
        | (np.abs(dpsi) > psi.lipschitz_constant * np.abs(dr) * (1.0 + atol) + atol * np.abs(dr))
        | (dpsi * dr < alpha_side - atol * dpsi ** 2)
    )
    i, j = np.nonzero(bad)
    report = PsiReport(int(distinct.sum()), max_ratio, min_alpha, [(float(r[a]), float(r[b])) for a, b in zip(i, j)])
    if not report.ok:
        raise AssumptionViolationError(
            f"{psi.name} violates monotonicity or the Lipschitz bound {psi.lipschitz_constant} "
            f"on {len(report.violations)} sampled pairs (max ratio {max_ratio:.4g})",
            assumption="psi_monotone_lipschitz",
            report=report,
        )
    return report


def pme_flux(psi: Nonlinearity, values: np.ndarray, grid, dealias: bool = False) -> np.ndarray:
    """psi(X)/2, with psi(X) optionally dealiased by the two-thirds rule."""
    psi_values = psi(values)
    if dealias:
        psi_values = dealias_values(psi_values, grid)
    return 0.5 * psi_values


def step_pme(
    state: SolverState,
    psi: Nonlinearity,
    noise: NoiseModel,
    incs: BrownianIncrements,
    dt: float,
    scheme: Scheme = Scheme.EXPLICIT,
    theta: float = 0.5,
    dealias: bool = False,
) -> SolverState:
    """One Euler-Maruyama step; the frozen part linearizes around Lip(psi)/2."""
    flux = pme_flux(psi, state.values, state.grid, dealias)
    return advance(state, flux, 0.5 * psi.lipschitz_constant, noise, incs, dt, scheme, theta)


def solve_pme(
    x0: RealField,
    psi: Nonlinearity,
    noise: NoiseModel,
    incs: BrownianIncrements,
    n_steps: int,
    dt: float,
    stride: int = 1,
    scheme: Scheme = Scheme.EXPLICIT,
    theta: float = 0.5,
    dealias: bool = False,
) -> Trajectory:
    """Integrate the porous-media equation from x0; stability uses Lip(psi)/2 as diffusion bound."""
    check_stability(x0.grid, dt, 0.5 * psi.lipschitz_constant, scheme, theta)
    check_compatible(x0.grid, noise, incs, dt)
    if n_steps > incs.n_steps:
        raise InvalidArgumentError(f"{n_steps} steps requested but only {incs.n_steps} increments sampled")
    return integrate(
        x0,
        lambda state: step_pme(state, psi, noise, incs, dt, scheme, theta, dealias),
        n_steps,
        dt,
        stride,
        label="PME",
    )


def weak_form_residual_pme(
    traj: Trajectory,
    psi: Nonlinearity,
    noise: NoiseModel,
    incs: BrownianIncrements,
    phi: RealField,
    dealias: bool = False,
) -> np.ndarray:
    """Residual of the weak form with flux psi(X)/2."""
    flux_path = pme_flux(psi, traj.snapshots, traj.grid, dealias)
    return weak_form_residual(traj, flux_path, noise, incs, phi)


def l2_time_integral(traj: Trajectory) -> float:
    """Left-point value of int_0^T ||X(s)||_{L^2}^2 ds."""
    norms = np.sum(traj.snapshots[:-1] ** 2, axis=1) * traj.grid.dx
    return float(np.sum(norms * np.diff(traj.times)))


def time_continuity_modulus(traj: Trajectory, order: float = -2.0) -> float:
    """Largest H^order distance between consecutive snapshots."""
    if len(traj) < 2:
        return 0.0
    jumps = sobolev_norm_squared_values(np.diff(traj.snapshots, axis=0), traj.grid, order)
    return float(np.sqrt(np.max(jumps)))
