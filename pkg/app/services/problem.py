"""Assemble grid, noise, coefficients and initial data from an experiment configuration."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from app.core.errors import ConfigError
from app.core.schemas import EquationKind, ExperimentConfig, InitialCondition, Scheme
from app.core.spectral import Grid1D, MollifierSpec, RealField, Trajectory, make_grid, mollify
from app.services.fokker_planck import DiffusionCoefficient, solve_fp
from app.services.noise_field import BrownianIncrements, NoiseModel, build_noise_basis
from app.services.porous_media import Nonlinearity, PsiReport, default_lattice, pme_flux, psi_alpha_check, solve_pme

logger = logging.getLogger(__name__)

Coefficient = Union[DiffusionCoefficient, Nonlinearity]


def initial_profile(ic: InitialCondition, grid: Grid1D) -> RealField:
    """Named initial profile on the grid."""
    xi = grid.nodes
    if ic.profile == "gaussian":
        values = ic.amplitude * np.exp(-((xi - ic.center) ** 2) / (2.0 * ic.width ** 2))
    elif ic.profile == "cosine":
        values = ic.amplitude * np.cos(ic.mode * np.pi * xi / grid.half_length)
    elif ic.profile == "spike":
        # mass `amplitude` on the node nearest the centre, then mollified
        spike = np.zeros(grid.n_points)
        spike[int(np.argmin(np.abs(xi - ic.center)))] = ic.amplitude / grid.dx
        return mollify(RealField(grid, spike), MollifierSpec(ic.epsilon))
    else:
        values = np.asarray(ic.values, dtype=float)
    return RealField(grid, values)


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything needed to solve one equation on one grid."""

    config: ExperimentConfig
    grid: Grid1D
    noise: NoiseModel
    coefficient: Coefficient
    psi_report: Optional[PsiReport] = None

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "Problem":
        grid = make_grid(config.grid.L, config.grid.n)
        noise = build_noise_basis(config.noise, grid)
        psi_report = None
        if config.equation.kind == EquationKind.FP:
            coefficient = DiffusionCoefficient.from_config(config.equation.diffusion, grid)
        else:
            coefficient = Nonlinearity.from_config(config.equation.psi)
            psi_report = psi_alpha_check(coefficient, default_lattice())
        logger.debug(f"Problem ready: {config.equation.kind.value} on n={grid.n_points}, N={noise.n_modes}")
        return cls(config, grid, noise, coefficient, psi_report)

    @property
    def kind(self) -> EquationKind:
        return self.config.equation.kind

    @property
    def scheme(self) -> Scheme:
        return self.config.equation.scheme

    @property
    def diffusion_bound(self) -> float:
        """sup a for FP, Lip(psi)/2 for PME."""
        if self.kind == EquationKind.FP:
            return self.coefficient.sup_bound
        return 0.5 * self.coefficient.lipschitz_constant

    def initial_pair(self, delta: Optional[float] = None) -> Tuple[RealField, RealField]:
        """x0 and x0 + delta * perturbation; the second is x0 itself when delta = 0."""
        x0 = initial_profile(self.config.initial_condition, self.grid)
        delta = self.config.experiment.delta if delta is None else delta
        if delta == 0:
            return x0, x0
        perturbation = initial_profile(self.config.experiment.perturbation, self.grid)
        return x0, x0 + delta * perturbation

    def solve(
        self,
        x0: RealField,
        incs: BrownianIncrements,
        n_steps: Optional[int] = None,
        dt: Optional[float] = None,
        stride: Optional[int] = None,
    ) -> Trajectory:
        n_steps = self.config.time.n_steps if n_steps is None else n_steps
        dt = self.config.time.dt if dt is None else dt
        stride = self.config.time.stride if stride is None else stride
        equation = self.config.equation
        if self.kind == EquationKind.FP:
            return solve_fp(x0, self.coefficient, self.noise, incs, n_steps, dt, stride, equation.scheme, equation.theta)
        return solve_pme(
            x0, self.coefficient, self.noise, incs, n_steps, dt, stride, equation.scheme, equation.theta, equation.dealias
        )

    def flux_path(self, traj: Trajectory, incs: BrownianIncrements) -> np.ndarray:
        """Flux a z or psi(X)/2 at every snapshot, as the solver evaluates it."""
        if self.kind == EquationKind.FP:
            return np.array(
                [self.coefficient.evaluate(int(s), incs) * v for s, v in zip(traj.steps, traj.snapshots)]
            )
        return pme_flux(self.coefficient, traj.snapshots, self.grid, self.config.equation.dealias)


def require(condition: bool, message: str, key: str) -> None:
    """Raise a ConfigError for ``key`` unless ``condition`` holds."""
    if not condition:
        raise ConfigError(message, key=key)
