"""
Energy method for uniqueness, evaluated on simulated pairs of solutions.

For two solutions driven by the same Brownian path the difference z has
g(t) = ||z(t)||^2_{H^-1}, and the Ito formula plus the multiplier bounds give

    g(t) + dissipation(t) <= M_t + C int_0^t g(s) ds

with a local martingale M. The harness reconstructs every term with the
solver's own discretization, checks the inequality pathwise and in
expectation through Gronwall's lemma, and measures how the mollified
quantities converge as the mollifier width shrinks.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from app.core.errors import InvalidArgumentError
from app.core.schemas import (
    Constants,
    EquationKind,
    ExperimentConfig,
    ExperimentMode,
    ExperimentReport,
    Paths,
    Verdicts,
)
from app.core.spectral import (
    Grid1D,
    MollifierSpec,
    RealField,
    Trajectory,
    apply_symbol,
    bessel_values,
    boundary_leakage,
    bump_profile,
    sobolev_norm_squared_values,
)
from app.services.fokker_planck import DiffusionCoefficient
from app.services.noise_field import (
    BrownianIncrements,
    NoiseModel,
    check_compatible,
    derive_seed,
    generate_test_fields,
    multiplier_norm_empirical,
    sample_brownian_increments,
)
from app.services.porous_media import Nonlinearity, l2_time_integral, time_continuity_modulus
from app.services.problem import Problem
from app.services.stepping import progress, weak_form_residual

logger = logging.getLogger(__name__)

DISSIPATION_FLOOR = -1e-10
# relative to the largest value on the grid
LEAKAGE_WARNING = 1e-6


def _difference(traj1: Trajectory, traj2: Trajectory) -> np.ndarray:
    if not traj1.same_schedule(traj2):
        raise InvalidArgumentError("trajectories are recorded on different schedules")
    return traj1.snapshots - traj2.snapshots


def _time_integral(rates: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Cumulative left-point integral, 0 at the first snapshot."""
    return np.concatenate([[0.0], np.cumsum(rates[:-1] * np.diff(times))])


def difference_trajectory(traj1: Trajectory, traj2: Trajectory) -> Trajectory:
    z = _difference(traj1, traj2)
    return Trajectory(traj1.grid, traj1.times, traj1.steps, z, traj1.dt, traj1.stride)


def energy_path(traj1: Trajectory, traj2: Trajectory) -> np.ndarray:
    """g(t) = ||z1(t) - z2(t)||^2_{H^-1} at every snapshot."""
    return sobolev_norm_squared_values(_difference(traj1, traj2), traj1.grid, -1.0)


@dataclass
class MollifiedEnergy:
    """g_eps along a decreasing ladder of widths, with the convergence discrepancies."""

    epsilons: List[float]
    g_eps: np.ndarray
    gap: np.ndarray
    discrepancies: Dict[str, np.ndarray]
    rates: Dict[str, Optional[float]]

    def nonincreasing(self, slack: float = 0.05) -> bool:
        """Every discrepancy shrinks along the ladder up to a relative slack."""
        for series in self.discrepancies.values():
            floor = 1e-14 * max(float(np.max(series, initial=0.0)), 1e-300)
            if np.any(series[1:] > series[:-1] * (1.0 + slack) + floor):
                return False
        return True


def mollified_energy_path(
    traj1: Trajectory,
    traj2: Trajectory,
    epsilons: Sequence[float],
    noise: Optional[NoiseModel] = None,
    flux_difference: Optional[np.ndarray] = None,
) -> MollifiedEnergy:
    """
    Mollified energies g_eps(t) = ||(z1 - z2)(t) * phi_eps||^2_{H^-1} and the
    quantities whose vanishing as eps -> 0 closes the energy identity.

    Discrepancies, each a time integral with the left-point rule:
        z:                   ||z_eps - z||^2_{L^2}
        flux:                ||F_eps - F||^2_{L^2} for the flux difference F
        noise:               sum_{i>=0} ||(e^i z)_eps - e^i z||^2_{L^2}
        martingale:          sum_{i>=0} (<z_eps, (e^i z)_eps>_{H^-1} - <z, e^i z>_{H^-1})^2
        quadratic_variation: sum_{i>=0} | ||(e^i z)_eps||^2_{H^-1} - ||e^i z||^2_{H^-1} |

    Args:
        traj1: First solution
        traj2: Second solution on the same schedule
        epsilons: Strictly decreasing mollifier widths
        noise: Basis used for the noise terms; omitted terms are skipped
        flux_difference: F(z1) - F(z2) at every snapshot

    Returns:
        MollifiedEnergy with one entry per width
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise InvalidArgumentError(f"mollifier widths must be a nonempty decreasing list, got {epsilons}")
    grid = traj1.grid
    z = _difference(traj1, traj2)
    times, dx = traj1.times, grid.dx
    g = sobolev_norm_squared_values(z, grid, -1.0)

    def integral(values_per_snapshot: np.ndarray) -> float:
        return float(_time_integral(values_per_snapshot, times)[-1])

    multipliers = None
    if noise is not None:
        multipliers = np.vstack([noise.drift.values[None, :], noise.mode_matrix])
        ez = z[:, None, :] * multipliers[None, :, :]
        ez_potential = bessel_values(ez, grid, -2.0)
        z_potential = bessel_values(z, grid, -2.0)
        pairing = np.sum(ez * z_potential[:, None, :], axis=-1) * dx
        ez_norm = np.sum(ez * ez_potential, axis=-1) * dx

    g_eps = np.empty((len(epsilons), len(times)))
    discrepancies: Dict[str, List[float]] = {"z": []}
    if flux_difference is not None:
        discrepancies["flux"] = []
    if multipliers is not None:
        discrepancies.update({"noise": [], "martingale": [], "quadratic_variation": []})

    for j, eps in enumerate(epsilons):
        kernel_hat = np.fft.rfft(MollifierSpec(eps).kernel(grid)) * dx
        z_eps = apply_symbol(z, kernel_hat)
        g_eps[j] = sobolev_norm_squared_values(z_eps, grid, -1.0)
        discrepancies["z"].append(integral(np.sum((z_eps - z) ** 2, axis=-1) * dx))
        if flux_difference is not None:
            f_eps = apply_symbol(flux_difference, kernel_hat)
            discrepancies["flux"].append(integral(np.sum((f_eps - flux_difference) ** 2, axis=-1) * dx))
        if multipliers is not None:
            ez_eps = apply_symbol(ez, kernel_hat)
            discrepancies["noise"].append(integral(np.sum((ez_eps - ez) ** 2, axis=(-2, -1)) * dx))
            z_eps_potential = bessel_values(z_eps, grid, -2.0)
            pairing_eps = np.sum(ez_eps * z_eps_potential[:, None, :], axis=-1) * dx
            discrepancies["martingale"].append(integral(np.sum((pairing_eps - pairing) ** 2, axis=-1)))
            ez_eps_norm = sobolev_norm_squared_values(ez_eps, grid, -1.0)
            discrepancies["quadratic_variation"].append(integral(np.sum(np.abs(ez_eps_norm - ez_norm), axis=-1)))

    series = {name: np.array(values) for name, values in discrepancies.items()}
    rates = {name: _ladder_rate(epsilons, values, grid.dx) for name, values in series.items()}
    return MollifiedEnergy(epsilons, g_eps, np.max(np.abs(g_eps - g[None, :]), axis=1), series, rates)


def _ladder_rate(epsilons: List[float], squared: np.ndarray, dx: float) -> Optional[float]:
    """Slope of log sqrt(discrepancy) against log eps over widths resolved by the grid."""
    eps = np.asarray(epsilons)
    usable = (eps >= 4.0 * dx) & (squared > 0)
    if usable.sum() < 2:
        return None
    slope, _ = np.polyfit(np.log(eps[usable]), 0.5 * np.log(squared[usable]), 1)
    return float(slope)


def gronwall_constant_fp(noise: NoiseModel, a: DiffusionCoefficient) -> float:
    """sum_i C(e^i)^2 + 2 C(e^0) + ||a||_inf."""
    return float(np.sum(noise.multiplier_bounds ** 2) + 2.0 * noise.drift_bound + a.sup_bound)


def gronwall_constant_pme(noise: NoiseModel, psi: Nonlinearity) -> float:
    """2 C(e^0) + sum_i C(e^i)^2 + 1/alpha, with 1/alpha = Lip(psi)."""
    return float(2.0 * noise.drift_bound + np.sum(noise.multiplier_bounds ** 2) + psi.lipschitz_constant)


def gronwall_constant(noise: NoiseModel, coefficient: Union[DiffusionCoefficient, Nonlinearity]) -> float:
    if isinstance(coefficient, DiffusionCoefficient):
        return gronwall_constant_fp(noise, coefficient)
    return gronwall_constant_pme(noise, coefficient)


def constants_for(noise: NoiseModel, coefficient: Union[DiffusionCoefficient, Nonlinearity]) -> Constants:
    if isinstance(coefficient, DiffusionCoefficient):
        term = coefficient.sup_bound
    else:
        term = coefficient.lipschitz_constant
    return Constants(
        C=gronwall_constant(noise, coefficient),
        mode_bounds=[float(b) for b in noise.multiplier_bounds],
        drift_bound=noise.drift_bound,
        coefficient_term=term,
        noise_partial_sum=noise.partial_sum,
        noise_tail=noise.tail,
    )


@dataclass
class MartingalePath:
    M: np.ndarray
    quadratic_variation: np.ndarray
    pairings: np.ndarray


def martingale_path(
    traj1: Trajectory,
    traj2: Trajectory,
    noise: NoiseModel,
    incs: BrownianIncrements,
    factor: float = 2.0,
) -> MartingalePath:
    """
    M_t = factor * sum_{i>=1} int_0^t <z, e^i z>_{H^-1} dW^i with left points.

    The default factor 2 is the one carried by the mollified martingales
    and their limit in the energy inequality. The quadratic variation
    sum_i int <z, e^i z>^2_{H^-1} ds is returned alongside.
    """
    z = _difference(traj1, traj2)
    check_compatible(traj1.grid, noise, incs, traj1.dt)
    if traj1.steps[-1] > incs.n_steps:
        raise InvalidArgumentError(f"path reaches step {traj1.steps[-1]} beyond the {incs.n_steps} increments")
    potential = bessel_values(z, traj1.grid, -2.0)
    pairings = (z * potential) @ noise.mode_matrix.T * traj1.grid.dx
    dw = incs.interval_sums(traj1.steps)[: noise.n_modes]
    increments = factor * np.einsum("ki,ik->k", pairings[:-1], dw)
    M = np.concatenate([[0.0], np.cumsum(increments)])
    qv = _time_integral(np.sum(pairings ** 2, axis=1), traj1.times)
    return MartingalePath(M, qv, pairings)


def dissipation_path(
    traj1: Trajectory,
    traj2: Trajectory,
    coefficient: Union[DiffusionCoefficient, Nonlinearity],
    incs: Optional[BrownianIncrements] = None,
):
    """
    Dissipation entering the energy inequality and the pairing it integrates.

    FP: int <z, a z>_{L^2} ds. PME: 1/2 int <X1 - X2, psi(X1) - psi(X2)>_{L^2} ds,
    the 1/2 being the equation's own factor. The second return value is
    the unscaled pairing at every snapshot, nonnegative for a >= 0 and
    monotone psi.
    """
    z = _difference(traj1, traj2)
    dx = traj1.grid.dx
    if isinstance(coefficient, DiffusionCoefficient):
        a = np.array([coefficient.evaluate(int(s), incs) for s in traj1.steps])
        pairing = np.sum(z * a * z, axis=1) * dx
        rate = pairing
    else:
        pairing = np.sum(z * (coefficient(traj1.snapshots) - coefficient(traj2.snapshots)), axis=1) * dx
        rate = 0.5 * pairing
    return _time_integral(rate, traj1.times), pairing


def localization_times(traj_diff: Trajectory, levels: Sequence[float]) -> List[float]:
    """
    First snapshot time at which int_0^t ||z||^2_{L^2} or ||z(t)||^2_{H^-2}
    reaches the level; +inf when it never does. A level is reached only by
    a positive value, so z = 0 is never stopped.
    """
    levels = [float(level) for level in levels]
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise InvalidArgumentError(f"localization levels must be nondecreasing, got {levels}")
    z = traj_diff.snapshots
    occupation = _time_integral(np.sum(z ** 2, axis=1) * traj_diff.grid.dx, traj_diff.times)
    h2 = sobolev_norm_squared_values(z, traj_diff.grid, -2.0)
    times = []
    for level in levels:
        hit = ((occupation >= level) & (occupation > 0)) | ((h2 >= level) & (h2 > 0))
        times.append(float(traj_diff.times[np.argmax(hit)]) if hit.any() else float("inf"))
    return times


@dataclass
class BoundChain:
    """Largest excess of each inequality used to close the porous-media estimate."""

    young: float
    alpha: float
    norm: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.young, self.alpha, self.norm) <= self.tolerance


def pme_bound_chain(traj1: Trajectory, traj2: Trajectory, psi: Nonlinearity) -> BoundChain:
    """
    Recompute, on the stored fields, the inequalities that bound the cross term:

        2 <(I-Delta)^-1 X, D> <= |(I-Delta)^-1 X|^2 / alpha + alpha |D|^2
        alpha |D|^2 <= <D, X>
        |(I-Delta)^-1 X|^2 <= ||X||^2_{H^-1}

    with X = X1 - X2 and D = psi(X1) - psi(X2), all in L^2.
    """
    X = _difference(traj1, traj2)
    grid = traj1.grid
    D = psi(traj1.snapshots) - psi(traj2.snapshots)
    smoothed = bessel_values(X, grid, -2.0)
    a2 = np.sum(smoothed ** 2, axis=1) * grid.dx
    b2 = np.sum(D ** 2, axis=1) * grid.dx
    cross = np.sum(smoothed * D, axis=1) * grid.dx
    pairing = np.sum(D * X, axis=1) * grid.dx
    g = sobolev_norm_squared_values(X, grid, -1.0)
    if psi.lipschitz_constant > 0:
        young = 2.0 * cross - (a2 * psi.lipschitz_constant + psi.alpha * b2)
        alpha = psi.alpha * b2 - pairing
    else:
        young, alpha = 2.0 * cross, -pairing
    scale = max(1.0, float(np.max(np.abs(np.concatenate([a2, b2, g, pairing])), initial=0.0)))
    return BoundChain(
        float(np.max(young, initial=-np.inf)),
        float(np.max(alpha, initial=-np.inf)),
        float(np.max(a2 - g, initial=-np.inf)),
        1e-10 * scale,
    )


@dataclass
class EnergyLedger:
    """All terms of the energy inequality for one pair of solutions."""

    kind: EquationKind
    times: np.ndarray
    g: np.ndarray
    M: np.ndarray
    quadratic_variation: np.ndarray
    dissipation: np.ndarray
    dissipation_pairing: np.ndarray
    C: float
    levels: List[float] = field(default_factory=list)
    localization: List[float] = field(default_factory=list)
    mollified: Optional[MollifiedEnergy] = None
    bound_chain: Optional[BoundChain] = None

    @property
    def g_integral(self) -> np.ndarray:
        return _time_integral(self.g, self.times)

    @property
    def step(self) -> float:
        return float(np.max(np.diff(self.times))) if len(self.times) > 1 else 0.0

    def excess(self, C: Optional[float] = None) -> np.ndarray:
        """g + dissipation - M - C int g; nonpositive when the inequality holds exactly."""
        C = self.C if C is None else C
        return self.g + self.dissipation - self.M - C * self.g_integral

    @property
    def dissipation_ok(self) -> bool:
        return bool(np.all(self.dissipation_pairing >= DISSIPATION_FLOOR))


def build_ledger(
    traj1: Trajectory,
    traj2: Trajectory,
    noise: NoiseModel,
    incs: BrownianIncrements,
    coefficient: Union[DiffusionCoefficient, Nonlinearity],
    levels: Sequence[float] = (),
    epsilons: Optional[Sequence[float]] = None,
    flux_difference: Optional[np.ndarray] = None,
    factor: float = 2.0,
) -> EnergyLedger:
    """Assemble g, M, dissipation, C and the localization times for one pair."""
    kind = EquationKind.FP if isinstance(coefficient, DiffusionCoefficient) else EquationKind.PME
    martingale = martingale_path(traj1, traj2, noise, incs, factor)
    dissipation, pairing = dissipation_path(traj1, traj2, coefficient, incs)
    ledger = EnergyLedger(
        kind=kind,
        times=traj1.times,
        g=energy_path(traj1, traj2),
        M=martingale.M,
        quadratic_variation=martingale.quadratic_variation,
        dissipation=dissipation,
        dissipation_pairing=pairing,
        C=gronwall_constant(noise, coefficient),
        levels=list(levels),
        localization=localization_times(difference_trajectory(traj1, traj2), levels),
    )
    if epsilons:
        ledger.mollified = mollified_energy_path(traj1, traj2, epsilons, noise, flux_difference)
    if kind == EquationKind.PME:
        ledger.bound_chain = pme_bound_chain(traj1, traj2, coefficient)
    return ledger


@dataclass
class GronwallVerdict:
    passed: bool
    margin: float
    allowed: float
    max_excess: float
    localized: Optional[bool] = None
    localized_margin: Optional[float] = None


def pathwise_slack(ledger: EnergyLedger, C: float, slack_factor: float = 10.0) -> float:
    """slack_factor * dt * (1 + C) * sup g."""
    return slack_factor * ledger.step * (1.0 + C) * float(np.max(ledger.g, initial=0.0))


def gronwall_check(
    ledger: EnergyLedger,
    C: Optional[float] = None,
    tolerance: Optional[float] = None,
    slack_factor: float = 10.0,
) -> GronwallVerdict:
    """
    Pathwise check of g + dissipation <= M + C int g up to a slack.

    The localized variant only looks at t <= stopping time for each
    configured level; both are reported.
    """
    C = ledger.C if C is None else C
    allowed = pathwise_slack(ledger, C, slack_factor) if tolerance is None else tolerance
    excess = ledger.excess(C)
    worst = float(np.max(excess))
    verdict = GronwallVerdict(worst <= allowed, allowed - worst, allowed, worst)
    if ledger.levels:
        margins = [allowed - float(np.max(excess[ledger.times <= stop])) for stop in ledger.localization]
        verdict.localized_margin = min(margins)
        verdict.localized = verdict.localized_margin >= 0
    return verdict


@dataclass
class EnsembleVerdict:
    passed: bool
    margin: float
    mean: np.ndarray
    stderr: np.ndarray
    envelope: np.ndarray


def ensemble_check(
    g_paths: np.ndarray,
    times: np.ndarray,
    C: float,
    tolerance: float = 0.05,
    stop_indices: Optional[np.ndarray] = None,
) -> EnsembleVerdict:
    """
    mean g(t ^ stop) <= exp(C t) mean g(0) (1 + tolerance) + 3 standard errors.

    Args:
        g_paths: One energy path per member, shape (members, snapshots)
        times: Snapshot times
        C: Gronwall constant
        tolerance: Relative slack on the envelope
        stop_indices: Last snapshot index before each member's stopping time

    Returns:
        EnsembleVerdict with the mean path, its standard error and the envelope
    """
    g_paths = np.atleast_2d(np.asarray(g_paths, dtype=float))
    if stop_indices is not None:
        index = np.minimum(np.arange(g_paths.shape[1])[None, :], np.asarray(stop_indices)[:, None])
        g_paths = np.take_along_axis(g_paths, index, axis=1)
    members = g_paths.shape[0]
    mean = g_paths.mean(axis=0)
    stderr = g_paths.std(axis=0, ddof=1) / np.sqrt(members) if members > 1 else np.zeros_like(mean)
    envelope = np.exp(C * times) * mean[0] * (1.0 + tolerance)
    slack = envelope + 3.0 * stderr - mean
    return EnsembleVerdict(bool(np.all(slack >= 0)), float(np.min(slack)), mean, stderr, envelope)


def stop_index(times: np.ndarray, stop: float) -> int:
    return int(np.searchsorted(times, stop, side="right") - 1) if np.isfinite(stop) else len(times) - 1


def refinement_ratios(g_final: Sequence[float]) -> List[float]:
    """Ratios g_j / g_{j+1} of successive level discrepancies (about 2 for strong order 1/2)."""
    g_final = [float(v) for v in g_final]
    return [a / b if b > 0 else float("inf") for a, b in zip(g_final, g_final[1:])]


@dataclass
class MemberResult:
    index: int
    seed: int
    ledger: EnergyLedger
    verdict: GronwallVerdict
    margins: Dict[str, float]
    increments: Optional[BrownianIncrements] = None
    trajectories: Optional[Dict[str, Trajectory]] = None


@dataclass
class UniquenessOutcome:
    """Report plus the bulk data the caller may persist."""

    report: ExperimentReport
    trajectories: Dict[str, Trajectory]
    increments: Optional[BrownianIncrements]
    ledger: Optional[EnergyLedger] = None
    mollified: Optional[MollifiedEnergy] = None


def _interior_test_function(problem: Problem) -> RealField:
    grid = problem.grid
    return RealField(grid, bump_profile(grid.nodes / (0.5 * grid.half_length)))


def _run_pair(problem: Problem, incs: BrownianIncrements, index: int, seed: int, keep: bool) -> MemberResult:
    spec = problem.config.experiment
    x0, x0_perturbed = problem.initial_pair()
    traj1 = problem.solve(x0, incs)
    traj2 = traj1 if x0_perturbed is x0 else problem.solve(x0_perturbed, incs)
    flux_difference = None
    epsilons = spec.eps_ladder if keep else None
    if keep:
        flux_difference = problem.flux_path(traj1, incs) - problem.flux_path(traj2, incs)
    ledger = build_ledger(
        traj1, traj2, problem.noise, incs, problem.coefficient, spec.levels, epsilons, flux_difference
    )
    verdict = gronwall_check(ledger, tolerance=spec.tolerance, slack_factor=spec.slack_factor)
    margins = {"pathwise": verdict.margin}
    for name, scale in (("pathwise_2C", 2.0), ("pathwise_half_C", 0.5)):
        margins[name] = gronwall_check(
            ledger, C=scale * ledger.C, tolerance=spec.tolerance, slack_factor=spec.slack_factor
        ).margin
    if verdict.localized_margin is not None:
        margins["pathwise_localized"] = verdict.localized_margin
    return MemberResult(
        index,
        seed,
        ledger,
        verdict,
        margins,
        increments=incs if keep else None,
        trajectories={"1": traj1, "2": traj2} if keep else None,
    )


def _mode_b(problem: Problem, seed: int, increments: Optional[BrownianIncrements], threads: int):
    config = problem.config
    spec = config.experiment
    members = 1 if increments is not None else spec.ensemble_size

    def member(k: int) -> MemberResult:
        member_seed = derive_seed(seed, k)
        incs = increments
        if incs is None:
            incs = sample_brownian_increments(problem.noise.n_modes, config.time.n_steps, config.time.dt, member_seed)
        return _run_pair(problem, incs, k, member_seed, keep=k == 0)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(progress(pool.map(member, range(members)), total=members, desc="ensemble"))

    first = results[0]
    times = first.ledger.times
    C = first.ledger.C
    g_paths = np.array([r.ledger.g for r in results])
    ensemble = ensemble_check(g_paths, times, C, spec.ensemble_tolerance)
    ensemble_ok, ensemble_margin = ensemble.passed, ensemble.margin
    for level_index in range(len(spec.levels)):
        stops = np.array([stop_index(times, r.ledger.localization[level_index]) for r in results])
        stopped = ensemble_check(g_paths, times, C, spec.ensemble_tolerance, stops)
        ensemble_ok = ensemble_ok and stopped.passed
        ensemble_margin = min(ensemble_margin, stopped.margin)

    margins = {name: min(r.margins[name] for r in results) for name in first.margins}
    margins["ensemble"] = ensemble_margin
    mollified = first.ledger.mollified
    verdicts = Verdicts(
        pathwise=all(r.verdict.passed for r in results),
        pathwise_localized=all(r.verdict.localized for r in results) if spec.levels else None,
        ensemble=ensemble_ok,
        dissipation=all(r.ledger.dissipation_ok for r in results),
        epsilon_ladder=mollified.nonincreasing() if mollified is not None and len(mollified.epsilons) > 1 else None,
        bound_chain=all(r.ledger.bound_chain.passed for r in results) if problem.kind == EquationKind.PME else None,
    )
    paths = Paths(
        t=times.tolist(),
        g=ensemble.mean.tolist(),
        g_stderr=ensemble.stderr.tolist(),
        envelope=ensemble.envelope.tolist(),
        M=first.ledger.M.tolist(),
        dissipation=first.ledger.dissipation.tolist(),
    )
    diagnostics = _pair_diagnostics(problem, first)
    diagnostics["members"] = members
    diagnostics["min_dissipation_pairing"] = min(float(np.min(r.ledger.dissipation_pairing)) for r in results)
    return verdicts, paths, margins, diagnostics, first


def _leakage(values: np.ndarray, grid: Grid1D) -> float:
    leakage = boundary_leakage(values, grid)
    scale = float(np.max(np.abs(values), initial=0.0))
    if scale > 0.0 and leakage > LEAKAGE_WARNING * scale:
        logger.warning(f"Solution reaches the outer 10% of the domain (max {leakage:.3e}); the periodic box may be too small")
    return leakage


def _pair_diagnostics(problem: Problem, first: MemberResult) -> Dict:
    traj1, traj2 = first.trajectories["1"], first.trajectories["2"]
    ledger = first.ledger
    incs = first.increments
    phi = _interior_test_function(problem)
    residual = weak_form_residual(traj1, problem.flux_path(traj1, incs), problem.noise, incs, phi)
    diagnostics = {
        "g0": float(ledger.g[0]),
        "sup_g": float(np.max(ledger.g)),
        "boundary_leakage": _leakage(np.vstack([traj1.snapshots, traj2.snapshots]), problem.grid),
        "localization_times": [t if np.isfinite(t) else None for t in ledger.localization],
        "quadratic_variation": float(ledger.quadratic_variation[-1]),
        "weak_form_residual": float(np.max(np.abs(residual))),
        "l2_time_integral": [l2_time_integral(traj1), l2_time_integral(traj2)],
        "time_continuity_modulus": time_continuity_modulus(difference_trajectory(traj1, traj2)),
        # total variation norm of a density is its L1 norm
        "var_norm_l1": float(np.max(np.sum(np.abs(traj1.snapshots - traj2.snapshots), axis=1)) * problem.grid.dx),
    }
    if ledger.mollified is not None:
        m = ledger.mollified
        diagnostics["mollified"] = {
            "epsilons": m.epsilons,
            "gap": m.gap.tolist(),
            "discrepancies": {name: series.tolist() for name, series in m.discrepancies.items()},
            "rates": m.rates,
        }
    if ledger.bound_chain is not None:
        chain = ledger.bound_chain
        diagnostics["bound_chain"] = {"young": chain.young, "alpha": chain.alpha, "norm": chain.norm}
    spec = problem.config.experiment
    if spec.test_fields > 0:
        fields = generate_test_fields(problem.grid, spec.test_fields, first.seed)
        diagnostics["multiplier_norms_empirical"] = [
            multiplier_norm_empirical(mode, fields) for mode in problem.noise.modes
        ]
    if problem.psi_report is not None:
        diagnostics["psi"] = {
            "name": problem.coefficient.name,
            "parameters": problem.coefficient.parameters,
            "max_lipschitz_ratio": problem.psi_report.max_lipschitz_ratio,
            "min_alpha": problem.psi_report.min_alpha,
        }
    return diagnostics


def _level_gap(coarse: Trajectory, fine: Trajectory) -> np.ndarray:
    """H^-1 distance squared of two refinement levels recorded at the same times."""
    if len(coarse) != len(fine) or not np.allclose(coarse.times, fine.times, rtol=1e-12, atol=1e-14):
        raise InvalidArgumentError("refinement levels are not recorded at common times")
    return sobolev_norm_squared_values(coarse.snapshots - fine.snapshots, coarse.grid, -1.0)


def _mode_a(problem: Problem, seed: int, increments: Optional[BrownianIncrements], threads: int):
    config = problem.config
    spec = config.experiment
    levels = spec.refinement_levels
    factor = 2 ** (levels - 1)
    n, dt, stride = config.time.n_steps, config.time.dt, config.time.stride
    members = 1 if increments is not None else spec.ensemble_size
    x0, _ = problem.initial_pair(delta=0.0)

    def member(k: int):
        fine = increments
        if fine is None:
            fine = sample_brownian_increments(problem.noise.n_modes, n * factor, dt / factor, derive_seed(seed, k))
        trajectories = []
        for j in range(levels):
            incs = fine.coarsen(2 ** (levels - 1 - j)) if j < levels - 1 else fine
            trajectories.append(problem.solve(x0, incs, n * 2 ** j, dt / 2 ** j, stride * 2 ** j))
        g = np.array([_level_gap(a, b) for a, b in zip(trajectories, trajectories[1:])])
        return g, (fine, trajectories) if k == 0 else None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(progress(pool.map(member, range(members)), total=members, desc="refinement"))

    g_levels = np.array([g for g, _ in results])
    mean = g_levels.mean(axis=0)
    ratios = refinement_ratios(mean[:, -1])
    fine, trajectories = results[0][1]
    times = trajectories[0].times
    verdicts = Verdicts(refinement=all(r >= spec.refinement_min_ratio for r in ratios))
    finite = [r for r in ratios if np.isfinite(r)]
    order = float(np.mean(np.log2(finite)) / 2.0) if finite else None
    paths = Paths(t=times.tolist(), g=mean[-1].tolist())
    diagnostics = {
        "members": members,
        "dt": [dt / 2 ** j for j in range(levels)],
        "g_T": mean[:, -1].tolist(),
        "ratios": ratios,
        "order": order,
        "boundary_leakage": _leakage(trajectories[-1].snapshots, problem.grid),
    }
    margins = {"refinement": (min(ratios) - spec.refinement_min_ratio) if ratios else 0.0}
    named = {f"dt{j}": traj for j, traj in enumerate(trajectories)}
    return verdicts, paths, margins, diagnostics, fine, named


def uniqueness_experiment(
    kind: EquationKind,
    config: ExperimentConfig,
    seed: int,
    increments: Optional[BrownianIncrements] = None,
    threads: int = 1,
    config_hash: str = "",
) -> UniquenessOutcome:
    """
    Run the uniqueness experiment of the configured mode.

    Mode A solves one initial datum at dt, dt/2, ... on a single Brownian
    path and measures how fast successive solutions approach each other.
    Mode B solves x0 and x0 + delta * perturbation on shared paths and
    checks the energy inequality pathwise and across the ensemble.

    Args:
        kind: Equation, must match the configuration
        config: Validated experiment configuration
        seed: Master seed; member k uses derive_seed(seed, k)
        increments: Fixed Brownian path to replay instead of sampling
        threads: Worker threads for ensemble members
        config_hash: Content hash recorded in the report

    Returns:
        UniquenessOutcome with the report and member 0's bulk data
    """
    kind = EquationKind(kind)
    if kind != config.equation.kind:
        raise InvalidArgumentError(f"experiment kind {kind} does not match equation.kind {config.equation.kind}")
    problem = Problem.from_config(config)
    mode = config.experiment.mode
    constants = constants_for(problem.noise, problem.coefficient)
    logger.info(f"Uniqueness experiment {kind.value} mode {mode.value}: C={constants.C:.6g}, seed={seed}")

    ledger, mollified = None, None
    if mode == ExperimentMode.A:
        verdicts, paths, margins, diagnostics, incs, trajectories = _mode_a(problem, seed, increments, threads)
    elif mode == ExperimentMode.B:
        verdicts, paths, margins, diagnostics, first = _mode_b(problem, seed, increments, threads)
        incs, trajectories, ledger = first.increments, first.trajectories, first.ledger
        mollified = ledger.mollified
    else:
        raise InvalidArgumentError(f"uniqueness experiments run modes A and B, not {mode.value}")

    report = ExperimentReport(
        kind=kind,
        mode=mode,
        seed=seed,
        config_hash=config_hash,
        constants=constants,
        paths=paths,
        verdicts=verdicts,
        margins=margins,
        diagnostics=diagnostics,
    )
    logger.info(f"Verdicts: {verdicts.dict()}")
    return UniquenessOutcome(report, trajectories, incs, ledger, mollified)
