"""
Service orchestrating experiments: configuration, runs, sweeps and replays.
"""
import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import BlowUpError, ConfigError, HeaderMismatchError
from app.core.schemas import (
    EquationKind,
    ExperimentConfig,
    ExperimentMode,
    ExperimentReport,
    Paths,
    Verdicts,
)
from app.core.spectral import Trajectory
from app.services.energy_harness import UniquenessOutcome, constants_for, uniqueness_experiment
from app.services.fokker_planck import DiffusionCoefficient, gbm_oracle, heat_oracle
from app.services.noise_field import BrownianIncrements, derive_seed, sample_brownian_increments
from app.services.problem import Problem, require
from app.services.stepping import progress
from app.utils.figure_utils import energy_figure, epsilon_figure, waterfall_figure
from app.utils.io_utils import (
    content_hash,
    key_line,
    read_increments,
    read_json,
    write_increments,
    write_json,
    write_paths_csv,
    write_rows_csv,
    write_trajectory_bin,
    write_trajectory_csv,
)

logger = logging.getLogger(__name__)

# sweep axis aliases -> dotted config keys
AXES = {
    "dt": "time.dt",
    "delta": "experiment.delta",
    "N": "noise.N",
    "epsilon": "experiment.eps_ladder",
    "ensemble_size": "experiment.ensemble_size",
}


@dataclass
class RunResult:
    """Report of one run plus where its artifacts went."""

    report: ExperimentReport
    out_dir: Path
    artifacts: List[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.report.passed else 1


@dataclass
class SweepResult:
    axis: str
    values: List[Any]
    rows: List[Dict[str, Any]]
    runs: List[RunResult]
    out_dir: Path

    @property
    def exit_code(self) -> int:
        return 0 if all(run.exit_code == 0 for run in self.runs) else 1


def parse_config(data: Dict[str, Any], text: Optional[str] = None) -> ExperimentConfig:
    """
    Validate a configuration dictionary.

    Args:
        data: Parsed JSON object; a ``content_hash`` key from a config echo is ignored
        text: Raw JSON text, used to locate the offending key

    Returns:
        The validated ExperimentConfig

    Raises:
        ConfigError: with the dotted key path of the first problem and its line when known
    """
    data = {k: v for k, v in data.items() if k != "content_hash"}
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"] if part != "__root__") or None
        line = key_line(text, key) if text else None
        message = f"{key}: {first['msg']}" if key else first["msg"]
        raise ConfigError(message, key=key, line=line) from e


class ExperimentService:
    """Runs experiments and owns every file they write."""

    def __init__(self, output_dir: Optional[str] = None, threads: Optional[int] = None, figures: Optional[bool] = None):
        """
        Initialize the experiment service.

        Args:
            output_dir: Default output directory; falls back to SPDE_OUTPUT_DIR
            threads: Worker threads for ensemble members; falls back to SPDE_THREADS
            figures: Emit SVG figures; falls back to SPDE_FIGURES
        """
        self.output_dir = output_dir
        self.threads = settings.threads if threads is None else threads
        self.figures = settings.figures if figures is None else figures

    def load_config(self, path: str) -> ExperimentConfig:
        data, text = read_json(path)
        return parse_config(data, text)

    @staticmethod
    def resolve_seed(seed: Optional[int], config: ExperimentConfig) -> int:
        """--seed flag, then the config's seed, then SPDE_SEED, then 0."""
        for candidate in (seed, config.seed, settings.default_seed):
            if candidate is not None:
                if not 0 <= int(candidate) < 2 ** 64:
                    raise ConfigError(f"seed must be an unsigned 64-bit integer, got {candidate}", key="seed")
                return int(candidate)
        return 0

    def echo(self, config: ExperimentConfig, seed: int) -> Dict[str, Any]:
        """Config with resolved defaults and seed, plus its content hash."""
        data = config.dict()
        data["seed"] = seed
        data["content_hash"] = content_hash(data)
        return data

    def _out_dir(self, out_dir: Optional[str], config: ExperimentConfig) -> Path:
        path = Path(out_dir or config.output_dir or self.output_dir or settings.output_dir)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"Cannot create output directory {path}: {e}")
            raise ConfigError(f"cannot create output directory {path}: {e}", key="output_dir") from e
        return path

    def run(self, config_path: str, seed: Optional[int] = None, out_dir: Optional[str] = None) -> RunResult:
        """Load a config file and run it."""
        return self.run_config(self.load_config(config_path), seed=seed, out_dir=out_dir)

    def run_config(
        self,
        config: ExperimentConfig,
        seed: Optional[int] = None,
        out_dir: Optional[str] = None,
        increments: Optional[BrownianIncrements] = None,
    ) -> RunResult:
        """
        Run one experiment and write its artifacts.

        Args:
            config: Validated configuration
            seed: Seed flag; see resolve_seed for the precedence
            out_dir: Output directory override
            increments: Fixed Brownian path (replay)

        Returns:
            RunResult; exit_code is 0 iff every configured verdict passes

        Raises:
            BlowUpError: after writing blowup-state.bin
        """
        seed = self.resolve_seed(seed, config)
        out = self._out_dir(out_dir, config)
        echo = self.echo(config, seed)
        config_hash = echo["content_hash"]
        artifacts = [write_json(out / "config-echo.json", echo).name]
        kind = config.equation.kind
        logger.info(f"Running {kind.value} experiment, mode {config.experiment.mode.value}, seed {seed}, into {out}")

        try:
            if config.experiment.mode == ExperimentMode.ORACLE:
                outcome = oracle_experiment(config, seed, increments, self.threads, config_hash)
            else:
                outcome = uniqueness_experiment(kind, config, seed, increments, self.threads, config_hash)
        except BlowUpError as e:
            if e.state is not None:
                np.asarray(e.state, dtype="<f8").tofile(out / "blowup-state.bin")
                logger.error(f"Blow-up state at step {e.step} written to {out / 'blowup-state.bin'}")
            raise

        report = outcome.report
        if outcome.increments is not None:
            report.diagnostics["increments_seed"] = outcome.increments.seed
        artifacts += self._write_artifacts(out, outcome)
        report.artifacts = sorted(artifacts + ["report.json"])
        write_json(out / "report.json", report.dict())
        logger.info(f"Experiment finished: passed={report.passed}, verdicts={report.verdicts.dict()}")
        return RunResult(report, out, report.artifacts)

    def _write_artifacts(self, out: Path, outcome: UniquenessOutcome) -> List[str]:
        written = []
        for name, traj in sorted(outcome.trajectories.items()):
            written.append(write_trajectory_csv(out / f"trajectory-{name}.csv", traj).name)
            written.append(write_trajectory_bin(out / f"trajectory-{name}.bin", traj).name)
        if outcome.increments is not None:
            written.append(
                write_increments(out / "increments.bin", outcome.increments, master_seed=outcome.report.seed).name
            )
        paths = outcome.report.paths.dict()
        if paths["t"]:
            written.append(write_paths_csv(out / "paths.csv", paths).name)
        if not self.figures:
            return written
        if paths["g"]:
            written.append(
                energy_figure(
                    out / "energy.svg",
                    paths["t"],
                    paths["g"],
                    paths["envelope"] or None,
                    paths["g_stderr"] or None,
                    title=f"{outcome.report.kind.value} mode {outcome.report.mode.value}",
                ).name
            )
        if outcome.trajectories:
            name, traj = sorted(outcome.trajectories.items())[0]
            written.append(waterfall_figure(out / "waterfall.svg", traj.grid.nodes, traj.times, traj.snapshots).name)
        if outcome.mollified is not None:
            discrepancies = {k: v.tolist() for k, v in outcome.mollified.discrepancies.items()}
            written.append(epsilon_figure(out / "epsilon.svg", outcome.mollified.epsilons, discrepancies).name)
        return written

    def sweep(
        self,
        config_path: str,
        axis: str,
        values: Sequence[Any],
        seed: Optional[int] = None,
        out_dir: Optional[str] = None,
    ) -> SweepResult:
        """
        One run per axis value, aggregated into sweep.csv and sweep.json.

        A single value reproduces ``run`` with the master seed. Otherwise run k
        uses derive_seed(master, k) and writes into sweep-k/.
        """
        config = self.load_config(config_path)
        values = list(values)
        if not values:
            raise ConfigError("sweep needs at least one value", key="values")
        dotted = AXES.get(axis, axis)
        base = config.dict()
        current = _lookup(base, dotted)
        wrap = axis == "epsilon"
        if isinstance(current, dict) or (isinstance(current, list) and not wrap):
            raise ConfigError(f"sweep axis {axis} ({dotted}) is not a scalar key", key=dotted)

        master = self.resolve_seed(seed, config)
        out = self._out_dir(out_dir, config)
        runs, rows = [], []
        for k, value in enumerate(progress(values, total=len(values), desc="sweep")):
            data = copy.deepcopy(base)
            _assign(data, dotted, [value] if wrap else value)
            if len(values) == 1:
                member_seed, member_out = master, out
            else:
                member_seed, member_out = derive_seed(master, k), out / f"sweep-{k}"
            result = self.run_config(parse_config(data), seed=member_seed, out_dir=str(member_out))
            runs.append(result)
            rows.append(_sweep_row(k, axis, value, member_seed, result))

        margin_keys = sorted({key for row in rows for key in row if key.startswith(("margin_", "rate_"))})
        columns = ["index", "axis", "value", "seed", "passed", "C", "order", "g_T"] + margin_keys
        write_rows_csv(out / "sweep.csv", columns, rows)
        write_json(out / "sweep.json", {"axis": axis, "key": dotted, "values": values, "master_seed": master, "rows": rows})
        logger.info(f"Sweep over {axis} finished: {sum(r.exit_code == 0 for r in runs)}/{len(runs)} passed")
        return SweepResult(axis, values, rows, runs, out)

    def replay(
        self, increments_path: str, config_path: str, seed: Optional[int] = None, out_dir: Optional[str] = None
    ) -> RunResult:
        """
        Rerun a configuration on a dumped Brownian path.

        Raises:
            HeaderMismatchError: if N, n_steps or dt of the file disagree with the config
        """
        config = self.load_config(config_path)
        incs = read_increments(increments_path)
        check_increments_header(incs, config)
        if seed is None and config.seed is None:
            # the run's master seed, not the derived seed member 0 drew with
            seed = incs.master_seed if incs.master_seed is not None else incs.seed
        logger.info(f"Replaying {increments_path} ({incs.n_modes} modes, {incs.n_steps} steps, dt={incs.dt})")
        return self.run_config(config, seed=seed, out_dir=out_dir, increments=incs)


def _lookup(data: Dict[str, Any], dotted: str) -> Any:
    node: Any = data
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown sweep axis {dotted}", key=dotted)
        node = node[part]
    return node


def _assign(data: Dict[str, Any], dotted: str, value: Any) -> None:
    *parents, last = dotted.split(".")
    node = data
    for part in parents:
        node = node[part]
    node[last] = value


def _sweep_row(index: int, axis: str, value: Any, seed: int, result: RunResult) -> Dict[str, Any]:
    report = result.report
    diagnostics = report.diagnostics
    g = report.paths.g
    row = {
        "index": index,
        "axis": axis,
        "value": value,
        "seed": seed,
        "passed": report.passed,
        "C": report.constants.C if report.constants else None,
        "order": diagnostics.get("order"),
        "g_T": g[-1] if g else None,
    }
    for name, margin in sorted(report.margins.items()):
        row[f"margin_{name}"] = margin
    for name, rate in sorted(diagnostics.get("mollified", {}).get("rates", {}).items()):
        row[f"rate_{name}"] = rate
    return row


def expected_increments(config: ExperimentConfig) -> Tuple[int, int, float]:
    """(N, n_steps, dt) of the path a run of this config samples."""
    n, dt = config.time.n_steps, config.time.dt
    spec = config.experiment
    if spec.mode == ExperimentMode.A:
        factor = 2 ** (spec.refinement_levels - 1)
        return config.noise.N, n * factor, dt / factor
    if spec.mode == ExperimentMode.ORACLE and config.noise.N > 0:
        return config.noise.N, 2 * n, dt / 2
    return config.noise.N, n, dt


def check_increments_header(incs: BrownianIncrements, config: ExperimentConfig) -> None:
    n_modes, n_steps, dt = expected_increments(config)
    if incs.n_modes != n_modes:
        raise HeaderMismatchError(f"increments have N={incs.n_modes}, config has N={n_modes}", key="noise.N")
    if incs.n_steps != n_steps:
        raise HeaderMismatchError(f"increments have {incs.n_steps} steps, config needs {n_steps}", key="time.T")
    if abs(incs.dt - dt) > 1e-12 * max(1.0, dt):
        raise HeaderMismatchError(f"increments have dt={incs.dt}, config needs dt={dt}", key="time.dt")


def oracle_experiment(
    config: ExperimentConfig,
    seed: int,
    increments: Optional[BrownianIncrements] = None,
    threads: int = 1,
    config_hash: str = "",
) -> UniquenessOutcome:
    """
    Compare the solver with a closed-form solution.

    Without noise (N = 0) the equation is the heat equation with rate a0
    (FP, constant a) or 1/2 (PME, psi = identity) and the Fourier decay is
    exact. With one mode and no diffusion (a = 0 or psi = 0) every node is
    a geometric Brownian motion; the run measures the strong error at dt
    and dt/2 on the same path and checks its ratio.
    """
    problem = Problem.from_config(config)
    if config.noise.N == 0:
        return _heat_oracle(problem, seed, increments, config_hash)
    return _gbm_oracle(problem, seed, increments, threads, config_hash)


def _heat_rate(problem: Problem) -> float:
    config = problem.config
    if problem.kind == EquationKind.FP:
        require(
            config.equation.diffusion.kind == "constant",
            "heat oracle needs a constant coefficient",
            "equation.diffusion.kind",
        )
        return problem.coefficient.sup_bound
    require(
        problem.coefficient.name in ("identity", "zero"),
        "heat oracle needs psi = identity or zero",
        "equation.psi.name",
    )
    return 0.5 * problem.coefficient.lipschitz_constant


def _oracle_report(problem: Problem, seed: int, config_hash: str, **fields) -> ExperimentReport:
    return ExperimentReport(
        kind=problem.kind,
        mode=ExperimentMode.ORACLE,
        seed=seed,
        config_hash=config_hash,
        constants=constants_for(problem.noise, problem.coefficient),
        **fields,
    )


def _heat_oracle(
    problem: Problem, seed: int, increments: Optional[BrownianIncrements], config_hash: str
) -> UniquenessOutcome:
    config = problem.config
    require(config.noise.drift_amplitude == 0, "heat oracle needs the noise switched off", "noise.drift_amplitude")
    rate = _heat_rate(problem)
    x0, _ = problem.initial_pair(delta=0.0)
    incs = increments or sample_brownian_increments(0, config.time.n_steps, config.time.dt, seed)
    traj = problem.solve(x0, incs)
    exact = np.array([heat_oracle(x0, rate, t).values for t in traj.times])
    errors = np.sqrt(np.sum((traj.snapshots - exact) ** 2, axis=1) * problem.grid.dx)
    tolerance = config.experiment.oracle_tolerance
    worst = float(np.max(errors))
    logger.info(f"Heat oracle: max L2 error {worst:.3e} (tolerance {tolerance:.1e})")
    exact_traj = Trajectory(traj.grid, traj.times, traj.steps, exact, traj.dt, traj.stride)
    report = _oracle_report(
        problem,
        seed,
        config_hash,
        paths=Paths(t=traj.times.tolist()),
        verdicts=Verdicts(oracle=worst < tolerance),
        margins={"oracle": tolerance - worst},
        diagnostics={"oracle": "heat", "rate": rate, "l2_error": errors.tolist(), "max_l2_error": worst},
    )
    return UniquenessOutcome(report, {"solution": traj, "exact": exact_traj}, None)


def _gbm_oracle(
    problem: Problem, seed: int, increments: Optional[BrownianIncrements], threads: int, config_hash: str
) -> UniquenessOutcome:
    config = problem.config
    require(config.noise.N == 1, "GBM oracle needs exactly one noise mode", "noise.N")
    if problem.kind == EquationKind.FP:
        coefficient: DiffusionCoefficient = problem.coefficient
        require(
            config.equation.diffusion.kind == "constant" and coefficient.sup_bound == 0,
            "GBM oracle needs a = 0",
            "equation.diffusion.value",
        )
    else:
        require(problem.coefficient.name == "zero", "GBM oracle needs psi = zero", "equation.psi.name")

    n, dt, stride = config.time.n_steps, config.time.dt, config.time.stride
    spec = config.experiment
    members = 1 if increments is not None else spec.ensemble_size
    x0, _ = problem.initial_pair(delta=0.0)
    e = problem.noise.modes[0]
    dx = problem.grid.dx

    def member(k: int):
        fine = increments or sample_brownian_increments(1, 2 * n, dt / 2, derive_seed(seed, k))
        coarse_traj = problem.solve(x0, fine.coarsen(2), n, dt, stride)
        fine_traj = problem.solve(x0, fine, 2 * n, dt / 2, 2 * stride)
        w_t = np.concatenate([[0.0], np.cumsum(fine.interval_sums(fine_traj.steps)[0])])
        exact = np.array([gbm_oracle(x0, e, w, t, problem.noise.drift).values for w, t in zip(w_t, fine_traj.times)])
        coarse_err = np.sum((coarse_traj.snapshots[-1] - exact[-1]) ** 2) * dx
        fine_err = np.sum((fine_traj.snapshots[-1] - exact[-1]) ** 2) * dx
        kept = None
        if k == 0:
            exact_traj = Trajectory(fine_traj.grid, fine_traj.times, fine_traj.steps, exact, fine_traj.dt, fine_traj.stride)
            kept = (fine, {"dt0": coarse_traj, "dt1": fine_traj, "exact": exact_traj})
        return coarse_err, fine_err, kept

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(progress(pool.map(member, range(members)), total=members, desc="oracle"))

    coarse_mse = float(np.mean([r[0] for r in results]))
    fine_mse = float(np.mean([r[1] for r in results]))
    ratio = float(np.sqrt(coarse_mse / fine_mse)) if fine_mse > 0 else float("inf")
    low, high = spec.oracle_ratio_bounds
    logger.info(f"GBM oracle: strong error ratio {ratio:.4f} over {members} paths (accepted [{low}, {high}])")
    fine, trajectories = results[0][2]
    report = _oracle_report(
        problem,
        seed,
        config_hash,
        verdicts=Verdicts(oracle=low <= ratio <= high),
        margins={"oracle": min(ratio - low, high - ratio)},
        diagnostics={
            "oracle": "gbm",
            "members": members,
            "rms_error": [float(np.sqrt(coarse_mse)), float(np.sqrt(fine_mse))],
            "dt": [dt, dt / 2],
            "ratio": ratio,
            "order": float(np.log2(ratio)) if np.isfinite(ratio) and ratio > 0 else None,
        },
    )
    return UniquenessOutcome(report, trajectories, fine)
