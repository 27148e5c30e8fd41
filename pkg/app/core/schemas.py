"""Pydantic schemas for experiment configurations and reports."""
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, root_validator, validator


class EquationKind(str, Enum):
    """Which equation is simulated."""
    FP = "FP"
    PME = "PME"


class Scheme(str, Enum):
    """Time-stepping variant."""
    EXPLICIT = "explicit"
    SEMI_IMPLICIT = "semi_implicit"


class ExperimentMode(str, Enum):
    """A: dt refinement on one path, B: perturbed initial data, oracle: closed-form comparison."""
    A = "A"
    B = "B"
    ORACLE = "oracle"


class NoiseFamily(str, Enum):
    """Built-in families of noise basis functions."""
    DAMPED_TRIG = "damped_trig"
    GAUSSIAN_BUMPS = "gaussian_bumps"
    TABULATED = "tabulated"


class _Section(BaseModel):
    class Config:
        extra = "forbid"


class GridConfig(_Section):
    """Periodic grid standing in for the real line."""
    L: float = Field(..., gt=0, description="Half length of the domain [-L, L)")
    n: int = Field(..., description="Number of grid points, a power of two >= 8")

    @validator("n")
    def _power_of_two(cls, n):
        if n < 8 or n & (n - 1):
            raise ValueError("must be a power of two >= 8")
        return n


class TimeConfig(_Section):
    """Time horizon and step."""
    T: float = Field(..., gt=0, description="Final time")
    dt: float = Field(..., gt=0, description="Time step")
    stride: int = Field(1, ge=1, description="Steps between recorded snapshots")

    @root_validator(skip_on_failure=True)
    def _whole_number_of_steps(cls, values):
        T, dt = values["T"], values["dt"]
        if abs(dt * round(T / dt) - T) > 1e-12:
            raise ValueError(f"T={T} is not a whole multiple of dt={dt}")
        return values

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


class DiffusionConfig(_Section):
    """Fokker-Planck coefficient a(t, xi) >= 0."""
    kind: Literal["constant", "degenerate_half", "path_dependent", "tabulated"] = "constant"
    value: float = Field(0.5, ge=0, description="Level a0 of the coefficient")
    transition: float = Field(0.1, gt=0, lt=1, description="Width of smooth transitions as a fraction of L")
    table: Optional[List[float]] = Field(None, description="Nodal values for kind=tabulated")


class PsiConfig(_Section):
    """Porous-media nonlinearity."""
    name: Literal["identity", "saturated_power", "arctan", "zero"] = "identity"
    m: float = Field(2.0, ge=1)
    K: float = Field(5.0, gt=0)
    scale: float = Field(1.0, gt=0)


class EquationConfig(_Section):
    """Equation selection and discretization switches."""
    kind: EquationKind
    scheme: Scheme = Scheme.EXPLICIT
    theta: float = Field(0.5, gt=0, le=1, description="Implicitness of the frozen Laplacian")
    dealias: bool = False
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    psi: PsiConfig = Field(default_factory=PsiConfig)


class NoiseConfig(_Section):
    """Noise basis e^0, e^1, ..., e^N."""
    family: NoiseFamily = NoiseFamily.DAMPED_TRIG
    N: int = Field(..., ge=0, description="Number of noise modes")
    c: float = Field(1.0, ge=0, description="Amplitude scale")
    p: float = Field(2.0, description="Amplitude decay exponent c_i = c / i^p")
    use_window: bool = True
    window_plateau: float = Field(0.6, gt=0, lt=1, description="Fraction of L where the window equals 1")
    window_edge: float = Field(0.9, gt=0, le=1, description="Fraction of L beyond which the window vanishes")
    bump_width: float = Field(0.1, gt=0, description="Gaussian bump width as a fraction of L")
    drift_amplitude: float = 0.0
    drift_shape: Literal["constant", "window"] = "window"
    tabulated: Optional[List[List[float]]] = None

    @root_validator(skip_on_failure=True)
    def _consistent(cls, values):
        if values["window_plateau"] >= values["window_edge"]:
            raise ValueError("window_plateau must be smaller than window_edge")
        if values["family"] == NoiseFamily.TABULATED:
            table = values.get("tabulated")
            if table is None or len(table) != values["N"]:
                raise ValueError("tabulated family needs exactly N rows in 'tabulated'")
        return values


class InitialCondition(_Section):
    """Named initial profiles; lengths are absolute."""
    profile: Literal["gaussian", "cosine", "spike", "tabulated"] = "gaussian"
    amplitude: float = 1.0
    center: float = 0.0
    width: float = Field(0.5, gt=0)
    mode: int = Field(1, ge=0)
    epsilon: float = Field(0.1, gt=0, description="Mollifier width of the spike profile")
    values: Optional[List[float]] = None

    @root_validator(skip_on_failure=True)
    def _tabulated_values(cls, values):
        if values["profile"] == "tabulated" and not values.get("values"):
            raise ValueError("tabulated profile needs 'values'")
        return values


class ExperimentSpec(_Section):
    """What the harness does with the simulated paths."""
    mode: ExperimentMode = ExperimentMode.B
    delta: float = 1e-2
    perturbation: InitialCondition = Field(
        default_factory=lambda: InitialCondition(profile="cosine", amplitude=1.0, mode=1)
    )
    eps_ladder: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    ensemble_size: int = Field(200, ge=1)
    levels: List[float] = Field(default_factory=list)
    tolerance: Optional[float] = Field(None, ge=0, description="Absolute pathwise slack, overrides slack_factor")
    slack_factor: float = Field(10.0, ge=0, description="Pathwise slack is slack_factor * dt * (1 + C) * sup g")
    ensemble_tolerance: float = Field(0.05, ge=0)
    refinement_levels: int = Field(3, ge=2)
    refinement_min_ratio: float = Field(1.8, gt=0)
    oracle_tolerance: float = Field(1e-6, gt=0, description="Heat oracle: largest accepted L2 error")
    oracle_ratio_bounds: List[float] = Field(
        default_factory=lambda: [1.25, 1.60], description="GBM oracle: accepted error ratio for dt vs dt/2"
    )
    test_fields: int = Field(0, ge=0, description="Random test fields for empirical multiplier norms (0 disables)")

    @validator("oracle_ratio_bounds")
    def _bounds(cls, bounds):
        if len(bounds) != 2 or not 0 < bounds[0] < bounds[1]:
            raise ValueError("must be [low, high] with 0 < low < high")
        return bounds

    @validator("eps_ladder")
    def _decreasing(cls, ladder):
        if not ladder:
            raise ValueError("must not be empty")
        if any(b >= a for a, b in zip(ladder, ladder[1:])) or min(ladder) <= 0:
            raise ValueError("must be positive and strictly decreasing")
        return ladder

    @validator("levels")
    def _increasing(cls, levels):
        if any(b < a for a, b in zip(levels, levels[1:])):
            raise ValueError("must be nondecreasing")
        return levels


class ExperimentConfig(_Section):
    """Complete, reproducible description of one experiment."""
    grid: GridConfig
    time: TimeConfig
    equation: EquationConfig
    noise: NoiseConfig
    initial_condition: InitialCondition = Field(default_factory=InitialCondition)
    experiment: ExperimentSpec = Field(default_factory=ExperimentSpec)
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None

    @root_validator(skip_on_failure=True)
    def _cross_checks(cls, values):
        n = values["grid"].n
        table = values["equation"].diffusion.table
        if values["equation"].diffusion.kind == "tabulated" and (table is None or len(table) != n):
            raise ValueError("equation.diffusion.table must have grid.n entries")
        for row in values["noise"].tabulated or []:
            if len(row) != n:
                raise ValueError("every noise.tabulated row must have grid.n entries")
        for ic in (values["initial_condition"], values["experiment"].perturbation):
            if ic.profile == "tabulated" and len(ic.values) != n:
                raise ValueError("tabulated profiles must have grid.n values")
        if max(values["experiment"].eps_ladder) >= values["grid"].L / 2:
            raise ValueError("experiment.eps_ladder entries must be below L/2")
        return values


class Verdicts(BaseModel):
    """Outcome of every configured check; None means not applicable."""
    pathwise: Optional[bool] = None
    pathwise_localized: Optional[bool] = None
    ensemble: Optional[bool] = None
    refinement: Optional[bool] = None
    oracle: Optional[bool] = None
    epsilon_ladder: Optional[bool] = None
    dissipation: Optional[bool] = None
    bound_chain: Optional[bool] = None

    @property
    def passed(self) -> bool:
        return all(v for v in self.dict().values() if v is not None)


class Constants(BaseModel):
    """Gronwall constant and the multiplier bounds it is assembled from."""
    C: float = Field(..., description="Gronwall constant")
    mode_bounds: List[float] = Field([], description="Multiplier bounds C(e^i), i >= 1")
    drift_bound: float = Field(0.0, description="Multiplier bound C(e^0)")
    coefficient_term: float = Field(0.0, description="sup a (FP) or 1/alpha (PME)")
    noise_partial_sum: float = 0.0
    noise_tail: Optional[float] = None


class Paths(BaseModel):
    """Time paths recorded for the report and its CSV mirror."""
    t: List[float] = []
    g: List[float] = []
    g_stderr: List[float] = []
    envelope: List[float] = []
    M: List[float] = []
    dissipation: List[float] = []


class ExperimentReport(BaseModel):
    """Serialized result of one run."""
    kind: EquationKind
    mode: ExperimentMode
    seed: int
    config_hash: str
    constants: Optional[Constants] = None
    paths: Paths = Field(default_factory=Paths)
    verdicts: Verdicts = Field(default_factory=Verdicts)
    margins: Dict[str, float] = {}
    diagnostics: Dict[str, Any] = {}
    artifacts: List[str] = []

    @property
    def passed(self) -> bool:
        return self.verdicts.passed


class RunRequest(BaseModel):
    """Body of the validate and run endpoints."""
    config: Dict[str, Any]
    seed: Optional[int] = Field(None, ge=0, lt=2 ** 64)


class ValidationResponse(BaseModel):
    """Resolved configuration echo returned by the validate endpoint."""
    valid: bool
    content_hash: str
    config: Dict[str, Any]
