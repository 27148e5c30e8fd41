"""Exception hierarchy shared by the solvers, the harness and the CLI."""
from typing import Any, Optional

ASSUMPTIONS = {
    "noise_summability": "noise modes and their derivatives have square-summable sup norms",
    "diffusion_bounds": "diffusion coefficient stays between 0 and its sup bound",
    "psi_monotone_lipschitz": "psi is nondecreasing, Lipschitz and vanishes at 0",
}


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""

    exit_code: int = 2


class InvalidArgumentError(SimulationError, ValueError):
    """An argument violates an operation's precondition."""


class AssumptionViolationError(InvalidArgumentError):
    """A coefficient does not satisfy a structural assumption of the equations."""

    def __init__(self, message: str, assumption: str, report: Optional[Any] = None):
        super().__init__(message)
        self.assumption = assumption
        self.report = report

    def __str__(self) -> str:
        text = super().__str__()
        description = ASSUMPTIONS.get(self.assumption)
        name = f"{self.assumption} ({description})" if description else self.assumption
        return f"assumption {name} violated: {text}"


class StabilityError(InvalidArgumentError):
    """The time step violates the stability rule of the chosen scheme."""


class BlowUpError(SimulationError, FloatingPointError):
    """A non-finite value appeared while time stepping."""

    exit_code = 3

    def __init__(self, message: str, step: int, state: Optional[Any] = None):
        super().__init__(message)
        self.step = step
        self.state = state


class ConfigError(SimulationError):
    """An experiment configuration could not be loaded or validated."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line

    def __str__(self) -> str:
        text = super().__str__()
        if self.line is not None:
            text = f"line {self.line}: {text}"
        return text


class HeaderMismatchError(ConfigError):
    """A replayed increments file does not match the experiment configuration."""
