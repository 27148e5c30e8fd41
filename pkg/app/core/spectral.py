"""
Periodic grid and Fourier-multiplier calculus on the torus [-L, L).

The torus stands in for the real line. Every operator here is diagonal in
the discrete Fourier basis: Bessel potentials (I - Delta)^{s/2} with symbol
(1 + k^2)^{s/2}, spectral derivatives (ik)^order and periodic convolution
with a compactly supported mollifier. Discrete norms use the rectangle rule
with weight dx, which is spectrally accurate on a periodic grid.

The ``*_values`` helpers work on raw arrays whose last axis is the spatial
one, so a whole stack of snapshots can be transformed in one call.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np

from app.core.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

Scalar = Union[int, float]


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on [-half_length, half_length)."""

    half_length: float
    n_points: int

    def __post_init__(self):
        if not np.isfinite(self.half_length) or self.half_length <= 0:
            raise InvalidArgumentError(f"half_length must be positive, got {self.half_length}")
        n = int(self.n_points)
        if n != self.n_points or n < 8 or n & (n - 1):
            raise InvalidArgumentError(f"n_points must be a power of two >= 8, got {self.n_points}")
        object.__setattr__(self, "half_length", float(self.half_length))
        object.__setattr__(self, "n_points", n)

    @property
    def length(self) -> float:
        return 2.0 * self.half_length

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = -self.half_length + self.dx * np.arange(self.n_points)
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """k_m = pi*m/L in the standard FFT layout (0, 1, ..., n/2-1, -n/2, ..., -1)."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)
        k.setflags(write=False)
        return k

    @cached_property
    def rwavenumbers(self) -> np.ndarray:
        """Nonnegative wavenumbers matching the layout of ``numpy.fft.rfft``."""
        k = 2.0 * np.pi * np.fft.rfftfreq(self.n_points, d=self.dx)
        k.setflags(write=False)
        return k

    @property
    def k_max(self) -> float:
        return np.pi * self.n_points / self.length

    def same_as(self, other: "Grid1D") -> bool:
        return self.half_length == other.half_length and self.n_points == other.n_points


def make_grid(half_length: float, n_points: int) -> Grid1D:
    """Build a grid, validating that n_points is a power of two."""
    return Grid1D(float(half_length), int(n_points))


@dataclass(frozen=True, eq=False)
class RealField:
    """Finite real function sampled at the grid nodes."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise InvalidArgumentError(
                f"field has shape {values.shape}, expected ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid1D, fn: Callable[[np.ndarray], np.ndarray]) -> "RealField":
        return cls(grid, np.broadcast_to(fn(grid.nodes), (grid.n_points,)))

    @classmethod
    def constant(cls, grid: Grid1D, value: float) -> "RealField":
        return cls(grid, np.full(grid.n_points, float(value)))

    @classmethod
    def zeros(cls, grid: Grid1D) -> "RealField":
        return cls.constant(grid, 0.0)

    def _operand(self, other):
        if isinstance(other, RealField):
            _check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other) -> "RealField":
        return RealField(self.grid, self.values + self._operand(other))

    __radd__ = __add__

    def __sub__(self, other) -> "RealField":
        return RealField(self.grid, self.values - self._operand(other))

    def __mul__(self, other) -> "RealField":
        return RealField(self.grid, self.values * self._operand(other))

    __rmul__ = __mul__

    def __neg__(self) -> "RealField":
        return RealField(self.grid, -self.values)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Snapshots of a field recorded every ``stride`` steps of size ``dt``."""

    grid: Grid1D
    times: np.ndarray
    steps: np.ndarray
    snapshots: np.ndarray
    dt: float
    stride: int

    def __post_init__(self):
        if self.snapshots.ndim != 2 or self.snapshots.shape[1] != self.grid.n_points:
            raise InvalidArgumentError(f"snapshot matrix has shape {self.snapshots.shape}")
        if not (len(self.times) == len(self.steps) == self.snapshots.shape[0]):
            raise InvalidArgumentError("times, steps and snapshots disagree in length")

    @classmethod
    def frozen(cls, field: "RealField", n_steps: int, dt: float) -> "Trajectory":
        """A field held fixed at every step 0..n_steps (deterministic integrands)."""
        steps = np.arange(n_steps + 1)
        snapshots = np.broadcast_to(field.values, (n_steps + 1, field.grid.n_points)).copy()
        return cls(field.grid, steps * dt, steps, snapshots, dt, 1)

    def __len__(self) -> int:
        return self.snapshots.shape[0]

    def field(self, index: int) -> RealField:
        return RealField(self.grid, self.snapshots[index])

    @property
    def final(self) -> RealField:
        return self.field(-1)

    def same_schedule(self, other: "Trajectory") -> bool:
        return (
            self.grid.same_as(other.grid)
            and len(self) == len(other)
            and np.array_equal(self.steps, other.steps)
            and np.allclose(self.times, other.times, rtol=1e-12, atol=1e-14)
        )


def bump_profile(u: np.ndarray) -> np.ndarray:
    """exp(-1/(1-u^2)) on (-1, 1), zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierSpec:
    """Scaled bump phi_eps = phi(./eps)/eps, normalized to unit discrete mass."""

    epsilon: float

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise InvalidArgumentError(f"mollifier epsilon must be positive, got {self.epsilon}")

    def kernel(self, grid: Grid1D) -> np.ndarray:
        """Kernel samples at periodic offsets j*dx, centred on index 0."""
        if self.epsilon >= grid.half_length / 2:
            raise InvalidArgumentError(
                f"mollifier epsilon={self.epsilon} does not fit the grid (needs < {grid.half_length / 2})"
            )
        offsets = grid.dx * np.arange(grid.n_points)
        offsets = np.where(offsets >= grid.half_length, offsets - grid.length, offsets)
        kernel = bump_profile(offsets / self.epsilon) / self.epsilon
        # eps <= dx leaves only the centre sample, so the normalized kernel is a discrete delta
        return kernel / (kernel.sum() * grid.dx)


def _check_same_grid(f: RealField, g: RealField) -> None:
    if not f.grid.same_as(g.grid):
        raise InvalidArgumentError("fields live on different grids")


def apply_symbol(values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Multiply the real spectrum of ``values`` (last axis) by ``symbol``."""
    n = values.shape[-1]
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * symbol, n=n, axis=-1)


def bessel_symbol(grid: Grid1D, s: float) -> np.ndarray:
    return (1.0 + grid.rwavenumbers ** 2) ** (s / 2.0)


def bessel_values(values: np.ndarray, grid: Grid1D, s: float) -> np.ndarray:
    if s == 0:
        return np.array(values, dtype=float)
    return apply_symbol(values, bessel_symbol(grid, s))


def bessel_potential(f: RealField, s: float) -> RealField:
    """(I - Delta)^{s/2} f as the Fourier multiplier (1 + k^2)^{s/2}."""
    return RealField(f.grid, bessel_values(f.values, f.grid, s))


def sobolev_norm_squared_values(values: np.ndarray, grid: Grid1D, s: float) -> np.ndarray:
    potential = bessel_values(values, grid, s)
    return np.sum(potential ** 2, axis=-1) * grid.dx


def sobolev_norm(f: RealField, s: float) -> float:
    """||f||_{H^s} = ||(I - Delta)^{s/2} f||_{L^2} with the dx quadrature."""
    return float(np.sqrt(sobolev_norm_squared_values(f.values, f.grid, s)))


def h_minus1_inner_values(f: np.ndarray, g: np.ndarray, grid: Grid1D) -> np.ndarray:
    return np.sum(f * bessel_values(g, grid, -2.0), axis=-1) * grid.dx


def h_minus1_inner(f: RealField, g: RealField) -> float:
    """<f, g>_{H^-1} = <f, (I - Delta)^{-1} g>_{L^2}."""
    _check_same_grid(f, g)
    return float(h_minus1_inner_values(f.values, g.values, f.grid))


def mollify_values(values: np.ndarray, grid: Grid1D, mollifier: MollifierSpec) -> np.ndarray:
    kernel_hat = np.fft.rfft(mollifier.kernel(grid)) * grid.dx
    return apply_symbol(values, kernel_hat)


def mollify(f: RealField, mollifier: MollifierSpec) -> RealField:
    """Periodic convolution f * phi_eps."""
    return RealField(f.grid, mollify_values(f.values, f.grid, mollifier))


def derivative_symbol(grid: Grid1D, order: int) -> np.ndarray:
    if order not in (1, 2):
        raise InvalidArgumentError(f"unsupported derivative order {order}")
    symbol = (1j * grid.rwavenumbers) ** order
    if order == 1:
        # odd derivative of the Nyquist mode is not representable on the grid
        symbol[-1] = 0.0
    return symbol


def derivative_values(values: np.ndarray, grid: Grid1D, order: int) -> np.ndarray:
    return apply_symbol(values, derivative_symbol(grid, order))


def derivative(f: RealField, order: int) -> RealField:
    """Spectral derivative of order 1 or 2."""
    return RealField(f.grid, derivative_values(f.values, f.grid, order))


def dealias_values(values: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Two-thirds rule: zero every mode with |m| > n/3."""
    spectrum = np.fft.rfft(values, axis=-1)
    spectrum[..., np.arange(spectrum.shape[-1]) > grid.n_points // 3] = 0.0
    return np.fft.irfft(spectrum, n=grid.n_points, axis=-1)


def l2_norm(f: RealField) -> float:
    return float(np.sqrt(np.sum(f.values ** 2) * f.grid.dx))


def mass(f: RealField) -> float:
    return float(np.sum(f.values) * f.grid.dx)


def sup_norm(f: RealField) -> float:
    """Maximum of |f| over the grid nodes (a discretization of the sup norm)."""
    return float(np.max(np.abs(f.values)))


def boundary_leakage(values: np.ndarray, grid: Grid1D, fraction: float = 0.1) -> float:
    """Max |value| in the outer ``fraction`` of the domain, over every snapshot given."""
    outer = np.abs(grid.nodes) >= (1.0 - fraction) * grid.half_length
    return float(np.max(np.abs(np.asarray(values)[..., outer]), initial=0.0))
