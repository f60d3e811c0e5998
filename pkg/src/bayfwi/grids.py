"""Computational grid, velocity-model parameterization, acquisition geometry.

Fields are stored as (nz, nx) float64 arrays with z increasing downward.
All lengths are in km, times in s, velocities in km/s; the inverted model
parameter is the squared slowness m = 1/v^2 in s^2/km^2.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, GeometryError, ShapeError


@dataclass(frozen=True)
class Grid2D:
    """Regular 2D grid. ``water_depth`` marks the fixed (non-inverted) top layer."""

    nx: int
    nz: int
    dx: float
    dz: float
    origin: tuple = (0.0, 0.0)
    water_depth: float = 0.0

    def __post_init__(self):
        if self.nx < 8 or self.nz < 8:
            raise ConfigurationError(f"grid must be at least 8x8, got {self.nx}x{self.nz}")
        if self.dx <= 0 or self.dz <= 0:
            raise ConfigurationError("grid spacings must be positive")

    @property
    def shape(self):
        return (self.nz, self.nx)

    @property
    def extent(self):
        """(width, depth) in km."""
        return (self.nx * self.dx, self.nz * self.dz)

    @property
    def n_water_rows(self) -> int:
        """Number of top rows whose cell depth lies above the water bottom."""
        z0 = self.origin[1]
        return int(np.sum(z0 + np.arange(self.nz) * self.dz < self.water_depth - 1e-12))

    def water_mask(self) -> np.ndarray:
        """Boolean (nz, nx) mask, True on fixed water cells."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[: self.n_water_rows, :] = True
        return mask

    def index_of(self, x: float, z: float) -> tuple:
        """Nearest grid node for a position in km; raises if outside the grid."""
        x0, z0 = self.origin
        i = int(round((x - x0) / self.dx))
        j = int(round((z - z0) / self.dz))
        if not (0 <= i < self.nx and 0 <= j < self.nz):
            raise GeometryError(f"position ({x}, {z}) km falls outside the grid")
        return (j, i)


def slowness_bounds(v_min: float, v_max: float) -> tuple:
    """Coefficients (a_minus, a_plus) of the squashing map into (v_max^-2, v_min^-2)."""
    a_plus = 0.5 * (v_min**-2 + v_max**-2)
    a_minus = 0.5 * (v_min**-2 - v_max**-2)
    return a_minus, a_plus


@dataclass
class VelocityModel:
    """Latent field ``u`` plus the bounded transform to squared slowness.

    m(x) = a_minus*tanh(u(x)) + a_plus stays inside (v_max^-2, v_min^-2), so the
    implied velocity 1/sqrt(m) stays inside (v_min, v_max).  Cells above the
    water bottom are pinned to the water slowness and carry no sensitivity.
    """

    grid: Grid2D
    u: np.ndarray
    v_min: float
    v_max: float
    water_velocity: float = 1.5

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise ConfigurationError("require v_min < v_max")
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.shape != self.grid.shape:
            raise ShapeError(f"latent field shape {self.u.shape} != grid {self.grid.shape}")

    def squared_slowness(self) -> np.ndarray:
        a_minus, a_plus = slowness_bounds(self.v_min, self.v_max)
        m = a_minus * np.tanh(self.u) + a_plus
        nw = self.grid.n_water_rows
        if nw > 0:
            m[:nw, :] = 1.0 / self.water_velocity**2
        return m

    def slowness_jacobian(self) -> np.ndarray:
        """dm/du, zero on water rows."""
        a_minus, _ = slowness_bounds(self.v_min, self.v_max)
        j = a_minus * (1.0 - np.tanh(self.u) ** 2)
        nw = self.grid.n_water_rows
        if nw > 0:
            j[:nw, :] = 0.0
        return j

    def velocity(self) -> np.ndarray:
        return 1.0 / np.sqrt(self.squared_slowness())

    def with_u(self, u: np.ndarray) -> "VelocityModel":
        return VelocityModel(self.grid, u, self.v_min, self.v_max, self.water_velocity)


def latent_from_velocity(v: np.ndarray, v_min: float, v_max: float) -> np.ndarray:
    """Invert the squashing map, clipping just inside the open range."""
    a_minus, a_plus = slowness_bounds(v_min, v_max)
    m = 1.0 / np.asarray(v, dtype=np.float64) ** 2
    r = np.clip((m - a_plus) / a_minus, -1.0 + 1e-12, 1.0 - 1e-12)
    return np.arctanh(r)


@dataclass(frozen=True)
class Wavelet:
    """Ricker source wavelet: peak frequency in Hz, delay of the peak in s."""

    peak_frequency: float
    delay: Optional[float] = None

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t0 = self.delay if self.delay is not None else 1.2 / self.peak_frequency
        a = (np.pi * self.peak_frequency * (t - t0)) ** 2
        return (1.0 - 2.0 * a) * np.exp(-a)


@dataclass
class AcquisitionGeometry:
    """Sources, receivers and the recording window.

    ``sources`` is a list of (x, z) km positions; ``wavelets`` maps each source
    index to its wavelet (a single Wavelet is broadcast to all sources).
    """

    sources: list
    receivers: list
    t_max: float
    dt: float
    wavelets: object = field(default_factory=lambda: Wavelet(5.0))

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ConfigurationError("need at least one source")
        if len(self.receivers) < 1:
            raise ConfigurationError("need at least one receiver")
        if self.dt <= 0 or self.t_max <= self.dt:
            raise ConfigurationError("need 0 < dt < t_max")

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def nt(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.dt

    def wavelet_for(self, isrc: int) -> Wavelet:
        if isinstance(self.wavelets, Wavelet):
            return self.wavelets
        return self.wavelets[isrc]

    def validate_against(self, grid: Grid2D, v_max: float) -> None:
        """Check positions lie on the grid and dt respects the stability bound."""
        for (x, z) in list(self.sources) + list(self.receivers):
            grid.index_of(x, z)
        limit = cfl_limit(grid, v_max)
        if self.dt > limit:
            raise ConfigurationError(
                f"dt={self.dt:g} s violates the stability bound {limit:g} s "
                f"(0.9*min(dx,dz)/(sqrt(2)*v_max))"
            )


def cfl_limit(grid: Grid2D, v_max: float) -> float:
    return 0.9 * min(grid.dx, grid.dz) / (np.sqrt(2.0) * v_max)


@dataclass
class Seismogram:
    """Receiver traces per source: data[n_sources, n_receivers, nt]."""

    data: np.ndarray
    dt: float
    zero_mean: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError("seismogram data must be [n_sources, n_receivers, nt]")

    @property
    def nt(self) -> int:
        return self.data.shape[2]

    @property
    def t_span(self) -> float:
        return self.nt * self.dt

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ShapeError("seismogram contains non-finite entries")

    def copy(self) -> "Seismogram":
        return Seismogram(self.data.copy(), self.dt, self.zero_mean)


def remove_zero_frequency(s: Seismogram) -> Seismogram:
    """Subtract the per-trace time mean; idempotent."""
    out = s.data - s.data.mean(axis=2, keepdims=True)
    return Seismogram(out, s.dt, zero_mean=True)
