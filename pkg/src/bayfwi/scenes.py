"""Built-in synthetic truth models and acquisition layouts.

Two desk-scale scenes are provided: a continuous velocity field (layered
gradient plus smooth anomalies) and a salt body (high-velocity blob with a
wavy boundary over a gradient background).  Both are deterministic functions
of the configuration, so datasets regenerate bit-identically.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError
from .grids import AcquisitionGeometry, Grid2D, VelocityModel, Wavelet, latent_from_velocity
from .priors import HyperPrior, MaternSpec

SALT_VELOCITY = 4.79


@dataclass
class Scene:
    grid: Grid2D
    truth: VelocityModel
    v_min: float
    v_max: float
    water_velocity: float
    background_latent: Optional[np.ndarray] = None  # salt scene only
    salt_mask: Optional[np.ndarray] = None
    salt_velocity: Optional[float] = None

    def template(self) -> VelocityModel:
        """Model with zero latent field, used as the inversion template."""
        return VelocityModel(self.grid, np.zeros(self.grid.shape), self.v_min,
                             self.v_max, self.water_velocity)


def _cell_coords(grid: Grid2D):
    x0, z0 = grid.origin
    x = x0 + np.arange(grid.nx) * grid.dx
    z = z0 + np.arange(grid.nz) * grid.dz
    return np.meshgrid(x, z)


def continuous_scene(grid: Grid2D, v_min: float = 1.4, v_max: float = 4.2,
                     water_velocity: float = 1.5) -> Scene:
    """Layered gradient with one fast and one slow smooth anomaly."""
    xx, zz = _cell_coords(grid)
    width, depth = grid.extent
    wd = grid.water_depth
    frac = np.clip((zz - wd) / max(depth - wd, 1e-9), 0.0, 1.0)
    v = 1.8 + 2.0 * frac
    bump1 = 0.45 * np.exp(-(((xx - 0.45 * width) / (0.16 * width)) ** 2
                            + ((zz - wd - 0.45 * (depth - wd)) / (0.22 * depth)) ** 2))
    bump2 = -0.35 * np.exp(-(((xx - 0.75 * width) / (0.12 * width)) ** 2
                             + ((zz - wd - 0.7 * (depth - wd)) / (0.18 * depth)) ** 2))
    v = v + bump1 + bump2
    v = np.clip(v, v_min + 0.08, v_max - 0.08)
    v[zz < wd] = water_velocity
    u = latent_from_velocity(v, v_min, v_max)
    truth = VelocityModel(grid, u, v_min, v_max, water_velocity)
    return Scene(grid, truth, v_min, v_max, water_velocity)


def salt_scene(grid: Grid2D, v_min: float = 1.3, v_max: float = 5.5,
               water_velocity: float = 1.5,
               salt_velocity: float = SALT_VELOCITY) -> Scene:
    """High-velocity salt blob with a wavy boundary over a gradient background."""
    if salt_velocity >= v_max:
        raise ConfigurationError("salt velocity must stay below v_max")
    xx, zz = _cell_coords(grid)
    width, depth = grid.extent
    wd = grid.water_depth
    frac = np.clip((zz - wd) / max(depth - wd, 1e-9), 0.0, 1.0)
    v_bg = 1.7 + 1.9 * frac
    v_bg = np.clip(v_bg, v_min + 0.08, v_max - 0.08)
    cx, cz = 0.5 * width, wd + 0.45 * (depth - wd)
    ax, az = 0.24 * width, 0.28 * (depth - wd)
    theta = np.arctan2((zz - cz) / az, (xx - cx) / ax)
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((zz - cz) / az) ** 2)
    mask = r < 1.0 + 0.18 * np.sin(3.0 * theta)
    mask &= zz >= wd
    v = np.where(mask, salt_velocity, v_bg)
    v[zz < wd] = water_velocity
    u = latent_from_velocity(v, v_min, v_max)
    w = latent_from_velocity(np.where(zz < wd, water_velocity, v_bg), v_min, v_max)
    truth = VelocityModel(grid, u, v_min, v_max, water_velocity)
    return Scene(grid, truth, v_min, v_max, water_velocity,
                 background_latent=w, salt_mask=mask, salt_velocity=salt_velocity)


def smoothed_truth_mean(scene: Scene, smoothing_km: float) -> np.ndarray:
    """Prior mean: the true latent field blurred on a configurable width."""
    sig_cells = (smoothing_km / scene.grid.dz, smoothing_km / scene.grid.dx)
    return gaussian_filter(scene.truth.u, sigma=sig_cells, mode="nearest")


def line_geometry(grid: Grid2D, n_sources: int, n_receivers: int,
                  source_depth: float, receiver_depth: float,
                  t_max: float, dt: float, peak_frequency: float) -> AcquisitionGeometry:
    """Evenly spread surface-line acquisition with a shared wavelet."""
    x0, _ = grid.origin
    width = grid.nx * grid.dx
    margin = 0.06 * width
    sx = np.linspace(x0 + margin, x0 + width - margin, n_sources)
    rx = np.linspace(x0 + margin, x0 + width - margin, n_receivers)
    return AcquisitionGeometry(
        sources=[(float(x), source_depth) for x in sx],
        receivers=[(float(x), receiver_depth) for x in rx],
        t_max=t_max,
        dt=dt,
        wavelets=Wavelet(peak_frequency),
    )


def default_salt_hyper() -> HyperPrior:
    """Wide Gaussian prior on the latent interior (salt) coordinate."""
    return HyperPrior(mean=3.0, sd=4.0)


def levelset_underlying_spec(grid: Grid2D, sigma: float = 10.0, nu: float = 2.0,
                             ell_domain: float = 0.25) -> MaternSpec:
    """Field under the threshold; length scale given as a domain-width fraction."""
    width = grid.nx * grid.dx
    return MaternSpec(sigma=sigma, nu=nu, ell=ell_domain * width)
