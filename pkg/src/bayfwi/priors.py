"""Function-space priors: stationary Gaussian fields and level-set transforms.

Gaussian fields use the spectral route: the covariance is the inverse of a
fractional Helmholtz power, so its square root acts as a real Fourier
multiplier on a padded grid.  Padding (factor two of the domain or four
length-scales, whichever is larger) pushes the periodization error below the
sampling noise of the tests.  The multiplier is strictly positive, so
whitening is the exact inverse and proposals in whitened coordinates see an
identity prior covariance.
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.fft import irfft2, next_fast_len, rfft2

from .errors import ConfigurationError, PreconditionError, ShapeError
from .grids import Grid2D


@dataclass(frozen=True)
class MaternSpec:
    """Amplitude, regularity and length-scale (km) of a stationary field."""

    sigma: float
    nu: float
    ell: float
    mean: Union[float, np.ndarray] = 0.0

    def __post_init__(self):
        if self.sigma < 0 or self.nu <= 0 or self.ell <= 0:
            raise ConfigurationError("need sigma >= 0, nu > 0, ell > 0")


@dataclass(frozen=True)
class HyperPrior:
    """Scalar Gaussian prior for an uncertain level-set interior value."""

    mean: float
    sd: float

    def __post_init__(self):
        if self.sd <= 0:
            raise ConfigurationError("hyper prior sd must be positive")


@dataclass(frozen=True)
class LevelSetSpec:
    """Thresholded-Gaussian prior configuration.

    In plain mode the output takes the two values (u_plus, u_minus); in mixed
    mode the region {v <= 0} carries a field instead of a constant, and u_plus
    may be a HyperPrior to make the interior value a latent variable.
    """

    underlying: MaternSpec
    mode: str = "plain"
    u_plus: Union[float, HyperPrior] = 1.0
    u_minus: Union[float, MaternSpec, None] = -1.0
    smoothing_width: float = 0.0

    def __post_init__(self):
        if self.mode not in ("plain", "mixed"):
            raise ConfigurationError("level-set mode must be 'plain' or 'mixed'")
        if self.smoothing_width < 0:
            raise ConfigurationError("smoothing width must be nonnegative")


def smoothed_indicator(v: np.ndarray, width: float) -> np.ndarray:
    """Indicator of {v > 0}, optionally mollified to a tanh profile."""
    if width == 0.0:
        return (v > 0).astype(np.float64)
    return 0.5 * (1.0 + np.tanh(v / width))


def smoothed_indicator_derivative(v: np.ndarray, width: float) -> np.ndarray:
    if width == 0.0:
        raise PreconditionError("indicator derivative needs smoothing_width > 0")
    t = np.tanh(v / width)
    return 0.5 * (1.0 - t * t) / width


def apply_levelset(spec: LevelSetSpec, v: np.ndarray, w: Optional[np.ndarray] = None,
                   salt_value: Optional[float] = None) -> np.ndarray:
    """Push a level-set field (and optional background) through the threshold."""
    chi = smoothed_indicator(v, spec.smoothing_width)
    if spec.mode == "plain":
        hi = salt_value if salt_value is not None else float(spec.u_plus)
        return hi * chi + float(spec.u_minus) * (1.0 - chi)
    if w is None:
        raise PreconditionError("mixed level-set needs a background field w")
    if w.shape != v.shape:
        raise ShapeError("level-set and background fields must share a grid")
    hi = salt_value
    if hi is None:
        if isinstance(spec.u_plus, HyperPrior):
            raise PreconditionError("hierarchical interior value requires salt_value")
        hi = float(spec.u_plus)
    return hi * chi + w * (1.0 - chi)


class MaternPrior:
    """Stationary Gaussian field on a grid, sampled and whitened spectrally."""

    def __init__(self, spec: MaternSpec, grid: Grid2D):
        self.spec = spec
        self.grid = grid
        pad_z = max(grid.nz, math.ceil(4.0 * spec.ell / grid.dz))
        pad_x = max(grid.nx, math.ceil(4.0 * spec.ell / grid.dx))
        self.pz = next_fast_len(grid.nz + pad_z, real=True)
        self.px = next_fast_len(grid.nx + pad_x, real=True)
        kx = 2.0 * np.pi * np.fft.rfftfreq(self.px, grid.dx)
        kz = 2.0 * np.pi * np.fft.fftfreq(self.pz, grid.dz)
        k2 = kz[:, None] ** 2 + kx[None, :] ** 2
        # spectral density of the d=2 field with unit variance at the origin
        dens = 4.0 * np.pi * spec.nu * spec.ell**2 \
            * (1.0 + spec.ell**2 * k2) ** (-(spec.nu + 1.0))
        self.multiplier = spec.sigma * np.sqrt(dens / (grid.dx * grid.dz))
        kzf = 2.0 * np.pi * np.fft.fftfreq(self.pz, grid.dz)
        kxf = 2.0 * np.pi * np.fft.fftfreq(self.px, grid.dx)
        k2f = kzf[:, None] ** 2 + kxf[None, :] ** 2
        densf = 4.0 * np.pi * spec.nu * spec.ell**2 \
            * (1.0 + spec.ell**2 * k2f) ** (-(spec.nu + 1.0))
        self.pointwise_variance = float(
            spec.sigma**2 * densf.sum() / (self.pz * self.px * grid.dx * grid.dz))
        self._mean = np.broadcast_to(
            np.asarray(spec.mean, dtype=np.float64), grid.shape).copy()

    # -- core transforms ------------------------------------------------------

    @property
    def padded_shape(self):
        return (self.pz, self.px)

    @property
    def dim(self) -> int:
        return self.pz * self.px

    def cov_root(self, w_pad: np.ndarray) -> np.ndarray:
        """Self-adjoint square root of the padded covariance."""
        return irfft2(rfft2(w_pad) * self.multiplier, s=self.padded_shape)

    def cov_root_inv(self, f_pad: np.ndarray) -> np.ndarray:
        if self.spec.sigma == 0.0:
            raise PreconditionError("cannot whiten a degenerate (sigma=0) prior")
        return irfft2(rfft2(f_pad) / self.multiplier, s=self.padded_shape)

    def restrict(self, f_pad: np.ndarray) -> np.ndarray:
        return f_pad[: self.grid.nz, : self.grid.nx]

    def embed(self, f_int: np.ndarray) -> np.ndarray:
        out = np.zeros(self.padded_shape)
        out[: self.grid.nz, : self.grid.nx] = f_int
        return out

    def embed_edge(self, f_int: np.ndarray) -> np.ndarray:
        """Extend an interior field into the padding by edge replication."""
        return np.pad(f_int, ((0, self.pz - self.grid.nz), (0, self.px - self.grid.nx)),
                      mode="edge")

    # -- sampling and whitening ------------------------------------------------

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One interior draw including the mean."""
        w = rng.standard_normal(self.padded_shape)
        return self._mean + self.restrict(self.cov_root(w))

    def sample_whitened(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)

    def unwhiten(self, xi: np.ndarray) -> np.ndarray:
        """Whitened coordinates -> padded zero-mean field."""
        if self.spec.sigma == 0.0:
            return np.zeros(self.padded_shape)
        return self.cov_root(np.asarray(xi, dtype=np.float64).reshape(self.padded_shape))

    def whiten(self, f_pad: np.ndarray) -> np.ndarray:
        """Padded zero-mean field -> whitened coordinates (exact inverse)."""
        return self.cov_root_inv(f_pad).ravel()

    def interior_field(self, xi: np.ndarray) -> np.ndarray:
        return self._mean + self.restrict(self.unwhiten(xi))

    def lift_gradient(self, g_int: np.ndarray) -> np.ndarray:
        """Adjoint of interior_field's linear part: interior -> whitened."""
        return self.cov_root(self.embed(g_int)).ravel()

    def mean_field(self) -> np.ndarray:
        return self._mean.copy()

    def dense_interior_cov(self) -> np.ndarray:
        """Dense covariance among interior cells (periodized kernel lookup)."""
        delta = np.zeros(self.padded_shape)
        delta[0, 0] = 1.0
        kern = self.cov_root(self.cov_root(delta))
        nz, nx = self.grid.shape
        iz = np.repeat(np.arange(nz), nx)
        ix = np.tile(np.arange(nx), nz)
        dz = (iz[:, None] - iz[None, :]) % self.pz
        dxm = (ix[:, None] - ix[None, :]) % self.px
        return kern[dz, dxm]


class GaussianPriorModel:
    """Plain Gaussian latent field, exposed through whitened coordinates."""

    kind = "gaussian"

    def __init__(self, prior: MaternPrior):
        self.prior = prior
        self.dim = prior.dim

    def latent_field(self, xi: np.ndarray) -> np.ndarray:
        return self.prior.interior_field(xi)

    def jvp(self, xi: np.ndarray, dxi: np.ndarray) -> np.ndarray:
        return self.prior.restrict(self.prior.unwhiten(dxi))

    def vjp(self, xi: np.ndarray, g_int: np.ndarray) -> np.ndarray:
        return self.prior.lift_gradient(g_int)

    def sample_whitened(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)

    def describe(self) -> dict:
        s = self.prior.spec
        return {"kind": self.kind, "sigma": s.sigma, "nu": s.nu, "ell": s.ell}


class MixedLevelSetPriorModel:
    """Level-set field plus a latent interior value over a fixed background.

    Whitened coordinates are [field coordinates..., interior-value coordinate];
    the interior-value coordinate is (value - mean)/sd under its hyper prior.
    """

    kind = "mixed_level_set"

    def __init__(self, vprior: MaternPrior, hyper: HyperPrior,
                 background: np.ndarray, smoothing_width: float):
        if smoothing_width <= 0:
            raise PreconditionError("chain gradients need smoothing_width > 0")
        self.vprior = vprior
        self.hyper = hyper
        self.background = np.asarray(background, dtype=np.float64)
        if self.background.shape != vprior.grid.shape:
            raise ShapeError("background must live on the interior grid")
        self.width = smoothing_width
        self.dim = vprior.dim + 1

    def split(self, xi: np.ndarray):
        return xi[:-1], float(xi[-1])

    def interior_value(self, xi: np.ndarray) -> float:
        return self.hyper.mean + self.hyper.sd * float(xi[-1])

    def levelset_field(self, xi: np.ndarray) -> np.ndarray:
        xi_v, _ = self.split(xi)
        return self.vprior.interior_field(xi_v)

    def latent_field(self, xi: np.ndarray) -> np.ndarray:
        v = self.levelset_field(xi)
        chi = smoothed_indicator(v, self.width)
        return self.interior_value(xi) * chi + self.background * (1.0 - chi)

    def jvp(self, xi: np.ndarray, dxi: np.ndarray) -> np.ndarray:
        v = self.levelset_field(xi)
        chi = smoothed_indicator(v, self.width)
        dchi = smoothed_indicator_derivative(v, self.width)
        dv = self.vprior.restrict(self.vprior.unwhiten(dxi[:-1]))
        dval = self.hyper.sd * float(dxi[-1])
        return dchi * (self.interior_value(xi) - self.background) * dv + chi * dval

    def vjp(self, xi: np.ndarray, g_int: np.ndarray) -> np.ndarray:
        v = self.levelset_field(xi)
        chi = smoothed_indicator(v, self.width)
        dchi = smoothed_indicator_derivative(v, self.width)
        gv = self.vprior.lift_gradient(dchi * (self.interior_value(xi) - self.background) * g_int)
        gs = self.hyper.sd * float(np.sum(chi * g_int))
        return np.concatenate([gv, [gs]])

    def sample_whitened(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim)

    def describe(self) -> dict:
        s = self.vprior.spec
        return {"kind": self.kind, "sigma": s.sigma, "nu": s.nu, "ell": s.ell,
                "interior_value_mean": self.hyper.mean, "interior_value_sd": self.hyper.sd,
                "smoothing_width": self.width}


class DenseGaussianPrior:
    """Small dense Gaussian prior for surrogate problems and tests."""

    kind = "dense"

    def __init__(self, mean: np.ndarray, cov_root: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.root = np.asarray(cov_root, dtype=np.float64)
        self.dim = self.mean.size

    def latent_field(self, xi: np.ndarray) -> np.ndarray:
        return self.mean + self.root @ xi

    def jvp(self, xi, dxi):
        return self.root @ dxi

    def vjp(self, xi, g):
        return self.root.T @ g

    def sample_whitened(self, rng):
        return rng.standard_normal(self.dim)

    def describe(self):
        return {"kind": self.kind, "dim": self.dim}
