"""Per-trace signal mathematics.

Traces live on a uniform time grid of ``nt`` samples treated as cell midpoints
of (0, nt*dt); integrals are plain Riemann sums.  The 1D quadratic Wasserstein
distance treats a density trace as an atomic measure (weight sample*dt at each
sample time) and is computed exactly through the merged-quantile walk, with
ties resolved by the right-continuous generalized inverse.  Both Sobolev norms
invert the same discrete zero-flux Laplacian, so the weighted norm with a
uniform weight reproduces the unweighted norm exactly.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from scipy.fft import dct, idct
from scipy.linalg import solve_banded

from .errors import (BoundsError, DomainError, InputError, PreconditionError,
                     ShapeError, DegenerateDensityWarning)

DENSITY_FLOOR = 1e-12


@dataclass
class Trace:
    """Signed signal samples on a uniform time grid."""

    samples: np.ndarray
    dt: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError("trace samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("trace contains non-finite samples")

    @property
    def nt(self) -> int:
        return self.samples.size

    @property
    def t_span(self) -> float:
        return self.nt * self.dt

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.nt) + 0.5) * self.dt


@dataclass
class DensityTrace:
    """Strictly positive probability density on the trace time grid.

    ``lower``/``upper`` certify pointwise bounds of the stored density and
    ``floored`` records whether the positivity floor was applied.
    """

    samples: np.ndarray
    dt: float
    lower: float
    upper: float
    floored: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        total = self.samples.sum() * self.dt
        if abs(total - 1.0) > 1e-10:
            raise DomainError(f"density integrates to {total!r}, expected 1")
        if self.samples.min() <= 0:
            raise DomainError("density must be strictly positive")

    @property
    def nt(self) -> int:
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.nt) + 0.5) * self.dt

    @classmethod
    def from_samples(cls, samples, dt, renormalize=False) -> "DensityTrace":
        samples = np.asarray(samples, dtype=np.float64)
        if renormalize:
            samples = samples / (samples.sum() * dt)
        return cls(samples, dt, float(samples.min()), float(samples.max()))


@dataclass(frozen=True)
class NormalizerSpec:
    """Choice of the positive map sigma used to turn traces into densities."""

    kind: str = "square_plus_delta"
    delta: float = 0.1
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("square_plus_delta", "exponential", "softplus"):
            raise DomainError(f"unknown normalizer kind {self.kind!r}")
        if self.kind == "square_plus_delta" and self.delta <= 0:
            raise DomainError("square_plus_delta requires delta > 0")
        if self.kind in ("exponential", "softplus") and self.scale <= 0:
            raise DomainError("scale must be positive")

    def sigma(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "square_plus_delta":
            return z * z + self.delta
        if self.kind == "exponential":
            return np.exp(z / self.scale)
        return self.scale * np.logaddexp(0.0, z / self.scale)

    def sigma_prime(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.kind == "square_plus_delta":
            return 2.0 * z
        if self.kind == "exponential":
            return np.exp(z / self.scale) / self.scale
        return 1.0 / (1.0 + np.exp(-z / self.scale))


def normalize_positive(values: np.ndarray, dt: float):
    """Scale positive values to integrate to one, flooring degenerate cells.

    Returns (density_samples, floored). Shared by p_sigma and the seismogram
    level normalization in the potentials.
    """
    values = np.asarray(values, dtype=np.float64)
    dens = values / (values.sum() * dt)
    floored = False
    if dens.min() <= DENSITY_FLOOR:
        warnings.warn("density hit positivity floor; renormalizing",
                      DegenerateDensityWarning, stacklevel=2)
        dens = np.maximum(dens, DENSITY_FLOOR)
        dens = dens / (dens.sum() * dt)
        floored = True
    return dens, floored


def p_sigma(t: Trace, spec: NormalizerSpec) -> DensityTrace:
    """Normalize a signed trace into a probability density via sigma."""
    if not np.all(np.isfinite(t.samples)):
        raise InputError("non-finite trace")
    vals = spec.sigma(t.samples)
    dens, floored = normalize_positive(vals, t.dt)
    return DensityTrace(dens, t.dt, float(dens.min()), float(dens.max()), floored)


# ---------------------------------------------------------------------------
# 1D quadratic Wasserstein distance (exact, atomic)
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _ot1d_walk(p, q, pos, phi, want_duals):
    """Merged-quantile walk over two atomic measures on common positions.

    Returns the squared distance; fills `phi` with a dual potential for the
    first marginal when requested (subgradient of the cost in p).
    """
    n = p.shape[0]
    i = 0
    j = 0
    cp = p[0]
    cq = q[0]
    last = 0.0
    cost = 0.0
    psi_j = 0.0
    if want_duals:
        phi[0] = 0.0
        psi_j = (pos[0] - pos[0]) ** 2 - phi[0]
    while i < n - 1 or j < n - 1:
        d = pos[i] - pos[j]
        if (cp < cq and i < n - 1) or j == n - 1:
            seg = cp - last
            if seg > 0.0:
                cost += seg * d * d
            last = cp
            i += 1
            if want_duals:
                dd = pos[i] - pos[j]
                phi[i] = dd * dd - psi_j
            cp += p[i]
        elif (cq < cp and j < n - 1) or i == n - 1:
            seg = cq - last
            if seg > 0.0:
                cost += seg * d * d
            last = cq
            j += 1
            if want_duals:
                dd = pos[i] - pos[j]
                psi_j = dd * dd - phi[i]
            cq += q[j]
        else:
            # simultaneous exhaustion: advance the source chain first
            seg = cp - last
            if seg > 0.0:
                cost += seg * d * d
            last = cp
            i += 1
            if want_duals:
                dd = pos[i] - pos[j]
                phi[i] = dd * dd - psi_j
            cp += p[i]
            j += 1
            if want_duals:
                dd = pos[i] - pos[j]
                psi_j = dd * dd - phi[i]
            cq += q[j]
    return cost


def _check_density_pair(f: DensityTrace, g: DensityTrace):
    if f.nt != g.nt or abs(f.dt - g.dt) > 1e-15 * max(f.dt, g.dt):
        raise ShapeError("densities must share the same time grid")


def w2_1d(f: DensityTrace, g: DensityTrace) -> float:
    """Quadratic Wasserstein distance between two densities on one time grid."""
    _check_density_pair(f, g)
    p = f.samples * f.dt
    q = g.samples * g.dt
    pos = f.times
    cost = _ot1d_walk(p, q, pos, np.empty(0), False)
    return float(np.sqrt(max(cost, 0.0)))


def w2_1d_sq_with_dual(f: DensityTrace, g: DensityTrace):
    """Squared distance plus a dual potential: the derivative of W2^2 with
    respect to the atomic weights of ``f`` (up to an additive constant)."""
    _check_density_pair(f, g)
    p = f.samples * f.dt
    q = g.samples * g.dt
    pos = f.times
    phi = np.zeros(f.nt)
    cost = _ot1d_walk(p, q, pos, phi, True)
    return float(max(cost, 0.0)), phi


# ---------------------------------------------------------------------------
# Negative Sobolev seminorm (zero-flux cosine basis)
# ---------------------------------------------------------------------------

def _neumann_eigenvalues(nt: int, dt: float) -> np.ndarray:
    """Eigenvalues of the discrete zero-flux Laplacian for modes k=0..nt-1."""
    k = np.arange(nt)
    return (2.0 / dt * np.sin(0.5 * np.pi * k / nt)) ** 2


def _require_zero_mean(samples: np.ndarray, what: str, rtol: float = 1e-8):
    scale = np.max(np.abs(samples))
    if scale == 0.0:
        return
    if abs(samples.mean()) > rtol * scale:
        raise PreconditionError(
            f"{what} must have zero time mean (apply remove_zero_frequency first)")


def hm1_apply_inverse(arr: np.ndarray, dt: float) -> np.ndarray:
    """Apply the inverse zero-flux Laplacian along the last axis (mean part
    mapped to zero)."""
    nt = arr.shape[-1]
    lam = _neumann_eigenvalues(nt, dt)
    coeff = dct(arr, type=2, axis=-1)
    coeff[..., 0] = 0.0
    coeff[..., 1:] = coeff[..., 1:] / lam[1:]
    return idct(coeff, type=2, axis=-1)


def hm1_norm_sq(arr: np.ndarray, dt: float) -> np.ndarray:
    """Squared negative-Sobolev seminorm along the last axis (vectorized)."""
    nt = arr.shape[-1]
    lam = _neumann_eigenvalues(nt, dt)
    a = dct(arr, type=2, axis=-1) / nt
    t_span = nt * dt
    return 0.5 * t_span * np.sum(a[..., 1:] ** 2 / lam[1:], axis=-1)


def hminus1_norm(h: Trace) -> float:
    """Negative-Sobolev seminorm of a mean-zero trace."""
    _require_zero_mean(h.samples, "trace")
    return float(np.sqrt(hm1_norm_sq(h.samples, h.dt)))


def weighted_laplacian_solve(h: np.ndarray, f: np.ndarray, dt: float) -> np.ndarray:
    """Solve -(f phi')' = h*f with zero flux and f-weighted mean-zero phi."""
    n = h.size
    fe = 0.5 * (f[1:] + f[:-1]) / dt**2
    ab = np.zeros((3, n))
    ab[0, 1:] = -fe          # superdiagonal
    ab[2, :-1] = -fe         # subdiagonal
    ab[1, :-1] += fe
    ab[1, 1:] += fe
    rhs = h * f
    # pin the first node to lift the constant nullspace, then recenter
    ab[1, 0] = 1.0
    ab[0, 1] = 0.0
    rhs = rhs.copy()
    rhs[0] = 0.0
    phi = solve_banded((1, 1), ab, rhs)
    phi -= np.sum(phi * f) / np.sum(f)
    return phi


def weighted_hminus1_norm(h: Trace, f: DensityTrace) -> float:
    """f-weighted negative-Sobolev norm of an f-mean-zero trace."""
    if h.nt != f.nt or abs(h.dt - f.dt) > 1e-15 * max(h.dt, f.dt):
        raise ShapeError("trace and weight must share the same time grid")
    if f.lower <= 0:
        raise BoundsError("weight density must be bounded away from zero")
    wmean = np.sum(h.samples * f.samples) * f.dt
    scale = np.sum(np.abs(h.samples) * f.samples) * f.dt
    if scale > 0 and abs(wmean) > 1e-8 * scale:
        raise PreconditionError("trace must have zero f-weighted mean")
    phi = weighted_laplacian_solve(h.samples, f.samples, f.dt)
    val = np.sum(h.samples * phi * f.samples) * f.dt
    return float(np.sqrt(max(val, 0.0)))


# ---------------------------------------------------------------------------
# Structural checks used by the test suites
# ---------------------------------------------------------------------------

def check_linearization(f: DensityTrace, h: Trace, eps_list):
    """Ratios W2(f,(1+eps*h)f)^2/eps^2 together with their small-eps target."""
    ratios = {}
    for eps in eps_list:
        pert = (1.0 + eps * h.samples) * f.samples
        if pert.min() <= 0:
            raise DomainError(f"(1 + {eps}*h)*f is not strictly positive")
        g = DensityTrace.from_samples(pert, f.dt, renormalize=True)
        ratios[eps] = w2_1d(f, g) ** 2 / eps**2
    target = weighted_hminus1_norm(h, f) ** 2
    return ratios, target


def check_equivalence_bounds(f: DensityTrace, g: DensityTrace):
    """Sandwich the distance between scaled unweighted Sobolev seminorms.

    Returns (lower, w2, upper) where the bounds use the shared certificate
    a <= f,g <= b: lower = ||f-g||/sqrt(b), upper = ||f-g||/sqrt(a).
    """
    _check_density_pair(f, g)
    a = min(f.lower, g.lower)
    b = max(f.upper, g.upper)
    diff = Trace(f.samples - g.samples, f.dt)
    nrm = float(np.sqrt(hm1_norm_sq(diff.samples, diff.dt)))
    return nrm / np.sqrt(b), w2_1d(f, g), nrm / np.sqrt(a)
