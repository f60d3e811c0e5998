"""Acoustic wave propagation: forward, linearized (Born) and adjoint solves.

The scheme is leapfrog in time (2nd order) with a 4th-order centered Laplacian
and sponge damping layers.  The update solved each step is

    m*(v_tt + 2*g*v_t + g^2*v) - Lap(v) = s,      g >= 0 inside the sponge,

discretized so the whole propagator is an explicit linear recursion; the
adjoint kernel is its exact transpose, which makes misfit gradients match
finite differences of the discrete objective to roundoff-limited accuracy.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import numba

from .errors import ShapeError
from .grids import AcquisitionGeometry, Grid2D, Seismogram, VelocityModel

GHOST = 2  # stencil half-width; ghost cells stay identically zero (Dirichlet)

_C0 = -2.5
_C1 = 4.0 / 3.0
_C2 = -1.0 / 12.0


@dataclass(frozen=True)
class SolverOptions:
    """Discretization knobs for the wave solver.

    ``history_stride`` > 1 stores the adjoint correlation history on a coarser
    time grid and interpolates linearly, trading gradient exactness for memory.
    ``threads`` > 1 runs independent per-source solves on a worker pool; the
    reduction order is fixed, so results are identical for any thread count.
    """

    sponge_width: int = 20
    top_boundary: str = "absorbing"  # "absorbing" | "free"
    gamma_scale: float = 8.0
    history_stride: int = 1
    store_wavefield: bool = False
    threads: int = 1


def _run_per_source(n_sources: int, threads: int, work):
    """Execute work(s) for each source, in parallel when requested."""
    if threads <= 1 or n_sources <= 1:
        return [work(s) for s in range(n_sources)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=min(threads, n_sources)) as pool:
        return list(pool.map(work, range(n_sources)))


@dataclass
class ForwardHistory:
    """Per-source propagation state kept for adjoint/Born reuse."""

    pad_top: int
    pad_side: int
    m_pad: np.ndarray
    inv_md0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    wx: float
    wz: float
    hist: List[np.ndarray] = field(default_factory=list)
    hist_lo: Optional[np.ndarray] = None
    hist_frac: Optional[np.ndarray] = None
    src_idx: List[tuple] = field(default_factory=list)
    rec_idx: Optional[np.ndarray] = None
    wavefields: Optional[List[np.ndarray]] = None
    threads: int = 1

    def interior(self, arr_pad: np.ndarray, grid: Grid2D) -> np.ndarray:
        t, s = self.pad_top, self.pad_side
        return arr_pad[t : t + grid.nz, s : s + grid.nx]


@numba.njit(cache=True, nogil=True)
def _apply_lap(v, out, wx, wz):
    nz, nx = v.shape
    for i in range(GHOST, nz - GHOST):
        for j in range(GHOST, nx - GHOST):
            out[i, j] = (
                _C0 * (wx + wz) * v[i, j]
                + wx * (_C1 * (v[i, j - 1] + v[i, j + 1]) + _C2 * (v[i, j - 2] + v[i, j + 2]))
                + wz * (_C1 * (v[i - 1, j] + v[i + 1, j]) + _C2 * (v[i - 2, j] + v[i + 2, j]))
            )


@numba.njit(cache=True, nogil=True)
def _forward_kernel(a1, a2, inv_md0, wx, wz, src_vals, sz, sx, rec_z, rec_x,
                    traces, hist, hist_lo, hist_frac, vfields, store_v):
    nz, nx = a1.shape
    nt = traces.shape[1]
    vprev = np.zeros((nz, nx))
    vcur = np.zeros((nz, nx))
    lap = np.zeros((nz, nx))
    for r in range(rec_z.shape[0]):
        traces[r, 0] = 0.0
    if store_v:
        vfields[0] = vcur
    for n in range(nt - 1):
        _apply_lap(vcur, lap, wx, wz)
        lap[sz, sx] += src_vals[n]
        vnew = np.empty((nz, nx))
        for i in range(GHOST, nz - GHOST):
            for j in range(GHOST, nx - GHOST):
                w = inv_md0[i, j] * lap[i, j]
                vnew[i, j] = a1[i, j] * vcur[i, j] - a2[i, j] * vprev[i, j] + w
                if hist_frac[n] == 0.0:
                    hist[hist_lo[n], i, j] = w
        for i in range(GHOST):
            for j in range(nx):
                vnew[i, j] = 0.0
                vnew[nz - 1 - i, j] = 0.0
        for i in range(nz):
            for j in range(GHOST):
                vnew[i, j] = 0.0
                vnew[i, nx - 1 - j] = 0.0
        vprev, vcur = vcur, vnew
        for r in range(rec_z.shape[0]):
            traces[r, n + 1] = vcur[rec_z[r], rec_x[r]]
        if store_v:
            vfields[n + 1] = vcur


@numba.njit(cache=True, nogil=True)
def _born_kernel(a1, a2, inv_md0, wx, wz, scatter, rec_z, rec_x,
                 traces, hist, hist_lo, hist_frac):
    nz, nx = a1.shape
    nt = traces.shape[1]
    vprev = np.zeros((nz, nx))
    vcur = np.zeros((nz, nx))
    lap = np.zeros((nz, nx))
    for r in range(rec_z.shape[0]):
        traces[r, 0] = 0.0
    for n in range(nt - 1):
        _apply_lap(vcur, lap, wx, wz)
        lo = hist_lo[n]
        fr = hist_frac[n]
        vnew = np.zeros((nz, nx))
        for i in range(GHOST, nz - GHOST):
            for j in range(GHOST, nx - GHOST):
                wbase = hist[lo, i, j]
                if fr > 0.0:
                    wbase = (1.0 - fr) * wbase + fr * hist[lo + 1, i, j]
                w = inv_md0[i, j] * lap[i, j] + scatter[i, j] * wbase
                vnew[i, j] = a1[i, j] * vcur[i, j] - a2[i, j] * vprev[i, j] + w
        vprev, vcur = vcur, vnew
        for r in range(rec_z.shape[0]):
            traces[r, n + 1] = vcur[rec_z[r], rec_x[r]]


@numba.njit(cache=True, nogil=True)
def _adjoint_kernel(a1, a2, inv_md0, wx, wz, gt, rec_z, rec_x,
                    hist, hist_lo, hist_frac, grad):
    nz, nx = a1.shape
    nt = gt.shape[1]
    lam1 = np.zeros((nz, nx))  # lambda^{k+1}
    lam2 = np.zeros((nz, nx))  # lambda^{k+2}
    tmp = np.zeros((nz, nx))
    lap = np.zeros((nz, nx))
    for k in range(nt - 1, 0, -1):
        for i in range(nz):
            for j in range(nx):
                tmp[i, j] = inv_md0[i, j] * lam1[i, j]
        _apply_lap(tmp, lap, wx, wz)
        lamk = np.zeros((nz, nx))
        for i in range(GHOST, nz - GHOST):
            for j in range(GHOST, nx - GHOST):
                lamk[i, j] = a1[i, j] * lam1[i, j] - a2[i, j] * lam2[i, j] + lap[i, j]
        for r in range(rec_z.shape[0]):
            lamk[rec_z[r], rec_x[r]] -= gt[r, k]
        lo = hist_lo[k - 1]
        fr = hist_frac[k - 1]
        for i in range(GHOST, nz - GHOST):
            for j in range(GHOST, nx - GHOST):
                wbase = hist[lo, i, j]
                if fr > 0.0:
                    wbase = (1.0 - fr) * wbase + fr * hist[lo + 1, i, j]
                grad[i, j] += lamk[i, j] * wbase
        lam2 = lam1
        lam1 = lamk


def _pad_layout(grid: Grid2D, opts: SolverOptions):
    top = (opts.sponge_width if opts.top_boundary == "absorbing" else 0) + GHOST
    side = opts.sponge_width + GHOST
    nz_pad = grid.nz + top + side
    nx_pad = grid.nx + 2 * side
    return top, side, nz_pad, nx_pad


def _gamma_field(grid: Grid2D, opts: SolverOptions, v_max: float, nz_pad, nx_pad, top, side):
    """Quadratic damping ramp, zero in the interior, peaking at the pad edge."""
    w = opts.sponge_width
    if w == 0:
        return np.zeros((nz_pad, nx_pad))
    gmax = opts.gamma_scale * v_max / (w * min(grid.dx, grid.dz))
    prof = gmax * (np.arange(1, w + 1) / w) ** 2
    gz = np.zeros(nz_pad)
    gx = np.zeros(nx_pad)
    if opts.top_boundary == "absorbing":
        gz[GHOST : GHOST + w] = prof[::-1]
    gz[nz_pad - GHOST - w : nz_pad - GHOST] = prof
    gx[GHOST : GHOST + w] = prof[::-1]
    gx[nx_pad - GHOST - w : nx_pad - GHOST] = prof
    return np.maximum.outer(gz, gx)


def _edge_pad(arr: np.ndarray, top: int, side: int, nz_pad: int, nx_pad: int) -> np.ndarray:
    bottom = nz_pad - top - arr.shape[0]
    return np.pad(arr, ((top, bottom), (side, side)), mode="edge")


def _fold_pad(arr_pad: np.ndarray, grid: Grid2D, top: int, side: int) -> np.ndarray:
    """Adjoint of edge padding: accumulate pad cells onto their interior source."""
    nz_pad, nx_pad = arr_pad.shape
    iz = np.clip(np.arange(nz_pad) - top, 0, grid.nz - 1)
    ix = np.clip(np.arange(nx_pad) - side, 0, grid.nx - 1)
    out = np.zeros(grid.shape)
    np.add.at(out, (iz[:, None], ix[None, :]), arr_pad)
    return out


def _history_schedule(nt: int, stride: int):
    steps = nt - 1
    if stride <= 1:
        return steps, np.arange(steps, dtype=np.int64), np.zeros(steps)
    stored = np.arange(0, steps, stride)
    if stored[-1] != steps - 1:
        stored = np.append(stored, steps - 1)
    lo = np.searchsorted(stored, np.arange(steps), side="right") - 1
    lo = np.minimum(lo, len(stored) - 2) if len(stored) > 1 else lo
    span = stored[lo + 1] - stored[lo]
    frac = (np.arange(steps) - stored[lo]) / span
    frac[np.arange(steps) == stored[-1]] = 1.0
    # shift exact hits of stored steps to frac 0 on their own slot
    exact = np.isin(np.arange(steps), stored)
    lo = np.where(exact, np.searchsorted(stored, np.arange(steps)), lo)
    frac = np.where(exact, 0.0, frac)
    return len(stored), lo.astype(np.int64), frac


def prepare(model: VelocityModel, geom: AcquisitionGeometry,
            opts: SolverOptions = SolverOptions()) -> ForwardHistory:
    """Validate geometry and build the padded coefficient fields."""
    grid = model.grid
    geom.validate_against(grid, model.v_max)
    top, side, nz_pad, nx_pad = _pad_layout(grid, opts)
    m_pad = _edge_pad(model.squared_slowness(), top, side, nz_pad, nx_pad)
    gamma = _gamma_field(grid, opts, model.v_max, nz_pad, nx_pad, top, side)
    dt = geom.dt
    d0 = 1.0 / dt**2 + gamma / dt
    a1 = (2.0 / dt**2 - gamma**2) / d0
    a2 = (1.0 / dt**2 - gamma / dt) / d0
    inv_md0 = 1.0 / (m_pad * d0)
    src_idx = [grid.index_of(x, z) for (x, z) in geom.sources]
    rec_idx = np.array([grid.index_of(x, z) for (x, z) in geom.receivers], dtype=np.int64)
    return ForwardHistory(
        pad_top=top, pad_side=side, m_pad=m_pad, inv_md0=inv_md0, a1=a1, a2=a2,
        wx=1.0 / grid.dx**2, wz=1.0 / grid.dz**2,
        src_idx=[(iz + top, ix + side) for (iz, ix) in src_idx],
        rec_idx=rec_idx + np.array([[top, side]]),
        threads=opts.threads,
    )


def solve_forward(model: VelocityModel, geom: AcquisitionGeometry,
                  opts: SolverOptions = SolverOptions(),
                  keep_history: bool = True):
    """Propagate every source; returns (Seismogram, ForwardHistory).

    The history holds what the adjoint and Born solves need.  With
    ``keep_history=False`` the per-step fields are dropped to save memory.
    """
    ws = prepare(model, geom, opts)
    nt = geom.nt
    n_hist, lo, frac = _history_schedule(nt, opts.history_stride if keep_history else nt)
    ws.hist_lo, ws.hist_frac = lo, frac
    nz_pad, nx_pad = ws.a1.shape
    rec_z = np.ascontiguousarray(ws.rec_idx[:, 0])
    rec_x = np.ascontiguousarray(ws.rec_idx[:, 1])
    cell_area = model.grid.dx * model.grid.dz
    data = np.zeros((geom.n_sources, geom.n_receivers, nt))

    def work(s):
        wav = geom.wavelet_for(s)(geom.times) / cell_area
        hist = np.zeros((n_hist, nz_pad, nx_pad))
        vfields = np.zeros((nt, nz_pad, nx_pad)) if opts.store_wavefield else np.zeros((1, 1, 1))
        sz, sx = ws.src_idx[s]
        _forward_kernel(ws.a1, ws.a2, ws.inv_md0, ws.wx, ws.wz, wav, sz, sx,
                        rec_z, rec_x, data[s], hist, lo, frac, vfields,
                        opts.store_wavefield)
        return hist, vfields

    results = _run_per_source(geom.n_sources, opts.threads, work)
    if keep_history:
        ws.hist = [r[0] for r in results]
    if opts.store_wavefield:
        ws.wavefields = [r[1] for r in results]
    return Seismogram(data, geom.dt), ws


def born_apply(model: VelocityModel, geom: AcquisitionGeometry, dm: np.ndarray,
               history: ForwardHistory) -> np.ndarray:
    """Directional derivative of the traces along an interior dm perturbation."""
    grid = model.grid
    if dm.shape != grid.shape:
        raise ShapeError(f"dm shape {dm.shape} != grid {grid.shape}")
    top, side = history.pad_top, history.pad_side
    nz_pad, nx_pad = history.a1.shape
    dm_pad = _edge_pad(np.asarray(dm, dtype=np.float64), top, side, nz_pad, nx_pad)
    scatter = -dm_pad / history.m_pad
    rec_z = np.ascontiguousarray(history.rec_idx[:, 0])
    rec_x = np.ascontiguousarray(history.rec_idx[:, 1])
    nt = len(history.hist_lo) + 1
    out = np.zeros((geom.n_sources, geom.n_receivers, nt))

    def work(s):
        _born_kernel(history.a1, history.a2, history.inv_md0, history.wx, history.wz,
                     scatter, rec_z, rec_x, out[s], history.hist[s],
                     history.hist_lo, history.hist_frac)

    _run_per_source(geom.n_sources, history.threads, work)
    return out


def solve_adjoint(model: VelocityModel, geom: AcquisitionGeometry,
                  trace_grad: np.ndarray, history: ForwardHistory) -> np.ndarray:
    """Gradient of a trace functional with respect to squared slowness.

    ``trace_grad[s, r, n]`` must hold the partial derivative of the objective
    with respect to the recorded sample; the return value is dJ/dm on the
    interior grid (exact transpose of born_apply).
    """
    grid = model.grid
    trace_grad = np.asarray(trace_grad, dtype=np.float64)
    if trace_grad.shape != (geom.n_sources, geom.n_receivers, geom.nt):
        raise ShapeError(
            f"trace gradient shape {trace_grad.shape} != "
            f"{(geom.n_sources, geom.n_receivers, geom.nt)}")
    if not history.hist:
        raise ShapeError("forward history was not stored; rerun with keep_history=True")
    rec_z = np.ascontiguousarray(history.rec_idx[:, 0])
    rec_x = np.ascontiguousarray(history.rec_idx[:, 1])

    def work(s):
        g = np.zeros_like(history.a1)
        _adjoint_kernel(history.a1, history.a2, history.inv_md0, history.wx, history.wz,
                        np.ascontiguousarray(trace_grad[s]), rec_z, rec_x,
                        history.hist[s], history.hist_lo, history.hist_frac, g)
        return g

    parts = _run_per_source(geom.n_sources, history.threads, work)
    grad_pad = np.zeros_like(history.a1)
    for g in parts:
        grad_pad += g
    grad_pad = grad_pad / history.m_pad
    return _fold_pad(grad_pad, grid, history.pad_top, history.pad_side)


def laplacian4(v: np.ndarray, dx: float, dz: float) -> np.ndarray:
    """4th-order Laplacian with zero Dirichlet halo, for diagnostics and tests."""
    out = np.zeros_like(v)
    _apply_lap(v, out, 1.0 / dx**2, 1.0 / dz**2)
    return out


def energy_series(history: ForwardHistory, geom: AcquisitionGeometry, grid: Grid2D,
                  isrc: int = 0) -> np.ndarray:
    """Discrete leapfrog energy of a stored wavefield, one value per step pair."""
    if history.wavefields is None:
        raise ShapeError("run solve_forward with store_wavefield=True first")
    v = history.wavefields[isrc]
    dt = geom.dt
    dA = grid.dx * grid.dz
    m = history.m_pad
    nt = v.shape[0]
    e = np.zeros(nt - 1)
    for n in range(nt - 1):
        kin = 0.5 * np.sum(m * ((v[n + 1] - v[n]) / dt) ** 2)
        pot = -0.5 * np.sum(v[n + 1] * laplacian4(v[n], grid.dx, grid.dz))
        e[n] = (kin + pot) * dA
    return e
