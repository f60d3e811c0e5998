"""Seismogram misfit potentials and their gradients in the latent field.

Four data discrepancies are supported, keyed by ``PotentialSpec.kind``:

* ``L2``   - plain least squares per trace;
* ``Hm1``  - negative-Sobolev norm of the (mean-removed) residual;
* ``M``    - multiplicative misfit between normalized traces;
* ``W2``   - quadratic Wasserstein distance between normalized traces.

The receiver measure is the counting measure (unit weight per trace), so the
value is half the sum of the per-trace contributions.  Gradients chain the
discrete adjoint wave solve with the exact per-trace trace derivatives; for
``W2`` the trace derivative uses the transport dual potential.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import CalibrationError, PreconditionError, ShapeError
from .grids import AcquisitionGeometry, Seismogram, VelocityModel
from .signal import (DensityTrace, NormalizerSpec, hm1_apply_inverse,
                     hm1_norm_sq, normalize_positive, w2_1d_sq_with_dual,
                     weighted_laplacian_solve)
from .wave import ForwardHistory, SolverOptions, solve_adjoint, solve_forward

KINDS = ("L2", "Hm1", "M", "W2")


@dataclass(frozen=True)
class PotentialSpec:
    """Which misfit to use, its inverse temperature and normalization state."""

    kind: str
    beta: float = 1.0
    normalizer: Optional[NormalizerSpec] = None
    norm_constant: Optional[float] = None
    m_denominator: str = "data"  # "data" (default) or "model"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown potential kind {self.kind!r}")
        if self.beta <= 0:
            raise PreconditionError("inverse temperature must be positive")
        needs_norm = self.kind in ("M", "W2")
        if needs_norm and self.normalizer is None:
            raise PreconditionError(f"{self.kind} potential requires a normalizer")
        if not needs_norm and self.normalizer is not None:
            raise PreconditionError(f"{self.kind} potential takes no normalizer")
        if self.m_denominator not in ("data", "model"):
            raise PreconditionError("m_denominator must be 'data' or 'model'")


@dataclass
class LossEval:
    """Raw loss value, per-trace contributions and the optional u-gradient."""

    value: float
    per_trace: np.ndarray
    gradient: Optional[np.ndarray] = None


def resolve_normalizer(spec: NormalizerSpec, y: Seismogram,
                       auto_delta_factor: float = 0.1) -> NormalizerSpec:
    """Fix the square normalizer width from the dataset amplitude.

    The width is tied to one dataset (not per trace) so that clean and
    perturbed inversions share the same map into densities.
    """
    if spec.kind != "square_plus_delta":
        return spec
    peak = float(np.max(np.abs(y.data)))
    return NormalizerSpec("square_plus_delta", delta=auto_delta_factor * max(peak, 1e-30) ** 2)


class Potential:
    """A misfit bound to one dataset and acquisition, evaluable at any latent u."""

    def __init__(self, spec: PotentialSpec, template: VelocityModel,
                 geom: AcquisitionGeometry, y: Seismogram,
                 solver_opts: SolverOptions = SolverOptions()):
        self.spec = spec
        self.template = template
        self.geom = geom
        self.solver_opts = solver_opts
        shape = (geom.n_sources, geom.n_receivers, geom.nt)
        if y.data.shape != shape:
            raise ShapeError(f"data shape {y.data.shape} does not match geometry {shape}")
        y.check_finite()
        if spec.kind == "Hm1" and not y.zero_mean:
            raise PreconditionError(
                "Hm1 potential needs zero-mean data; apply remove_zero_frequency")
        self.y = y
        self.dt = geom.dt
        if spec.kind in ("M", "W2"):
            self._rho_y = np.empty_like(y.data)
            for s, r in np.ndindex(shape[0], shape[1]):
                dens, _ = normalize_positive(spec.normalizer.sigma(y.data[s, r]), self.dt)
                self._rho_y[s, r] = dens

    # -- trace-space pieces -------------------------------------------------

    def misfit_of_traces(self, pred: np.ndarray):
        """(value, per_trace) for predicted traces, no wave solves involved."""
        kind = self.spec.kind
        if kind == "L2":
            res = pred - self.y.data
            per_trace = np.sum(res**2, axis=-1) * self.dt
        elif kind == "Hm1":
            res = (pred - pred.mean(axis=-1, keepdims=True)) - self.y.data
            per_trace = hm1_norm_sq(res, self.dt)
        else:
            rho_p = self._normalize_pred(pred)
            if kind == "M":
                den = self._rho_y if self.spec.m_denominator == "data" else rho_p
                per_trace = np.sum(((rho_p - self._rho_y) / den) ** 2, axis=-1) * self.dt
            else:
                per_trace = np.empty(pred.shape[:2])
                for s, r in np.ndindex(per_trace.shape):
                    fp = DensityTrace.from_samples(rho_p[s, r], self.dt, renormalize=True)
                    fy = DensityTrace.from_samples(self._rho_y[s, r], self.dt, renormalize=True)
                    per_trace[s, r], _ = w2_1d_sq_with_dual(fp, fy)
        return 0.5 * float(per_trace.sum()), per_trace

    def trace_gradient(self, pred: np.ndarray) -> np.ndarray:
        """d(value)/d(pred sample), same shape as the data."""
        kind = self.spec.kind
        if kind == "L2":
            return (pred - self.y.data) * self.dt
        if kind == "Hm1":
            res = (pred - pred.mean(axis=-1, keepdims=True)) - self.y.data
            return hm1_apply_inverse(res, self.dt) * self.dt
        rho_p = self._normalize_pred(pred)
        sig_p = self.spec.normalizer.sigma_prime(pred)
        z_p = np.sum(self.spec.normalizer.sigma(pred), axis=-1, keepdims=True) * self.dt
        if kind == "M":
            if self.spec.m_denominator == "data":
                g_rho = self.dt * (rho_p - self._rho_y) / self._rho_y**2
            else:
                g_rho = self.dt * (1.0 - self._rho_y / rho_p) * self._rho_y / rho_p**2
        else:
            g_rho = np.empty_like(pred)
            for s, r in np.ndindex(pred.shape[:2]):
                fp = DensityTrace.from_samples(rho_p[s, r], self.dt, renormalize=True)
                fy = DensityTrace.from_samples(self._rho_y[s, r], self.dt, renormalize=True)
                _, phi = w2_1d_sq_with_dual(fp, fy)
                g_rho[s, r] = 0.5 * phi * self.dt
        return self._chain_through_normalizer(g_rho, rho_p, sig_p, z_p)

    def gn_weight_apply(self, pred: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Positive-semidefinite curvature weighting of a trace perturbation.

        This is the exact trace-space Hessian for L2/Hm1/M; for W2 the
        distance is replaced by its local weighted-Sobolev quadratic model,
        which is exact at a data match and keeps the operator PSD.
        """
        kind = self.spec.kind
        if kind == "L2":
            return delta * self.dt
        if kind == "Hm1":
            d0 = delta - delta.mean(axis=-1, keepdims=True)
            return hm1_apply_inverse(d0, self.dt) * self.dt
        rho_p = self._normalize_pred(pred)
        sig_p = self.spec.normalizer.sigma_prime(pred)
        z_p = np.sum(self.spec.normalizer.sigma(pred), axis=-1, keepdims=True) * self.dt
        d_rho = (sig_p * delta - rho_p * np.sum(sig_p * delta, axis=-1, keepdims=True)
                 * self.dt) / z_p
        if kind == "M":
            g_rho = self.dt * d_rho / self._rho_y**2
        else:
            g_rho = np.empty_like(pred)
            for s, r in np.ndindex(pred.shape[:2]):
                phi = weighted_laplacian_solve(
                    d_rho[s, r] / self._rho_y[s, r], self._rho_y[s, r], self.dt)
                g_rho[s, r] = self.dt * phi
        return self._chain_through_normalizer(g_rho, rho_p, sig_p, z_p)

    def _normalize_pred(self, pred: np.ndarray) -> np.ndarray:
        sig = self.spec.normalizer.sigma(pred)
        z = np.sum(sig, axis=-1, keepdims=True) * self.dt
        return sig / z

    def _chain_through_normalizer(self, g_rho, rho_p, sig_p, z_p):
        proj = np.sum(g_rho * rho_p, axis=-1, keepdims=True) * self.dt
        return sig_p * (g_rho - proj) / z_p

    # -- latent-field evaluation ---------------------------------------------

    def predict(self, u: np.ndarray, keep_history: bool = False):
        model = self.template.with_u(u)
        return solve_forward(model, self.geom, self.solver_opts, keep_history=keep_history)

    def evaluate(self, u: np.ndarray, need_gradient: bool = True) -> LossEval:
        model = self.template.with_u(u)
        pred, hist = solve_forward(model, self.geom, self.solver_opts,
                                   keep_history=need_gradient)
        value, per_trace = self.misfit_of_traces(pred.data)
        if not need_gradient:
            return LossEval(value, per_trace)
        tg = self.trace_gradient(pred.data)
        dm = solve_adjoint(model, self.geom, tg, hist)
        grad_u = dm * model.slowness_jacobian()
        return LossEval(value, per_trace, grad_u)

    def effective(self, raw_value: float) -> float:
        """Tempered, normalized potential used by the posterior."""
        nc = self.spec.norm_constant if self.spec.norm_constant is not None else 1.0
        return self.spec.beta * raw_value / nc


def calibrate(potential: Potential, u0: np.ndarray) -> PotentialSpec:
    """Store the normalization constant so the raw loss at u0 maps to 1."""
    value = potential.evaluate(u0, need_gradient=False).value
    if value <= 0:
        raise CalibrationError("loss at the reference model is zero; cannot normalize")
    spec = replace(potential.spec, norm_constant=value)
    potential.spec = spec
    return spec


def _single_eval(kind, model, geom, y, normalizer=None, solver_opts=SolverOptions(),
                 need_gradient=True, **kw):
    spec = PotentialSpec(kind, beta=1.0, normalizer=normalizer, **kw)
    pot = Potential(spec, model, geom, y, solver_opts)
    return pot.evaluate(model.u, need_gradient=need_gradient)


def eval_l2(model, geom, y, **kw) -> LossEval:
    return _single_eval("L2", model, geom, y, **kw)


def eval_hm1(model, geom, y, **kw) -> LossEval:
    return _single_eval("Hm1", model, geom, y, **kw)


def eval_m(model, geom, y, normalizer, **kw) -> LossEval:
    return _single_eval("M", model, geom, y, normalizer=normalizer, **kw)


def eval_w2(model, geom, y, normalizer, **kw) -> LossEval:
    return _single_eval("W2", model, geom, y, normalizer=normalizer, **kw)
