"""Posterior approximation: MAP estimation, low-rank Laplace, pCN sampling.

Everything operates in whitened coordinates, where the prior is standard
normal: the regularizer is 0.5*||xi||^2, the pCN proposal is exactly
prior-reversible, and the data-term curvature is the prior-preconditioned
Hessian whose top eigenpairs define the low-rank posterior covariance.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy.optimize import fmin_l_bfgs_b
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import IndefinitenessError, OptimizationError, PreconditionError
from .potentials import Potential
from .wave import solve_adjoint, born_apply


class FwiObjective:
    """Tempered misfit as a function of whitened coordinates."""

    def __init__(self, potential: Potential, prior_model):
        self.potential = potential
        self.prior = prior_model
        self.dim = prior_model.dim

    def _scale(self) -> float:
        spec = self.potential.spec
        nc = spec.norm_constant if spec.norm_constant is not None else 1.0
        return spec.beta / nc

    def value(self, xi: np.ndarray) -> float:
        u = self.prior.latent_field(xi)
        raw = self.potential.evaluate(u, need_gradient=False).value
        return self._scale() * raw

    def value_and_grad(self, xi: np.ndarray):
        u = self.prior.latent_field(xi)
        ev = self.potential.evaluate(u, need_gradient=True)
        g = self.prior.vjp(xi, ev.gradient) * self._scale()
        return self._scale() * ev.value, g

    def linearize(self, xi: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        """Gauss-Newton Hessian-vector product at a fixed linearization point."""
        u = self.prior.latent_field(xi)
        model = self.potential.template.with_u(u)
        pred, hist = self.potential.predict(u, keep_history=True)
        jac = model.slowness_jacobian()
        scale = self._scale()
        geom = self.potential.geom

        def hvp(dxi: np.ndarray) -> np.ndarray:
            du = self.prior.jvp(xi, dxi)
            dtr = born_apply(model, geom, du * jac, hist)
            wtr = self.potential.gn_weight_apply(pred.data, dtr)
            dm = solve_adjoint(model, geom, wtr, hist)
            return self.prior.vjp(xi, dm * jac) * scale

        return hvp


class QuadraticObjective:
    """Linear forward map with Gaussian misfit: 0.5*||A xi - b||^2 / tau^2."""

    def __init__(self, a: np.ndarray, b: np.ndarray, tau: float = 1.0):
        self.a = np.asarray(a, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.tau = tau
        self.dim = self.a.shape[1]

    def value(self, xi):
        r = self.a @ xi - self.b
        return 0.5 * float(r @ r) / self.tau**2

    def value_and_grad(self, xi):
        r = self.a @ xi - self.b
        return 0.5 * float(r @ r) / self.tau**2, (self.a.T @ r) / self.tau**2

    def linearize(self, xi):
        def hvp(dxi):
            return self.a.T @ (self.a @ dxi) / self.tau**2
        return hvp

    def analytic_map(self) -> np.ndarray:
        h = self.a.T @ self.a / self.tau**2
        return np.linalg.solve(h + np.eye(self.dim), self.a.T @ self.b / self.tau**2)

    def analytic_cov(self) -> np.ndarray:
        h = self.a.T @ self.a / self.tau**2
        return np.linalg.inv(h + np.eye(self.dim))


@dataclass
class MapResult:
    xi: np.ndarray
    objective: float
    grad_norm: float
    converged: bool
    n_iter: int
    objective_trace: List[float]


def map_estimate(objective, xi0: Optional[np.ndarray] = None, tol_rel: float = 1e-6,
                 max_iter: int = 200, m_memory: int = 12) -> MapResult:
    """Minimize data term + 0.5*||xi||^2 by limited-memory quasi-Newton.

    Convergence is declared when the max-norm of the gradient falls below
    tol_rel times its initial value.
    """
    dim = objective.dim
    xi0 = np.zeros(dim) if xi0 is None else np.asarray(xi0, dtype=np.float64)
    trace: List[float] = []
    cache = {}

    def fg(x):
        v, g = objective.value_and_grad(x)
        total = v + 0.5 * float(x @ x)
        cache["f"] = total
        return total, g + x

    _, g0 = fg(xi0)
    pgtol = tol_rel * max(np.max(np.abs(g0)), 1e-300)

    def cb(xk):
        trace.append(cache["f"])

    x, f, info = fmin_l_bfgs_b(fg, xi0, m=m_memory, pgtol=pgtol, factr=10.0,
                               maxiter=max_iter, callback=cb)
    gnorm = float(np.max(np.abs(info["grad"])))
    if info["warnflag"] == 2:
        raise OptimizationError(
            f"line search failed: {info.get('task', '')}",
            diagnostics={"n_iter": info["nit"], "grad_norm": gnorm, "trace": trace})
    converged = gnorm <= pgtol or info["warnflag"] == 0
    return MapResult(x, float(f), gnorm, bool(converged), int(info["nit"]), trace)


@dataclass
class GaussianApprox:
    """Mean plus low-rank curvature eigenpairs in whitened coordinates.

    The posterior covariance acts as I - V diag(lam/(1+lam)) V^T on whitened
    vectors; ``prior_model`` maps everything back to the field.
    """

    xi_mean: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (dim, k), orthonormal columns
    prior_model: object
    rank: int

    def mean_field(self) -> np.ndarray:
        return self.prior_model.latent_field(self.xi_mean)

    def whitened_cov_apply(self, x: np.ndarray) -> np.ndarray:
        w = self.eigenvalues / (1.0 + self.eigenvalues)
        t = self.eigenvectors.T @ x
        return x - self.eigenvectors @ (w * t)

    def dense_whitened_cov(self) -> np.ndarray:
        w = self.eigenvalues / (1.0 + self.eigenvalues)
        return np.eye(self.xi_mean.size) - (self.eigenvectors * w) @ self.eigenvectors.T

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw a field sample from the Gaussian approximation."""
        eta = rng.standard_normal(self.xi_mean.size)
        w = 1.0 - 1.0 / np.sqrt(1.0 + self.eigenvalues)
        t = self.eigenvectors.T @ eta
        xi = self.xi_mean + eta - self.eigenvectors @ (w * t)
        return self.prior_model.latent_field(xi)

    def eigen_fields(self) -> np.ndarray:
        """Eigenvector directions pushed to interior fields, stacked on axis 0."""
        out = []
        for j in range(self.rank):
            out.append(self.prior_model.jvp(self.xi_mean, self.eigenvectors[:, j]))
        return np.stack(out, axis=0)

    def variance_field(self) -> np.ndarray:
        """Pointwise posterior variance of the latent field (Gaussian prior)."""
        prior = self.prior_model.prior
        base = prior.pointwise_variance
        psi = self.eigen_fields()
        w = self.eigenvalues / (1.0 + self.eigenvalues)
        red = np.tensordot(w, psi**2, axes=(0, 0))
        return np.maximum(base - red, 0.0)

    def prior_variance_field(self) -> np.ndarray:
        prior = self.prior_model.prior
        return np.full(prior.grid.shape, prior.pointwise_variance)

    def dense_interior_cov(self) -> np.ndarray:
        """Dense covariance of the interior latent field (Gaussian prior)."""
        prior = self.prior_model.prior
        c_int = prior.dense_interior_cov()
        psi = self.eigen_fields().reshape(self.rank, -1)
        w = self.eigenvalues / (1.0 + self.eigenvalues)
        return c_int - (psi.T * w) @ psi


def laplace(objective, xi_map: np.ndarray, rank: int = 50,
            rel_cutoff: float = 1e-2, prior_model=None) -> GaussianApprox:
    """Low-rank curvature eigenpairs of the tempered misfit at the mode.

    Uses matrix-free Lanczos on the Gauss-Newton Hessian-vector product; for
    small problems (or rank close to the dimension) a dense eigensolve is used
    instead.  Eigenvalues below ``rel_cutoff`` times the largest are dropped.
    """
    prior_model = prior_model if prior_model is not None else objective.prior
    hvp = objective.linearize(xi_map)
    dim = objective.dim
    if rank >= dim - 1 or dim <= 256:
        h = np.empty((dim, dim))
        eye = np.eye(dim)
        for j in range(dim):
            h[:, j] = hvp(eye[:, j])
        h = 0.5 * (h + h.T)
        vals, vecs = np.linalg.eigh(h)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        k = min(rank, dim)
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        op = LinearOperator((dim, dim), matvec=hvp)
        v0 = np.full(dim, 1.0 / np.sqrt(dim))
        vals, vecs = eigsh(op, k=rank, which="LA", v0=v0)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    if vals.size and vals.min() <= -1.0:
        raise IndefinitenessError(
            f"curvature eigenvalue {vals.min():.3g} <= -1; posterior covariance "
            "would be indefinite")
    vals = np.where(np.abs(vals) < 1e-14, 0.0, vals)
    if vals.size and vals[0] > 0:
        keep = vals >= rel_cutoff * vals[0]
        keep[0] = True
        vals, vecs = vals[keep], vecs[:, keep]
    return GaussianApprox(np.asarray(xi_map, dtype=np.float64), vals, vecs,
                          prior_model, int(vals.size))


@dataclass
class ChainState:
    """Current pCN state: whitened coordinates plus bookkeeping."""

    xi: np.ndarray
    loss: float
    step_size: float
    n_accept: int = 0
    n_steps: int = 0
    last_accepted: bool = False
    last_rejected_nonfinite: bool = False
    rng: Optional[np.random.Generator] = None

    def acceptance_rate(self) -> float:
        return self.n_accept / self.n_steps if self.n_steps else 0.0


def pcn_step(state: ChainState, objective, rng: Optional[np.random.Generator] = None
             ) -> ChainState:
    """One prior-reversible proposal/accept step; the prior term cancels."""
    rng = rng if rng is not None else state.rng
    if rng is None:
        raise PreconditionError("pcn_step needs a random generator")
    beta = state.step_size
    if not 0.0 <= beta <= 1.0:
        raise PreconditionError("pCN step size must lie in [0, 1]")
    eta = rng.standard_normal(state.xi.size)
    prop = np.sqrt(1.0 - beta**2) * state.xi + beta * eta
    loss_prop = objective.value(prop)
    nonfinite = not np.isfinite(loss_prop)
    if nonfinite:
        accept = False
    else:
        log_alpha = state.loss - loss_prop
        accept = log_alpha >= 0 or np.log(rng.uniform()) < log_alpha
    return replace(
        state,
        xi=prop if accept else state.xi,
        loss=loss_prop if accept else state.loss,
        n_accept=state.n_accept + int(accept),
        n_steps=state.n_steps + 1,
        last_accepted=bool(accept),
        last_rejected_nonfinite=bool(nonfinite),
        rng=rng,
    )


@dataclass
class ChainSummary:
    mean_field: np.ndarray
    variance_field: np.ndarray
    acceptance_rate: float
    n_steps: int
    burn_in: int
    step_size_final: float
    seed: int
    thinned: np.ndarray
    hyper_trace: Optional[np.ndarray] = None
    loss_trace: Optional[np.ndarray] = None
    n_accept: int = 0


def run_chain(objective, prior_model, n_steps: int, burn_in: int = 0,
              step_size: float = 0.2, seed: int = 0, thin: int = 10,
              adapt: bool = True, target_accept: float = 0.25,
              xi0: Optional[np.ndarray] = None, adapt_window: int = 50,
              record_loss: bool = False) -> ChainSummary:
    """Run one pCN chain; deterministic function of (arguments, seed).

    Step size adapts toward the target acceptance rate during burn-in only,
    so post-burn-in samples target the exact posterior.
    """
    if burn_in >= n_steps and n_steps > 0:
        raise PreconditionError("burn_in must be smaller than n_steps")
    rng = np.random.default_rng(seed)
    xi = np.zeros(prior_model.dim) if xi0 is None else np.asarray(xi0, dtype=np.float64)
    state = ChainState(xi=xi, loss=objective.value(xi), step_size=step_size, rng=rng)
    thinned = []
    hyper = []
    losses = []
    window_accepts = 0
    mean = np.zeros_like(prior_model.latent_field(xi))
    m2 = np.zeros_like(mean)
    n_kept = 0
    is_hier = hasattr(prior_model, "interior_value")
    for step in range(n_steps):
        state = pcn_step(state, objective, rng)
        window_accepts += int(state.last_accepted)
        in_burn = step < burn_in
        if adapt and in_burn and (step + 1) % adapt_window == 0:
            rate = window_accepts / adapt_window
            new_size = state.step_size * float(np.exp(0.6 * (rate - target_accept)))
            state = replace(state, step_size=float(np.clip(new_size, 1e-4, 1.0)))
            window_accepts = 0
        if not in_burn:
            if (step - burn_in) % thin == 0:
                thinned.append(state.xi.copy())
                if is_hier:
                    hyper.append(prior_model.interior_value(state.xi))
            n_kept += 1
            f = prior_model.latent_field(state.xi)
            delta = f - mean
            mean += delta / n_kept
            m2 += delta * (f - mean)
        if record_loss:
            losses.append(state.loss)
    if n_kept == 0:
        mean = prior_model.latent_field(state.xi)
    var = m2 / max(n_kept - 1, 1)
    return ChainSummary(
        mean_field=mean,
        variance_field=var,
        acceptance_rate=state.acceptance_rate(),
        n_steps=n_steps,
        burn_in=burn_in,
        step_size_final=state.step_size,
        seed=seed,
        thinned=np.array(thinned) if thinned else np.zeros((0, prior_model.dim)),
        hyper_trace=np.array(hyper) if hyper else None,
        loss_trace=np.array(losses) if record_loss else None,
        n_accept=state.n_accept,
    )
