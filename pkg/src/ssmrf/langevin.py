"""One-leapfrog-step Langevin dynamics with a diagonal preconditioner and
partial momentum refreshment.

The update for parameter vector t with momentum p, step size eps and diagonal
scale c is

    p <- alpha * p + sqrt(1 - alpha^2) * n,   n ~ N(0, I)
    p <- p + (eps * c / 2) * g(t)
    t <- t + eps * c * p
    p <- p + (eps * c / 2) * g(t_new)

which is leapfrog integration in the rescaled coordinates t / c.  The
approximate sampler skips the Metropolis correction (its rejection rate decays
cubically in the step size); the exact reference chain applies one, flipping
the momentum on rejection so the move stays reversible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import DataStats, Parameters
from .states import MomentEstimates
from .utils import DivergenceError, as_generator


@dataclass
class MomentumState:
    """Auxiliary momenta for the active slab values and all biases.

    Edge entries are meaningful only where the matching indicator is active;
    inactive entries are pinned to zero by the bookkeeping in the RJMCMC
    sweep, drawn fresh from N(0,1) when an edge activates.
    """

    edge: np.ndarray
    bias: np.ndarray
    refresh_alpha: float = 0.9
    step_size: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.refresh_alpha <= 1.0:
            raise ValueError("refresh_alpha must lie in [0, 1]")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")

    @classmethod
    def initialize(cls, n_candidates, d, rng, refresh_alpha=0.9, step_size=1e-3):
        rng = as_generator(rng)
        return cls(
            edge=np.zeros(n_candidates),
            bias=rng.standard_normal(d),
            refresh_alpha=refresh_alpha,
            step_size=step_size,
        )


def refresh_momentum(momentum, alpha, rng):
    """Partial refresh p <- alpha p + beta n with alpha^2 + beta^2 = 1."""
    momentum = np.asarray(momentum, dtype=np.float64)
    if alpha == 1.0:
        return momentum.copy()
    beta = np.sqrt(1.0 - alpha * alpha)
    return alpha * momentum + beta * rng.standard_normal(momentum.shape)


@dataclass
class Preconditioner:
    """Diagonal scale C = Hbar^{-1/2} from curvature averaged over burn-in.

    The diagonal Hessian of the negative log posterior is estimated as
    N * Var(f) + 1/prior_var per parameter and averaged across accumulation
    calls; freezing inverts the square root.  Until frozen, `edge_scale` and
    `bias_scale` track the running average so early iterations already move
    at roughly the right per-coordinate scale.
    """

    n_candidates: int
    d: int
    edge_accum: np.ndarray = None
    bias_accum: np.ndarray = None
    count: int = 0
    frozen: bool = False
    edge_scale: np.ndarray = None
    bias_scale: np.ndarray = None

    def __post_init__(self):
        if self.edge_accum is None:
            self.edge_accum = np.zeros(self.n_candidates)
        if self.bias_accum is None:
            self.bias_accum = np.zeros(self.d)
        self._refresh_scales()

    def _refresh_scales(self):
        if self.count == 0:
            self.edge_scale = np.ones(self.n_candidates)
            self.bias_scale = np.ones(self.d)
        else:
            self.edge_scale = (self.edge_accum / self.count) ** -0.5
            self.bias_scale = (self.bias_accum / self.count) ** -0.5

    def accumulate(self, moments: MomentEstimates, sigma0, sigma_b, n_cases):
        """Add one diagonal-curvature observation from the current moments."""
        if self.frozen:
            raise RuntimeError("preconditioner is frozen")
        self.edge_accum += n_cases * moments.pair_var + sigma0 ** -2
        self.bias_accum += n_cases * moments.node_var + sigma_b ** -2
        self.count += 1
        self._refresh_scales()
        return self

    def freeze(self):
        if self.count == 0:
            warnings.warn("preconditioner frozen before any accumulation; using identity")
        self._refresh_scales()
        self.frozen = True
        return self


def grad_arrays(theta, counts, model_means, n_cases, prior_var):
    """Gradient of the log posterior for a block of parameters.

    counts are the data-side feature sums, model_means the (estimated or
    exact) feature expectations under the current parameters.
    """
    return counts - n_cases * model_means - theta / prior_var


def grad_log_posterior(params: Parameters, stats: DataStats, moments, sigma0, sigma_b):
    """Per-parameter log-posterior gradient for all active edges and biases.

    Returns (edge_grads, bias_grads) where edge_grads maps each active pair
    to its gradient.  `moments` may be sample estimates or an exact summary;
    a missing moment for an active edge is an internal inconsistency.
    """
    if sigma0 <= 0 or sigma_b <= 0:
        raise ValueError("prior scales must be positive")
    spec = stats.spec
    params.validate_for(spec)
    pair_mean = np.asarray(moments.pair_mean, dtype=np.float64)
    if len(pair_mean) != spec.n_candidates:
        raise RuntimeError("moment estimates do not cover the candidate set")
    edge_grads = {}
    for pair, w in params.edge_weights.items():
        k = spec.index_of(*pair)
        if not np.isfinite(pair_mean[k]):
            raise RuntimeError(f"missing/invalid moment for active edge {pair}")
        edge_grads[pair] = float(
            grad_arrays(w, stats.pair_counts[k], pair_mean[k], stats.n_cases, sigma0 ** 2)
        )
    bias_grads = grad_arrays(
        params.biases, stats.node_counts, np.asarray(moments.node_mean), stats.n_cases, sigma_b ** 2
    )
    return edge_grads, bias_grads


def leapfrog(theta, momentum, scale, step_size, grad_fn):
    """One preconditioned leapfrog step; raises DivergenceError on non-finite
    gradients, leaving the caller's state untouched."""
    half = 0.5 * step_size * scale
    g0 = np.asarray(grad_fn(theta), dtype=np.float64)
    if not np.isfinite(g0).all():
        raise DivergenceError("non-finite gradient at current position")
    p_half = momentum + half * g0
    theta_new = theta + step_size * scale * p_half
    g1 = np.asarray(grad_fn(theta_new), dtype=np.float64)
    if not np.isfinite(g1).all():
        raise DivergenceError("non-finite gradient at proposed position")
    p_new = p_half + half * g1
    return theta_new, p_new


def lmc_update(theta, momentum, scale, step_size, alpha, grad_fn, rng):
    """Partial momentum refresh followed by one leapfrog step (no correction)."""
    rng = as_generator(rng)
    p = refresh_momentum(momentum, alpha, rng)
    return leapfrog(theta, p, scale, step_size, grad_fn)


def lmc_update_metropolis(theta, momentum, scale, step_size, alpha, grad_fn, log_post_fn, rng):
    """Metropolis-corrected variant targeting the exact posterior.

    Accepts with probability min(1, exp(-dH)) where H = -log_post + |p|^2/2;
    on rejection the position is kept and the momentum negated, which makes
    the partially-refreshed chain reversible.  Returns (theta, p, accepted).
    """
    rng = as_generator(rng)
    p = refresh_momentum(momentum, alpha, rng)
    h_old = -log_post_fn(theta) + 0.5 * float(p @ p)
    theta_new, p_new = leapfrog(theta, p, scale, step_size, grad_fn)
    h_new = -log_post_fn(theta_new) + 0.5 * float(p_new @ p_new)
    log_accept = h_old - h_new
    if not np.isfinite(log_accept):
        raise DivergenceError("non-finite Hamiltonian in Metropolis correction")
    if np.log(rng.random()) < log_accept:
        return theta_new, p_new, True
    return theta.copy(), -p, False
