"""Reversible-jump moves that add or delete one edge together with its slab
value.

Each move compares a model with the edge absent against one with the edge at
weight `a`, where `a` is confined to a small window [-delta, delta].  Inside
that window the log-partition ratio is well approximated by a quadratic in
`a`, so the N-th power of the partition ratio is estimated from the sample
mean and variance of the edge's product feature over the particle bank, with
a multiplicative correction that removes the exp-transform bias to second
order.  The window half-width is chosen so the estimator's relative variance
N^2 a^2 Var(f) / n stays negligible.

All eligible moves in one sweep are evaluated against the same frozen moment
snapshot, so a single particle refresh serves every candidate edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtri

from . import _kernels
from .model import DataStats
from .states import MomentEstimates, ParticleSet, estimate_moments, tilted_feature_stats
from .utils import as_generator

LOG_2PI = float(np.log(2.0 * np.pi))
_MIN_TRUNC_MASS_LOG = np.log(1e-300)


# ---------------------------------------------------------------------------
# Truncated-normal utilities (window widths are tiny relative to the proposal
# scale, so masses deep in either tail must not cancel to zero).
# ---------------------------------------------------------------------------

def normal_logpdf(x, sd):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * (x / sd) ** 2 - np.log(sd) - 0.5 * LOG_2PI


def truncated_normal_log_mass(alpha, beta):
    """log(Phi(beta) - Phi(alpha)) for standardized bounds, stable in both
    tails (reflects windows that sit above the mean into the lower tail)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    flip = alpha + beta > 0
    lo = np.where(flip, -beta, alpha)
    hi = np.where(flip, -alpha, beta)
    log_lo, log_hi = log_ndtr(lo), log_ndtr(hi)
    with np.errstate(divide="ignore"):
        return log_hi + np.log1p(-np.exp(np.minimum(log_lo - log_hi, 0.0)))


def truncated_normal_logpdf(x, mu, sd, lo, hi):
    log_mass = truncated_normal_log_mass((lo - mu) / sd, (hi - mu) / sd)
    degenerate = ~np.isfinite(log_mass) | (log_mass < _MIN_TRUNC_MASS_LOG)
    dens = normal_logpdf(np.asarray(x, dtype=np.float64) - mu, sd) - log_mass
    uniform = -np.log(hi - lo)
    return np.where(degenerate, uniform, dens)


def sample_truncated_normal(mu, sd, lo, hi, rng):
    """Inverse-CDF draws from N(mu, sd^2) restricted to [lo, hi].

    Windows whose Gaussian mass underflows (< 1e-300) fall back to a uniform
    draw on [lo, hi]; the returned log-density reflects whichever proposal
    generated each element.  Exactly one uniform variate is consumed per
    element regardless of the branch.  Returns (samples, log_pdf).
    """
    mu = np.asarray(mu, dtype=np.float64)
    rng = as_generator(rng)
    return truncated_normal_from_uniforms(mu, sd, lo, hi, rng.random(mu.shape))


def truncated_normal_from_uniforms(mu, sd, lo, hi, u):
    """Deterministic inverse-CDF map from uniforms to truncated-normal draws
    (the transform behind sample_truncated_normal)."""
    mu, sd, lo, hi, u = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (mu, sd, lo, hi, u))
    )

    flip = mu > 0.5 * (lo + hi)
    m = np.where(flip, -mu, mu)
    l = np.where(flip, -hi, lo)
    h = np.where(flip, -lo, hi)
    alpha = (l - m) / sd
    beta = (h - m) / sd
    log_mass = truncated_normal_log_mass(alpha, beta)
    degenerate = ~np.isfinite(log_mass) | (log_mass < _MIN_TRUNC_MASS_LOG)

    cdf_lo = np.exp(log_ndtr(alpha))
    cdf_hi = np.exp(log_ndtr(beta))
    with np.errstate(invalid="ignore"):
        z = ndtri(cdf_lo + u * (cdf_hi - cdf_lo))
    z = np.clip(z, alpha, beta)
    x = m + sd * z
    x = np.where(flip, -x, x)
    x = np.where(degenerate, lo + u * (hi - lo), x)
    x = np.clip(x, lo, hi)

    log_q = np.where(degenerate, -np.log(hi - lo), normal_logpdf(x - mu, sd) - log_mass)
    return x, log_q


# ---------------------------------------------------------------------------
# Jump geometry and the partition-ratio estimator.
# ---------------------------------------------------------------------------

def jump_width(n_cases, feat_var, coeff=0.01, variance_floor=1e-6):
    """Proposal window half-width coeff / sqrt(N * Var f).

    Keeps the ratio estimator's relative variance at the window edge down to
    coeff^2 * N / n.  The feature variance is floored so frozen features do
    not produce infinite widths.
    """
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    v = np.maximum(np.asarray(feat_var, dtype=np.float64), variance_floor)
    return coeff / np.sqrt(n_cases * v)


@dataclass
class RatioEstimate:
    """Estimate of the N-th-power partition ratio for one jump, in both
    linear and log form, plus its predicted relative variance."""

    ratio: float
    log_ratio: float
    rel_variance: float


def partition_ratio_estimate(a, feat_mean, feat_var, n_cases, n_particles):
    """Second-order estimate of (Z_without / Z_with(a))^N from feature moments.

    The log of the uncorrected estimate is exactly -N a fbar - (N a^2 / 2) s2;
    the multiplicative factor (1 + N^2 a^2 s2 / (2 n))^{-1} removes the bias
    introduced by exponentiation, to second order in a.  For a deletion the
    caller passes the negated slab value with full-model moments.
    """
    if n_particles < 2:
        raise ValueError("need n_particles >= 2")
    a = np.asarray(a, dtype=np.float64)
    fbar = np.asarray(feat_mean, dtype=np.float64)
    s2 = np.asarray(feat_var, dtype=np.float64)
    log_raw = -n_cases * a * fbar - 0.5 * n_cases * a * a * s2
    correction = np.maximum(1.0 + (n_cases * a) ** 2 * s2 / (2.0 * n_particles), 1e-300)
    log_ratio = log_raw - np.log(correction)
    rel_variance = (n_cases * a) ** 2 * s2 / n_particles
    if np.ndim(log_ratio) == 0:
        return RatioEstimate(float(np.exp(log_ratio)), float(log_ratio), float(rel_variance))
    return RatioEstimate(np.exp(log_ratio), log_ratio, rel_variance)


# ---------------------------------------------------------------------------
# Proposal construction and Metropolis-Hastings acceptance.
# ---------------------------------------------------------------------------

@dataclass
class JumpProposal:
    """One add/delete move: the slab value, window, and proposal density."""

    edge: tuple
    direction: str  # "add" | "delete"
    a: float
    delta: float
    proposal_mu: float
    proposal_var: float
    log_q: float


def proposal_params(data_count, n_cases, feat_mean, feat_var, sigma0):
    """Mean and variance of the minimal-variance truncated-Gaussian proposal.

    The acceptance ratio's envelope in `a` is exp(a L - a^2 P / 2) with
    L the gradient of the log posterior at zero edge weight (prior term
    vanishes there) and P = 1/sigma0^2 + N * Var f, so the matching Gaussian
    has mean L / P and variance 1 / P.
    """
    precision = sigma0 ** -2 + n_cases * np.asarray(feat_var, dtype=np.float64)
    score = np.asarray(data_count, dtype=np.float64) - n_cases * np.asarray(feat_mean, dtype=np.float64)
    return score / precision, 1.0 / precision


def slab_proposal(edge, stats: DataStats, moments, sigma0, delta, rng=None,
                  current_a=None, variance_floor=1e-6) -> JumpProposal:
    """Build the jump proposal for one edge.

    For an addition (current_a None) a slab value is drawn from the truncated
    Gaussian; for a deletion the proposal density is evaluated at the current
    value, with the feature mean shifted to its estimated no-edge value
    fbar - a * s2.
    """
    k = stats.spec.index_of(*edge)
    fbar = float(np.asarray(moments.pair_mean)[k])
    s2 = max(float(np.asarray(moments.pair_var)[k]), variance_floor)
    count = float(stats.pair_counts[k])
    if current_a is None:
        mu, var = proposal_params(count, stats.n_cases, fbar, s2, sigma0)
        a, log_q = sample_truncated_normal(mu, np.sqrt(var), -delta, delta, as_generator(rng))
        direction = "add"
    else:
        mean0 = fbar - current_a * s2
        mu, var = proposal_params(count, stats.n_cases, mean0, s2, sigma0)
        a = current_a
        log_q = truncated_normal_logpdf(a, mu, np.sqrt(var), -delta, delta)
        direction = "delete"
    return JumpProposal(
        edge=tuple(edge), direction=direction, a=float(a), delta=float(delta),
        proposal_mu=float(mu), proposal_var=float(var), log_q=float(log_q),
    )


def acceptance_probability(direction, a, log_ratio, data_count, p0, sigma0, log_q):
    """Metropolis-Hastings acceptance probability for one jump.

    Assembles, in the log domain, the product of the data term exp(a * count),
    the partition-ratio estimate, the prior odds p0 N(a; 0, sigma0^2)/(1-p0),
    and the proposal correction 1/q(a); move-type selection probabilities
    cancel because every eligible move is proposed exactly once per sweep.
    Deletions accept with min(1, 1/Q*).  Non-finite terms reject the move.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie strictly inside (0, 1)")
    a = np.asarray(a, dtype=np.float64)
    log_prior_odds = np.log(p0) - np.log1p(-p0) + normal_logpdf(a, sigma0)
    log_qstar = a * np.asarray(data_count, dtype=np.float64) + log_ratio + log_prior_odds - log_q
    if direction == "delete":
        log_qstar = -log_qstar
    prob = np.where(np.isfinite(log_qstar), np.exp(np.minimum(log_qstar, 0.0)), 0.0)
    return float(prob) if np.ndim(prob) == 0 else prob


# ---------------------------------------------------------------------------
# Parallel sweep over all eligible candidates.
# ---------------------------------------------------------------------------

def parallel_sweep(state, momentum, stats: DataStats, rng, *, moments: MomentEstimates = None,
                   particles: ParticleSet = None, jump_coeff=0.01, variance_floor=1e-6,
                   exact_summary=None, diagnostics=None):
    """Propose an add for every inactive candidate and a delete for every
    active candidate whose slab value lies inside its window, all against one
    frozen moment snapshot.  Accepted moves mutate `state` (and the momentum
    bank: fresh N(0,1) on add, zeroed on delete) in place.

    Each candidate consumes its own fixed slots of the pregenerated random
    blocks, so decisions are reproducible regardless of evaluation order.

    In exact mode (`exact_summary` given) the partition ratios, the no-edge
    moments used by delete proposals, and the delete windows are computed
    from the exact feature means via the closed-form single-feature tilt,
    rather than the quadratic sample approximations.
    """
    rng = as_generator(rng)
    n_candidates = len(state.y)
    u_prop = rng.random(n_candidates)
    u_acc = rng.random(n_candidates)
    z_mom = rng.standard_normal(n_candidates)
    n_cases = stats.n_cases
    counts = stats.pair_counts.astype(np.float64)

    if exact_summary is None:
        if moments is None:
            if particles is None:
                raise ValueError("parallel_sweep needs moments, particles, or exact_summary")
            moments = estimate_moments(particles, stats.spec)
        spec = stats.spec
        scratch_w = np.zeros((spec.d, spec.d))
        scratch_f = np.zeros((0, spec.d))
        scratch_x = np.zeros((0, spec.d))
        tallies = _kernels.sweep_core(
            state.y, state.a, momentum.edge, counts,
            np.asarray(moments.pair_mean, dtype=np.float64),
            np.asarray(moments.pair_var, dtype=np.float64),
            n_cases, moments.n, state.sigma0, state.p0,
            jump_coeff, variance_floor, u_prop, u_acc, z_mom,
            np.ascontiguousarray(spec.candidates[:, 0]),
            np.ascontiguousarray(spec.candidates[:, 1]),
            scratch_w, scratch_f, scratch_x,
        )
        if diagnostics is not None:
            for key, value in zip(("add_proposed", "add_accepted", "del_proposed", "del_accepted"), tallies):
                diagnostics[key] = diagnostics.get(key, 0) + int(value)
        return state

    # Exact mode: partition ratios from the closed-form single-feature tilt;
    # delete proposals and windows use the exactly tilted (edge-removed)
    # moments so the add/delete pair is reversible edge-for-edge.
    tallies = _kernels.sweep_core_exact(
        state.y, state.a, momentum.edge, counts,
        np.asarray(exact_summary.pair_mean, dtype=np.float64),
        n_cases, state.sigma0, state.p0, jump_coeff, variance_floor,
        u_prop, u_acc, z_mom,
    )
    if diagnostics is not None:
        for key, value in zip(("add_proposed", "add_accepted", "del_proposed", "del_accepted"), tallies):
            diagnostics[key] = diagnostics.get(key, 0) + int(value)
    return state
