"""Model-state machinery: persistent Gibbs particles, feature moment
estimates, and the exact enumeration oracle for small variable counts.

Particles are binary state vectors carried across sampler iterations (never
re-initialized from data) so that slowly drifting parameters keep them close
to the model's stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ModelSpec, Parameters
from .utils import CapabilityError, as_generator, check_binary_matrix

ENUM_LIMIT = 20  # 2^20 states keeps exact enumeration under a few seconds


@dataclass
class ParticleSet:
    """A bank of n >= 2 persistent chain states, one per row."""

    x: np.ndarray

    def __post_init__(self):
        self.x = check_binary_matrix(self.x, min_rows=2, name="particles")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    @classmethod
    def initialize(cls, n, d, rng):
        """Fresh particles, each site i.i.d. Bernoulli(0.5)."""
        rng = as_generator(rng)
        return cls(rng.integers(0, 2, size=(n, d), dtype=np.uint8))


@dataclass
class MomentEstimates:
    """Sample mean and (n-1)-denominator sample variance of every feature."""

    pair_mean: np.ndarray
    pair_var: np.ndarray
    node_mean: np.ndarray
    node_var: np.ndarray
    n: int


@dataclass
class ExactSummary:
    """Exact log-partition and first two feature moments of a small model."""

    log_z: float
    pair_mean: np.ndarray
    pair_var: np.ndarray
    node_mean: np.ndarray
    node_var: np.ndarray
    state_probs: np.ndarray = None


def _logsumexp(values):
    m = values.max()
    return float(m + np.log(np.exp(values - m).sum()))


def gibbs_sweep_arrays(x, weights, biases, steps, rng):
    """Run `steps` full sweeps of single-site Gibbs updates, in place.

    Sites are visited in ascending index order; all rows (independent chains)
    update a site simultaneously.  The conditional is
    P(x_i = 1 | rest) = sigmoid(b_i + sum_j w_ij x_j).
    """
    n, d = x.shape
    xf = x.astype(np.float64)
    cols = np.ascontiguousarray(weights.T)
    uniforms = rng.random((steps, d, n))
    _kernels.gibbs_sweep_core(xf, cols, np.asarray(biases, dtype=np.float64), uniforms)
    np.copyto(x, xf.astype(np.uint8))
    return x


def gibbs_sweep(particles: ParticleSet, params: Parameters, steps, rng) -> ParticleSet:
    """Advance every particle by `steps` Gibbs sweeps under `params`.

    The particle array is updated in place (persistence) and the same
    ParticleSet is returned.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if params.d != particles.d:
        raise ValueError("parameter dimension does not match particles")
    rng = as_generator(rng)
    gibbs_sweep_arrays(particles.x, params.weight_matrix(), params.biases, steps, rng)
    return particles


def pair_products(x, candidates):
    """(n, K) matrix of pairwise product features for each row of x."""
    xf = x.astype(np.float64)
    if len(candidates) == 0:
        return np.zeros((x.shape[0], 0))
    return xf[:, candidates[:, 0]] * xf[:, candidates[:, 1]]


def _binary_moments(means, n):
    # For f in {0,1}: sum (f - fbar)^2 = n * fbar * (1 - fbar), so the
    # unbiased sample variance needs only the mean.
    return n / (n - 1.0) * means * (1.0 - means)


def estimate_moments(particles: ParticleSet, spec: ModelSpec) -> MomentEstimates:
    """Unbiased sample mean/variance of all pair and bias features."""
    n = particles.n
    if n < 2:
        raise ValueError("need at least 2 particles for a sample variance")
    pm = _kernels.pair_means_core(
        particles.x.astype(np.float64),
        np.ascontiguousarray(spec.candidates[:, 0]),
        np.ascontiguousarray(spec.candidates[:, 1]),
    )
    nm = particles.x.mean(axis=0, dtype=np.float64)
    return MomentEstimates(
        pair_mean=pm,
        pair_var=_binary_moments(pm, n),
        node_mean=nm,
        node_var=_binary_moments(nm, n),
        n=n,
    )


def tilted_feature_stats(feature_mean, delta):
    """Closed-form effect of adding `delta` to one binary feature's weight.

    Tilting by exp(delta * f) with f in {0,1} reweights only the f=1 states:
    log Z_new - log Z_old = log(1 - p + p e^delta) and the new feature mean is
    p e^delta / (1 - p + p e^delta), where p is the feature mean before the
    tilt.  Returns (log_mass, new_mean).
    """
    p = np.asarray(feature_mean, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    # log(1 - p + p e^d) computed stably for large positive/negative d
    log_mass = np.where(
        delta > 0,
        delta + np.log(p + (1.0 - p) * np.exp(-delta)),
        np.log1p(p * np.expm1(delta)),
    )
    new_mean = p * np.exp(delta - log_mass)
    return log_mass, new_mean


class ExactOracle:
    """Exhaustive-enumeration inference for models with d <= ENUM_LIMIT.

    Precomputes the full state table once per spec; per-parameter queries are
    then dense linear algebra over all 2^d states.
    """

    # Precomputing the pair-feature table is only worthwhile when it fits
    # comfortably in memory; otherwise features are formed per query.
    _PAIR_TABLE_MAX = 1 << 24

    def __init__(self, spec: ModelSpec, limit=ENUM_LIMIT):
        if spec.d > limit:
            raise CapabilityError(
                f"exact enumeration supports up to {limit} variables, got d={spec.d}"
            )
        self.spec = spec
        n_states = 1 << spec.d
        idx = np.arange(n_states, dtype=np.uint32)
        self.states = ((idx[:, None] >> np.arange(spec.d, dtype=np.uint32)) & 1).astype(np.float64)
        if n_states * max(spec.n_candidates, 1) <= self._PAIR_TABLE_MAX:
            self.pair_table = pair_products(self.states, spec.candidates)
            # one fused table so an energy evaluation is a single matvec
            self.feature_table = np.ascontiguousarray(np.hstack([self.pair_table, self.states]))
        else:
            self.pair_table = None
            self.feature_table = None

    def energies(self, edge_values, biases):
        edge_values = np.asarray(edge_values, dtype=np.float64)
        if self.feature_table is not None:
            return self.feature_table @ np.concatenate([edge_values, biases])
        e = self.states @ np.asarray(biases, dtype=np.float64)
        active = np.flatnonzero(edge_values)
        for k in active:
            i, j = self.spec.candidates[k]
            e += edge_values[k] * self.states[:, i] * self.states[:, j]
        return e

    def summary_from_energies(self, energies, keep_probs=False) -> ExactSummary:
        log_z = _logsumexp(energies)
        probs = np.exp(energies - log_z)
        if self.feature_table is not None:
            means = probs @ self.feature_table
            pair_mean = means[: self.spec.n_candidates]
            node_mean = means[self.spec.n_candidates:]
        else:
            pair_mean = np.array([
                probs @ (self.states[:, i] * self.states[:, j])
                for i, j in self.spec.candidates
            ])
            node_mean = probs @ self.states
        return ExactSummary(
            log_z=log_z,
            pair_mean=pair_mean,
            pair_var=pair_mean * (1.0 - pair_mean),
            node_mean=node_mean,
            node_var=node_mean * (1.0 - node_mean),
            state_probs=probs if keep_probs else None,
        )

    def summary(self, params: Parameters, keep_probs=False) -> ExactSummary:
        params.validate_for(self.spec)
        e = self.energies(params.weight_vector(self.spec), params.biases)
        return self.summary_from_energies(e, keep_probs=keep_probs)

    def sample(self, params: Parameters, count, rng):
        rng = as_generator(rng)
        summary = self.summary(params, keep_probs=True)
        if count == 0:
            return np.zeros((0, self.spec.d), dtype=np.uint8)
        idx = rng.choice(len(summary.state_probs), size=count, p=summary.state_probs)
        return self.states[idx].astype(np.uint8)


def exact_summary(params: Parameters, spec: ModelSpec, limit=ENUM_LIMIT, keep_probs=False) -> ExactSummary:
    """Exact logZ and feature moments by full enumeration (d <= limit)."""
    return ExactOracle(spec, limit=limit).summary(params, keep_probs=keep_probs)


def exact_sample(params: Parameters, spec: ModelSpec, count, rng, limit=ENUM_LIMIT):
    """I.i.d. draws from the enumerated distribution over all 2^d states."""
    return ExactOracle(spec, limit=limit).sample(params, count, rng)
