"""End-to-end posterior sampler: conjugate hyper updates, persistent Gibbs
particle refresh, one preconditioned Langevin step on the continuous
parameters, then a parallel reversible-jump sweep over the edge indicators.

Two modes share the loop.  The approximate mode estimates all model
expectations from the particle bank and skips Metropolis corrections; the
exact mode (small models only) computes expectations and partition ratios by
enumeration and corrects the Langevin step, giving a reference chain whose
stationary distribution is the true posterior.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, langevin, rjmcmc
from .hypers import HyperPriors, sample_inclusion_prob, sample_slab_std
from .model import DataStats, ModelSpec, Parameters
from .states import (
    ENUM_LIMIT,
    ExactOracle,
    MomentEstimates,
    ParticleSet,
    _binary_moments,
)
from .utils import CapabilityError, DivergenceError, as_generator, named_substreams


@dataclass
class SpikeSlabState:
    """Sampler state: indicators, slab values, biases, and hyper-parameters.

    The slab array is candidate-aligned with entries pinned to exactly 0.0
    wherever the indicator is 0, so the stored slab values always coincide
    with the active edge set.
    """

    y: np.ndarray
    a: np.ndarray
    biases: np.ndarray
    p0: float
    sigma0: float

    def check(self):
        if not (0.0 < self.p0 < 1.0):
            raise ValueError("p0 out of range")
        if not (self.sigma0 > 0):
            raise ValueError("sigma0 must be positive")
        if (self.a[self.y == 0] != 0.0).any():
            raise ValueError("slab values stored for inactive edges")
        for arr in (self.a, self.biases):
            if not np.isfinite(arr).all():
                raise ValueError("non-finite state entries")
        return self

    def active_index(self):
        return np.flatnonzero(self.y)

    def weight_matrix(self, spec: ModelSpec):
        w = np.zeros((spec.d, spec.d))
        idx = self.active_index()
        if idx.size:
            ci = spec.candidates[idx, 0]
            cj = spec.candidates[idx, 1]
            w[ci, cj] = self.a[idx]
            w[cj, ci] = self.a[idx]
        return w

    def to_parameters(self, spec: ModelSpec) -> Parameters:
        return Parameters.from_arrays(spec, self.a, self.biases.copy(), active=self.y.astype(bool))


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs for one sampler run; defaults are the desk-scale settings."""

    iterations: int = 200_000
    thin: int = 100
    burn_in: int = None  # default: 10% of iterations
    n_particles: int = 100
    n_gibbs: int = 1
    step_size: float = 1e-3
    momentum_alpha: float = 0.9
    jump_coeff: float = 0.01
    variance_floor: float = 1e-6
    precond_burnin_frac: float = 0.1
    priors: HyperPriors = field(default_factory=HyperPriors)
    sigma_b: float = 10.0
    mode: str = "approximate"
    seed: int = 0
    enumeration_limit: int = ENUM_LIMIT
    fixed_p0: float = None
    fixed_sigma0: float = None

    def resolved_burn_in(self):
        return self.iterations // 10 if self.burn_in is None else self.burn_in

    def validate(self, spec: ModelSpec):
        if self.iterations < 1 or self.thin < 1:
            raise ValueError("iterations and thin must be >= 1")
        if not 0 <= self.resolved_burn_in() < self.iterations:
            raise ValueError("burn_in must lie in [0, iterations)")
        if self.n_particles < 2 or self.n_gibbs < 1:
            raise ValueError("need n_particles >= 2 and n_gibbs >= 1")
        if self.step_size <= 0 or not 0.0 <= self.momentum_alpha <= 1.0:
            raise ValueError("bad Langevin settings")
        if self.mode not in ("approximate", "exact"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "exact" and spec.d > self.enumeration_limit:
            raise CapabilityError(
                f"exact mode enumerates all states; d={spec.d} exceeds the "
                f"limit of {self.enumeration_limit}"
            )
        if self.fixed_p0 is not None and not 0.0 < self.fixed_p0 < 1.0:
            raise ValueError("fixed_p0 must lie in (0, 1)")
        if self.fixed_sigma0 is not None and self.fixed_sigma0 <= 0:
            raise ValueError("fixed_sigma0 must be positive")
        return self

    def to_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "priors"}
        out["priors"] = vars(self.priors).copy()
        return out

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj)
        priors = obj.pop("priors", None)
        if priors is not None:
            obj["priors"] = HyperPriors(**priors)
        return cls(**obj)


@dataclass
class Snapshot:
    """One thinned posterior draw."""

    iteration: int
    p0: float
    sigma0: float
    active_edges: list  # [(i, j, a), ...]
    biases: np.ndarray

    def to_json_obj(self):
        return {
            "iter": self.iteration,
            "p0": self.p0,
            "sigma0": self.sigma0,
            "active_edges": [[int(i), int(j), float(a)] for i, j, a in self.active_edges],
            "biases": [float(b) for b in self.biases],
        }

    @classmethod
    def from_json_obj(cls, obj):
        return cls(
            iteration=int(obj["iter"]),
            p0=float(obj["p0"]),
            sigma0=float(obj["sigma0"]),
            active_edges=[(int(i), int(j), float(a)) for i, j, a in obj["active_edges"]],
            biases=np.asarray(obj["biases"], dtype=np.float64),
        )

    def to_parameters(self, spec: ModelSpec) -> Parameters:
        weights = {(i, j): a for i, j, a in self.active_edges}
        return Parameters(edge_weights=weights, biases=self.biases.copy()).validate_for(spec)


@dataclass
class PosteriorChain:
    """Thinned snapshots plus running per-iteration summaries."""

    spec: ModelSpec
    config: SamplerConfig
    samples: list
    inclusion_freq: np.ndarray
    cond_mean: np.ndarray
    cond_var: np.ndarray
    cond_counts: np.ndarray
    bias_mean: np.ndarray
    density_trace: np.ndarray
    n_kept: int
    diverged: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def cond_std(self):
        with np.errstate(invalid="ignore"):
            return np.sqrt(self.cond_var)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for snap in self.samples:
                fh.write(json.dumps(snap.to_json_obj()) + "\n")

    def write_summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["edge_i", "edge_j", "inclusion_freq", "cond_mean", "cond_std"])
            std = self.cond_std
            for k, (i, j) in enumerate(self.spec.candidates):
                writer.writerow([
                    int(i), int(j),
                    f"{self.inclusion_freq[k]:.10g}",
                    f"{self.cond_mean[k]:.10g}",
                    f"{std[k]:.10g}",
                ])

    @classmethod
    def from_snapshots(cls, snapshots, spec: ModelSpec, config: SamplerConfig = None):
        """Rebuild summary statistics from stored snapshots (e.g. a JSONL
        chain read back from disk); running moments are then over the thinned
        samples rather than every iteration."""
        if not snapshots:
            raise ValueError("no snapshots")
        K = spec.n_candidates
        incl = np.zeros(K)
        s1 = np.zeros(K)
        s2 = np.zeros(K)
        cnt = np.zeros(K)
        bias_sum = np.zeros(spec.d)
        density = np.zeros(len(snapshots))
        for t, snap in enumerate(snapshots):
            bias_sum += snap.biases
            for i, j, a in snap.active_edges:
                k = spec.index_of(i, j)
                incl[k] += 1
                cnt[k] += 1
                s1[k] += a
                s2[k] += a * a
            density[t] = len(snap.active_edges) / max(K, 1)
        n = len(snapshots)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond_mean = np.where(cnt > 0, s1 / np.maximum(cnt, 1), np.nan)
            cond_var = np.where(cnt > 0, np.maximum(s2 / np.maximum(cnt, 1) - cond_mean ** 2, 0.0), np.nan)
        return cls(
            spec=spec,
            config=config or SamplerConfig(iterations=n, thin=1, burn_in=0),
            samples=list(snapshots),
            inclusion_freq=incl / n,
            cond_mean=cond_mean,
            cond_var=cond_var,
            cond_counts=cnt,
            bias_mean=bias_sum / n,
            density_trace=density,
            n_kept=n,
        )


def load_chain_jsonl(path, spec: ModelSpec = None) -> PosteriorChain:
    snapshots = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                snapshots.append(Snapshot.from_json_obj(json.loads(line)))
    if not snapshots:
        raise ValueError(f"{path} holds no snapshots")
    if spec is None:
        spec = ModelSpec.complete(len(snapshots[0].biases))
    return PosteriorChain.from_snapshots(snapshots, spec)


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------

def _initial_state(spec, config, rng) -> SpikeSlabState:
    # Empty graph start: early jump behaviour is then easy to audit.
    K = spec.n_candidates
    p0 = config.fixed_p0 if config.fixed_p0 is not None else float(
        rng.beta(config.priors.beta_a, config.priors.beta_b)
    )
    if config.fixed_sigma0 is not None:
        sigma0 = config.fixed_sigma0
    else:
        sigma0 = float(rng.gamma(config.priors.gamma_c, 1.0 / config.priors.gamma_d) ** -0.5)
    return SpikeSlabState(
        y=np.zeros(K, dtype=np.uint8),
        a=np.zeros(K),
        biases=np.zeros(spec.d),
        p0=p0,
        sigma0=sigma0,
    )


class _ExactGradients:
    """Exact log-posterior, gradients, and feature moments, memoized per
    parameter vector so the leapfrog + Metropolis evaluations share
    enumeration work."""

    def __init__(self, oracle: ExactOracle, stats: DataStats):
        self.oracle = oracle
        self.stats = stats
        self._cache = {}

    def summary(self, edge_values, biases):
        key = (edge_values.tobytes(), biases.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            hit = self.oracle.summary_from_energies(self.oracle.energies(edge_values, biases))
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = hit
        return hit


def run(config: SamplerConfig, stats: DataStats, spec: ModelSpec) -> PosteriorChain:
    """Run the full sampler and collect a thinned posterior chain.

    The chain aborts early (returned with `diverged=True`) if a Langevin step
    produces non-finite quantities.
    """
    config.validate(spec)
    if stats.spec.d != spec.d or not np.array_equal(stats.spec.candidates, spec.candidates):
        raise ValueError("stats were computed for a different spec")
    rngs = named_substreams(config.seed)
    K, d, n_cases = spec.n_candidates, spec.d, stats.n_cases
    exact = config.mode == "exact"

    state = _initial_state(spec, config, rngs["hypers"])
    momentum = langevin.MomentumState.initialize(
        K, d, rngs["lmc"], config.momentum_alpha, config.step_size
    )
    particles = ParticleSet.initialize(config.n_particles, d, rngs["particles"])
    precond = langevin.Preconditioner(K, d)
    precond_burnin = max(1, int(round(config.precond_burnin_frac * config.iterations)))
    burn_in = config.resolved_burn_in()

    oracle = ExactOracle(spec, config.enumeration_limit) if exact else None
    exact_grad = _ExactGradients(oracle, stats) if exact else None

    pair_prior_counts = stats.pair_counts.astype(np.float64)
    node_counts = stats.node_counts.astype(np.float64)
    particles_f = particles.x.astype(np.float64)
    cand_i = np.ascontiguousarray(spec.candidates[:, 0]) if K else np.zeros(0, dtype=np.int64)
    cand_j = np.ascontiguousarray(spec.candidates[:, 1]) if K else np.zeros(0, dtype=np.int64)

    incl_sum = np.zeros(K)
    cond_sum = np.zeros(K)
    cond_sumsq = np.zeros(K)
    cond_cnt = np.zeros(K)
    bias_sum = np.zeros(d)
    density_trace = np.zeros(config.iterations)
    samples = []
    diagnostics = {}
    diverged = False
    n_kept = 0

    # dense coupling matrix and per-particle local fields, maintained
    # incrementally through the run
    weights = state.weight_matrix(spec)
    fields = particles_f @ weights + state.biases
    hyper_rng = rngs["hypers"]
    particle_rng = rngs["particles"]
    lmc_rng = rngs["lmc"]
    jump_rng = rngs["rjmcmc"]
    tally = np.zeros(4, dtype=np.int64)

    for it in range(config.iterations):
        # 1. hyper-parameters (conjugate draws unless pinned)
        if config.fixed_p0 is None:
            state.p0 = sample_inclusion_prob(config.priors, state.y, hyper_rng)
        if config.fixed_sigma0 is None:
            state.sigma0 = sample_slab_std(config.priors, state.y, state.a, hyper_rng)

        # 2. refresh the persistent particles under the current parameters
        uniforms = particle_rng.random((config.n_gibbs, d, config.n_particles))
        _kernels.gibbs_update_fields(particles_f, fields, weights, uniforms)

        if exact:
            summary = exact_grad.summary(state.a * state.y, state.biases)
            pair_mean, pair_var = summary.pair_mean, summary.pair_var
            node_mean, node_var = summary.node_mean, summary.node_var
        else:
            pair_mean = _kernels.pair_means_core(particles_f, cand_i, cand_j)
            node_mean = particles_f.mean(axis=0)
            pair_var = _binary_moments(pair_mean, config.n_particles)
            node_var = _binary_moments(node_mean, config.n_particles)

        # 3. preconditioner accumulation during its burn-in window
        if not precond.frozen:
            curvature = MomentEstimates(pair_mean, pair_var, node_mean, node_var, config.n_particles)
            precond.accumulate(curvature, state.sigma0, config.sigma_b, n_cases)
            if it + 1 >= precond_burnin:
                precond.freeze()

        # 4. Langevin step on the active slab values and all biases
        if exact:
            act = state.active_index()
            m = act.size
            theta = np.concatenate([state.a[act], state.biases])
            p = np.concatenate([momentum.edge[act], momentum.bias])
            scale = np.concatenate([precond.edge_scale[act], precond.bias_scale])
            counts_vec = np.concatenate([pair_prior_counts[act], node_counts])
            prior_var = np.concatenate([
                np.full(m, state.sigma0 ** 2),
                np.full(d, config.sigma_b ** 2),
            ])

            def split(th):
                ev = np.zeros(K)
                ev[act] = th[:m]
                return ev, th[m:]

            def grad_fn(th):
                ev, b = split(th)
                s = exact_grad.summary(ev, b)
                means = np.concatenate([s.pair_mean[act], s.node_mean])
                return langevin.grad_arrays(th, counts_vec, means, n_cases, prior_var)

            def log_post_fn(th):
                ev, b = split(th)
                s = exact_grad.summary(ev, b)
                return float(
                    th @ counts_vec - n_cases * s.log_z - 0.5 * float(th @ (th / prior_var))
                )

            try:
                theta, p, _ = langevin.lmc_update_metropolis(
                    theta, p, scale, config.step_size, config.momentum_alpha,
                    grad_fn, log_post_fn, lmc_rng,
                )
            except DivergenceError:
                diverged = True
                density_trace = density_trace[: it]
                break
            state.a[act] = theta[:m]
            state.biases = theta[m:]
            momentum.edge[act] = p[:m]
            momentum.bias = p[m:]
        else:
            z = lmc_rng.standard_normal(K + d)
            bad = _kernels.lmc_core(
                state.y, state.a, state.biases, momentum.edge, momentum.bias,
                precond.edge_scale, precond.bias_scale,
                pair_prior_counts, node_counts, pair_mean, node_mean,
                state.sigma0, config.sigma_b, n_cases,
                config.step_size, config.momentum_alpha, z,
                cand_i, cand_j, weights, fields, particles_f,
            )
            if bad:
                diverged = True
                density_trace = density_trace[: it]
                break

        # 5. reversible-jump sweep over all candidates
        if exact:
            sweep_summary = exact_grad.summary(state.a * state.y, state.biases)
            rjmcmc.parallel_sweep(
                state, momentum, stats, jump_rng,
                exact_summary=sweep_summary,
                jump_coeff=config.jump_coeff, variance_floor=config.variance_floor,
                diagnostics=diagnostics,
            )
            # exact mode rebuilds the dense buffers instead of tracking deltas
            weights = state.weight_matrix(spec)
            fields = particles_f @ weights + state.biases
        else:
            u_prop = jump_rng.random(K)
            u_acc = jump_rng.random(K)
            z_mom = jump_rng.standard_normal(K)
            tally += _kernels.sweep_core(
                state.y, state.a, momentum.edge, pair_prior_counts,
                pair_mean, pair_var, n_cases, config.n_particles,
                state.sigma0, state.p0, config.jump_coeff, config.variance_floor,
                u_prop, u_acc, z_mom, cand_i, cand_j, weights, fields, particles_f,
            )

        # 6. bookkeeping
        if it >= burn_in:
            n_kept += 1
            density_trace[it] = _kernels.chain_stats_core(
                state.y, state.a, state.biases,
                incl_sum, cond_sum, cond_sumsq, cond_cnt, bias_sum,
            )
            if (it - burn_in) % config.thin == 0:
                idx = state.active_index()
                samples.append(Snapshot(
                    iteration=it + 1,
                    p0=state.p0,
                    sigma0=state.sigma0,
                    active_edges=[
                        (int(spec.candidates[k, 0]), int(spec.candidates[k, 1]), float(state.a[k]))
                        for k in idx
                    ],
                    biases=state.biases.copy(),
                ))
        else:
            density_trace[it] = state.y.mean() if K else 0.0

    if not exact:
        for key, value in zip(("add_proposed", "add_accepted", "del_proposed", "del_accepted"), tally):
            diagnostics[key] = int(value)

    np.copyto(particles.x, particles_f.astype(np.uint8))
    denom = max(n_kept, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_mean = np.where(cond_cnt > 0, cond_sum / np.maximum(cond_cnt, 1), np.nan)
        cond_var = np.where(
            cond_cnt > 0,
            np.maximum(cond_sumsq / np.maximum(cond_cnt, 1) - cond_mean ** 2, 0.0),
            np.nan,
        )
    return PosteriorChain(
        spec=spec,
        config=config,
        samples=samples,
        inclusion_freq=incl_sum / denom,
        cond_mean=cond_mean,
        cond_var=cond_var,
        cond_counts=cond_cnt,
        bias_mean=bias_sum / denom,
        density_trace=density_trace,
        n_kept=n_kept,
        diverged=diverged,
        diagnostics=diagnostics,
    )


def run_fixed_p0(config: SamplerConfig, stats: DataStats, spec: ModelSpec, p0: float) -> PosteriorChain:
    """Run with the inclusion probability pinned (slab scale still sampled)."""
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must lie in (0, 1)")
    return run(replace(config, fixed_p0=p0), stats, spec)


def posterior_models(chain: PosteriorChain, k: int, rng) -> list:
    """k distinct snapshots converted to concrete Parameters (mixture
    components for fully Bayesian prediction)."""
    rng = as_generator(rng)
    if k > len(chain.samples):
        raise ValueError(f"requested {k} models but the chain stores only {len(chain.samples)}")
    idx = rng.choice(len(chain.samples), size=k, replace=False)
    return [chain.samples[i].to_parameters(chain.spec) for i in idx]


def posterior_mean_model(chain: PosteriorChain, threshold: float = 0.5) -> Parameters:
    """Single thresholded model: edges with inclusion frequency above the
    threshold, at their conditional posterior means, plus mean biases."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    keep = chain.inclusion_freq > threshold
    values = np.where(keep, np.nan_to_num(chain.cond_mean), 0.0)
    return Parameters.from_arrays(chain.spec, values, chain.bias_mean.copy(), active=keep)
