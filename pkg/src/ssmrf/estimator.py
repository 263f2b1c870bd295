"""Scikit-learn style front end: fit a binary dataset, expose the posterior
over structures, score held-out data, and draw samples from the learned
model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import engine
from .evaluation import GROUP_LIMIT, GroupSpec, cll_dataset
from .hypers import HyperPriors
from .model import ModelSpec, Parameters, compute_stats
from .states import ParticleSet, gibbs_sweep
from .utils import check_binary_matrix


class SpikeSlabMRF(BaseEstimator):
    """Bayesian structure learning for a pairwise binary Markov random field.

    ``fit`` runs the MCMC sampler over edge indicators, slab weights, biases,
    and hyper-parameters; the fitted estimator exposes per-edge inclusion
    probabilities, a thresholded posterior-mean model, and the full thinned
    chain.  ``score`` returns the mean conditional log-likelihood per case
    under an equally weighted mixture of posterior samples.

    Parameters mirror the sampler configuration; see
    :class:`ssmrf.engine.SamplerConfig`.
    """

    def __init__(self, iterations=200_000, thin=100, burn_in=None, n_particles=100,
                 n_gibbs=1, step_size=1e-3, momentum_alpha=0.9, jump_coeff=0.01,
                 variance_floor=1e-6, precond_burnin_frac=0.1,
                 beta_a=5.0, beta_b=5.0, gamma_c=5.0, gamma_d=5.0, sigma_b=10.0,
                 mode="approximate", fixed_p0=None, fixed_sigma0=None,
                 threshold=0.5, n_mixture=100, random_state=0):
        self.iterations = iterations
        self.thin = thin
        self.burn_in = burn_in
        self.n_particles = n_particles
        self.n_gibbs = n_gibbs
        self.step_size = step_size
        self.momentum_alpha = momentum_alpha
        self.jump_coeff = jump_coeff
        self.variance_floor = variance_floor
        self.precond_burnin_frac = precond_burnin_frac
        self.beta_a = beta_a
        self.beta_b = beta_b
        self.gamma_c = gamma_c
        self.gamma_d = gamma_d
        self.sigma_b = sigma_b
        self.mode = mode
        self.fixed_p0 = fixed_p0
        self.fixed_sigma0 = fixed_sigma0
        self.threshold = threshold
        self.n_mixture = n_mixture
        self.random_state = random_state

    def _config(self):
        return engine.SamplerConfig(
            iterations=self.iterations,
            thin=self.thin,
            burn_in=self.burn_in,
            n_particles=self.n_particles,
            n_gibbs=self.n_gibbs,
            step_size=self.step_size,
            momentum_alpha=self.momentum_alpha,
            jump_coeff=self.jump_coeff,
            variance_floor=self.variance_floor,
            precond_burnin_frac=self.precond_burnin_frac,
            priors=HyperPriors(self.beta_a, self.beta_b, self.gamma_c, self.gamma_d),
            sigma_b=self.sigma_b,
            mode=self.mode,
            seed=self.random_state,
            fixed_p0=self.fixed_p0,
            fixed_sigma0=self.fixed_sigma0,
        )

    def fit(self, X, y=None):
        X = check_binary_matrix(X, name="X")
        self.n_features_in_ = X.shape[1]
        spec = ModelSpec.complete(self.n_features_in_)
        stats = compute_stats(X, spec)
        self.chain_ = engine.run(self._config(), stats, spec)
        self.spec_ = spec
        self.candidates_ = spec.candidates
        self.inclusion_probs_ = self.chain_.inclusion_freq
        pm = engine.posterior_mean_model(self.chain_, self.threshold)
        self.model_ = pm
        self.edge_weights_ = dict(pm.edge_weights)
        self.biases_ = pm.biases
        self.density_ = float(self.inclusion_probs_.mean()) if len(self.inclusion_probs_) else 0.0
        return self

    def _check_fitted(self):
        if not hasattr(self, "chain_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def _mixture(self, rng):
        k = min(self.n_mixture, len(self.chain_.samples))
        if k == 0:
            return [self.model_]
        return engine.posterior_models(self.chain_, k, rng)

    def score(self, X, y=None):
        """Mean per-case conditional log-likelihood under the posterior
        mixture; the group is all variables when that is enumerable, else a
        random 9-variable subset per case."""
        self._check_fitted()
        X = check_binary_matrix(X, name="X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError("X has a different number of columns than the training data")
        rng = np.random.default_rng(self.random_state)
        models = self._mixture(rng)
        d = self.n_features_in_
        if d <= GROUP_LIMIT:
            policy = GroupSpec.full(d)
        else:
            def policy(r, _d=d):
                members = r.choice(_d, size=9, replace=False)
                return GroupSpec(members=tuple(int(v) for v in members), kind="random_subset")
        mean, _ = cll_dataset(models, X, policy, rng)
        return mean

    def sample(self, n_samples, n_sweeps=1000, random_state=None, scheme="posterior-mean"):
        """Draw states from the learned model by Gibbs sampling.

        scheme "posterior-mean" samples from the thresholded posterior-mean
        model; "mixture" assigns each returned state to a random posterior
        component.
        """
        self._check_fitted()
        rng = np.random.default_rng(self.random_state if random_state is None else random_state)
        if scheme == "posterior-mean":
            assignments = [(self.model_, n_samples)]
        elif scheme == "mixture":
            models = self._mixture(rng)
            picks = rng.integers(0, len(models), size=n_samples)
            assignments = [(models[m], int((picks == m).sum())) for m in range(len(models))]
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        chunks = []
        for params, count in assignments:
            if count == 0:
                continue
            particles = ParticleSet.initialize(max(count, 2), self.n_features_in_, rng)
            gibbs_sweep(particles, params, n_sweeps, rng)
            chunks.append(particles.x[:count])
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.n_features_in_), dtype=np.uint8)
