"""Conjugate Gibbs updates for the edge-inclusion probability and the slab
standard deviation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .utils import as_generator


@dataclass(frozen=True)
class HyperPriors:
    """Beta(a, b) prior on the inclusion probability and Gamma(c, d)
    (shape, rate) prior on the slab precision."""

    beta_a: float = 5.0
    beta_b: float = 5.0
    gamma_c: float = 5.0
    gamma_d: float = 5.0

    def __post_init__(self):
        if min(self.beta_a, self.beta_b, self.gamma_c, self.gamma_d) <= 0:
            raise ValueError("all hyper-prior parameters must be positive")


def sample_inclusion_prob(priors: HyperPriors, indicators, rng):
    """Draw the inclusion probability given the edge indicators.

    Conjugacy gives Beta(a + #active, b + #inactive).
    """
    rng = as_generator(rng)
    y = np.asarray(indicators)
    n_active = int(np.count_nonzero(y))
    n_inactive = int(y.size - n_active)
    return float(rng.beta(priors.beta_a + n_active, priors.beta_b + n_inactive))


def sample_slab_std(priors: HyperPriors, indicators, slab_values, rng):
    """Draw the slab standard deviation given indicators and slab values.

    The precision is conjugate: Gamma(c + k/2, d + sum(a^2)/2) over the k
    active edges; the return value is precision**-0.5.
    """
    rng = as_generator(rng)
    y = np.asarray(indicators).astype(bool)
    a = np.asarray(slab_values, dtype=np.float64)
    active_sq = float((a[y] ** 2).sum()) if y.size else 0.0
    shape = priors.gamma_c + 0.5 * np.count_nonzero(y)
    rate = priors.gamma_d + 0.5 * active_sq
    precision = rng.gamma(shape, 1.0 / rate)
    return float(precision ** -0.5)
