"""Shared validation helpers, error types, and RNG plumbing."""

from __future__ import annotations

import numpy as np


class CapabilityError(RuntimeError):
    """Requested operation exceeds a configured capability bound (e.g. exact
    enumeration on too many variables)."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared format."""


class DivergenceError(RuntimeError):
    """A sampler step produced non-finite quantities and was aborted."""


def check_binary_matrix(x, min_rows=1, name="dataset"):
    """Validate and return an (N, d) uint8 matrix with entries in {0, 1}."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} row(s), got {x.shape[0]}")
    if x.size and not np.isin(x, (0, 1)).all():
        raise ValueError(f"{name} entries must all be 0 or 1")
    return x.astype(np.uint8, copy=False)


def check_binary_vector(x, d, name="state"):
    """Validate and return a length-d uint8 vector with entries in {0, 1}."""
    x = np.asarray(x)
    if x.shape != (d,):
        raise ValueError(f"{name} must have shape ({d},), got {x.shape}")
    if not np.isin(x, (0, 1)).all():
        raise ValueError(f"{name} entries must all be 0 or 1")
    return x.astype(np.uint8, copy=False)


def as_generator(seed):
    """Coerce None, an int seed, or a Generator into a numpy Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# Named substreams drawn from one root seed.  Components consume independent
# streams so that e.g. the data generator stays reproducible regardless of how
# many draws the sampler makes.
SUBSTREAM_NAMES = ("data", "particles", "lmc", "rjmcmc", "hypers")


def named_substreams(seed):
    """Split one 64-bit seed into the fixed set of named Generator streams."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(SUBSTREAM_NAMES))
    return {name: np.random.default_rng(seq) for name, seq in zip(SUBSTREAM_NAMES, children)}


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
