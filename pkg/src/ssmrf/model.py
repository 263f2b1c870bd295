"""Log-linear pairwise Markov random field over binary {0,1} variables.

The unnormalized log-probability of a state x is

    sum_{(i,j) in candidates} w_ij * x_i * x_j  +  sum_i b_i * x_i

with pairwise product features and per-variable bias features.  Edge weights
are stored sparsely, so candidates with weight zero cost nothing during
energy evaluation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .utils import check_binary_matrix, check_binary_vector


def all_pairs(d):
    """All unordered pairs (i, j), i < j, in lexicographic order."""
    return np.array([(i, j) for i in range(d - 1) for j in range(i + 1, d)], dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class ModelSpec:
    """Variable count plus the ordered candidate edge set.

    The default candidate set is all d(d-1)/2 pairs.  States live in {0,1}.
    """

    d: int
    candidates: np.ndarray = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        cand = self.candidates
        if cand is None:
            cand = all_pairs(self.d)
        cand = np.asarray(cand, dtype=np.int64).reshape(-1, 2)
        if cand.size:
            if not (cand[:, 0] < cand[:, 1]).all():
                raise ValueError("candidate pairs must satisfy i < j")
            if cand.min() < 0 or cand.max() >= self.d:
                raise ValueError("candidate pair indices must lie in [0, d)")
            if len({(int(i), int(j)) for i, j in cand}) != len(cand):
                raise ValueError("duplicate candidate pairs")
        object.__setattr__(self, "candidates", cand)

    @classmethod
    def complete(cls, d):
        return cls(d=d)

    @property
    def n_candidates(self):
        return len(self.candidates)

    @cached_property
    def pair_index(self):
        """Map (i, j) -> position in the candidate ordering."""
        return {(int(i), int(j)): k for k, (i, j) in enumerate(self.candidates)}

    def index_of(self, i, j):
        if i > j:
            i, j = j, i
        return self.pair_index[(int(i), int(j))]


@dataclass
class Parameters:
    """Sparse edge weights keyed by (i, j) pair plus a dense bias vector."""

    edge_weights: dict
    biases: np.ndarray

    def __post_init__(self):
        self.edge_weights = {(int(i), int(j)): float(w) for (i, j), w in self.edge_weights.items()}
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.biases.ndim != 1:
            raise ValueError("biases must be a 1-D vector")
        for i, j in self.edge_weights:
            if not (0 <= i < j < len(self.biases)):
                raise ValueError(f"edge ({i},{j}) out of range for d={len(self.biases)}")

    @property
    def d(self):
        return len(self.biases)

    def validate_for(self, spec: ModelSpec):
        if self.d != spec.d:
            raise ValueError(f"parameters have d={self.d}, spec has d={spec.d}")
        idx = spec.pair_index
        for pair in self.edge_weights:
            if pair not in idx:
                raise ValueError(f"edge {pair} is not in the candidate set")
        return self

    def weight_matrix(self):
        """Dense symmetric (d, d) coupling matrix; zero diagonal."""
        w = np.zeros((self.d, self.d))
        for (i, j), v in self.edge_weights.items():
            w[i, j] = w[j, i] = v
        return w

    def weight_vector(self, spec: ModelSpec):
        """Edge weights as a (n_candidates,) array aligned to spec.candidates."""
        out = np.zeros(spec.n_candidates)
        idx = spec.pair_index
        for pair, v in self.edge_weights.items():
            out[idx[pair]] = v
        return out

    @classmethod
    def zeros(cls, d):
        return cls(edge_weights={}, biases=np.zeros(d))

    @classmethod
    def from_arrays(cls, spec: ModelSpec, edge_values, biases, active=None):
        """Build from a candidate-aligned value array, keeping only nonzero
        (or explicitly activated) entries."""
        edge_values = np.asarray(edge_values, dtype=np.float64)
        if active is None:
            active = edge_values != 0.0
        weights = {
            (int(i), int(j)): float(v)
            for (i, j), v, keep in zip(spec.candidates, edge_values, active)
            if keep
        }
        return cls(edge_weights=weights, biases=biases)


@dataclass(frozen=True)
class DataStats:
    """Cached sufficient statistics of a binary dataset.

    pair_counts[k] = sum_m x_i x_j for candidate k = (i, j);
    node_counts[i] = sum_m x_i.
    """

    n_cases: int
    pair_counts: np.ndarray
    node_counts: np.ndarray
    spec: ModelSpec

    def __post_init__(self):
        pc, nc = self.pair_counts, self.node_counts
        upper = np.minimum(nc[self.spec.candidates[:, 0]], nc[self.spec.candidates[:, 1]]) \
            if len(pc) else np.zeros(0)
        if len(pc) and ((pc < 0).any() or (pc > upper).any()):
            raise ValueError("pair counts inconsistent with node counts")
        if (nc < 0).any() or (nc > self.n_cases).any():
            raise ValueError("node counts outside [0, N]")


def log_unnormalized(x, params: Parameters):
    """Exponent of the model's probability for one state (log Z omitted)."""
    x = check_binary_vector(x, params.d)
    total = float(x @ params.biases)
    for (i, j), w in params.edge_weights.items():
        if x[i] and x[j]:
            total += w
    return total


def compute_stats(dataset, spec: ModelSpec) -> DataStats:
    """Sufficient statistics (pairwise and singleton counts) of a dataset."""
    x = check_binary_matrix(dataset, min_rows=1)
    if x.shape[1] != spec.d:
        raise ValueError(f"dataset has {x.shape[1]} columns, spec.d={spec.d}")
    xf = x.astype(np.int64)
    node_counts = xf.sum(axis=0)
    if spec.n_candidates:
        ci, cj = spec.candidates[:, 0], spec.candidates[:, 1]
        pair_counts = (xf[:, ci] * xf[:, cj]).sum(axis=0)
    else:
        pair_counts = np.zeros(0, dtype=np.int64)
    return DataStats(n_cases=x.shape[0], pair_counts=pair_counts, node_counts=node_counts, spec=spec)


def ising_to_boltzmann(couplings: dict, fields) -> Parameters:
    """Convert a +-1-state Ising model to the equivalent {0,1}-state model.

    Substituting s = 2x - 1 into sum J_ij s_i s_j + sum h_i s_i gives
    w_ij = 4 J_ij and b_i = 2 h_i - 2 sum_{j != i} J_ij; the discarded
    constant offset is absorbed by the normalizer, so both parametrizations
    assign identical probabilities to corresponding states.
    """
    fields = np.asarray(fields, dtype=np.float64)
    d = len(fields)
    biases = 2.0 * fields
    weights = {}
    for (i, j), coupling in couplings.items():
        if i > j:
            i, j = j, i
        if not (0 <= i < j < d):
            raise ValueError(f"coupling ({i},{j}) out of range for d={d}")
        weights[(int(i), int(j))] = 4.0 * float(coupling)
        biases[i] -= 2.0 * coupling
        biases[j] -= 2.0 * coupling
    return Parameters(edge_weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# Model file format: JSON with candidate-aligned weights.
# ---------------------------------------------------------------------------

def model_to_dict(spec: ModelSpec, params: Parameters):
    params.validate_for(spec)
    return {
        "d": spec.d,
        "candidates": [[int(i), int(j)] for i, j in spec.candidates],
        "edge_weights": [float(v) for v in params.weight_vector(spec)],
        "biases": [float(b) for b in params.biases],
    }


def model_from_dict(obj):
    spec = ModelSpec(d=int(obj["d"]), candidates=np.asarray(obj["candidates"], dtype=np.int64))
    weights = np.asarray(obj["edge_weights"], dtype=np.float64)
    if len(weights) != spec.n_candidates:
        raise ValueError("edge_weights length does not match candidate count")
    params = Parameters.from_arrays(spec, weights, np.asarray(obj["biases"], dtype=np.float64))
    return spec, params


def save_model(path, spec: ModelSpec, params: Parameters):
    with open(path, "w") as fh:
        json.dump(model_to_dict(spec, params), fh, indent=1)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
