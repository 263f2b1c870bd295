"""Evaluation: group conditional log-likelihood (single models and mixtures),
structure-recovery precision/recall, edge-density summaries, and chain
autocorrelation diagnostics."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import ModelSpec, Parameters
from .utils import CapabilityError, as_generator, check_binary_matrix

GROUP_LIMIT = 20  # exact conditional enumeration bound


@dataclass(frozen=True)
class GroupSpec:
    """A set of variables whose joint conditional is evaluated exactly,
    with everything outside the group clamped to the observed case."""

    members: tuple
    kind: str = "full"

    def __post_init__(self):
        members = tuple(int(i) for i in self.members)
        if len(set(members)) != len(members):
            raise ValueError("group members must be distinct")
        if len(members) > GROUP_LIMIT:
            raise CapabilityError(f"group size {len(members)} exceeds the limit of {GROUP_LIMIT}")
        if len(members) == 0:
            raise ValueError("group must be non-empty")
        object.__setattr__(self, "members", members)

    @classmethod
    def full(cls, d):
        return cls(members=tuple(range(d)), kind="full")

    @classmethod
    def grid_patch(cls, rows, cols, anchor, patch=(3, 3)):
        r0, c0 = anchor
        pr, pc = patch
        if not (0 <= r0 <= rows - pr and 0 <= c0 <= cols - pc):
            raise ValueError("patch does not fit in the grid at this anchor")
        members = tuple((r0 + dr) * cols + (c0 + dc) for dr in range(pr) for dc in range(pc))
        return cls(members=members, kind=f"grid_patch({rows},{cols},{anchor})")


def random_patch_policy(rows, cols, patch=(3, 3)):
    """Per-case policy drawing a uniformly placed patch anchor."""
    pr, pc = patch

    def draw(rng):
        r0 = int(rng.integers(0, rows - pr + 1))
        c0 = int(rng.integers(0, cols - pc + 1))
        return GroupSpec.grid_patch(rows, cols, (r0, c0), patch)

    return draw


def _assignment_table(m):
    idx = np.arange(1 << m, dtype=np.uint32)
    return ((idx[:, None] >> np.arange(m, dtype=np.uint32)) & 1).astype(np.float64)


def _group_log_conditionals(params: Parameters, x_batch, group: GroupSpec):
    """log P(observed group values | clamped complement), one per batch row.

    Enumerates all 2^|group| completions; terms not touching the group cancel
    in the normalization, so only within-group pairs and the group members'
    effective biases (bias plus coupling to clamped neighbours) matter.
    """
    members = np.asarray(group.members)
    d = params.d
    m = len(members)
    x_batch = np.asarray(x_batch, dtype=np.float64)
    w = params.weight_matrix()
    complement = np.setdiff1d(np.arange(d), members)
    # effective bias per member given the clamped complement
    beta = params.biases[members] + x_batch[:, complement] @ w[np.ix_(complement, members)]
    table = _assignment_table(m)
    inside = np.zeros(len(table))
    pos = {int(v): k for k, v in enumerate(members)}
    for (i, j), wij in params.edge_weights.items():
        if i in pos and j in pos:
            inside += wij * table[:, pos[i]] * table[:, pos[j]]
    energies = beta @ table.T + inside  # (B, 2^m)
    log_z = logsumexp(energies, axis=1)
    observed = (x_batch[:, members].astype(np.int64) << np.arange(m)).sum(axis=1)
    return energies[np.arange(len(x_batch)), observed] - log_z


def cll(models, x, group: GroupSpec):
    """Conditional log-likelihood of one case's group under a model or an
    equally weighted mixture (probabilities averaged before the log)."""
    if isinstance(models, Parameters):
        models = [models]
    x = np.asarray(x).reshape(1, -1)
    per_model = np.array([_group_log_conditionals(p, x, group)[0] for p in models])
    return float(logsumexp(per_model) - np.log(len(per_model)))


def cll_dataset(models, dataset, policy, rng=None):
    """Mean and standard deviation of the per-case group CLL over a dataset.

    `policy` is either a fixed GroupSpec or a callable rng -> GroupSpec drawn
    once per case (e.g. random_patch_policy).  Cases sharing a group are
    batched, so random-patch evaluation stays vectorized.
    """
    if isinstance(models, Parameters):
        models = [models]
    x = check_binary_matrix(dataset)
    rng = as_generator(rng)
    n = len(x)
    if callable(policy):
        groups = [policy(rng) for _ in range(n)]
    else:
        groups = [policy] * n
    by_group = defaultdict(list)
    for case_idx, g in enumerate(groups):
        by_group[g.members].append(case_idx)

    scores = np.empty(n)
    for members, case_ids in by_group.items():
        group = GroupSpec(members=members, kind=groups[case_ids[0]].kind)
        batch = x[case_ids]
        per_model = np.stack([_group_log_conditionals(p, batch, group) for p in models])
        scores[case_ids] = logsumexp(per_model, axis=0) - np.log(len(models))
    return float(scores.mean()), float(scores.std())


# ---------------------------------------------------------------------------
# Structure recovery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    f1: float


def pr_curve(inclusion_freq, truth, thresholds, spec: ModelSpec):
    """Precision/recall/F1 of thresholded edge predictions against the truth.

    Precision defaults to 1.0 when nothing is predicted (so curves stay
    defined at high thresholds); F1 is 0 when precision + recall is 0.
    """
    truth = {(min(i, j), max(i, j)) for i, j in truth}
    if not truth:
        raise ValueError("truth edge set is empty; recall is undefined")
    freq = np.asarray(inclusion_freq, dtype=np.float64)
    truth_mask = np.array([(int(i), int(j)) in truth for i, j in spec.candidates])
    points = []
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError("thresholds must lie in (0, 1)")
        predicted = freq > t
        tp = int((predicted & truth_mask).sum())
        fp = int((predicted & ~truth_mask).sum())
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / len(truth)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        points.append(PRPoint(float(t), precision, recall, f1))
    return points


def density(chain):
    """Mean and std of the post-burn-in edge-density trace."""
    trace = np.asarray(chain.density_trace)
    burn = chain.config.resolved_burn_in()
    kept = trace[burn:]
    if kept.size == 0:
        raise ValueError("no post-burn-in iterations in the chain")
    return float(kept.mean()), float(kept.std())


# ---------------------------------------------------------------------------
# Chain diagnostics
# ---------------------------------------------------------------------------

def autocorrelation(series, max_lag):
    """Sample autocorrelation with biased (1/T) normalization; rho[0] = 1."""
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or len(x) <= max_lag:
        raise ValueError("series must be 1-D and longer than max_lag")
    x = x - x.mean()
    var = float(x @ x)
    if var == 0.0:
        raise ValueError("series has zero variance; autocorrelation undefined")
    size = 1 << int(np.ceil(np.log2(2 * len(x))))
    f = np.fft.rfft(x, n=size)
    acov = np.fft.irfft(f * np.conj(f), n=size)[: max_lag + 1]
    return acov / var


def integrated_autocorr_time(series, window_factor=5, max_lag=None):
    """Integrated autocorrelation time 1 + 2 sum rho(k) with a
    self-consistent window (smallest M with M >= window_factor * tau(M))."""
    x = np.asarray(series, dtype=np.float64)
    if max_lag is None:
        max_lag = len(x) - 1
    rho = autocorrelation(x, max_lag)
    tau = 2.0 * np.cumsum(rho) - 1.0
    lags = np.arange(len(tau))
    cut = np.flatnonzero(lags >= window_factor * tau)
    m = cut[0] if cut.size else len(tau) - 1
    return float(tau[m])


# ---------------------------------------------------------------------------
# Plot-ready CSV output
# ---------------------------------------------------------------------------

def write_metrics_csv(path, rows):
    """rows: iterable of dicts with keys (method, density_mean, density_std,
    cll_mean, cll_std, f1_at_0.5); missing values render as empty fields."""
    columns = ["method", "density_mean", "density_std", "cll_mean", "cll_std", "f1_at_0.5"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row.get(c, "") for c in columns])


def write_pr_csv(path, points):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "f1"])
        for p in points:
            writer.writerow([p.threshold, p.precision, p.recall, p.f1])
