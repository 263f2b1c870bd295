"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The expensive block-model reproduction (approximate vs exact chains) runs
once in a session fixture, with the two chains on separate processes; the
density, CLL, and matching criteria all read from it.
"""

import concurrent.futures
import itertools
import multiprocessing
import time

import numpy as np
import pytest
from scipy import stats as sps
from scipy.special import logsumexp

from ssmrf import data as data_mod
from ssmrf import engine, evaluation, langevin
from ssmrf.hypers import HyperPriors, sample_inclusion_prob, sample_slab_std
from ssmrf.model import ModelSpec, Parameters, compute_stats
from ssmrf.rjmcmc import jump_width, partition_ratio_estimate
from ssmrf.states import ExactOracle, exact_sample, exact_summary
from ssmrf.utils import named_substreams

# ---------------------------------------------------------------------------
# Run-length and tolerance settings for the long reproductions.  The chains
# use the published sampler defaults; lengths are sized so Monte Carlo error
# is comfortably below each tolerance (slab values decorrelate over ~1e5
# iterations at step size 1e-3 with momentum 0.9).
# ---------------------------------------------------------------------------

APPROX_ITERATIONS = 24_000_000
APPROX_BURN_IN = 6_000_000
APPROX_THIN = 2_000
EXACT_ITERATIONS = 2_000_000
EXACT_BURN_IN = 250_000
EXACT_THIN = 500
EXACT_STEP_SIZE = 0.05
EXACT_JUMP_COEFF = 0.5

LATTICE_ITERATIONS = 6_000_000
LATTICE_BURN_IN = 1_500_000

# Block instance for the reproduction: chosen so the generated model has
# exactly 20 true edges (20/66 is the reference density below).
BLOCK_TRUTH_SEED = 33
BLOCK_DATA_SEED = 33

TRUE_BLOCK_DENSITY = 20 / 66


def report(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status} — {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# Criterion 1: conjugate hyper updates match closed forms
# ---------------------------------------------------------------------------

def test_criterion_1_conjugacy_exactness():
    rng = np.random.default_rng(0)
    y = np.zeros(66, dtype=np.uint8)
    y[:20] = 1
    draws = np.array([sample_inclusion_prob(HyperPriors(), y, rng) for _ in range(100_000)])
    beta_ref = sps.beta(25, 51)
    mean_err = abs(draws.mean() - 25 / 76)
    var_ratio = draws.var() / beta_ref.var()

    a = np.zeros(66)
    a[:20] = rng.normal(0, 1.2, 20)
    gam_shape = 5 + 10.0
    gam_rate = 5 + 0.5 * float((a[:20] ** 2).sum())
    prec = np.array([
        sample_slab_std(HyperPriors(), y, a, rng) ** -2 for _ in range(100_000)
    ])
    gam_ref = sps.gamma(a=gam_shape, scale=1 / gam_rate)
    gmean_err = abs(prec.mean() / gam_ref.mean() - 1.0)
    gvar_ratio = prec.var() / gam_ref.var()

    ok = mean_err < 0.005 and abs(var_ratio - 1) < 0.05 and gmean_err < 0.01 and abs(gvar_ratio - 1) < 0.05
    report(1, ok, f"beta mean err {mean_err:.2g}, var ratio {var_ratio:.3f}; "
                  f"gamma mean rel err {gmean_err:.2g}, var ratio {gvar_ratio:.3f}")


# ---------------------------------------------------------------------------
# Criterion 2: gradient matches finite differences of the exact log posterior
# ---------------------------------------------------------------------------

def _exact_log_posterior(params, stats, sigma0, sigma_b):
    spec = stats.spec
    w = params.weight_vector(spec)
    value = float(w @ stats.pair_counts + params.biases @ stats.node_counts)
    value -= stats.n_cases * exact_summary(params, spec).log_z
    value -= float((w**2).sum()) / (2 * sigma0**2)
    value -= float((params.biases**2).sum()) / (2 * sigma_b**2)
    return value


def test_criterion_2_gradient_oracle():
    from ssmrf.langevin import grad_log_posterior

    sigma0, sigma_b = 1.2, 10.0
    h = 1e-5
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        spec = ModelSpec.complete(5)
        active = rng.random(spec.n_candidates) < 0.6
        params = Parameters.from_arrays(
            spec, np.where(active, rng.normal(0, 0.7, spec.n_candidates), 0.0),
            rng.normal(0, 0.3, 5), active=active,
        )
        data = exact_sample(params, spec, 40, rng)
        stats = compute_stats(data, spec)
        moments = exact_summary(params, spec)
        edge_grads, bias_grads = grad_log_posterior(params, stats, moments, sigma0, sigma_b)
        for pair, g in edge_grads.items():
            vals = {}
            for sign in (1, -1):
                p2 = Parameters(dict(params.edge_weights), params.biases.copy())
                p2.edge_weights[pair] += sign * h
                vals[sign] = _exact_log_posterior(p2, stats, sigma0, sigma_b)
            fd = (vals[1] - vals[-1]) / (2 * h)
            worst = max(worst, abs(g - fd) / max(abs(fd), 1.0))
        for i in range(5):
            vals = {}
            for sign in (1, -1):
                p2 = Parameters(dict(params.edge_weights), params.biases.copy())
                p2.biases[i] += sign * h
                vals[sign] = _exact_log_posterior(p2, stats, sigma0, sigma_b)
            fd = (vals[1] - vals[-1]) / (2 * h)
            worst = max(worst, abs(bias_grads[i] - fd) / max(abs(fd), 1.0))
    report(2, worst < 1e-6, f"worst relative gradient error {worst:.2e} over 20 models")


# ---------------------------------------------------------------------------
# Criterion 3: logZ derivatives equal the exact feature moments
# ---------------------------------------------------------------------------

def test_criterion_3_log_partition_derivatives():
    worst_mean = worst_var = 0.0
    for trial in range(6):
        rng = np.random.default_rng(200 + trial)
        spec = ModelSpec.complete(5)
        params = Parameters.from_arrays(
            spec, rng.normal(0, 0.8, spec.n_candidates), rng.normal(0, 0.4, 5)
        )
        oracle = ExactOracle(spec)
        summary = oracle.summary(params)
        w0 = params.weight_vector(spec)

        def log_z(wvec):
            e = oracle.energies(wvec, params.biases)
            m = e.max()
            return m + np.log(np.exp(e - m).sum())

        base = log_z(w0)
        for k in range(spec.n_candidates):
            h1, h2 = 1e-5, 1e-3
            up, dn = np.array(w0), np.array(w0)
            up[k] += h1
            dn[k] -= h1
            fd_mean = (log_z(up) - log_z(dn)) / (2 * h1)
            worst_mean = max(worst_mean, abs(fd_mean - summary.pair_mean[k]) / abs(fd_mean))
            up, dn = np.array(w0), np.array(w0)
            up[k] += h2
            dn[k] -= h2
            fd_var = (log_z(up) - 2 * base + log_z(dn)) / h2**2
            worst_var = max(worst_var, abs(fd_var - summary.pair_var[k]) / abs(fd_var))
    ok = worst_mean < 1e-5 and worst_var < 1e-5
    report(3, ok, f"worst relative error: mean {worst_mean:.2e}, var {worst_var:.2e}")


# ---------------------------------------------------------------------------
# Criterion 4: partition-ratio estimator is unbiased with the predicted
# relative variance
# ---------------------------------------------------------------------------

def test_criterion_4_ratio_estimator_unbiased():
    rng = np.random.default_rng(42)
    spec = ModelSpec.complete(5)
    params = Parameters.from_arrays(
        spec, rng.normal(0, 0.5, spec.n_candidates), rng.normal(0, 0.2, 5)
    )
    base = exact_summary(params, spec)
    n_cases, n, reps = 100, 100, 10_000
    draws = exact_sample(params, spec, reps * n, rng).reshape(reps, n, 5)
    fails = []
    worst_bias_se = 0.0
    worst_var_rel = 0.0
    for k in range(spec.n_candidates):
        i, j = map(int, spec.candidates[k])
        a = float(jump_width(n_cases, base.pair_var[k]))
        shifted = Parameters(dict(params.edge_weights), params.biases.copy())
        shifted.edge_weights[(i, j)] = shifted.edge_weights.get((i, j), 0.0) + a
        exact_ratio = np.exp(n_cases * (base.log_z - exact_summary(shifted, spec).log_z))
        feats = draws[:, :, i] * draws[:, :, j]
        est = partition_ratio_estimate(
            a, feats.mean(axis=1), feats.var(axis=1, ddof=1), n_cases, n
        )
        se = est.ratio.std(ddof=1) / np.sqrt(reps)
        bias_se = abs(est.ratio.mean() - exact_ratio) / se
        predicted_rel_var = (n_cases * a) ** 2 * base.pair_var[k] / n
        observed_rel_var = est.ratio.var(ddof=1) / exact_ratio**2
        rel_err = abs(observed_rel_var / predicted_rel_var - 1.0)
        worst_bias_se = max(worst_bias_se, bias_se)
        worst_var_rel = max(worst_var_rel, rel_err)
        if bias_se > 3.0 or rel_err > 0.3:
            fails.append((k, bias_se, rel_err))
    report(4, not fails,
           f"worst |bias|/SE {worst_bias_se:.2f} (<3), worst variance mismatch "
           f"{worst_var_rel:.2f} (<0.3) across {spec.n_candidates} edges")


# ---------------------------------------------------------------------------
# Criteria 5, 6, 9: the block-model reproduction
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def block_instance():
    """Ground-truth block model plus N=100 exactly sampled training cases."""
    rng = np.random.default_rng(BLOCK_TRUTH_SEED)
    truth = data_mod.gen_block(rng)
    x, meta = data_mod.draw_training_data(truth, 100, np.random.default_rng(BLOCK_DATA_SEED))
    assert meta["sampler"] == "exact"
    assert len(truth.true_edges) == 20
    return truth, x, compute_stats(x, truth.spec)


def _run_block_chain(args):
    mode, iterations, burn_in, thin, seed, step, coeff = args
    rng = np.random.default_rng(BLOCK_TRUTH_SEED)
    truth = data_mod.gen_block(rng)
    x, _ = data_mod.draw_training_data(truth, 100, np.random.default_rng(BLOCK_DATA_SEED))
    stats = compute_stats(x, truth.spec)
    cfg = engine.SamplerConfig(
        iterations=iterations, thin=thin, burn_in=burn_in, seed=seed,
        mode=mode, step_size=step, jump_coeff=coeff,
    )
    return engine.run(cfg, stats, truth.spec)


@pytest.fixture(scope="session")
def block_chains(block_instance):
    """Approximate chain at published defaults plus the exact reference,
    run concurrently on two processes."""
    jobs = [
        ("approximate", APPROX_ITERATIONS, APPROX_BURN_IN, APPROX_THIN, 101, 1e-3, 0.01),
        ("exact", EXACT_ITERATIONS, EXACT_BURN_IN, EXACT_THIN, 102,
         EXACT_STEP_SIZE, EXACT_JUMP_COEFF),
    ]
    ctx = multiprocessing.get_context("fork")
    t0 = time.time()
    with concurrent.futures.ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        approx, exact = list(pool.map(_run_block_chain, jobs))
    print(f"\nblock chains finished in {time.time() - t0:.0f}s "
          f"(approx {APPROX_ITERATIONS} iters, exact {EXACT_ITERATIONS} iters)")
    assert not approx.diverged and not exact.diverged
    return approx, exact


def test_criterion_5_approximate_matches_exact(block_chains, block_instance):
    approx, exact = block_chains
    incl_diff = np.abs(approx.inclusion_freq - exact.inclusion_freq)
    worst_incl = float(incl_diff.max())

    # conditional moments are only defined for edges with posterior support
    both = (approx.inclusion_freq >= 0.05) & (exact.inclusion_freq >= 0.05)
    mean_diff = np.abs(approx.cond_mean[both] - exact.cond_mean[both])
    worst_mean = float(mean_diff.max())
    std_rel = np.abs(approx.cond_std[both] - exact.cond_std[both]) / exact.cond_std[both]
    worst_std = float(std_rel.max())

    ok = worst_incl <= 0.05 and worst_mean <= 0.05 and worst_std <= 0.25
    report(5, ok,
           f"max |incl diff| {worst_incl:.3f} (<=0.05), "
           f"max |cond mean diff| {worst_mean:.3f} (<=0.05) over {int(both.sum())} edges, "
           f"max cond-std rel diff {worst_std:.3f} (<=0.25)")


def test_criterion_6_density_recovery(block_chains):
    approx, _ = block_chains
    mean, std = evaluation.density(approx)
    ok = abs(mean - TRUE_BLOCK_DENSITY) <= 0.1 and std < 0.1
    report(6, ok, f"density {mean:.3f} (target {TRUE_BLOCK_DENSITY:.3f} +- 0.1), std {std:.3f} (<0.1)")


def test_criterion_9_cll_prediction_schemes(block_chains, block_instance):
    truth, _, _ = block_instance
    approx, _ = block_chains
    rng = np.random.default_rng(900)
    validation = exact_sample(truth.params, truth.spec, 1000, rng)
    baseline = -12 * np.log(2)

    mixture = engine.posterior_models(approx, 100, rng)
    pm = engine.posterior_mean_model(approx, 0.5)
    group = evaluation.GroupSpec.full(12)
    bayes_mean, _ = evaluation.cll_dataset(mixture, validation, group, rng)
    pm_mean, _ = evaluation.cll_dataset(pm, validation, group, rng)

    ok = (bayes_mean >= baseline + 1.0 and pm_mean >= baseline + 1.0
          and bayes_mean >= pm_mean - 0.2)
    report(9, ok,
           f"CLL bayes {bayes_mean:.3f}, bayes-pm {pm_mean:.3f}, "
           f"uniform baseline {baseline:.3f} (need >= baseline+1 and bayes >= pm-0.2)")


# ---------------------------------------------------------------------------
# Criterion 7: partial momentum refreshment mixes faster at unchanged
# stationary moments (fixed structure, exact gradients)
# ---------------------------------------------------------------------------

def _lmc_fixed_structure(truth, stats, alpha, seed, steps, eps, monitored):
    """Metropolis-corrected Langevin on the slab values of the true edge set
    (indicators pinned), with exact gradients from enumeration."""
    spec = truth.spec
    sigma0, sigma_b = 2.0, 10.0
    oracle = ExactOracle(spec)
    act = np.array(sorted(spec.index_of(i, j) for i, j in truth.true_edges))
    m = len(act)
    d = spec.d
    counts = np.concatenate([
        stats.pair_counts.astype(float)[act], stats.node_counts.astype(float)
    ])
    prior_var = np.concatenate([np.full(m, sigma0**2), np.full(d, sigma_b**2)])
    rng = np.random.default_rng(seed)
    theta = np.zeros(m + d)
    p = rng.standard_normal(m + d)

    cache = {}

    def summary_for(th):
        key = th.tobytes()
        if key not in cache:
            ev = np.zeros(spec.n_candidates)
            ev[act] = th[:m]
            if len(cache) > 8:
                cache.clear()
            cache[key] = oracle.summary_from_energies(oracle.energies(ev, th[m:]))
        return cache[key]

    def grad(th):
        s = summary_for(th)
        means = np.concatenate([s.pair_mean[act], s.node_mean])
        return counts - stats.n_cases * means - th / prior_var

    def log_post(th):
        s = summary_for(th)
        return float(th @ counts - stats.n_cases * s.log_z - 0.5 * th @ (th / prior_var))

    # rough curvature-matched scale from the initial model
    s0 = summary_for(theta)
    scale = np.concatenate([
        (stats.n_cases * s0.pair_var[act] + sigma0**-2) ** -0.5,
        (stats.n_cases * s0.node_var + sigma_b**-2) ** -0.5,
    ])

    mon = [int(np.flatnonzero(act == k)[0]) for k in monitored]
    traces = np.empty((steps, len(mon)))
    for t in range(steps):
        theta, p, _ = langevin.lmc_update_metropolis(
            theta, p, scale, eps, alpha, grad, log_post, rng
        )
        traces[t] = theta[mon]
    return traces


def test_criterion_7_momentum_refreshment(block_instance):
    truth, _, stats = block_instance
    spec = truth.spec
    monitored = sorted(spec.index_of(i, j) for i, j in truth.true_edges)[:2]
    steps, eps, burn = 250_000, 0.05, 25_000

    traces = {
        alpha: _lmc_fixed_structure(truth, stats, alpha, 700, steps, eps, monitored)[burn:]
        for alpha in (0.0, 0.9)
    }
    taus = {a: [evaluation.integrated_autocorr_time(tr[:, k], max_lag=50_000)
                for k in range(2)] for a, tr in traces.items()}
    means = {a: tr.mean(axis=0) for a, tr in traces.items()}
    stds = {a: tr.std(axis=0) for a, tr in traces.items()}

    faster = all(t9 < t0 for t9, t0 in zip(taus[0.9], taus[0.0]))
    mean_close = np.all(np.abs(means[0.9] - means[0.0]) < 0.05)
    std_close = np.all(np.abs(stds[0.9] / stds[0.0] - 1.0) < 0.2)
    ok = faster and mean_close and std_close
    report(7, ok,
           f"IACT alpha=0.9 {np.round(taus[0.9], 1)} vs alpha=0 {np.round(taus[0.0], 1)}; "
           f"mean diffs {np.round(np.abs(means[0.9] - means[0.0]), 3)}, "
           f"std ratios {np.round(stds[0.9] / stds[0.0], 3)}")


# ---------------------------------------------------------------------------
# Criterion 8: structure recovery on a desk-scale lattice
# ---------------------------------------------------------------------------

def test_criterion_8_lattice_structure_recovery():
    rng = np.random.default_rng(80)
    truth = data_mod.gen_lattice(6, 6, rng)
    x, meta = data_mod.draw_training_data(truth, 500, rng)
    assert meta["approximate"] is True  # d=36 exceeds the enumeration limit
    stats = compute_stats(x, truth.spec)
    cfg = engine.SamplerConfig(
        iterations=LATTICE_ITERATIONS, thin=2000, burn_in=LATTICE_BURN_IN, seed=81,
    )
    chain = engine.run(cfg, stats, truth.spec)
    thresholds = np.linspace(0.05, 0.95, 19)
    points = evaluation.pr_curve(chain.inclusion_freq, truth.true_edges, thresholds, truth.spec)
    (at_half,) = evaluation.pr_curve(chain.inclusion_freq, truth.true_edges, [0.5], truth.spec)
    recalls = [p.recall for p in points]
    monotone = all(r1 >= r2 for r1, r2 in zip(recalls, recalls[1:]))
    ok = at_half.f1 >= 0.8 and monotone
    report(8, ok,
           f"F1@0.5 = {at_half.f1:.3f} (>=0.8; precision {at_half.precision:.3f}, "
           f"recall {at_half.recall:.3f}), recall monotone: {monotone}")


# ---------------------------------------------------------------------------
# Criterion 10: detailed balance on the one-candidate toy model
# ---------------------------------------------------------------------------

def test_criterion_10_detailed_balance_toy():
    rng = np.random.default_rng(42)
    true = Parameters(edge_weights={(0, 1): 1.2}, biases=np.array([-0.4, 0.2]))
    spec = ModelSpec.complete(2)
    n_cases = 40
    x = exact_sample(true, spec, n_cases, rng)
    stats = compute_stats(x, spec)
    p0, sigma0, sigma_b = 0.4, 1.5, 10.0

    # quadrature over (slab value, both biases)
    c12 = float(stats.pair_counts[0])
    c1, c2 = map(float, stats.node_counts)
    bgrid = np.linspace(-6, 6, 481)
    agrid = np.linspace(-8, 8, 641)
    b1, b2 = np.meshgrid(bgrid, bgrid, indexing="ij")
    log_prior_b = -0.5 * (b1 / sigma_b) ** 2 - 0.5 * (b2 / sigma_b) ** 2

    def log_lik(a_val, f1, f2):
        log_z = np.log(1 + np.exp(f1) + np.exp(f2) + np.exp(f1 + f2 + a_val))
        return a_val * c12 + f1 * c1 + f2 * c2 - n_cases * log_z

    log_off = logsumexp(log_lik(0.0, b1, b2) + log_prior_b)
    slices = [
        logsumexp(log_lik(av, b1, b2) + log_prior_b
                  - 0.5 * (av / sigma0) ** 2 - np.log(sigma0) - 0.5 * np.log(2 * np.pi))
        for av in agrid
    ]
    log_on = logsumexp(np.array(slices)) + np.log(agrid[1] - agrid[0])
    odds = np.log(p0) - np.log1p(-p0) + log_on - log_off
    target = float(1 / (1 + np.exp(-odds)))

    cfg = engine.SamplerConfig(
        iterations=1_200_000, thin=1000, burn_in=60_000, seed=3,
        mode="exact", step_size=0.1, jump_coeff=1.0,
        fixed_p0=p0, fixed_sigma0=sigma0,
    )
    chain = engine.run(cfg, stats, spec)
    got = float(chain.inclusion_freq[0])
    ok = abs(got - target) < 0.02
    report(10, ok, f"P(edge on): chain {got:.4f} vs quadrature {target:.4f} (tol 0.02)")


# ---------------------------------------------------------------------------
# Criterion 11: MNIST ingestion determinism and boundary semantics
# ---------------------------------------------------------------------------

def test_criterion_11_mnist_pipeline(tmp_path):
    rng = np.random.default_rng(110)
    images = np.zeros((50, 28, 28), dtype=np.uint8)
    for k in range(50):
        r0, c0 = rng.integers(3, 13, 2)
        images[k, r0 : r0 + 12, c0 : c0 + 9] = rng.integers(0, 256, (12, 9))
    path = tmp_path / "digits.idx3"
    data_mod.write_idx3(path, images)

    m1, r1 = data_mod.mnist_ingest(path)
    m2, r2 = data_mod.mnist_ingest(path)
    identical = np.array_equal(m1, m2) and np.array_equal(r1.means, r2.means)

    report_generated = (
        m1.shape == (50, 108)
        and r1.means.shape == (108,)
        and isinstance(r1.to_dict()["violations"], list)
    )

    boundary = np.full((2, 28, 28), 49, dtype=np.uint8)
    boundary[1] = 50
    pixels = data_mod.preprocess_images(boundary)
    boundary_ok = pixels[0].sum() == 0 and pixels[1].sum() == 108

    ok = identical and report_generated and boundary_ok
    report(11, ok,
           f"deterministic: {identical}, report generated: {report_generated}, "
           f"binarize boundary (49->0, 50->1): {boundary_ok}")
