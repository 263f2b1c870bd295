"""Command-line front end: generate datasets, train chains, evaluate, and
sample, with a manifest written next to every command's outputs.

Exit codes: 0 success, 2 usage, 3 file/format, 4 capability, 5 divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, engine, evaluation
from .data import (
    GroundTruth,
    draw_training_data,
    gen_block,
    gen_lattice,
    mnist_ingest,
    read_dataset,
    write_bmat,
    write_text_dataset,
)
from .model import ModelSpec, Parameters, compute_stats, load_model
from .states import ParticleSet, gibbs_sweep
from .utils import CapabilityError, DivergenceError, FormatError

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CAPABILITY = 4
EXIT_DIVERGENCE = 5

OUT_DIR_ENV = "SSMRF_OUT_DIR"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    """Records command, resolved options, input digests, and outputs so a
    run can be reproduced bit-for-bit."""

    def __init__(self, command, args):
        self.started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self.command = command
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.inputs = {}
        self.outputs = []

    def add_input(self, path):
        self.inputs[str(path)] = _sha256(path)

    def add_output(self, path):
        self.outputs.append(str(path))

    def write(self, path):
        obj = {
            "command": self.command,
            "args": self.args,
            "seed": self.args.get("seed"),
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started": self.started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "version": __version__,
        }
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=1)


def _out_dir(args):
    out = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_dataset(path, matrix, fmt):
    if fmt == "txt":
        write_text_dataset(path, matrix)
    else:
        write_bmat(path, matrix)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args):
    out = _out_dir(args)
    manifest = Manifest("generate", args)
    rng = np.random.default_rng(args.seed)
    suffix = "txt" if args.format == "txt" else "bmat"

    if args.kind == "mnist":
        matrix, report = mnist_ingest(args.images, args.labels, args.count)
        manifest.add_input(args.images)
        if args.labels:
            manifest.add_input(args.labels)
        data_path = out / f"mnist.{suffix}"
        _write_dataset(data_path, matrix, args.format)
        manifest.add_output(data_path)
        report_path = out / "pixel_mean_report.json"
        with open(report_path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
        manifest.add_output(report_path)
        if not report.ok:
            print(f"warning: {len(report.violations)} pixel(s) outside the mean range", file=sys.stderr)
    else:
        if args.kind == "block":
            truth = gen_block(rng)
        else:
            truth = gen_lattice(args.rows, args.cols, rng)
        matrix, meta = draw_training_data(truth, args.n, rng)
        truth_path = out / f"{args.kind}_truth.json"
        truth.save(truth_path)
        manifest.add_output(truth_path)
        data_path = out / f"{args.kind}_data.{suffix}"
        _write_dataset(data_path, matrix, args.format)
        manifest.add_output(data_path)
        manifest.args["sampling"] = meta

    manifest.write(out / "manifest.json")
    print(f"wrote {', '.join(manifest.outputs)}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _config_from_args(args):
    kwargs = dict(
        iterations=args.iterations,
        thin=args.thin,
        n_particles=args.n_particles,
        n_gibbs=args.n_gibbs,
        step_size=args.step_size,
        momentum_alpha=args.momentum_alpha,
        jump_coeff=args.jump_coeff,
        mode=args.mode,
        seed=args.seed,
        fixed_p0=args.fixed_p0,
        fixed_sigma0=args.fixed_sigma0,
    )
    if args.burn_in is not None:
        kwargs["burn_in"] = args.burn_in
    return engine.SamplerConfig(**kwargs)


def cmd_train(args):
    out = _out_dir(args)
    manifest = Manifest("train", args)
    x = read_dataset(args.data)
    manifest.add_input(args.data)
    spec = ModelSpec.complete(x.shape[1])
    stats = compute_stats(x, spec)
    config = _config_from_args(args)
    chain = engine.run(config, stats, spec)

    chain_path = out / "chain.jsonl"
    chain.write_jsonl(chain_path)
    manifest.add_output(chain_path)
    summary_path = out / "summary.csv"
    chain.write_summary_csv(summary_path)
    manifest.add_output(summary_path)
    manifest.args["n_snapshots"] = len(chain.samples)
    manifest.args["diverged"] = chain.diverged
    manifest.write(out / "manifest.json")
    print(f"wrote {', '.join(manifest.outputs)}")
    if chain.diverged:
        print("error: sampler diverged; partial chain written", file=sys.stderr)
        return EXIT_DIVERGENCE
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _group_policy(args, d):
    if args.group == "patch":
        if args.grid_rows is None or args.grid_cols is None:
            raise argparse.ArgumentTypeError("--group patch requires --grid-rows and --grid-cols")
        if args.grid_rows * args.grid_cols != d:
            raise FormatError(
                f"grid {args.grid_rows}x{args.grid_cols} does not match d={d}"
            )
        return evaluation.random_patch_policy(args.grid_rows, args.grid_cols)
    return evaluation.GroupSpec.full(d)


def cmd_eval(args):
    out = _out_dir(args)
    manifest = Manifest("eval", args)
    x = read_dataset(args.data)
    manifest.add_input(args.data)
    chain = engine.load_chain_jsonl(args.chain)
    manifest.add_input(args.chain)
    if chain.spec.d != x.shape[1]:
        raise FormatError(
            f"chain has d={chain.spec.d} but dataset has {x.shape[1]} columns"
        )
    rng = np.random.default_rng(args.seed)

    if args.scheme == "bayes":
        models = engine.posterior_models(chain, min(args.k, len(chain.samples)), rng)
    else:
        models = [engine.posterior_mean_model(chain, args.threshold)]
    policy = _group_policy(args, x.shape[1])
    cll_mean, cll_std = evaluation.cll_dataset(models, x, policy, rng)
    dens_mean, dens_std = evaluation.density(chain)

    row = {
        "method": args.scheme,
        "density_mean": f"{dens_mean:.10g}",
        "density_std": f"{dens_std:.10g}",
        "cll_mean": f"{cll_mean:.10g}",
        "cll_std": f"{cll_std:.10g}",
    }
    if args.truth:
        truth = GroundTruth.load(args.truth)
        manifest.add_input(args.truth)
        thresholds = [i / 20 for i in range(1, 20)]
        points = evaluation.pr_curve(chain.inclusion_freq, truth.true_edges, thresholds, chain.spec)
        pr_path = out / "pr_curve.csv"
        evaluation.write_pr_csv(pr_path, points)
        manifest.add_output(pr_path)
        at_half = evaluation.pr_curve(chain.inclusion_freq, truth.true_edges, [0.5], chain.spec)[0]
        row["f1_at_0.5"] = f"{at_half.f1:.10g}"

    metrics_path = out / "metrics.csv"
    evaluation.write_metrics_csv(metrics_path, [row])
    manifest.add_output(metrics_path)
    manifest.write(out / "manifest.json")
    print(f"wrote {', '.join(manifest.outputs)}")
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def write_pgm_sheet(path, matrix, shape, per_row=6, gap=1):
    """Contact sheet of binary states as a P5 PGM image (1 -> white)."""
    rows, cols = shape
    n = len(matrix)
    grid_rows = (n + per_row - 1) // per_row
    height = grid_rows * rows + (grid_rows - 1) * gap
    width = per_row * cols + (per_row - 1) * gap
    canvas = np.full((height, width), 64, dtype=np.uint8)  # gray separators
    for idx in range(n):
        r, c = divmod(idx, per_row)
        tile = (matrix[idx].reshape(rows, cols) * 255).astype(np.uint8)
        top, left = r * (rows + gap), c * (cols + gap)
        canvas[top: top + rows, left: left + cols] = tile
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(canvas.tobytes())


def _parse_shape(text):
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
        return rows, cols
    except ValueError as exc:
        raise argparse.ArgumentTypeError("shape must look like ROWSxCOLS") from exc


def _infer_shape(d):
    if d == 108:
        return (12, 9)
    root = int(np.sqrt(d))
    if root * root == d:
        return (root, root)
    return None


def cmd_sample(args):
    out = _out_dir(args)
    manifest = Manifest("sample", args)
    rng = np.random.default_rng(args.seed)

    if args.model:
        _, params = load_model(args.model)
        manifest.add_input(args.model)
        models = [(params, args.count)]
    else:
        chain = engine.load_chain_jsonl(args.chain)
        manifest.add_input(args.chain)
        if args.scheme == "bayes":
            components = engine.posterior_models(chain, min(args.k, len(chain.samples)), rng)
            picks = rng.integers(0, len(components), size=args.count)
            models = [(components[m], int((picks == m).sum())) for m in range(len(components))]
        else:
            models = [(engine.posterior_mean_model(chain, args.threshold), args.count)]

    d = models[0][0].d
    chunks = []
    for params, count in models:
        if count == 0:
            continue
        particles = ParticleSet.initialize(max(count, 2), d, rng)
        gibbs_sweep(particles, params, args.sweeps, rng)
        chunks.append(particles.x[:count])
    states = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, d), dtype=np.uint8)

    states_path = out / "samples.bmat"
    write_bmat(states_path, states)
    manifest.add_output(states_path)

    shape = args.shape or _infer_shape(d)
    if shape is not None and shape[0] * shape[1] == d and len(states):
        sheet_path = out / "samples.pgm"
        write_pgm_sheet(sheet_path, states, shape)
        manifest.add_output(sheet_path)

    manifest.write(out / "manifest.json")
    print(f"wrote {', '.join(manifest.outputs)}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="ssmrf",
        description="Bayesian structure learning for binary pairwise MRFs",
    )
    parser.add_argument("--out-dir", default=None, help=f"output directory (or ${OUT_DIR_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset (and ground truth for synthetic kinds)")
    gen.add_argument("kind", choices=["block", "lattice", "mnist"])
    gen.add_argument("--n", type=int, default=100, help="training cases (synthetic kinds)")
    gen.add_argument("--rows", type=int, default=10)
    gen.add_argument("--cols", type=int, default=10)
    gen.add_argument("--images", help="IDX3 images file (mnist)")
    gen.add_argument("--labels", help="optional IDX1 labels file (mnist)")
    gen.add_argument("--count", type=int, default=None, help="images to ingest (mnist)")
    gen.add_argument("--format", choices=["bmat", "txt"], default="bmat")
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_generate)

    train = sub.add_parser("train", help="run the posterior sampler on a dataset")
    train.add_argument("--data", required=True)
    train.add_argument("--iterations", type=int, default=200_000)
    train.add_argument("--thin", type=int, default=100)
    train.add_argument("--burn-in", type=int, default=None)
    train.add_argument("--n-particles", type=int, default=100)
    train.add_argument("--n-gibbs", type=int, default=1)
    train.add_argument("--step-size", type=float, default=1e-3)
    train.add_argument("--momentum-alpha", type=float, default=0.9)
    train.add_argument("--jump-coeff", type=float, default=0.01)
    train.add_argument("--mode", choices=["approximate", "exact"], default="approximate")
    train.add_argument("--fixed-p0", type=float, default=None)
    train.add_argument("--fixed-sigma0", type=float, default=None)
    train.add_argument("--seed", type=int, default=0)
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a trained chain on a dataset")
    ev.add_argument("--chain", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--truth", default=None, help="ground-truth JSON; adds PR curve and F1")
    ev.add_argument("--scheme", choices=["bayes", "bayes-pm"], default="bayes")
    ev.add_argument("--k", type=int, default=100, help="mixture components for --scheme bayes")
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--group", choices=["full", "patch"], default="full")
    ev.add_argument("--grid-rows", type=int, default=None)
    ev.add_argument("--grid-cols", type=int, default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    samp = sub.add_parser("sample", help="draw Gibbs samples from a model or chain")
    group = samp.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="model JSON file")
    group.add_argument("--chain", help="chain JSONL file")
    samp.add_argument("--scheme", choices=["bayes", "bayes-pm"], default="bayes-pm")
    samp.add_argument("--k", type=int, default=100)
    samp.add_argument("--threshold", type=float, default=0.5)
    samp.add_argument("--count", type=int, default=36)
    samp.add_argument("--sweeps", type=int, default=1000)
    samp.add_argument("--shape", type=_parse_shape, default=None, help="tile shape ROWSxCOLS for the PGM sheet")
    samp.add_argument("--seed", type=int, default=0)
    samp.set_defaults(func=cmd_sample)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapabilityError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
