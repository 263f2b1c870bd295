"""Command-line workflow: generate, train, eval, sample."""

import json

import numpy as np
import pytest

from ssmrf.cli import EXIT_CAPABILITY, main, write_pgm_sheet
from ssmrf.data import read_bmat, write_bmat, write_idx3
from ssmrf.model import load_model, save_model, ModelSpec, Parameters


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def block_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    code = run_cli("--out-dir", out, "generate", "block", "--n", 60, "--seed", 7)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, block_run):
    out = tmp_path_factory.mktemp("train")
    code = run_cli(
        "--out-dir", out, "train", "--data", block_run / "block_data.bmat",
        "--iterations", 4000, "--thin", 20, "--burn-in", 1000,
        "--jump-coeff", 0.5, "--step-size", 0.05, "--seed", 5,
    )
    assert code == 0
    return out


class TestGenerate:
    def test_block_outputs(self, block_run):
        data = read_bmat(block_run / "block_data.bmat")
        assert data.shape == (60, 12)
        manifest = json.loads((block_run / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seed"] == 7
        assert manifest["args"]["sampling"]["sampler"] == "exact"
        assert any(p.endswith("block_truth.json") for p in manifest["outputs"])
        assert manifest["version"]

    def test_generate_deterministic(self, block_run, tmp_path):
        code = run_cli("--out-dir", tmp_path, "generate", "block", "--n", 60, "--seed", 7)
        assert code == 0
        assert (tmp_path / "block_data.bmat").read_bytes() == (
            block_run / "block_data.bmat"
        ).read_bytes()
        assert (tmp_path / "block_truth.json").read_text() == (
            block_run / "block_truth.json"
        ).read_text()

    def test_lattice(self, tmp_path):
        code = run_cli("--out-dir", tmp_path, "generate", "lattice",
                       "--rows", 3, "--cols", 3, "--n", 5, "--seed", 1)
        assert code == 0
        data = read_bmat(tmp_path / "lattice_data.bmat")
        assert data.shape == (5, 9)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["args"]["sampling"]["sampler"] == "exact"

    def test_mnist(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (12, 28, 28)).astype(np.uint8)
        write_idx3(tmp_path / "imgs.idx3", images)
        out = tmp_path / "out"
        code = run_cli("--out-dir", out, "generate", "mnist",
                       "--images", tmp_path / "imgs.idx3", "--count", 10)
        assert code == 0
        data = read_bmat(out / "mnist.bmat")
        assert data.shape == (10, 108)
        report = json.loads((out / "pixel_mean_report.json").read_text())
        assert "pixel_means" in report and len(report["pixel_means"]) == 108
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["inputs"]) == 1

    def test_text_format(self, tmp_path):
        code = run_cli("--out-dir", tmp_path, "generate", "block",
                       "--n", 5, "--seed", 0, "--format", "txt")
        assert code == 0
        text = (tmp_path / "block_data.txt").read_text().strip().splitlines()
        assert len(text) == 5


class TestTrain:
    def test_outputs(self, trained_run):
        chain_lines = (trained_run / "chain.jsonl").read_text().strip().splitlines()
        assert len(chain_lines) == 150
        snap = json.loads(chain_lines[0])
        assert set(snap) == {"iter", "p0", "sigma0", "active_edges", "biases"}
        summary = (trained_run / "summary.csv").read_text().strip().splitlines()
        assert summary[0] == "edge_i,edge_j,inclusion_freq,cond_mean,cond_std"
        assert len(summary) == 1 + 66
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["args"]["diverged"] is False
        assert manifest["args"]["n_snapshots"] == 150

    def test_exact_mode_capability_exit(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, (10, 22)).astype(np.uint8)
        write_bmat(tmp_path / "wide.bmat", x)
        code = run_cli("--out-dir", tmp_path, "train", "--data", tmp_path / "wide.bmat",
                       "--iterations", 10, "--mode", "exact")
        assert code == EXIT_CAPABILITY

    def test_missing_data_file(self, tmp_path):
        code = run_cli("--out-dir", tmp_path, "train", "--data", tmp_path / "nope.bmat")
        assert code == 3

    def test_fixed_p0_flag(self, tmp_path, block_run):
        code = run_cli("--out-dir", tmp_path, "train", "--data", block_run / "block_data.bmat",
                       "--iterations", 500, "--thin", 50, "--fixed-p0", 0.3, "--seed", 2)
        assert code == 0
        snap = json.loads((tmp_path / "chain.jsonl").read_text().splitlines()[0])
        assert snap["p0"] == 0.3


class TestEval:
    def test_bayes_scheme_with_truth(self, tmp_path, block_run, trained_run):
        code = run_cli(
            "--out-dir", tmp_path, "eval",
            "--chain", trained_run / "chain.jsonl",
            "--data", block_run / "block_data.bmat",
            "--truth", block_run / "block_truth.json",
            "--scheme", "bayes", "--k", 20, "--seed", 3,
        )
        assert code == 0
        metrics = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert metrics[0] == "method,density_mean,density_std,cll_mean,cll_std,f1_at_0.5"
        row = metrics[1].split(",")
        assert row[0] == "bayes"
        assert float(row[3]) < 0  # CLL is a log-probability
        pr = (tmp_path / "pr_curve.csv").read_text().strip().splitlines()
        assert pr[0] == "threshold,precision,recall,f1"
        assert len(pr) == 20

    def test_bayes_pm_scheme(self, tmp_path, block_run, trained_run):
        code = run_cli(
            "--out-dir", tmp_path, "eval",
            "--chain", trained_run / "chain.jsonl",
            "--data", block_run / "block_data.bmat",
            "--scheme", "bayes-pm", "--threshold", 0.5, "--seed", 4,
        )
        assert code == 0
        metrics = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert metrics[1].split(",")[0] == "bayes-pm"
        assert not (tmp_path / "pr_curve.csv").exists()

    def test_dimension_mismatch(self, tmp_path, trained_run):
        write_bmat(tmp_path / "narrow.bmat", np.zeros((4, 5), dtype=np.uint8))
        code = run_cli("--out-dir", tmp_path, "eval",
                       "--chain", trained_run / "chain.jsonl",
                       "--data", tmp_path / "narrow.bmat")
        assert code == 3


class TestSample:
    def test_from_model_with_sheet(self, tmp_path):
        spec = ModelSpec.complete(9)
        params = Parameters(edge_weights={(0, 1): 1.0}, biases=np.zeros(9))
        save_model(tmp_path / "model.json", spec, params)
        out = tmp_path / "out"
        code = run_cli("--out-dir", out, "sample", "--model", tmp_path / "model.json",
                       "--count", 8, "--sweeps", 30, "--seed", 5, "--shape", "3x3")
        assert code == 0
        states = read_bmat(out / "samples.bmat")
        assert states.shape == (8, 9)
        sheet = (out / "samples.pgm").read_bytes()
        assert sheet.startswith(b"P5\n")

    def test_from_chain(self, tmp_path, trained_run):
        code = run_cli("--out-dir", tmp_path, "sample", "--chain", trained_run / "chain.jsonl",
                       "--scheme", "bayes", "--k", 10, "--count", 6, "--sweeps", 20, "--seed", 6)
        assert code == 0
        assert read_bmat(tmp_path / "samples.bmat").shape == (6, 12)

    def test_seed_determinism(self, tmp_path):
        spec = ModelSpec.complete(4)
        save_model(tmp_path / "m.json", spec, Parameters.zeros(4))
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert run_cli("--out-dir", out, "sample", "--model", tmp_path / "m.json",
                           "--count", 5, "--sweeps", 10, "--seed", 9) == 0
            outs.append((out / "samples.bmat").read_bytes())
        assert outs[0] == outs[1]

    def test_pgm_layout(self, tmp_path):
        x = np.ones((4, 6), dtype=np.uint8)
        write_pgm_sheet(tmp_path / "sheet.pgm", x, (2, 3), per_row=2, gap=1)
        raw = (tmp_path / "sheet.pgm").read_bytes()
        header, rest = raw.split(b"\n", 1)
        assert header == b"P5"
        dims = rest.split(b"\n", 2)
        width, height = map(int, dims[0].split())
        assert (width, height) == (2 * 3 + 1, 2 * 2 + 1)


class TestUsage:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main(["bogus"])
        assert err.value.code == 2

    def test_sample_requires_source(self):
        with pytest.raises(SystemExit) as err:
            main(["sample", "--count", "3"])
        assert err.value.code == 2
