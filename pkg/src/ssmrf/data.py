"""Ground-truth model generators, training-data sampling, MNIST ingestion,
and the dataset/model file formats.

Synthetic models are drawn as sparse +-1-state Ising models (couplings and
fields Gaussian) and converted to their equivalent {0,1}-state form.  Small
models are sampled exactly by enumeration; larger ones fall back to a long
single Gibbs chain with heavy burn-in and thinning, which is flagged as an
approximation in the returned metadata.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, Parameters, ising_to_boltzmann, model_from_dict, model_to_dict
from .states import ENUM_LIMIT, exact_sample
from .utils import FormatError, as_generator, check_binary_matrix

EDGE_WEIGHT_STD = 0.5
BIAS_STD = 0.1

GIBBS_BURN_IN_SWEEPS = 100_000
GIBBS_THIN_SWEEPS = 100


@dataclass
class GroundTruth:
    """A generated sparse model: spec, {0,1}-form parameters, and the set of
    pairs that actually carry nonzero couplings."""

    spec: ModelSpec
    params: Parameters
    true_edges: set

    def __post_init__(self):
        self.true_edges = {(int(i), int(j)) for i, j in self.true_edges}
        idx = self.spec.pair_index
        for pair in self.true_edges:
            if pair not in idx:
                raise ValueError(f"true edge {pair} not in candidate set")

    def to_dict(self):
        obj = model_to_dict(self.spec, self.params)
        obj["true_edges"] = sorted([list(p) for p in self.true_edges])
        return obj

    @classmethod
    def from_dict(cls, obj):
        spec, params = model_from_dict(obj)
        return cls(spec=spec, params=params, true_edges={tuple(p) for p in obj["true_edges"]})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _assemble_truth(d, present, rng, positive_mask=None):
    """Draw Ising couplings/fields for the `present` pairs and convert.

    Pairs in `positive_mask` (e.g. within-group or lattice edges) take the
    absolute value of their Gaussian draw so they are positively coupled.
    """
    couplings = {}
    for pair in present:
        w = rng.normal(0.0, EDGE_WEIGHT_STD)
        if positive_mask is None or pair in positive_mask:
            w = abs(w)
        couplings[pair] = w
    fields = rng.normal(0.0, BIAS_STD, size=d)
    params = ising_to_boltzmann(couplings, fields)
    return GroundTruth(spec=ModelSpec.complete(d), params=params, true_edges=set(present))


def gen_block(rng, n_nodes=12, n_groups=3, p_within=0.8, p_across=0.1) -> GroundTruth:
    """Random block model: nodes split evenly into groups; edges appear with
    probability p_within inside a group (positively coupled) and p_across
    between groups."""
    rng = as_generator(rng)
    if n_nodes % n_groups:
        raise ValueError("n_nodes must divide evenly into n_groups")
    group = np.repeat(np.arange(n_groups), n_nodes // n_groups)
    present, positive = [], set()
    for i in range(n_nodes - 1):
        for j in range(i + 1, n_nodes):
            same = group[i] == group[j]
            if rng.random() < (p_within if same else p_across):
                present.append((i, j))
                if same:
                    positive.add((i, j))
    return _assemble_truth(n_nodes, present, rng, positive_mask=positive)


def gen_lattice(rows, cols, rng) -> GroundTruth:
    """Grid model: candidates are all pairs; the true edges are the
    4-neighbour grid links (all positively coupled)."""
    if rows < 2 or cols < 2:
        raise ValueError("rows and cols must both be >= 2")
    rng = as_generator(rng)
    present = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                present.append((i, i + 1))
            if r + 1 < rows:
                present.append((i, i + cols))
    present = [(min(i, j), max(i, j)) for i, j in present]
    return _assemble_truth(rows * cols, present, rng, positive_mask=set(present))


def _gibbs_chain_samples(truth: GroundTruth, count, rng, burn_in, thin):
    """Single-chain Gibbs with incremental local fields (pure Python; fast
    enough because the true models are sparse)."""
    d = truth.spec.d
    neighbors = [[] for _ in range(d)]
    for (i, j), w in truth.params.edge_weights.items():
        neighbors[i].append((j, w))
        neighbors[j].append((i, w))
    biases = truth.params.biases
    x = [int(v) for v in rng.integers(0, 2, size=d)]
    fields = [biases[i] + sum(w for j, w in neighbors[i] if x[j]) for i in range(d)]

    out = np.empty((count, d), dtype=np.uint8)
    total_sweeps = burn_in + count * thin

    def next_block():
        return iter(rng.random(min(262144, d * 1024)))

    uniforms = next_block()
    taken = 0
    for sweep in range(total_sweeps):
        for i in range(d):
            try:
                u = next(uniforms)
            except StopIteration:
                uniforms = next_block()
                u = next(uniforms)
            new = u < 1.0 / (1.0 + math.exp(-fields[i]))
            new = 1 if new else 0
            if new != x[i]:
                delta = new - x[i]
                x[i] = new
                for j, w in neighbors[i]:
                    fields[j] += w * delta
        if sweep >= burn_in and (sweep - burn_in) % thin == 0:
            out[taken] = x
            taken += 1
    return out[:taken]


def draw_training_data(truth: GroundTruth, count, rng, enum_limit=ENUM_LIMIT):
    """Draw `count` cases from the ground-truth model.

    Returns (matrix, meta) where meta records whether sampling was exact
    (enumeration) or long-run Gibbs (an approximation, for d above the
    enumeration limit).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = as_generator(rng)
    if truth.spec.d <= enum_limit:
        x = exact_sample(truth.params, truth.spec, count, rng, limit=enum_limit)
        meta = {"sampler": "exact", "approximate": False}
    else:
        x = _gibbs_chain_samples(truth, count, rng, GIBBS_BURN_IN_SWEEPS, GIBBS_THIN_SWEEPS)
        meta = {
            "sampler": "gibbs",
            "approximate": True,
            "burn_in_sweeps": GIBBS_BURN_IN_SWEEPS,
            "thin_sweeps": GIBBS_THIN_SWEEPS,
        }
    return x, meta


# ---------------------------------------------------------------------------
# MNIST IDX ingestion
# ---------------------------------------------------------------------------

IDX3_MAGIC = 0x00000803
IDX1_MAGIC = 0x00000801

MNIST_BINARIZE_THRESHOLD = 50  # pixel >= 50 maps to 1
PATCH_ROWS = slice(1, 13)  # 12 rows, centered in the 14x14 grid
PATCH_COLS = slice(2, 11)  # 9 columns
PATCH_SHAPE = (12, 9)
PIXEL_MEAN_LO = 1e-4
PIXEL_MEAN_HI = 1.0 - 1e-4


@dataclass
class PixelMeanReport:
    """Dataset-level check that every retained pixel is neither always on
    nor always off (violations are reported, not fatal)."""

    means: np.ndarray
    violations: list  # [(flat_index, mean), ...]

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "pixel_means": [float(m) for m in self.means],
            "violations": [[int(i), float(m)] for i, m in self.violations],
            "ok": self.ok,
            "range": [PIXEL_MEAN_LO, PIXEL_MEAN_HI],
        }


def read_idx3(path):
    """Images from an IDX3 file as a (count, rows, cols) uint8 array."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise FormatError(f"{path}: truncated IDX3 header at offset {len(header)}")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX3_MAGIC:
            raise FormatError(f"{path}: bad IDX3 magic 0x{magic:08x} at offset 0")
        body = fh.read(count * rows * cols)
    if len(body) != count * rows * cols:
        raise FormatError(f"{path}: expected {count * rows * cols} pixel bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def read_idx1(path):
    """Labels from an IDX1 file as a (count,) uint8 array."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise FormatError(f"{path}: truncated IDX1 header at offset {len(header)}")
        magic, count = struct.unpack(">II", header)
        if magic != IDX1_MAGIC:
            raise FormatError(f"{path}: bad IDX1 magic 0x{magic:08x} at offset 0")
        body = fh.read(count)
    if len(body) != count:
        raise FormatError(f"{path}: expected {count} label bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8)


def write_idx3(path, images):
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX3_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx1(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX1_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def preprocess_images(images):
    """Binarize 28x28 grayscale images and reduce to the centered 12x9 patch.

    Pixels >= 50 binarize to 1; 2x2 block majority pooling (ties to 1) halves
    the resolution to 14x14; the patch keeps rows 1..12 and columns 2..10.
    Returns an (N, 108) uint8 matrix, row-major within the patch.
    """
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise FormatError(f"expected (N, 28, 28) images, got {images.shape}")
    binary = (images >= MNIST_BINARIZE_THRESHOLD).astype(np.uint8)
    pooled_counts = binary.reshape(-1, 14, 2, 14, 2).sum(axis=(2, 4))
    pooled = (pooled_counts >= 2).astype(np.uint8)  # 2-of-4 tie maps to 1
    patch = pooled[:, PATCH_ROWS, PATCH_COLS]
    return patch.reshape(len(images), PATCH_SHAPE[0] * PATCH_SHAPE[1])


def pixel_mean_report(matrix) -> PixelMeanReport:
    means = np.asarray(matrix, dtype=np.float64).mean(axis=0)
    bad = (means < PIXEL_MEAN_LO) | (means > PIXEL_MEAN_HI)
    return PixelMeanReport(
        means=means,
        violations=[(int(i), float(means[i])) for i in np.flatnonzero(bad)],
    )


def mnist_ingest(images_path, labels_path=None, count=None):
    """Load, binarize, downscale, and crop MNIST images into an (N, 108)
    binary matrix, plus the pixel-mean validation report."""
    images = read_idx3(images_path)
    if labels_path is not None:
        labels = read_idx1(labels_path)
        if len(labels) != len(images):
            raise FormatError(
                f"label count {len(labels)} does not match image count {len(images)}"
            )
    if count is not None:
        if count > len(images):
            raise ValueError(f"requested {count} images but the file holds {len(images)}")
        images = images[:count]
    matrix = preprocess_images(images)
    return matrix, pixel_mean_report(matrix)


# ---------------------------------------------------------------------------
# Dataset file formats
# ---------------------------------------------------------------------------

BMAT_MAGIC = b"BMAT"


def write_text_dataset(path, matrix):
    """One data case per line, d space-separated 0/1 tokens."""
    matrix = check_binary_matrix(matrix, min_rows=0)
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_text_dataset(path):
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if any(t not in ("0", "1") for t in tokens):
                raise FormatError(f"{path}:{lineno}: tokens must be 0 or 1")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} tokens, got {len(tokens)}")
            rows.append([int(t) for t in tokens])
    if not rows:
        raise FormatError(f"{path}: empty dataset")
    return np.asarray(rows, dtype=np.uint8)


def write_bmat(path, matrix):
    """Packed binary matrix: magic "BMAT", little-endian u32 N and d, then
    ceil(N*d/8) bytes of row-major bits (MSB-first within each byte)."""
    matrix = check_binary_matrix(matrix, min_rows=0)
    n, d = matrix.shape
    packed = np.packbits(matrix.reshape(-1))
    with open(path, "wb") as fh:
        fh.write(BMAT_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(packed.tobytes())


def read_bmat(path):
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12 or header[:4] != BMAT_MAGIC:
            raise FormatError(f"{path}: bad BMAT header at offset 0")
        n, d = struct.unpack("<II", header[4:])
        body = fh.read()
    expected = (n * d + 7) // 8
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=n * d)
    return bits.reshape(n, d).astype(np.uint8)


def read_dataset(path):
    """Dispatch on file content: BMAT if the magic matches, else text."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BMAT_MAGIC:
        return read_bmat(path)
    return read_text_dataset(path)
