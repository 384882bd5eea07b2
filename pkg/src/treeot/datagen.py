"""Seedable synthetic datasets whose geometry follows a taxonomy.

Class means diffuse down the tree: each node's mean is its parent's mean plus
a Gaussian offset whose scale shrinks with depth, and samples add isotropic
noise around their leaf's mean.  Semantically near leaves therefore sit close
in feature space and are the ones a classifier confuses, which is exactly the
regime where a tree-aware loss and plain cross-entropy part ways.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DataError
from .taxonomy import Taxonomy

__all__ = [
    "GenConfig",
    "Dataset",
    "benchmark_config",
    "make_full_tree",
    "generate",
    "dataset_to_csv",
    "parse_dataset_csv",
]


@dataclass(frozen=True)
class GenConfig:
    """Generator settings.  ``branching``/``levels`` describe the random full
    tree used when no taxonomy is passed in; ``sigma0`` is the offset scale at
    depth 1 and shrinks by ``decay`` per level; ``noise`` is the sample noise."""

    branching: int = 3
    levels: int = 3
    dim: int = 16
    sigma0: float = 1.0
    decay: float = 0.5
    noise: float = 0.8
    samples_per_leaf: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.branching < 2:
            raise DataError(f"branching must be >= 2, got {self.branching}")
        if self.levels < 1:
            raise DataError(f"levels must be >= 1, got {self.levels}")
        if self.dim < 2:
            raise DataError(f"feature dim must be >= 2, got {self.dim}")
        if not self.sigma0 > 0 or not self.decay > 0 or not self.noise > 0:
            raise DataError("sigma0, decay and noise must all be positive")
        if self.samples_per_leaf < 1:
            raise DataError(f"samples per leaf must be >= 1, got {self.samples_per_leaf}")
        if int(self.seed) < 0:
            raise DataError("seed must be nonnegative")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # (n, dim) float64
    labels: tuple[str, ...]  # leaf name per row
    taxonomy: Taxonomy
    leaf_means: dict  # leaf name -> generative mean vector


def benchmark_config(seed: int = 0) -> GenConfig:
    """The desk-scale benchmark: 27 confusable leaves, seconds-scale training."""
    return GenConfig(
        branching=3,
        levels=3,
        dim=16,
        sigma0=1.0,
        decay=0.5,
        noise=0.8,
        samples_per_leaf=200,
        seed=seed,
    )


def make_full_tree(branching: int, levels: int) -> Taxonomy:
    """Complete b-ary tree; node names sort in structural order per level."""
    width = len(str(branching - 1))
    edges = []
    frontier = ["root"]
    for _ in range(levels):
        nxt = []
        for parent in frontier:
            stem = "" if parent == "root" else parent
            for i in range(branching):
                child = f"v{stem[1:]}{i:0{width}d}" if stem else f"v{i:0{width}d}"
                edges.append((parent, child))
                nxt.append(child)
        frontier = nxt
    return Taxonomy(edges)


def generate(cfg: GenConfig, taxonomy: Taxonomy | None = None) -> Dataset:
    """Draw the dataset; a pure function of the config (and taxonomy).

    Node offsets are drawn in (depth, name) order and samples in leaf-name
    order, so byte-identical output follows from an identical seed.
    """
    t = taxonomy if taxonomy is not None else make_full_tree(cfg.branching, cfg.levels)
    gen = rng.generator(cfg.seed, "datagen")

    means = {t.root: np.zeros(cfg.dim)}
    ordered = sorted((n for n in t.nodes if n != t.root), key=lambda n: (t.depth(n), n))
    for node in ordered:
        scale = cfg.sigma0 * cfg.decay ** (t.depth(node) - 1)
        means[node] = means[t.parent(node)] + gen.normal(0.0, scale, cfg.dim)

    blocks = []
    labels = []
    for leaf in t.leaves:
        blocks.append(means[leaf] + gen.normal(0.0, cfg.noise, (cfg.samples_per_leaf, cfg.dim)))
        labels.extend([leaf] * cfg.samples_per_leaf)
    features = np.vstack(blocks)
    leaf_means = {leaf: means[leaf] for leaf in t.leaves}
    return Dataset(features=features, labels=tuple(labels), taxonomy=t, leaf_means=leaf_means)


def dataset_to_csv(dataset: Dataset) -> str:
    """CSV with header ``label,f0,...,f{d-1}``; floats via repr round-trip exactly."""
    dim = dataset.features.shape[1]
    lines = ["label," + ",".join(f"f{i}" for i in range(dim))]
    for label, row in zip(dataset.labels, dataset.features):
        lines.append(label + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_dataset_csv(text: str) -> tuple[np.ndarray, list[str]]:
    """Read the dataset CSV back as (features, leaf labels)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty dataset file")
    header = lines[0].split(",")
    if header[0] != "label" or len(header) < 2:
        raise DataError("dataset header must be 'label,f0,...'")
    dim = len(header) - 1
    labels = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise DataError(f"line {lineno}: expected {dim + 1} fields, got {len(parts)}")
        labels.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
    return np.asarray(rows, dtype=float), labels
