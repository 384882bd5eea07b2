"""Rooted class taxonomies: parsing, validation, and tree-distance queries.

A taxonomy is a rooted tree over uniquely named class nodes.  It supplies the
semantic structure used everywhere else: node depths, root paths, tree-induced
error (TIE) distances, the per-level class sets of a multi-level labeling, and
the information-gain level weights.

Levels are numbered from the root: level 1 holds the children of the root
(coarsest split) and level ``num_levels`` is the leaf level.  Trees may be
ragged; a leaf shallower than a level represents itself at all deeper levels
(self-padding), so every level is a total labeling of the leaves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TaxonomyError

__all__ = [
    "Taxonomy",
    "LevelIndex",
    "WEIGHT_MODES",
    "parse_taxonomy",
    "serialize_taxonomy",
    "root_path",
    "tie_distance",
    "pairwise_tie_matrix",
    "lift_to_level",
    "level_index",
    "level_weight",
]

WEIGHT_MODES = ("info-gain", "info-gain-signed", "uniform")


class Taxonomy:
    """A validated rooted tree.  Immutable after construction; queries are
    read-only and safe for concurrent use."""

    def __init__(self, edges):
        pairs = []
        seen = set()
        parent_of = {}
        for edge in edges:
            try:
                parent, child = edge
            except (TypeError, ValueError):
                raise TaxonomyError(f"edge {edge!r} is not a (parent, child) pair") from None
            parent, child = str(parent), str(child)
            for name in (parent, child):
                if not name or any(ch.isspace() for ch in name):
                    raise TaxonomyError(
                        f"invalid node name {name!r}: must be non-empty with no whitespace"
                    )
            if (parent, child) in seen:
                raise TaxonomyError(f"duplicate edge {parent} -> {child}")
            seen.add((parent, child))
            if child in parent_of:
                raise TaxonomyError(
                    f"node {child} has two parents: {parent_of[child]} and {parent}"
                )
            parent_of[child] = parent
            pairs.append((parent, child))
        if not pairs:
            raise TaxonomyError("empty taxonomy: no edges")

        nodes = set(parent_of)
        nodes.update(parent_of.values())
        roots = sorted(nodes - parent_of.keys())
        if not roots:
            raise TaxonomyError("no root: every node has a parent (cycle)")
        if len(roots) > 1:
            raise TaxonomyError("multiple roots: " + ", ".join(roots))
        root = roots[0]

        children: dict[str, list[str]] = {}
        for parent, child in pairs:
            children.setdefault(parent, []).append(child)

        depth = {root: 0}
        for node in sorted(nodes):
            chain = []
            walked = set()
            cur = node
            while cur not in depth:
                if cur in walked:
                    raise TaxonomyError(f"cycle detected at node {cur}")
                walked.add(cur)
                chain.append(cur)
                cur = parent_of[cur]
            base = depth[cur]
            for offset, name in enumerate(reversed(chain), start=1):
                depth[name] = base + offset

        self._edges = tuple(pairs)
        self._parent = parent_of
        self._children = {p: tuple(sorted(cs)) for p, cs in children.items()}
        self._root = root
        self._depth = depth
        self._nodes = frozenset(nodes)
        self._leaves = tuple(sorted(n for n in nodes if n not in children))
        self._num_levels = max(depth[leaf] for leaf in self._leaves)
        self._paths: dict[str, tuple] = {root: ()}
        self._level_cache: dict[int, tuple[str, ...]] = {}

    # -- basic structure -------------------------------------------------

    @property
    def root(self) -> str:
        return self._root

    @property
    def nodes(self) -> frozenset[str]:
        return self._nodes

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return self._edges

    @property
    def leaves(self) -> tuple[str, ...]:
        return self._leaves

    @property
    def num_levels(self) -> int:
        """Maximum leaf depth; the index of the leaf level."""
        return self._num_levels

    def _require(self, node: str) -> None:
        if node not in self._nodes:
            raise DataError(f"unknown node {node!r}")

    def depth(self, node: str) -> int:
        self._require(node)
        return self._depth[node]

    def parent(self, node: str):
        self._require(node)
        return self._parent.get(node)

    def children(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._children.get(node, ())

    def is_leaf(self, node: str) -> bool:
        self._require(node)
        return node not in self._children

    # -- path and distance queries ---------------------------------------

    def root_path(self, node: str) -> tuple[tuple[str, str], ...]:
        """Edges from the root down to ``node``; length equals its depth."""
        self._require(node)
        path = self._paths.get(node)
        if path is None:
            parent = self._parent[node]
            path = self.root_path(parent) + ((parent, node),)
            self._paths[node] = path
        return path

    def tie_distance(self, truth: str, predicted: str) -> int:
        """Tree-induced error: edges on the path between the two nodes.

        Computed from the root-path link sets as
        ``|links(truth)| + |links(predicted)| - 2 * |common links|``.
        """
        links_true = set(self.root_path(truth))
        links_pred = set(self.root_path(predicted))
        return len(links_true) + len(links_pred) - 2 * len(links_true & links_pred)

    def lift_to_level(self, node: str, level: int) -> str:
        """The class representing ``node`` at the given level.

        Ancestor at that depth for deeper nodes; a leaf shallower than the
        level represents itself (self-padding on ragged trees).
        """
        self._require(node)
        self._check_level(level)
        node_depth = self._depth[node]
        if node_depth == level:
            return node
        if node_depth > level:
            return self.root_path(node)[level - 1][1]
        if self.is_leaf(node):
            return node
        raise DataError(
            f"node {node!r} at depth {node_depth} is above level {level} and is not a leaf"
        )

    def level_classes(self, level: int) -> tuple[str, ...]:
        """Sorted class names labeling samples at ``level`` (with self-padding)."""
        self._check_level(level)
        cached = self._level_cache.get(level)
        if cached is None:
            names = [n for n in self._nodes if self._depth[n] == level]
            names += [n for n in self._leaves if self._depth[n] < level]
            cached = tuple(sorted(names))
            self._level_cache[level] = cached
        return cached

    def _check_level(self, level: int) -> None:
        if not isinstance(level, (int, np.integer)) or not 1 <= level <= self._num_levels:
            raise DataError(
                f"level {level!r} out of range: expected integer in [1, {self._num_levels}]"
            )

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"Taxonomy(root={self._root!r}, nodes={len(self._nodes)}, "
            f"leaves={len(self._leaves)}, levels={self._num_levels})"
        )


@dataclass(frozen=True)
class LevelIndex:
    """Deterministic (lexicographic) class ordering for one taxonomy level."""

    level: int
    classes: tuple[str, ...]
    _positions: dict = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self._positions.update({name: i for i, name in enumerate(self.classes)})

    def __len__(self) -> int:
        return len(self.classes)

    def index_of(self, name: str) -> int:
        try:
            return self._positions[name]
        except KeyError:
            raise DataError(f"class {name!r} not present at level {self.level}") from None


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse the tree file format: one ``parent<TAB>child`` edge per line.

    Blank lines and lines starting with ``#`` are ignored; the root is the
    unique node that never appears as a child.  Errors cite the offending
    line number.
    """
    edges = []
    edge_line = {}
    child_line = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.strip("\n").split("\t")
        parts = [p.strip() for p in parts if p.strip()]
        if len(parts) != 2:
            raise TaxonomyError(
                f"line {lineno}: expected 'parent<TAB>child', got {raw.rstrip()!r}"
            )
        parent, child = parts
        for name in (parent, child):
            if any(ch.isspace() for ch in name):
                raise TaxonomyError(f"line {lineno}: node name {name!r} contains whitespace")
        if (parent, child) in edge_line:
            raise TaxonomyError(
                f"line {lineno}: duplicate edge {parent} -> {child} "
                f"(first seen at line {edge_line[(parent, child)]})"
            )
        if child in child_line:
            raise TaxonomyError(
                f"line {lineno}: node {child} has two parents "
                f"(earlier edge at line {child_line[child]})"
            )
        edge_line[(parent, child)] = lineno
        child_line[child] = lineno
        edges.append((parent, child))
    if not edges:
        raise TaxonomyError("empty input: no edges found")
    return Taxonomy(edges)


def serialize_taxonomy(taxonomy: Taxonomy) -> str:
    """Edge-list text that parses back to the same edge set."""
    lines = [f"{p}\t{c}" for p, c in sorted(taxonomy.edges)]
    return "\n".join(lines) + "\n"


def root_path(taxonomy: Taxonomy, node: str):
    return taxonomy.root_path(node)


def tie_distance(taxonomy: Taxonomy, truth: str, predicted: str) -> int:
    return taxonomy.tie_distance(truth, predicted)


def pairwise_tie_matrix(taxonomy: Taxonomy, classes) -> np.ndarray:
    """Symmetric integer matrix of TIE distances between the given classes."""
    classes = list(classes)
    n = len(classes)
    out = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            d = taxonomy.tie_distance(classes[i], classes[j])
            out[i, j] = d
            out[j, i] = d
    return out


def lift_to_level(taxonomy: Taxonomy, node: str, level: int) -> str:
    return taxonomy.lift_to_level(node, level)


def level_index(taxonomy: Taxonomy, level: int) -> LevelIndex:
    return LevelIndex(level=level, classes=taxonomy.level_classes(level))


def level_weight(taxonomy: Taxonomy, level: int, mode: str = "info-gain") -> float:
    """Per-level coefficient for the combined multi-level loss.

    ``info-gain-signed`` evaluates ``log(V - l) - log(V)`` with ``V`` the
    number of levels, exactly as the information-gain ratio is written;
    ``info-gain`` returns its magnitude (the trainable default); ``uniform``
    returns 1 for every level.
    """
    if mode not in WEIGHT_MODES:
        raise DataError(f"unknown weight mode {mode!r}; expected one of {WEIGHT_MODES}")
    if mode == "uniform":
        if not isinstance(level, (int, np.integer)) or level < 1:
            raise DataError(f"level {level!r} out of range: expected integer >= 1")
        return 1.0
    n_levels = taxonomy.num_levels
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= n_levels - 1:
        raise DataError(
            f"information-gain weight undefined at level {level!r}: "
            f"need 1 <= level <= {n_levels - 1}"
        )
    signed = math.log(n_levels - level) - math.log(n_levels)
    return signed if mode == "info-gain-signed" else -signed
