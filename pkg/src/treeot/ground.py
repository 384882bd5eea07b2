"""Ground distance matrices: transformed tree distances between level classes.

The ground matrix assigns every ordered class pair the misclassification cost
``f(d_ij)`` where ``d_ij`` is the TIE distance and ``f`` is a nondecreasing
transform with ``f(0) = 0``: identity, a p-th power, or a Huber curve.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .taxonomy import LevelIndex, Taxonomy, level_index, pairwise_tie_matrix

__all__ = [
    "GroundTransform",
    "GroundMatrix",
    "IDENTITY",
    "apply_transform",
    "build_ground_matrix",
    "matrix_to_csv",
]

TRANSFORM_KINDS = ("identity", "power", "huber")


@dataclass(frozen=True)
class GroundTransform:
    """Nondecreasing cost transform applied to raw tree distances.

    ``identity`` is ``f(d) = d``; ``power`` is ``f(d) = d**p`` with ``p > 0``;
    ``huber`` is ``f(d) = d**2 / 2`` for ``d <= delta`` and
    ``delta * (d - delta / 2)`` beyond.
    """

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise DataError(f"unknown transform kind {self.kind!r}")
        if self.kind == "identity":
            if self.param is not None:
                raise DataError("identity transform takes no parameter")
        else:
            if self.param is None or not np.isfinite(self.param) or self.param <= 0:
                raise DataError(f"{self.kind} transform needs a positive parameter")

    @classmethod
    def identity(cls) -> "GroundTransform":
        return cls("identity")

    @classmethod
    def power(cls, p: float) -> "GroundTransform":
        return cls("power", float(p))

    @classmethod
    def huber(cls, delta: float) -> "GroundTransform":
        return cls("huber", float(delta))

    @classmethod
    def parse(cls, spec: str) -> "GroundTransform":
        """Parse CLI syntax: ``identity``, ``power:P``, or ``huber:DELTA``."""
        name, sep, arg = spec.partition(":")
        name = name.strip().lower()
        if name == "identity":
            if sep:
                raise DataError("identity transform takes no parameter")
            return cls.identity()
        if name in ("power", "huber"):
            if not sep or not arg.strip():
                raise DataError(f"{name} transform requires a parameter, e.g. {name}:2")
            try:
                value = float(arg)
            except ValueError:
                raise DataError(f"bad transform parameter {arg!r}") from None
            return cls(name, value)
        raise DataError(f"unknown transform {spec!r}")

    def spec(self) -> str:
        if self.kind == "identity":
            return "identity"
        return f"{self.kind}:{self.param!r}"

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        if np.any(d < 0):
            raise DataError("transform input distance must be nonnegative")
        if self.kind == "identity":
            out = d
        elif self.kind == "power":
            out = d**self.param
        else:
            delta = self.param
            out = np.where(d <= delta, 0.5 * d * d, delta * (d - 0.5 * delta))
        if out.ndim == 0:
            return float(out)
        return out


IDENTITY = GroundTransform.identity()


def apply_transform(transform: GroundTransform, d):
    """Evaluate the transform at ``d >= 0`` (scalar or array)."""
    return transform(d)


@dataclass(frozen=True, eq=False)
class GroundMatrix:
    """Symmetric, zero-diagonal cost matrix over one level's classes."""

    level: LevelIndex
    entries: np.ndarray
    transform: GroundTransform

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def classes(self) -> tuple[str, ...]:
        return self.level.classes

    @property
    def size(self) -> int:
        return len(self.level.classes)


def build_ground_matrix(
    taxonomy: Taxonomy,
    level: int | LevelIndex,
    transform: GroundTransform = IDENTITY,
) -> GroundMatrix:
    """Ground matrix ``D[i, j] = f(tie_distance(class_i, class_j))``.

    Class order is the level's lexicographic ordering, so the matrix is
    reproducible across runs for a fixed taxonomy.
    """
    idx = level if isinstance(level, LevelIndex) else level_index(taxonomy, level)
    for name in idx.classes:
        if name not in taxonomy.nodes:
            raise DataError(f"class {name!r} not in taxonomy")
    raw = pairwise_tie_matrix(taxonomy, idx.classes)
    entries = np.asarray(transform(raw.astype(float)), dtype=float)
    # Exact zeros on the diagonal regardless of transform rounding.
    np.fill_diagonal(entries, 0.0)
    if not np.all(np.isfinite(entries)):
        raise DataError("ground matrix has non-finite entries")
    return GroundMatrix(level=idx, entries=entries, transform=transform)


def matrix_to_csv(matrix: GroundMatrix) -> str:
    """CSV text with a header row of class names, one matrix row per line."""
    buf = io.StringIO()
    buf.write(",".join(matrix.classes) + "\n")
    for row in matrix.entries:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()
