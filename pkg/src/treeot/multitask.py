"""Shared-trunk multi-level classifier trained with tree-aware transport loss.

One dense trunk (affine map plus rectifier) feeds one linear softmax head per
taxonomy level.  The training objective is the weighted sum of per-level
one-hot transport losses (or cross-entropy), backpropagated by hand so runs
are bit-for-bit reproducible from a seed.  Inference reads only the leaf
head.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import DataError, NumericError
from .ground import IDENTITY, GroundMatrix, GroundTransform, build_ground_matrix
from .taxonomy import (
    LevelIndex,
    Taxonomy,
    level_index,
    pairwise_tie_matrix,
    serialize_taxonomy,
)
from .transport import ce_loss, one_hot_loss, softmax

__all__ = [
    "TrainConfig",
    "LevelModel",
    "TrainResult",
    "LOSS_KINDS",
    "COMBINED_WEIGHT_MODES",
    "level_loss_weights",
    "build_model",
    "forward",
    "forward_batch",
    "combined_loss",
    "loss_and_grads",
    "train",
    "predict_leaf",
    "predict_leaf_batch",
    "leaf_probabilities",
    "leaf_indices",
    "taxonomy_hash",
    "save_checkpoint",
    "load_checkpoint",
]

LOSS_KINDS = ("dot", "ce")
COMBINED_WEIGHT_MODES = ("info-gain", "info-gain-signed", "uniform", "leaf-only")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"TREEOT-CKPT\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    ``lr = 0`` is allowed so a null update is expressible; everything else is
    validated strictly.
    """

    lr: float = 2e-3
    batch_size: int = 128
    epochs: int = 40
    optimizer: str = "adam"
    loss: str = "dot"
    weight_mode: str = "info-gain"
    seed: int = 0
    transform: GroundTransform = IDENTITY
    hidden_dim: int = 32

    def __post_init__(self):
        if not np.isfinite(self.lr) or self.lr < 0:
            raise DataError(f"learning rate must be finite and >= 0, got {self.lr!r}")
        if self.batch_size < 1:
            raise DataError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSS_KINDS:
            raise DataError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.weight_mode not in COMBINED_WEIGHT_MODES:
            raise DataError(
                f"unknown weight mode {self.weight_mode!r}; expected one of {COMBINED_WEIGHT_MODES}"
            )
        if self.hidden_dim < 1:
            raise DataError(f"hidden dim must be >= 1, got {self.hidden_dim}")
        if int(self.seed) < 0:
            raise DataError("seed must be nonnegative")


def level_loss_weights(taxonomy: Taxonomy, mode: str) -> np.ndarray:
    """Per-level coefficients of the combined loss, index l-1 for level l.

    The information-gain modes evaluate the log level-set ratio for the
    levels above the leaves; the leaf level takes the ratio with the
    remaining level count clamped at one, so the head used at inference
    still receives gradient.
    """
    if mode not in COMBINED_WEIGHT_MODES:
        raise DataError(f"unknown weight mode {mode!r}; expected one of {COMBINED_WEIGHT_MODES}")
    n_levels = taxonomy.num_levels
    if mode == "leaf-only":
        weights = np.zeros(n_levels)
        weights[-1] = 1.0
        return weights
    if mode == "uniform":
        return np.ones(n_levels)
    if n_levels == 1:
        raise DataError(
            "information-gain weighting needs at least 2 levels; use uniform or leaf-only"
        )
    raw = np.array(
        [math.log(max(n_levels - l, 1)) - math.log(n_levels) for l in range(1, n_levels + 1)]
    )
    return raw if mode == "info-gain-signed" else -raw


@dataclass(eq=False)
class LevelModel:
    """Trunk + per-level heads, with the level structure baked in.

    ``params`` maps ``trunk_w``, ``trunk_b`` and ``head_w{l}``, ``head_b{l}``
    to float64 arrays.  The taxonomy, class orderings, ground matrices and
    level weights are fixed at construction.
    """

    taxonomy: Taxonomy
    levels: tuple[LevelIndex, ...]
    ground: tuple[GroundMatrix, ...]
    level_weights: np.ndarray
    level_targets: np.ndarray  # (num_leaves, num_levels) class index per level
    params: dict[str, np.ndarray]
    input_dim: int
    hidden_dim: int
    seed: int
    weight_mode: str
    transform: GroundTransform

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def leaf_level(self) -> LevelIndex:
        return self.levels[-1]

    @property
    def leaf_classes(self) -> tuple[str, ...]:
        return self.levels[-1].classes

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


@dataclass
class TrainResult:
    model: LevelModel
    loss_trace: list[float]
    val_tie_trace: list[float] = field(default_factory=list)
    best_epoch: int | None = None


def build_model(
    taxonomy: Taxonomy,
    input_dim: int,
    *,
    hidden_dim: int = 32,
    seed: int = 0,
    weight_mode: str = "info-gain",
    transform: GroundTransform = IDENTITY,
) -> LevelModel:
    """Construct a model with seeded trunk init and zero-initialized heads.

    Zero heads make an untrained model output the uniform histogram at every
    level, and the init stream is named so identical seeds give identical
    parameters bitwise.
    """
    if input_dim < 1:
        raise DataError(f"input dim must be >= 1, got {input_dim}")
    levels = tuple(level_index(taxonomy, l) for l in range(1, taxonomy.num_levels + 1))
    ground = tuple(build_ground_matrix(taxonomy, idx, transform) for idx in levels)
    weights = level_loss_weights(taxonomy, weight_mode)

    leaf_idx = levels[-1]
    targets = np.zeros((len(leaf_idx), len(levels)), dtype=np.int64)
    for row, leaf in enumerate(leaf_idx.classes):
        for col, idx in enumerate(levels):
            targets[row, col] = idx.index_of(taxonomy.lift_to_level(leaf, idx.level))

    init = rng.generator(seed, "init")
    params: dict[str, np.ndarray] = {
        "trunk_w": init.normal(0.0, math.sqrt(2.0 / input_dim), (input_dim, hidden_dim)),
        "trunk_b": np.zeros(hidden_dim),
    }
    for idx in levels:
        params[f"head_w{idx.level}"] = np.zeros((hidden_dim, len(idx)))
        params[f"head_b{idx.level}"] = np.zeros(len(idx))

    return LevelModel(
        taxonomy=taxonomy,
        levels=levels,
        ground=ground,
        level_weights=weights,
        level_targets=targets,
        params=params,
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        seed=int(seed),
        weight_mode=weight_mode,
        transform=transform,
    )


# ---------------------------------------------------------------------------
# forward / loss / gradients
# ---------------------------------------------------------------------------


def _check_features(model: LevelModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DataError(
            f"feature shape {X.shape} does not match trunk input dim {model.input_dim}"
        )
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    return X


def forward_batch(model: LevelModel, X) -> list[np.ndarray]:
    """Softmax histograms per level for a batch; rows sum to 1 within 1e-8."""
    X = _check_features(model, X)
    p = model.params
    hidden = np.maximum(X @ p["trunk_w"] + p["trunk_b"], 0.0)
    out = []
    for idx in model.levels:
        logits = hidden @ p[f"head_w{idx.level}"] + p[f"head_b{idx.level}"]
        out.append(softmax(logits))
    return out


def forward(model: LevelModel, x) -> list[np.ndarray]:
    """Per-level histograms for a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError(f"expected a 1-D feature vector, got shape {x.shape}")
    return [h[0] for h in forward_batch(model, x[None, :])]


def leaf_indices(model: LevelModel, labels) -> np.ndarray:
    """Leaf labels (names or integer indices) as indices into the leaf class order."""
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu":
        idx = labels.astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(model.leaf_classes)):
            raise DataError("leaf index out of range")
        return idx
    out = np.empty(len(labels), dtype=np.int64)
    leaf = model.leaf_level
    for i, name in enumerate(labels):
        name = str(name)
        if not model.taxonomy.is_leaf(name):
            raise DataError(f"label {name!r} is not a leaf of the taxonomy")
        out[i] = leaf.index_of(name)
    return out


def combined_loss(model: LevelModel, x, leaf_label, loss: str = "dot") -> float:
    """Weighted sum of per-level one-hot losses for one sample.

    In leaf-only mode this equals the leaf-level loss exactly; zero-weight
    levels are skipped rather than multiplied out.
    """
    if loss not in LOSS_KINDS:
        raise DataError(f"unknown loss {loss!r}; expected one of {LOSS_KINDS}")
    leaf_row = int(leaf_indices(model, [leaf_label])[0])
    hists = forward(model, x)
    total = 0.0
    for pos, idx in enumerate(model.levels):
        weight = float(model.level_weights[pos])
        if weight == 0.0:
            continue
        target = int(model.level_targets[leaf_row, pos])
        if loss == "dot":
            value = one_hot_loss(hists[pos], target, model.ground[pos])
        else:
            value = ce_loss(hists[pos], target)
        total += weight * value
    return total


def loss_and_grads(model: LevelModel, X, leaf_idx, loss: str = "dot"):
    """Mean combined loss over a batch and its gradient in every parameter.

    The per-level logit gradient is ``s * (D[:, j*] - per-sample loss)`` for
    the transport loss and ``s - onehot`` for cross-entropy, scaled by the
    level weight and averaged over the batch; the trunk gradient is the sum
    of the head backprops through the rectifier mask.
    """
    if loss not in LOSS_KINDS:
        raise DataError(f"unknown loss {loss!r}; expected one of {LOSS_KINDS}")
    X = _check_features(model, X)
    leaf_idx = np.asarray(leaf_idx, dtype=np.int64)
    batch = X.shape[0]
    if leaf_idx.shape != (batch,):
        raise DataError("labels must be one leaf index per feature row")

    p = model.params
    pre = X @ p["trunk_w"] + p["trunk_b"]
    hidden = np.maximum(pre, 0.0)

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    d_hidden = np.zeros_like(hidden)
    total = 0.0
    rows = np.arange(batch)
    for pos, idx in enumerate(model.levels):
        weight = float(model.level_weights[pos])
        if weight == 0.0:
            continue
        w_key, b_key = f"head_w{idx.level}", f"head_b{idx.level}"
        logits = hidden @ p[w_key] + p[b_key]
        probs = softmax(logits)
        targets = model.level_targets[leaf_idx, pos]
        if loss == "dot":
            # Ground matrices are symmetric, so row reads give target columns.
            cols = model.ground[pos].entries[targets]
            sample_losses = np.einsum("bk,bk->b", probs, cols)
            d_logits = probs * (cols - sample_losses[:, None])
        else:
            picked = np.clip(probs[rows, targets], 1e-300, None)
            sample_losses = -np.log(picked)
            d_logits = probs.copy()
            d_logits[rows, targets] -= 1.0
        total += weight * float(sample_losses.mean())
        d_logits *= weight / batch
        grads[w_key] = hidden.T @ d_logits
        grads[b_key] = d_logits.sum(axis=0)
        d_hidden += d_logits @ p[w_key].T

    d_pre = d_hidden * (pre > 0)
    grads["trunk_w"] = X.T @ d_pre
    grads["trunk_b"] = d_pre.sum(axis=0)
    return total, grads


def predict_leaf(model: LevelModel, x) -> int:
    """Argmax over the leaf head's histogram; ties break to the lowest index."""
    return int(np.argmax(forward(model, x)[-1]))


def predict_leaf_batch(model: LevelModel, X) -> np.ndarray:
    return np.argmax(forward_batch(model, X)[-1], axis=1)


def leaf_probabilities(model: LevelModel, X) -> np.ndarray:
    return forward_batch(model, X)[-1]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train(
    model: LevelModel,
    features,
    labels,
    cfg: TrainConfig,
    *,
    val_features=None,
    val_labels=None,
) -> TrainResult:
    """Mini-batch training with a per-epoch loss trace.

    Shuffling draws from the named ``shuffle`` stream of ``cfg.seed``, so a
    run is fully reproducible.  When a validation set is supplied, the
    parameters from the epoch with the lowest validation mean TIE are
    restored at the end (that is the only use of validation data).
    Non-finite losses, gradients, or parameters abort with a diagnostic.
    """
    X = _check_features(model, features)
    y = leaf_indices(model, labels)
    if len(y) != len(X):
        raise DataError(f"{len(X)} feature rows but {len(y)} labels")
    if len(X) == 0:
        raise DataError("empty training set")

    use_val = val_features is not None
    if use_val:
        Xv = _check_features(model, val_features)
        yv = leaf_indices(model, val_labels)
        tie_m = pairwise_tie_matrix(model.taxonomy, model.leaf_classes).astype(float)

    shuffle = rng.generator(cfg.seed, "shuffle")
    adam_m = {k: np.zeros_like(v) for k, v in model.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in model.params.items()}
    step = 0
    trace: list[float] = []
    val_trace: list[float] = []
    best_tie = math.inf
    best_params = None
    best_epoch = None

    n = len(X)
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            batch_loss, grads = loss_and_grads(model, X[sel], y[sel], cfg.loss)
            if not np.isfinite(batch_loss):
                raise NumericError(
                    f"non-finite loss {batch_loss!r} at epoch {epoch}, batch start {start}"
                )
            step += 1
            for key, grad in grads.items():
                if not np.all(np.isfinite(grad)):
                    raise NumericError(
                        f"non-finite gradient in {key} at epoch {epoch}, batch start {start}"
                    )
                if cfg.optimizer == "sgd":
                    model.params[key] -= cfg.lr * grad
                else:
                    adam_m[key] = ADAM_BETA1 * adam_m[key] + (1 - ADAM_BETA1) * grad
                    adam_v[key] = ADAM_BETA2 * adam_v[key] + (1 - ADAM_BETA2) * grad * grad
                    m_hat = adam_m[key] / (1 - ADAM_BETA1**step)
                    v_hat = adam_v[key] / (1 - ADAM_BETA2**step)
                    model.params[key] -= cfg.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
                if not np.all(np.isfinite(model.params[key])):
                    raise NumericError(
                        f"non-finite parameter {key} after update at epoch {epoch}"
                    )
            epoch_loss += batch_loss * len(sel)
        trace.append(epoch_loss / n)

        if use_val:
            preds = predict_leaf_batch(model, Xv)
            val_tie = float(tie_m[preds, yv].mean())
            val_trace.append(val_tie)
            if val_tie < best_tie:
                best_tie = val_tie
                best_params = model.copy_params()
                best_epoch = epoch

    if use_val and best_params is not None:
        model.params.update(best_params)
    return TrainResult(model=model, loss_trace=trace, val_tie_trace=val_trace, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def taxonomy_hash(taxonomy: Taxonomy) -> str:
    return hashlib.sha256(serialize_taxonomy(taxonomy).encode("utf-8")).hexdigest()


def save_checkpoint(path, model: LevelModel) -> None:
    """Write the versioned binary container: magic, JSON meta, raw arrays.

    The byte stream is a pure function of the model, so identical runs write
    identical files (unlike zip-based containers, which embed timestamps).
    """
    names = sorted(model.params)
    meta = {
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "hidden_dim": model.hidden_dim,
        "seed": model.seed,
        "weight_mode": model.weight_mode,
        "transform": model.transform.spec(),
        "taxonomy_sha256": taxonomy_hash(model.taxonomy),
        "arrays": [
            {"name": k, "dtype": str(model.params[k].dtype), "shape": list(model.params[k].shape)}
            for k in names
        ],
    }
    blob = CHECKPOINT_MAGIC + json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n"
    with open(path, "wb") as fh:
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(model.params[k]).tobytes())


def load_checkpoint(path, taxonomy: Taxonomy) -> LevelModel:
    """Rebuild a model from a checkpoint; the taxonomy must hash-match."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a model checkpoint")
    header_end = data.index(b"\n", len(CHECKPOINT_MAGIC))
    meta = json.loads(data[len(CHECKPOINT_MAGIC) : header_end].decode("utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
    if meta["taxonomy_sha256"] != taxonomy_hash(taxonomy):
        raise DataError(f"{path}: checkpoint was trained on a different taxonomy")

    model = build_model(
        taxonomy,
        meta["input_dim"],
        hidden_dim=meta["hidden_dim"],
        seed=meta["seed"],
        weight_mode=meta["weight_mode"],
        transform=GroundTransform.parse(meta["transform"]),
    )
    offset = header_end + 1
    for spec in meta["arrays"]:
        name, dtype, shape = spec["name"], np.dtype(spec["dtype"]), tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(data[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        if name not in model.params or model.params[name].shape != arr.shape:
            raise DataError(f"{path}: unexpected array {name!r} in checkpoint")
        model.params[name] = arr
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return model
