"""Evaluation metrics and the multi-trial experiment harness.

Metrics follow the hierarchical-classification conventions: mean tree-induced
error over leaf predictions (lower is better), top-1 accuracy, and top-k
error.  ``run_trials`` repeats the 50/30/20 split-train-test protocol with
trial-specific seeds and reports mean and sample standard deviation;
``compare_methods`` runs cross-entropy and the transport-loss variants on
identical splits and initializations so rows are directly comparable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import DataError, NumericError
from .multitask import (
    TrainConfig,
    build_model,
    leaf_probabilities,
    predict_leaf_batch,
    train,
)
from .taxonomy import Taxonomy, level_index, pairwise_tie_matrix

__all__ = [
    "EvalReport",
    "mean_tie",
    "topk_error",
    "split_indices",
    "split_hash",
    "run_trials",
    "compare_methods",
    "COMPARE_METHODS",
    "render_eval_report",
    "render_compare_report",
]

# Table rows: the conventional flat baseline plus the transport-loss variants.
COMPARE_METHODS = (
    ("ce", "ce", "leaf-only"),
    ("dot", "dot", "info-gain"),
    ("dot-leaf-only", "dot", "leaf-only"),
    ("dot-equal", "dot", "uniform"),
)

DEFAULT_TOPK = (1, 2, 5, 10)


@dataclass
class EvalReport:
    mean_tie: float
    tie_std: float
    top1_accuracy: float
    top1_std: float
    topk_error: dict[int, float]
    confusion: dict[str, dict[str, int]]
    trials: int
    per_trial_tie: list[float] = field(default_factory=list)
    per_trial_top1: list[float] = field(default_factory=list)
    split_hashes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_tie": self.mean_tie,
            "tie_std": self.tie_std,
            "top1_accuracy": self.top1_accuracy,
            "top1_std": self.top1_std,
            "topk_error": {str(k): v for k, v in sorted(self.topk_error.items())},
            "confusion": self.confusion,
            "trials": self.trials,
            "per_trial_tie": self.per_trial_tie,
            "per_trial_top1": self.per_trial_top1,
            "split_hashes": self.split_hashes,
        }


def mean_tie(taxonomy: Taxonomy, predictions, labels) -> float:
    """Arithmetic mean of TIE distances between predicted and true leaves.

    Both sequences are indices into the leaf level's lexicographic class
    order.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape or preds.ndim != 1:
        raise DataError(f"prediction/label shape mismatch: {preds.shape} vs {labs.shape}")
    if preds.size == 0:
        raise DataError("empty prediction sequence")
    leaves = level_index(taxonomy, taxonomy.num_levels).classes
    if preds.min() < 0 or preds.max() >= len(leaves) or labs.min() < 0 or labs.max() >= len(leaves):
        raise DataError(f"leaf index out of range for {len(leaves)} leaf classes")
    ties = pairwise_tie_matrix(taxonomy, leaves).astype(float)
    return float(ties[preds, labs].mean())


def topk_error(scores, labels, k: int) -> float:
    """Fraction of samples whose true class is outside the k best-scoring
    classes; score ties rank the lower index first."""
    scores = np.asarray(scores, dtype=float)
    labs = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(labs) != scores.shape[0]:
        raise DataError(f"scores shape {scores.shape} does not match {len(labs)} labels")
    n_classes = scores.shape[1]
    if not 1 <= k <= n_classes:
        raise DataError(f"k={k} out of range [1, {n_classes}]")
    # Stable sort on negated scores: equal scores keep index order.
    ranking = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hit = (ranking == labs[:, None]).any(axis=1)
    return float(1.0 - hit.mean())


def split_indices(n: int, master_seed: int, trial: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic 50/30/20 train/validation/test split for one trial."""
    n_train = int(n * 0.5)
    n_val = int(n * 0.3)
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"dataset of {n} samples is too small for a 50/30/20 split")
    perm = rng.generator(master_seed, "split", trial).permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split_hash(train_idx, val_idx, test_idx) -> str:
    h = hashlib.sha256()
    for part in (train_idx, val_idx, test_idx):
        h.update(np.asarray(part, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def _confusion(preds, labels, class_names) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for p, t in zip(preds, labels):
        row = out.setdefault(class_names[int(t)], {})
        name = class_names[int(p)]
        row[name] = row.get(name, 0) + 1
    return {t: dict(sorted(row.items())) for t, row in sorted(out.items())}


def _sample_std(values) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def run_trials(
    features,
    labels,
    taxonomy: Taxonomy,
    cfg: TrainConfig,
    trials: int,
    *,
    master_seed: int | None = None,
    topk=DEFAULT_TOPK,
) -> EvalReport:
    """Split, train, and test ``trials`` times; aggregate test metrics.

    Split and model seeds depend only on the master seed and the trial
    index, never on the loss, so different methods run on identical data.
    """
    if trials < 1:
        raise DataError(f"trials must be >= 1, got {trials}")
    X = np.asarray(features, dtype=float)
    master = cfg.seed if master_seed is None else master_seed

    leaf_idx = level_index(taxonomy, taxonomy.num_levels)
    leaves = leaf_idx.classes
    y = _as_leaf_indices(taxonomy, leaf_idx, labels)
    ks = sorted({k for k in topk if 1 <= k <= len(leaves)})

    ties, top1s = [], []
    k_errors = {k: [] for k in ks}
    confusion: dict[str, dict[str, int]] = {}
    hashes = []
    tie_m = pairwise_tie_matrix(taxonomy, leaves).astype(float)

    for trial in range(trials):
        tr, va, te = split_indices(len(X), master, trial)
        hashes.append(split_hash(tr, va, te))
        trial_seed = rng.derive_seed(master, "trial", trial)
        trial_model = build_model(
            taxonomy,
            X.shape[1],
            hidden_dim=cfg.hidden_dim,
            seed=trial_seed,
            weight_mode=cfg.weight_mode,
            transform=cfg.transform,
        )
        trial_cfg = TrainConfig(
            lr=cfg.lr,
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            optimizer=cfg.optimizer,
            loss=cfg.loss,
            weight_mode=cfg.weight_mode,
            seed=trial_seed,
            transform=cfg.transform,
            hidden_dim=cfg.hidden_dim,
        )
        train(
            trial_model,
            X[tr],
            y[tr],
            trial_cfg,
            val_features=X[va],
            val_labels=y[va],
        )
        preds = predict_leaf_batch(trial_model, X[te])
        probs = leaf_probabilities(trial_model, X[te])
        ties.append(float(tie_m[preds, y[te]].mean()))
        top1s.append(float((preds == y[te]).mean()))
        for k in ks:
            k_errors[k].append(topk_error(probs, y[te], k))
        for t_name, row in _confusion(preds, y[te], leaves).items():
            agg = confusion.setdefault(t_name, {})
            for p_name, count in row.items():
                agg[p_name] = agg.get(p_name, 0) + count

    confusion = {t: dict(sorted(row.items())) for t, row in sorted(confusion.items())}
    return EvalReport(
        mean_tie=float(np.mean(ties)),
        tie_std=_sample_std(ties),
        top1_accuracy=float(np.mean(top1s)),
        top1_std=_sample_std(top1s),
        topk_error={k: float(np.mean(v)) for k, v in k_errors.items()},
        confusion=confusion,
        trials=trials,
        per_trial_tie=ties,
        per_trial_top1=top1s,
        split_hashes=hashes,
    )


def _as_leaf_indices(taxonomy: Taxonomy, leaf_idx, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind in "iu":
        out = labels.astype(np.int64)
        if out.size and (out.min() < 0 or out.max() >= len(leaf_idx.classes)):
            raise DataError("leaf index out of range")
        return out
    out = np.empty(len(labels), dtype=np.int64)
    for i, name in enumerate(labels):
        name = str(name)
        if not taxonomy.is_leaf(name):
            raise DataError(f"label {name!r} is not a leaf of the taxonomy")
        out[i] = leaf_idx.index_of(name)
    return out


def pooled_standard_error(a, b) -> float:
    """Standard error of the difference of two trial means (Welch pooling)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        return 0.0
    var_a = float(np.var(a, ddof=1))
    var_b = float(np.var(b, ddof=1))
    return math.sqrt(var_a / len(a) + var_b / len(b))


def compare_methods(
    features,
    labels,
    taxonomy: Taxonomy,
    base_cfg: TrainConfig,
    trials: int,
    *,
    topk=DEFAULT_TOPK,
) -> dict:
    """Side-by-side table of cross-entropy versus the transport-loss variants.

    All methods run on the same splits and parameter initializations (the
    report asserts the shared split hashes) so per-trial differences reflect
    only the training objective.
    """
    methods = {}
    hashes = None
    for name, loss, weight_mode in COMPARE_METHODS:
        cfg = TrainConfig(
            lr=base_cfg.lr,
            batch_size=base_cfg.batch_size,
            epochs=base_cfg.epochs,
            optimizer=base_cfg.optimizer,
            loss=loss,
            weight_mode=weight_mode,
            seed=base_cfg.seed,
            transform=base_cfg.transform,
            hidden_dim=base_cfg.hidden_dim,
        )
        report = run_trials(features, labels, taxonomy, cfg, trials, topk=topk)
        if hashes is None:
            hashes = report.split_hashes
        elif report.split_hashes != hashes:
            raise NumericError(
                f"split hashes diverged between methods: {hashes} vs {report.split_hashes}"
            )
        methods[name] = report

    ce, dot = methods["ce"], methods["dot"]
    leaf_only, equal = methods["dot-leaf-only"], methods["dot-equal"]
    comparison = {
        "tie_diff_ce_minus_dot": ce.mean_tie - dot.mean_tie,
        "tie_pooled_se_ce_vs_dot": pooled_standard_error(ce.per_trial_tie, dot.per_trial_tie),
        "top1_diff_dot_minus_ce": dot.top1_accuracy - ce.top1_accuracy,
        "tie_diff_leaf_only_minus_dot": leaf_only.mean_tie - dot.mean_tie,
        "tie_pooled_se_leaf_only_vs_dot": pooled_standard_error(
            leaf_only.per_trial_tie, dot.per_trial_tie
        ),
        "tie_diff_equal_minus_dot": equal.mean_tie - dot.mean_tie,
        "tie_pooled_se_equal_vs_dot": pooled_standard_error(
            equal.per_trial_tie, dot.per_trial_tie
        ),
    }
    return {
        "trials": trials,
        "split_hashes": hashes,
        "config": {
            "lr": base_cfg.lr,
            "batch_size": base_cfg.batch_size,
            "epochs": base_cfg.epochs,
            "optimizer": base_cfg.optimizer,
            "seed": base_cfg.seed,
            "transform": base_cfg.transform.spec(),
            "hidden_dim": base_cfg.hidden_dim,
        },
        "methods": {name: report.to_dict() for name, report in methods.items()},
        "comparison": comparison,
    }


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _json_text(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def render_eval_report(report: EvalReport, fmt: str = "table") -> str:
    if fmt == "json":
        return _json_text(report.to_dict())
    if fmt == "csv":
        lines = ["metric,value"]
        lines.append(f"mean_tie,{report.mean_tie!r}")
        lines.append(f"tie_std,{report.tie_std!r}")
        lines.append(f"top1_accuracy,{report.top1_accuracy!r}")
        lines.append(f"top1_std,{report.top1_std!r}")
        for k, v in sorted(report.topk_error.items()):
            lines.append(f"top{k}_error,{v!r}")
        lines.append(f"trials,{report.trials}")
        return "\n".join(lines) + "\n"
    if fmt == "table":
        rows = [
            ("mean_tie", f"{report.mean_tie:.6f} +/- {report.tie_std:.6f}"),
            ("top1_accuracy", f"{report.top1_accuracy:.6f} +/- {report.top1_std:.6f}"),
        ]
        for k, v in sorted(report.topk_error.items()):
            rows.append((f"top{k}_error", f"{v:.6f}"))
        rows.append(("trials", str(report.trials)))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"
    raise DataError(f"unknown report format {fmt!r}")


def render_compare_report(cmp: dict, fmt: str = "table") -> str:
    if fmt == "json":
        return _json_text(cmp)
    if fmt == "csv":
        lines = ["method,mean_tie,tie_std,top1_accuracy,top1_std"]
        for name, _, _ in COMPARE_METHODS:
            m = cmp["methods"][name]
            lines.append(
                f"{name},{m['mean_tie']!r},{m['tie_std']!r},"
                f"{m['top1_accuracy']!r},{m['top1_std']!r}"
            )
        return "\n".join(lines) + "\n"
    if fmt == "table":
        header = ("method", "mean_tie", "tie_std", "top1_acc", "top1_std")
        body = []
        for name, _, _ in COMPARE_METHODS:
            m = cmp["methods"][name]
            body.append(
                (
                    name,
                    f"{m['mean_tie']:.6f}",
                    f"{m['tie_std']:.6f}",
                    f"{m['top1_accuracy']:.6f}",
                    f"{m['top1_std']:.6f}",
                )
            )
        widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
        lines = ["  ".join(f"{cell:<{w}}" for cell, w in zip(row, widths)) for row in [header, *body]]
        c = cmp["comparison"]
        lines.append("")
        lines.append(
            f"tie diff ce-dot: {c['tie_diff_ce_minus_dot']:.6f} "
            f"(pooled se {c['tie_pooled_se_ce_vs_dot']:.6f})"
        )
        lines.append(f"top1 diff dot-ce: {c['top1_diff_dot_minus_ce']:.6f}")
        lines.append(f"trials: {cmp['trials']}, shared splits: {cmp['split_hashes'][0]}...")
        return "\n".join(lines) + "\n"
    raise DataError(f"unknown report format {fmt!r}")
