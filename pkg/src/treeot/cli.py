"""Command-line entry point wiring the modules into reproducible experiments.

Subcommands: ``tree`` (validate/describe a taxonomy), ``dump-matrix`` (ground
matrix CSV), ``gen`` (synthetic dataset), ``loss`` (per-row losses for a
prediction CSV), ``train``, ``eval``, and ``compare`` (the side-by-side
cross-entropy versus transport-loss table).

Exit codes: 0 success, 2 usage error, 3 data/validation error, 4 numeric
failure.  A ``--config`` file of ``key=value`` lines may supply any flag;
explicit command-line flags win.  All randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .datagen import GenConfig, dataset_to_csv, generate, parse_dataset_csv
from .errors import DataError, NumericError
from .evaluate import (
    EvalReport,
    compare_methods,
    render_compare_report,
    render_eval_report,
    run_trials,
    topk_error,
)
from .ground import GroundTransform, build_ground_matrix, matrix_to_csv
from .multitask import (
    TrainConfig,
    build_model,
    leaf_indices,
    leaf_probabilities,
    load_checkpoint,
    predict_leaf_batch,
    save_checkpoint,
    train,
)
from .taxonomy import parse_taxonomy, pairwise_tie_matrix, serialize_taxonomy
from .transport import ce_loss, one_hot_loss, regression_loss

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {path}")
    return p.read_text(encoding="utf-8")


def _write_text(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _load_tree(path: str):
    return parse_taxonomy(_read_text(path))


def _emit(text: str, out: str | None) -> None:
    if out:
        _write_text(out, text)
    else:
        sys.stdout.write(text)


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Turn config-file entries into parser defaults; flags still override."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return argv
    values = {}
    for lineno, raw in enumerate(_read_text(known.config).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{known.config}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    converters = {}
    for action in parser._actions:  # noqa: SLF001 - argparse has no public option registry
        if action.dest and action.dest != "help":
            converters[action.dest] = action.type or str
    defaults = {}
    for key, value in values.items():
        if key not in converters:
            raise DataError(f"{known.config}: unknown config key {key!r}")
        conv = converters[key]
        if conv is bool or isinstance(conv, type(None)):
            conv = str
        try:
            defaults[key] = conv(value)
        except ValueError as exc:
            raise DataError(f"{known.config}: bad value for {key}: {exc}") from None
    parser.set_defaults(**defaults)
    return argv


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--lr", type=float, default=2e-3, help="learning rate")
    sub.add_argument("--batch-size", type=int, default=128)
    sub.add_argument("--epochs", type=int, default=40)
    sub.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    sub.add_argument("--loss", choices=["dot", "ce"], default="dot")
    sub.add_argument(
        "--weights",
        dest="weight_mode",
        choices=["info-gain", "info-gain-signed", "uniform", "leaf-only"],
        default="info-gain",
        help="per-level weighting of the combined loss",
    )
    sub.add_argument("--hidden", dest="hidden_dim", type=int, default=32)
    sub.add_argument(
        "--transform",
        type=str,
        default="identity",
        help="ground transform: identity | power:P | huber:DELTA",
    )
    sub.add_argument("--seed", type=int, default=0)


def _add_gen_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--branching", type=int, default=3)
    sub.add_argument("--levels", type=int, default=3)
    sub.add_argument("--dim", type=int, default=16)
    sub.add_argument("--sigma0", type=float, default=1.0)
    sub.add_argument("--decay", type=float, default=0.5)
    sub.add_argument("--noise", type=float, default=0.8)
    sub.add_argument("--samples-per-leaf", type=int, default=200)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        optimizer=args.optimizer,
        loss=args.loss,
        weight_mode=args.weight_mode,
        seed=args.seed,
        transform=GroundTransform.parse(args.transform),
        hidden_dim=args.hidden_dim,
    )


def cmd_tree(args) -> int:
    taxonomy = _load_tree(args.tree)
    print(
        f"nodes={len(taxonomy.nodes)} leaves={len(taxonomy.leaves)} "
        f"levels={taxonomy.num_levels}"
    )
    if args.matrix:
        transform = GroundTransform.parse(args.transform)
        level = args.level if args.level is not None else taxonomy.num_levels
        matrix = build_ground_matrix(taxonomy, level, transform)
        _emit(matrix_to_csv(matrix), args.out)
    return EXIT_OK


def cmd_dump_matrix(args) -> int:
    taxonomy = _load_tree(args.tree)
    transform = GroundTransform.parse(args.transform)
    level = args.level if args.level is not None else taxonomy.num_levels
    matrix = build_ground_matrix(taxonomy, level, transform)
    _emit(matrix_to_csv(matrix), args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = GenConfig(
        branching=args.branching,
        levels=args.levels,
        dim=args.dim,
        sigma0=args.sigma0,
        decay=args.decay,
        noise=args.noise,
        samples_per_leaf=args.samples_per_leaf,
        seed=args.seed,
    )
    taxonomy = _load_tree(args.tree) if args.tree else None
    dataset = generate(cfg, taxonomy)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_text(out_dir / "data.csv", dataset_to_csv(dataset))
    _write_text(out_dir / "tree.txt", serialize_taxonomy(dataset.taxonomy))
    for key in ("branching", "levels", "dim", "sigma0", "decay", "noise",
                "samples_per_leaf", "seed"):
        print(f"{key}={getattr(cfg, key)}")
    print(f"rows={len(dataset.labels)}")
    return EXIT_OK


def _infer_prediction_level(taxonomy, columns):
    names = set(columns)
    for level in range(1, taxonomy.num_levels + 1):
        if set(taxonomy.level_classes(level)) == names:
            return level
    raise DataError(
        "prediction columns do not match the class set of any taxonomy level"
    )


def cmd_loss(args) -> int:
    taxonomy = _load_tree(args.tree)
    transform = GroundTransform.parse(args.transform)
    lines = [ln for ln in _read_text(args.predictions).splitlines() if ln.strip()]
    if len(lines) < 2:
        raise DataError("prediction file needs a header and at least one row")
    header = [h.strip() for h in lines[0].split(",")]
    if "target" not in header:
        raise DataError("prediction file must include a 'target' column")
    target_pos = header.index("target")
    class_cols = [h for i, h in enumerate(header) if i != target_pos]
    level = _infer_prediction_level(taxonomy, class_cols)
    matrix = build_ground_matrix(taxonomy, level, transform)
    order = [class_cols.index(name) for name in matrix.classes]

    losses = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields")
        target_name = parts[target_pos]
        try:
            raw = [float(parts[i]) for i in range(len(parts)) if i != target_pos]
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        probs = np.asarray(raw, dtype=float)[order]
        j = matrix.level.index_of(target_name)
        if args.loss == "dot":
            value = one_hot_loss(probs, j, matrix)
        elif args.loss == "ce":
            value = ce_loss(probs, j)
        else:
            value = regression_loss(probs, j, matrix)
        losses.append(value)

    out_lines = ["row,loss"]
    out_lines += [f"{i},{v!r}" for i, v in enumerate(losses)]
    out_lines.append(f"mean,{float(np.mean(losses))!r}")
    _emit("\n".join(out_lines) + "\n", args.out)
    return EXIT_OK


def _load_dataset(args):
    X, labels = parse_dataset_csv(_read_text(args.data))
    return X, labels


def cmd_train(args) -> int:
    taxonomy = _load_tree(args.tree)
    X, labels = _load_dataset(args)
    cfg = _train_config(args)
    model = build_model(
        taxonomy,
        X.shape[1],
        hidden_dim=cfg.hidden_dim,
        seed=cfg.seed,
        weight_mode=cfg.weight_mode,
        transform=cfg.transform,
    )
    result = train(model, X, labels, cfg)
    save_checkpoint(args.out, result.model)
    print(f"checkpoint={args.out}")
    print(f"final_loss={result.loss_trace[-1]!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    taxonomy = _load_tree(args.tree)
    X, labels = _load_dataset(args)
    model = load_checkpoint(args.checkpoint, taxonomy)
    y = leaf_indices(model, labels)
    preds = predict_leaf_batch(model, X)
    probs = leaf_probabilities(model, X)
    leaves = model.leaf_classes
    tie_m = pairwise_tie_matrix(taxonomy, leaves).astype(float)
    ks = [k for k in (1, 2, 5, 10) if k <= len(leaves)]
    confusion: dict[str, dict[str, int]] = {}
    for p, t in zip(preds, y):
        row = confusion.setdefault(leaves[int(t)], {})
        row[leaves[int(p)]] = row.get(leaves[int(p)], 0) + 1
    report = EvalReport(
        mean_tie=float(tie_m[preds, y].mean()),
        tie_std=0.0,
        top1_accuracy=float((preds == y).mean()),
        top1_std=0.0,
        topk_error={k: topk_error(probs, y, k) for k in ks},
        confusion={t: dict(sorted(r.items())) for t, r in sorted(confusion.items())},
        trials=1,
        per_trial_tie=[float(tie_m[preds, y].mean())],
        per_trial_top1=[float((preds == y).mean())],
    )
    _emit(render_eval_report(report, args.format), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.data:
        if not args.tree:
            raise DataError("--data requires --tree")
        taxonomy = _load_tree(args.tree)
        X, labels = _load_dataset(args)
    else:
        cfg = GenConfig(
            branching=args.branching,
            levels=args.levels,
            dim=args.dim,
            sigma0=args.sigma0,
            decay=args.decay,
            noise=args.noise,
            samples_per_leaf=args.samples_per_leaf,
            seed=args.seed,
        )
        taxonomy = _load_tree(args.tree) if args.tree else None
        dataset = generate(cfg, taxonomy)
        taxonomy = dataset.taxonomy
        X, labels = dataset.features, dataset.labels
    base_cfg = _train_config(args)
    cmp = compare_methods(X, labels, taxonomy, base_cfg, args.trials)
    _emit(render_compare_report(cmp, args.format), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeot",
        description="Tree-aware classification risk via exact discrete optimal transport.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("tree", help="validate a taxonomy file and print stats")
    p.add_argument("tree")
    p.add_argument("--matrix", action="store_true", help="also dump the ground matrix CSV")
    p.add_argument("--level", type=int, default=None, help="matrix level (default: leaf level)")
    p.add_argument("--transform", type=str, default="identity")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_tree)

    p = subs.add_parser("dump-matrix", help="write a level's ground matrix as CSV")
    p.add_argument("tree")
    p.add_argument("--level", type=int, default=None, help="default: leaf level")
    p.add_argument("--transform", type=str, default="identity")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_dump_matrix)

    p = subs.add_parser("gen", help="generate a synthetic dataset and its tree")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tree", type=str, default=None, help="use an existing taxonomy")
    _add_gen_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_gen)

    p = subs.add_parser("loss", help="per-row losses for a prediction CSV")
    p.add_argument("--tree", required=True)
    p.add_argument("--predictions", required=True, help="CSV with class columns + target column")
    p.add_argument("--loss", choices=["dot", "ce", "regression"], default="dot")
    p.add_argument("--transform", type=str, default="identity")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_loss)

    p = subs.add_parser("train", help="train a multi-level model")
    p.add_argument("--tree", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_train_flags(p)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--tree", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=["json", "table", "csv"], default="table")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser(
        "compare", help="side-by-side cross-entropy vs transport-loss table"
    )
    p.add_argument("--tree", type=str, default=None)
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--trials", type=int, default=10)
    _add_gen_flags(p)
    _add_train_flags(p)
    p.add_argument("--format", choices=["json", "table", "csv"], default="table")
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args_probe = [a for a in argv]
        # apply config defaults against the matched subparser, if any
        if args_probe and not args_probe[0].startswith("-"):
            sub_map = next(
                a.choices for a in parser._subparsers._group_actions  # noqa: SLF001
            )
            sub = sub_map.get(args_probe[0])
            if sub is not None:
                _apply_config_file(sub, args_probe[1:])
        args = parser.parse_args(argv)
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
