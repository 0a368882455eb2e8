"""Command-line interface.

One subcommand per pipeline stage plus end-to-end drivers. Exit codes:
0 on success, 2 for configuration or usage errors, 3 for data errors,
4 when an iterative solver fails to converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .anchors import estimate_anchor_rows, load_anchors, save_anchors, select_anchors
from .classifier import (
    TrainConfig,
    evaluate,
    load_model,
    predict_posterior,
    save_model,
    train,
)
from .dataio import SplitSpec, load_bundle, save_bundle, split_indices, split_train_val
from .errors import ConfigError, ConvergenceError, DataError
from .harness import (
    approximation_sweep,
    config_from_dict,
    config_hash,
    run_pipeline,
    ttest_two_sample,
)
from .noisegen import NoiseGenConfig, corrupt_dataset
from .parts import fit_parts, load_parts, save_parts
from .reporting import emit_report
from .simplexopt import ProjGradConfig
from .transition import combine_batch, fit_part_matrices, load_stack, save_stack

__all__ = ["main"]


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def _load_config(path: str):
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def _cmd_corrupt(args) -> int:
    dataset, _ = load_bundle(args.input)
    noisy = corrupt_dataset(dataset, NoiseGenConfig(tau=args.tau, seed=args.seed))
    save_bundle(noisy, args.output, extra_meta={"tau": args.tau, "seed": args.seed})
    flipped = float(np.mean(noisy.noisy_labels != noisy.clean_labels))
    print(f"wrote {args.output} ({noisy.n} instances, flip fraction {flipped:.4f})")
    return 0


def _cmd_factorize(args) -> int:
    dataset, _ = load_bundle(args.input)
    model = fit_parts(
        dataset.features.T,
        args.r,
        config=ProjGradConfig(seed=args.seed),
        alternations=args.alternations,
        restarts=args.restarts,
        inner_iters=args.inner_iters,
    )
    save_parts(model, args.output)
    print(f"wrote {args.output} (r={args.r}, objective {model.final_objective:.6g})")
    return 0


def _cmd_anchors(args) -> int:
    dataset, _ = load_bundle(args.input)
    params = load_model(args.model)
    posterior = predict_posterior(params, dataset.features)
    anchor_set = select_anchors(posterior, args.k)
    rows = estimate_anchor_rows(anchor_set, posterior)
    save_anchors(anchor_set, rows, args.output)
    print(f"wrote {args.output} (k={args.k}, fallbacks {list(anchor_set.fallback_count)})")
    return 0


def _cmd_fit_transition(args) -> int:
    model = load_parts(args.parts)
    anchor_set, rows = load_anchors(args.anchors)
    coefficients = model.h[:, anchor_set.indices].transpose(1, 2, 0)
    stack = fit_part_matrices(
        rows.rows, coefficients, ProjGradConfig(seed=args.seed)
    )
    save_stack(stack, args.output)
    print(f"wrote {args.output} ({stack.matrices.shape[0]} part matrices)")
    return 0


def _cmd_train(args) -> int:
    dataset, _ = load_bundle(args.input)
    spec = SplitSpec(val_fraction=args.val_fraction, seed=args.seed)
    train_set, val_set = split_train_val(dataset, spec)

    transitions = val_transitions = None
    if args.kind != "ce":
        if not (args.parts and args.stack):
            raise ConfigError(
                f"kind {args.kind!r} needs --parts and --stack to assemble "
                "per-instance transition matrices"
            )
        model = load_parts(args.parts)
        stack = load_stack(args.stack)
        if model.h.shape[1] != dataset.n:
            raise DataError(
                f"parts coefficients cover {model.h.shape[1]} instances, "
                f"bundle has {dataset.n}"
            )
        full = combine_batch(stack, model.h)
        idx_tr, idx_va = split_indices(dataset.n, spec)
        transitions, val_transitions = full[idx_tr], full[idx_va]

    config = TrainConfig()
    if args.epochs is not None:
        config = replace(config, epochs=args.epochs)
    if args.learning_rate is not None:
        config = replace(config, learning_rate=args.learning_rate)
    if args.hidden is not None:
        config = replace(config, hidden_layers=_ints(args.hidden))
    config = replace(config, seed=args.seed)

    init = load_model(args.init) if args.init else None
    result = train(
        train_set,
        val_set,
        args.kind,
        transitions=transitions,
        val_transitions=val_transitions,
        config=config,
        init=init,
    )
    save_model(result.params, args.output)
    if args.log:
        result.log.to_csv(args.log)
    print(
        f"wrote {args.output} (selected epoch {result.log.selected_epoch}, "
        f"val accuracy {result.log.selected_val_accuracy:.4f})"
    )
    return 0


def _cmd_evaluate(args) -> int:
    dataset, _ = load_bundle(args.input)
    params = load_model(args.model)
    accuracy = evaluate(params, dataset)
    print(f"{accuracy:.6f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    r_values = tuple(int(r) for r in _floats(args.r_values)) if args.r_values else None
    report = approximation_sweep(config, r_values)
    out = Path(args.output) if args.output else (
        Path(config.output_dir) / f"{config_hash(config)}-sweep"
    )
    emit_report(report, out)
    print(f"wrote {out}")
    return 0


def _cmd_ttest(args) -> int:
    p = ttest_two_sample(_floats(args.a), _floats(args.b), welch=args.welch)
    print(f"{p:.10g}")
    return 0


def _cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.input).read_text())
    except FileNotFoundError as exc:
        raise DataError(f"report not found: {args.input}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.input} is not valid JSON: {exc}") from exc
    written = emit_report(report, args.output)
    print(f"wrote {len(written)} files to {args.output}")
    return 0


def _cmd_pipeline(args) -> int:
    config = _load_config(args.config)
    report = run_pipeline(config)
    run_dir = Path(config.output_dir) / config_hash(config)
    emit_report(report, run_dir)
    print(f"wrote {run_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partnoise",
        description="Part-dependent label-noise pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="inject instance-dependent label noise")
    p.add_argument("--input", required=True, help="clean bundle directory")
    p.add_argument("--output", required=True, help="output bundle directory")
    p.add_argument("--tau", type=float, required=True, help="mean flip rate")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("factorize", help="fit the parts model on bundle features")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="parts output directory")
    p.add_argument("--r", type=int, required=True, help="number of parts")
    p.add_argument("--alternations", type=int, default=200)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--inner-iters", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_factorize)

    p = sub.add_parser("anchors", help="select anchors and estimate their rows")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True, help="classifier file for posteriors")
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=20, help="anchors per class")
    p.set_defaults(func=_cmd_anchors)

    p = sub.add_parser("fit-transition", help="fit per-part transition matrices")
    p.add_argument("--anchors", required=True, help="anchors file")
    p.add_argument("--parts", required=True, help="parts directory")
    p.add_argument("--output", required=True, help="stack output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_fit_transition)

    p = sub.add_parser("train", help="train a classifier under one risk kind")
    p.add_argument("--input", required=True, help="noisy bundle directory")
    p.add_argument("--output", required=True, help="model output file")
    p.add_argument("--kind", required=True, choices=("ce", "ptd_f", "ptd_r", "ptd_f_v", "ptd_r_v"))
    p.add_argument("--parts", help="parts directory (corrected kinds)")
    p.add_argument("--stack", help="part-matrix directory (corrected kinds)")
    p.add_argument("--init", help="warm-start classifier file")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hidden", help="comma-separated hidden layer sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", help="write the per-epoch training log CSV here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="accuracy of a model on clean labels")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="transition approximation error over r")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--r-values", help="comma-separated r values")
    p.add_argument("--output", help="report directory (defaults under output_dir)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ttest", help="two-sample Student t-test p-value")
    p.add_argument("--a", required=True, help="comma-separated sample")
    p.add_argument("--b", required=True, help="comma-separated sample")
    p.add_argument("--welch", action="store_true", help="unequal-variance form")
    p.set_defaults(func=_cmd_ttest)

    p = sub.add_parser("report", help="render tables and figures from report JSON")
    p.add_argument("--input", required=True, help="report.json path")
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("pipeline", help="run the full experiment end to end")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
