"""End-to-end pipeline orchestration, ablation sweeps, and reports.

A pipeline run executes, per (noise level, repetition): corrupt the
clean bundle, split off a noisy validation set, train the warmup
classifier, extract representations, fit parts, pick anchors and
estimate their transition rows, fit the per-part matrices, assemble
per-instance transition matrices, then train and evaluate one
classifier per requested risk kind. Every stage writes its artifact
into a run directory addressed by a hash of the resolved config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .anchors import estimate_anchor_rows, save_anchors, select_anchors
from .classifier import (
    RISK_KINDS,
    TrainConfig,
    evaluate,
    hidden_representations,
    predict_posterior,
    save_model,
    train,
)
from .dataio import (
    Dataset,
    SplitSpec,
    load_bundle,
    save_bundle,
    split_indices,
    split_train_val,
)
from .errors import ConfigError, DataError, PartnoiseError
from .noisegen import NoiseGenConfig, corrupt_dataset, noise_model, true_transitions
from .parts import fit_parts, infer_coefficients_batch, save_parts
from .simplexopt import ProjGradConfig
from .stats import ttest_two_sample
from .transition import (
    class_dependent_baseline,
    combine_batch,
    fit_part_matrices,
    revise_batch,
    save_stack,
)

__all__ = [
    "PartsBudget",
    "ExperimentConfig",
    "config_from_dict",
    "config_to_dict",
    "config_hash",
    "run_pipeline",
    "approximation_sweep",
    "ttest_two_sample",
]

_DEFAULT_R_VALUES = tuple(range(10, 21))


@dataclass(frozen=True)
class PartsBudget:
    """Iteration budget for the parts fit inside the pipeline."""

    alternations: int = 60
    restarts: int = 1
    inner_iters: int = 50

    def __post_init__(self) -> None:
        if self.alternations < 1 or self.restarts < 1 or self.inner_iters < 1:
            raise ConfigError("parts budget values must be at least 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved settings for a pipeline run or a sweep.

    dataset points at a bundle with clean labels (corrupted in-run per
    tau) or at an already-noisy bundle, in which case the tau list is
    ignored by the noise stage. test_dataset, when given, must carry
    clean labels; otherwise a clean test fraction is held out of the
    input bundle before corruption.
    """

    dataset: str
    test_dataset: str | None = None
    output_dir: str = "runs"
    taus: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    r: int = 10
    k: int = 20
    kinds: tuple[str, ...] = ("ce", "ptd_f", "ptd_r", "ptd_f_v", "ptd_r_v")
    repetitions: int = 5
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    representations: str = "hidden"
    include_clean_oracle: bool = False
    oracle_transitions: bool = False
    dump_transitions: bool = False
    revised_in_sweep: bool = False
    corrected_learning_rate: float | None = 1e-4
    solver: ProjGradConfig = field(default_factory=ProjGradConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    parts: PartsBudget = field(default_factory=PartsBudget)

    def __post_init__(self) -> None:
        if not self.taus:
            raise ConfigError("taus must be a nonempty list")
        for tau in self.taus:
            if not 0.0 <= tau <= 1.0:
                raise ConfigError(f"tau {tau} outside [0, 1]")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.r < 1 or self.k < 1:
            raise ConfigError("r and k must be at least 1")
        if not self.kinds:
            raise ConfigError("kinds must be a nonempty list")
        for kind in self.kinds:
            if kind not in RISK_KINDS:
                raise ConfigError(
                    f"unknown risk kind {kind!r}; expected one of {RISK_KINDS}"
                )
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.representations not in ("hidden", "raw"):
            raise ConfigError("representations must be 'hidden' or 'raw'")
        if (
            self.corrected_learning_rate is not None
            and not self.corrected_learning_rate > 0
        ):
            raise ConfigError("corrected_learning_rate must be positive when set")


_SECTION_TYPES = {"solver": ProjGradConfig, "train": TrainConfig, "parts": PartsBudget}
_LIST_FIELDS = {"taus": float, "kinds": str}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from nested plain dicts (JSON shape).

    Unknown keys anywhere are configuration errors, so typos fail loud
    instead of silently running defaults.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _SECTION_TYPES:
            cls = _SECTION_TYPES[key]
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            section_known = {f.name for f in dataclasses.fields(cls)}
            for sub in value:
                if sub not in section_known:
                    raise ConfigError(f"unknown key {sub!r} in section {key!r}")
            section = dict(value)
            if "hidden_layers" in section:
                section["hidden_layers"] = tuple(section["hidden_layers"])
            kwargs[key] = cls(**section)
        elif key in _LIST_FIELDS:
            kwargs[key] = tuple(_LIST_FIELDS[key](v) for v in value)
        else:
            kwargs[key] = value
    if "dataset" not in kwargs:
        raise ConfigError("config needs a 'dataset' bundle path")
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-JSON form of the resolved config (echoed into reports)."""
    out = dataclasses.asdict(config)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    for section in _SECTION_TYPES:
        for key, value in out[section].items():
            if isinstance(value, tuple):
                out[section][key] = list(value)
    return out


def config_hash(config: ExperimentConfig) -> str:
    """Short content address of the resolved config."""
    canon = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _run_stage(stage: str, fn, *args, **kwargs):
    # abort with the stage name; artifacts written so far stay on disk
    try:
        return fn(*args, **kwargs)
    except PartnoiseError as exc:
        raise type(exc)(f"stage {stage}: {exc}") from exc
    except Exception as exc:
        raise PartnoiseError(f"stage {stage}: {exc}") from exc


def _cell_seeds(config: ExperimentConfig, tau_index: int, rep: int) -> dict:
    ss = np.random.SeedSequence([config.seed, tau_index, rep])
    noise, split, train_seed, solver = (int(v) for v in ss.generate_state(4))
    return {"noise": noise, "split": split, "train": train_seed, "solver": solver}


def _carve_test(dataset: Dataset, config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    main_idx, test_idx = split_indices(
        dataset.n, SplitSpec(val_fraction=config.test_fraction, seed=config.seed)
    )
    return dataset.subset(main_idx), dataset.subset(test_idx)


def _representations(kind: str, params, features: np.ndarray) -> np.ndarray:
    if kind == "raw":
        return np.array(features)
    return hidden_representations(params, features)


def _estimate_transitions(config, warmup_params, tr, va, solver_cfg, rep_dir, record):
    """Algorithm steps 2-6: representations through per-instance assembly."""
    reps_tr = _run_stage(
        "representations",
        _representations,
        config.representations,
        warmup_params,
        tr.features,
    )
    reps_va = _representations(config.representations, warmup_params, va.features)
    np.savetxt(rep_dir / "step2_representations.csv", reps_tr, fmt="%.17g", delimiter=",")

    model = _run_stage(
        "parts",
        fit_parts,
        reps_tr.T,
        config.r,
        config=solver_cfg,
        alternations=config.parts.alternations,
        restarts=config.parts.restarts,
        inner_iters=config.parts.inner_iters,
    )
    save_parts(model, rep_dir / "step3_parts")

    post_tr = predict_posterior(warmup_params, tr.features)
    anchors = _run_stage("anchors", select_anchors, post_tr, config.k)
    rows = estimate_anchor_rows(anchors, post_tr)
    save_anchors(anchors, rows, rep_dir / "step4_anchors.json")

    coeffs = model.h[:, anchors.indices].transpose(1, 2, 0)
    stack = _run_stage("part_matrices", fit_part_matrices, rows.rows, coeffs, solver_cfg)
    save_stack(stack, rep_dir / "step5_part_matrices")

    t_tr = _run_stage("combine", combine_batch, stack, model.h)
    h_va = infer_coefficients_batch(model, reps_va.T, solver_cfg)
    t_va = combine_batch(stack, h_va)
    # per-instance matrices are recomputable from steps 3 + 5; the
    # explicit dump (when enabled) happens after the final stacks are
    # chosen, so in oracle mode it holds what training actually saw
    (rep_dir / "step6_combine.json").write_text(
        json.dumps(
            {"instances": tr.n, "classes": tr.class_count, "parts": config.r},
            sort_keys=True,
        )
    )
    record["anchor_fallbacks"] = list(anchors.fallback_count)
    record["parts_objective"] = model.final_objective
    return t_tr, t_va, stack, model


def _oracle_transitions(noise_cfg, raw_features, class_count, idx_tr, idx_va):
    n, d = raw_features.shape
    rates, projection = noise_model(n, d, class_count, noise_cfg)
    stacks = true_transitions(raw_features, rates, projection)
    return stacks[idx_tr], stacks[idx_va]


def _train_kind(config, kind, tr, va, t_tr, t_va, warmup, seeds):
    base = replace(config.train, seed=seeds["train"])
    if kind == "ce":
        return warmup
    lr = config.corrected_learning_rate or config.train.learning_rate
    cfg = replace(base, learning_rate=lr)
    return _run_stage(
        f"train_{kind}",
        train,
        tr,
        va,
        kind,
        transitions=t_tr,
        val_transitions=t_va,
        config=cfg,
        init=warmup.params,
    )


def _run_cell(config, main_set, test_set, tau, tau_index, rep, rep_dir, timings):
    rep_dir.mkdir(parents=True, exist_ok=True)
    seeds = _cell_seeds(config, tau_index, rep)
    record: dict = {}
    t0 = time.perf_counter()

    if main_set.noisy_labels is None:
        noise_cfg = NoiseGenConfig(tau=tau, seed=seeds["noise"])
        corrupted = _run_stage("corrupt", corrupt_dataset, main_set, noise_cfg)
    else:
        noise_cfg = None
        corrupted = main_set
    save_bundle(corrupted, rep_dir / "corrupted")

    tr, va = _run_stage(
        "split",
        split_train_val,
        corrupted,
        SplitSpec(val_fraction=config.val_fraction, seed=seeds["split"]),
    )
    idx_tr, idx_va = split_indices(
        corrupted.n, SplitSpec(val_fraction=config.val_fraction, seed=seeds["split"])
    )

    warm_cfg = replace(config.train, seed=seeds["train"])
    warmup = _run_stage("warmup", train, tr, va, "ce", config=warm_cfg)
    save_model(warmup.params, rep_dir / "step1_warmup_model.json")
    warmup.log.to_csv(rep_dir / "step1_train_log.csv")

    solver_cfg = replace(config.solver, seed=seeds["solver"])
    needs_estimate = any(k != "ce" for k in config.kinds) and not config.oracle_transitions
    t_tr = t_va = None
    if config.oracle_transitions:
        if noise_cfg is None:
            raise ConfigError(
                "oracle_transitions needs in-run corruption (clean input bundle)"
            )
        t_tr, t_va = _run_stage(
            "oracle_transitions",
            _oracle_transitions,
            noise_cfg,
            main_set.features,
            main_set.class_count,
            idx_tr,
            idx_va,
        )
        # estimation steps still run so the run directory keeps the full
        # Algorithm-1 trace; corrected training uses the oracle stacks
        _estimate_transitions(config, warmup.params, tr, va, solver_cfg, rep_dir, record)
    elif needs_estimate:
        t_tr, t_va, _, _ = _estimate_transitions(
            config, warmup.params, tr, va, solver_cfg, rep_dir, record
        )
    if config.dump_transitions and t_tr is not None:
        np.savetxt(
            rep_dir / "step6_transitions.csv",
            t_tr.reshape(tr.n, -1),
            fmt="%.17g",
            delimiter=",",
        )

    accuracies = {}
    for kind in config.kinds:
        result = _train_kind(config, kind, tr, va, t_tr, t_va, warmup, seeds)
        if kind != "ce":
            save_model(result.params, rep_dir / f"model_{kind}.json")
            result.log.to_csv(rep_dir / f"train_log_{kind}.csv")
        accuracies[kind] = _run_stage("evaluate", evaluate, result.params, test_set)
    if config.include_clean_oracle:
        if tr.clean_labels is None:
            raise DataError("clean oracle needs clean labels in the training bundle")
        oracle = _run_stage(
            "clean_oracle",
            train,
            tr.replace(noisy_labels=tr.clean_labels),
            va.replace(noisy_labels=va.clean_labels),
            "ce",
            config=warm_cfg,
        )
        accuracies["clean_oracle"] = evaluate(oracle.params, test_set)

    timings[f"tau_{tau:g}/rep_{rep}"] = time.perf_counter() - t0
    record["accuracy"] = accuracies
    (rep_dir / "cell.json").write_text(json.dumps(record, sort_keys=True, indent=2))
    return accuracies


def run_pipeline(config: ExperimentConfig) -> dict:
    """Execute the full pipeline over the tau sweep and repetitions.

    Returns the report dict; also writes report.json plus per-stage
    artifacts under <output_dir>/<config hash>/.
    """
    main_set, _ = _run_stage("load", load_bundle, config.dataset)
    if config.test_dataset is not None:
        test_set, _ = _run_stage("load", load_bundle, config.test_dataset)
    else:
        main_set, test_set = _carve_test(main_set, config)
    if test_set.clean_labels is None:
        raise DataError("the test set needs clean labels for evaluation")

    run_dir = Path(config.output_dir) / config_hash(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "resolved_config.json").write_text(
        json.dumps(config_to_dict(config), sort_keys=True, indent=2)
    )

    timings: dict = {}
    accuracy: dict = {}
    ttests: dict = {}
    methods_seen: list[str] = []
    for tau_index, tau in enumerate(config.taus):
        per_kind: dict[str, list[float]] = {}
        for rep in range(config.repetitions):
            rep_dir = run_dir / f"tau_{tau:g}" / f"rep_{rep}"
            cell = _run_cell(
                config, main_set, test_set, tau, tau_index, rep, rep_dir, timings
            )
            for kind, acc in cell.items():
                per_kind.setdefault(kind, []).append(acc)
        accuracy[f"{tau:g}"] = {
            kind: {
                "values": values,
                "mean": float(np.mean(values)),
                "std": float(np.std(values)),
            }
            for kind, values in per_kind.items()
        }
        methods_seen = list(per_kind)
        if config.repetitions >= 2:
            pairs = {}
            for a, b in itertools.combinations(per_kind, 2):
                pairs[f"{a}|{b}"] = ttest_two_sample(per_kind[a], per_kind[b])
            ttests[f"{tau:g}"] = pairs

    report = {
        "config": config_to_dict(config),
        "methods": methods_seen,
        "accuracy": accuracy,
        "ttests": ttests,
        "timings": timings,
    }
    (run_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    return report


def _row_errors(rows_hat: np.ndarray, true_rows: np.ndarray) -> tuple[float, float]:
    err = np.abs(rows_hat - true_rows).sum(axis=1)
    return float(err.mean()), float(err.std())


def approximation_sweep(
    config: ExperimentConfig, r_values: tuple[int, ...] | None = None
) -> dict:
    """Per-r transition-row approximation errors against stored truth.

    For every tau, one corruption + warmup is shared across the r
    sweep; each instance contributes the l1 distance between its
    estimated row at the clean label and the row its noisy label was
    actually drawn from. Columns: a class-dependent baseline (constant
    in r), the part-dependent estimate per r, and optionally the
    slack-revised class-dependent variant.
    """
    r_values = tuple(r_values) if r_values is not None else _DEFAULT_R_VALUES
    if not r_values or any(r < 1 for r in r_values):
        raise ConfigError("r_values must be positive")
    main_set, _ = _run_stage("load", load_bundle, config.dataset)

    out: dict = {}
    for tau_index, tau in enumerate(config.taus):
        seeds = _cell_seeds(config, tau_index, 0)
        if main_set.noisy_labels is None:
            corrupted = corrupt_dataset(
                main_set, NoiseGenConfig(tau=tau, seed=seeds["noise"])
            )
        else:
            corrupted = main_set
        if corrupted.true_rows is None:
            raise DataError("approximation_sweep needs true_rows on the noisy data")
        if corrupted.clean_labels is None:
            raise DataError("approximation_sweep needs clean labels to index rows")

        tr, va = split_train_val(
            corrupted, SplitSpec(val_fraction=config.val_fraction, seed=seeds["split"])
        )
        warm_cfg = replace(config.train, seed=seeds["train"])
        warmup = _run_stage("warmup", train, tr, va, "ce", config=warm_cfg)
        reps_tr = _representations(config.representations, warmup.params, tr.features)
        post_tr = predict_posterior(warmup.params, tr.features)
        anchors = select_anchors(post_tr, config.k)
        rows = estimate_anchor_rows(anchors, post_tr)
        solver_cfg = replace(config.solver, seed=seeds["solver"])

        labels = tr.clean_labels
        true_rows = tr.true_rows
        idx = np.arange(tr.n)

        baseline = class_dependent_baseline(rows.rows)
        cd_mean, cd_std = _row_errors(baseline[labels], true_rows)
        entry: dict = {
            "class_dependent": {"mean": cd_mean, "std": cd_std},
            "ptd": {},
        }

        if config.revised_in_sweep:
            tile_tr = np.broadcast_to(
                baseline, (tr.n, *baseline.shape)
            ).copy()
            tile_va = np.broadcast_to(baseline, (va.n, *baseline.shape)).copy()
            lr = config.corrected_learning_rate or config.train.learning_rate
            revision = train(
                tr,
                va,
                "ptd_r_v",
                transitions=tile_tr,
                val_transitions=tile_va,
                config=replace(warm_cfg, learning_rate=lr),
                init=warmup.params,
            )
            slack = revision.slack if revision.slack is not None else np.zeros_like(baseline)
            revised_rows = revise_batch(tile_tr, slack)[idx, labels]
            rv_mean, rv_std = _row_errors(revised_rows, true_rows)
            entry["revised"] = {"mean": rv_mean, "std": rv_std}

        for r in r_values:
            model = fit_parts(
                reps_tr.T,
                r,
                config=solver_cfg,
                alternations=config.parts.alternations,
                restarts=config.parts.restarts,
                inner_iters=config.parts.inner_iters,
            )
            coeffs = model.h[:, anchors.indices].transpose(1, 2, 0)
            stack = fit_part_matrices(rows.rows, coeffs, solver_cfg)
            t_hat = combine_batch(stack, model.h)
            mean, std = _row_errors(t_hat[idx, labels], true_rows)
            entry["ptd"][str(r)] = {"mean": mean, "std": std}
        out[f"{tau:g}"] = entry
    return {"config": config_to_dict(config), "approximation": out}
