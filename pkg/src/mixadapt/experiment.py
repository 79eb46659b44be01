"""Run orchestration: drives the trainer epoch by epoch, evaluates against
held-out target labels, and persists artifacts into a run directory.

Each run directory contains ``config.resolved`` (written before training),
an append-only ``metrics.jsonl`` with one JSON object per epoch, model
checkpoints, and optional per-epoch debug dumps. Loss fields come from the
training pass and never touch target ground truth; evaluation fields are
recomputed from the post-epoch model against the held-out labels.
"""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .crossmix import write_pair_dump
from .evaluate import (
    AblationRow,
    AblationTable,
    EpochMetrics,
    bucket_accuracy,
    export_embeddings,
    matching_accuracy,
    prediction_accuracy,
)
from .selection import (
    compute_entropy_table,
    compute_score_matrix,
    nearest_source_match,
    split_by_difficulty,
    write_selection_dump,
)
from .trainer import HyperParams, Trainer

METRIC_KEYS = (
    "epoch",
    "target_acc",
    "matching_acc",
    "bucket_acc_easy",
    "bucket_acc_hard",
    "bucket_acc_outlier",
    "loss_cls",
    "loss_mi",
    "loss_self",
    "loss_xvd",
    "loss_ivd",
    "loss_total",
)


def _make_run_dir(root: Path, variant: str, seed: int) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    base = root / f"{variant}_{seed}_{stamp}"
    run_dir = base
    suffix = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{suffix}")
        suffix += 1
    run_dir.mkdir(parents=True)
    return run_dir


def _evaluate_epoch(trainer: Trainer, d_ut_labeled, hp: HyperParams, epoch: int, losses, frozen_split):
    """Post-epoch evaluation snapshot; returns (EpochMetrics, frozen_split)."""
    feats_t, preds_t = trainer.model.extract_all(d_ut_labeled.inputs, hp.eval_batch_size)
    feats_ls, _ = trainer.model.extract_all(trainer.d_ls.inputs, hp.eval_batch_size)
    pred_classes = np.argmax(preds_t, axis=1)
    score = compute_score_matrix(feats_t.features, feats_ls.features, epoch=epoch)
    match = nearest_source_match(score)
    table = compute_entropy_table(preds_t, epoch=epoch)
    split = split_by_difficulty(table, hp.easy_fraction, hp.hard_fraction)
    if frozen_split is None:
        frozen_split = split
    buckets = dict(bucket_accuracy(split, pred_classes, d_ut_labeled.labels))
    # same accuracies on the epoch-1 difficulty split, for curve comparison
    for name, acc in bucket_accuracy(frozen_split, pred_classes, d_ut_labeled.labels).items():
        buckets[f"{name}_init"] = acc
    metrics = EpochMetrics(
        epoch=epoch,
        target_accuracy=prediction_accuracy(pred_classes, d_ut_labeled.labels),
        matching_accuracy=matching_accuracy(match, d_ut_labeled.labels, trainer.d_ls.labels),
        bucket_accuracies=buckets,
        losses={k: losses[k] for k in ("loss_cls", "loss_mi", "loss_self", "loss_xvd", "loss_ivd", "loss_total")},
    )
    return metrics, frozen_split


def _write_debug_dumps(run_dir: Path, trainer: Trainer, epoch: int):
    dump_dir = run_dir / "debug" / f"epoch_{epoch:04d}"
    state = trainer.state
    intra_split = state.intra_plan.split if state.intra_plan is not None else None
    write_selection_dump(dump_dir, state.score_matrix, state.entropy_table, intra_split)
    cross_set = trainer._cross_set(state)
    if cross_set is not None and len(cross_set):
        write_pair_dump(dump_dir / "cross_pairs.tsv", cross_set)
    intra_set = trainer._intra_set(state)
    if intra_set is not None and len(intra_set):
        write_pair_dump(dump_dir / "intra_pairs.tsv", intra_set)


def run_experiment(
    config: RunConfig,
    seed: int | None = None,
    variant: str | None = None,
    datasets=None,
    run_dir: Path | None = None,
) -> Path:
    """Execute one training run and return its run directory.

    ``datasets`` may inject pre-built ``(d_ls, d_us, d_ut_labeled)`` tuples
    (the label-leak audit relies on this); by default they are built from
    the config. The resolved config is written before training starts, and
    ``metrics.jsonl`` grows one line per epoch so a mid-run failure leaves
    the completed epochs intact.
    """
    config.validate()
    seed = int(seed) if seed is not None else int(config.seeds[0])
    variant = variant or config.variant
    hp = HyperParams.from_dict({**config.hp.to_dict(), "seed": seed})

    if run_dir is None:
        run_dir = _make_run_dir(Path(config.out_root), variant, seed)
    else:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
    resolved = replace(config, variant=variant, seeds=(seed,), hp=hp)
    (run_dir / "config.resolved").write_text(resolved.resolved_text(seed), encoding="utf-8")

    if datasets is None:
        datasets = config.make_datasets(seed)
    d_ls, d_us, d_ut_labeled = datasets

    trainer = Trainer(hp, d_ls, d_us, d_ut_labeled, variant=variant)
    metrics_path = run_dir / "metrics.jsonl"
    ckpt_dir = run_dir / "checkpoints"
    frozen_split = None

    with open(metrics_path, "w", encoding="utf-8") as fh:
        for epoch in range(1, hp.epochs + 1):
            losses = trainer.run_epoch(epoch)
            metrics, frozen_split = _evaluate_epoch(
                trainer, d_ut_labeled, hp, epoch, losses, frozen_split
            )
            fh.write(json.dumps(metrics.to_record()) + "\n")
            fh.flush()
            if config.debug_dumps:
                _write_debug_dumps(run_dir, trainer, epoch)
            interval = config.checkpoint_interval
            if (interval and epoch % interval == 0) or epoch == hp.epochs:
                ckpt_dir.mkdir(exist_ok=True)
                trainer.model.save(ckpt_dir / f"epoch_{epoch:04d}.npz")
    if config.debug_dumps and hp.epochs > 0:
        _export_final_embeddings(run_dir, trainer, d_ut_labeled, hp)
    return run_dir


def _export_final_embeddings(run_dir: Path, trainer: Trainer, d_ut_labeled, hp):
    """Source + target feature rows for an external projector."""
    fb_s, _ = trainer.model.extract_all(trainer.source_inputs, hp.eval_batch_size)
    fb_t, _ = trainer.model.extract_all(d_ut_labeled.inputs, hp.eval_batch_size)
    n_ls = len(trainer.d_ls)
    source_labels = np.concatenate(
        [trainer.d_ls.labels, np.full(fb_s.features.shape[0] - n_ls, -1, dtype=np.int64)]
    )
    feats = np.vstack([fb_s.features, fb_t.features])
    labels = np.concatenate([source_labels, d_ut_labeled.labels])
    domains = ["source"] * fb_s.features.shape[0] + ["target"] * fb_t.features.shape[0]
    export_embeddings(feats, labels, domains, run_dir / "embeddings.csv")


def run_ablation(config: RunConfig, variants, seeds, out_root: Path | None = None):
    """Multi-variant multi-seed driver around :func:`run_experiment`.

    Returns ``(AblationTable, run_dirs)`` where final-epoch target accuracy
    is read back from each run's metrics file.
    """
    from .trainer import VARIANTS

    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    if out_root is not None:
        config = replace(config, out_root=str(out_root))
    rows, run_dirs = [], []
    for variant in variants:
        row = AblationRow(variant=variant)
        for seed in seeds:
            run_dir = run_experiment(config, seed=int(seed), variant=variant)
            run_dirs.append(run_dir)
            last = read_metrics(run_dir)[-1]
            row.accuracies.append(float(last["target_acc"]))
        rows.append(row)
    return AblationTable(rows=rows, seeds=[int(s) for s in seeds]), run_dirs


def read_metrics(run_dir) -> list[dict]:
    """Parse a run's metrics.jsonl into a list of per-epoch records."""
    path = Path(run_dir) / "metrics.jsonl"
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records
