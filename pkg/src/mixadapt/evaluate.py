"""Evaluation metrics and diagnostics: target accuracy, matching accuracy,
difficulty-bucket accuracy, nearest-target retrieval, embedding export and
the in-memory ablation harness.

Every metric here is a pure function of a model snapshot and data; nothing
mutates training state, so repeated evaluation is bit-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .data import UNLABELED, DomainDataset
from .selection import DifficultySplit
from .trainer import VARIANTS, HyperParams, Trainer


@dataclass
class EpochMetrics:
    """One epoch's evaluation snapshot plus the training loss components."""

    epoch: int
    target_accuracy: float
    matching_accuracy: float
    bucket_accuracies: dict
    losses: dict

    def __post_init__(self):
        values = [self.target_accuracy, self.matching_accuracy]
        values += [v for v in self.bucket_accuracies.values() if v is not None]
        for v in values:
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"accuracy {v} outside [0, 1]")

    def to_record(self) -> dict:
        record = {
            "epoch": self.epoch,
            "target_acc": self.target_accuracy,
            "matching_acc": self.matching_accuracy,
        }
        for name in ("easy", "hard", "outlier"):
            record[f"bucket_acc_{name}"] = self.bucket_accuracies.get(name)
        for name, extra in self.bucket_accuracies.items():
            if name not in ("easy", "hard", "outlier"):
                record[f"bucket_acc_{name}"] = extra
        record.update(self.losses)
        return record


def prediction_accuracy(pred_classes: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if (labels == UNLABELED).any():
        raise ValueError("evaluation labels missing")
    return float((np.asarray(pred_classes) == labels).mean())


def target_accuracy(model, dataset: DomainDataset, batch_size: int = 256) -> float:
    """Fraction of argmax predictions matching held-out ground truth."""
    _, probs = model.extract_all(dataset, batch_size)
    return prediction_accuracy(np.argmax(probs, axis=1), dataset.labels)


def matching_accuracy(match_indices: np.ndarray, target_labels: np.ndarray, source_labels: np.ndarray) -> float:
    """Fraction of targets whose matched source shares their true class."""
    target_labels = np.asarray(target_labels)
    source_labels = np.asarray(source_labels)
    if (target_labels == UNLABELED).any() or (source_labels == UNLABELED).any():
        raise ValueError("matching accuracy needs ground-truth labels on both sides")
    return float((source_labels[np.asarray(match_indices)] == target_labels).mean())


def bucket_accuracy(split: DifficultySplit, pred_classes: np.ndarray, labels: np.ndarray) -> dict:
    """Per-difficulty-bucket accuracy; empty buckets are absent, not zero."""
    pred_classes = np.asarray(pred_classes)
    labels = np.asarray(labels)
    out = {}
    for name, idx in (("easy", split.easy), ("hard", split.hard), ("outlier", split.outlier)):
        if idx.shape[0]:
            out[name] = float((pred_classes[idx] == labels[idx]).mean())
    return out


def retrieve_nearest_targets(query_feature, target_features, k: int = 3) -> np.ndarray:
    """Indices of the k closest target features, ascending distance, stable ties."""
    target_features = np.asarray(target_features, dtype=np.float64)
    if k > target_features.shape[0]:
        raise ValueError(f"k={k} exceeds target count {target_features.shape[0]}")
    query = np.asarray(query_feature, dtype=np.float64)[None, :]
    dists = kernels.pairwise_euclidean(query, target_features)[0]
    return np.argsort(dists, kind="stable")[:k].astype(np.int64)


def export_embeddings(features, labels, domain_tags, path):
    """Write one `index,domain,label,f_1..f_d` CSV row per sample.

    Floats are written with repr-precision so a round-trip parse reproduces
    the arrays exactly.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if not (features.shape[0] == labels.shape[0] == len(domain_tags)):
        raise ValueError("features/labels/domain_tags length mismatch")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = features.shape[1]
    header = "index,domain,label," + ",".join(f"f_{j + 1}" for j in range(d))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i in range(features.shape[0]):
            row = ",".join(repr(float(v)) for v in features[i])
            fh.write(f"{i},{domain_tags[i]},{int(labels[i])},{row}\n")
    return path


def read_embeddings(path):
    """Parse an embedding export back into (features, labels, domain_tags)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    feats, labels, domains = [], [], []
    for line in lines[1:]:
        parts = line.split(",")
        domains.append(parts[1])
        labels.append(int(parts[2]))
        feats.append([float(v) for v in parts[3:]])
    return np.asarray(feats), np.asarray(labels, dtype=np.int64), domains


# -- ablation harness -------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    accuracies: list[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seeds: list[int]

    def to_markdown(self) -> str:
        lines = ["| variant | mean_acc | std_acc | seeds |", "| --- | --- | --- | --- |"]
        for r in self.rows:
            lines.append(f"| {r.variant} | {r.mean:.4f} | {r.std:.4f} | {len(r.accuracies)} |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["variant,mean_acc,std_acc,seeds"]
        for r in self.rows:
            lines.append(f"{r.variant},{r.mean:.4f},{r.std:.4f},{len(r.accuracies)}")
        return "\n".join(lines) + "\n"

    def by_variant(self) -> dict:
        return {r.variant: r for r in self.rows}


def train_and_score(
    hp: HyperParams,
    variant: str,
    d_ls: DomainDataset,
    d_us: DomainDataset,
    d_ut_labeled: DomainDataset,
) -> float:
    """One full training run; returns final-epoch target accuracy."""
    trainer = Trainer(hp, d_ls, d_us, d_ut_labeled, variant=variant)
    for epoch in range(1, hp.epochs + 1):
        trainer.run_epoch(epoch)
    return target_accuracy(trainer.model, d_ut_labeled, hp.eval_batch_size)


def run_ablation(make_datasets, hp: HyperParams, variants, seeds) -> AblationTable:
    """Train every (variant, seed) cell and tabulate final target accuracy.

    ``make_datasets(seed)`` must return ``(d_ls, d_us, d_ut_labeled)``; the
    trainer masks target labels itself, the labeled view is only used for
    scoring.
    """
    variants = list(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
    rows = []
    for variant in variants:
        row = AblationRow(variant=variant)
        for seed in seeds:
            d_ls, d_us, d_ut = make_datasets(int(seed))
            hp_seeded = HyperParams.from_dict({**hp.to_dict(), "seed": int(seed)})
            row.accuracies.append(train_and_score(hp_seeded, variant, d_ls, d_us, d_ut))
        rows.append(row)
    return AblationTable(rows=rows, seeds=[int(s) for s in seeds])
