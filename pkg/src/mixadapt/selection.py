"""Confidence machinery: entropy tables, the target-to-source distance
matrix, nearest-source matching, confident-target selection and the
three-way difficulty split.

All selections are deterministic: ties break toward the lowest original
index, and every sort is stable. These snapshots are computed once per
epoch from the frozen feature/prediction extraction and held fixed within
the epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .losses import _require_simplex, entropy_rows


@dataclass
class EntropyTable:
    """Per-target prediction entropies for one epoch snapshot."""

    values: np.ndarray
    epoch: int = 0

    def __len__(self):
        return self.values.shape[0]


@dataclass
class ScoreMatrix:
    """Euclidean distances, target rows vs labeled-source columns."""

    values: np.ndarray
    epoch: int = 0

    @property
    def shape(self):
        return self.values.shape


@dataclass
class DifficultySplit:
    """Entropy-ordered partition of target indices into easy/hard/outlier."""

    easy: np.ndarray
    hard: np.ndarray
    outlier: np.ndarray
    easy_fraction: float
    hard_fraction: float

    @property
    def counts(self):
        return (self.easy.shape[0], self.hard.shape[0], self.outlier.shape[0])


def compute_entropy_table(target_predictions: np.ndarray, epoch: int = 0) -> EntropyTable:
    rows = _require_simplex(target_predictions, "compute_entropy_table")
    return EntropyTable(entropy_rows(rows), epoch=epoch)


def compute_score_matrix(target_feats: np.ndarray, labeled_source_feats: np.ndarray, epoch: int = 0) -> ScoreMatrix:
    target_feats = np.asarray(target_feats, dtype=np.float64)
    labeled_source_feats = np.asarray(labeled_source_feats, dtype=np.float64)
    if labeled_source_feats.shape[0] == 0:
        raise ValueError("no labeled source features to match against")
    if target_feats.shape[0] == 0:
        raise ValueError("no target features")
    return ScoreMatrix(kernels.pairwise_euclidean(target_feats, labeled_source_feats), epoch=epoch)


def nearest_source_match(score: ScoreMatrix) -> np.ndarray:
    """Column index of the closest labeled source sample per target row."""
    return np.argmin(score.values, axis=1).astype(np.int64)


def top_confident_targets(table: EntropyTable, confident_fraction: float) -> np.ndarray:
    """Indices of the floor(fraction * N) lowest-entropy targets, ascending.

    Raises when the floor is zero; the caller should then disable the
    cross-domain mixing stage or raise the fraction.
    """
    if not (0.0 < confident_fraction <= 1.0):
        raise ValueError("confident_fraction must lie in (0, 1]")
    n = len(table)
    n_sel = int(np.floor(confident_fraction * n))
    if n_sel == 0:
        raise ValueError(
            "confident selection is empty; disable cross-domain mixing "
            "(weight_cross=0) or raise confident_fraction"
        )
    order = np.argsort(table.values, kind="stable")
    return np.sort(order[:n_sel])


def split_by_difficulty(table: EntropyTable, easy_fraction: float, hard_fraction: float) -> DifficultySplit:
    """Ascending-entropy split into easy / hard / outlier index groups."""
    if easy_fraction < 0 or hard_fraction < 0 or easy_fraction + hard_fraction > 1.0 + 1e-12:
        raise ValueError("fractions must be nonnegative with sum <= 1")
    n = len(table)
    n1 = int(np.floor(easy_fraction * n))
    n2 = int(np.floor(hard_fraction * n))
    order = np.argsort(table.values, kind="stable")
    return DifficultySplit(
        easy=order[:n1].astype(np.int64),
        hard=order[n1 : n1 + n2].astype(np.int64),
        outlier=order[n1 + n2 :].astype(np.int64),
        easy_fraction=easy_fraction,
        hard_fraction=hard_fraction,
    )


def write_selection_dump(directory, score: ScoreMatrix | None, table: EntropyTable | None, split: DifficultySplit | None):
    """Optional plain-text dump of the per-epoch selection state."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if score is not None:
        np.savetxt(directory / "score_matrix.tsv", score.values, delimiter="\t")
    if table is not None:
        np.savetxt(directory / "entropy_table.tsv", table.values, delimiter="\t")
    if split is not None:
        with open(directory / "difficulty_split.tsv", "w", encoding="utf-8") as fh:
            for name, idx in (("easy", split.easy), ("hard", split.hard), ("outlier", split.outlier)):
                fh.write(name + "\t" + " ".join(str(int(i)) for i in idx) + "\n")
