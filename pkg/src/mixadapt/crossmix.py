"""Cross-domain mixing: constrained Beta mixing weights and construction of
the blended dataset that pairs confident targets with their nearest labeled
source samples.

The mixing weight is drawn from Beta(alpha, alpha) and reflected into one
half-interval instead of rejection-sampled, so the restricted draw keeps the
Beta shape. In a cross-domain pair the target is always the dominant member
(weight >= 0.5) and the minor member always comes from the labeled source
pool, never from unlabeled source data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DomainDataset
from .selection import EntropyTable, ScoreMatrix, compute_score_matrix, nearest_source_match, top_confident_targets

# provenance tags recorded on mixed samples
ORIGIN_TARGET = "target"
ORIGIN_LABELED_SOURCE = "labeled_source"
ORIGIN_UNLABELED_SOURCE = "unlabeled_source"
ORIGIN_EASY_TARGET = "easy_target"
ORIGIN_HARD_TARGET = "hard_target"

SIDE_UPPER = "upper"  # beta >= 0.5, first member dominant
SIDE_LOWER = "lower"  # beta <= 0.5, second member dominant


@dataclass(frozen=True)
class MixedSample:
    """One blended training sample with full provenance.

    ``soft_label == beta * onehot(a_class) + (1 - beta) * onehot(b_class)``
    and ``mixed_input == beta * input_a + (1 - beta) * input_b`` always hold
    for the recorded fields.
    """

    mixed_input: np.ndarray
    soft_label: np.ndarray
    beta: float
    a_index: int
    b_index: int
    a_origin: str
    b_origin: str
    a_class: int
    b_class: int


@dataclass
class MixedDataset:
    """Array-backed stack of mixed samples (shared by both mixing stages)."""

    inputs: np.ndarray
    soft_labels: np.ndarray
    betas: np.ndarray
    a_index: np.ndarray
    b_index: np.ndarray
    a_origin: np.ndarray
    b_origin: np.ndarray
    a_class: np.ndarray
    b_class: np.ndarray

    def __len__(self):
        return self.betas.shape[0]

    def __getitem__(self, i) -> MixedSample:
        return MixedSample(
            mixed_input=self.inputs[i],
            soft_label=self.soft_labels[i],
            beta=float(self.betas[i]),
            a_index=int(self.a_index[i]),
            b_index=int(self.b_index[i]),
            a_origin=str(self.a_origin[i]),
            b_origin=str(self.b_origin[i]),
            a_class=int(self.a_class[i]),
            b_class=int(self.b_class[i]),
        )


def sample_mix_weight(alpha: float, side: str, rng) -> float:
    """One Beta(alpha, alpha) draw reflected into the requested half-interval."""
    return float(sample_mix_weights(alpha, side, rng, 1)[0])


def sample_mix_weights(alpha: float, side: str, rng, size: int) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    raw = rng.beta(alpha, alpha, size=size)
    if side == SIDE_UPPER:
        return np.maximum(raw, 1.0 - raw)
    if side == SIDE_LOWER:
        return np.minimum(raw, 1.0 - raw)
    raise ValueError(f"unknown side {side!r}")


def _onehot(classes: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((classes.shape[0], num_classes))
    out[np.arange(classes.shape[0]), classes] = 1.0
    return out


def _mix(inputs_a, inputs_b, classes_a, classes_b, betas, num_classes):
    shape = (-1,) + (1,) * (inputs_a.ndim - 1)
    b = betas.reshape(shape)
    mixed = b * inputs_a + (1.0 - b) * inputs_b
    soft = betas[:, None] * _onehot(classes_a, num_classes) + (1.0 - betas[:, None]) * _onehot(
        classes_b, num_classes
    )
    return mixed, soft


def build_cross_blend(
    target_inputs: np.ndarray,
    target_pseudo: np.ndarray,
    target_indices: np.ndarray,
    matched_inputs: np.ndarray,
    matched_classes: np.ndarray,
    matched_indices: np.ndarray,
    num_classes: int,
    alpha: float,
    rng,
) -> MixedDataset:
    """Blend index-aligned (confident target, matched labeled source) pairs.

    The target is the Beta-weighted dominant member; its label is the
    argmax pseudo label from the epoch snapshot, the source label is ground
    truth.
    """
    n = target_inputs.shape[0]
    if not (
        matched_inputs.shape[0] == n
        and target_pseudo.shape[0] == n
        and matched_classes.shape[0] == n
        and target_indices.shape[0] == n
        and matched_indices.shape[0] == n
    ):
        raise ValueError("misaligned target/matched-source lists")
    betas = sample_mix_weights(alpha, SIDE_UPPER, rng, n)
    mixed, soft = _mix(target_inputs, matched_inputs, target_pseudo, matched_classes, betas, num_classes)
    return MixedDataset(
        inputs=mixed,
        soft_labels=soft,
        betas=betas,
        a_index=np.asarray(target_indices, dtype=np.int64),
        b_index=np.asarray(matched_indices, dtype=np.int64),
        a_origin=np.full(n, ORIGIN_TARGET, dtype="<U20"),
        b_origin=np.full(n, ORIGIN_LABELED_SOURCE, dtype="<U20"),
        a_class=np.asarray(target_pseudo, dtype=np.int64),
        b_class=np.asarray(matched_classes, dtype=np.int64),
    )


@dataclass
class CrossPlan:
    """Per-epoch cross-domain mixing plan plus the state it was built from."""

    mixed: MixedDataset
    score: ScoreMatrix
    match_indices: np.ndarray
    confident_indices: np.ndarray


def cross_blend_plan(
    d_ls: DomainDataset,
    d_ut: DomainDataset,
    labeled_feats: np.ndarray,
    target_feats: np.ndarray,
    target_preds: np.ndarray,
    entropy_table: EntropyTable,
    confident_fraction: float,
    alpha: float,
    rng,
) -> CrossPlan:
    """Full pipeline: distances -> nearest match -> confident set -> blend."""
    score = compute_score_matrix(target_feats, labeled_feats, epoch=entropy_table.epoch)
    match = nearest_source_match(score)
    confident = top_confident_targets(entropy_table, confident_fraction)
    pseudo = np.argmax(target_preds, axis=1).astype(np.int64)
    matched_sources = match[confident]
    mixed = build_cross_blend(
        target_inputs=d_ut.inputs[confident],
        target_pseudo=pseudo[confident],
        target_indices=confident,
        matched_inputs=d_ls.inputs[matched_sources],
        matched_classes=d_ls.labels[matched_sources],
        matched_indices=matched_sources,
        num_classes=d_ut.num_classes,
        alpha=alpha,
        rng=rng,
    )
    return CrossPlan(mixed=mixed, score=score, match_indices=match, confident_indices=confident)


def random_cross_blend_plan(
    d_ls: DomainDataset,
    d_us: DomainDataset,
    d_ut: DomainDataset,
    target_preds: np.ndarray,
    unlabeled_source_preds: np.ndarray,
    alpha: float,
    rng,
    beta_rng=None,
) -> MixedDataset:
    """Confidence-free comparator: every target mixed with a uniform-random
    source sample (labeled or unlabeled) under an unconstrained Beta draw.

    Unlabeled source partners carry their snapshot pseudo label since no
    ground truth is visible for them.
    """
    n_t = len(d_ut)
    n_ls, n_us = len(d_ls), len(d_us)
    pseudo_t = np.argmax(target_preds, axis=1).astype(np.int64)
    pseudo_us = np.argmax(unlabeled_source_preds, axis=1).astype(np.int64) if n_us else np.empty(0, np.int64)
    partners = rng.integers(0, n_ls + n_us, size=n_t)
    betas = (beta_rng if beta_rng is not None else rng).beta(alpha, alpha, size=n_t)

    pool_inputs = np.concatenate([d_ls.inputs, d_us.inputs]) if n_us else d_ls.inputs
    pool_classes = np.concatenate([d_ls.labels, pseudo_us]) if n_us else d_ls.labels
    from_labeled = partners < n_ls
    part_inputs = pool_inputs[partners]
    part_classes = pool_classes[partners].astype(np.int64)

    mixed, soft = _mix(d_ut.inputs, part_inputs, pseudo_t, part_classes, betas, d_ut.num_classes)
    origins = np.where(from_labeled, ORIGIN_LABELED_SOURCE, ORIGIN_UNLABELED_SOURCE).astype("<U20")
    return MixedDataset(
        inputs=mixed,
        soft_labels=soft,
        betas=betas,
        a_index=np.arange(n_t, dtype=np.int64),
        b_index=np.asarray(partners, dtype=np.int64),
        a_origin=np.full(n_t, ORIGIN_TARGET, dtype="<U20"),
        b_origin=origins,
        a_class=pseudo_t,
        b_class=part_classes,
    )


def write_pair_dump(path, mixed: MixedDataset):
    """Debug dump: one `a_index b_index beta a_origin b_origin` line per pair."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(mixed)):
            fh.write(
                f"{int(mixed.a_index[i])}\t{int(mixed.b_index[i])}\t{mixed.betas[i]!r}\t"
                f"{mixed.a_origin[i]}\t{mixed.b_origin[i]}\n"
            )
