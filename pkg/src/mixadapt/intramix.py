"""Intra-domain mixing: easy/hard guidance sets and the hard-dominant
blended dataset that lets confident samples steer uncertain ones.

The easy pool is the union of all labeled source samples (ground-truth
labels) and the lowest-entropy targets (pseudo labels); the hard pool is the
middle entropy band. The highest-entropy outlier group never enters a pair.
Each hard sample draws one easy partner uniformly with replacement; the
mixing weight is the lower half of a Beta(alpha, alpha) draw so the hard
member keeps dominance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crossmix import (
    MixedDataset,
    ORIGIN_EASY_TARGET,
    ORIGIN_HARD_TARGET,
    ORIGIN_LABELED_SOURCE,
    ORIGIN_TARGET,
    SIDE_LOWER,
    _mix,
    sample_mix_weights,
)
from .data import DomainDataset
from .selection import DifficultySplit, EntropyTable, split_by_difficulty


@dataclass
class GuidanceSets:
    """Easy pool (labeled source + confident targets) and hard target pool."""

    easy_inputs: np.ndarray
    easy_classes: np.ndarray
    easy_origins: np.ndarray
    easy_indices: np.ndarray
    hard_inputs: np.ndarray
    hard_classes: np.ndarray
    hard_indices: np.ndarray
    num_classes: int

    @property
    def easy_size(self):
        return self.easy_classes.shape[0]

    @property
    def hard_size(self):
        return self.hard_classes.shape[0]


def build_guidance_sets(
    d_ls: DomainDataset,
    split: DifficultySplit,
    d_ut: DomainDataset,
    target_preds: np.ndarray,
) -> GuidanceSets:
    """Assemble the easy/hard pools for one epoch.

    Labeled source members carry ground truth; easy and hard targets carry
    the argmax pseudo label from the same snapshot. Outliers are dropped.
    """
    pseudo = np.argmax(target_preds, axis=1).astype(np.int64)
    n_ls = len(d_ls)
    n_easy_t = split.easy.shape[0]
    if n_ls + n_easy_t == 0:
        raise ValueError(
            "easy pool is empty (no labeled source and no easy targets); "
            "disable intra-domain mixing (weight_intra=0)"
        )
    if n_easy_t:
        easy_inputs = np.concatenate([d_ls.inputs, d_ut.inputs[split.easy]])
    else:
        easy_inputs = d_ls.inputs.copy()
    easy_classes = np.concatenate([d_ls.labels, pseudo[split.easy]])
    easy_origins = np.concatenate(
        [
            np.full(n_ls, ORIGIN_LABELED_SOURCE, dtype="<U20"),
            np.full(n_easy_t, ORIGIN_EASY_TARGET, dtype="<U20"),
        ]
    )
    easy_indices = np.concatenate([np.arange(n_ls, dtype=np.int64), split.easy])
    return GuidanceSets(
        easy_inputs=easy_inputs,
        easy_classes=easy_classes.astype(np.int64),
        easy_origins=easy_origins,
        easy_indices=easy_indices,
        hard_inputs=d_ut.inputs[split.hard],
        hard_classes=pseudo[split.hard],
        hard_indices=split.hard.copy(),
        num_classes=d_ut.num_classes,
    )


def build_intra_mix(sets: GuidanceSets, alpha: float, rng, beta_rng=None) -> MixedDataset:
    """One uniform easy partner per hard sample, hard member dominant.

    ``rng`` draws the partners; ``beta_rng`` (default: same stream) draws
    the mixing weights, letting callers keep the two streams independent.
    """
    if sets.easy_size == 0:
        raise ValueError("easy pool is empty")
    n = sets.hard_size
    partners = rng.integers(0, sets.easy_size, size=n)
    betas = sample_mix_weights(alpha, SIDE_LOWER, beta_rng if beta_rng is not None else rng, n)
    mixed, soft = _mix(
        sets.easy_inputs[partners],
        sets.hard_inputs,
        sets.easy_classes[partners],
        sets.hard_classes,
        betas,
        sets.num_classes,
    )
    return MixedDataset(
        inputs=mixed,
        soft_labels=soft,
        betas=betas,
        a_index=sets.easy_indices[partners],
        b_index=sets.hard_indices.copy(),
        a_origin=sets.easy_origins[partners].copy(),
        b_origin=np.full(n, ORIGIN_HARD_TARGET, dtype="<U20"),
        a_class=sets.easy_classes[partners],
        b_class=sets.hard_classes.copy(),
    )


@dataclass
class IntraPlan:
    """Per-epoch intra-domain mixing plan plus the split that produced it."""

    mixed: MixedDataset
    split: DifficultySplit
    sets: GuidanceSets


def intra_mix_plan(
    d_ls: DomainDataset,
    d_ut: DomainDataset,
    entropy_table: EntropyTable,
    target_preds: np.ndarray,
    easy_fraction: float,
    hard_fraction: float,
    alpha: float,
    rng,
    beta_rng=None,
) -> IntraPlan:
    """Full pipeline: difficulty split -> guidance sets -> blended set."""
    split = split_by_difficulty(entropy_table, easy_fraction, hard_fraction)
    sets = build_guidance_sets(d_ls, split, d_ut, target_preds)
    mixed = build_intra_mix(sets, alpha, rng, beta_rng=beta_rng)
    return IntraPlan(mixed=mixed, split=split, sets=sets)


def random_intra_mix_plan(
    d_ut: DomainDataset, target_preds: np.ndarray, alpha: float, rng, beta_rng=None
) -> MixedDataset:
    """Confidence-free comparator: random target-target pairs, raw Beta."""
    n = len(d_ut)
    pseudo = np.argmax(target_preds, axis=1).astype(np.int64)
    partners = rng.integers(0, n, size=n)
    betas = (beta_rng if beta_rng is not None else rng).beta(alpha, alpha, size=n)
    mixed, soft = _mix(d_ut.inputs[partners], d_ut.inputs, pseudo[partners], pseudo, betas, d_ut.num_classes)
    return MixedDataset(
        inputs=mixed,
        soft_labels=soft,
        betas=betas,
        a_index=partners,
        b_index=np.arange(n, dtype=np.int64),
        a_origin=np.full(n, ORIGIN_TARGET, dtype="<U20"),
        b_origin=np.full(n, ORIGIN_TARGET, dtype="<U20"),
        a_class=pseudo[partners],
        b_class=pseudo,
    )
