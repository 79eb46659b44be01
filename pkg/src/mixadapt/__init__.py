"""Confidence-guided input-mixing trainer for few-shot unsupervised domain
adaptation, with a deterministic synthetic domain-shift benchmark."""

from .data import (
    DomainDataset,
    FewShotSplit,
    Sample,
    SyntheticShiftConfig,
    apply_split,
    load_split_file,
    make_few_shot_split,
    make_synthetic_shift,
    sample_few_shot,
    save_split_file,
)
from .losses import (
    LossWeights,
    MemoryBank,
    PrototypeBank,
    entropy,
    kmeans_prototypes,
    loss_cls,
    loss_mi,
    loss_self_proto,
    loss_self_simplified,
    similarity_distribution,
    soft_cross_entropy,
    update_centers,
    update_memory_bank,
)
from .model import AdaptationModel, FeatureBatch
from .selection import (
    DifficultySplit,
    EntropyTable,
    ScoreMatrix,
    compute_entropy_table,
    compute_score_matrix,
    nearest_source_match,
    split_by_difficulty,
    top_confident_targets,
)
from .crossmix import MixedDataset, MixedSample, build_cross_blend, cross_blend_plan, sample_mix_weight
from .intramix import GuidanceSets, build_guidance_sets, build_intra_mix, intra_mix_plan
from .trainer import HyperParams, Trainer, TrainState, pseudo_label, total_loss
from .evaluate import (
    bucket_accuracy,
    export_embeddings,
    matching_accuracy,
    retrieve_nearest_targets,
    run_ablation,
    target_accuracy,
)

__version__ = "0.1.0"
