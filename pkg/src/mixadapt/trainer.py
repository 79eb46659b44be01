"""Training loop: per-epoch state refresh, warmup handling, composite
minibatch steps and the combined weighted objective.

Epoch anatomy (epochs are 1-based):

1. ``refresh_state`` extracts features/predictions for every dataset with
   the current parameters, rebuilds the entropy table and the score matrix,
   momentum-updates the prototype or memory bank, and (outside warmup)
   builds the cross-domain and intra-domain mixing plans.
2. ``train_epoch`` walks aligned sub-batches of every active sample source
   and takes one SGD step per composite minibatch.

During the warmup epochs only the labeled cross-entropy and the mutual
information objective are optimized and the classifier head stays frozen;
mixing plans are not built because pseudo labels and entropies are not yet
meaningful.

Determinism: every random decision draws from a purpose-specific generator
derived from ``(seed, purpose, epoch)``, so refreshing the same state twice
yields identical results and reruns are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crossmix import CrossPlan, cross_blend_plan, random_cross_blend_plan
from .data import DomainDataset
from .intramix import IntraPlan, intra_mix_plan, random_intra_mix_plan
from .losses import (
    LossWeights,
    MemoryBank,
    PrototypeBank,
    loss_cls_grad,
    loss_mi_grad,
    loss_self_proto_grad,
    loss_self_simplified_grad,
    soft_cross_entropy_grad,
)
from .model import build_model_for
from .selection import EntropyTable, ScoreMatrix, compute_entropy_table, compute_score_matrix

VARIANTS = ("baseline", "xvd_only", "ivd_only", "full", "plain_mixup")

SELF_KMEANS = "kmeans_proto"
SELF_SIMPLIFIED = "simplified_attention"

# purpose ids for derived rng streams
PURPOSE_CLUSTER = 4
PURPOSE_BETA = 2
PURPOSE_PAIR = 3
_STREAM_BASE = 10  # 10 + slot for per-component batch streams


def derive_rng(seed: int, purpose: int, epoch: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for one (purpose, epoch) cell."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(purpose), int(epoch)]))


@dataclass
class HyperParams:
    """Every knob of a training run; defaults follow the reference recipe."""

    mix_alpha: float = 0.75
    weight_mi: float = 1.0
    weight_self: float = 1.0
    weight_cross: float = 1.0
    weight_intra: float = 0.1
    confident_fraction: float = 0.75
    easy_fraction: float = 0.1
    hard_fraction: float = 0.65
    temperature: float = 0.1
    center_momentum: float = 0.5
    bank_momentum: float = 0.5
    learning_rate: float = 0.05
    sgd_momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 20
    warmup_epochs: int = 1
    self_variant: str = SELF_KMEANS
    feature_dim: int = 512
    hidden_dim: int = 64
    eval_batch_size: int = 256
    seed: int = 0

    def validate(self):
        if self.mix_alpha <= 0:
            raise ValueError("mix_alpha must be > 0")
        for name in ("weight_mi", "weight_self", "weight_cross", "weight_intra"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("confident_fraction", "easy_fraction", "hard_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.easy_fraction + self.hard_fraction > 1.0 + 1e-12:
            raise ValueError("easy_fraction + hard_fraction must be <= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        for name in ("center_momentum", "bank_momentum"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0.0 <= self.sgd_momentum < 1.0):
            raise ValueError("sgd_momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("batch_size >= 1, epochs >= 0, warmup_epochs >= 0 required")
        if self.self_variant not in (SELF_KMEANS, SELF_SIMPLIFIED):
            raise ValueError(f"unknown self_variant {self.self_variant!r}")
        if self.feature_dim < 2 or self.hidden_dim < 1:
            raise ValueError("feature_dim >= 2 and hidden_dim >= 1 required")
        return self

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {k: d[k] for k in d if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown hyperparameter(s): {sorted(unknown)}")
        hp = cls(**known)
        # coerce config-file strings and ints to the declared field types
        for name, fld in cls.__dataclass_fields__.items():
            v = getattr(hp, name)
            if fld.type == "float":
                setattr(hp, name, float(v))
            elif fld.type == "int":
                setattr(hp, name, int(v))
        return hp.validate()


def effective_weights(hp: HyperParams, variant: str) -> LossWeights:
    """Loss weights after applying the ablation variant switches."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    w_cross, w_intra = hp.weight_cross, hp.weight_intra
    if variant == "baseline":
        w_cross = w_intra = 0.0
    elif variant == "xvd_only":
        w_intra = 0.0
    elif variant == "ivd_only":
        w_cross = 0.0
    return LossWeights(
        weight_mi=hp.weight_mi,
        weight_self=hp.weight_self,
        weight_cross=w_cross,
        weight_intra=w_intra,
        temperature=hp.temperature,
    )


def pseudo_label(prediction_row: np.ndarray) -> np.ndarray:
    """One-hot vector at the argmax; ties break to the lowest class index."""
    row = np.asarray(prediction_row, dtype=np.float64)
    out = np.zeros_like(row)
    out[int(np.argmax(row))] = 1.0
    return out


def pseudo_classes(prediction_rows: np.ndarray) -> np.ndarray:
    return np.argmax(np.asarray(prediction_rows), axis=1).astype(np.int64)


def total_loss(components: dict, weights: LossWeights) -> float:
    """Weighted sum of component losses; disabled components contribute 0.

    Raises if any enabled component is non-finite, naming the component.
    """
    pairs = (
        ("cls", 1.0),
        ("mi", weights.weight_mi),
        ("self", weights.weight_self),
        ("cross", weights.weight_cross),
        ("intra", weights.weight_intra),
    )
    out = 0.0
    for name, w in pairs:
        if w == 0.0 or name not in components:
            continue
        v = float(components[name])
        if not np.isfinite(v):
            raise ValueError(f"non-finite loss component {name!r}: {v}")
        out += w * v
    return out


@dataclass
class EpochSnapshot:
    """Frozen full-dataset extraction used by all per-epoch decisions."""

    source_features: np.ndarray
    source_preds: np.ndarray
    target_features: np.ndarray
    target_preds: np.ndarray
    num_labeled: int
    epoch: int

    @property
    def labeled_features(self):
        return self.source_features[: self.num_labeled]


@dataclass
class TrainState:
    """Mutable-per-epoch training snapshot; all fields share one epoch stamp."""

    epoch: int = 0
    snapshot: EpochSnapshot | None = None
    entropy_table: EntropyTable | None = None
    score_matrix: ScoreMatrix | None = None
    proto_bank: PrototypeBank | None = None
    memory_bank: MemoryBank | None = None
    bank_preds: np.ndarray | None = None
    cross_plan: CrossPlan | None = None
    intra_plan: IntraPlan | None = None
    random_cross: object = None
    random_intra: object = None


class _IndexStream:
    """Cycling shuffled index batches over one dataset."""

    def __init__(self, n: int, size: int, rng: np.random.Generator):
        self.n = int(n)
        self.size = int(size)
        self.rng = rng
        self._perm = rng.permutation(self.n)
        self._pos = 0

    def next(self) -> np.ndarray:
        chunks = []
        need = self.size
        while need > 0:
            take = min(need, self.n - self._pos)
            chunks.append(self._perm[self._pos : self._pos + take])
            self._pos += take
            need -= take
            if self._pos == self.n:
                self._perm = self.rng.permutation(self.n)
                self._pos = 0
        return np.concatenate(chunks) if len(chunks) > 1 else chunks[0]


def plan_steps(active_sizes: list[int], batch_size: int):
    """Composite-step layout: step count and per-component sub-batch sizes.

    The largest active dataset sets the step count; every component then
    contributes ceil(n / steps) samples per step, capped at the batch size,
    so each set is consumed roughly once per epoch and small sets cycle.
    """
    biggest = max(active_sizes)
    n_steps = int(np.ceil(biggest / batch_size))
    sizes = [min(batch_size, int(np.ceil(n / n_steps))) for n in active_sizes]
    return n_steps, sizes


class Trainer:
    """Owns the model, optimizer state and datasets for one run.

    Target (and unlabeled-source) data is re-masked at construction, so no
    training code path can observe target ground truth labels.
    """

    def __init__(
        self,
        hp: HyperParams,
        d_ls: DomainDataset,
        d_us: DomainDataset,
        d_ut: DomainDataset,
        variant: str = "full",
    ):
        hp.validate()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if not d_ls.fully_labeled:
            raise ValueError("labeled source dataset has missing labels")
        self.hp = hp
        self.variant = variant
        self.d_ls = d_ls
        self.d_us = d_us.unlabeled()
        self.d_ut = d_ut.unlabeled()
        self.weights = effective_weights(hp, variant)
        self.source_inputs = (
            np.concatenate([d_ls.inputs, self.d_us.inputs]) if len(d_us) else d_ls.inputs.copy()
        )
        self.model = build_model_for(
            d_ls,
            feature_dim=hp.feature_dim,
            hidden_sizes=(hp.hidden_dim,),
            conv_channels=(8, 16),
            seed=hp.seed,
        )
        self.velocity = {k: np.zeros_like(v) for k, v in self.model.params.items()}
        self.state = TrainState()

    # -- variant switches ---------------------------------------------------

    @property
    def uses_cross(self) -> bool:
        return self.weights.weight_cross > 0

    @property
    def uses_intra(self) -> bool:
        return self.weights.weight_intra > 0

    @property
    def confidence_free(self) -> bool:
        return self.variant == "plain_mixup"

    def in_warmup(self, epoch: int) -> bool:
        return epoch <= self.hp.warmup_epochs

    # -- per-epoch refresh ----------------------------------------------------

    def refresh_state(self, prev: TrainState, epoch: int) -> TrainState:
        """Rebuild the epoch snapshot and all derived state; pure in (model, prev)."""
        hp = self.hp
        feats_s, preds_s = self.model.extract_all(self.source_inputs, hp.eval_batch_size)
        feats_t, preds_t = self.model.extract_all(self.d_ut.inputs, hp.eval_batch_size)
        snapshot = EpochSnapshot(
            source_features=feats_s.features,
            source_preds=preds_s,
            target_features=feats_t.features,
            target_preds=preds_t,
            num_labeled=len(self.d_ls),
            epoch=epoch,
        )
        table = compute_entropy_table(preds_t, epoch=epoch)
        state = TrainState(epoch=epoch, snapshot=snapshot, entropy_table=table)

        if hp.weight_self > 0:
            if hp.self_variant == SELF_KMEANS:
                seed_k = int(derive_rng(hp.seed, PURPOSE_CLUSTER, epoch).integers(2**31))
                if prev.proto_bank is None:
                    state.proto_bank = PrototypeBank.initialize(
                        snapshot.source_features,
                        snapshot.target_features,
                        self.d_ls.num_classes,
                        seed_k,
                        momentum=hp.center_momentum,
                    )
                else:
                    state.proto_bank = prev.proto_bank.updated(
                        snapshot.source_features,
                        snapshot.target_features,
                        self.d_ls.num_classes,
                        seed_k,
                    )
            else:
                if prev.memory_bank is None:
                    state.memory_bank = MemoryBank.initialize(
                        snapshot.source_features, momentum=hp.bank_momentum
                    )
                else:
                    state.memory_bank = prev.memory_bank.updated(snapshot.source_features)
                state.bank_preds = self.model.classify_features(state.memory_bank.features)

        warmup = self.in_warmup(epoch)
        rng_beta = derive_rng(hp.seed, PURPOSE_BETA, epoch)
        rng_pair = derive_rng(hp.seed, PURPOSE_PAIR, epoch)
        if not warmup:
            if self.confidence_free:
                if self.uses_cross:
                    unl_preds = snapshot.source_preds[len(self.d_ls) :]
                    state.random_cross = random_cross_blend_plan(
                        self.d_ls, self.d_us, self.d_ut, snapshot.target_preds, unl_preds,
                        hp.mix_alpha, rng_pair, beta_rng=rng_beta,
                    )
                if self.uses_intra:
                    state.random_intra = random_intra_mix_plan(
                        self.d_ut, snapshot.target_preds, hp.mix_alpha, rng_pair, beta_rng=rng_beta
                    )
            else:
                if self.uses_cross:
                    state.cross_plan = cross_blend_plan(
                        self.d_ls,
                        self.d_ut,
                        snapshot.labeled_features,
                        snapshot.target_features,
                        snapshot.target_preds,
                        table,
                        hp.confident_fraction,
                        hp.mix_alpha,
                        rng_beta,
                    )
                if self.uses_intra:
                    state.intra_plan = intra_mix_plan(
                        self.d_ls,
                        self.d_ut,
                        table,
                        snapshot.target_preds,
                        hp.easy_fraction,
                        hp.hard_fraction,
                        hp.mix_alpha,
                        rng_pair,
                        beta_rng=rng_beta,
                    )
        if state.cross_plan is not None:
            state.score_matrix = state.cross_plan.score
        else:
            state.score_matrix = compute_score_matrix(
                snapshot.target_features, snapshot.labeled_features, epoch=epoch
            )
        return state

    # -- one training epoch ---------------------------------------------------

    def _cross_set(self, state: TrainState):
        if state.cross_plan is not None:
            return state.cross_plan.mixed
        return state.random_cross

    def _intra_set(self, state: TrainState):
        if state.intra_plan is not None:
            return state.intra_plan.mixed
        return state.random_intra

    def train_epoch(self, state: TrainState) -> dict:
        """Composite-minibatch SGD over all active objectives; returns means."""
        hp, w = self.hp, self.weights
        epoch = state.epoch
        warmup = self.in_warmup(epoch)
        use_self = (
            w.weight_self > 0
            and not warmup
            and (state.proto_bank is not None or state.memory_bank is not None)
        )
        use_proto = use_self and hp.self_variant == SELF_KMEANS
        cross_set = None if warmup else self._cross_set(state)
        intra_set = None if warmup else self._intra_set(state)
        if cross_set is not None and len(cross_set) == 0:
            cross_set = None
        if intra_set is not None and len(intra_set) == 0:
            intra_set = None

        # fixed slot order: cls=0, target=1, source=2, cross=3, intra=4
        sizes = {"cls": len(self.d_ls), "target": len(self.d_ut)}
        if use_proto:
            sizes["source"] = self.source_inputs.shape[0]
        if cross_set is not None:
            sizes["cross"] = len(cross_set)
        if intra_set is not None:
            sizes["intra"] = len(intra_set)
        names = [n for n in ("cls", "target", "source", "cross", "intra") if n in sizes]
        n_steps, sub_sizes = plan_steps([sizes[n] for n in names], hp.batch_size)
        streams = {
            name: _IndexStream(
                sizes[name], sub, derive_rng(hp.seed, _STREAM_BASE + slot, epoch)
            )
            for slot, (name, sub) in enumerate(zip(names, sub_sizes))
        }

        sums = {"cls": 0.0, "mi": 0.0, "self": 0.0, "cross": 0.0, "intra": 0.0, "total": 0.0}
        for _ in range(n_steps):
            grads = {k: np.zeros_like(v) for k, v in self.model.params.items()}
            comps = {}

            idx = streams["cls"].next()
            _, probs, cache = self.model.forward_train(self.d_ls.inputs[idx])
            comps["cls"], d_probs = loss_cls_grad(probs, self.d_ls.labels[idx])
            self._accumulate(grads, cache, d_probs=d_probs, weight=1.0)

            idx_t = streams["target"].next()
            feats_t, probs_t, cache_t = self.model.forward_train(self.d_ut.inputs[idx_t])
            comps["mi"], dp_mi = loss_mi_grad(probs_t)
            d_feats_t = None
            if use_self:
                if use_proto:
                    idx_s = streams["source"].next()
                    feats_s, _, cache_s = self.model.forward_train(self.source_inputs[idx_s])
                    comps["self"], d_fs, d_ft = loss_self_proto_grad(
                        feats_s,
                        state.proto_bank.source_assign[idx_s],
                        feats_t,
                        state.proto_bank.target_assign[idx_t],
                        state.proto_bank,
                        w.temperature,
                    )
                    self._accumulate(grads, cache_s, d_feats=d_fs, weight=w.weight_self)
                else:
                    comps["self"], d_ft = loss_self_simplified_grad(
                        state.memory_bank, state.bank_preds, feats_t, w.temperature
                    )
                d_feats_t = w.weight_self * d_ft
            self._accumulate(
                grads, cache_t, d_feats=d_feats_t, d_probs=w.weight_mi * dp_mi, weight=1.0
            )

            if cross_set is not None:
                idx_x = streams["cross"].next()
                _, probs_x, cache_x = self.model.forward_train(cross_set.inputs[idx_x])
                comps["cross"], dp_x = soft_cross_entropy_grad(probs_x, cross_set.soft_labels[idx_x])
                self._accumulate(grads, cache_x, d_probs=dp_x, weight=w.weight_cross)

            if intra_set is not None:
                idx_i = streams["intra"].next()
                _, probs_i, cache_i = self.model.forward_train(intra_set.inputs[idx_i])
                comps["intra"], dp_i = soft_cross_entropy_grad(probs_i, intra_set.soft_labels[idx_i])
                self._accumulate(grads, cache_i, d_probs=dp_i, weight=w.weight_intra)

            if warmup:
                for name in self.model.head_param_names:
                    grads[name][:] = 0.0
            self._sgd_step(grads)

            sums["total"] += total_loss(comps, w)
            for k in ("cls", "mi", "self", "cross", "intra"):
                sums[k] += comps.get(k, 0.0)

        means = {f"loss_{k if k != 'total' else 'total'}": sums[k] / max(1, n_steps) for k in sums}
        # external metric names keep the xvd/ivd tokens
        means["loss_xvd"] = means.pop("loss_cross")
        means["loss_ivd"] = means.pop("loss_intra")
        return means

    def _accumulate(self, grads, cache, d_feats=None, d_probs=None, weight=1.0):
        if weight == 0.0:
            return
        local = self.model.backward(cache, d_feats=d_feats, d_probs=d_probs)
        for k, g in local.items():
            grads[k] += weight * g

    def _sgd_step(self, grads):
        lr, mu = self.hp.learning_rate, self.hp.sgd_momentum
        for k, p in self.model.params.items():
            v = self.velocity[k]
            v *= mu
            v += grads[k]
            p -= lr * v

    # -- top-level driver -----------------------------------------------------

    def run_epoch(self, epoch: int) -> dict:
        """Refresh state for ``epoch`` then train one epoch; returns metrics."""
        self.state = self.refresh_state(self.state, epoch)
        metrics = self.train_epoch(self.state)
        metrics["epoch"] = epoch
        return metrics
