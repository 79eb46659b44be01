"""Scalar training objectives and their analytic gradients.

Conventions shared by every loss here:

* natural logarithm throughout; probabilities are clipped to ``[EPS, 1]``
  inside any log;
* losses are means over their sample sets, so magnitudes do not scale with
  dataset size;
* ``*_grad`` variants return ``(value, gradient)`` where the gradient is
  taken with respect to the prediction rows or feature rows that the model
  produced, ready to feed into ``AdaptationModel.backward``.

The prototype bank (k-means class centers per domain, momentum-updated) and
the per-sample feature memory bank that back the two self-supervision
variants also live here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels

EPS = 1e-12
SIMPLEX_TOL = 1e-6


def _require_simplex(rows: np.ndarray, what: str):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[0] == 0:
        raise ValueError(f"{what}: empty input")
    if (rows < -SIMPLEX_TOL).any():
        raise ValueError(f"{what}: negative probabilities")
    sums = rows.sum(axis=1)
    if np.abs(sums - 1.0).max() > SIMPLEX_TOL:
        raise ValueError(f"{what}: rows do not sum to 1 (max deviation {np.abs(sums - 1.0).max():.2e})")
    return rows


def _safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.clip(p, EPS, 1.0))


def entropy(p) -> float:
    """Shannon entropy of one distribution, in nats. 0 <= H <= ln(c)."""
    p = _require_simplex(p, "entropy")[0]
    return float(-(p * _safe_log(p)).sum())


def entropy_rows(rows: np.ndarray) -> np.ndarray:
    """Per-row entropy of a stack of distributions (no validation)."""
    rows = np.asarray(rows, dtype=np.float64)
    return -(rows * _safe_log(rows)).sum(axis=1)


# -- supervised / unsupervised objectives --------------------------------


def loss_cls(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of labeled predictions against hard labels."""
    return loss_cls_grad(probs, labels)[0]


def loss_cls_grad(probs: np.ndarray, labels: np.ndarray):
    probs = _require_simplex(probs, "loss_cls")
    labels = np.asarray(labels)
    if labels.shape[0] != probs.shape[0]:
        raise ValueError("labels/predictions length mismatch")
    if (labels < 0).any():
        raise ValueError("loss_cls requires a label for every sample")
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    value = float(-_safe_log(picked).mean())
    grad = np.zeros_like(probs)
    live = picked > EPS
    grad[np.arange(n)[live], labels[live]] = -1.0 / (n * picked[live])
    return value, grad


def loss_mi(probs: np.ndarray) -> float:
    """Negated mutual information of predictions on unlabeled data.

    ``-H(mean distribution) + mean(per-row H)``; minimizing drives rows to
    be individually confident while the marginal stays diverse. Bounded in
    ``[-ln c, 0]``.
    """
    return loss_mi_grad(probs)[0]


def loss_mi_grad(probs: np.ndarray):
    probs = _require_simplex(probs, "loss_mi")
    n = probs.shape[0]
    marginal = probs.mean(axis=0)
    value = float(-entropy_rows(marginal[None, :])[0] + entropy_rows(probs).mean())
    # d/dp_ik = (log(marginal_k) - log(p_ik)) / n
    grad = (_safe_log(marginal)[None, :] - _safe_log(probs)) / n
    return value, grad


def soft_cross_entropy(probs: np.ndarray, soft_labels: np.ndarray) -> float:
    """Mean cross-entropy against soft (mixed) label rows."""
    return soft_cross_entropy_grad(probs, soft_labels)[0]


def soft_cross_entropy_grad(probs: np.ndarray, soft_labels: np.ndarray):
    probs = np.asarray(probs, dtype=np.float64)
    soft_labels = _require_simplex(soft_labels, "soft_cross_entropy labels")
    if probs.shape != soft_labels.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {soft_labels.shape}")
    _require_simplex(probs, "soft_cross_entropy predictions")
    n = probs.shape[0]
    value = float(-(soft_labels * _safe_log(probs)).sum(axis=1).mean())
    grad = np.where(probs > EPS, -soft_labels / (n * np.clip(probs, EPS, 1.0)), 0.0)
    return value, grad


# -- prototypes and k-means ------------------------------------------------


def _normalize_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), EPS)
    return rows / norms


def _kmeans_pp_init(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = x[rng.integers(n)]
            continue
        probs = d2 / total
        centers[j] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(x, k, init_centers, max_iter):
    centers = init_centers.copy()
    assign = np.full(x.shape[0], -1, dtype=np.int64)
    for _ in range(max_iter):
        new_assign, sums, counts = kernels.kmeans_assign(x, centers)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # reseed empty clusters at the points farthest from their center
            dists = np.linalg.norm(x - centers[new_assign], axis=1)
            far = np.argsort(dists, kind="stable")[::-1]
            for slot, point in zip(empty, far[: empty.size]):
                centers[slot] = x[point]
            continue
        if (new_assign == assign).all():
            break
        assign = new_assign
        centers = sums / counts[:, None]
    inertia = float(((x - centers[assign]) ** 2).sum())
    return centers, assign, inertia


def kmeans_prototypes(features: np.ndarray, num_clusters: int, seed: int, n_init: int = 8, max_iter: int = 100):
    """Cluster features with restarted Lloyd iterations.

    On small instances every k-subset of points seeds one Lloyd run, which
    in practice pins the exhaustive-partition optimum; larger instances use
    ``n_init`` k-means++ restarts. Returns ``(centers, assignments)`` where
    centers are L2-normalized after convergence and assignments refer to the
    converged (pre-normalization) centers. Deterministic for a given seed.
    """
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if n < num_clusters:
        raise ValueError(f"need at least {num_clusters} points, got {n}")
    inits = []
    if math.comb(n, num_clusters) <= 312:
        for subset in itertools.combinations(range(n), num_clusters):
            inits.append(x[list(subset)])
    else:
        for s in np.random.SeedSequence(seed).spawn(n_init):
            inits.append(_kmeans_pp_init(x, num_clusters, np.random.default_rng(s)))
    best = None
    for init in inits:
        centers, assign, inertia = _lloyd(x, num_clusters, init, max_iter)
        if best is None or inertia < best[2] - 1e-12:
            best = (centers, assign, inertia)
    centers, assign, _ = best
    return _normalize_rows(centers), assign


def match_centers(old: np.ndarray, new: np.ndarray) -> np.ndarray:
    """Greedy correspondence old slot -> new index by descending similarity."""
    k = old.shape[0]
    sim = old @ new.T
    perm = np.full(k, -1, dtype=np.int64)
    used_old = np.zeros(k, dtype=bool)
    used_new = np.zeros(k, dtype=bool)
    flat = np.argsort(sim, axis=None, kind="stable")[::-1]
    for idx in flat:
        i, j = divmod(int(idx), k)
        if used_old[i] or used_new[j]:
            continue
        perm[i] = j
        used_old[i] = True
        used_new[j] = True
        if used_old.all():
            break
    return perm


def blend_centers(old: np.ndarray, new: np.ndarray, momentum: float):
    """Momentum-blend matched centers; returns (blended, old_slot_of_new).

    ``blended[slot] = normalize(momentum * old[slot] + (1 - momentum) * new[perm[slot]])``.
    The second return value maps a new-center index to its old slot so that
    fresh cluster assignments can be relabeled consistently.
    """
    old = np.asarray(old, dtype=np.float64)
    new = np.asarray(new, dtype=np.float64)
    if old.shape != new.shape:
        raise ValueError("center shape mismatch")
    perm = match_centers(old, new)
    blended = _normalize_rows(momentum * old + (1.0 - momentum) * new[perm])
    slot_of_new = np.empty_like(perm)
    slot_of_new[perm] = np.arange(perm.shape[0])
    return blended, slot_of_new


@dataclass
class PrototypeBank:
    """Per-domain cluster centers (unit-norm) and sample assignments."""

    source_centers: np.ndarray
    target_centers: np.ndarray
    source_assign: np.ndarray
    target_assign: np.ndarray
    momentum: float = 0.5

    @classmethod
    def initialize(cls, source_feats, target_feats, num_clusters, seed, momentum=0.5):
        sc, sa = kmeans_prototypes(source_feats, num_clusters, seed)
        tc, ta = kmeans_prototypes(target_feats, num_clusters, seed + 1)
        return cls(sc, tc, sa, ta, momentum)

    def updated(self, source_feats, target_feats, num_clusters, seed) -> "PrototypeBank":
        """Recluster fresh features and momentum-blend into the bank."""
        sc, sa = kmeans_prototypes(source_feats, num_clusters, seed)
        tc, ta = kmeans_prototypes(target_feats, num_clusters, seed + 1)
        blended_s, relabel_s = blend_centers(self.source_centers, sc, self.momentum)
        blended_t, relabel_t = blend_centers(self.target_centers, tc, self.momentum)
        return PrototypeBank(
            blended_s, blended_t, relabel_s[sa], relabel_t[ta], self.momentum
        )


def update_centers(old_centers, new_centers, momentum):
    """Momentum update of one center stack (greedy-matched before blending)."""
    return blend_centers(old_centers, new_centers, momentum)[0]


@dataclass
class MemoryBank:
    """Per-sample unit-norm source features, momentum-updated each epoch."""

    features: np.ndarray
    momentum: float = 0.5

    @classmethod
    def initialize(cls, features, momentum=0.5):
        return cls(_normalize_rows(np.asarray(features, dtype=np.float64)), momentum)

    def updated(self, fresh_features) -> "MemoryBank":
        fresh = np.asarray(fresh_features, dtype=np.float64)
        if fresh.shape != self.features.shape:
            raise ValueError("memory bank shape mismatch")
        blended = _normalize_rows(self.momentum * self.features + (1.0 - self.momentum) * fresh)
        return MemoryBank(blended, self.momentum)


def update_memory_bank(bank: MemoryBank, fresh_features) -> MemoryBank:
    return bank.updated(fresh_features)


# -- similarity distributions and self-supervision -------------------------


def similarity_rows(feats: np.ndarray, centers: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise softmax over center dot products at the given temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    logits = (np.asarray(feats, dtype=np.float64) @ np.asarray(centers, dtype=np.float64).T) / temperature
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def similarity_distribution(feature, centers, temperature: float) -> np.ndarray:
    """Softmax similarity of one feature against a center stack."""
    feature = np.asarray(feature, dtype=np.float64)
    return similarity_rows(feature[None, :], centers, temperature)[0]


def _softmax_ce_grad_to_feats(p_rows, targets, centers, temperature):
    """d/d_feat of -log p[target] where p = softmax(centers @ f / t)."""
    delta = p_rows.copy()
    delta[np.arange(p_rows.shape[0]), targets] -= 1.0
    return delta @ centers / temperature, delta


def _softmax_entropy_grad_to_feats(p_rows, centers, temperature):
    """d/d_feat of H(softmax(centers @ f / t)); returns (entropies, dfeat)."""
    h = entropy_rows(p_rows)
    dz = p_rows * (-_safe_log(p_rows) - h[:, None])
    return h, dz @ centers / temperature


def loss_self_proto(
    source_feats,
    source_assign,
    target_feats,
    target_assign,
    bank: PrototypeBank,
    temperature: float,
) -> float:
    """Prototype self-supervision over both domains.

    For every source feature: cross-entropy of its same-domain similarity
    distribution against its own cluster, plus the entropy of its
    cross-domain distribution. Symmetrically for target features. The four
    term groups are weighted equally and the total is divided by the overall
    sample count.
    """
    return loss_self_proto_grad(
        source_feats, source_assign, target_feats, target_assign, bank, temperature
    )[0]


def loss_self_proto_grad(source_feats, source_assign, target_feats, target_assign, bank, temperature):
    source_feats = np.asarray(source_feats, dtype=np.float64)
    target_feats = np.asarray(target_feats, dtype=np.float64)
    if source_feats.shape[0] == 0 or target_feats.shape[0] == 0:
        raise ValueError("loss_self_proto needs samples from both domains")
    source_assign = np.asarray(source_assign, dtype=np.int64)
    target_assign = np.asarray(target_assign, dtype=np.int64)
    total = source_feats.shape[0] + target_feats.shape[0]

    p_ss = similarity_rows(source_feats, bank.source_centers, temperature)
    p_st = similarity_rows(source_feats, bank.target_centers, temperature)
    p_tt = similarity_rows(target_feats, bank.target_centers, temperature)
    p_ts = similarity_rows(target_feats, bank.source_centers, temperature)

    n_s = source_feats.shape[0]
    n_t = target_feats.shape[0]
    ce_s = -_safe_log(p_ss[np.arange(n_s), source_assign])
    ce_t = -_safe_log(p_tt[np.arange(n_t), target_assign])
    d_src_ce, _ = _softmax_ce_grad_to_feats(p_ss, source_assign, bank.source_centers, temperature)
    d_tgt_ce, _ = _softmax_ce_grad_to_feats(p_tt, target_assign, bank.target_centers, temperature)
    h_st, d_src_h = _softmax_entropy_grad_to_feats(p_st, bank.target_centers, temperature)
    h_ts, d_tgt_h = _softmax_entropy_grad_to_feats(p_ts, bank.source_centers, temperature)

    value = float((ce_s.sum() + h_st.sum() + ce_t.sum() + h_ts.sum()) / total)
    d_source = (d_src_ce + d_src_h) / total
    d_target = (d_tgt_ce + d_tgt_h) / total
    return value, d_source, d_target


def attention_centers(bank_features: np.ndarray, bank_predictions: np.ndarray) -> np.ndarray:
    """Prediction-weighted aggregation of bank features into class centers.

    ``center_j = sum_i predictions[i, j] * features[i]``, L2-normalized.
    Raises if some class receives (numerically) zero total weight.
    """
    bank_features = np.asarray(bank_features, dtype=np.float64)
    bank_predictions = _require_simplex(bank_predictions, "attention_centers predictions")
    if bank_predictions.shape[0] != bank_features.shape[0]:
        raise ValueError("bank features/predictions length mismatch")
    centers = bank_predictions.T @ bank_features
    norms = np.linalg.norm(centers, axis=1)
    dead = np.flatnonzero(norms < 1e-9)
    if dead.size:
        raise ValueError(f"degenerate attention center for class {int(dead[0])}")
    return centers / norms[:, None]


def loss_self_simplified(bank: MemoryBank, bank_predictions, target_feats, temperature: float) -> float:
    """Attention-center variant: mean entropy of target-to-source similarity."""
    return loss_self_simplified_grad(bank, bank_predictions, target_feats, temperature)[0]


def loss_self_simplified_grad(bank, bank_predictions, target_feats, temperature):
    target_feats = np.asarray(target_feats, dtype=np.float64)
    if target_feats.shape[0] == 0:
        raise ValueError("loss_self_simplified needs target samples")
    centers = attention_centers(bank.features, bank_predictions)
    p_ts = similarity_rows(target_feats, centers, temperature)
    h, d_feat = _softmax_entropy_grad_to_feats(p_ts, centers, temperature)
    n = target_feats.shape[0]
    return float(h.mean()), d_feat / n


@dataclass
class LossWeights:
    """Nonnegative mixing weights for the combined objective."""

    weight_mi: float = 1.0
    weight_self: float = 1.0
    weight_cross: float = 1.0
    weight_intra: float = 0.1
    temperature: float = 0.1

    def __post_init__(self):
        for name in ("weight_mi", "weight_self", "weight_cross", "weight_intra"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
