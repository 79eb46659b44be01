"""Feature extractor plus softmax classifier head, with manual backprop.

Two desk-scale backbones share the same head convention: a tanh MLP for
vector inputs and a two-layer strided convnet for 16x16 images. The final
linear projection output is L2-normalized, so downstream code can rely on
unit-norm features, and the classifier consumes the normalized features.

All parameters live in a flat ``name -> float64 array`` dict. ``backward``
takes upstream gradients with respect to the normalized features and the
softmax probabilities and returns gradients for every parameter, which the
gradient-check tests compare against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import DomainDataset

_NORM_FLOOR = 1e-12

CHECKPOINT_VERSION = 1


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class FeatureBatch:
    """Unit-norm feature rows aligned with dataset sample positions."""

    features: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.features.shape[0] != self.indices.shape[0]:
            raise ValueError("features/indices length mismatch")


def _conv_out_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def _conv_forward(x, w, b, stride, pad):
    """x: (N, C, H, W), w: (F, C, k, k). Returns (out, cols_cache)."""
    n, c, h, width = x.shape
    f, _, k, _ = w.shape
    oh = _conv_out_size(h, k, stride, pad)
    ow = _conv_out_size(width, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k * k, oh * ow))
    for di in range(k):
        for dj in range(k):
            patch = xp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride]
            cols[:, :, di * k + dj, :] = patch.reshape(n, c, oh * ow)
    cols = cols.reshape(n, c * k * k, oh * ow)
    w2 = w.reshape(f, c * k * k)
    out = np.einsum("of,nfl->nol", w2, cols) + b[None, :, None]
    return out.reshape(n, f, oh, ow), (cols, xp.shape, (n, c, h, width), stride, pad, k, oh, ow)


def _conv_backward(dout, w, cache):
    cols, xp_shape, x_shape, stride, pad, k, oh, ow = cache
    n, c, h, width = x_shape
    f = w.shape[0]
    dout2 = dout.reshape(n, f, oh * ow)
    w2 = w.reshape(f, c * k * k)
    dw = np.einsum("nol,nfl->of", dout2, cols).reshape(w.shape)
    db = dout2.sum(axis=(0, 2))
    dcols = np.einsum("of,nol->nfl", w2, dout2).reshape(n, c, k * k, oh * ow)
    dxp = np.zeros(xp_shape)
    for di in range(k):
        for dj in range(k):
            dxp[:, :, di : di + stride * oh : stride, dj : dj + stride * ow : stride] += dcols[
                :, :, di * k + dj, :
            ].reshape(n, c, oh, ow)
    dx = dxp[:, :, pad : pad + h, pad : pad + width]
    return dx, dw, db


class AdaptationModel:
    """Backbone + normalized features + linear-softmax head.

    ``mode='vector'`` expects ``(N, input_dim)`` inputs and runs a tanh MLP
    with the given hidden sizes. ``mode='image16'`` expects ``(N, 16, 16)``
    inputs and runs two stride-2 3x3 conv layers before the projection.
    """

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        feature_dim: int = 512,
        hidden_sizes: tuple[int, ...] = (64,),
        conv_channels: tuple[int, int] = (8, 16),
        mode: str = "vector",
        seed: int = 0,
        fingerprint: str = "",
    ):
        if mode not in ("vector", "image16"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.feature_dim = int(feature_dim)
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.fingerprint = fingerprint
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(np.random.SeedSequence([int(seed), 7])))

    # -- construction -----------------------------------------------------

    def _init_params(self, rng):
        p = self.params
        if self.mode == "vector":
            dims = [self.input_dim] + list(self.hidden_sizes)
            for i in range(len(dims) - 1):
                p[f"enc_w{i}"] = rng.normal(0, 1, (dims[i], dims[i + 1])) / np.sqrt(dims[i])
                p[f"enc_b{i}"] = np.zeros(dims[i + 1])
            last = dims[-1]
        else:
            c1, c2 = self.conv_channels
            p["conv_w0"] = rng.normal(0, 1, (c1, 1, 3, 3)) / 3.0
            p["conv_b0"] = np.zeros(c1)
            p["conv_w1"] = rng.normal(0, 1, (c2, c1, 3, 3)) / np.sqrt(c1 * 9)
            p["conv_b1"] = np.zeros(c2)
            last = c2 * 4 * 4
        p["proj_w"] = rng.normal(0, 1, (last, self.feature_dim)) / np.sqrt(last)
        p["proj_b"] = np.zeros(self.feature_dim)
        p["head_w"] = 0.01 * rng.normal(0, 1, (self.feature_dim, self.num_classes))
        p["head_b"] = np.zeros(self.num_classes)

    @property
    def head_param_names(self):
        return ("head_w", "head_b")

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # -- forward / backward ------------------------------------------------

    def _check_input(self, x):
        if isinstance(x, (list, tuple)) and x and hasattr(x[0], "input"):
            x = np.stack([s.input for s in x])
        x = np.asarray(x, dtype=np.float64)
        if self.mode == "vector":
            if x.ndim != 2 or x.shape[1] != self.input_dim:
                raise ValueError(f"expected (N, {self.input_dim}) inputs, got {x.shape}")
        else:
            if x.ndim != 3 or x.shape[1:] != (16, 16):
                raise ValueError(f"expected (N, 16, 16) inputs, got {x.shape}")
        if x.shape[0] == 0:
            raise ValueError("empty batch")
        return x

    def forward_train(self, x):
        """Full forward pass; returns (features, probs, cache) for backward."""
        x = self._check_input(x)
        p = self.params
        cache: dict = {"x": x}
        if self.mode == "vector":
            h = x
            acts = []
            for i in range(len(self.hidden_sizes)):
                z = h @ p[f"enc_w{i}"] + p[f"enc_b{i}"]
                h = np.tanh(z)
                acts.append(h)
            cache["acts"] = acts
            u = h @ p["proj_w"] + p["proj_b"]
        else:
            xin = x[:, None, :, :]
            z0, cc0 = _conv_forward(xin, p["conv_w0"], p["conv_b0"], stride=2, pad=1)
            a0 = np.tanh(z0)
            z1, cc1 = _conv_forward(a0, p["conv_w1"], p["conv_b1"], stride=2, pad=1)
            a1 = np.tanh(z1)
            flat = a1.reshape(x.shape[0], -1)
            cache.update({"cc0": cc0, "a0": a0, "cc1": cc1, "a1": a1, "flat": flat})
            u = flat @ p["proj_w"] + p["proj_b"]
        norms = np.maximum(np.linalg.norm(u, axis=1, keepdims=True), _NORM_FLOOR)
        feats = u / norms
        logits = feats @ p["head_w"] + p["head_b"]
        probs = softmax_rows(logits)
        cache.update({"u": u, "norms": norms, "feats": feats, "probs": probs})
        return feats, probs, cache

    def forward(self, x):
        """Inference pass: (unit-norm features, simplex probabilities)."""
        feats, probs, _ = self.forward_train(x)
        return feats, probs

    def backward(self, cache, d_feats=None, d_probs=None):
        """Backprop upstream feature/probability gradients into parameters."""
        p = self.params
        feats, probs = cache["feats"], cache["probs"]
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        df = np.zeros_like(feats) if d_feats is None else np.asarray(d_feats, dtype=np.float64)
        if d_probs is not None:
            dp = np.asarray(d_probs, dtype=np.float64)
            # softmax jacobian: dz = P * (dp - sum(P * dp))
            inner = (probs * dp).sum(axis=1, keepdims=True)
            dz = probs * (dp - inner)
            grads["head_w"] += feats.T @ dz
            grads["head_b"] += dz.sum(axis=0)
            df = df + dz @ p["head_w"].T

        # L2-normalization jacobian: du = (df - f * sum(f * df)) / ||u||
        u_norm = cache["norms"]
        du = (df - feats * (feats * df).sum(axis=1, keepdims=True)) / u_norm

        if self.mode == "vector":
            acts = cache["acts"]
            h_last = acts[-1] if acts else cache["x"]
            grads["proj_w"] += h_last.T @ du
            grads["proj_b"] += du.sum(axis=0)
            dh = du @ p["proj_w"].T
            for i in reversed(range(len(self.hidden_sizes))):
                dzi = dh * (1.0 - acts[i] ** 2)
                prev = acts[i - 1] if i > 0 else cache["x"]
                grads[f"enc_w{i}"] += prev.T @ dzi
                grads[f"enc_b{i}"] += dzi.sum(axis=0)
                dh = dzi @ p[f"enc_w{i}"].T
        else:
            grads["proj_w"] += cache["flat"].T @ du
            grads["proj_b"] += du.sum(axis=0)
            dflat = du @ p["proj_w"].T
            da1 = dflat.reshape(cache["a1"].shape)
            dz1 = da1 * (1.0 - cache["a1"] ** 2)
            da0, dw1, db1 = _conv_backward(dz1, p["conv_w1"], cache["cc1"])
            grads["conv_w1"] += dw1
            grads["conv_b1"] += db1
            dz0 = da0 * (1.0 - cache["a0"] ** 2)
            _, dw0, db0 = _conv_backward(dz0, p["conv_w0"], cache["cc0"])
            grads["conv_w0"] += dw0
            grads["conv_b0"] += db0
        return grads

    def classify_features(self, feats) -> np.ndarray:
        """Apply only the softmax head to precomputed (bank) features."""
        feats = np.asarray(feats, dtype=np.float64)
        return softmax_rows(feats @ self.params["head_w"] + self.params["head_b"])

    # -- dataset-level helpers ----------------------------------------------

    def extract_all(self, dataset, batch_size: int = 256):
        """Deterministic full-dataset snapshot: (FeatureBatch, probs)."""
        if isinstance(dataset, DomainDataset):
            x = dataset.inputs
        else:
            x = np.asarray(dataset, dtype=np.float64)
        if x.shape[0] == 0:
            raise ValueError("empty dataset")
        feats, probs = [], []
        for lo in range(0, x.shape[0], batch_size):
            f, pr = self.forward(x[lo : lo + batch_size])
            feats.append(f)
            probs.append(pr)
        features = np.concatenate(feats, axis=0)
        return FeatureBatch(features, np.arange(x.shape[0])), np.concatenate(probs, axis=0)

    # -- checkpointing -------------------------------------------------------

    def _meta(self):
        return {
            "version": CHECKPOINT_VERSION,
            "mode": self.mode,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "conv_channels": list(self.conv_channels),
            "fingerprint": self.fingerprint,
        }

    def save(self, path):
        arrays = {f"param::{k}": v for k, v in self.params.items()}
        np.savez(path, __meta__=np.frombuffer(json.dumps(self._meta()).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "AdaptationModel":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta["version"] != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            model = cls(
                input_dim=meta["input_dim"],
                num_classes=meta["num_classes"],
                feature_dim=meta["feature_dim"],
                hidden_sizes=tuple(meta["hidden_sizes"]),
                conv_channels=tuple(meta["conv_channels"]),
                mode=meta["mode"],
                fingerprint=meta["fingerprint"],
            )
            for k in model.params:
                model.params[k] = z[f"param::{k}"].copy()
        return model


def build_model_for(dataset: DomainDataset, feature_dim, hidden_sizes, conv_channels, seed, fingerprint=""):
    """Pick backbone mode from the dataset's input shape."""
    if dataset.inputs.ndim == 3:
        mode, input_dim = "image16", 256
    else:
        mode, input_dim = "vector", dataset.inputs.shape[1]
    return AdaptationModel(
        input_dim=input_dim,
        num_classes=dataset.num_classes,
        feature_dim=feature_dim,
        hidden_sizes=hidden_sizes,
        conv_channels=conv_channels,
        mode=mode,
        seed=seed,
        fingerprint=fingerprint,
    )
