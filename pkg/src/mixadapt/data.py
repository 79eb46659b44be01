"""Datasets, few-shot label splits, split-file I/O, and the synthetic
domain-shift generator used by the desk-scale benchmark.

A :class:`DomainDataset` stores stacked inputs plus a per-sample label array
(``UNLABELED`` marks a missing label). Training code must only ever see the
``unlabeled()`` view of target data; ground-truth target labels exist solely
for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNLABELED = -1

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class Sample:
    """Single-sample view into a :class:`DomainDataset`."""

    input: np.ndarray
    label: int | None
    domain_tag: str
    index: int


@dataclass
class DomainDataset:
    """Immutable-by-convention stack of samples from one domain.

    ``inputs`` is ``(N, d)`` for vector data or ``(N, 16, 16)`` for image
    data. ``labels`` is ``(N,)`` int64 with ``UNLABELED`` where no label is
    known. ``ids`` carries each sample's identifier in the originating
    dataset so that subsets remain traceable; ``sample_ids`` optionally maps
    positions to path-style string identifiers for list-file resolution.
    """

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    domain_tag: str
    name: str = ""
    ids: np.ndarray = None
    sample_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"inputs/labels length mismatch: {self.inputs.shape[0]} vs {self.labels.shape[0]}"
            )
        if self.ids.shape[0] != self.labels.shape[0]:
            raise ValueError("ids length mismatch")
        if self.domain_tag not in (SOURCE, TARGET):
            raise ValueError(f"unknown domain_tag {self.domain_tag!r}")
        known = self.labels != UNLABELED
        if known.any():
            bad = self.labels[known]
            if bad.min() < 0 or bad.max() >= self.num_classes:
                raise ValueError("labels outside [0, num_classes)")
        if self.sample_ids is not None and len(self.sample_ids) != len(self.labels):
            raise ValueError("sample_ids length mismatch")

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, i) -> Sample:
        lab = int(self.labels[i])
        return Sample(
            input=self.inputs[i],
            label=None if lab == UNLABELED else lab,
            domain_tag=self.domain_tag,
            index=int(self.ids[i]),
        )

    @property
    def fully_labeled(self) -> bool:
        return bool((self.labels != UNLABELED).all())

    def class_counts(self) -> np.ndarray:
        known = self.labels[self.labels != UNLABELED]
        return np.bincount(known, minlength=self.num_classes)

    def subset(self, indices, name: str | None = None) -> "DomainDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return DomainDataset(
            inputs=self.inputs[indices].copy(),
            labels=self.labels[indices].copy(),
            num_classes=self.num_classes,
            domain_tag=self.domain_tag,
            name=name if name is not None else self.name,
            ids=self.ids[indices].copy(),
            sample_ids=None
            if self.sample_ids is None
            else tuple(self.sample_ids[int(i)] for i in indices),
        )

    def unlabeled(self, name: str | None = None) -> "DomainDataset":
        """View of this dataset with every label masked out."""
        return DomainDataset(
            inputs=self.inputs,
            labels=np.full(len(self), UNLABELED, dtype=np.int64),
            num_classes=self.num_classes,
            domain_tag=self.domain_tag,
            name=name if name is not None else self.name,
            ids=self.ids,
            sample_ids=self.sample_ids,
        )


@dataclass
class FewShotSplit:
    """Which source samples carry a visible label, keyed by class."""

    labeled_indices: dict[int, list[int]]
    mode: str = "per_class_shots"
    param: float = 0.0

    def all_indices(self) -> np.ndarray:
        flat = [i for idxs in self.labeled_indices.values() for i in idxs]
        return np.asarray(sorted(flat), dtype=np.int64)

    def validate(self, dataset: DomainDataset):
        seen = set()
        for cls, idxs in self.labeled_indices.items():
            if not (0 <= cls < dataset.num_classes):
                raise ValueError(f"split class {cls} outside [0, {dataset.num_classes})")
            for i in idxs:
                if not (0 <= i < len(dataset)):
                    raise ValueError(f"split index {i} outside dataset of size {len(dataset)}")
                if i in seen:
                    raise ValueError(f"split index {i} listed twice")
                seen.add(i)
                lab = int(dataset.labels[i])
                if lab != UNLABELED and lab != cls:
                    raise ValueError(
                        f"split assigns class {cls} to sample {i} but dataset says {lab}"
                    )


def make_few_shot_split(
    dataset: DomainDataset,
    shots: int | None = None,
    fraction: float | None = None,
    seed: int = 0,
    balanced: bool = True,
) -> FewShotSplit:
    """Draw the labeled-source index set for a few-shot run.

    Exactly one of ``shots`` (per-class count) or ``fraction`` must be given.
    ``balanced=False`` switches fraction mode to a single global draw of
    ``max(1, floor(fraction * N))`` samples instead of per-class rounding.
    """
    if (shots is None) == (fraction is None):
        raise ValueError("specify exactly one of shots / fraction")
    if not dataset.fully_labeled:
        raise ValueError("few-shot sampling needs a fully labeled source dataset")
    rng = np.random.default_rng(seed)
    per_class = {c: np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)}

    labeled: dict[int, list[int]] = {}
    if shots is not None:
        if shots < 1:
            raise ValueError("shots must be >= 1")
        for c, idxs in per_class.items():
            if len(idxs) < shots:
                raise ValueError(
                    f"class {c} has only {len(idxs)} samples, cannot label {shots}"
                )
            pick = rng.choice(idxs, size=shots, replace=False)
            labeled[c] = sorted(int(i) for i in pick)
        return FewShotSplit(labeled, mode="per_class_shots", param=float(shots))

    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    if balanced:
        for c, idxs in per_class.items():
            if len(idxs) == 0:
                raise ValueError(f"class {c} has no samples to label")
            k = max(1, int(np.floor(fraction * len(idxs))))
            pick = rng.choice(idxs, size=k, replace=False)
            labeled[c] = sorted(int(i) for i in pick)
    else:
        n = max(1, int(np.floor(fraction * len(dataset))))
        pick = rng.choice(len(dataset), size=n, replace=False)
        labeled = {}
        for i in sorted(int(j) for j in pick):
            labeled.setdefault(int(dataset.labels[i]), []).append(i)
    return FewShotSplit(labeled, mode="fraction", param=float(fraction))


def apply_split(dataset: DomainDataset, split: FewShotSplit):
    """Partition a fully labeled source dataset into labeled/unlabeled parts."""
    split.validate(dataset)
    labeled_idx = split.all_indices()
    mask = np.zeros(len(dataset), dtype=bool)
    mask[labeled_idx] = True
    d_ls = dataset.subset(labeled_idx, name=f"{dataset.name}/labeled")
    d_us = dataset.subset(np.flatnonzero(~mask), name=f"{dataset.name}/unlabeled").unlabeled()
    return d_ls, d_us


def sample_few_shot(
    dataset: DomainDataset,
    shots: int | None = None,
    fraction: float | None = None,
    seed: int = 0,
    balanced: bool = True,
):
    """Few-shot label draw plus partition; returns ``(labeled, unlabeled)``."""
    split = make_few_shot_split(dataset, shots=shots, fraction=fraction, seed=seed, balanced=balanced)
    return apply_split(dataset, split)


def save_split_file(split: FewShotSplit, path, dataset: DomainDataset | None = None):
    """Write one `<identifier> <class>` line per labeled sample."""
    lines = []
    for cls in sorted(split.labeled_indices):
        for i in split.labeled_indices[cls]:
            if dataset is not None and dataset.sample_ids is not None:
                ident = dataset.sample_ids[i]
            else:
                ident = str(i)
            lines.append(f"{ident} {cls}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_split_file(path, dataset: DomainDataset) -> FewShotSplit:
    """Parse a `<identifier> <class>` list file against ``dataset``.

    Identifiers are integer sample indices unless the dataset carries
    ``sample_ids``, in which case they are resolved as string identifiers.
    """
    text = Path(path).read_text(encoding="utf-8")
    by_string = None
    if dataset.sample_ids is not None:
        by_string = {s: i for i, s in enumerate(dataset.sample_ids)}
    labeled: dict[int, list[int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise ValueError(f"{path}: malformed line {lineno}: {line!r}")
        ident, cls_text = parts
        try:
            cls = int(cls_text)
        except ValueError:
            raise ValueError(f"{path}: malformed line {lineno}: bad class {cls_text!r}") from None
        if by_string is not None:
            if ident not in by_string:
                raise ValueError(f"{path}: line {lineno}: unknown identifier {ident!r}")
            idx = by_string[ident]
        else:
            try:
                idx = int(ident)
            except ValueError:
                raise ValueError(
                    f"{path}: malformed line {lineno}: bad identifier {ident!r}"
                ) from None
            if not (0 <= idx < len(dataset)):
                raise ValueError(f"{path}: line {lineno}: unknown identifier {ident!r}")
        labeled.setdefault(cls, []).append(idx)
    split = FewShotSplit(labeled, mode="explicit", param=0.0)
    split.validate(dataset)
    return split


@dataclass
class SyntheticShiftConfig:
    """Generator settings for the paired Gaussian domain-shift benchmark.

    Source classes sit on a circle of ``radius`` in the first two feature
    dimensions with isotropic noise ``sigma``; any further dimensions carry
    pure class-independent noise. The target domain applies a rotation, a
    translation, and optional extra Gaussian noise to draws from the same
    generative law. ``mode='image16'`` renders each 2-d sample as a 16x16
    single-channel blob image.
    """

    num_classes: int = 4
    samples_per_class: int = 200
    feature_dim: int = 2
    radius: float = 1.0
    sigma: float = 0.3
    rotation: float = 0.0
    translation: tuple[float, ...] = ()
    noise_scale: float = 0.0
    mode: str = "vector"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not (0.0 <= self.rotation < np.pi):
            raise ValueError("rotation must lie in [0, pi)")
        if self.mode not in ("vector", "image16"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "image16" and self.feature_dim != 2:
            raise ValueError("image16 mode requires feature_dim == 2")
        self.translation = tuple(float(t) for t in self.translation)
        if len(self.translation) not in (0, self.feature_dim):
            raise ValueError("translation must be empty or feature_dim long")

    def class_means(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.num_classes) / self.num_classes
        means = np.zeros((self.num_classes, self.feature_dim))
        means[:, 0] = self.radius * np.cos(angles)
        means[:, 1] = self.radius * np.sin(angles)
        return means


IMAGE_SIZE = 16
_BLOB_SIGMA = 1.4  # pixels


def render_blob_images(points: np.ndarray, span: float) -> np.ndarray:
    """Render 2-d points as Gaussian blobs on a 16x16 canvas in [0, 1]."""
    points = np.asarray(points, dtype=np.float64)
    cx = (points[:, 0] / span + 0.5) * (IMAGE_SIZE - 1)
    cy = (points[:, 1] / span + 0.5) * (IMAGE_SIZE - 1)
    cx = np.clip(cx, 0, IMAGE_SIZE - 1)
    cy = np.clip(cy, 0, IMAGE_SIZE - 1)
    grid = np.arange(IMAGE_SIZE, dtype=np.float64)
    dx = grid[None, None, :] - cx[:, None, None]  # columns
    dy = grid[None, :, None] - cy[:, None, None]  # rows
    images = np.exp(-(dx * dx + dy * dy) / (2.0 * _BLOB_SIGMA**2))
    return images


def make_synthetic_shift(config: SyntheticShiftConfig, seed: int = 0):
    """Generate paired source/target datasets, both fully labeled.

    Target base draws reuse the source random stream, so with an identity
    transform (rotation 0, no translation, zero extra noise) the two domains
    are byte-identical; the transform alone creates the domain gap. Target
    labels are for evaluation only and must be masked via ``unlabeled()``
    before training.
    """
    c = config.num_classes
    n = c * config.samples_per_class
    means = config.class_means()
    labels = np.repeat(np.arange(c, dtype=np.int64), config.samples_per_class)

    base_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    base = means[labels] + config.sigma * base_rng.standard_normal((n, config.feature_dim))

    target = base.copy()
    theta = config.rotation
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    target[:, :2] = target[:, :2] @ rot.T
    if config.translation:
        target = target + np.asarray(config.translation)
    if config.noise_scale > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        target = target + config.noise_scale * noise_rng.standard_normal(target.shape)

    source_inputs, target_inputs = base, target
    if config.mode == "image16":
        # the canvas frames the nominal class geometry; heavily displaced
        # outlier samples clip at the border
        trans_norm = float(np.linalg.norm(config.translation)) if config.translation else 0.0
        span = 2.0 * (config.radius + 3.0 * config.sigma + trans_norm)
        source_inputs = render_blob_images(base, span)
        target_inputs = render_blob_images(target, span)

    source = DomainDataset(source_inputs, labels.copy(), c, SOURCE, name="synthetic-source")
    target_ds = DomainDataset(target_inputs, labels.copy(), c, TARGET, name="synthetic-target")
    return source, target_ds


def load_npz_dataset(path):
    """Load a source/target dataset pair from one ``.npz`` archive.

    Expected arrays: ``source_inputs``, ``source_labels``, ``target_inputs``,
    ``target_labels`` and scalar ``num_classes``.
    """
    with np.load(path, allow_pickle=False) as z:
        required = ("source_inputs", "source_labels", "target_inputs", "target_labels", "num_classes")
        for key in required:
            if key not in z:
                raise ValueError(f"{path}: missing array {key!r}")
        c = int(z["num_classes"])
        source = DomainDataset(z["source_inputs"], z["source_labels"], c, SOURCE, name=str(path))
        target = DomainDataset(z["target_inputs"], z["target_labels"], c, TARGET, name=str(path))
    return source, target
