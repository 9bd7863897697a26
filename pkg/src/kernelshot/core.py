"""Shared numerical data model: feature bundles, labels, hyperparameters.

All arithmetic is double precision. Bundles are immutable after
construction (the underlying arrays are marked read-only), so they are
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientShots,
    LabelOutOfRange,
    MissingLabels,
    ZeroNormRow,
)

_UNIT_NORM_TOL = 1e-5


def _frozen(a: np.ndarray, source=None) -> np.ndarray:
    """Read-only contiguous view; copies rather than freezing the caller's
    array in place."""
    a = np.ascontiguousarray(a)
    if a is source and a.flags.writeable:
        a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FeatureBundle:
    """An n x d matrix of embeddings with optional labels and metadata.

    ``kind`` is either ``"image"`` or ``"text"``; for text bundles row c is
    the embedding of class c and n == class_count.
    """

    data: np.ndarray
    labels: Optional[np.ndarray] = None
    class_names: Optional[tuple[str, ...]] = None
    kind: str = "image"
    l2_normalized: bool = False
    class_count: Optional[int] = None
    payload_sha256: Optional[str] = None

    def __post_init__(self):
        source = self.data if isinstance(self.data, np.ndarray) else None
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatch(f"feature matrix must be 2-D, got {data.ndim}-D")
        object.__setattr__(self, "data", _frozen(data, source))

        if self.kind not in ("image", "text"):
            raise ValueError(f"unknown bundle kind {self.kind!r}")

        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))

        labels = self.labels
        if labels is not None:
            lab_source = labels if isinstance(labels, np.ndarray) else None
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (data.shape[0],):
                raise DimensionMismatch(
                    f"labels have shape {labels.shape}, expected ({data.shape[0]},)"
                )
            object.__setattr__(self, "labels", _frozen(labels, lab_source))

        c = self.class_count
        if c is None:
            if self.class_names is not None:
                c = len(self.class_names)
            elif self.kind == "text":
                c = data.shape[0]
            elif labels is not None and labels.size:
                c = int(labels.max()) + 1
        object.__setattr__(self, "class_count", c)

        if self.kind == "text" and c is not None and data.shape[0] != c:
            raise DimensionMismatch(
                f"text bundle must have one row per class: n={data.shape[0]}, C={c}"
            )
        if labels is not None and labels.size and c is not None:
            bad = (labels < 0) | (labels >= c)
            if bad.any():
                i = int(np.argmax(bad))
                raise LabelOutOfRange(i, int(labels[i]))
        if self.l2_normalized and data.size:
            norms = np.linalg.norm(data, axis=1)
            if np.abs(norms - 1.0).max() > _UNIT_NORM_TOL:
                i = int(np.abs(norms - 1.0).argmax())
                raise ValueError(
                    f"bundle flagged l2_normalized but row {i} has norm {norms[i]:.6g}"
                )

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def l2_normalize_rows(bundle: FeatureBundle) -> FeatureBundle:
    """Return a copy of ``bundle`` with unit-norm rows. Idempotent."""
    if bundle.l2_normalized:
        return bundle
    norms = np.linalg.norm(bundle.data, axis=1)
    small = norms < 1e-12
    if small.any():
        raise ZeroNormRow(int(np.argmax(small)))
    return replace(bundle, data=bundle.data / norms[:, None], l2_normalized=True)


@dataclass(frozen=True)
class OneHotLabels:
    """C x n1 indicator matrix with exactly one 1.0 per column."""

    matrix: np.ndarray
    class_count: int
    shot_count: int

    def __post_init__(self):
        source = self.matrix if isinstance(self.matrix, np.ndarray) else None
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != self.class_count:
            raise DimensionMismatch(
                f"one-hot matrix shape {m.shape} inconsistent with C={self.class_count}"
            )
        col_sums = m.sum(axis=0)
        if m.size and (
            not np.array_equal(np.unique(m), np.array([0.0, 1.0]))
            and not np.array_equal(np.unique(m), np.array([1.0]))
        ):
            raise ValueError("one-hot matrix entries must be exactly 0.0 or 1.0")
        if m.size and not np.array_equal(col_sums, np.ones(m.shape[1])):
            raise ValueError("every one-hot column must sum to exactly 1.0")
        object.__setattr__(self, "matrix", _frozen(m, source))

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return self.matrix.argmax(axis=0)


def one_hot(labels: Sequence[int] | np.ndarray, class_count: int) -> OneHotLabels:
    """Build the C x n one-hot matrix Z from integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    for i, v in enumerate(labels):
        if v < 0 or v >= class_count:
            raise LabelOutOfRange(i, int(v))
    m = np.zeros((class_count, labels.size))
    m[labels, np.arange(labels.size)] = 1.0
    shots = labels.size // class_count if class_count else 0
    return OneHotLabels(m, class_count, shots)


@dataclass(frozen=True)
class HyperParams:
    """Scalar hyperparameters shared across methods.

    alpha: cache/KRR mixing weight; beta: Gaussian kernel width;
    lam: ridge penalty; gamma: divergence sharpness (sign free);
    logit_scale: multiplier on the text-cosine block;
    tau: softmax temperature for KL-based terms.
    """

    alpha: float = 1.0
    beta: float = 5.0
    lam: float = 0.1
    gamma: float = -1.0
    logit_scale: float = 100.0
    tau: float = 0.01

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.logit_scale <= 0:
            raise ValueError("logit_scale must be > 0")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda": self.lam,
            "gamma": self.gamma,
            "logit_scale": self.logit_scale,
            "tau": self.tau,
        }


@dataclass(frozen=True)
class EpisodeSpec:
    """A C-way M-shot episode: M labeled rows per class, seeded sampling."""

    class_count: int
    shots: int
    seed: int = 0
    train_split: str = "train"
    val_split: str = "val"
    test_split: str = "test"


def sample_episode(train: FeatureBundle, spec: EpisodeSpec) -> FeatureBundle:
    """Draw M distinct rows per class from ``train``, class-major order.

    Uses NumPy's default PCG64 generator seeded with ``spec.seed``; for
    each class the candidate indices are permuted and the first M taken
    (shuffle-then-take), so the selection is portable and reproducible.
    """
    if train.labels is None:
        raise MissingLabels("episode sampling needs a labeled bundle")
    rng = np.random.default_rng(spec.seed)
    picked = []
    for c in range(spec.class_count):
        idx = np.flatnonzero(train.labels == c)
        if idx.size < spec.shots:
            raise InsufficientShots(c, int(idx.size), spec.shots)
        picked.append(rng.permutation(idx)[: spec.shots])
    rows = np.concatenate(picked)
    return FeatureBundle(
        data=train.data[rows],
        labels=train.labels[rows],
        class_names=train.class_names,
        kind="image",
        l2_normalized=train.l2_normalized,
        class_count=spec.class_count,
    )
