"""Anchor construction: text anchors, image anchors from shots or an
external support set, and class-mean anchors.

Image anchors are kept in class-major order (rows (c)*M .. (c+1)*M - 1
belong to class c); inputs that arrive out of order are reordered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import FeatureBundle, l2_normalize_rows
from .errors import (
    CountMismatch,
    EmptyClass,
    MissingLabels,
    UnbalancedSupport,
    WrongKind,
)


@dataclass(frozen=True)
class AnchorSet:
    """Union of image anchors (n1 rows, class-major) and text anchors (C rows)."""

    image_anchors: Optional[FeatureBundle] = None
    text_anchors: Optional[FeatureBundle] = None
    provenance: str = "None"  # LabeledShots | ExternalSupport | ClassMeans | None

    def __post_init__(self):
        if (self.image_anchors is None or self.image_anchors.n == 0) and (
            self.text_anchors is None or self.text_anchors.n == 0
        ):
            raise CountMismatch("anchor set must contain at least one anchor")

    @property
    def n1(self) -> int:
        return self.image_anchors.n if self.image_anchors is not None else 0

    @property
    def n2(self) -> int:
        return self.text_anchors.n if self.text_anchors is not None else 0

    def merge(self, other: "AnchorSet") -> "AnchorSet":
        return AnchorSet(
            image_anchors=self.image_anchors or other.image_anchors,
            text_anchors=self.text_anchors or other.text_anchors,
            provenance=self.provenance if self.image_anchors else other.provenance,
        )


def text_anchors_from_bundle(text: FeatureBundle) -> AnchorSet:
    """Validate and normalize a text bundle as the text-anchor block."""
    if text.kind != "text":
        raise WrongKind(f"expected a text bundle, got kind={text.kind!r}")
    if text.class_count is not None and text.n != text.class_count:
        raise CountMismatch(
            f"text bundle has {text.n} rows but {text.class_count} classes"
        )
    return AnchorSet(text_anchors=l2_normalize_rows(text), provenance="None")


def _class_major(bundle: FeatureBundle) -> FeatureBundle:
    order = np.argsort(bundle.labels, kind="stable")
    if np.array_equal(order, np.arange(bundle.n)):
        return bundle
    return FeatureBundle(
        data=bundle.data[order],
        labels=bundle.labels[order],
        class_names=bundle.class_names,
        kind=bundle.kind,
        l2_normalized=bundle.l2_normalized,
        class_count=bundle.class_count,
    )


def image_anchors_from_shots(episode: FeatureBundle) -> AnchorSet:
    """Labeled episode rows as keys: n1 = C*M, unit norm, class-major."""
    if episode.labels is None:
        raise MissingLabels("image anchors need a labeled episode")
    canon = _class_major(l2_normalize_rows(episode))
    return AnchorSet(image_anchors=canon, provenance="LabeledShots")


def image_anchors_from_support(support: FeatureBundle) -> AnchorSet:
    """External (synthetic/retrieved) support set as keys.

    Per-class counts must be uniform; unbalanced sets are rejected so the
    class-major index convention stays valid.
    """
    if support.labels is None:
        raise MissingLabels("support bundle needs labels")
    counts = np.bincount(support.labels, minlength=support.class_count or 0)
    if counts.size and counts.min() != counts.max():
        raise UnbalancedSupport(
            f"per-class counts vary between {counts.min()} and {counts.max()}"
        )
    canon = _class_major(l2_normalize_rows(support))
    return AnchorSet(image_anchors=canon, provenance="ExternalSupport")


def class_mean_anchors(episode: FeatureBundle) -> AnchorSet:
    """One anchor per class: the class mean, re-normalized after averaging."""
    if episode.labels is None:
        raise MissingLabels("class means need a labeled episode")
    C = episode.class_count
    means = np.zeros((C, episode.dim))
    for c in range(C):
        rows = episode.data[episode.labels == c]
        if rows.shape[0] == 0:
            raise EmptyClass(c)
        means[c] = rows.mean(axis=0)
    bundle = FeatureBundle(
        data=means,
        labels=np.arange(C),
        class_names=episode.class_names,
        kind="image",
        class_count=C,
    )
    return AnchorSet(image_anchors=l2_normalize_rows(bundle), provenance="ClassMeans")
