"""Gradient-based fine-tuning of cache keys and per-anchor cache scores.

The trained model is

    logits(x) = s * T x + alpha * Z diag(r) k(x),   k_i = exp(-beta (1 - A_i . x))

with keys A (initialized from the episode's image anchors) and scores
r = exp(rho) trained via plain mini-batch gradient descent. Gradients
are hand-derived and validated against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .anchors import AnchorSet
from .core import FeatureBundle, HyperParams, OneHotLabels
from .errors import (
    DivergedLoss,
    KernelMismatch,
    LabelOutOfRange,
    MissingAnchors,
)
from .kernels import Gaussian, GaussianAffinity, KernelSpec
from .methods import CacheScores

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 20
    batch_size: int = 32
    weight_decay: float = 0.0
    seed: int = 0
    target: str = "Keys"  # Keys | CacheScores | Both
    normalize_keys: bool = False
    cosine_decay: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.target not in ("Keys", "CacheScores", "Both"):
            raise ValueError(f"unknown train target {self.target!r}")


@dataclass(frozen=True)
class TrainReport:
    loss_history: tuple[float, ...]
    keys: np.ndarray
    scores: CacheScores
    grad_check_max_rel_err: float
    best_val_accuracy: Optional[float]
    best_epoch: int


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    """Mean of -log softmax(logits)[y]; probabilities floored at 1e-12."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    C = logits.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        i = int(np.argmax((labels < 0) | (labels >= C)))
        raise LabelOutOfRange(i, int(labels[i]))
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per = -logp[np.arange(labels.size), labels]
    return float(np.minimum(per, -np.log(_PROB_FLOOR)).mean())


def _model_logits(X, keys, text, Z, hp, r):
    k = np.exp(-hp.beta * (1.0 - X @ keys.T))  # B x n1
    return hp.logit_scale * (X @ text.T) + hp.alpha * ((r * k) @ Z.matrix.T), k


def _softmax_residual(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(labels.size), labels] -= 1.0
    return p / labels.size  # dL/dlogits for the batch mean


def _check_kernel(kernel: Optional[KernelSpec]):
    if kernel is not None and not isinstance(kernel, (Gaussian, GaussianAffinity)):
        raise KernelMismatch("key gradients require a Gaussian image kernel")


def grad_keys(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    anchors: AnchorSet,
    Z: OneHotLabels,
    hp: HyperParams,
    scores: Optional[CacheScores] = None,
    kernel: Optional[KernelSpec] = None,
) -> np.ndarray:
    """d(mean cross-entropy)/d(keys), shape n1 x d."""
    _check_kernel(kernel)
    X, keys, text, r = _unpack(batch_x, anchors, scores)
    logits, k = _model_logits(X, keys, text, Z, hp, r)
    g = _softmax_residual(logits, np.asarray(batch_y, dtype=np.int64))
    c = g @ Z.matrix  # B x n1: dL/dlogits pulled back through Z
    coeff = hp.alpha * hp.beta * (r * (c * k))  # B x n1
    return coeff.T @ X


def grad_cache_scores(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    anchors: AnchorSet,
    Z: OneHotLabels,
    hp: HyperParams,
    scores: Optional[CacheScores] = None,
) -> np.ndarray:
    """d(mean cross-entropy)/d(R_FW), shape n1."""
    X, keys, text, r = _unpack(batch_x, anchors, scores)
    logits, k = _model_logits(X, keys, text, Z, hp, r)
    g = _softmax_residual(logits, np.asarray(batch_y, dtype=np.int64))
    c = g @ Z.matrix
    return hp.alpha * (c * k).sum(axis=0)


def _unpack(batch_x, anchors: AnchorSet, scores: Optional[CacheScores]):
    if anchors.image_anchors is None or anchors.text_anchors is None:
        raise MissingAnchors("training needs both anchor blocks")
    X = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    keys = anchors.image_anchors.data
    text = anchors.text_anchors.data
    r = np.ones(keys.shape[0]) if scores is None else scores.r_fw
    return X, keys, text, r


def _fd_check(X, y, keys, text, Z, hp, r, rng, h=1e-4, n_coords=16):
    """Central finite differences on a random subset of coordinates."""

    def loss_at(keys_, r_):
        logits, _ = _model_logits(
            X, keys_, text, Z, hp, r_
        )
        return cross_entropy_loss(logits, y)

    anchors = AnchorSet(
        image_anchors=FeatureBundle(keys, kind="image"),
        text_anchors=FeatureBundle(text, kind="text"),
    )
    gk = grad_keys(X, y, anchors, Z, hp, CacheScores(r))
    gr = grad_cache_scores(X, y, anchors, Z, hp, CacheScores(r))

    max_rel = 0.0
    flat = keys.ravel()
    n_k = min(n_coords, flat.size)
    for idx in rng.choice(flat.size, size=n_k, replace=False):
        kp = keys.copy().ravel()
        kp[idx] += h
        km = keys.copy().ravel()
        km[idx] -= h
        fd = (
            loss_at(kp.reshape(keys.shape), r) - loss_at(km.reshape(keys.shape), r)
        ) / (2 * h)
        an = gk.ravel()[idx]
        denom = max(abs(fd), abs(an), 1e-6)
        max_rel = max(max_rel, abs(fd - an) / denom)
    n_r = min(n_coords, r.size)
    for idx in rng.choice(r.size, size=n_r, replace=False):
        rp = r.copy()
        rp[idx] += h
        rm = r.copy()
        rm[idx] -= h
        fd = (loss_at(keys, rp) - loss_at(keys, rm)) / (2 * h)
        an = gr[idx]
        denom = max(abs(fd), abs(an), 1e-6)
        max_rel = max(max_rel, abs(fd - an) / denom)
    return max_rel


def train(
    config: TrainConfig,
    episode: FeatureBundle,
    anchors: AnchorSet,
    Z: OneHotLabels,
    val_bundle: Optional[FeatureBundle] = None,
    hp: HyperParams = HyperParams(),
) -> TrainReport:
    """Mini-batch gradient descent on keys and/or cache scores.

    Batch order is drawn from a PCG64 generator seeded by the config, so
    identical configs give identical reports. Scores are parameterized as
    exp(rho) to stay positive. Returns the best-validation parameters
    (final parameters when no validation bundle is given).
    """
    if anchors.image_anchors is None or anchors.text_anchors is None:
        raise MissingAnchors("training needs both anchor blocks")
    rng = np.random.default_rng(config.seed)
    X = episode.data
    y = episode.labels
    keys = anchors.image_anchors.data.copy()
    text = anchors.text_anchors.data
    rho = np.zeros(keys.shape[0])

    grad_check = _fd_check(
        X[: min(4, X.shape[0])], y[: min(4, y.shape[0])],
        keys, text, Z, hp, np.exp(rho), rng,
    )

    train_keys = config.target in ("Keys", "Both")
    train_scores = config.target in ("CacheScores", "Both")

    losses = []
    best = (keys.copy(), rho.copy())
    best_acc = None
    best_epoch = 0
    n = X.shape[0]
    for epoch in range(config.epochs):
        lr = config.learning_rate
        if config.cosine_decay and config.epochs > 1:
            lr *= 0.5 * (1.0 + np.cos(np.pi * epoch / (config.epochs - 1)))
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = X[idx], y[idx]
            r = np.exp(rho)
            logits, k = _model_logits(xb, keys, text, Z, hp, r)
            loss = cross_entropy_loss(logits, yb)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss} at epoch {epoch}")
            batch_losses.append(loss)
            g = _softmax_residual(logits, yb)
            c = g @ Z.matrix
            if train_keys:
                gk = (hp.alpha * hp.beta * (r * (c * k))).T @ xb
                keys -= lr * (gk + config.weight_decay * keys)
                if config.normalize_keys:
                    keys /= np.linalg.norm(keys, axis=1, keepdims=True)
            if train_scores:
                gr = hp.alpha * (c * k).sum(axis=0)
                rho -= lr * (r * gr + config.weight_decay * rho)
        losses.append(float(np.mean(batch_losses)))
        if val_bundle is not None and val_bundle.labels is not None:
            r = np.exp(rho)
            logits, _ = _model_logits(val_bundle.data, keys, text, Z, hp, r)
            acc = float((logits.argmax(axis=1) == val_bundle.labels).mean() * 100)
            if best_acc is None or acc > best_acc:
                best_acc = acc
                best_epoch = epoch
                best = (keys.copy(), rho.copy())
        else:
            best_epoch = epoch
            best = (keys, rho)

    keys_out, rho_out = best
    return TrainReport(
        loss_history=tuple(losses),
        keys=keys_out.copy(),
        scores=CacheScores(np.exp(rho_out)),
        grad_check_max_rel_err=float(grad_check),
        best_val_accuracy=best_acc,
        best_epoch=best_epoch,
    )


def trained_anchor_set(anchors: AnchorSet, report: TrainReport) -> AnchorSet:
    """Anchor set with the trained keys substituted for the originals."""
    src = anchors.image_anchors
    norms = np.linalg.norm(report.keys, axis=1)
    unit = bool(np.abs(norms - 1.0).max() <= 1e-5) if report.keys.size else True
    keys = FeatureBundle(
        data=report.keys,
        labels=src.labels,
        class_names=src.class_names,
        kind="image",
        l2_normalized=unit,
        class_count=src.class_count,
    )
    return AnchorSet(
        image_anchors=keys,
        text_anchors=anchors.text_anchors,
        provenance=anchors.provenance,
    )
