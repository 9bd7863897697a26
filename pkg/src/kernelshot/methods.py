"""Logits computation f(X) = V * k(X): cache model, KRR replacements,
per-anchor cache scores, and the registry of named method configurations.

Every method scores a query as

    logits = text_block @ k_txt(X) + image_block @ k_im(X)

where ``text_block`` is s * I (s the logit scale on text cosines) and
``image_block`` is the method's cache transform: alpha*Z for the cache
model, alpha*Z(K+lam I)^-1 for the KRR replacement, Z or
alpha*Z*diag(R_FW) for the calibrated/score-weighted variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .anchors import AnchorSet
from .core import FeatureBundle, HyperParams, OneHotLabels
from .errors import (
    ConfigAnchorMismatch,
    DegenerateSoftmax,
    DimensionMismatch,
    MissingAnchors,
)
from .kernels import (
    CalibratedGaussian,
    Gaussian,
    GaussianAffinity,
    KernelMatrix,
    KernelSpec,
    Linear,
    gram_matrix,
    kernel_block,
)
from .krr import correlation_operator, solve as krr_solve

_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TransformMatrix:
    """V split by kernel block; fusion records which published form this is."""

    image_block: Optional[np.ndarray] = None
    text_block: Optional[np.ndarray] = None
    fusion: str = "Concat"  # Concat | Sum

    def __post_init__(self):
        if self.image_block is None and self.text_block is None:
            raise DimensionMismatch("transform needs at least one block")
        if self.fusion not in ("Concat", "Sum"):
            raise ValueError(f"unknown fusion {self.fusion!r}")


@dataclass(frozen=True)
class CacheScores:
    """Strictly positive per-anchor weights on the cache values."""

    r_fw: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_fw, dtype=np.float64)
        if r.ndim != 1 or (r <= 0).any():
            raise ValueError("cache scores must be a strictly positive vector")
        object.__setattr__(self, "r_fw", r)


# -- method registry ----------------------------------------------------------

# name -> (needs image anchors, uses KRR operator, kernel family, trains, fusion)
_METHODS = {
    "zero-shot-clip":         dict(image=False, krr=False, kernel="none", train=None, fusion="Concat"),
    "tip-adapter":            dict(image=True,  krr=False, kernel="gaussian", train=None, fusion="Concat"),
    "tip-adapter-krr":        dict(image=True,  krr=True,  kernel="gaussian", train=None, fusion="Concat"),
    "sus-x":                  dict(image=True,  krr=False, kernel="calibrated", train=None, fusion="Concat"),
    "sus-x-krr":              dict(image=True,  krr=True,  kernel="calibrated", train=None, fusion="Concat"),
    "ape":                    dict(image=True,  krr=False, kernel="gaussian", train=None, fusion="Concat"),
    "text-plus-cache-fusion": dict(image=True,  krr=False, kernel="gaussian", train=None, fusion="Sum"),
    "text-plus-krr-fusion":   dict(image=True,  krr=True,  kernel="gaussian", train=None, fusion="Sum"),
    "tip-adapter-f":          dict(image=True,  krr=False, kernel="gaussian", train="Keys", fusion="Concat"),
    "tip-adapter-f-krr":      dict(image=True,  krr=True,  kernel="gaussian", train="Keys", fusion="Concat"),
}

METHOD_NAMES = tuple(_METHODS)


@dataclass(frozen=True)
class MethodConfig:
    """A named binding of kernels, anchors, transform and hyperparameters."""

    name: str
    hp: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        if self.name not in _METHODS:
            raise ValueError(
                f"unknown method {self.name!r}; known: {', '.join(_METHODS)}"
            )

    @property
    def needs_image_anchors(self) -> bool:
        return _METHODS[self.name]["image"]

    @property
    def uses_krr(self) -> bool:
        return _METHODS[self.name]["krr"]

    @property
    def kernel_family(self) -> str:
        return _METHODS[self.name]["kernel"]

    @property
    def train_target(self) -> Optional[str]:
        return _METHODS[self.name]["train"]

    @property
    def fusion(self) -> str:
        return _METHODS[self.name]["fusion"]

    def image_kernel_spec(self) -> Optional[KernelSpec]:
        if self.kernel_family == "gaussian":
            return Gaussian(self.hp.beta)
        if self.kernel_family == "calibrated":
            return CalibratedGaussian(
                alpha_mix=self.hp.alpha, gamma=self.hp.gamma, tau=self.hp.tau
            )
        return None

    def active_hyperparams(self) -> tuple[str, ...]:
        """Hyperparameter names this method actually reads (for sweep dedup)."""
        if self.name == "zero-shot-clip":
            return ("logit_scale",)
        active = ["alpha", "beta", "logit_scale"]
        if self.uses_krr:
            active.append("lambda")
        if self.kernel_family == "calibrated" or self.name == "ape":
            active.append("gamma")
        return tuple(active)


# -- elementary logits operations --------------------------------------------


def cache_logits(Z: OneHotLabels, k_im, alpha: float) -> np.ndarray:
    """alpha * Z * (image kernel block)."""
    k_im = np.asarray(k_im, dtype=np.float64)
    if k_im.shape != (Z.n,):
        raise DimensionMismatch(f"kernel block length {k_im.shape} != {Z.n}")
    return alpha * (Z.matrix @ k_im)


def zero_shot_logits(x, text_anchors: FeatureBundle) -> np.ndarray:
    """Cosine of the query against each class text anchor (unit norms)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (text_anchors.dim,):
        raise DimensionMismatch(
            f"query dim {x.shape} != anchor dim {text_anchors.dim}"
        )
    return text_anchors.data @ x


def tip_adapter_logits(
    x, anchors: AnchorSet, Z: OneHotLabels, hp: HyperParams
) -> np.ndarray:
    """s * text cosines + alpha * Z * Gaussian image block."""
    if anchors.image_anchors is None or anchors.text_anchors is None:
        raise MissingAnchors("tip-adapter needs both anchor blocks")
    k_im = kernel_block(Gaussian(hp.beta), x, anchors.image_anchors.data)[0]
    text = zero_shot_logits(np.asarray(x, dtype=np.float64), anchors.text_anchors)
    return hp.logit_scale * text + cache_logits(Z, k_im, hp.alpha)


def krr_transform_logits(
    x, anchors: AnchorSet, Z: OneHotLabels, hp: HyperParams, K: KernelMatrix
) -> np.ndarray:
    """s * text cosines + alpha * Z (K + lam I)^-1 * Gaussian image block."""
    if anchors.image_anchors is None or anchors.text_anchors is None:
        raise MissingAnchors("krr transform needs both anchor blocks")
    op = correlation_operator(Z, K, hp.lam)  # C x n1
    k_im = kernel_block(Gaussian(hp.beta), x, anchors.image_anchors.data)[0]
    text = zero_shot_logits(np.asarray(x, dtype=np.float64), anchors.text_anchors)
    return hp.logit_scale * text + hp.alpha * (op @ k_im)


def ape_logits(
    x,
    anchors: AnchorSet,
    Z: OneHotLabels,
    hp: HyperParams,
    scores: Optional[CacheScores] = None,
) -> np.ndarray:
    """s * text cosines + alpha * Z diag(R_FW) * Gaussian image block."""
    if anchors.image_anchors is None or anchors.text_anchors is None:
        raise MissingAnchors("ape needs both anchor blocks")
    if scores is None:
        scores = ape_scores(
            anchors.image_anchors, anchors.text_anchors, Z, hp.gamma, hp.tau
        )
    k_im = kernel_block(Gaussian(hp.beta), x, anchors.image_anchors.data)[0]
    text = zero_shot_logits(np.asarray(x, dtype=np.float64), anchors.text_anchors)
    return hp.logit_scale * text + hp.alpha * (Z.matrix @ (scores.r_fw * k_im))


def ape_scores(
    image_anchors: FeatureBundle,
    text_anchors: FeatureBundle,
    Z: OneHotLabels,
    gamma: float,
    tau: float,
) -> CacheScores:
    """R_FW[i] = exp(gamma * d_i) with d_i the per-anchor cross-entropy
    -log softmax(W f_i / tau)[y_i] of the text prediction against the
    anchor's one-hot label.
    """
    if image_anchors.n != Z.n:
        raise DimensionMismatch(f"{image_anchors.n} anchors but Z has {Z.n} columns")
    logits = (image_anchors.data @ text_anchors.data.T) / tau
    if not np.isfinite(logits).all():
        raise DegenerateSoftmax("non-finite text-prediction logits")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = Z.labels
    d = -logp[np.arange(image_anchors.n), y]
    d = np.minimum(d, -np.log(_PROB_FLOOR))
    return CacheScores(np.exp(gamma * d))


# -- composed scorers ---------------------------------------------------------


@dataclass(frozen=True)
class Scorer:
    """Deterministic map from query rows to C logits.

    Ties at argmax break toward the lowest class index.
    """

    transform: TransformMatrix
    anchors: AnchorSet
    spec_im: Optional[KernelSpec]
    hp: HyperParams
    metadata: dict = field(default_factory=dict)

    def logits(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = None
        if self.transform.text_block is not None:
            k_txt = kernel_block(Linear(), X, self.anchors.text_anchors.data)
            out = k_txt @ self.transform.text_block.T
        if self.transform.image_block is not None:
            k_im = kernel_block(
                self.spec_im,
                X,
                self.anchors.image_anchors.data,
                text_anchors=self.anchors.text_anchors,
                beta=self.hp.beta,
            )
            contrib = k_im @ self.transform.image_block.T
            out = contrib if out is None else out + contrib
        return out

    def predict(self, X) -> np.ndarray:
        return self.logits(X).argmax(axis=1)

    def score_row(self, x) -> np.ndarray:
        return self.logits(np.asarray(x)[None, :])[0]


def compose_method(
    config: MethodConfig,
    anchors: AnchorSet,
    Z: Optional[OneHotLabels] = None,
    episode: Optional[FeatureBundle] = None,
) -> Scorer:
    """Bind a named method to anchors and labels, returning a scorer."""
    hp = config.hp
    if anchors.text_anchors is None or anchors.text_anchors.n == 0:
        raise ConfigAnchorMismatch(f"{config.name} needs text anchors")
    C = anchors.text_anchors.n
    meta = {"method": config.name, **hp.as_dict(), "fusion": config.fusion}

    text_block = hp.logit_scale * np.eye(C)

    if not config.needs_image_anchors:
        return Scorer(
            transform=TransformMatrix(text_block=text_block, fusion=config.fusion),
            anchors=anchors,
            spec_im=None,
            hp=hp,
            metadata=meta,
        )

    if anchors.image_anchors is None or anchors.image_anchors.n == 0:
        raise ConfigAnchorMismatch(f"{config.name} needs image anchors")
    if Z is None:
        raise ConfigAnchorMismatch(f"{config.name} needs one-hot cache values")
    if Z.n != anchors.image_anchors.n:
        raise ConfigAnchorMismatch(
            f"Z has {Z.n} columns but there are {anchors.image_anchors.n} image anchors"
        )

    spec_im = config.image_kernel_spec()
    if isinstance(spec_im, Gaussian) and not anchors.image_anchors.l2_normalized:
        # trained keys live off the unit sphere; use the form that was optimized
        spec_im = GaussianAffinity(spec_im.beta)

    if config.name in ("sus-x", "sus-x-krr"):
        # alpha enters through the calibrated kernel; V = [Z, I]
        cache = Z.matrix.copy()
    elif config.name == "ape":
        scores = ape_scores(
            anchors.image_anchors, anchors.text_anchors, Z, hp.gamma, hp.tau
        )
        cache = hp.alpha * (Z.matrix * scores.r_fw[None, :])
        meta["r_fw_range"] = [float(scores.r_fw.min()), float(scores.r_fw.max())]
    else:
        cache = hp.alpha * Z.matrix

    if config.uses_krr:
        K = gram_matrix(
            anchors.image_anchors, spec_im,
            text_anchors=anchors.text_anchors, beta=hp.beta,
        )
        sol = krr_solve(K, Z, hp.lam)
        op = sol.alpha_star.T
        meta["jitter"] = sol.jitter
        if config.name in ("sus-x", "sus-x-krr"):
            cache = op
        else:
            cache = hp.alpha * op

    if config.train_target is not None:
        meta["anchor_provenance"] = anchors.provenance

    return Scorer(
        transform=TransformMatrix(
            image_block=cache, text_block=text_block, fusion=config.fusion
        ),
        anchors=anchors,
        spec_im=spec_im,
        hp=hp,
        metadata=meta,
    )
