"""Kernel functions, kernel vectors k(X) and Gram matrices K.

Scalar kernels (``k_linear``, ``k_gaussian``, ...) are the reference
operations; ``kernel_block`` is the vectorized engine used to assemble
kernel vectors and Gram matrices. Kernels never re-normalize their
inputs; callers are responsible for normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import FeatureBundle, HyperParams
from .errors import (
    BlockCountMismatch,
    DimensionMismatch,
    EmptyComposite,
    MissingTextAnchors,
)

# -- kernel specifications ----------------------------------------------------


@dataclass(frozen=True)
class Linear:
    pass


@dataclass(frozen=True)
class WeightedLinear:
    """Sum of per-block dot products; blocks are equal splits of the dim."""

    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


@dataclass(frozen=True)
class Gaussian:
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("Gaussian beta must be > 0")


@dataclass(frozen=True)
class GaussianAffinity:
    """exp(-beta (1 - x.a)): equals the Gaussian kernel on unit-norm rows
    and is the form differentiated when keys are trained off the sphere."""

    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("GaussianAffinity beta must be > 0")


@dataclass(frozen=True)
class CalibratedGaussian:
    """Gaussian affinity mixed with a rescaled negative text-space KL term."""

    alpha_mix: float
    gamma: float
    tau: float = 0.01

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class Composite:
    parts: tuple[tuple[float, "KernelSpec"], ...]

    def __post_init__(self):
        if not self.parts:
            raise EmptyComposite("composite kernel needs at least one sub-kernel")
        ws = [w for w, _ in self.parts]
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise ValueError("composite weights must be >= 0 with at least one > 0")
        object.__setattr__(
            self, "parts", tuple((float(w), s) for w, s in self.parts)
        )


KernelSpec = Union[
    Linear, WeightedLinear, Gaussian, GaussianAffinity, CalibratedGaussian, Composite
]


@dataclass(frozen=True)
class KernelVector:
    """k(X): image-anchor block first, text-anchor block second."""

    values: np.ndarray
    n1: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise DimensionMismatch("kernel vector must be 1-D")
        if not 0 <= self.n1 <= v.size:
            raise DimensionMismatch("block boundary out of range")
        object.__setattr__(self, "values", v)

    @property
    def image_block(self) -> np.ndarray:
        return self.values[: self.n1]

    @property
    def text_block(self) -> np.ndarray:
        return self.values[self.n1:]


@dataclass(frozen=True)
class KernelMatrix:
    """Symmetric n1 x n1 Gram matrix."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionMismatch(f"Gram matrix must be square, got {v.shape}")
        if v.size and np.abs(v - v.T).max() > 1e-12:
            raise ValueError("Gram matrix is not symmetric within 1e-12")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


# -- scalar kernels -----------------------------------------------------------


def _check_dims(x: np.ndarray, a: np.ndarray):
    if x.shape != a.shape:
        raise DimensionMismatch(f"shapes {x.shape} and {a.shape} differ")


def k_linear(x, a) -> float:
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _check_dims(x, a)
    return float(x @ a)


def k_gaussian(x, a, beta: float) -> float:
    """exp(-beta * ||x - a||^2 / 2); equals exp(-beta (1 - x.a)) on unit rows."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _check_dims(x, a)
    d = x - a
    return float(np.exp(-beta * (d @ d) / 2.0))


def k_weighted_linear(x_blocks: Sequence, a_blocks: Sequence, weights) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    if len(x_blocks) != len(a_blocks) or len(x_blocks) != weights.size:
        raise BlockCountMismatch(
            f"{len(x_blocks)} x-blocks, {len(a_blocks)} a-blocks, "
            f"{weights.size} weights"
        )
    total = 0.0
    for w, xb, ab in zip(weights, x_blocks, a_blocks):
        xb = np.asarray(xb, dtype=np.float64)
        ab = np.asarray(ab, dtype=np.float64)
        _check_dims(xb, ab)
        total += w * float(xb @ ab)
    return total


def _log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _kl_rows(logp: np.ndarray, logq: np.ndarray) -> np.ndarray:
    """KL(p || q) for each pair of rows of logp (m x C) vs logq (p x C)."""
    p = np.exp(logp)
    # entropies of p rows, cross terms against every q row
    ent = (p * logp).sum(axis=1)
    cross = p @ logq.T
    return ent[:, None] - cross


def _rescale(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Min-max affine rescale of ``values`` into [lo, hi].

    A constant block maps to the midpoint of the target range.
    """
    vmin = values.min()
    vmax = values.max()
    if vmax - vmin < 1e-300:
        return np.full_like(values, (lo + hi) / 2.0)
    return lo + (values - vmin) / (vmax - vmin) * (hi - lo)


def k_calibrated_gaussian(x, a, text_anchors: FeatureBundle, hp: HyperParams) -> float:
    """alpha * k_gau + gamma * (rescaled -KL of text-space softmaxes).

    Single-pair form: the rescale block is the single pair, so the -KL
    term maps to the (degenerate) midpoint, i.e. the Gaussian value.
    """
    spec = CalibratedGaussian(alpha_mix=hp.alpha, gamma=hp.gamma, tau=hp.tau)
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _check_dims(x, a)
    block = kernel_block(
        spec, x[None, :], a[None, :], text_anchors=text_anchors, beta=hp.beta
    )
    return float(block[0, 0])


def composite_kernel(x, a, spec: Composite, text_anchors=None, beta=None) -> float:
    total = 0.0
    for w, sub in spec.parts:
        total += w * _scalar_eval(sub, x, a, text_anchors, beta)
    return total


def _scalar_eval(spec, x, a, text_anchors, beta):
    if isinstance(spec, Linear):
        return k_linear(x, a)
    if isinstance(spec, Gaussian):
        return k_gaussian(x, a, spec.beta)
    if isinstance(spec, GaussianAffinity):
        return float(np.exp(-spec.beta * (1.0 - k_linear(x, a))))
    if isinstance(spec, WeightedLinear):
        x = np.asarray(x, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        xb = _split_blocks(x, len(spec.weights))
        ab = _split_blocks(a, len(spec.weights))
        return k_weighted_linear(xb, ab, spec.weights)
    if isinstance(spec, CalibratedGaussian):
        if text_anchors is None:
            raise MissingTextAnchors("calibrated kernel needs text anchors")
        hp = HyperParams(
            alpha=spec.alpha_mix, gamma=spec.gamma, tau=spec.tau,
            beta=5.0 if beta is None else beta,
        )
        return k_calibrated_gaussian(x, a, text_anchors, hp)
    if isinstance(spec, Composite):
        return composite_kernel(x, a, spec, text_anchors, beta)
    raise TypeError(f"unknown kernel spec {spec!r}")


def _split_blocks(v: np.ndarray, count: int) -> list[np.ndarray]:
    if v.size % count:
        raise DimensionMismatch(
            f"dimension {v.size} not divisible into {count} equal blocks"
        )
    return list(v.reshape(count, -1))


# -- vectorized block evaluation ---------------------------------------------


def _sq_dists(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    xn = (X * X).sum(axis=1)
    an = (A * A).sum(axis=1)
    d2 = xn[:, None] + an[None, :] - 2.0 * (X @ A.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def kernel_block(
    spec: KernelSpec,
    X: np.ndarray,
    A: np.ndarray,
    text_anchors: Optional[FeatureBundle] = None,
    beta: Optional[float] = None,
    symmetric: bool = False,
) -> np.ndarray:
    """Evaluate ``spec`` for every (query row, anchor row) pair.

    For the calibrated Gaussian the -KL term is rescaled per query row
    into the [min, max] of that row's Gaussian block, so batch scoring
    equals row-by-row scoring. With ``symmetric=True`` (Gram matrices)
    the KL term is averaged with its transpose and rescaled over the
    whole block, and the result is exactly symmetrized.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if X.shape[1] != A.shape[1]:
        raise DimensionMismatch(f"query dim {X.shape[1]} != anchor dim {A.shape[1]}")

    if isinstance(spec, Linear):
        return X @ A.T
    if isinstance(spec, Gaussian):
        return np.exp(-spec.beta * _sq_dists(X, A) / 2.0)
    if isinstance(spec, GaussianAffinity):
        return np.exp(-spec.beta * (1.0 - X @ A.T))
    if isinstance(spec, WeightedLinear):
        nb = len(spec.weights)
        if X.shape[1] % nb:
            raise DimensionMismatch(
                f"dimension {X.shape[1]} not divisible into {nb} equal blocks"
            )
        bs = X.shape[1] // nb
        out = np.zeros((X.shape[0], A.shape[0]))
        for i, w in enumerate(spec.weights):
            out += w * (X[:, i * bs:(i + 1) * bs] @ A[:, i * bs:(i + 1) * bs].T)
        return out
    if isinstance(spec, CalibratedGaussian):
        if text_anchors is None:
            raise MissingTextAnchors("calibrated kernel needs text anchors")
        if text_anchors.kind != "text":
            raise MissingTextAnchors("calibration reference must be a text bundle")
        b = 5.0 if beta is None else beta
        kgau = np.exp(-b * _sq_dists(X, A) / 2.0)
        W = text_anchors.data  # C x d
        logp = _log_softmax((X @ W.T) / spec.tau)
        logq = _log_softmax((A @ W.T) / spec.tau)
        neg_kl = -_kl_rows(logp, logq)
        if symmetric:
            neg_kl = (neg_kl + neg_kl.T) / 2.0
            scaled = _rescale(neg_kl, kgau.min(), kgau.max())
            out = spec.alpha_mix * kgau + spec.gamma * scaled
            return (out + out.T) / 2.0
        scaled = np.empty_like(neg_kl)
        for i in range(neg_kl.shape[0]):
            scaled[i] = _rescale(neg_kl[i], kgau[i].min(), kgau[i].max())
        return spec.alpha_mix * kgau + spec.gamma * scaled
    if isinstance(spec, Composite):
        out = np.zeros((X.shape[0], A.shape[0]))
        for w, sub in spec.parts:
            out += w * kernel_block(
                sub, X, A, text_anchors=text_anchors, beta=beta, symmetric=symmetric
            )
        return out
    raise TypeError(f"unknown kernel spec {spec!r}")


def kernel_vector(
    x,
    image_anchors: Optional[FeatureBundle],
    text_anchors: Optional[FeatureBundle],
    spec_im: Optional[KernelSpec],
    spec_txt: Optional[KernelSpec],
    beta: Optional[float] = None,
) -> KernelVector:
    """Assemble k(X) = [image block | text block] for one query row."""
    x = np.asarray(x, dtype=np.float64)
    blocks = []
    n1 = 0
    if image_anchors is not None and image_anchors.n:
        blocks.append(
            kernel_block(
                spec_im, x[None, :], image_anchors.data,
                text_anchors=text_anchors, beta=beta,
            )[0]
        )
        n1 = image_anchors.n
    if text_anchors is not None and text_anchors.n:
        blocks.append(
            kernel_block(
                spec_txt, x[None, :], text_anchors.data,
                text_anchors=text_anchors, beta=beta,
            )[0]
        )
    if not blocks:
        raise DimensionMismatch("no anchors to evaluate against")
    return KernelVector(np.concatenate(blocks), n1)


def gram_matrix(
    anchors: FeatureBundle,
    spec: KernelSpec,
    text_anchors: Optional[FeatureBundle] = None,
    beta: Optional[float] = None,
) -> KernelMatrix:
    """K = [k(A_i, A_j)], exactly symmetrized."""
    if anchors.n == 0:
        raise DimensionMismatch("anchors must be non-empty")
    K = kernel_block(
        spec, anchors.data, anchors.data,
        text_anchors=text_anchors, beta=beta, symmetric=True,
    )
    return KernelMatrix((K + K.T) / 2.0)
