"""Closed-form kernel ridge regression over one-hot targets.

Solves (K + lambda*I) alpha = Y^T via a Cholesky factorization with
escalating diagonal jitter instead of an explicit inverse. The applied
jitter is recorded so benchmark runs are auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .core import OneHotLabels
from .errors import DimensionMismatch, NotPositiveDefinite
from .kernels import KernelMatrix, KernelVector

_MAX_ESCALATIONS = 3


@dataclass(frozen=True)
class KrrSolution:
    """Factorized system with coefficients alpha_star = (K+lam I)^-1 Y^T."""

    factor: tuple
    alpha_star: np.ndarray  # n1 x C
    targets: np.ndarray     # n1 x C (= Y^T)
    lam: float
    jitter: float


def _factorize(K: np.ndarray, lam: float):
    """Cholesky of K + lam*I, with jitter escalation on failure."""
    n = K.shape[0]
    M = K + lam * np.eye(n)
    try:
        return cho_factor(M, lower=True), 0.0
    except LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(M)))
    jitter = 1e-10 * (mean_diag if mean_diag > 0 else 1.0)
    for _ in range(_MAX_ESCALATIONS + 1):
        try:
            return cho_factor(M + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(jitter / 10.0)


def solve(K: KernelMatrix, Y: OneHotLabels, lam: float) -> KrrSolution:
    """alpha_star = (K + lam*I)^-1 Y^T, one coefficient column per class."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if Y.n != K.n:
        raise DimensionMismatch(f"K is {K.n}x{K.n} but Y has {Y.n} columns")
    factor, jitter = _factorize(K.values, lam)
    targets = Y.matrix.T.copy()  # n1 x C
    alpha = cho_solve(factor, targets)
    return KrrSolution(
        factor=factor, alpha_star=alpha, targets=targets, lam=lam, jitter=jitter
    )


def predict(sol: KrrSolution, k_x) -> np.ndarray:
    """f(X) = alpha_star^T k(X) for the image-anchor kernel block."""
    if isinstance(k_x, KernelVector):
        k_x = k_x.image_block
    k_x = np.asarray(k_x, dtype=np.float64)
    if k_x.shape != (sol.alpha_star.shape[0],):
        raise DimensionMismatch(
            f"kernel block length {k_x.shape} != anchor count "
            f"{sol.alpha_star.shape[0]}"
        )
    return sol.alpha_star.T @ k_x


def correlation_operator(Z: OneHotLabels, K: KernelMatrix, lam: float) -> np.ndarray:
    """Z (K + lam*I)^-1, computed by solving against the columns of Z^T."""
    sol = solve(K, Z, lam)
    return sol.alpha_star.T


@dataclass(frozen=True)
class InterpolationReport:
    max_residual: float
    coefficient_norm: float
    lam: float
    jitter: float


def interpolation_check(sol: KrrSolution, K: KernelMatrix) -> InterpolationReport:
    """Training-point interpolation quality: max |K alpha_star - Y^T|."""
    resid = np.abs(K.values @ sol.alpha_star - sol.targets).max() if K.n else 0.0
    return InterpolationReport(
        max_residual=float(resid),
        coefficient_norm=float(np.linalg.norm(sol.alpha_star)),
        lam=sol.lam,
        jitter=sol.jitter,
    )
