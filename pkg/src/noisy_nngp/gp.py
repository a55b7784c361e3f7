"""Exact GP regression on a precomputed kernel.

One Cholesky factorisation of ``Psi = K + sigma_eps2 I`` serves all output
channels; the channels are independent and share the same covariance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import FactorisationError, InvariantError

JITTER_START = 1e-10
JITTER_STOP = 1e-4
VARIANCE_SLACK = 1e-8


@dataclass(frozen=True)
class Posterior:
    chol: np.ndarray  # lower triangular factor of K + (sigma_eps2 + jitter_used) I
    alpha: np.ndarray  # (N, C) solution of Psi alpha = Y
    sigma_eps2: float
    jitter_used: float

    @property
    def n(self) -> int:
        return self.chol.shape[0]

    def solve(self, b):
        return sla.cho_solve((self.chol, True), b)


@dataclass(frozen=True)
class PosteriorPredictive:
    mean: np.ndarray  # (C,)
    variance: float


def jitter_cholesky(a: np.ndarray):
    """Lower Cholesky factor of ``a``, adding diagonal jitter only if needed.

    Jitter starts at 1e-10 times the mean diagonal and grows tenfold up to
    1e-4 times it.  Returns ``(L, jitter_added)``.
    """
    try:
        return sla.cholesky(a, lower=True), 0.0
    except sla.LinAlgError:
        pass
    mean_diag = float(np.mean(np.diag(a)))
    scale = mean_diag if mean_diag > 0 else 1.0
    rel = JITTER_START
    while rel <= JITTER_STOP * (1 + 1e-9):
        jit = rel * scale
        try:
            return sla.cholesky(a + jit * np.eye(a.shape[0]), lower=True), jit
        except sla.LinAlgError:
            rel *= 10
    min_eig = float(np.linalg.eigvalsh(a)[0])
    raise FactorisationError(
        f"Cholesky failed up to jitter {JITTER_STOP:g} x mean diagonal; smallest eigenvalue {min_eig:.3e}",
        min_eigenvalue=min_eig,
    )


def _as_matrix(gram) -> np.ndarray:
    k = np.asarray(getattr(gram, "values", gram), dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"kernel must be square, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise FactorisationError("kernel matrix has non-finite entries")
    return k


def _as_targets(targets, n: int) -> np.ndarray:
    y = np.asarray(targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} targets for a {n} x {n} kernel")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")
    return y


def fit(gram, targets, sigma_eps2: float) -> Posterior:
    if sigma_eps2 < 0:
        raise ValueError(f"sigma_eps2 must be >= 0, got {sigma_eps2}")
    k = _as_matrix(gram)
    y = _as_targets(targets, k.shape[0])
    psi = k + sigma_eps2 * np.eye(k.shape[0])
    chol, jitter = jitter_cholesky(psi)
    alpha = sla.cho_solve((chol, True), y)
    chol.setflags(write=False)
    alpha.setflags(write=False)
    return Posterior(chol, alpha, float(sigma_eps2), jitter)


def _floor_variance(var: np.ndarray, psi: np.ndarray) -> np.ndarray:
    neg = var < 0
    if np.any(neg):
        worst = var < -VARIANCE_SLACK * np.maximum(1.0, psi)
        if np.any(worst):
            warnings.warn(
                f"{int(worst.sum())} predictive variance(s) below zero beyond rounding "
                f"(min {float(var.min()):.3e}); floored to 0",
                RuntimeWarning,
                stacklevel=3,
            )
        var = np.where(neg, 0.0, var)
    return var


def predict_batch(post: Posterior, k_star, psi0):
    """Posterior means (M x C) and variances (M,) for M test points at once."""
    k_star = np.atleast_2d(np.asarray(k_star, dtype=float))
    psi0 = np.atleast_1d(np.asarray(psi0, dtype=float))
    if k_star.shape[1] != post.n:
        raise ValueError(f"cross-covariance has {k_star.shape[1]} columns, expected {post.n}")
    if psi0.shape[0] != k_star.shape[0]:
        raise ValueError("one prior variance per test point required")
    mean = k_star @ post.alpha
    v = sla.solve_triangular(post.chol, k_star.T, lower=True)
    psi = psi0 + post.sigma_eps2
    var = psi - np.einsum("ij,ij->j", v, v)
    return mean, _floor_variance(var, psi)


def predict(post: Posterior, k_vec, psi0: float) -> PosteriorPredictive:
    if psi0 < 0:
        raise InvariantError(f"negative prior variance {psi0}")
    mean, var = predict_batch(post, np.asarray(k_vec, dtype=float)[None, :], [psi0])
    return PosteriorPredictive(mean[0], float(var[0]))


def log_marginal_likelihood(post: Posterior, targets) -> float:
    """log N(Y | 0, Psi) summed over the independent output channels."""
    y = _as_targets(targets, post.n)
    n, c = y.shape
    quad = float(np.sum(y * post.alpha))
    logdet = 2.0 * float(np.sum(np.log(np.diag(post.chol))))
    return -0.5 * quad - c * (0.5 * logdet + 0.5 * n * math.log(2 * math.pi))


def sample_prior(gram, n_samples: int, rng_seed=None) -> np.ndarray:
    """Draws from N(0, K) as rows of an (n_samples, N) matrix."""
    k = _as_matrix(gram)
    chol, _ = jitter_cholesky(k)
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((n_samples, k.shape[0]))
    return z @ chol.T
