"""Channel estimation from ``y = h + n`` with Gaussian-mixture priors, and NMSE scoring.

The mixture estimator weights the per-component LMMSE estimates
``C_k (C_k + s2 I)^-1 y`` with the posterior of each component given ``y``.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import ConfigError

_ESTIMATOR_CACHE: "weakref.WeakKeyDictionary[object, dict[float, MixtureLmmseEstimator]]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True)
class EstimationReport:
    estimator: str
    M: int
    K: int
    N: int
    P: int
    snr_db: float
    nmse: float
    test_size: int
    seed: int
    wall_s: float = 0.0
    status: str = "ok"
    # Monte Carlo standard error of ``nmse``; kept in memory only, not a CSV column.
    nmse_se: float = math.nan

    def __post_init__(self):
        if self.status == "ok" and not (math.isfinite(self.nmse) and self.nmse >= 0):
            raise ConfigError(f"nmse must be finite and >= 0, got {self.nmse}")

    @property
    def key(self) -> tuple:
        return (self.estimator, self.M, self.K, self.N, self.P, self.snr_db)


class MixtureLmmseEstimator:
    """Posterior-weighted LMMSE estimator for a zero-mean Gaussian mixture prior.

    Factorizations of ``C_k + noise_var I`` and the filters ``W_k`` are built once
    at construction and reused for every observation.
    """

    def __init__(self, covariances, weights, noise_var: float):
        C = np.asarray(covariances, dtype=complex)
        if C.ndim == 2:
            C = C[None]
        K, M, _ = C.shape
        weights = np.asarray(weights, dtype=float).ravel()
        if weights.size != K:
            raise ConfigError(f"{weights.size} weights for {K} covariances")
        if noise_var < 0:
            raise ConfigError("noise_var must be non-negative")
        self.K, self.M, self.noise_var = K, M, float(noise_var)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(weights / weights.sum())
        eye = np.eye(M)
        self._chol = np.empty_like(C)
        self._logdet = np.empty(K)
        self._filters = np.empty_like(C)
        for k in range(K):
            Ck = 0.5 * (C[k] + C[k].conj().T)
            A = Ck + self.noise_var * eye
            L = linalg.cholesky(A, lower=True)
            self._chol[k] = L
            self._logdet[k] = 2.0 * np.sum(np.log(np.diag(L).real))
            # W = C A^-1 = (A^-1 C)^H since both are Hermitian
            self._filters[k] = linalg.cho_solve((L, True), Ck).conj().T

    def log_evidence(self, Y) -> np.ndarray:
        """``(N, K)`` matrix of ``log CN(y; 0, C_k + noise_var I)``."""
        Y = np.atleast_2d(np.asarray(Y, dtype=complex))
        out = np.empty((Y.shape[0], self.K))
        for k in range(self.K):
            z = linalg.solve_triangular(self._chol[k], Y.T, lower=True)
            out[:, k] = -self.M * math.log(math.pi) - self._logdet[k] - np.sum(np.abs(z) ** 2, axis=0)
        return out

    def posteriors(self, Y) -> np.ndarray:
        joint = self.log_evidence(Y) + self.log_weights
        norm = logsumexp(joint, axis=1, keepdims=True)
        post = np.exp(joint - norm)
        bad = ~np.isfinite(norm[:, 0])
        if np.any(bad):
            post[bad] = 1.0 / self.K
        return post / post.sum(axis=1, keepdims=True)

    def estimate(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=complex)
        single = Y.ndim == 1
        Y = np.atleast_2d(Y)
        post = self.posteriors(Y) if self.K > 1 else np.ones((Y.shape[0], 1))
        H = np.zeros_like(Y)
        for k in range(self.K):
            H += post[:, k, None] * (Y @ self._filters[k].T)
        return H[0] if single else H


def estimator_for(model, noise_var: float) -> MixtureLmmseEstimator:
    """Cached :class:`MixtureLmmseEstimator` for any model exposing ``covariances`` and ``weights``."""
    per_model = _ESTIMATOR_CACHE.setdefault(model, {})
    key = float(noise_var)
    if key not in per_model:
        per_model[key] = MixtureLmmseEstimator(model.covariances, model.weights, key)
    return per_model[key]


def gmm_posteriors_noisy(covariances, weights, y, noise_var: float) -> np.ndarray:
    """Posterior component weights given noisy observation(s) ``y``."""
    post = MixtureLmmseEstimator(covariances, weights, noise_var).posteriors(y)
    return post[0] if np.ndim(y) == 1 else post


def gmm_channel_estimate(covariances, weights, y, noise_var: float) -> np.ndarray:
    """``sum_k p(k | y) C_k (C_k + noise_var I)^-1 y``."""
    return MixtureLmmseEstimator(covariances, weights, noise_var).estimate(y)


def ar_gmm_covariances(model) -> np.ndarray:
    """Unconditional component covariances of a trained AR-GMM (cached on the model)."""
    return model.covariances


def _check_pairs(estimates, truths):
    H_hat = np.atleast_2d(np.asarray(estimates, dtype=complex))
    H = np.atleast_2d(np.asarray(truths, dtype=complex))
    if H.size == 0:
        raise ConfigError("nmse of an empty set is undefined")
    if H_hat.shape != H.shape:
        raise ConfigError(f"shape mismatch: {H_hat.shape} vs {H.shape}")
    return H_hat, H


def nmse(estimates, truths) -> float:
    """``sum_n |h_n - h_hat_n|^2 / sum_n |h_n|^2``."""
    H_hat, H = _check_pairs(estimates, truths)
    return float(np.sum(np.abs(H - H_hat) ** 2) / np.sum(np.abs(H) ** 2))


def nmse_stderr(estimates, truths) -> float:
    """Delta-method standard error of :func:`nmse` (a ratio of sample means)."""
    H_hat, H = _check_pairs(estimates, truths)
    err = np.sum(np.abs(H - H_hat) ** 2, axis=1)
    energy = np.sum(np.abs(H) ** 2, axis=1)
    n = err.size
    if n < 2:
        return math.inf
    ratio = err.sum() / energy.sum()
    resid = err - ratio * energy
    return float(np.std(resid, ddof=1) / (math.sqrt(n) * energy.mean()))
