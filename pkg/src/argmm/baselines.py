"""Reference mixtures and estimators: full / Toeplitz / circulant GMMs, LS, sample and genie LMMSE.

All mixtures are zero-mean. The three GMM variants share one EM loop and
differ only in how the weighted sample covariance of a component is turned
into a structured covariance. Because the Toeplitz projection is not the
constrained maximizer of the EM objective, every covariance update is
accepted only if it does not decrease the component's expected complete-data
log-likelihood; otherwise a step towards the previous covariance is
backtracked (a generalized EM step), which keeps the likelihood trace
monotone for every variant.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ._rng import derive_rng
from .ar_gmm import EmConfig, _as_array, parameter_count_full_gmm
from .errors import ConfigError, NumericalError
from .signal_model import NoisyObservation, hermitian_toeplitz

STRUCTURES = ("full", "toeplitz", "circulant", "sample")
MIXTURE_SCHEMA = "argmm/gaussian_mixture/1"
LOADING = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    M: int
    weights: np.ndarray
    covariances: np.ndarray
    structure: str = "full"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        C = np.asarray(self.covariances, dtype=complex)
        if C.ndim == 2:
            C = C[None]
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covariances", C)
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown structure {self.structure!r}")
        if C.shape != (w.size, self.M, self.M):
            raise ConfigError(f"covariance stack has shape {C.shape}, expected {(w.size, self.M, self.M)}")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights sum to {w.sum()}, expected 1")

    @property
    def K(self) -> int:
        return self.weights.size

    def to_dict(self) -> dict:
        return {
            "schema": MIXTURE_SCHEMA,
            "structure": self.structure,
            "M": self.M,
            "K": self.K,
            "weights": [float(w) for w in self.weights],
            "covariances": [[[[float(z.real), float(z.imag)] for z in row] for row in C] for C in self.covariances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GaussianMixture:
        if d.get("schema", MIXTURE_SCHEMA) != MIXTURE_SCHEMA:
            raise ConfigError(f"unsupported mixture schema {d.get('schema')!r}")
        C = np.array(d["covariances"], dtype=float)
        return cls(int(d["M"]), np.array(d["weights"]), C[..., 0] + 1j * C[..., 1], d["structure"])


@dataclass
class GmmTrace:
    log_likelihood: list[float] = field(default_factory=list)
    backtracked: list[int] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


# ------------------------------------------------------------- projections


def toeplitz_project(C: np.ndarray) -> np.ndarray:
    """Frobenius-nearest Hermitian Toeplitz matrix (average of each diagonal)."""
    C = np.asarray(C)
    M = C.shape[0]
    t = np.empty(M, dtype=complex)
    for lag in range(M):
        lower = np.diagonal(C, -lag)
        upper = np.diagonal(C, lag)
        t[lag] = (lower.sum() + np.conj(upper).sum()) / (2 * (M - lag))
    t[0] = t[0].real
    return hermitian_toeplitz(t)


@functools.lru_cache(maxsize=8)
def dft_matrix(M: int) -> np.ndarray:
    """Unitary DFT matrix ``F`` with ``F[m, n] = exp(-2 pi i m n / M) / sqrt(M)``."""
    return np.fft.fft(np.eye(M), axis=0, norm="ortho")


def circulant_from_spectrum(p: np.ndarray) -> np.ndarray:
    """``F diag(p) F^H``."""
    F = dft_matrix(np.size(p))
    return (F * np.asarray(p)) @ F.conj().T


def circulant_spectrum(C: np.ndarray) -> np.ndarray:
    """Diagonal of ``F^H C F``."""
    F = dft_matrix(C.shape[0])
    return np.real(np.einsum("mi,ij,jm->m", F.conj().T, C, F))


def circulant_project(C: np.ndarray) -> np.ndarray:
    """Frobenius-nearest circulant matrix diagonalized by the DFT."""
    return circulant_from_spectrum(circulant_spectrum(C))


# ------------------------------------------------------------------ EM core


def _log_densities(X: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    N, M = X.shape
    out = np.empty((N, covariances.shape[0]))
    for k, C in enumerate(covariances):
        try:
            L = linalg.cholesky(C, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"covariance of component {k} is not positive definite", component=k) from exc
        z = linalg.solve_triangular(L, X.T, lower=True)
        out[:, k] = -M * math.log(math.pi) - 2.0 * np.sum(np.log(np.diag(L).real)) - np.sum(np.abs(z) ** 2, axis=0)
    return out


def mixture_log_likelihood(mixture: GaussianMixture, data) -> float:
    X = _as_array(data)
    with np.errstate(divide="ignore"):
        joint = _log_densities(X, mixture.covariances) + np.log(mixture.weights)
    return float(np.sum(logsumexp(joint, axis=1)))


def _expected_ll(C: np.ndarray, S: np.ndarray) -> float:
    """``-(log det C + tr(C^-1 S))``, or ``-inf`` if ``C`` is not PD."""
    try:
        cf = linalg.cho_factor(C, lower=True)
    except linalg.LinAlgError:
        return -math.inf
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0]).real))
    return -(logdet + float(np.trace(linalg.cho_solve(cf, S)).real))


def _weighted_scatter(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    S = X.T @ (w[:, None] * X.conj()) / w.sum()
    return 0.5 * (S + S.conj().T)


def _structured_update(S: np.ndarray, X: np.ndarray, w: np.ndarray, structure: str) -> np.ndarray:
    M = S.shape[0]
    load = LOADING * float(np.trace(S).real) / M
    eye = np.eye(M)
    if structure == "full":
        return S + load * eye
    if structure == "toeplitz":
        C = toeplitz_project(S) + load * eye
        lam_min = float(np.linalg.eigvalsh(C)[0])
        if lam_min < 0:
            C = C + (load - lam_min) * eye
        return C
    if structure == "circulant":
        Fx = np.fft.ifft(X, axis=1, norm="ortho")  # rows are F^H x
        p = (w @ np.abs(Fx) ** 2) / w.sum()
        return circulant_from_spectrum(np.maximum(p, 1e-12) + load)
    raise ConfigError(f"unknown structure {structure!r}")


def _initial_responsibilities(N: int, K: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, "baselines.init")
    labels = rng.permutation(np.arange(N) % K)
    gamma = np.full((N, K), 0.1 / K)
    gamma[np.arange(N), labels] += 0.9
    return gamma


def _fit_structured(data, K: int, cfg: EmConfig | None, structure: str) -> tuple[GaussianMixture, GmmTrace]:
    X = _as_array(data)
    N, M = X.shape
    cfg = cfg or EmConfig()
    if K < 1 or K > N:
        raise ConfigError(f"need 1 <= K <= N, got K={K}, N={N}")

    def m_step(gamma, old):
        Nk = gamma.sum(axis=0)
        weights = Nk / Nk.sum()
        covs = np.empty((K, M, M), dtype=complex)
        n_back = 0
        for k in range(K):
            if Nk[k] < cfg.empty_threshold * N:
                covs[k] = old[k] if old is not None else np.eye(M)
                continue
            S = _weighted_scatter(X, gamma[:, k])
            C_new = _structured_update(S, X, gamma[:, k], structure)
            if old is not None:
                q_old = _expected_ll(old[k], S)
                if _expected_ll(C_new, S) < q_old:
                    n_back += 1
                    C_new = _backtrack(old[k], C_new, S, q_old)
            covs[k] = 0.5 * (C_new + C_new.conj().T)
        return weights, covs, n_back

    trace = GmmTrace()
    weights, covs, _ = m_step(_initial_responsibilities(N, K, cfg.seed), None)
    prev = None
    for it in range(cfg.max_iters):
        with np.errstate(divide="ignore"):
            joint = _log_densities(X, covs) + np.log(weights)
        norm = logsumexp(joint, axis=1, keepdims=True)
        ll = float(norm.sum())
        if not math.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}", iteration=it)
        trace.log_likelihood.append(ll)
        if prev is not None and abs(ll - prev) <= cfg.rel_tol * abs(prev):
            trace.converged = True
            break
        if it == cfg.max_iters - 1:
            break
        prev = ll
        gamma = np.exp(joint - norm)
        weights, covs, n_back = m_step(gamma, covs)
        trace.backtracked.append(n_back)
        trace.n_iter += 1
    return GaussianMixture(M, weights / weights.sum(), covs, structure), trace


def _backtrack(C_old, C_new, S, q_old, max_halvings: int = 30):
    t = 0.5
    for _ in range(max_halvings):
        C = C_old + t * (C_new - C_old)
        if _expected_ll(C, S) >= q_old:
            return C
        t *= 0.5
    return C_old


def fit_full_gmm(data, K: int, cfg: EmConfig | None = None) -> tuple[GaussianMixture, GmmTrace]:
    """Zero-mean complex GMM with full covariances and diagonal loading."""
    return _fit_structured(data, K, cfg, "full")


def fit_toeplitz_gmm(data, K: int, cfg: EmConfig | None = None) -> tuple[GaussianMixture, GmmTrace]:
    """GMM whose covariance updates are projected onto Hermitian Toeplitz matrices."""
    return _fit_structured(data, K, cfg, "toeplitz")


def fit_circulant_gmm(data, K: int, cfg: EmConfig | None = None) -> tuple[GaussianMixture, GmmTrace]:
    """GMM with DFT-diagonal covariances ``F diag(p_k) F^H``."""
    return _fit_structured(data, K, cfg, "circulant")


def gmm_parameter_count(mixture: GaussianMixture) -> int:
    return parameter_count_full_gmm(mixture.K, mixture.M)


# ---------------------------------------------------------------- estimators


def _y(y):
    return y.y if isinstance(y, NoisyObservation) else np.asarray(y, dtype=complex)


def ls_estimate(y):
    """Least squares for ``y = h + n`` is ``y`` itself."""
    return np.array(_y(y), copy=True)


def sample_covariance(data) -> np.ndarray:
    X = _as_array(data)
    return _weighted_scatter(X, np.ones(X.shape[0]))


def sample_covariance_model(data) -> GaussianMixture:
    X = _as_array(data)
    return GaussianMixture(X.shape[1], np.ones(1), sample_covariance(X)[None], "sample")


def lmmse(C: np.ndarray, y, noise_var: float) -> np.ndarray:
    """``C (C + noise_var I)^-1 y``, batched over leading axes of ``C`` and ``y``."""
    y = _y(y)
    C = np.asarray(C, dtype=complex)
    M = C.shape[-1]
    A = C + noise_var * np.eye(M)
    if C.ndim == 2:
        Y = np.atleast_2d(y)
        H = np.linalg.solve(A, Y.T)
        out = (C @ H).T
        return out[0] if np.ndim(y) == 1 else out
    x = np.linalg.solve(A, y[..., None])
    return (C @ x)[..., 0]


def sample_lmmse(data_train, y, noise_var: float) -> np.ndarray:
    """LMMSE with the sample covariance of the training data."""
    return lmmse(sample_covariance(data_train), y, noise_var)


def genie_lmmse(y, genie_cov, noise_var: float) -> np.ndarray:
    """LMMSE with the true per-sample covariance(s)."""
    return lmmse(genie_cov, y, noise_var)
