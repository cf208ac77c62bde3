"""Synthetic complex WSS data: multipath ULA channels, AR processes, noisy observations.

The channel generator is conditionally Gaussian: each sample draws ``P`` path
angles, builds the covariance implied by a Laplacian power angular spectrum
around each path and then draws ``h ~ CN(0, C)``. Covariances of a uniform
linear array with a stationary angular spectrum are Hermitian Toeplitz, so a
dataset stores only the first column ("lags") of each per-sample covariance.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._rng import complex_normal, derive_rng
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class ChannelModelConfig:
    M: int = 64
    P: int = 1
    angle_spread_deg: float = 2.0
    angle_range_deg: tuple[float, float] = (-60.0, 60.0)
    pas_grid_points: int = 3600
    antenna_spacing: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "angle_range_deg", tuple(float(v) for v in self.angle_range_deg))
        if self.M < 1 or self.P < 1:
            raise ConfigError(f"M and P must be >= 1, got M={self.M}, P={self.P}")
        if not self.angle_spread_deg > 0:
            raise ConfigError(f"angle_spread_deg must be positive, got {self.angle_spread_deg}")
        lo, hi = self.angle_range_deg
        if not (-90.0 <= lo <= hi <= 90.0):
            raise ConfigError(f"angle_range_deg must satisfy -90 <= lo <= hi <= 90, got {self.angle_range_deg}")
        if self.pas_grid_points < 16:
            raise ConfigError(f"pas_grid_points must be >= 16, got {self.pas_grid_points}")
        if not self.antenna_spacing > 0:
            raise ConfigError(f"antenna_spacing must be positive, got {self.antenna_spacing}")

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "P": self.P,
            "angle_spread_deg": self.angle_spread_deg,
            "angle_range_deg": list(self.angle_range_deg),
            "pas_grid_points": self.pas_grid_points,
            "antenna_spacing": self.antenna_spacing,
        }


@dataclass(frozen=True)
class ChannelSample:
    h: np.ndarray
    genie_cov: np.ndarray


@dataclass(frozen=True)
class NoisyObservation:
    y: np.ndarray
    noise_var: float
    snr_db: float


@dataclass(frozen=True, eq=False)
class ChannelDataset:
    """``N`` channel vectors plus the generation record needed for genie estimation.

    ``lags[n]`` is the first column of the Hermitian Toeplitz genie covariance
    of sample ``n``; it is ``None`` for datasets that carry no genie record
    (e.g. AR-process data or files stored without it).
    """

    h: np.ndarray
    lags: np.ndarray | None = None
    angles: np.ndarray | None = None
    cfg: ChannelModelConfig | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        if h.ndim != 2:
            raise ConfigError(f"dataset must be an (N, M) array, got shape {h.shape}")
        object.__setattr__(self, "h", h)
        if self.lags is not None and np.shape(self.lags) != h.shape:
            raise ConfigError("lags must have the same shape as h")

    @property
    def N(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.h.shape[1]

    def __len__(self) -> int:
        return self.N

    def __getitem__(self, n: int) -> ChannelSample:
        return ChannelSample(h=self.h[n], genie_cov=self.genie_cov(n))

    @property
    def has_genie(self) -> bool:
        return self.lags is not None

    def genie_cov(self, n: int) -> np.ndarray:
        if self.lags is None:
            raise ConfigError("dataset carries no genie covariances")
        return hermitian_toeplitz(self.lags[n])

    def genie_covariances(self, idx=slice(None)) -> np.ndarray:
        """Stacked genie covariances ``(n, M, M)`` for the selected samples."""
        if self.lags is None:
            raise ConfigError("dataset carries no genie covariances")
        lags = np.atleast_2d(self.lags[idx])
        M = lags.shape[1]
        i, j = np.indices((M, M))
        d = i - j
        out = lags[:, np.abs(d)]
        upper = d < 0
        out[:, upper] = np.conj(out[:, upper])
        return out

    def subset(self, idx) -> ChannelDataset:
        return ChannelDataset(
            h=self.h[idx],
            lags=None if self.lags is None else self.lags[idx],
            angles=None if self.angles is None else self.angles[idx],
            cfg=self.cfg,
            seed=self.seed,
            meta=dict(self.meta),
        )


def hermitian_toeplitz(first_col) -> np.ndarray:
    """Hermitian Toeplitz matrix with ``C[i, j] = r[i - j]`` and ``r[-l] = conj(r[l])``."""
    r = np.asarray(first_col)
    return linalg.toeplitz(r, np.conj(r))


def sample_path_angles(P: int, rng: np.random.Generator, cfg: ChannelModelConfig) -> np.ndarray:
    """Uniform path angles (radians) over ``cfg.angle_range_deg``."""
    if P < 1:
        raise ConfigError(f"P must be >= 1, got {P}")
    lo, hi = np.deg2rad(cfg.angle_range_deg)
    return rng.uniform(lo, hi, size=P)


@functools.lru_cache(maxsize=8)
def _pas_grid(cfg: ChannelModelConfig):
    G = cfg.pas_grid_points
    dtheta = math.pi / G
    theta = -math.pi / 2 + dtheta * (np.arange(G) + 0.5)
    m = np.arange(cfg.M)
    steering = np.exp(2j * np.pi * cfg.antenna_spacing * np.outer(np.sin(theta), m))
    return theta, dtheta, steering


def laplacian_pas(theta: np.ndarray, center: float, spread: float) -> np.ndarray:
    """Laplacian density with standard deviation ``spread`` (radians)."""
    b = spread / math.sqrt(2.0)
    return np.exp(-np.abs(theta - center) / b) / (2.0 * b)


def genie_lags(angles, cfg: ChannelModelConfig) -> np.ndarray:
    """First column of the trace-normalized genie covariance for the given path angles."""
    theta, dtheta, steering = _pas_grid(cfg)
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    spread = np.deg2rad(cfg.angle_spread_deg)
    weights = np.zeros_like(theta)
    for delta in angles:
        weights += laplacian_pas(theta, delta, spread) * dtheta / len(angles)
    r = weights @ steering
    r0 = r[0].real
    if not r0 > 0:
        raise DomainError("power angular spectrum carries no power on the integration grid")
    return r / r0


def build_genie_covariance(angles, cfg: ChannelModelConfig) -> np.ndarray:
    """Hermitian PSD genie covariance with trace ``M``."""
    return hermitian_toeplitz(genie_lags(angles, cfg))


def psd_factor(C: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Return ``L`` with ``L @ L^H = C``; Cholesky first, clipped eigendecomposition as fallback."""
    C = np.asarray(C)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(0.5 * (C + C.conj().T))
    scale = max(float(np.trace(C).real), np.finfo(float).tiny)
    if w[0] < -tol * scale:
        raise DomainError(f"covariance is not PSD (min eigenvalue {w[0]:.3e})")
    return U * np.sqrt(np.clip(w, 0.0, None))


def draw_channel(C: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``h ~ CN(0, C)``."""
    L = psd_factor(C)
    return L @ complex_normal(rng, C.shape[0])


def generate_dataset(cfg: ChannelModelConfig, N: int, seed: int, stream: str = "channel") -> ChannelDataset:
    """Generate ``N`` independent channel samples.

    Sample ``n`` draws from its own stream ``(seed, stream, n)``, so a dataset of
    size ``N`` is a prefix of any larger dataset with the same seed.
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    h = np.empty((N, cfg.M), dtype=complex)
    lags = np.empty((N, cfg.M), dtype=complex)
    angles = np.empty((N, cfg.P))
    for n in range(N):
        rng = derive_rng(seed, stream, n)
        angles[n] = sample_path_angles(cfg.P, rng, cfg)
        lags[n] = genie_lags(angles[n], cfg)
        h[n] = draw_channel(hermitian_toeplitz(lags[n]), rng)
    return ChannelDataset(h=h, lags=lags, angles=angles, cfg=cfg, seed=seed, meta={"stream": stream})


def noise_variance(snr_db: float) -> float:
    """Per-entry noise variance for unit average per-antenna channel power."""
    return 10.0 ** (-float(snr_db) / 10.0)


def add_noise(h: np.ndarray, snr_db: float, rng: np.random.Generator) -> NoisyObservation:
    """Return ``y = h + n`` with white ``n`` at the given SNR; ``snr_db=inf`` gives ``y = h``."""
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ConfigError(f"invalid snr_db {snr_db}")
    h = np.asarray(h, dtype=complex)
    if snr_db == math.inf:
        return NoisyObservation(y=h.copy(), noise_var=0.0, snr_db=snr_db)
    nv = noise_variance(snr_db)
    y = h + math.sqrt(nv) * complex_normal(rng, h.shape)
    return NoisyObservation(y=y, noise_var=nv, snr_db=float(snr_db))


def ar_poles(a) -> np.ndarray:
    """Roots of ``z^w - a_1 z^(w-1) - ... - a_w``."""
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return np.zeros(0, dtype=complex)
    return np.roots(np.concatenate(([1.0], -a)))


def is_stable(a, margin: float = 0.0) -> bool:
    poles = ar_poles(a)
    return poles.size == 0 or bool(np.max(np.abs(poles)) < 1.0 - margin)


def sample_ar_process(a, sigma2: float, M: int, rng: np.random.Generator, burn_in: int | None = None) -> np.ndarray:
    """Draw ``M`` consecutive samples of a stationary complex AR process."""
    a = np.asarray(a, dtype=complex)
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    poles = ar_poles(a)
    rho = float(np.max(np.abs(poles))) if poles.size else 0.0
    if rho >= 1.0:
        raise DomainError(f"AR coefficients are unstable (max |pole| = {rho:.6f})")
    if burn_in is None:
        burn_in = max(1000, math.ceil(10 * a.size / (1.0 - rho)))
    from scipy.signal import lfilter  # heavy import, only needed here

    eps = math.sqrt(sigma2) * complex_normal(rng, burn_in + M)
    x = lfilter([1.0], np.concatenate(([1.0], -a)), eps)
    return x[burn_in:]
