"""Gaussian mixture with autoregressive (AR) covariance parameterization.

Each component ``k`` is a stationary complex AR(w_k) process with coefficients
``a_k`` and innovation variance ``sigma2_k``. Training maximizes the likelihood
of ``x[c:]`` conditioned on the first ``c`` entries, where ``c`` is the largest
order in the mixture. Under that conditional likelihood the M-step for the
coefficients is a weighted least-squares problem, the variance update is a
weighted mean residual power and the weights are the usual ``N_k / N``.

After each coefficient update the magnitudes are clipped into the box
``|a_i| <= lambda_k**i``; the unconditional covariance of the component can then
be rebuilt either as a Toeplitz matrix of AR autocovariances or, for its
inverse, with the Gohberg-Semencul formula.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ._rng import complex_normal, derive_rng
from .errors import ConfigError, DomainError, NumericalError
from .counts import parameter_count_ar_gmm, parameter_count_full_gmm  # noqa: F401 (re-exported)
from .signal_model import ChannelDataset, ar_poles, hermitian_toeplitz, psd_factor

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
MODEL_SCHEMA = "argmm/ar_gmm/1"
_PROJECTION_SLACK = 8 * np.finfo(float).eps


def _as_array(data) -> np.ndarray:
    if isinstance(data, ChannelDataset):
        return data.h
    X = np.asarray(data, dtype=complex)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ConfigError(f"data must be an (N, M) array, got shape {X.shape}")
    return X


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class ConstraintSchedule:
    """Per-component box bounds ``|a_i| <= lambda_k**i`` for ``i = 1..w_k``.

    ``enabled=False`` turns the projection off entirely (bounds are infinite).
    """

    lambdas: tuple[float, ...]
    enabled: bool = True

    def __post_init__(self):
        lambdas = tuple(float(v) for v in self.lambdas)
        object.__setattr__(self, "lambdas", lambdas)
        if not lambdas:
            raise ConfigError("constraint schedule needs at least one lambda")
        for lam in lambdas:
            if not 0.0 < lam <= 1.0:
                raise ConfigError(f"lambda must lie in (0, 1], got {lam}")

    @classmethod
    def uniform(cls, lam: float, K: int) -> ConstraintSchedule:
        return cls(lambdas=(lam,) * K)

    @classmethod
    def disabled(cls, K: int) -> ConstraintSchedule:
        return cls(lambdas=(1.0,) * K, enabled=False)

    @property
    def K(self) -> int:
        return len(self.lambdas)

    def bounds(self, k: int, order: int) -> np.ndarray:
        if not self.enabled:
            return np.full(order, np.inf)
        return self.lambdas[k] ** np.arange(1, order + 1, dtype=float)

    def permuted(self, perm) -> ConstraintSchedule:
        return ConstraintSchedule(tuple(self.lambdas[p] for p in perm), self.enabled)


@dataclass(frozen=True, eq=False)
class ArComponent:
    coeffs: np.ndarray
    sigma2: float
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.atleast_1d(np.asarray(self.coeffs, dtype=complex)).ravel())
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def order(self) -> int:
        return self.coeffs.size


@dataclass(frozen=True, eq=False)
class ArGmmModel:
    M: int
    components: tuple[ArComponent, ...]
    constraints: ConstraintSchedule

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ConfigError("model needs at least one component")
        if self.constraints.K != len(self.components):
            raise ConfigError("constraint schedule and component count differ")
        for comp in self.components:
            if comp.order >= self.M:
                raise ConfigError(f"AR order {comp.order} must be < M={self.M}")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights sum to {total}, expected 1")

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(c.order for c in self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def cond_len(self) -> int:
        return max(self.orders)

    @functools.cached_property
    def covariances(self) -> np.ndarray:
        """Unconditional ``(K, M, M)`` Toeplitz covariances; computed once per model."""
        return np.stack([covariance_from_ar(c, self.M) for c in self.components])

    def permuted(self, perm) -> ArGmmModel:
        return ArGmmModel(self.M, tuple(self.components[p] for p in perm), self.constraints.permuted(perm))

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "M": self.M,
            "K": self.K,
            "constraints_enabled": self.constraints.enabled,
            "components": [
                {
                    "order": c.order,
                    "coeffs": [[float(z.real), float(z.imag)] for z in c.coeffs],
                    "sigma2": c.sigma2,
                    "weight": c.weight,
                    "lambda": lam,
                }
                for c, lam in zip(self.components, self.constraints.lambdas)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ArGmmModel:
        if d.get("schema", MODEL_SCHEMA) != MODEL_SCHEMA:
            raise ConfigError(f"unsupported model schema {d.get('schema')!r}")
        comps = []
        for c in d["components"]:
            coeffs = np.array([complex(re, im) for re, im in c["coeffs"]], dtype=complex)
            if coeffs.size != c["order"]:
                raise ConfigError("component order does not match coefficient count")
            comps.append(ArComponent(coeffs, c["sigma2"], c["weight"]))
        if len(comps) != d["K"]:
            raise ConfigError("K does not match the number of components")
        sched = ConstraintSchedule(
            tuple(c["lambda"] for c in d["components"]), enabled=d.get("constraints_enabled", True)
        )
        return cls(int(d["M"]), tuple(comps), sched)


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 500
    rel_tol: float = 1e-6
    ridge: float = 1e-10  # relative to trace(Gram) / order
    var_floor: float = VARIANCE_FLOOR
    init: str = "global"  # "global" | "samples"
    init_perturbation: float = 0.1
    seed: int = 0
    empty_threshold: float = 1e-6  # relative to N
    max_pole_radius: float = 0.999

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        for name in ("rel_tol", "var_floor", "empty_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if self.init not in ("global", "samples"):
            raise ConfigError(f"unknown init strategy {self.init!r}")
        if not 0.0 < self.max_pole_radius < 1.0:
            raise ConfigError("max_pole_radius must lie in (0, 1)")


@dataclass
class EmTrace:
    log_likelihood: list[float] = field(default_factory=list)
    clipped: list[int] = field(default_factory=list)
    stabilized: list[int] = field(default_factory=list)
    reinitialized: list[int] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    underflow_rows: int = 0

    @property
    def decreases(self) -> list[int]:
        ll = self.log_likelihood
        return [t for t in range(1, len(ll)) if ll[t] < ll[t - 1]]


@dataclass(frozen=True)
class Responsibilities:
    gamma: np.ndarray
    underflow_rows: int = 0
    log_likelihood: float = math.nan

    @property
    def Nk(self) -> np.ndarray:
        return self.gamma.sum(axis=0)


# ---------------------------------------------------------------- AR primitives


def regression_matrix(x, order: int, start: int | None = None) -> np.ndarray:
    """Matrix of past values; row ``r`` is ``[x[i-1], ..., x[i-order]]`` for target ``i = start + r``.

    ``start`` defaults to ``order``, which gives the ``M - order`` rows
    ``A[i, j] = x[i + order - 1 - j]``.
    """
    x = np.asarray(x)
    return regression_tensor(x[None, :], order, start)[0]


def regression_tensor(X: np.ndarray, order: int, start: int | None = None) -> np.ndarray:
    """Batched :func:`regression_matrix`, shape ``(N, M - start, order)``."""
    N, M = X.shape
    if start is None:
        start = order
    if not 0 <= order < M:
        raise ConfigError(f"AR order must satisfy 0 <= order < M (order={order}, M={M})")
    if not order <= start < M:
        raise ConfigError(f"conditioning length must satisfy order <= start < M (start={start})")
    A = np.empty((N, M - start, order), dtype=np.result_type(X.dtype, complex))
    for j in range(order):
        A[:, :, j] = X[:, start - 1 - j : M - 1 - j]
    return A


def predict(x, coeffs, start: int) -> np.ndarray:
    """One-step AR predictions ``sum_m a_m x[i-m]`` for ``i >= start``."""
    return regression_matrix(x, np.size(coeffs), start) @ np.asarray(coeffs)


def conditional_log_density(x, comp: ArComponent, cond_len: int | None = None) -> float:
    """``log CN(x[c:] | x[:c])`` under the AR component, with ``c = cond_len``."""
    x = np.asarray(x, dtype=complex)
    M = x.size
    if cond_len is None:
        cond_len = comp.order
    if cond_len < comp.order:
        raise ConfigError(f"cond_len={cond_len} is shorter than the AR order {comp.order}")
    if cond_len >= M:
        raise ConfigError(f"cond_len={cond_len} must be < M={M}")
    resid = x[cond_len:] - predict(x, comp.coeffs, cond_len)
    D = M - cond_len
    return float(-D * math.log(math.pi * comp.sigma2) - np.vdot(resid, resid).real / comp.sigma2)


def ar_autocovariance(a, sigma2: float, max_lag: int) -> np.ndarray:
    """Autocovariances ``r_l = E[x_{i+l} conj(x_i)]`` for ``l = 0..max_lag``.

    Solves the Yule-Walker equations for lags ``0..w`` as a real linear system
    (the ``r_{-l} = conj(r_l)`` symmetry is not complex-linear), then extends
    with the AR recursion.
    """
    a = np.asarray(a, dtype=complex).ravel()
    w = a.size
    poles = ar_poles(a)
    if poles.size and np.max(np.abs(poles)) >= 1.0:
        raise DomainError(f"AR coefficients are unstable (max |pole| = {np.max(np.abs(poles)):.6f})")
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")

    n = w + 1
    # r_j = T[j] @ z with z = [Re r_0..Re r_w, Im r_0..Im r_w]; negative lags conjugate.
    def T(j):
        row = np.zeros(2 * n, dtype=complex)
        row[abs(j)] = 1.0
        row[n + abs(j)] = 1j if j >= 0 else -1j
        return row

    rows, rhs = [], []
    for lag in range(n):
        e = T(lag) - sum(a[m - 1] * T(lag - m) for m in range(1, w + 1))
        rows.extend([e.real, e.imag])
        rhs.extend([sigma2 if lag == 0 else 0.0, 0.0])
    z = np.linalg.solve(np.array(rows), np.array(rhs))
    r = np.zeros(max(max_lag, w) + 1, dtype=complex)
    r[:n] = z[:n] + 1j * z[n:]
    r[0] = r[0].real
    for lag in range(n, r.size):
        r[lag] = np.dot(a, r[lag - 1 :: -1][:w])
    return r[: max_lag + 1]


def covariance_from_ar(comp: ArComponent, M: int) -> np.ndarray:
    """Hermitian Toeplitz covariance of ``M`` consecutive samples of the component's process."""
    return hermitian_toeplitz(ar_autocovariance(comp.coeffs, comp.sigma2, M - 1))


def gs_inverse_covariance(comp: ArComponent, M: int, var_floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """Inverse covariance via the Gohberg-Semencul formula.

    With ``alpha_0 = 1/sigma2`` and ``alpha_i = -a_i/sigma2``::

        Gamma = (B B^H - Z Z^H) / alpha_0

    where ``B`` and ``Z`` are lower-triangular Toeplitz with first columns
    ``[alpha_0, ..., alpha_w, 0, ..., 0]`` and the shifted reversed conjugate of
    the zero-padded generator, ``[0, 0, ..., 0, conj(alpha_w), ..., conj(alpha_1)]``.
    """
    if comp.sigma2 < var_floor:
        raise NumericalError(f"sigma2={comp.sigma2:.3e} is below the variance floor")
    w = comp.order
    if M <= w:
        raise ConfigError(f"M={M} must exceed the AR order {w}")
    alpha = np.concatenate(([1.0], -comp.coeffs)) / comp.sigma2
    b = np.zeros(M, dtype=complex)
    b[: w + 1] = alpha
    z = np.zeros(M, dtype=complex)
    z[M - w :] = np.conj(alpha[:0:-1])
    zeros = np.zeros(M, dtype=complex)
    B = linalg.toeplitz(b, zeros)
    Z = linalg.toeplitz(z, zeros)
    G = (B @ B.conj().T - Z @ Z.conj().T) / alpha[0]
    return 0.5 * (G + G.conj().T)


def project_coefficients(a, schedule: ConstraintSchedule, k: int) -> tuple[np.ndarray, int]:
    """Clip ``|a_i|`` to ``lambda_k**i`` keeping the phase; returns ``(a, n_clipped)``."""
    a = np.asarray(a, dtype=complex).copy()
    bounds = schedule.bounds(k, a.size)
    mag = np.abs(a)
    # a clipped value can land an ulp above its bound; the slack keeps the
    # projection exactly idempotent
    over = mag > bounds * (1.0 + _PROJECTION_SLACK)
    a[over] *= bounds[over] / mag[over]
    return a, int(np.count_nonzero(over))


def stabilize_coefficients(a, max_radius: float = 0.999) -> tuple[np.ndarray, bool]:
    """Pull all AR poles inside ``max_radius`` by scaling ``a_i`` with ``rho**i``.

    Scaling never increases any ``|a_i|``, so projected coefficients stay in the box.
    """
    a = np.asarray(a, dtype=complex)
    poles = ar_poles(a)
    if poles.size == 0:
        return a, False
    radius = float(np.max(np.abs(poles)))
    if radius <= max_radius:
        return a, False
    rho = max_radius / radius
    return a * rho ** np.arange(1, a.size + 1), True


# ----------------------------------------------------------------------- E-step


class _Design:
    """Per-order regression tensors and normal-equation pieces for a fixed dataset."""

    def __init__(self, X: np.ndarray, cond_len: int):
        self.X = X
        self.cond_len = cond_len
        self.target = X[:, cond_len:]
        self.D = X.shape[1] - cond_len
        self._cache: dict[int, tuple] = {}

    def get(self, order: int):
        if order not in self._cache:
            A = regression_tensor(self.X, order, self.cond_len)
            AhA = np.einsum("ndi,ndj->nij", A.conj(), A)
            Ahx = np.einsum("ndi,nd->ni", A.conj(), self.target)
            self._cache[order] = (A, AhA, Ahx)
        return self._cache[order]

    def residual(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.size == 0:
            return self.target
        A = self.get(coeffs.size)[0]
        return self.target - A @ coeffs

    def residual_power(self, coeffs) -> np.ndarray:
        r = self.residual(coeffs)
        return np.einsum("nd,nd->n", r.real, r.real) + np.einsum("nd,nd->n", r.imag, r.imag)


def _component_log_densities(model: ArGmmModel, design: _Design) -> np.ndarray:
    out = np.empty((design.X.shape[0], model.K))
    D = design.D
    for k, comp in enumerate(model.components):
        out[:, k] = -D * math.log(math.pi * comp.sigma2) - design.residual_power(comp.coeffs) / comp.sigma2
    return out


def component_log_densities(model: ArGmmModel, data) -> np.ndarray:
    """``(N, K)`` conditional log densities over the shared sub-vector ``x[cond_len:]``."""
    X = _as_array(data)
    return _component_log_densities(model, _Design(X, model.cond_len))


def _responsibilities(model: ArGmmModel, logdens: np.ndarray) -> Responsibilities:
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    joint = logdens + logw
    norm = logsumexp(joint, axis=1, keepdims=True)
    bad = ~np.isfinite(norm[:, 0])
    with np.errstate(invalid="ignore"):
        gamma = np.exp(joint - norm)
    n_bad = int(np.count_nonzero(bad))
    if n_bad:
        log.warning("%d samples underflowed for every component; using uniform responsibilities", n_bad)
        gamma[bad] = 1.0 / model.K
    gamma /= gamma.sum(axis=1, keepdims=True)
    ll = float(np.sum(norm[~bad, 0])) if not n_bad else -math.inf
    return Responsibilities(gamma=gamma, underflow_rows=n_bad, log_likelihood=ll)


def e_step(model: ArGmmModel, data) -> Responsibilities:
    """Posterior component probabilities, computed in the log domain."""
    X = _as_array(data)
    return _responsibilities(model, _component_log_densities(model, _Design(X, model.cond_len)))


def log_likelihood(model: ArGmmModel, data) -> float:
    """Sum over samples of ``log sum_k pi_k CN(x[c:] | x[:c]; k)``."""
    logdens = component_log_densities(model, data)
    with np.errstate(divide="ignore"):
        joint = logdens + np.log(model.weights)
    return float(np.sum(logsumexp(joint, axis=1)))


# ----------------------------------------------------------------------- M-step


def _solve_normal_equations(G: np.ndarray, b: np.ndarray, ridge: float, k: int | None) -> np.ndarray:
    order = G.shape[0]
    if order == 0:
        return np.zeros(0, dtype=complex)
    G = 0.5 * (G + G.conj().T)
    G = G + (ridge * np.trace(G).real / order) * np.eye(order)
    try:
        return linalg.solve(G, b, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular normal equations for component {k}", component=k) from exc


def _weighted_normal_equations(design: _Design, w: np.ndarray, order: int):
    _, AhA, Ahx = design.get(order)
    return np.einsum("n,nij->ij", w, AhA), w @ Ahx


def m_step_coefficients(data, gamma, k: int, order: int, *, cond_len: int | None = None, ridge: float = 1e-10):
    """Weighted least-squares AR coefficients for component ``k``.

    Solves ``(sum_n g_n A_n^H A_n + ridge I) a = sum_n g_n A_n^H x_n[c:]``.
    ``ridge`` is relative to ``trace(Gram) / order``.
    """
    X = _as_array(data)
    w = _gamma_column(gamma, k)
    if not w.sum() > 0:
        raise NumericalError(f"component {k} has zero total responsibility", component=k)
    design = _Design(X, order if cond_len is None else cond_len)
    G, b = _weighted_normal_equations(design, w, order)
    return _solve_normal_equations(G, b, ridge, k)


def m_step_variance(data, gamma, k: int, coeffs, *, cond_len: int | None = None, var_floor: float = VARIANCE_FLOOR) -> float:
    """Weighted mean residual power per dimension, floored."""
    X = _as_array(data)
    w = _gamma_column(gamma, k)
    coeffs = np.asarray(coeffs, dtype=complex)
    design = _Design(X, coeffs.size if cond_len is None else cond_len)
    return _variance(design, w, coeffs, var_floor)


def _variance(design: _Design, w: np.ndarray, coeffs, var_floor: float) -> float:
    Nk = w.sum()
    if not Nk > 0:
        raise NumericalError("zero total responsibility in variance update")
    return max(float(w @ design.residual_power(coeffs)) / (design.D * Nk), var_floor)


def m_step_weights(gamma) -> np.ndarray:
    """``pi_k = N_k / N``."""
    g = gamma.gamma if isinstance(gamma, Responsibilities) else np.asarray(gamma)
    Nk = g.sum(axis=0)
    return Nk / Nk.sum()


def _gamma_column(gamma, k: int) -> np.ndarray:
    g = gamma.gamma if isinstance(gamma, Responsibilities) else np.asarray(gamma, dtype=float)
    if g.ndim == 1:
        return g
    return g[:, k]


# ------------------------------------------------------------------ EM training


def _normalize_orders(orders, K: int) -> tuple[int, ...]:
    if np.isscalar(orders):
        return (int(orders),) * K
    orders = tuple(int(o) for o in orders)
    if len(orders) != K:
        raise ConfigError(f"expected {K} AR orders, got {len(orders)}")
    return orders


def _local_fit(design: _Design, rows, order: int, ridge: float, var_floor: float, k=None):
    w = np.zeros(design.X.shape[0])
    w[rows] = 1.0
    G, b = _weighted_normal_equations(design, w, order)
    a = _solve_normal_equations(G, b, max(ridge, 1e-10), k)
    return a, _variance(design, w, a, var_floor)


def _finalize_coeffs(a, schedule: ConstraintSchedule, k: int, cfg: EmConfig):
    a, clipped = project_coefficients(a, schedule, k)
    a, stabilized = stabilize_coefficients(a, cfg.max_pole_radius)
    return a, clipped, stabilized


def initialize(X: np.ndarray, K: int, orders: Sequence[int], schedule: ConstraintSchedule, cfg: EmConfig) -> ArGmmModel:
    """Initial model.

    ``"global"``: one unweighted least-squares fit per distinct order on all
    data, perturbed per component with complex Gaussian noise of relative
    scale ``cfg.init_perturbation``. ``"samples"``: each component is the
    local AR fit of a distinct randomly chosen training sample.
    """
    N, M = X.shape
    rng = derive_rng(cfg.seed, "ar_gmm.init")
    design = _Design(X, max(orders))
    comps = []
    if cfg.init == "global":
        everything = np.arange(N)
        fits = {o: _local_fit(design, everything, o, cfg.ridge, cfg.var_floor) for o in sorted(set(orders))}
        for k, o in enumerate(orders):
            a, s2 = fits[o]
            if o:
                scale = cfg.init_perturbation * max(float(np.sqrt(np.mean(np.abs(a) ** 2))), 1e-3)
                a = a + scale * complex_normal(rng, o)
            a, _, _ = _finalize_coeffs(a, schedule, k, cfg)
            comps.append(ArComponent(a, s2, 1.0 / K))
    else:
        picks = rng.choice(N, size=K, replace=K > N)
        for k, (o, n) in enumerate(zip(orders, picks)):
            a, s2 = _local_fit(design, [n], o, cfg.ridge, cfg.var_floor, k)
            a, _, _ = _finalize_coeffs(a, schedule, k, cfg)
            comps.append(ArComponent(a, _variance(design, _onehot(N, n), a, cfg.var_floor), 1.0 / K))
    return ArGmmModel(M, tuple(comps), schedule)


def _onehot(N: int, n: int) -> np.ndarray:
    w = np.zeros(N)
    w[n] = 1.0
    return w


def fit(
    data,
    K: int,
    orders,
    schedule: ConstraintSchedule | None = None,
    cfg: EmConfig | None = None,
    init: ArGmmModel | None = None,
) -> tuple[ArGmmModel, EmTrace]:
    """Train an AR-GMM by EM on the conditional log-likelihood.

    Returns the model whose log-likelihood was last recorded in the trace.
    """
    X = _as_array(data)
    N, M = X.shape
    cfg = cfg or EmConfig()
    if K < 1:
        raise ConfigError("K must be >= 1")
    if K > N:
        raise ConfigError(f"K={K} exceeds the number of samples N={N}")
    orders = _normalize_orders(orders, K)
    if any(not 0 <= o < M for o in orders):
        raise ConfigError(f"AR orders must satisfy 0 <= order < M={M}, got {orders}")
    if schedule is None:
        schedule = ConstraintSchedule.uniform(1.0, K)
    if schedule.K != K:
        raise ConfigError(f"constraint schedule has {schedule.K} components, expected {K}")

    if init is None:
        model = initialize(X, K, orders, schedule, cfg)
    else:
        if init.K != K or init.orders != orders or init.M != M:
            raise ConfigError("initial model does not match K, orders or M")
        model = init
        schedule = init.constraints

    design = _Design(X, max(orders))
    rng = derive_rng(cfg.seed, "ar_gmm.reinit")
    trace = EmTrace()
    prev = None
    for it in range(cfg.max_iters):
        resp = _responsibilities(model, _component_log_densities(model, design))
        ll = resp.log_likelihood
        trace.underflow_rows += resp.underflow_rows
        if not math.isfinite(ll):
            raise NumericalError(f"non-finite log-likelihood at iteration {it}", iteration=it)
        trace.log_likelihood.append(ll)
        if prev is not None and abs(ll - prev) <= cfg.rel_tol * abs(prev):
            trace.converged = True
            break
        if it == cfg.max_iters - 1:
            break
        prev = ll
        model = _m_step(model, design, resp, schedule, cfg, rng, trace)
        trace.n_iter += 1
    return model, trace


def _m_step(model, design, resp, schedule, cfg, rng, trace) -> ArGmmModel:
    N = design.X.shape[0]
    gamma = resp.gamma
    Nk = gamma.sum(axis=0)
    weights = Nk / Nk.sum()
    comps = []
    clipped = stabilized = reinit = 0
    for k, comp in enumerate(model.components):
        order = comp.order
        if Nk[k] < cfg.empty_threshold * N:
            n = int(rng.integers(N))
            a, _ = _local_fit(design, [n], order, cfg.ridge, cfg.var_floor, k)
            a, c, s = _finalize_coeffs(a, schedule, k, cfg)
            s2 = _variance(design, _onehot(N, n), a, cfg.var_floor)
            weights[k] = 1.0 / N
            reinit += 1
        else:
            G, b = _weighted_normal_equations(design, gamma[:, k], order)
            a = _solve_normal_equations(G, b, cfg.ridge, k)
            a, c, s = _finalize_coeffs(a, schedule, k, cfg)
            s2 = _variance(design, gamma[:, k], a, cfg.var_floor)
        clipped += c
        stabilized += int(s)
        comps.append((a, s2))
    weights = weights / weights.sum()
    trace.clipped.append(clipped)
    trace.stabilized.append(stabilized)
    trace.reinitialized.append(reinit)
    return ArGmmModel(model.M, tuple(ArComponent(a, s2, w) for (a, s2), w in zip(comps, weights)), schedule)


# ------------------------------------------------------------- scoring, sampling


def parameter_count(model: ArGmmModel) -> int:
    """Free real parameters of a trained model, see :func:`parameter_count_ar_gmm`."""
    return parameter_count_ar_gmm(model.orders)


def bic(model: ArGmmModel, data) -> float:
    X = _as_array(data)
    return -2.0 * log_likelihood(model, X) + parameter_count(model) * math.log(X.shape[0])


def sample(model: ArGmmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` vectors: ``k ~ pi`` then ``x ~ CN(0, C_k)``."""
    ks = rng.choice(model.K, size=n, p=model.weights)
    out = np.empty((n, model.M), dtype=complex)
    for k in range(model.K):
        idx = np.flatnonzero(ks == k)
        if idx.size:
            L = psd_factor(model.covariances[k])
            out[idx] = complex_normal(rng, (idx.size, model.M)) @ L.T
    return out


def with_weights(model: ArGmmModel, weights) -> ArGmmModel:
    comps = tuple(replace(c, weight=float(w)) for c, w in zip(model.components, weights))
    return ArGmmModel(model.M, comps, model.constraints)
