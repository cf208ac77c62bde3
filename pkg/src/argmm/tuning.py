"""Hyperparameter search over per-component AR orders and box-constraint decay factors.

A random search draws ``budget`` configurations, trains each on the training
split and scores it on a noisy validation split. :func:`local_refine` then
walks one coordinate at a time from the best trial and keeps only
improvements.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ar_gmm
from ._rng import derive_rng, derive_seed
from .ar_gmm import ConstraintSchedule, EmConfig
from .baselines import fit_full_gmm, mixture_log_likelihood
from .errors import ArgmmError, ConfigError
from .estimation import estimator_for, nmse
from .signal_model import add_noise

log = logging.getLogger(__name__)

OBJECTIVE_MODES = ("nmse", "bic", "weighted")
REFINE_INDEX_BASE = 1_000_000  # trial indices of refinement steps


@dataclass(frozen=True)
class SearchSpace:
    order_range: tuple[int, int] = (1, 12)
    lambda_range: tuple[float, float] = (0.3, 1.0)
    tie: str = "shared"  # "shared" | "per-component"

    def __post_init__(self):
        lo, hi = self.order_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid order range {self.order_range}")
        llo, lhi = self.lambda_range
        if not 0.0 < llo <= lhi <= 1.0:
            raise ConfigError(f"invalid lambda range {self.lambda_range}")
        if self.tie not in ("shared", "per-component"):
            raise ConfigError(f"unknown tie mode {self.tie!r}")

    def sample(self, K: int, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[float, ...]]:
        n = 1 if self.tie == "shared" else K
        orders = rng.integers(self.order_range[0], self.order_range[1] + 1, size=n)
        lambdas = rng.uniform(self.lambda_range[0], self.lambda_range[1], size=n)
        if n == 1:
            orders, lambdas = np.repeat(orders, K), np.repeat(lambdas, K)
        return tuple(int(o) for o in orders), tuple(float(v) for v in lambdas)

    def clip_order(self, order: int) -> int:
        return int(min(max(order, self.order_range[0]), self.order_range[1]))

    def clip_lambda(self, lam: float) -> float:
        return float(min(max(lam, self.lambda_range[0]), self.lambda_range[1]))


@dataclass(frozen=True)
class TrialResult:
    index: int
    orders: tuple[int, ...]
    lambdas: tuple[float, ...]
    nmse: float
    bic: float
    objective: float
    n_iter: int = 0
    converged: bool = False
    seed: int = 0
    status: str = "ok"


def objective(nmse_value: float, bic_value: float, mode: str = "nmse", *, bic_weight: float = 0.0, bic_reference: float = 1.0) -> float:
    """Scalar score to minimize.

    ``weighted`` returns ``nmse * (1 + bic_weight * bic / |bic_reference|)``.
    """
    if mode == "nmse":
        return float(nmse_value)
    if mode == "bic":
        return float(bic_value)
    if mode == "weighted":
        if bic_weight == 0.0:
            return float(nmse_value)
        return float(nmse_value) * (1.0 + bic_weight * float(bic_value) / abs(bic_reference))
    raise ConfigError(f"unknown objective mode {mode!r}")


@dataclass
class TrialRunner:
    """Trains and scores one configuration; counts every training it performs."""

    train: np.ndarray
    val_h: np.ndarray
    val_y: np.ndarray
    noise_var: float
    K: int
    em: EmConfig = field(default_factory=EmConfig)
    mode: str = "nmse"
    bic_weight: float = 0.0
    bic_reference: float = 1.0
    n_trainings: int = 0
    log: list[TrialResult] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in OBJECTIVE_MODES:
            raise ConfigError(f"unknown objective mode {self.mode!r}")

    def run(self, orders, lambdas, seed: int, index: int) -> TrialResult:
        self.n_trainings += 1
        try:
            model, trace = ar_gmm.fit(
                self.train, self.K, orders, ConstraintSchedule(tuple(lambdas)), replace(self.em, seed=seed)
            )
            err = nmse(estimator_for(model, self.noise_var).estimate(self.val_y), self.val_h)
            b = ar_gmm.bic(model, self.train)
            score = objective(err, b, self.mode, bic_weight=self.bic_weight, bic_reference=self.bic_reference)
            if not math.isfinite(score):
                raise FloatingPointError("non-finite objective")
            result = TrialResult(index, tuple(orders), tuple(lambdas), err, b, score, trace.n_iter, trace.converged, seed)
        except (ArgmmError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("trial %d failed: %s", index, exc)
            result = TrialResult(index, tuple(orders), tuple(lambdas), math.inf, math.inf, math.inf, seed=seed, status="failed")
        self.log.append(result)
        return result


def make_runner(
    data,
    K: int,
    seed: int,
    *,
    val_fraction: float = 0.2,
    snr_db: float = 10.0,
    em: EmConfig | None = None,
    mode: str = "nmse",
    bic_weight: float = 0.0,
) -> TrialRunner:
    """Seeded train/validation split plus noisy validation observations."""
    X = ar_gmm._as_array(data)
    N = X.shape[0]
    n_val = max(1, int(round(val_fraction * N)))
    if N - n_val < K:
        raise ConfigError(f"training split of {N - n_val} samples is smaller than K={K}")
    perm = derive_rng(seed, "tuning.split").permutation(N)
    val, train = X[perm[:n_val]], X[perm[n_val:]]
    obs = add_noise(val, snr_db, derive_rng(seed, "tuning.noise"))
    reference = 1.0
    if mode == "weighted" and bic_weight != 0.0:
        full, _ = fit_full_gmm(train, K, em)
        p = ar_gmm.parameter_count_full_gmm(K, X.shape[1])
        reference = -2.0 * mixture_log_likelihood(full, train) + p * math.log(train.shape[0])
    return TrialRunner(
        train, val, obs.y, obs.noise_var, K, em or EmConfig(), mode, bic_weight, reference
    )


def _trial_seed(seed: int, *tags) -> int:
    return int(derive_seed(seed, *tags).generate_state(1)[0])


def _sort(trials: list[TrialResult]) -> list[TrialResult]:
    return sorted(trials, key=lambda t: (t.objective, t.index))


def random_search(space: SearchSpace, budget: int, runner: TrialRunner, seed: int) -> list[TrialResult]:
    """Exactly ``budget`` trials, sorted by objective (ties broken by trial index)."""
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    trials = []
    for i in range(budget):
        rng = derive_rng(seed, "tuning.sample", i)
        orders, lambdas = space.sample(runner.K, rng)
        trials.append(runner.run(orders, lambdas, _trial_seed(seed, "tuning.trial", i), i))
    return _sort(trials)


def local_refine(best: TrialResult, steps: int, runner: TrialRunner, space: SearchSpace, seed: int) -> TrialResult:
    """Accept-if-better coordinate perturbation around ``best``.

    Each step moves one order by +-1 or multiplies one lambda by ``exp(u)``,
    ``u ~ U[-0.1, 0.1]``; in shared mode all components move together.
    """
    current = best
    K = len(best.orders)
    for step in range(steps):
        rng = derive_rng(seed, "tuning.refine", step)
        orders, lambdas = list(current.orders), list(current.lambdas)
        targets = range(K) if space.tie == "shared" else [int(rng.integers(K))]
        if rng.random() < 0.5:
            delta = 1 if rng.random() < 0.5 else -1
            for k in targets:
                orders[k] = space.clip_order(orders[k] + delta)
        else:
            factor = math.exp(rng.uniform(-0.1, 0.1))
            for k in targets:
                lambdas[k] = space.clip_lambda(lambdas[k] * factor)
        candidate = runner.run(orders, lambdas, current.seed, REFINE_INDEX_BASE + step)
        if candidate.objective < current.objective:
            current = candidate
    return current
