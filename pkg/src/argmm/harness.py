"""Benchmark sweeps over SNR, number of components and training size.

Seed streams (all derived from ``cfg.seed``):

* ``"train"``: training channels; a size-``N`` set is a prefix of any larger one,
* ``"test"``: test channels, shared by every estimator and sweep point,
* ``("noise", snr)``: observation noise for each SNR, shared by every estimator,
* ``("fit", estimator, N, K)``: model initialization.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import ar_gmm, baselines
from ._rng import derive_rng, derive_seed
from .ar_gmm import ConstraintSchedule
from .config import ExperimentConfig
from .errors import ArgmmError, ConfigError
from .estimation import EstimationReport, estimator_for, nmse, nmse_stderr
from .signal_model import ChannelDataset, NoisyObservation, add_noise, generate_dataset
from .tuning import TrialResult, local_refine, make_runner, random_search

log = logging.getLogger(__name__)

K_INDEPENDENT = ("lmmse", "ls", "genie")
GENIE_CHUNK = 1000


def _seed_int(seed: int, *tags) -> int:
    return int(derive_seed(seed, *tags).generate_state(1)[0])


@dataclass(frozen=True)
class ArHyperparameters:
    orders: tuple[int, ...]
    lambdas: tuple[float, ...]

    def for_K(self, K: int) -> ArHyperparameters:
        if len(self.orders) == K and len(self.lambdas) == K:
            return self
        if len(set(self.orders)) == 1 and len(set(self.lambdas)) == 1:
            return ArHyperparameters(self.orders[:1] * K, self.lambdas[:1] * K)
        raise ConfigError(f"per-component hyperparameters for K={len(self.orders)} cannot be used with K={K}")

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> ArHyperparameters:
        if cfg.tuned_params:
            return load_tuned(cfg.tuned_params)
        return cls(cfg.ar_orders, cfg.ar_lambdas)


def save_tuned(result: TrialResult, path, **extra) -> None:
    doc = {"orders": list(result.orders), "lambdas": list(result.lambdas), "nmse": result.nmse,
           "bic": result.bic, "objective": result.objective, "seed": result.seed}
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_tuned(path) -> ArHyperparameters:
    try:
        doc = json.loads(Path(path).read_text())
        return ArHyperparameters(tuple(int(o) for o in doc["orders"]), tuple(float(v) for v in doc["lambdas"]))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read tuned parameters {path}: {exc}") from exc


# ------------------------------------------------------------------ training


def train_estimator(name: str, train: np.ndarray, K: int, cfg: ExperimentConfig, hyper: ArHyperparameters | None = None):
    """Fit the prior model behind one estimator; ``None`` for estimators without one."""
    N = train.shape[0]
    em = cfg.em.em_config(_seed_int(cfg.seed, "fit", name, N, K))
    if name == "ar_gmm":
        hp = (hyper or ArHyperparameters.from_config(cfg)).for_K(K)
        model, _ = ar_gmm.fit(train, K, hp.orders, ConstraintSchedule(hp.lambdas), em)
        return model
    if name == "gmm_full":
        return baselines.fit_full_gmm(train, K, em)[0]
    if name == "gmm_toeplitz":
        return baselines.fit_toeplitz_gmm(train, K, em)[0]
    if name == "gmm_circulant":
        return baselines.fit_circulant_gmm(train, K, em)[0]
    if name == "lmmse":
        return baselines.sample_covariance_model(train)
    if name in ("ls", "genie"):
        return None
    raise ConfigError(f"unknown estimator {name!r}")


def estimate(name: str, model, obs: NoisyObservation, test: ChannelDataset) -> np.ndarray:
    if name == "ls":
        return baselines.ls_estimate(obs)
    if name == "genie":
        out = np.empty_like(obs.y)
        for start in range(0, test.N, GENIE_CHUNK):
            idx = slice(start, start + GENIE_CHUNK)
            out[idx] = baselines.genie_lmmse(obs.y[idx], test.genie_covariances(idx), obs.noise_var)
        return out
    return estimator_for(model, obs.noise_var).estimate(obs.y)


# -------------------------------------------------------------------- sweeps


class SweepContext:
    """Shared data for a sweep: test set, noisy observations per SNR, training prefixes."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.test = generate_dataset(cfg.channel, cfg.test_size, cfg.seed, "test")
        self.obs = {snr: add_noise(self.test.h, snr, derive_rng(cfg.seed, "noise", snr)) for snr in cfg.snr_db}
        self._train = generate_dataset(cfg.channel, max(cfg.n_train), cfg.seed, "train")
        assert self._train.meta["stream"] != self.test.meta["stream"]

    def train(self, N: int) -> np.ndarray:
        return self._train.h[:N]


def _evaluate(name, N, K, ctx: SweepContext, hyper) -> list[EstimationReport]:
    cfg = ctx.cfg
    t0 = time.perf_counter()
    rows = []
    try:
        model = train_estimator(name, ctx.train(N), K, cfg, hyper)
        for snr in cfg.snr_db:
            obs = ctx.obs[snr]
            h_hat = estimate(name, model, obs, ctx.test)
            rows.append((snr, nmse(h_hat, ctx.test.h), nmse_stderr(h_hat, ctx.test.h), "ok"))
    except (ArgmmError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("estimator %s (N=%d, K=%d) failed: %s", name, N, K, exc)
        done = {r[0] for r in rows}
        rows += [(snr, math.nan, math.nan, "failed") for snr in cfg.snr_db if snr not in done]
    wall = time.perf_counter() - t0 if cfg.record_timings else 0.0
    return [
        EstimationReport(name, cfg.channel.M, K, N, cfg.channel.P, snr, value, cfg.test_size, cfg.seed, wall, status, se)
        for snr, value, se, status in rows
    ]


def run_grid(cfg: ExperimentConfig, threads: int = 1, hyper: ArHyperparameters | None = None) -> list[EstimationReport]:
    """Every estimator at every (N, K, SNR) point of the config.

    Each learned estimator is trained once per (N, K) and evaluated on the
    shared test set at all SNRs; K-independent estimators are evaluated once
    per N and reported for every K.
    """
    ctx = SweepContext(cfg)
    jobs = []
    for name in cfg.estimators:
        for N in cfg.n_train:
            Ks = cfg.K[:1] if name in K_INDEPENDENT else cfg.K
            jobs += [(name, N, K) for K in Ks]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: _evaluate(*job, ctx, hyper), jobs))
    else:
        results = [_evaluate(*job, ctx, hyper) for job in jobs]
    reports = []
    for (name, N, _), rows in zip(jobs, results):
        if name in K_INDEPENDENT:
            for K in cfg.K:
                reports += [_with_K(r, K) for r in rows]
        else:
            reports += rows
    return reports


def _with_K(r: EstimationReport, K: int) -> EstimationReport:
    return replace(r, K=K)


def run_snr_sweep(cfg: ExperimentConfig, threads: int = 1, hyper=None) -> list[EstimationReport]:
    _require_single(cfg, "n_train", "K")
    return run_grid(cfg, threads, hyper)


def run_k_sweep(cfg: ExperimentConfig, threads: int = 1, hyper=None) -> list[EstimationReport]:
    _require_single(cfg, "n_train", "snr_db")
    return run_grid(cfg, threads, hyper)


def run_n_sweep(cfg: ExperimentConfig, threads: int = 1, hyper=None) -> list[EstimationReport]:
    _require_single(cfg, "K", "snr_db")
    return run_grid(cfg, threads, hyper)


def _require_single(cfg: ExperimentConfig, *names) -> None:
    for name in names:
        if len(getattr(cfg, name)) != 1:
            raise ConfigError(f"this sweep needs a single value of {name}")


# -------------------------------------------------------------------- tuning


def run_tuning(cfg: ExperimentConfig, N: int, K: int) -> tuple[TrialResult, list[TrialResult], int]:
    """Random search plus local refinement on a training set of size ``N``.

    Returns ``(best, all_trials, n_trainings)``.
    """
    t = cfg.tuning
    train = generate_dataset(cfg.channel, N, cfg.seed, "train").h
    runner = make_runner(
        train, K, cfg.seed, val_fraction=t.val_fraction, snr_db=t.snr_db,
        em=cfg.em.em_config(cfg.seed), mode=t.objective, bic_weight=t.bic_weight,
    )
    space = t.space()
    trials = random_search(space, t.budget, runner, cfg.seed)
    best = local_refine(trials[0], t.steps, runner, space, cfg.seed)
    return best, list(runner.log), runner.n_trainings
