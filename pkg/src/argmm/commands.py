"""Command implementations that need the numerical stack.

Imported on demand by :mod:`argmm.cli` so that light commands start quickly.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

from . import ar_gmm, harness
from ._rng import derive_rng
from .cli import broadcast
from .config import ExperimentConfig, preset
from .errors import ConfigError
from .estimation import EstimationReport, estimator_for, nmse, nmse_stderr
from .io import emit_csv, emit_trials_csv, load_model, read_dataset, save_model, write_dataset
from .signal_model import add_noise, generate_dataset


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.with_(**changes) if changes else cfg


def cmd_generate(args, cfg) -> int:
    ds = generate_dataset(cfg.channel, args.N, cfg.seed, args.stream)
    write_dataset(ds, args.data_out)
    print(f"wrote {ds.N} samples (M={ds.M}) to {args.data_out}")
    return 0


def fit_model(name: str, data, K: int, cfg: ExperimentConfig, orders=None, lambdas=None):
    """Shared by the CLI and in-process pipelines so both train identically."""
    hyper = harness.ArHyperparameters.from_config(cfg)
    if orders is not None or lambdas is not None:
        hyper = harness.ArHyperparameters(
            tuple(orders) if orders else hyper.for_K(K).orders,
            tuple(lambdas) if lambdas else hyper.for_K(K).lambdas,
        )
    return harness.train_estimator(name, data, K, cfg, hyper)


def cmd_fit(args, cfg) -> int:
    ds = read_dataset(args.data)
    orders = broadcast(args.orders, args.K, "orders")
    lambdas = broadcast(args.lambdas, args.K, "lambdas")
    model = fit_model(args.estimator, ds.h, args.K, cfg, orders, lambdas)
    save_model(model, args.model_out, estimator=args.estimator, N=ds.N)
    print(f"wrote {args.estimator} model (K={args.K}) to {args.model_out}")
    return 0


def evaluate_model(model, ds, snrs, seed: int, name: str, n_train: int = 0) -> list[EstimationReport]:
    """NMSE of a trained model on a dataset, noise drawn from the ``("noise", snr)`` streams.

    Uses the same noise streams as the sweeps, so a model evaluated here on the
    sweep test set reproduces the corresponding sweep rows.
    """
    P = ds.angles.shape[1] if ds.angles is not None else (ds.cfg.P if ds.cfg else 0)
    reports = []
    for snr in snrs:
        obs = add_noise(ds.h, snr, derive_rng(seed, "noise", snr))
        h_hat = estimator_for(model, obs.noise_var).estimate(obs.y)
        reports.append(
            EstimationReport(name, ds.M, model.K, n_train, P, snr, nmse(h_hat, ds.h), ds.N, seed, nmse_se=nmse_stderr(h_hat, ds.h))
        )
    return reports


def cmd_estimate(args, cfg) -> int:
    model = load_model(args.model)
    ds = read_dataset(args.data)
    if model.M != ds.M:
        raise ConfigError(f"model dimension {model.M} does not match dataset dimension {ds.M}")
    doc = json.loads(Path(args.model).read_text())
    default_name = "ar_gmm" if isinstance(model, ar_gmm.ArGmmModel) else f"gmm_{model.structure}"
    name = args.name or doc.get("estimator", default_name)
    reports = evaluate_model(model, ds, args.snr or list(cfg.snr_db), cfg.seed, name, int(doc.get("N", 0)))
    path = emit_csv(reports, Path(cfg.out_dir) / "estimate.csv")
    for r in reports:
        print(f"{r.estimator} snr_db={r.snr_db:g} nmse={r.nmse:.12g}")
    print(f"wrote {path}")
    return 0


def cmd_sweep(args, cfg) -> int:
    cfg = preset(args.which, cfg)
    if args.tuned:
        cfg = cfg.with_(tuned_params=args.tuned)
    reports = harness.run_grid(cfg, threads=args.threads)
    path = emit_csv(reports, Path(cfg.out_dir) / f"sweep_{args.which}.csv")
    failed = sum(r.status != "ok" for r in reports)
    print(f"wrote {len(reports)} rows ({failed} failed) to {path}")
    return 0


def cmd_tune(args, cfg) -> int:
    changes = {k: v for k, v in (("budget", args.budget), ("steps", args.steps)) if v is not None}
    if changes:
        cfg = cfg.with_(tuning=replace(cfg.tuning, **changes))
    N = args.N or cfg.n_train[0]
    K = args.K or cfg.K[0]
    best, trials, n_train = harness.run_tuning(cfg, N, K)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.save_tuned(best, out / "tuned.json", N=N, K=K, trainings=n_train)
    emit_trials_csv(trials, out / "tune_trials.csv")
    print(f"best orders={list(best.orders)} lambdas={[round(v, 6) for v in best.lambdas]} "
          f"nmse={best.nmse:.6g} ({n_train} trainings); wrote {out / 'tuned.json'}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "tune": cmd_tune,
}
