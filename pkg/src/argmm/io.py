"""File formats: binary datasets, JSON models, CSV reports."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .ar_gmm import MODEL_SCHEMA, ArGmmModel
from .baselines import MIXTURE_SCHEMA, GaussianMixture
from .errors import ConfigError
from .estimation import EstimationReport
from .signal_model import ChannelDataset, ChannelModelConfig

DATASET_MAGIC = b"ARGMM-DATASET\n"
DATASET_SCHEMA = 1
CSV_HEADER = ("estimator", "M", "K", "N", "P", "snr_db", "nmse", "test_size", "seed", "wall_s", "status")


# -------------------------------------------------------------------- datasets
#
# Layout: magic line, one JSON header line, then little-endian float64 payload:
#   h     N*M interleaved (re, im)
#   lags  N*M interleaved (re, im)     if header["has_genie"]
#   angles N*P                          if header["has_angles"]
# Genie covariances are Hermitian Toeplitz, so only their first columns are stored.


def write_dataset(ds: ChannelDataset, path) -> None:
    path = Path(path)
    P = ds.angles.shape[1] if ds.angles is not None else (ds.cfg.P if ds.cfg else 0)
    header = {
        "schema_version": DATASET_SCHEMA,
        "M": ds.M,
        "N": ds.N,
        "P": P,
        "seed": ds.seed,
        "has_genie": ds.lags is not None,
        "has_angles": ds.angles is not None,
        "channel": ds.cfg.to_dict() if ds.cfg else None,
        "meta": ds.meta,
    }
    try:
        with open(path, "wb") as f:
            f.write(DATASET_MAGIC)
            f.write(json.dumps(header).encode() + b"\n")
            f.write(np.ascontiguousarray(ds.h, dtype="<c16").tobytes())
            if ds.lags is not None:
                f.write(np.ascontiguousarray(ds.lags, dtype="<c16").tobytes())
            if ds.angles is not None:
                f.write(np.ascontiguousarray(ds.angles, dtype="<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path) -> ChannelDataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if not raw.startswith(DATASET_MAGIC):
        raise ConfigError(f"{path} is not a dataset file")
    end = raw.index(b"\n", len(DATASET_MAGIC))
    header = json.loads(raw[len(DATASET_MAGIC) : end])
    if header.get("schema_version") != DATASET_SCHEMA:
        raise ConfigError(f"unsupported dataset schema {header.get('schema_version')}")
    N, M, P = header["N"], header["M"], header["P"]
    buf = memoryview(raw)[end + 1 :]
    offset = 0

    def take(count, dtype):
        nonlocal offset
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(buf):
            raise ConfigError(f"{path} is truncated")
        out = np.frombuffer(buf[offset : offset + nbytes], dtype=dtype).copy()
        offset += nbytes
        return out

    h = take(N * M, "<c16").reshape(N, M)
    lags = take(N * M, "<c16").reshape(N, M) if header["has_genie"] else None
    angles = take(N * P, "<f8").reshape(N, P) if header["has_angles"] else None
    if offset != len(buf):
        raise ConfigError(f"{path} has {len(buf) - offset} trailing bytes")
    cfg = header.get("channel")
    if cfg is not None:
        cfg = ChannelModelConfig(**cfg)
    return ChannelDataset(h=h, lags=lags, angles=angles, cfg=cfg, seed=header.get("seed"), meta=header.get("meta") or {})


# ---------------------------------------------------------------------- models


def save_model(model, path, **extra) -> None:
    doc = model.to_dict()
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc
    schema = doc.get("schema")
    if schema == MODEL_SCHEMA:
        return ArGmmModel.from_dict(doc)
    if schema == MIXTURE_SCHEMA:
        return GaussianMixture.from_dict(doc)
    raise ConfigError(f"{path}: unknown model schema {schema!r}")


# ------------------------------------------------------------------------- CSV


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def _sort_key(r: EstimationReport):
    return (r.estimator, r.M, r.K, r.N, r.P, r.snr_db, r.seed, r.test_size, r.status)


def emit_csv(reports, path) -> Path:
    """One row per report, sorted by the key columns, 12 significant digits."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in sorted(reports, key=_sort_key):
                w.writerow([_fmt(getattr(r, col)) for col in CSV_HEADER])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


def read_csv(path) -> list[EstimationReport]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                EstimationReport(
                    estimator=row["estimator"],
                    M=int(row["M"]),
                    K=int(row["K"]),
                    N=int(row["N"]),
                    P=int(row["P"]),
                    snr_db=float(row["snr_db"]),
                    nmse=float(row["nmse"]),
                    test_size=int(row["test_size"]),
                    seed=int(row["seed"]),
                    wall_s=float(row["wall_s"]),
                    status=row["status"],
                )
            )
    return out


TRIAL_HEADER = ("index", "orders", "lambdas", "nmse", "bic", "objective", "n_iter", "converged", "seed", "status")


def emit_trials_csv(trials, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for t in trials:
            w.writerow([
                t.index,
                " ".join(str(o) for o in t.orders),
                " ".join(_fmt(v) for v in t.lambdas),
                _fmt(t.nmse),
                _fmt(t.bic),
                _fmt(t.objective),
                t.n_iter,
                int(t.converged),
                t.seed,
                t.status,
            ])
    return path
