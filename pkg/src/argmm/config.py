"""Experiment configuration: a versioned JSON document, strictly validated."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .ar_gmm import EmConfig
from .errors import ConfigError
from .signal_model import ChannelModelConfig
from .tuning import OBJECTIVE_MODES, SearchSpace

SCHEMA_VERSION = 1
ESTIMATORS = ("ar_gmm", "gmm_full", "gmm_toeplitz", "gmm_circulant", "lmmse", "ls", "genie")
FIG1_SNRS = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)


@dataclass(frozen=True)
class EmSettings:
    max_iters: int = 500
    rel_tol: float = 1e-6
    init: str = "global"

    def em_config(self, seed: int) -> EmConfig:
        return EmConfig(max_iters=self.max_iters, rel_tol=self.rel_tol, init=self.init, seed=seed)


@dataclass(frozen=True)
class TuningSettings:
    budget: int = 100
    steps: int = 20
    order_range: tuple[int, int] = (1, 12)
    lambda_range: tuple[float, float] = (0.3, 1.0)
    tie: str = "shared"
    objective: str = "nmse"
    bic_weight: float = 0.0
    val_fraction: float = 0.2
    snr_db: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "order_range", tuple(int(v) for v in self.order_range))
        object.__setattr__(self, "lambda_range", tuple(float(v) for v in self.lambda_range))
        if self.budget < 1 or self.steps < 0:
            raise ConfigError("tuning budget must be >= 1 and steps >= 0")
        if self.objective not in OBJECTIVE_MODES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        self.space()

    def space(self) -> SearchSpace:
        return SearchSpace(self.order_range, self.lambda_range, self.tie)


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelModelConfig = field(default_factory=ChannelModelConfig)
    n_train: tuple[int, ...] = (100,)
    K: tuple[int, ...] = (16,)
    snr_db: tuple[float, ...] = FIG1_SNRS
    estimators: tuple[str, ...] = ESTIMATORS
    test_size: int = 10_000
    seed: int = 0
    ar_orders: tuple[int, ...] = (4,)
    ar_lambdas: tuple[float, ...] = (0.85,)
    tuned_params: str | None = None
    em: EmSettings = field(default_factory=EmSettings)
    tuning: TuningSettings = field(default_factory=TuningSettings)
    out_dir: str = "results"
    record_timings: bool = False
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for name, cast in (("n_train", int), ("K", int), ("snr_db", float), ("estimators", str),
                           ("ar_orders", int), ("ar_lambdas", float)):
            value = getattr(self, name)
            if isinstance(value, (int, float, str)):
                value = (value,)
            value = tuple(cast(v) for v in value)
            if not value:
                raise ConfigError(f"{name} must be non-empty")
            object.__setattr__(self, name, value)
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigError(f"unknown estimators {sorted(unknown)}")
        if any(n < 1 for n in self.n_train) or any(k < 1 for k in self.K):
            raise ConfigError("n_train and K entries must be >= 1")
        if self.test_size < 1:
            raise ConfigError("test_size must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    # ------------------------------------------------------------ (de)serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel"] = self.channel.to_dict()
        return _lists(d)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        _reject_unknown(cls, d, "experiment config")
        if "channel" in d:
            _reject_unknown(ChannelModelConfig, d["channel"], "channel")
            d["channel"] = ChannelModelConfig(**d["channel"])
        if "em" in d:
            _reject_unknown(EmSettings, d["em"], "em")
            d["em"] = EmSettings(**d["em"])
        if "tuning" in d:
            _reject_unknown(TuningSettings, d["tuning"], "tuning")
            d["tuning"] = TuningSettings(**d["tuning"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def with_(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)


def _reject_unknown(cls, d: dict, what: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{what} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {what}: {sorted(unknown)}")


def _lists(obj):
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def preset(name: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Sweep axes of the three reference experiments on top of ``base``."""
    base = base or ExperimentConfig()
    if name == "fig1a":
        return base.with_(n_train=(100,), K=(16,), snr_db=FIG1_SNRS)
    if name == "fig1b":
        return base.with_(n_train=(100,), K=(1, 2, 4, 8, 16, 32), snr_db=(10.0,))
    if name == "fig1c":
        return base.with_(n_train=(100, 1000, 10_000), K=(16,), snr_db=(10.0,))
    if name == "custom":
        return base
    raise ConfigError(f"unknown sweep preset {name!r}")
