"""Autoregressive-parameterized Gaussian mixture priors for WSS channel estimation.

Public names are resolved on first access so that importing the package (and
running light CLI commands) does not load numpy and scipy.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "ArComponent": "ar_gmm",
    "ArGmmModel": "ar_gmm",
    "ConstraintSchedule": "ar_gmm",
    "EmConfig": "ar_gmm",
    "fit": "ar_gmm",
    "ArgmmError": "errors",
    "ConfigError": "errors",
    "DomainError": "errors",
    "NumericalError": "errors",
    "EstimationReport": "estimation",
    "nmse": "estimation",
    "ChannelDataset": "signal_model",
    "ChannelModelConfig": "signal_model",
    "add_noise": "signal_model",
    "generate_dataset": "signal_model",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(__all__))
