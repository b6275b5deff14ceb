"""Python bindings for the fedquant simulator core."""

import json

from ._fedquant import (
    FedquantError,
    check_conditions,
    estimate_range,
    kurtosis,
    make_spec,
    quantize,
    r_value,
    rescale_step,
)
from . import _fedquant

__version__ = "1.0.0"


def compute_bound(**inputs):
    """Evaluate the convergence bound; returns a dict (bound terms are None when the rate conditions fail)."""
    return json.loads(_fedquant.compute_bound(**inputs))


def default_config():
    return json.loads(_fedquant.default_config())


def run_experiment(config, overrides=(), threads=1):
    """Train and sweep one experiment config (dict or JSON text). Returns {"history": [...], "report": {...}}."""
    text = config if isinstance(config, str) else json.dumps(config)
    return json.loads(_fedquant.run_experiment(text, list(overrides), threads))


__all__ = [
    "FedquantError",
    "check_conditions",
    "compute_bound",
    "default_config",
    "estimate_range",
    "kurtosis",
    "make_spec",
    "quantize",
    "r_value",
    "rescale_step",
    "run_experiment",
]
