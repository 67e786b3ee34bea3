"""Python access to the shapdistill core library."""

import json

from . import _core
from ._core import (
    BridgeError,
    ConfigError,
    ContractError,
    DegenerateFitError,
    Error,
    IoError,
    NumericError,
    StageOrderError,
    config_hash,
    evaluate,
    load_policy,
    make_env,
    shapley_exact,
    shapley_sampled,
)

__all__ = [
    "BridgeError",
    "ConfigError",
    "ContractError",
    "DegenerateFitError",
    "Error",
    "IoError",
    "NumericError",
    "StageOrderError",
    "config_hash",
    "evaluate",
    "load_policy",
    "make_env",
    "run_stage",
    "shapley_exact",
    "shapley_sampled",
]


def run_stage(stage, config, out=None, seed=None):
    """Run one pipeline stage (or "pipeline" for all of them).

    Returns a list of dicts with keys ``stage``, ``summary`` (decoded JSON) and
    ``written`` (paths of the artifacts produced).
    """
    outcomes = _core.run_stage(stage, str(config), None if out is None else str(out), seed)
    for o in outcomes:
        o["summary"] = json.loads(o["summary"])
    return outcomes
