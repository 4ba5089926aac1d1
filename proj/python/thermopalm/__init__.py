"""Python bindings for the thermopalm core library."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import run_session_json, validate_config_json


def run_session(config: dict) -> dict:
    """Run a simulated session from a config dict; returns the summary."""
    cfg = dict(config)
    cfg.setdefault("schema", 1)
    return _json.loads(run_session_json(_json.dumps(cfg)))


def validate_config(config: dict) -> dict:
    """Return the config with defaults filled in; raises ValidationErrors."""
    cfg = dict(config)
    cfg.setdefault("schema", 1)
    return _json.loads(validate_config_json(_json.dumps(cfg)))
