"""INI configuration with one section per subcommand and one per scenario.

Values are JSON literals where they parse as JSON (numbers, lists, booleans,
``null``) and plain strings otherwise. An empty value means "unset".
"""

from __future__ import annotations

import configparser
import io
import json
from pathlib import Path

from .experiments import SCENARIO_DEFAULTS

__all__ = ["DEFAULTS", "load_config", "render_config", "parse_value", "ConfigError"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, dict] = {
    "run": {"seed": None, "threads": 1},
    "estimate": {"method": "lse", "family": "normal", "c_star": 0.1, "input": None, "covariates": None},
    "adapt-ci": {
        "method": "lse",
        "family": None,
        "c_star": 0.1,
        "replicates": 500,
        "level": 0.1,
        "max_lag": 0,
        "include_draws": False,
        "input": None,
        "covariates": None,
    },
    "limitdist": {
        "regime": "b",
        "gamma_l": 1.0,
        "gamma_r": 1.0,
        "c1_sq": 0.0,
        "gamma_l_star": 0.0,
        "gamma_r_star": 0.0,
        "k0": [],
        "dep_cov": None,
        "step": None,
        "horizon": None,
        "replicates": 10000,
        "levels": [0.025, 0.05, 0.5, 0.95, 0.975],
        "refine": False,
        "include_draws": False,
    },
    "gen-data": {
        "family": None,
        "m": 10,
        "n": 200,
        "tau": 0.5,
        "pre": [0.0],
        "post": [1.0],
        "noise": "iid",
        "sigma": 1.0,
        "kernel": "geometric:0.5",
        "coeffs": "geometric:0.5",
        "covariate_dim": 1,
        "covariates_output": None,
    },
    "mc-study": {"scenario": "rate-lse"},
}
for _name, _params in SCENARIO_DEFAULTS.items():
    DEFAULTS[f"scenario:{_name}"] = dict(_params)


def parse_value(text: str):
    text = text.strip()
    if text == "":
        return None
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return json.dumps(value)


def load_config(path: str | Path | None = None) -> dict[str, dict]:
    """Defaults overlaid with the sections of ``path``; unknown keys are errors."""
    out = {k: dict(v) for k, v in DEFAULTS.items()}
    if path is None:
        return out
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for section in cp.sections():
        if section not in out:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in out[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            out[section][key] = parse_value(raw)
    return out


def render_config(cfg: dict[str, dict] | None = None) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    for section, values in (cfg or DEFAULTS).items():
        cp[section] = {k: _format(v) for k, v in values.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
