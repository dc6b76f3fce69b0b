"""Flat TOML experiment configs with preset inheritance."""

import hashlib
import json
import math
import sys

import tomli_w

from ._validation import ConfigError, check_choice, check_positive
from .estimators import MetaGradientEstimator
from .presets import DEFAULTS, PRESETS, preset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXTRA_KEYS = {"preset": "bandit-e", "oracle_mode": "enumeration"}


def _coerce(key, value, default):
    if isinstance(default, bool) or isinstance(value, bool):
        if not (isinstance(default, bool) and isinstance(value, bool)):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        if isinstance(default, float):
            return float(value)
        if value != int(value):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if type(value) is not type(default):
        raise ConfigError(f"{key} must be a {type(default).__name__}, got {value!r}")
    return value


def resolve(raw):
    """Merge a raw mapping over its preset, rejecting unknown keys."""
    known = set(DEFAULTS) | set(EXTRA_KEYS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    name = raw.get("preset", EXTRA_KEYS["preset"])
    cfg = preset(name)
    for k, v in EXTRA_KEYS.items():
        cfg.setdefault(k, v)
    for k, v in raw.items():
        base = cfg.get(k, DEFAULTS.get(k, EXTRA_KEYS.get(k)))
        cfg[k] = _coerce(k, v, base)
    validate(cfg)
    return cfg


def loads(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    return resolve(raw)


def load(path, overrides=None):
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from None
    raw.update(overrides or {})
    return resolve(raw)


def dumps(cfg):
    return tomli_w.dumps(dict(sorted(cfg.items())))


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def estimator_from(cfg):
    return MetaGradientEstimator(
        kind=cfg["kind"], lam=cfg["lam"], alpha=cfg["alpha"],
        truncation=cfg["truncation"] or None, hessian_mode=cfg["hessian_mode"],
        baseline=cfg["baseline"], sigma=cfg["sigma"], pairs=cfg["pairs"],
        standardize=cfg["standardize"], epsilon=cfg["epsilon"], crn=cfg["crn"])


def _numbers(value):
    if isinstance(value, list):
        for v in value:
            yield from _numbers(v)
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        yield value


def validate(cfg):
    """Check every numeric field before any computation starts."""
    for key, value in cfg.items():
        if not all(math.isfinite(v) for v in _numbers(value)):
            raise ConfigError(f"{key} must be finite, got {value!r}")
    check_choice(cfg["setting"], "setting", ("bandit", "grid", "bernoulli"))
    check_choice(cfg["preset"], "preset", tuple(PRESETS))
    check_choice(cfg["oracle_mode"], "oracle_mode", ("enumeration", "fd"))
    if cfg["truncation"] < 0:
        raise ConfigError("truncation must be >= 0 (0 means untruncated)")
    n_updates = cfg["lifetime"] - 1 if cfg["setting"] != "grid" else None
    estimator_from(cfg).validate(n_updates)
    for key in ("n_arms", "lifetime", "inner_batch", "parallel_runs", "eval_points",
                "estimator_samples", "bootstrap", "heatmap_cells", "heatmap_samples",
                "grid_size", "horizon", "flip_interval", "n_history", "net_hidden"):
        check_positive(cfg[key], key, integer=True)
    for key in ("truth_epsilon", "eval_spacing", "ema_half_life", "inner_lr"):
        check_positive(cfg[key], key)
    for key in ("outer_lr", "clip_norm", "noise_sd", "init_scale", "value_coef"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} must be non-negative")
    if cfg["outer_updates"] < 0 or cfg["truth_samples"] < 0 or cfg["checkpoint_every"] < 0:
        raise ConfigError("outer_updates, truth_samples and checkpoint_every must be >= 0")
    if not 0.0 <= cfg["gamma"] <= 1.0:
        raise ConfigError("gamma must lie in [0, 1]")
    if cfg["arm_low"] > cfg["arm_high"]:
        raise ConfigError("arm_low must not exceed arm_high")
    check_choice(cfg["optimizer"], "optimizer", ("sgd", "adam"))
    check_choice(cfg["coef_source"], "coef_source", ("net", "scalar"))
    return cfg
