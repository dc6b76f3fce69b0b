"""Named experiment presets.

A preset is a flat dict of configuration keys. User configs name a preset and
override individual keys; every key a config may set appears in ``DEFAULTS``.
"""

import copy

from ._validation import ConfigError

DEFAULTS = {
    "experiment_id": "run",
    "setting": "bandit",
    "seed": 0,
    # estimator
    "kind": "sampling_corrected",
    "lam": 1.0,
    "alpha": 1.0,
    "truncation": 0,            # 0 means untruncated
    "hessian_mode": "sampled",
    "baseline": "none",
    "sigma": 0.1,
    "pairs": 1,
    "standardize": True,
    "epsilon": 1e-2,
    "crn": True,
    # bandit
    "n_arms": 30,
    "arm_low": -100.0,
    "arm_high": 1.0,
    "noise_sd": 2.0,
    "inner_batch": 10,
    "lifetime": 30,
    "buckets": [0, 8],
    "init_scale": 0.01,
    # outer loop
    "parallel_runs": 1000,
    "outer_updates": 100000,
    "outer_lr": 0.03,
    "optimizer": "sgd",
    "clip_norm": 0.0,           # 0 disables clipping
    "eta_init": [2.5, 3.5],
    "checkpoint_every": 0,
    "abort_fraction": 0.1,
    # measurement
    "eval_center": [2.5, 3.5],
    "eval_spacing": 0.5,
    "eval_points": 5,           # per axis
    "estimator_samples": 1000,
    "truth_samples": 100000,
    "truth_epsilon": 0.25,
    "bootstrap": 10000,
    "lambdas": [0.0, 0.25, 0.5, 0.75, 1.0],
    "truncations": [1, 8, 29],
    "include_es": True,
    "include_dice": True,
    "heatmap_low": [0.0, 0.0],
    "heatmap_high": [8.0, 8.0],
    "heatmap_cells": 8,
    "heatmap_samples": 20000,
    # gridworld
    "grid_size": 5,
    "horizon": 16,
    "flip_interval": 6400,
    "step_reward": -0.04,
    "inner_lr": 1.0,
    "value_coef": 0.1,
    "gamma": 0.99,
    "n_history": 10,
    "coef_source": "net",
    "net_hidden": 32,
    "net_init_bias": -4.0,
    "net_init_scale": 0.1,
    "reset_each_flip": False,
    "ema_half_life": 50.0,
    # enumerable Bernoulli bandit
    "reward_probs": [0.3, 0.8],
}

PRESETS = {
    # multi-armed bandit, learning-rate schedule in two buckets
    "bandit-e": {
        "setting": "bandit",
        "lifetime": 30,
        "buckets": [0, 8],
        "parallel_runs": 1000,
        "outer_updates": 100000,
        "optimizer": "sgd",
        "epsilon": 0.25,
    },
    # nine-initialization trajectory run over the heatmap region
    "bandit-e-nine": {
        "setting": "bandit",
        "lifetime": 30,
        "buckets": [0, 8],
        "parallel_runs": 100,
        "outer_updates": 10000,
        "epsilon": 0.25,
        "eta_init": [[a, b] for a in (1.5, 4.0, 6.5) for b in (1.5, 4.0, 6.5)],
    },
    # lifetime-80 variant used for the bias/variance frontier
    "bandit-e-80": {
        "setting": "bandit",
        "lifetime": 80,
        "buckets": [0, 8],
        "parallel_runs": 1000,
        "outer_updates": 100000,
        "outer_lr": 0.01,
        "epsilon": 0.25,
        "truncations": [1, 8, 32, 79],
        "eval_center": [1.5, 2.0],
    },
    # nonstationary 5x5 gridworld, online entropy-schedule meta-learning
    "grid-f": {
        "setting": "grid",
        "grid_size": 5,
        "horizon": 16,
        "flip_interval": 6400,
        "inner_batch": 5,
        "parallel_runs": 50,
        "optimizer": "adam",
        "outer_lr": 5e-6,
        "truncation": 16,
        "coef_source": "net",
        "outer_updates": 2000,
        "eta_init": [],
    },
    # 3x3 maze for the baseline bias experiment; learner reset every flip
    "grid-advantage-d": {
        "setting": "grid",
        "grid_size": 3,
        "horizon": 8,
        "flip_interval": 64,
        "inner_batch": 10,
        "parallel_runs": 25,
        "truncation": 8,
        "lam": 1.0,
        "coef_source": "scalar",
        "reset_each_flip": True,
        "eta_init": [],
        "eval_center": [0.5],
        "eval_spacing": 0.5,
        "estimator_samples": 62500,
        "truth_samples": 120000,
        "truth_epsilon": 0.3,
    },
    # two-armed Bernoulli bandit small enough to enumerate exactly
    "bernoulli-oracle": {
        "setting": "bernoulli",
        "n_arms": 2,
        "reward_probs": [0.3, 0.8],
        "lifetime": 3,
        "inner_batch": 1,
        "buckets": [0],
        "eta_init": [0.5],
        "init_scale": 0.0,
        "truth_samples": 100000,
        "truth_epsilon": 1e-2,
    },
}


def preset(name):
    """Resolved configuration dict for preset ``name``."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(copy.deepcopy(PRESETS[name]))
    cfg["preset"] = name
    return cfg
