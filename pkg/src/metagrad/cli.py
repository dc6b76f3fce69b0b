"""Command-line entry point: train, bias-variance, oracle, heatmap.

Every command writes ``<experiment_id>.csv`` and ``<experiment_id>.jsonl``
(plus the resolved config) into ``--out``. Exit codes: 0 success, 2 config
error, 3 non-finite abort.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as config_mod
from ._validation import ConfigError, NonFiniteError
from .environments import EnumerableBandit
from .measurement import (
    compare_baselines,
    default_specs,
    fd_truth,
    grid_points,
    heatmap_returns,
    sweep_frontier,
)
from .oracles import exact_gradient, exact_objective, richardson_gradient
from .problems import BanditProblem, GridProblem, build_problem
from .training import BanditMetaTrainer, GridMetaTrainer

SCHEMA_VERSION = 1
COLUMNS = ("experiment_id", "index", "metric", "value", "seed", "aborted")


def fmt(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class ResultWriter:
    """Append-only CSV + JSONL writer with a self-describing header."""

    def __init__(self, out_dir, name, cfg, command, extra=None):
        os.makedirs(out_dir, exist_ok=True)
        self.cfg = cfg
        base = os.path.join(out_dir, name)
        meta = {"schema_version": SCHEMA_VERSION, "config_sha256": config_mod.config_hash(cfg),
                "command": command, **(extra or {})}
        self._csv = open(base + ".csv", "w", newline="")
        self._jsonl = open(base + ".jsonl", "w")
        self._csv.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        self._writer = csv.writer(self._csv, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        self._jsonl.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        with open(base + ".config.toml", "w") as f:
            f.write(config_mod.dumps(cfg))

    def row(self, index, metric, value, aborted=0):
        vals = (self.cfg["experiment_id"], int(index), metric, value, self.cfg["seed"], int(aborted))
        self._writer.writerow([fmt(v) for v in vals])
        obj = dict(zip(COLUMNS, vals))
        obj["value"] = float(value)
        self._jsonl.write(json.dumps(obj, sort_keys=True) + "\n")

    def close(self):
        self._csv.close()
        self._jsonl.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _pool(threads):
    return ThreadPoolExecutor(threads) if threads and threads > 1 else None


def _bernoulli_setup(cfg):
    from .learners import LearningRateBuckets, SoftmaxBanditLearner

    bandit = EnumerableBandit(cfg["reward_probs"])
    learner = SoftmaxBanditLearner(bandit.n_arms,
                                   LearningRateBuckets(cfg["buckets"], cfg["lifetime"] - 1))
    return bandit, learner


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg, args):
    spec = config_mod.estimator_from(cfg)
    problem = build_problem(cfg)
    inits = cfg["eta_init"]
    if inits and isinstance(inits[0], list):
        names = [f"{cfg['experiment_id']}-init{i}" for i in range(len(inits))]
    else:
        inits, names = [inits], [cfg["experiment_id"]]
    if args.resume and len(inits) > 1:
        raise ConfigError("--resume applies to single-initialization runs")
    for init, name in zip(inits, names):
        common = dict(estimator=spec, parallel_runs=cfg["parallel_runs"],
                      outer_updates=cfg["outer_updates"], outer_lr=cfg["outer_lr"],
                      optimizer=cfg["optimizer"], clip_norm=cfg["clip_norm"], seed=cfg["seed"],
                      abort_fraction=cfg["abort_fraction"],
                      checkpoint_every=cfg["checkpoint_every"],
                      checkpoint_path=os.path.join(args.out, name + ".ckpt.npz"))
        if isinstance(problem, GridProblem):
            trainer = GridMetaTrainer(problem, eta_init=init or None,
                                      net_init_bias=cfg["net_init_bias"],
                                      net_init_scale=cfg["net_init_scale"],
                                      ema_half_life=cfg["ema_half_life"],
                                      reset_each_flip=cfg["reset_each_flip"], **common)
        else:
            trainer = BanditMetaTrainer(problem, eta_init=init, **common)
        extra = {"ema_half_life": cfg["ema_half_life"]} if isinstance(problem, GridProblem) else {}
        with ResultWriter(args.out, name, cfg, "train", extra) as w:
            try:
                trainer.fit(resume=args.resume)
            finally:
                _write_curve(w, trainer)


def _write_curve(w, trainer):
    curve = getattr(trainer, "curve_", [])
    aborted = getattr(trainer, "aborted_", [])
    path = getattr(trainer, "eta_path_", [])
    for u, ret in enumerate(curve):
        w.row(u, "return", ret, aborted[u])
    for u, eta in enumerate(path):
        if len(eta) <= 8:
            for i, v in enumerate(eta):
                w.row(u, f"eta_{i}", v)
    if isinstance(trainer, GridMetaTrainer):
        for u, v in enumerate(getattr(trainer, "smoothed_curve_", [])):
            w.row(u, "return_smoothed", v)
        for b, v in enumerate(trainer.reward_rate_):
            w.row(b, "reward_per_step", v)
        for b, v in enumerate(trainer.coefficient_trace_):
            w.row(b, "entropy_coef", v)


def cmd_bias_variance(cfg, args):
    if cfg["setting"] == "grid":
        return _bias_variance_grid(cfg, args)
    if cfg["setting"] != "bandit":
        raise ConfigError("bias-variance needs setting 'bandit' or 'grid'")
    for key in ("lambdas", "truncations"):
        if not cfg[key]:
            raise ConfigError(f"estimator grid is empty: {key} has no entries")
    problem = BanditProblem.from_config(cfg)
    specs = default_specs(cfg["lambdas"], cfg["truncations"], problem.n_updates,
                          cfg["include_es"], cfg["include_dice"], cfg["sigma"])
    points = grid_points(cfg["eval_center"], cfg["eval_spacing"], cfg["eval_points"])
    pool = _pool(args.threads)
    truths = None
    if cfg["truth_samples"] > 0:
        truths = [fd_truth(problem.objective, eta, cfg["truth_epsilon"], cfg["truth_samples"],
                           cfg["seed"], keys=("truth", i), pool=pool)[0]
                  for i, eta in enumerate(points)]
    records = sweep_frontier(problem, specs, points, cfg["estimator_samples"], cfg["seed"],
                             truths, cfg["bootstrap"], pool)
    with ResultWriter(args.out, cfg["experiment_id"], cfg, "bias-variance") as w:
        for i, rec in enumerate(records):
            for name, value in rec.metrics().items():
                w.row(i, f"{rec.label}/{name}", value, rec.aborted)
            for j, v in enumerate(rec.per_point_variance):
                w.row(i, f"{rec.label}/variance_point{j}", v, rec.aborted)


def _bias_variance_grid(cfg, args):
    problem = GridProblem.from_config(cfg)
    spec = config_mod.estimator_from(cfg)
    n_batches = spec.truncation or problem.batches_per_flip
    etas = grid_points(cfg["eval_center"], cfg["eval_spacing"], cfg["eval_points"])
    if cfg["truth_samples"] <= 0:
        raise ConfigError("truth_samples must be positive for the baseline comparison")
    comps = compare_baselines(problem, spec, etas, cfg["estimator_samples"], cfg["truth_samples"],
                              cfg["truth_epsilon"], n_batches, cfg["seed"], cfg["bootstrap"],
                              _pool(args.threads))
    with ResultWriter(args.out, cfg["experiment_id"], cfg, "bias-variance") as w:
        for i, c in enumerate(comps):
            for k, v in enumerate(c.eta):
                w.row(i, f"eta_{k}", v)
            for k in range(len(c.truth)):
                w.row(i, f"fd_truth_{k}", c.truth[k])
                w.row(i, f"fd_truth_se_{k}", c.truth_se[k])
            for m in c.means:
                for k in range(len(c.truth)):
                    w.row(i, f"{m}/mean_{k}", c.means[m][k], c.aborted)
                    w.row(i, f"{m}/bootstrap_sd_{k}", c.bootstrap_sd[m][k], c.aborted)
                    w.row(i, f"{m}/deviation_sd_{k}", c.deviation(m)[k], c.aborted)
                w.row(i, f"{m}/total_variance", c.variances[m], c.aborted)


def cmd_oracle(cfg, args):
    with ResultWriter(args.out, cfg["experiment_id"], cfg, "oracle",
                      {"mode": cfg["oracle_mode"]}) as w:
        if cfg["setting"] == "bernoulli":
            bandit, learner = _bernoulli_setup(cfg)
            eta = np.asarray(cfg["eta_init"], dtype=float)
            K, N = cfg["lifetime"], cfg["inner_batch"]
            if cfg["oracle_mode"] == "enumeration":
                g = exact_gradient(bandit, learner, eta, K, N)
                w.row(0, "n_outcomes", float((2 * bandit.n_arms) ** (K * N)))
            else:
                if cfg["truth_samples"] <= 0:
                    raise ConfigError("finite-difference oracle needs truth_samples > 0")
                g = richardson_gradient(
                    lambda e: exact_objective(bandit, learner, e, K, N).real, eta,
                    h=cfg["truth_epsilon"])
            for i, v in enumerate(g):
                w.row(0, f"grad_{i}", v)
            return
        if cfg["truth_samples"] <= 0:
            raise ConfigError("finite-difference oracle needs truth_samples > 0")
        problem = build_problem(cfg)
        if isinstance(problem, GridProblem):
            n_batches = cfg["truncation"] or problem.batches_per_flip

            def objective(etas, size, rng):
                return problem.objective(etas, size, rng, n_batches)
        else:
            objective = problem.objective
        eta = np.asarray(cfg["eta_init"], dtype=float)
        g, se = fd_truth(objective, eta, cfg["truth_epsilon"], cfg["truth_samples"], cfg["seed"],
                         pool=_pool(args.threads))
        for i in range(len(g)):
            w.row(0, f"grad_{i}", g[i])
            w.row(0, f"grad_se_{i}", se[i])


def heatmap_axes(cfg):
    lo, hi, n = cfg["heatmap_low"], cfg["heatmap_high"], cfg["heatmap_cells"]
    return [a + (np.arange(n) + 0.5) * (b - a) / n for a, b in zip(lo, hi)]


def cmd_heatmap(cfg, args):
    if cfg["setting"] != "bandit":
        raise ConfigError("heatmap is defined for the bandit setting")
    problem = BanditProblem.from_config(cfg)
    axes = heatmap_axes(cfg)
    if len(axes) != problem.d_eta:
        raise ConfigError(f"heatmap bounds need {problem.d_eta} entries")
    vals = heatmap_returns(problem, axes, cfg["heatmap_samples"], cfg["seed"], _pool(args.threads))
    mesh = np.meshgrid(*axes, indexing="ij")
    with ResultWriter(args.out, cfg["experiment_id"], cfg, "heatmap") as w:
        for i, v in enumerate(vals.ravel()):
            for k, m in enumerate(mesh):
                w.row(i, f"eta_{k}", m.ravel()[i])
            w.row(i, "return", v)


COMMANDS = {"train": cmd_train, "bias-variance": cmd_bias_variance, "oracle": cmd_oracle,
            "heatmap": cmd_heatmap}


def build_parser():
    parser = argparse.ArgumentParser(prog="metagrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file (flat keys, optional preset)")
        p.add_argument("--preset", help="preset name when no config file sets one")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--out", default="results", help="output directory")
        if name == "train":
            p.add_argument("--resume", help="checkpoint file to continue from")
        else:
            p.set_defaults(resume=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.preset is not None:
        overrides["preset"] = args.preset
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = config_mod.load(args.config, overrides)
        # divergence is detected and counted explicitly; silence numpy's warnings
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NonFiniteError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
