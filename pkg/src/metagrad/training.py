"""Outer-loop meta-training for the bandit and gridworld settings.

Both trainers follow the scikit-learn estimator conventions: constructor
arguments are hyperparameters, ``fit()`` runs the outer loop (there is no
data argument; experience is simulated), and learned state lives in
attributes ending in an underscore.
"""

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ConfigError, NonFiniteError, check_choice, check_finite, check_positive
from .estimators import (
    MetaGradientEstimator,
    assemble_meta_gradient,
    es_meta_gradient,
    finite_difference_meta_gradient,
)
from .rng import stream

OPTIMIZERS = ("sgd", "adam")


class OuterOptimizer:
    """Gradient ascent on eta with SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, kind="sgd", lr=0.01, clip_norm=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        check_choice(kind, "optimizer", OPTIMIZERS)
        self.kind = kind
        self.lr = lr
        self.clip_norm = clip_norm
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, eta, grad):
        grad = np.asarray(grad, dtype=float)
        if self.clip_norm and self.clip_norm > 0:
            norm = np.linalg.norm(grad)
            if norm > self.clip_norm:
                grad = grad * (self.clip_norm / norm)
        self.t += 1
        if self.kind == "sgd":
            return eta + self.lr * grad
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return eta + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        d = {"opt_t": np.array(self.t)}
        if self.m is not None:
            d["opt_m"], d["opt_v"] = self.m, self.v
        return d

    def load(self, d):
        self.t = int(d["opt_t"])
        if "opt_m" in d:
            self.m, self.v = np.array(d["opt_m"]), np.array(d["opt_v"])


def ema(x, half_life):
    """Exponential moving average with the given half-life in samples."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return x
    a = 1.0 - 0.5 ** (1.0 / half_life)
    out = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        acc = acc + a * (v - acc)
        out[i] = acc
    return out


class _Trainer(BaseEstimator):
    """Checkpointing, abort accounting and the shared fit loop."""

    def _check_common(self):
        check_positive(self.parallel_runs, "parallel_runs", integer=True)
        if int(self.outer_updates) < 0:
            raise ConfigError("outer_updates must be non-negative")
        if self.outer_lr < 0:
            raise ConfigError("outer_lr must be non-negative")
        if not 0.0 <= self.abort_fraction <= 1.0:
            raise ConfigError("abort_fraction must lie in [0, 1]")

    def _save(self, path, u):
        np.savez(path, update=np.array(u), eta=self.eta_, eta_path=np.array(self.eta_path_),
                 curve=np.array(self.curve_), aborted=np.array(self.aborted_),
                 **self._extra_state(), **self.optimizer_.state())

    def _load(self, path):
        with np.load(path) as d:
            d = dict(d)
        self.optimizer_.load(d)
        self.eta_ = d["eta"]
        self.eta_path_ = list(d["eta_path"])
        self.curve_ = list(d["curve"])
        self.aborted_ = list(d["aborted"])
        self._load_extra(d)
        return int(d["update"])

    def _extra_state(self):
        return {}

    def _load_extra(self, d):
        pass

    def fit(self, X=None, y=None, resume=None):
        """Run the outer loop; ``resume`` continues from a checkpoint file."""
        self._check_common()
        self._setup()
        self.optimizer_ = OuterOptimizer(self.optimizer, self.outer_lr, self.clip_norm)
        start = 0
        if resume is not None:
            start = self._load(resume)
        else:
            self.eta_ = self._initial_eta()
            self.eta_path_ = [self.eta_.copy()]
            self.curve_, self.aborted_ = [], []
        self.stopped_early_ = False
        for u in range(start, int(self.outer_updates)):
            grad, ret, n_bad = self._gradient(u)
            self.aborted_.append(n_bad)
            if n_bad > self.abort_fraction * self.parallel_runs:
                self.stopped_early_ = True
                raise NonFiniteError(f"{n_bad} of {self.parallel_runs} lifetimes went non-finite "
                                     f"at outer update {u}")
            check_finite(grad, "meta-gradient")
            self.curve_.append(ret)
            self.eta_ = self.optimizer_.step(self.eta_, grad)
            self.eta_path_.append(self.eta_.copy())
            if self.checkpoint_every and self.checkpoint_path and (u + 1) % self.checkpoint_every == 0:
                self._save(self.checkpoint_path, u + 1)
        self.curve_ = list(self.curve_)
        return self


class BanditMetaTrainer(_Trainer):
    """Learns a learning-rate schedule over episodic bandit lifetimes.

    Each outer update samples ``parallel_runs`` fresh lifetimes (new tasks,
    reset agents), averages the meta-gradient over them and takes one
    ascent step. Truncated estimators draw a window start per lifetime.
    """

    def __init__(self, problem=None, estimator=None, parallel_runs=1000, outer_updates=1000,
                 outer_lr=0.03, optimizer="sgd", clip_norm=0.0, eta_init=(2.5, 3.5), seed=0,
                 abort_fraction=0.1, checkpoint_every=0, checkpoint_path=None):
        self.problem = problem
        self.estimator = estimator
        self.parallel_runs = parallel_runs
        self.outer_updates = outer_updates
        self.outer_lr = outer_lr
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.eta_init = eta_init
        self.seed = seed
        self.abort_fraction = abort_fraction
        self.checkpoint_every = checkpoint_every
        self.checkpoint_path = checkpoint_path

    def _setup(self):
        if self.problem is None:
            raise ConfigError("BanditMetaTrainer needs a problem")
        self.spec_ = (self.estimator or MetaGradientEstimator()).validate(self.problem.n_updates)

    def _initial_eta(self):
        eta = np.array(self.eta_init, dtype=float)
        if eta.shape != (self.problem.d_eta,):
            raise ConfigError(f"eta_init needs {self.problem.d_eta} values")
        return eta

    def _gradient(self, u):
        spec, p, n = self.spec_, self.problem, int(self.parallel_runs)
        rng = stream(self.seed, "train", u)
        if spec.uses_tape:
            est, ok, ret = p.tape_samples(self.eta_, [spec], n, rng, spec.truncation,
                                          spec.effective_hessian_mode)
            g = est[spec.label()][ok].mean(axis=0) if ok.any() else np.zeros(p.d_eta)
            return g, float(ret[ok].mean()) if ok.any() else np.nan, int((~ok).sum())
        if spec.kind == "es":
            objective = p.es_objective(rng, n, spec.truncation)
            fitness = []

            def f(pop):
                vals = objective(pop, self.eta_)
                fitness.append(vals)
                return vals

            g = es_meta_gradient(self.eta_, f, spec.sigma, n, rng, spec.standardize)
            return g, float(np.mean(fitness[0])), 0
        values = []

        def obj(etas, size, r):
            vals = p.objective(etas, size, r)
            values.append(vals)
            return vals

        g = finite_difference_meta_gradient(self.eta_, obj, spec.epsilon, n, rng, spec.crn)
        return g, float(np.mean(np.concatenate(values))), 0


class GridMetaTrainer(_Trainer):
    """Online meta-learning of the entropy coefficient on the gridworld.

    ``parallel_runs`` inner learners persist across outer updates. Each update
    advances every learner by one window of ``truncation`` batches, averages
    the window meta-gradient over learners and takes an ascent step.
    """

    def __init__(self, problem=None, estimator=None, parallel_runs=50, outer_updates=100,
                 outer_lr=5e-6, optimizer="adam", clip_norm=0.0, eta_init=None, seed=0,
                 abort_fraction=0.1, checkpoint_every=0, checkpoint_path=None,
                 net_init_bias=-4.0, net_init_scale=0.1, ema_half_life=50.0,
                 reset_each_flip=False):
        self.problem = problem
        self.estimator = estimator
        self.parallel_runs = parallel_runs
        self.outer_updates = outer_updates
        self.outer_lr = outer_lr
        self.optimizer = optimizer
        self.clip_norm = clip_norm
        self.eta_init = eta_init
        self.seed = seed
        self.abort_fraction = abort_fraction
        self.checkpoint_every = checkpoint_every
        self.checkpoint_path = checkpoint_path
        self.net_init_bias = net_init_bias
        self.net_init_scale = net_init_scale
        self.ema_half_life = ema_half_life
        self.reset_each_flip = reset_each_flip

    def _setup(self):
        if self.problem is None:
            raise ConfigError("GridMetaTrainer needs a problem")
        spec = (self.estimator or MetaGradientEstimator(truncation=16)).validate()
        if not spec.uses_tape:
            raise ConfigError("gridworld meta-training supports tape-based estimators only")
        if spec.truncation is None:
            raise ConfigError("online gridworld training needs a finite truncation length")
        self.spec_ = spec
        self.state_ = self.problem.rollout.initial_state(int(self.parallel_runs))
        self.reward_rate_, self.coefficient_trace_ = [], []

    def _initial_eta(self):
        source = self.problem.learner.coef_source
        if self.eta_init is not None and len(np.atleast_1d(self.eta_init)):
            eta = np.atleast_1d(np.array(self.eta_init, dtype=float))
            if eta.shape != (source.dim,):
                raise ConfigError(f"eta_init needs {source.dim} values")
            return eta
        if hasattr(source, "init"):
            return source.init(stream(self.seed, "eta-init"), self.net_init_bias,
                               self.net_init_scale)
        return np.full(source.dim, self.net_init_bias)

    def _gradient(self, u):
        spec, p = self.spec_, self.problem
        rng = stream(self.seed, "train", u)
        st = self.state_
        if self.reset_each_flip and st.updates and st.global_step % p.env.flip_interval == 0:
            fresh = p.rollout.initial_state(int(self.parallel_runs))
            st.theta, st.history = fresh.theta, fresh.history
        win = p.rollout.run_window(self.eta_, self.state_, spec.truncation, rng,
                                   hessian_mode=spec.effective_hessian_mode,
                                   baseline=spec.baseline)
        est = assemble_meta_gradient(win.tape, spec) / spec.truncation
        ok = win.ok
        self.state_ = win.state
        self.reward_rate_.extend(win.reward_rate.mean(axis=0))
        self.coefficient_trace_.extend(win.coefficients.mean(axis=0))
        ret = float(win.episode_returns[ok].mean()) if ok.any() else np.nan
        g = est[ok].mean(axis=0) if ok.any() else np.zeros(p.d_eta)
        return g, ret, int((~ok).sum())

    def fit(self, X=None, y=None, resume=None):
        super().fit(X, y, resume)
        self.smoothed_curve_ = ema(self.curve_, self.ema_half_life)
        return self

    def _extra_state(self):
        s = self.state_
        return {"theta": s.theta, "history": s.history, "global_step": np.array(s.global_step),
                "updates": np.array(s.updates), "reward_rate": np.array(self.reward_rate_),
                "coefficients": np.array(self.coefficient_trace_)}

    def _load_extra(self, d):
        self.state_.theta = d["theta"]
        self.state_.history = d["history"]
        self.state_.global_step = int(d["global_step"])
        self.state_.updates = int(d["updates"])
        self.reward_rate_ = list(d["reward_rate"])
        self.coefficient_trace_ = list(d["coefficients"])
