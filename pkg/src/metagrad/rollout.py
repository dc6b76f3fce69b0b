"""Vectorized lifetime simulation for the bandit and gridworld settings.

A bandit lifetime of L batches has L - 1 inner updates; a truncation window
of T updates spans T + 1 consecutive batches. Gridworld windows are T
batches, each followed by its update, so consecutive online windows tile
the learner's history without overlap.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import finite_rows
from .environments import sample_categorical
from .estimators import LifetimeTape, propagate_meta_jacobian, record_step
from .learners import BanditBatch, GridBatch, baseline_apply, softmax


def _sanitize(x, ok):
    """Zero out lifetimes that went non-finite so the block can keep running."""
    bad = ~finite_rows(x)
    if bad.any():
        ok &= ~bad
        x = np.where(bad.reshape((-1,) + (1,) * (x.ndim - 1)), 0.0, x)
    return x, ok


@dataclass
class BanditRun:
    batch_means: np.ndarray        # (B, L) mean reward of each batch
    tape: LifetimeTape = None
    ok: np.ndarray = None          # (B,) False for aborted lifetimes
    policies: np.ndarray = None    # (B, L, A) when requested

    def window_objective(self, start, length):
        k = np.arange(self.batch_means.shape[1])
        inside = (k >= np.asarray(start)[:, None]) & (k < np.asarray(start)[:, None] + length)
        return (self.batch_means * inside).sum(axis=1) / length


def run_bandit_lifetimes(learner, eta, draws, *, window=None, hessian_mode="sampled",
                         perturb=None, forced=None, keep_policies=False):
    """Simulate a block of bandit lifetimes.

    eta : (B, d_eta) meta-parameters per lifetime.
    window : None, or ``(start, T)`` to record a tape for the truncation
        window of T updates beginning at batch ``start`` (array of shape (B,)).
        The meta-Jacobian is reset to zero at the window start.
    perturb : optional ``(start, T, eta_alt)``; updates ``start .. start + T - 1``
        use ``eta_alt`` instead of ``eta`` (truncated ES).
    forced : optional ``(actions, rewards)`` arrays (B, L, N) replacing sampling.
    """
    if forced is not None:
        actions_all, rewards_all = forced
        B, L, N = actions_all.shape
        theta = np.array(draws.theta0 if draws is not None else np.zeros((B, learner.n_arms)),
                         dtype=np.result_type(eta, float))
    else:
        B, L, N = draws.uniforms.shape
        theta = draws.theta0.astype(np.result_type(eta, float))
    theta = np.broadcast_to(theta, (B, learner.n_arms)).copy()
    eta = np.broadcast_to(eta, (B, eta.shape[-1]))
    ok = np.ones(B, dtype=bool)
    means = np.empty((B, L), dtype=theta.dtype)
    policies = np.empty((B, L, learner.n_arms), dtype=theta.dtype) if keep_policies else None

    tape = J = None
    if window is not None:
        start, T = window
        start = np.broadcast_to(np.asarray(start, dtype=int), (B,))
        tape = LifetimeTape(start=start, length=T + 1)
        J = np.zeros((B, eta.shape[1], learner.n_arms))
    if perturb is not None:
        p_start, p_len, eta_alt = perturb
        p_start = np.broadcast_to(np.asarray(p_start, dtype=int), (B,))
        eta_alt = np.broadcast_to(eta_alt, eta.shape)

    for k in range(L):
        pi = softmax(theta)
        if keep_policies:
            policies[:, k] = pi
        if forced is not None:
            batch = BanditBatch(actions_all[:, k], rewards_all[:, k], k)
        else:
            a = sample_categorical(pi.real, draws.uniforms[:, k])
            batch = BanditBatch(a, draws.rewards(a, k), k)
        means[:, k] = batch.rewards.mean(axis=1)
        eta_k = eta
        if tape is not None:
            at_start = start == k
            if at_start.any():
                J[at_start] = 0.0
            record_step(tape, J, theta, batch, learner, check=False)
        if perturb is not None:
            inside = (k >= p_start) & (k < p_start + p_len)
            eta_k = np.where(inside[:, None], eta_alt, eta)
        if k == L - 1:
            break
        if J is not None:
            J = propagate_meta_jacobian(J, eta_k, theta, batch, learner, hessian_mode, check=False)
            J, ok = _sanitize(J, ok)
        theta = theta + learner.update(eta_k, theta, batch)
        if not np.iscomplexobj(theta):
            theta, ok = _sanitize(theta, ok)

    if tape is not None:
        for lst in (tape.corrections, tape.directs):
            for i, x in enumerate(lst):
                lst[i], ok = _sanitize(x, ok)
    return BanditRun(means, tape, ok, policies)


# ---------------------------------------------------------------------------
# Gridworld


@dataclass
class GridLearnerState:
    theta: np.ndarray      # (B, d_theta)
    history: np.ndarray    # (B, n_history)
    global_step: int = 0
    updates: int = 0

    def copy(self):
        return GridLearnerState(self.theta.copy(), self.history.copy(),
                                self.global_step, self.updates)


@dataclass
class GridWindow:
    state: GridLearnerState
    tapes: dict                   # baseline mode -> LifetimeTape
    ok: np.ndarray
    mean_returns: np.ndarray      # (B, T) mean discounted R(tau) per batch
    episode_returns: np.ndarray   # (B, T) mean undiscounted episodic return
    reward_rate: np.ndarray       # (B, T) mean reward per timestep
    coefficients: np.ndarray      # (B, T) entropy coefficient used by each update

    @property
    def tape(self):
        return next(iter(self.tapes.values())) if self.tapes else None


class GridRollout:
    """Collects gridworld batches for a block of learners in lock step."""

    def __init__(self, env, learner, batch_size=5, n_history=10):
        self.env = env
        self.learner = learner
        self.batch_size = batch_size
        self.n_history = n_history

    def initial_state(self, n):
        return GridLearnerState(self.learner.init_params(n), np.zeros((n, self.n_history)))

    def draws(self, rng, n, reps=1):
        N, H = self.batch_size, self.env.horizon
        d = {"reset": rng.random((n, N, 3)), "act": rng.random((n, N, H)),
             "reloc": rng.random((n, N, H, 2))}
        if reps > 1:
            d = {k: np.tile(v, (reps,) + (1,) * (v.ndim - 1)) for k, v in d.items()}
        return d

    def collect(self, theta, history, global_step, draws, step=0):
        env, learner = self.env, self.learner
        B = theta.shape[0]
        N, H, A = self.batch_size, env.horizon, env.n_actions
        W, _ = learner.split(theta)
        Wt = np.swapaxes(W, 1, 2)
        rows = np.arange(B)[:, None]
        state = env.reset(draws["reset"])
        idx = np.empty((B, N, H, 4), dtype=int)
        actions = np.empty((B, N, H), dtype=int)
        rewards = np.empty((B, N, H))
        for t in range(H):
            i = env.feature_index(state)
            z = Wt[rows, i.reshape(B, -1)].reshape(B, N, 4, A).sum(axis=2)
            a = sample_categorical(softmax(z), draws["act"][:, :, t, None])[..., 0]
            idx[:, :, t], actions[:, :, t] = i, a
            state, rewards[:, :, t], _ = env.step(state, a, draws["reloc"][:, :, t], global_step + t)
        phi = np.zeros((B, N * H, env.n_features))
        np.put_along_axis(phi, idx.reshape(B, N * H, 4), 1.0, axis=2)
        rtg = np.empty_like(rewards)
        acc = np.zeros((B, N))
        for t in reversed(range(H)):
            acc = rewards[:, :, t] + learner.gamma * acc
            rtg[:, :, t] = acc
        return GridBatch(phi, actions.reshape(B, -1), rtg.reshape(B, -1), rewards,
                         history.copy(), H, step)

    def run_window(self, eta, state, n_batches, rng, *, tape=True, hessian_mode="sampled",
                   baseline="none", reps=1):
        """Run ``n_batches`` collect-then-update steps from ``state``.

        The meta-Jacobian starts at zero (window start). ``reps`` > 1 replays
        each unique block of draws ``reps`` times (CRN across rows of ``eta``);
        ``state`` must then already hold ``reps`` tiled copies. ``baseline`` may
        be a sequence of modes to record one tape per mode from the same rollout.
        """
        learner = self.learner
        B = state.theta.shape[0]
        eta = np.broadcast_to(np.atleast_2d(eta), (B, np.atleast_2d(eta).shape[-1]))
        st = state.copy()
        ok = np.ones(B, dtype=bool)
        modes = (baseline,) if isinstance(baseline, str) else tuple(baseline)
        tapes = {m: LifetimeTape(start=np.zeros(B, dtype=int), length=n_batches)
                 for m in modes} if tape else {}
        J = np.zeros((B, eta.shape[1], learner.d_theta)) if tape else None
        shape = (B, n_batches)
        mean_ret, ep_ret, rate, coefs = (np.empty(shape) for _ in range(4))
        for k in range(n_batches):
            d = self.draws(rng, B // reps, reps)
            batch = self.collect(st.theta, st.history, st.global_step, d, step=st.updates)
            R = batch.returns
            mean_ret[:, k] = R.mean(axis=1)
            ep_ret[:, k] = batch.rewards.sum(axis=2).mean(axis=1)
            rate[:, k] = batch.rewards.mean(axis=(1, 2))
            coefs[:, k] = learner.coefficient(eta, batch)[0]
            if tape:
                values = learner.baseline_values(st.theta, batch)
                for m, tp in tapes.items():
                    r = baseline_apply(R, m, values)
                    record_step(tp, J, st.theta, batch, learner, returns=r, check=False)
                J = propagate_meta_jacobian(J, eta, st.theta, batch, learner, hessian_mode,
                                            check=False)
                J, ok = _sanitize(J, ok)
            st.theta, ok = _sanitize(st.theta + learner.update(eta, st.theta, batch), ok)
            st.history = np.concatenate([st.history[:, 1:], rate[:, k, None]], axis=1)
            st.global_step += self.env.horizon
            st.updates += 1
        for tp in tapes.values():
            for lst in (tp.corrections, tp.directs):
                for i, x in enumerate(lst):
                    lst[i], ok = _sanitize(x, ok)
        return GridWindow(st, tapes, ok, mean_ret, ep_ret, rate, coefs)
