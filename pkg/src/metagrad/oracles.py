"""Ground-truth meta-gradients for small and Monte-Carlo settings.

On the enumerable Bernoulli bandit every outcome sequence is listed, so the
lifetime objective J_K(eta) = sum_k E[R at theta_k] is an exact, analytic
function of eta. Its gradient is taken by complex-step differentiation, which
only evaluates the objective and shares no code with the estimators.
"""

import numpy as np

from .environments import BanditDraws, EnumerableBandit, enumerate_outcomes
from .estimators import assemble_meta_gradient
from .rollout import run_bandit_lifetimes


def _forced_run(learner, eta, theta0, actions, rewards, **kwargs):
    n = len(actions)
    draws = None
    if theta0 is not None:
        draws = BanditDraws(None, np.broadcast_to(theta0, (n, np.size(theta0))), None, None)
    return run_bandit_lifetimes(learner, np.broadcast_to(eta, (n, eta.size)), draws,
                                forced=(actions, rewards), **kwargs)


def exact_outcomes(bandit, learner, eta, n_batches, batch_size=1, theta0=None):
    """(probs, actions, rewards) over every outcome sequence of a lifetime."""
    eta = np.asarray(eta)

    def policies(actions, rewards):
        return _forced_run(learner, eta, theta0, actions, rewards, keep_policies=True).policies

    return enumerate_outcomes(bandit, policies, n_batches, batch_size)


def exact_objective(bandit, learner, eta, n_batches, batch_size=1, theta0=None):
    """J_K(eta): expected sum over the lifetime of each batch's mean reward.

    Accepts complex ``eta``.
    """
    probs, actions, _ = exact_outcomes(bandit, learner, eta, n_batches, batch_size, theta0)
    expected_reward = bandit.reward_probs[actions].mean(axis=2).sum(axis=1)
    return (probs * expected_reward).sum()


def complex_step_gradient(f, eta, h=1e-30):
    eta = np.asarray(eta, dtype=float)
    grad = np.empty(eta.size)
    for i in range(eta.size):
        e = eta.astype(complex)
        e[i] += 1j * h
        grad[i] = f(e).imag / h
    return grad


def exact_gradient(bandit, learner, eta, n_batches, batch_size=1, theta0=None):
    return complex_step_gradient(
        lambda e: exact_objective(bandit, learner, e, n_batches, batch_size, theta0), eta)


def richardson_gradient(f, eta, h=1e-2, levels=4):
    """Central differences extrapolated over step sizes h, h/2, h/4, ..."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty(eta.size)
    for i in range(eta.size):
        e = np.zeros(eta.size)
        e[i] = 1.0
        table = []
        for lvl in range(levels):
            s = h / 2**lvl
            row = [(f(eta + s * e) - f(eta - s * e)) / (2 * s)]
            for m in range(1, lvl + 1):
                row.append(row[m - 1] + (row[m - 1] - table[-1][m - 1]) / (4**m - 1))
            table.append(row)
        out[i] = table[-1][-1]
    return out


def expected_estimate(bandit, learner, eta, spec, n_batches, batch_size=1, theta0=None):
    """Exact expectation of a tape-based estimator over all outcome sequences.

    Returns ``(expectation, n_outcomes)``; untruncated, window starting at 0.
    """
    eta = np.asarray(eta, dtype=float)
    probs, actions, rewards = exact_outcomes(bandit, learner, eta, n_batches, batch_size, theta0)
    run = _forced_run(learner, eta, theta0, actions, rewards, window=(0, n_batches - 1),
                      hessian_mode=spec.effective_hessian_mode)
    return probs.real @ assemble_meta_gradient(run.tape, spec), len(probs)


def default_bernoulli():
    return EnumerableBandit([0.3, 0.8])
