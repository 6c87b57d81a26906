"""Tabular option MDP used to check the augmented-MDP bookkeeping.

A native trajectory s0, o0, a0, r0, s1, o1, ... is generated by a high-level
policy pi_H(o | o_prev, s), a low-level policy pi_L(a | s, o), a transition
kernel P(s' | s, a) and a reward r(s, a). The same process can be simulated as
an MDP over (o_prev, s) with action o, or as an MDP over (s, o) with action a.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class OptionMDP:
    P: np.ndarray        # (S, A, S)
    R: np.ndarray        # (S, A)
    pi_H: np.ndarray     # (O, S, O): [o_prev, s, o]
    pi_L: np.ndarray     # (S, O, A)
    mu0: np.ndarray      # (S,)
    o_init: int = 0
    gamma: float = 0.9

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_options(self):
        return self.pi_H.shape[0]

    # high-level view: state (o_prev, s), action o
    def high_kernel(self):
        # P_H[(o_prev, s), o, s'] = sum_a pi_L(a | s, o) P(s' | s, a)
        return np.einsum("soa,sat->sot", self.pi_L, self.P)

    def high_reward(self):
        return np.einsum("soa,sa->so", self.pi_L, self.R)

    # low-level view: state (s, o), action a
    def low_kernel(self):
        # P_L[(s, o), a, (s', o')] = P(s' | s, a) pi_H(o' | o, s')
        return np.einsum("sat,otq->soatq", self.P, self.pi_H)


def random_mdp(rng, n_states=4, n_options=2, n_actions=2, gamma=0.9) -> OptionMDP:
    def simplex(*shape):
        x = rng.gamma(1.0, 1.0, shape)
        return x / x.sum(axis=-1, keepdims=True)

    return OptionMDP(P=simplex(n_states, n_actions, n_states),
                     R=rng.uniform(-1.0, 1.0, (n_states, n_actions)),
                     pi_H=simplex(n_options, n_states, n_options),
                     pi_L=simplex(n_states, n_options, n_actions),
                     mu0=simplex(n_states), gamma=gamma)


def _draw(rng, probs):
    """One categorical draw per row of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random((probs.shape[0], 1))
    return np.minimum((cdf < u * cdf[:, -1:]).sum(axis=-1), probs.shape[-1] - 1)


def exact_value(m: OptionMDP) -> float:
    """Expected discounted return by solving the low-level linear system."""
    S, O = m.n_states, m.n_options
    K = m.low_kernel()                                    # (S, O, A, S, O)
    M = np.einsum("soa,soatq->sotq", m.pi_L, K).reshape(S * O, S * O)
    r = np.einsum("soa,sa->so", m.pi_L, m.R).reshape(S * O)
    v = np.linalg.solve(np.eye(S * O) - m.gamma * M, r)
    start = (m.mu0[:, None] * m.pi_H[m.o_init]).reshape(S * O)
    return float(start @ v)


def native_returns(m: OptionMDP, n: int, horizon: int, rng) -> np.ndarray:
    s = _draw(rng, np.tile(m.mu0, (n, 1)))
    o_prev = np.full(n, m.o_init)
    G = np.zeros(n)
    disc = 1.0
    for _ in range(horizon):
        o = _draw(rng, m.pi_H[o_prev, s])
        a = _draw(rng, m.pi_L[s, o])
        G += disc * m.R[s, a]
        s = _draw(rng, m.P[s, a])
        o_prev = o
        disc *= m.gamma
    return G


def high_level_returns(m: OptionMDP, n: int, horizon: int, rng) -> np.ndarray:
    """Simulate the MDP over (o_prev, s) with action o and marginal rewards."""
    PH, RH = m.high_kernel(), m.high_reward()
    s = _draw(rng, np.tile(m.mu0, (n, 1)))
    o_prev = np.full(n, m.o_init)
    G = np.zeros(n)
    disc = 1.0
    for _ in range(horizon):
        o = _draw(rng, m.pi_H[o_prev, s])
        G += disc * RH[s, o]
        s = _draw(rng, PH[s, o])
        o_prev = o
        disc *= m.gamma
    return G


def low_level_returns(m: OptionMDP, n: int, horizon: int, rng) -> np.ndarray:
    """Simulate the MDP over (s, o) with action a."""
    S, O = m.n_states, m.n_options
    K = m.low_kernel().reshape(S, O, -1, S * O)
    s0 = _draw(rng, np.tile(m.mu0, (n, 1)))
    o = _draw(rng, m.pi_H[m.o_init, s0])
    s = s0
    G = np.zeros(n)
    disc = 1.0
    for _ in range(horizon):
        a = _draw(rng, m.pi_L[s, o])
        G += disc * m.R[s, a]
        nxt = _draw(rng, K[s, o, a])
        s, o = nxt // O, nxt % O
        disc *= m.gamma
    return G


def compare_estimates(m: OptionMDP, n: int = 100_000, horizon: int = 100, seed: int = 0):
    """Mean and standard error of the three estimators on independent streams."""
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    out = {}
    for name, fn, rng in zip(("native", "high", "low"),
                             (native_returns, high_level_returns, low_level_returns), rngs):
        G = fn(m, n, horizon, rng)
        out[name] = (float(G.mean()), float(G.std(ddof=1) / np.sqrt(n)))
    return out


# -- recorded-trajectory bookkeeping ----------------------------------------

def record_trajectory(m: OptionMDP, horizon: int, rng):
    s = int(_draw(rng, m.mu0[None, :])[0])
    o_prev = m.o_init
    traj = []
    for _ in range(horizon):
        o = int(_draw(rng, m.pi_H[o_prev, s][None, :])[0])
        a = int(_draw(rng, m.pi_L[s, o][None, :])[0])
        s_next = int(_draw(rng, m.P[s, a][None, :])[0])
        traj.append((s, o, a, float(m.R[s, a]), s_next))
        o_prev, s = o, s_next
    return traj


def high_level_view(traj, o_init=0):
    """((o_prev, s), o, r) tuples."""
    out, o_prev = [], o_init
    for s, o, _, r, _ in traj:
        out.append(((o_prev, s), o, r))
        o_prev = o
    return out


def low_level_view(traj):
    """((s, o), a, r) tuples."""
    return [((s, o), a, r) for s, o, a, r, _ in traj]


def discounted_sum(rewards, gamma) -> float:
    total, disc = 0.0, 1.0
    for r in rewards:
        total += disc * r
        disc *= gamma
    return total


# -- transition factorisation -----------------------------------------------

def factorisation_test(m: OptionMDP, n: int = 100_000, seed: int = 0, context=(0, 0)):
    """Chi-square goodness of fit of (o, s') counts from context (o_prev, s).

    Under the factorised model P(o, s' | o_prev, s) = pi_H(o | o_prev, s) P_H(s' | s, o).
    Returns ``(statistic, p_value, dof)``.
    """
    rng = np.random.default_rng(seed)
    o_prev, s = context
    S, O = m.n_states, m.n_options
    ss = np.full(n, s)
    o = _draw(rng, np.tile(m.pi_H[o_prev, s], (n, 1)))
    a = _draw(rng, m.pi_L[ss, o])
    s_next = _draw(rng, m.P[ss, a])
    observed = np.bincount(o * S + s_next, minlength=O * S).astype(float)
    expected = (m.pi_H[o_prev, s][:, None] * m.high_kernel()[s]).ravel() * n
    keep = expected > 0
    stat, p = stats.chisquare(observed[keep], expected[keep])
    return float(stat), float(p), int(keep.sum() - 1)
