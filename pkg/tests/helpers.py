"""Shared oracles for the learner tests."""

import numpy as np

from icps.csdac import (Agent, CategoricalActor, GaussianActor, beta_actor_drift,
                        force_actor_drift, ppo_actor_loss, stability_critic_loss, value_loss)
from icps.neural import MLP


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(num, ana):
    return float(np.max(np.abs(num - ana)) / max(1e-3, float(np.max(np.abs(num)))))


def value_case(rng):
    d = int(rng.integers(2, 6))
    net = MLP([d, 6, 1], rng=rng, out_scale=1.0)
    n = 8
    x, x2 = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    r, done = rng.normal(size=n), (rng.random(n) < 0.3).astype(float)
    f = lambda t: value_loss(net, t, x, r, x2, done, 0.99)
    return net.params.copy(), f


def stability_case(rng):
    d = int(rng.integers(2, 6))
    net = MLP([d, 6, 1], output="relu", rng=rng, out_scale=0.3)
    p = net.params.copy()
    p[-1] = 1.5  # keep every output away from the ReLU kink
    x, c = rng.normal(size=(8, d)), rng.random(8)
    return p, lambda t: stability_critic_loss(net, t, x, c)


def _drift_batch(rng, n, d0):
    obs_next = rng.normal(size=(n, d0))
    return {
        "x": np.concatenate([rng.normal(size=(n, d0)), rng.integers(0, 2, (n, 1)),
                             rng.uniform(-1, 1, (n, 1))], axis=1),
        "c": rng.choice([0.0, 0.02, 0.1, 0.3], n), "c_next": rng.choice([0.0, 0.1, 0.4], n),
        "beta": rng.integers(0, 2, n).astype(float),
        "beta_next": rng.integers(0, 2, n).astype(float),
        "obs_next": obs_next, "u_next": rng.uniform(-0.9, 0.9, n),
        "eps_next": rng.normal(size=n),
    }


def actor_case(rng, kind):
    """(theta, f) where f(theta) -> (loss, grad) for a random PPO batch."""
    n, d0 = 10, 4
    gc = MLP([d0 + 2, 6, 1], output="relu", rng=rng, out_scale=0.3)
    gp = gc.params.copy()
    gp[-1] = 1.5
    lam = float(rng.uniform(0, 2))
    adv = rng.normal(size=n)
    lb = _drift_batch(rng, n, d0)
    if kind == "H0":
        actor = CategoricalActor(MLP([1 + d0, 6, 2], rng=rng, out_scale=1.0), 1, 2)
        theta = actor.net.params.copy()
        batch = {"x": rng.normal(size=(n, 1 + d0)), "a": rng.integers(0, 2, (n, 1))}
        drift = lambda t: beta_actor_drift(actor, t, gc, gp, lb, 0.1, 0.05)
    elif kind == "H1":
        N, J = 3, 2
        actor = CategoricalActor(MLP([5, 6, J * (N + 1)], rng=rng, out_scale=1.0), J, N + 1)
        theta = actor.net.params.copy()
        batch = {"x": rng.normal(size=(n, 5)), "a": rng.integers(0, N + 1, (n, J))}
        drift = None
    elif kind == "L0":
        actor = GaussianActor(MLP([d0 + 1, 6, 1], rng=rng, out_scale=1.0), -1.0, 1.0)
        theta = np.concatenate([actor.net.params, [rng.uniform(-1, 0)]])
        batch = {"x": rng.normal(size=(n, d0 + 1)), "z": rng.normal(size=(n, 1))}
        drift = lambda t: force_actor_drift(actor, t, gc, gp, lb, 0.1, 0.05)
    else:
        J = 3
        actor = GaussianActor(MLP([5, 6, J], rng=rng, out_scale=1.0), 0.0, 1.0)
        theta = np.concatenate([actor.net.params, rng.uniform(-1, 0, J)])
        batch = {"x": rng.normal(size=(n, 5)), "z": rng.normal(size=(n, J)),
                 "mask": (rng.random((n, J)) < 0.6).astype(float)}
        drift = None
    if isinstance(actor, CategoricalActor):
        base = actor.log_prob(theta, batch["x"], batch["a"])
    else:
        base = actor.log_prob(theta, batch["x"], batch["z"], batch.get("mask"))
    # old log-probs near the current ones so both clipped and unclipped terms occur
    old = base + rng.uniform(-0.3, 0.3, n)
    f = lambda t: ppo_actor_loss(actor, t, batch, old, adv, 0.2, lam, drift)
    return theta, f


def check_gradient(theta, f, h=1e-5):
    _, g = f(theta)
    num = fd_grad(lambda t: f(t)[0], theta, h)
    return rel_err(num, g)
