"""Cascade stable double actor-critic learner.

Two option-critic learners trained with PPO on their augmented MDPs:

* base module: high-level actor chooses the update flag beta, low-level actor
  the force u; value critic V0, stability critic Gamma_C and multiplier lambda
  penalise the expected drift of Gamma_C inside the unsafe set Lambda.
* first module: high-level actor assigns subcarriers, low-level actor sets the
  per-subcarrier powers; value critic V1.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import ExperimentConfig, Hyper
from .envmdp import JointEnv
from .network import Allocation, NetworkConfig
from .neural import (MLP, SGD, Adam, categorical_head, categorical_log_prob,
                     categorical_log_prob_grad, clip_by_norm, log_softmax,
                     squash, squashed_log_prob, squashed_log_prob_grad)
from .plant import constraint_value

log = logging.getLogger(__name__)

# Fixed observation scaling for the plant state (x_d, x_d', x_r, x_r').
OBS_SCALE = np.array([2.4, 3.0, 0.261, 3.0])
LOG_FIELDS = ("iteration", "env_steps", "mean_r0", "mean_r1", "mean_episode_len",
              "mean_updates_per_episode", "mean_power_W", "constraint_violations",
              "lambda", "drift_mean")


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# actors

class CategoricalActor:
    """``n_factors`` independent categoricals over ``n_classes`` each."""

    def __init__(self, net: MLP, n_factors: int, n_classes: int):
        if net.sizes[-1] != n_factors * n_classes:
            raise ValueError("network output width does not match the factorisation")
        self.net = net
        self.n_factors = n_factors
        self.n_classes = n_classes

    @property
    def n_params(self):
        return self.net.n_params

    def logits(self, theta, x):
        out = self.net.forward(x, theta)
        return out.reshape(out.shape[:-1] + (self.n_factors, self.n_classes))

    def log_prob(self, theta, x, actions):
        lp = categorical_log_prob(self.logits(theta, x), actions)
        return lp.sum(axis=-1)

    def grad_log_prob(self, theta, x, actions, coeff):
        """Gradient of sum_i coeff_i log pi(a_i | x_i)."""
        out, cache = self.net.forward_cache(x, theta)
        logits = out.reshape(out.shape[:-1] + (self.n_factors, self.n_classes))
        g = categorical_log_prob_grad(logits, actions) * np.asarray(coeff)[:, None, None]
        return self.net.backward(cache, g.reshape(out.shape))[0]

    def sample(self, theta, x, rng, deterministic=False):
        logits = self.logits(theta, x)
        a, lp = categorical_head(logits, rng, deterministic)
        return a, float(np.sum(lp))


class GaussianActor:
    """Tanh-squashed diagonal Gaussian on ``[low, high]``.

    ``theta`` is the network parameters followed by the state-independent
    log standard deviations.
    """

    def __init__(self, net: MLP, low: float, high: float):
        self.net = net
        self.dim = net.sizes[-1]
        self.low, self.high = low, high

    @property
    def n_params(self):
        return self.net.n_params + self.dim

    def split(self, theta):
        return theta[:self.net.n_params], theta[self.net.n_params:]

    def mean(self, theta, x):
        return self.net.forward(x, self.split(theta)[0])

    def log_prob(self, theta, x, z, mask=None):
        w, log_std = self.split(theta)
        lp = squashed_log_prob(self.net.forward(x, w), log_std, z, self.low, self.high)
        if mask is not None:
            lp = lp * mask
        return lp.sum(axis=-1)

    def grad_log_prob(self, theta, x, z, coeff, mask=None):
        w, log_std = self.split(theta)
        mu, cache = self.net.forward_cache(x, w)
        d_mu, d_ls = squashed_log_prob_grad(mu, log_std, z)
        c = np.asarray(coeff)[:, None]
        if mask is not None:
            c = c * mask
        g_w = self.net.backward(cache, d_mu * c)[0]
        return np.concatenate([g_w, np.sum(d_ls * c, axis=0)])

    def sample(self, theta, x, rng, deterministic=False):
        w, log_std = self.split(theta)
        mu = self.net.forward(x, w)
        log_std = np.clip(log_std, -5.0, 2.0)
        z = mu.copy() if deterministic else mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        return squash(z, self.low, self.high), z


# ---------------------------------------------------------------------------
# losses

def compute_gae(rewards, values, bootstrap=0.0, gamma=0.99, xi=0.95, dones=None):
    """GAE over one trajectory; ``values`` may include the bootstrap value last."""
    r = np.ascontiguousarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    n = r.size
    if v.size == n + 1:
        bootstrap = float(v[-1])
        v = v[:-1]
    if v.size != n:
        raise ValueError("values must have the same length as rewards (or one more)")
    nxt = np.ascontiguousarray(np.append(v[1:], bootstrap))
    d = np.zeros(n) if dones is None else np.ascontiguousarray(dones, dtype=np.float64)
    return kernels.gae(r, np.ascontiguousarray(v), nxt, d, np.zeros(n), gamma, xi)


def value_loss(net: MLP, params, obs, rewards, next_obs, dones, gamma):
    """Mean absolute TD error and its exact (sub)gradient, bootstrap included."""
    v, c1 = net.forward_cache(obs, params)
    v2, c2 = net.forward_cache(next_obs, params)
    live = gamma * (1.0 - np.asarray(dones, dtype=np.float64))
    delta = np.asarray(rewards) + live * v2[:, 0] - v[:, 0]
    n = delta.size
    s = np.sign(delta) / n
    g = net.backward(c2, (s * live)[:, None])[0] - net.backward(c1, s[:, None])[0]
    return float(np.mean(np.abs(delta))), g


def stability_critic_loss(net: MLP, params, x, c):
    """0.5 * mean (Gamma_C(s, a) - C(s, a))^2 and its gradient."""
    out, cache = net.forward_cache(x, params)
    diff = out[:, 0] - np.asarray(c, dtype=np.float64)
    n = diff.size
    return 0.5 * float(np.mean(diff * diff)), net.backward(cache, (diff / n)[:, None])[0]


def drift_term(gc_net: MLP, gc_params, x, x_next, c, c_next, alpha3, rho):
    """Mini-batch mean of Gamma(s')I(s') - (Gamma(s) - alpha3 C(s)) I(s)."""
    ind = (np.asarray(c) >= rho).astype(np.float64)
    ind_n = (np.asarray(c_next) >= rho).astype(np.float64)
    g = gc_net.forward(x, gc_params)[:, 0]
    g_n = gc_net.forward(x_next, gc_params)[:, 0]
    return float(np.mean(g_n * ind_n - (g - alpha3 * np.asarray(c)) * ind))


def ppo_surrogate(new_logp, old_logp, adv, clip_eps):
    """Clipped surrogate mean and d(mean)/d(new_logp) per sample."""
    ratio = np.exp(new_logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    a = ratio * adv
    b = clipped * adv
    surr = np.minimum(a, b)
    active = a <= b
    n = surr.size
    return float(np.mean(surr)), np.where(active, ratio * adv, 0.0) / n


def ppo_actor_loss(actor, theta, batch, old_log_probs, advantages, clip_eps,
                   lam=0.0, drift=None):
    """Descent objective -surrogate + lambda * drift and its gradient.

    ``batch`` holds ``x`` and the actions (``a`` for categorical actors, ``z``
    and optional ``mask`` for Gaussian ones). ``drift`` is ``None`` or a
    callable ``theta -> (value, gradient)``.
    """
    if isinstance(actor, CategoricalActor):
        new = actor.log_prob(theta, batch["x"], batch["a"])
    else:
        new = actor.log_prob(theta, batch["x"], batch["z"], batch.get("mask"))
    surr, coeff = ppo_surrogate(new, old_log_probs, advantages, clip_eps)
    if isinstance(actor, CategoricalActor):
        g = -actor.grad_log_prob(theta, batch["x"], batch["a"], coeff)
    else:
        g = -actor.grad_log_prob(theta, batch["x"], batch["z"], coeff, batch.get("mask"))
    loss = -surr
    if drift is not None and lam != 0.0:
        d, dg = drift(theta)
        loss += lam * d
        g = g + lam * dg
    return loss, g


def _gc_input(obs, beta, u_unit):
    return np.concatenate([obs, np.asarray(beta, dtype=np.float64)[:, None],
                           np.asarray(u_unit, dtype=np.float64)[:, None]], axis=1)


def beta_actor_drift(actor: CategoricalActor, theta, gc_net, gc_params, lb, alpha3, rho):
    """Drift with the next option averaged under the high-level policy.

    Only the first term depends on theta:  E_b pi(b | beta_k, s') Gamma_C(s', b, u').
    """
    ind = (lb["c"] >= rho).astype(np.float64)
    ind_n = (lb["c_next"] >= rho).astype(np.float64)
    n = ind.size
    x_h = np.concatenate([lb["beta"][:, None], lb["obs_next"]], axis=1)
    out, cache = actor.net.forward_cache(x_h, theta)
    probs = np.exp(log_softmax(out))
    gam = np.stack([gc_net.forward(_gc_input(lb["obs_next"], np.full(n, b), lb["u_next"]),
                                   gc_params)[:, 0] for b in (0, 1)], axis=1)
    g_cur = gc_net.forward(lb["x"], gc_params)[:, 0]
    exp_next = np.sum(probs * gam, axis=1)
    value = float(np.mean(exp_next * ind_n - (g_cur - alpha3 * lb["c"]) * ind))
    d_logits = probs * (gam - exp_next[:, None]) * (ind_n / n)[:, None]
    return value, actor.net.backward(cache, d_logits)[0]


def force_actor_drift(actor: GaussianActor, theta, gc_net, gc_params, lb, alpha3, rho):
    """Drift with the next force reparameterised through the low-level policy."""
    ind = (lb["c"] >= rho).astype(np.float64)
    ind_n = (lb["c_next"] >= rho).astype(np.float64)
    n = ind.size
    w, log_std = actor.split(theta)
    ls = np.clip(log_std, -5.0, 2.0)
    x_l = np.concatenate([lb["obs_next"], lb["beta_next"][:, None]], axis=1)
    mu, cache = actor.net.forward_cache(x_l, w)
    z = mu[:, 0] + np.exp(ls[0]) * lb["eps_next"]
    t = np.tanh(z)
    gx = _gc_input(lb["obs_next"], lb["beta_next"], t)
    g_next, gcache = gc_net.forward_cache(gx, gc_params)
    g_cur = gc_net.forward(lb["x"], gc_params)[:, 0]
    value = float(np.mean(g_next[:, 0] * ind_n - (g_cur - alpha3 * lb["c"]) * ind))
    d_in = gc_net.backward(gcache, (ind_n / n)[:, None])[1]
    d_z = d_in[:, -1] * (1.0 - t * t)
    g_w = actor.net.backward(cache, d_z[:, None])[0]
    in_range = 1.0 if -5.0 <= log_std[0] <= 2.0 else 0.0
    g_ls = np.array([np.sum(d_z * np.exp(ls[0]) * lb["eps_next"]) * in_range])
    return value, np.concatenate([g_w, g_ls])


def lambda_update(lam: float, drift: float, lr: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return max(0.0, lam + lr * drift)


# ---------------------------------------------------------------------------
# agent

@dataclass
class AgentParams:
    theta_H0: np.ndarray
    theta_L0: np.ndarray
    theta_H1: np.ndarray
    theta_L1: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray
    upsilon: np.ndarray
    lam: float = 0.0

    GROUPS = ("theta_H0", "theta_L0", "theta_H1", "theta_L1", "omega0", "omega1", "upsilon")

    def copy(self) -> "AgentParams":
        return AgentParams(*(getattr(self, g).copy() for g in self.GROUPS), lam=self.lam)


def power_from_unit(y, p_max: float, decades: float):
    """Map y in [0, 1] onto [0, p_max] on a logarithmic scale spanning ``decades``."""
    return p_max * np.expm1(np.asarray(y) * decades * math.log(10.0)) / math.expm1(
        decades * math.log(10.0))


class Agent:
    """Networks and sampling for both modules; parameters live in ``params``."""

    def __init__(self, cfg: ExperimentConfig, rng=None):
        self.cfg = cfg
        hp = cfg.train
        net_cfg = cfg.network
        rng = rng or np.random.default_rng(cfg.seed)
        self.obs_dim = 4 + (1 if cfg.env.observe_held_force else 0)
        N, J = net_cfg.N, net_cfg.J
        self.N, self.J = N, J
        h = hp.hidden
        d0 = self.obs_dim
        self.H0 = CategoricalActor(MLP([1 + d0, h, h, 2]), 1, 2)
        self.L0 = GaussianActor(MLP([d0 + 1, h, h, 1]), -1.0, 1.0)
        self.H1 = CategoricalActor(MLP([N * J + N + 1, h, h, J * (N + 1)]), J, N + 1)
        self.L1 = GaussianActor(MLP([N + N * J + 1, h, h, J]), 0.0, 1.0)
        self.V0 = MLP([d0, h, h, 1])
        self.V1 = MLP([N + 1, h, h, 1])
        self.G = MLP([d0 + 2, h, h, 1], output="relu")
        gc = self.G.init_params(rng, 0.01)
        gc[-1] = 0.5  # positive output bias keeps the ReLU head alive at start
        self.params = AgentParams(
            theta_H0=self.H0.net.init_params(rng, 0.01),
            theta_L0=np.concatenate([self.L0.net.init_params(rng, 0.01), [hp.init_log_std]]),
            theta_H1=self.H1.net.init_params(rng, 0.01),
            theta_L1=np.concatenate([self.L1.net.init_params(rng, 0.01),
                                     np.full(J, hp.init_log_std)]),
            omega0=self.V0.init_params(rng, 1.0),
            omega1=self.V1.init_params(rng, 1.0),
            upsilon=gc,
            lam=hp.lambda_init,
        )

    # observation builders -------------------------------------------------
    def base_obs(self, S0) -> np.ndarray:
        o = np.asarray(S0.s_c, dtype=np.float64) / OBS_SCALE
        if self.obs_dim == 5:
            o = np.append(o, S0.u_held / self.cfg.plant.u_max)
        return o

    def h0_input(self, obs, beta_prev):
        return np.concatenate([[float(beta_prev)], obs])

    def l0_input(self, obs, beta):
        return np.concatenate([obs, [float(beta)]])

    def h1_input(self, s_N, A_prev, beta):
        return np.concatenate([np.asarray(A_prev, dtype=np.float64).ravel(), s_N, [float(beta)]])

    def l1_input(self, s_N, A, beta):
        return np.concatenate([s_N, np.asarray(A, dtype=np.float64).ravel(), [float(beta)]])

    def v1_input(self, s_N, beta):
        return np.concatenate([s_N, [float(beta)]])

    # acting ---------------------------------------------------------------
    def act_base(self, S0, beta_prev, rng=None, deterministic=False, params=None):
        p = params or self.params
        obs = self.base_obs(S0)
        b, lp_b = self.H0.sample(p.theta_H0, self.h0_input(obs, beta_prev), rng, deterministic)
        beta = int(b[0])
        x_l = self.l0_input(obs, beta)
        y, z = self.L0.sample(p.theta_L0, x_l, rng, deterministic)
        lp_u = float(self.L0.log_prob(p.theta_L0, x_l, z))
        u = float(y[0]) * self.cfg.plant.u_max
        return beta, u, {"beta": lp_b, "u": lp_u, "z": float(z[0]), "obs": obs}

    def act_first(self, S1, A_prev, beta, rng=None, deterministic=False, params=None):
        p = params or self.params
        N, J = self.N, self.J
        s_N = np.asarray(S1.s_N, dtype=np.float64)
        x_h = self.h1_input(s_N, A_prev, beta)
        choice, lp_a = self.H1.sample(p.theta_H1, x_h, rng, deterministic)
        A = np.zeros((N, J))
        cols = np.flatnonzero(choice < N)
        A[choice[cols], cols] = 1.0
        x_l = self.l1_input(s_N, A, beta)
        y, z = self.L1.sample(p.theta_L1, x_l, rng, deterministic)
        mask = (choice < N).astype(np.float64)
        lp_p = float(self.L1.log_prob(p.theta_L1, x_l, z, mask))
        unit = power_from_unit(y, self.cfg.network.p_unit_max, self.cfg.env.power_decades)
        P = A * (unit * mask)[None, :]
        return Allocation(A, P), {"choice": choice, "z": z, "mask": mask,
                                  "A": lp_a, "P": lp_p, "x_h": x_h, "x_l": x_l}

    # checkpoints -----------------------------------------------------------
    def nets(self):
        return {"theta_H0": self.H0.net, "theta_L0": self.L0.net, "theta_H1": self.H1.net,
                "theta_L1": self.L1.net, "omega0": self.V0, "omega1": self.V1,
                "upsilon": self.G}

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"format": "icps-checkpoint", "version": 1, "obs_dim": self.obs_dim,
                    "N": self.N, "J": self.J, "lambda": self.params.lam.hex(), "groups": {}}
        for name, net in self.nets().items():
            theta = getattr(self.params, name)
            extra = theta[net.n_params:]
            clone = MLP(net.sizes, net.output, params=theta[:net.n_params])
            clone.save(out / f"{name}.net")
            manifest["groups"][name] = {"file": f"{name}.net",
                                        "log_std": [float(v).hex() for v in extra]}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out

    def load(self, ckpt_dir) -> None:
        d = Path(ckpt_dir)
        manifest = json.loads((d / "manifest.json").read_text())
        if (manifest["obs_dim"], manifest["N"], manifest["J"]) != (self.obs_dim, self.N, self.J):
            raise ValueError("checkpoint shape does not match the configuration")
        for name, net in self.nets().items():
            entry = manifest["groups"][name]
            loaded = MLP.load(d / entry["file"])
            if loaded.sizes != net.sizes or loaded.output != net.output:
                raise ValueError(f"checkpoint group {name} has widths {loaded.sizes}, "
                                 f"expected {net.sizes}")
            extra = np.array([float.fromhex(v) for v in entry["log_std"]])
            setattr(self.params, name, np.concatenate([loaded.params, extra]))
        self.params.lam = float.fromhex(manifest["lambda"])


def act_base(S0, beta_prev, agent: Agent, deterministic=False, rng=None):
    return agent.act_base(S0, beta_prev, rng, deterministic)


def act_first(S1, A_prev, beta, agent: Agent, deterministic=False, rng=None):
    return agent.act_first(S1, A_prev, beta, rng, deterministic)


# ---------------------------------------------------------------------------
# rollouts

class Rollout:
    """Fixed-horizon on-policy buffer for both modules (D0, D_Lambda, D1)."""

    def __init__(self, H, d0, N, J):
        z = np.zeros
        self.obs = z((H, d0)); self.obs_next = z((H, d0))
        self.beta_prev = z(H); self.beta = z(H); self.z_u = z(H)
        self.lp_b = z(H); self.lp_u = z(H); self.r0 = z(H)
        self.done = z(H); self.cut = z(H); self.c = z(H); self.c_next = z(H)
        self.beta_next = z(H); self.z_next = z(H); self.eps_next = z(H)
        self.x_h1 = z((H, N * J + N + 1)); self.x_l1 = z((H, N + N * J + 1))
        self.choice = np.zeros((H, J), dtype=np.int64); self.z_p = z((H, J)); self.mask = z((H, J))
        self.lp_a = z(H); self.lp_p = z(H); self.r1 = z(H)
        self.v1_in = z((H, N + 1)); self.v1_next = z((H, N + 1))
        self.n = 0


@dataclass
class TrainResult:
    agent: Agent
    log: list = field(default_factory=list)
    stopped_by: str = "budget"


def _minibatches(rng, n, size):
    idx = rng.permutation(n)
    return [idx[i:i + size] for i in range(0, n, size)]


def _norm(a):
    return (a - a.mean()) / (a.std() + 1e-8)


class Trainer:
    """Runs rollout/update cycles for both modules."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.hp: Hyper = cfg.train
        seeds = np.random.SeedSequence(cfg.seed)
        s_init, s_act, s_mb, s_env = seeds.spawn(4)
        self.agent = Agent(cfg, np.random.default_rng(s_init))
        self.act_rng = np.random.default_rng(s_act)
        self.mb_rng = np.random.default_rng(s_mb)
        self.env_seed_rng = np.random.default_rng(s_env)
        self.env = JointEnv(cfg.plant, cfg.network, cfg.env)
        opt = Adam if self.hp.optimizer == "adam" else SGD
        hp = self.hp
        self.opt = {
            "theta_H0": opt(hp.lr_actor), "theta_L0": opt(hp.lr_actor),
            "theta_H1": opt(hp.lr_actor), "theta_L1": opt(hp.lr_actor),
            "omega0": opt(hp.lr_critic), "omega1": opt(hp.lr_critic),
            "upsilon": opt(hp.lr_stability),
        }
        self.env_steps = 0
        self.episode_open = False
        self._ep_r0 = self._ep_r1 = 0.0
        self._ep_len = self._ep_updates = 0

    # -- collection ----------------------------------------------------------
    def _reset_env(self):
        seed = int(self.env_seed_rng.integers(2**63 - 1))
        self.S0, self.S1, _ = self.env.reset(seed)
        self.beta_prev = 0
        self.A_prev = np.zeros((self.agent.N, self.agent.J))
        self.pending = None
        self.episode_open = True
        self._ep_r0 = self._ep_r1 = 0.0
        self._ep_len = self._ep_updates = 0

    def collect(self, H):
        ag, cfg, rng = self.agent, self.cfg, self.act_rng
        buf = Rollout(H, ag.obs_dim, ag.N, ag.J)
        stats = {"ep_r0": [], "ep_r1": [], "ep_len": [], "ep_updates": [],
                 "power": 0.0, "violations": 0}
        p = ag.params
        for t in range(H):
            if not self.episode_open:
                self._reset_env()
            if self.pending is None:
                self.pending = ag.act_base(self.S0, self.beta_prev, rng)
            beta, u, info_b = self.pending
            alloc, info_f = ag.act_first(self.S1, self.A_prev, beta, rng)
            s_N = np.asarray(self.S1.s_N, dtype=np.float64)
            S0n, S1n, r0, r1, done, info = self.env.step(beta, u, alloc, cfg.env.train_mode)
            self.env_steps += 1
            buf.obs[t] = info_b["obs"]
            buf.beta_prev[t] = self.beta_prev
            buf.beta[t] = beta
            buf.z_u[t] = info_b["z"]
            buf.lp_b[t] = info_b["beta"]
            buf.lp_u[t] = info_b["u"]
            buf.r0[t] = r0
            buf.done[t] = 1.0 if info["terminal"] else 0.0
            buf.c[t] = info["constraint"]
            buf.c_next[t] = info["next_constraint"]
            buf.x_h1[t] = info_f["x_h"]
            buf.x_l1[t] = info_f["x_l"]
            buf.choice[t] = info_f["choice"]
            buf.z_p[t] = info_f["z"]
            buf.mask[t] = info_f["mask"]
            buf.lp_a[t] = info_f["A"]
            buf.lp_p[t] = info_f["P"]
            buf.r1[t] = r1
            buf.v1_in[t] = ag.v1_input(s_N, beta)
            self._ep_r0 += r0
            self._ep_r1 += r1
            self._ep_len += 1
            self._ep_updates += beta
            stats["power"] += info["total_power"]
            stats["violations"] += int(info["constraint"] > 0)
            # next action at s' is needed for the drift term even at episode end
            nxt = ag.act_base(S0n, beta, rng)
            buf.obs_next[t] = nxt[2]["obs"]
            buf.beta_next[t] = nxt[0]
            buf.z_next[t] = nxt[2]["z"]
            mu_next = ag.L0.mean(p.theta_L0, ag.l0_input(nxt[2]["obs"], nxt[0]))[0]
            sd = math.exp(min(max(p.theta_L0[-1], -5.0), 2.0))
            buf.eps_next[t] = (nxt[2]["z"] - mu_next) / sd
            # first-module successor: its QoS outcome; beta[k+1] is the next base decision
            buf.v1_next[t] = ag.v1_input(np.asarray(S1n.s_N), nxt[0])
            self.beta_prev = beta
            self.A_prev = np.asarray(alloc.A)
            self.S0, self.S1 = S0n, S1n
            if done:
                buf.cut[t] = 1.0
                self.episode_open = False
                self.pending = None
                stats["ep_r0"].append(self._ep_r0)
                stats["ep_r1"].append(self._ep_r1)
                stats["ep_len"].append(self._ep_len)
                stats["ep_updates"].append(self._ep_updates)
            else:
                self.pending = nxt
        buf.cut[H - 1] = 1.0
        buf.n = H
        return buf, stats

    # -- updates -------------------------------------------------------------
    def lambda_batch(self, buf: Rollout):
        """Transitions up to the last visit of Lambda within each segment."""
        rho = self.hp.rho
        keep = np.zeros(buf.n, dtype=bool)
        start = 0
        for end in np.flatnonzero(buf.cut):
            c = buf.c[start:end + 1]
            cn = buf.c_next[start:end + 1]
            hits = np.flatnonzero((c >= rho) | (cn >= rho))
            if hits.size:
                keep[start:start + hits[-1] + 1] = True
            start = end + 1
        idx = np.flatnonzero(keep)
        u_unit = np.tanh(buf.z_u)
        u_next = np.tanh(buf.z_next)
        return idx, {
            "x": _gc_input(buf.obs, buf.beta, u_unit),
            "x_next": _gc_input(buf.obs_next, buf.beta_next, u_next),
            "c": buf.c, "c_next": buf.c_next, "beta": buf.beta, "beta_next": buf.beta_next,
            "obs_next": buf.obs_next, "u_next": u_next, "eps_next": buf.eps_next,
        }

    def _step(self, name, grad):
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"non-finite gradient in {name}")
        grad = clip_by_norm(grad, self.hp.max_grad_norm)
        p = self.agent.params
        setattr(p, name, self.opt[name].step(getattr(p, name), grad))

    def update(self, buf: Rollout):
        ag, hp = self.agent, self.hp
        p = ag.params
        n = buf.n
        # advantages (base)
        v0 = ag.V0.forward(buf.obs, p.omega0)[:, 0]
        v0n = ag.V0.forward(buf.obs_next, p.omega0)[:, 0]
        adv0 = kernels.gae(buf.r0, v0, v0n, buf.done, buf.cut, hp.gamma, hp.xi)
        adv0 = _norm(adv0)
        v1 = ag.V1.forward(buf.v1_in, p.omega1)[:, 0]
        v1n = ag.V1.forward(buf.v1_next, p.omega1)[:, 0]
        # the first module never terminates on its own; plant failures truncate it
        adv1 = kernels.gae(buf.r1, v1, v1n, np.zeros(n), buf.cut, hp.gamma1, hp.xi)
        adv1 = _norm(adv1)
        x_h0 = np.concatenate([buf.beta_prev[:, None], buf.obs], axis=1)
        x_l0 = np.concatenate([buf.obs, buf.beta[:, None]], axis=1)
        a_h0 = buf.beta.astype(np.int64)[:, None]
        z_l0 = buf.z_u[:, None]
        lam_idx, lb_all = self.lambda_batch(buf)
        drifts = []
        losses = []
        for _ in range(hp.epochs):
            for mb in _minibatches(self.mb_rng, n, hp.batch_base):
                lb = None
                if lam_idx.size:
                    pick = lam_idx[self.mb_rng.integers(0, lam_idx.size, hp.batch_lambda)]
                    lb = {k: v[pick] for k, v in lb_all.items()}
                d_h = d_l = None
                if lb is not None:
                    gp = p.upsilon

                    def d_h(theta, lb=lb, gp=gp):
                        return beta_actor_drift(ag.H0, theta, ag.G, gp, lb, hp.alpha3, hp.rho)

                    def d_l(theta, lb=lb, gp=gp):
                        return force_actor_drift(ag.L0, theta, ag.G, gp, lb, hp.alpha3, hp.rho)
                loss_h, g = ppo_actor_loss(ag.H0, p.theta_H0, {"x": x_h0[mb], "a": a_h0[mb]},
                                           buf.lp_b[mb], adv0[mb], hp.clip_eps, p.lam, d_h)
                self._step("theta_H0", g)
                loss_l, g = ppo_actor_loss(ag.L0, p.theta_L0, {"x": x_l0[mb], "z": z_l0[mb]},
                                           buf.lp_u[mb], adv0[mb], hp.clip_eps, p.lam, d_l)
                self._step("theta_L0", g)
                if lb is not None:
                    _, g = stability_critic_loss(ag.G, p.upsilon, lb["x"], lb["c"])
                    self._step("upsilon", g)
                loss_v, g = value_loss(ag.V0, p.omega0, buf.obs[mb], buf.r0[mb],
                                       buf.obs_next[mb], buf.done[mb], hp.gamma)
                self._step("omega0", g)
                if lb is not None:
                    d = drift_term(ag.G, p.upsilon, lb["x"], lb["x_next"], lb["c"],
                                   lb["c_next"], hp.alpha3, hp.rho)
                    p.lam = lambda_update(p.lam, d, hp.lr_lambda)
                    drifts.append(d)
                losses.append((loss_h, loss_l, loss_v))
            for mb in _minibatches(self.mb_rng, n, hp.batch_first):
                _, g = ppo_actor_loss(ag.H1, p.theta_H1,
                                      {"x": buf.x_h1[mb], "a": buf.choice[mb]},
                                      buf.lp_a[mb], adv1[mb], hp.clip_eps)
                self._step("theta_H1", g)
                _, g = ppo_actor_loss(ag.L1, p.theta_L1,
                                      {"x": buf.x_l1[mb], "z": buf.z_p[mb], "mask": buf.mask[mb]},
                                      buf.lp_p[mb], adv1[mb], hp.clip_eps)
                self._step("theta_L1", g)
                loss_v1, g = value_loss(ag.V1, p.omega1, buf.v1_in[mb], buf.r1[mb],
                                        buf.v1_next[mb], np.zeros(len(mb)), hp.gamma1)
                self._step("omega1", g)
        if losses and not np.all(np.isfinite(np.asarray(losses))):
            raise TrainingDiverged("non-finite loss")
        drift_mean = float(np.mean(drifts)) if drifts else 0.0
        return drift_mean, bool(lam_idx.size)

    def run(self, out_dir=None, callback=None) -> TrainResult:
        hp = self.hp
        result = TrainResult(self.agent)
        it = 0
        while self.env_steps + hp.horizon <= hp.total_steps:
            buf, stats = self.collect(hp.horizon)
            try:
                drift, had_lambda = self.update(buf)
            except TrainingDiverged:
                if out_dir is not None:
                    self.agent.save(Path(out_dir) / "diverged")
                raise
            it += 1
            eps = stats["ep_len"]
            row = {
                "iteration": it,
                "env_steps": self.env_steps,
                "mean_r0": float(np.mean(stats["ep_r0"])) if eps else float("nan"),
                "mean_r1": float(np.mean(stats["ep_r1"])) if eps else float("nan"),
                "mean_episode_len": float(np.mean(eps)) if eps else float("nan"),
                "mean_updates_per_episode": float(np.mean(stats["ep_updates"])) if eps else float("nan"),
                "mean_power_W": stats["power"] / hp.horizon,
                "constraint_violations": stats["violations"],
                "lambda": self.agent.params.lam,
                "drift_mean": drift,
            }
            result.log.append(row)
            if callback is not None:
                callback(row)
            log.info("iter %d steps %d len %.1f upd %.1f r1 %.2f lam %.3f", it,
                     self.env_steps, row["mean_episode_len"], row["mean_updates_per_episode"],
                     row["mean_r1"], row["lambda"])
            # drift condition: E[G(s')I(s') - G(s)I(s)] < -alpha3 E[C(s)I(s)]  <=>  drift < 0
            if it >= hp.min_iterations and (drift < 0.0 or not had_lambda):
                result.stopped_by = "drift"
                break
        return result


def train(cfg: ExperimentConfig, out_dir=None, callback=None) -> TrainResult:
    return Trainer(cfg).run(out_dir, callback)


# ---------------------------------------------------------------------------
# UUB check

@dataclass
class UubVerdict:
    passed: bool
    episodes: int
    passing_episodes: int
    fraction: float
    max_after_T: float
    violations: int


def uub_check(trajectories, rho: float, T: int, fraction: float,
              horizon: int | None = None) -> UubVerdict:
    """Empirical ultimate-boundedness test on constraint trajectories.

    An episode passes when C(s[k]) < rho for every k >= T it reached. With
    ``horizon`` set, an episode that ended early (plant failure) also fails.
    """
    passing = 0
    worst = 0.0
    violations = 0
    for traj in trajectories:
        full = np.asarray(traj, dtype=np.float64)
        tail = full[T:]
        bad = int(np.sum(tail >= rho))
        violations += bad
        if tail.size:
            worst = max(worst, float(tail.max()))
        passing += bad == 0 and (horizon is None or full.size >= horizon)
    n = len(trajectories)
    frac = passing / n if n else 1.0
    return UubVerdict(frac >= fraction, n, passing, frac, worst, violations)
