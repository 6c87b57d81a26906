"""Evaluation episodes for the learned agent and the model-based comparators.

All runners share the environment, the per-episode seeds and the trace schema,
so rows from different controllers line up step for step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baseline import LqrTriggerController, alternate_allocate, demands_for, lqr_gain
from .config import ExperimentConfig
from .csdac import Agent, uub_check
from .envmdp import JointEnv, trace_row
from .network import Allocation, validate_allocation
from .plant import A_MAT, B_MAT

SUMMARY_FIELDS = ("controller", "episodes", "mean_episode_len", "mean_updates_per_episode",
                  "mean_delivered_updates", "mean_total_power_W", "mean_transmit_power_W",
                  "constraint_violation_steps", "total_steps", "c7_ok", "c9_ok",
                  "uub_pass", "uub_fraction", "uub_max_after_T")


def episode_seed(cfg: ExperimentConfig, episode: int) -> int:
    return int(cfg.eval.seed_offset + 1000 * cfg.seed + episode)


def cap_power(alloc: Allocation, p_max: float) -> Allocation:
    """Proportional rescale onto the aggregate power cap."""
    total = float(np.sum(alloc.P))
    if total <= p_max:
        return alloc
    return Allocation(alloc.A, alloc.P * (p_max / total))


@dataclass
class Episode:
    rows: list
    length: int


def _run(cfg, episodes, mode, decide, reset=None):
    env = JointEnv(cfg.plant, cfg.network, cfg.env)
    out = []
    for ep in range(episodes):
        S0, S1, channel = env.reset(episode_seed(cfg, ep))
        if reset is not None:
            reset()
        rows = []
        state = {"beta_prev": 0, "A_prev": np.zeros((cfg.network.N, cfg.network.J))}
        done = False
        while not done:
            beta, u, alloc = decide(env, S0, S1, state)
            alloc = cap_power(alloc, cfg.network.P_bs_max)
            validate_allocation(alloc, cfg.network)
            prev = np.array(env.state)
            S0, S1, r0, r1, done, info = env.step(beta, u, alloc, mode)
            rows.append(trace_row(prev, beta, info, r0, r1))
            state["beta_prev"], state["A_prev"] = beta, np.asarray(alloc.A)
        out.append(Episode(rows, len(rows)))
    return out


def run_agent(agent: Agent, cfg: ExperimentConfig, episodes: int, mode: str):
    """Deterministic (mode/mean) rollouts of the learned policies."""
    def decide(env, S0, S1, st):
        beta, u, _ = agent.act_base(S0, st["beta_prev"], deterministic=True)
        alloc, _ = agent.act_first(S1, st["A_prev"], beta, deterministic=True)
        return beta, u, alloc

    return _run(cfg, episodes, mode, decide)


def run_baseline(cfg: ExperimentConfig, episodes: int, mode: str, periodic: bool = False):
    """LQR with event trigger (or every-step updates) plus the alternating allocator."""
    bp = cfg.baseline
    K, _ = lqr_gain(A_MAT, B_MAT, np.diag(bp.q_diag), np.array([[bp.r]]))
    ctrl = LqrTriggerController(K, cfg.plant.u_max, bp.sigma, bp.eps0)

    def decide(env, S0, S1, st):
        beta, u = ctrl.act(S0.s_c, periodic=periodic)
        res = alternate_allocate(env.channel(), demands_for(beta, cfg.network), cfg.network)
        return beta, u, res.alloc

    return _run(cfg, episodes, mode, decide, reset=ctrl.reset)


def summarize(name: str, eps, cfg: ExperimentConfig) -> dict:
    n = len(eps)
    if n == 0:
        return {"controller": name, "episodes": 0, **{k: "" for k in SUMMARY_FIELDS[2:]}}
    rows = [r for e in eps for r in e.rows]
    lens = np.array([e.length for e in eps], dtype=float)
    upd = np.array([sum(r["beta"] for r in e.rows) for e in eps], dtype=float)
    deliv = np.array([sum(r["effective_beta"] for r in e.rows) for e in eps], dtype=float)
    rho = cfg.train.rho
    verdict = uub_check([[r["constraint"] for r in e.rows] for e in eps], rho,
                        cfg.eval.uub_T, cfg.eval.uub_fraction, cfg.env.episode_len)
    transmit = np.array([r["transmit_power"] for r in rows])
    return {
        "controller": name,
        "episodes": n,
        "mean_episode_len": float(lens.mean()),
        "mean_updates_per_episode": float(upd.mean()),
        "mean_delivered_updates": float(deliv.mean()),
        "mean_total_power_W": float(np.mean([r["total_power"] for r in rows])),
        "mean_transmit_power_W": float(transmit.mean()),
        "constraint_violation_steps": int(sum(r["constraint"] > 0 for r in rows)),
        "total_steps": len(rows),
        "c7_ok": True,   # every allocation passed validate_allocation
        "c9_ok": bool(np.all(transmit <= cfg.network.P_bs_max * cfg.network.eps_bs + 1e-12)),
        "uub_pass": verdict.passed,
        "uub_fraction": verdict.fraction,
        "uub_max_after_T": verdict.max_after_T,
    }


def reduction(ours: float, theirs: float) -> float:
    """Percentage reduction of ``ours`` relative to ``theirs``."""
    if theirs == 0:
        return 0.0
    return 100.0 * (theirs - ours) / theirs
