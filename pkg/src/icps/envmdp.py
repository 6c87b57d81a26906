"""Joint plant + downlink environment and the decomposed module views.

The base module sees the plant observation and decides (beta, u); the first
module sees the users' QoS status and decides (A, P). ``JointEnv.step`` takes
both decisions for one control period.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .config import EnvParams, MODES
from .network import (Allocation, ChannelState, NetworkConfig, QosStatus, channel_gains,
                      empty_allocation, move_embb_users, qos_from_rates, total_power,
                      transmit_power, user_rates, validate_allocation)
from .plant import (PlantParams, PlantState, apply_zoh, constraint_value, is_terminal,
                    step_plant)

VARIANTS = ("H0", "L0", "H1", "L1")


class BaseState(NamedTuple):
    s_c: np.ndarray
    u_held: float = 0.0


class FirstState(NamedTuple):
    s_N: np.ndarray


class AugmentedState(NamedTuple):
    variant: str
    vector: np.ndarray


def base_reward(r_ctrl: float, beta: int, mu1: float) -> float:
    if mu1 < 0:
        raise ValueError("mu1 must be nonnegative")
    return r_ctrl - mu1 * beta


def first_reward(alloc: Allocation, s_N, config: NetworkConfig, mu2: float, mu3: float,
                 urllc_weight: float = 1.0) -> float:
    if mu2 < 0 or mu3 < 0 or urllc_weight < 0:
        raise ValueError("mu2, mu3 and urllc_weight must be nonnegative")
    if transmit_power(alloc) > config.P_bs_max:
        return -mu2
    s = np.asarray(s_N.s_N if isinstance(s_N, QosStatus) else s_N, dtype=np.float64)
    served = float(np.sum(s[:config.N_e])) + urllc_weight * float(np.sum(s[config.N_e:]))
    return -total_power(alloc, config) + mu3 * served


def augment(state, prev_option, option, variant: str) -> AugmentedState:
    """Pack an augmented high/low-level state into one flat vector.

    H0: (beta[k-1], s_c)   L0: (s_c, beta[k])
    H1: (A[k-1], s_N)      L1: (s_N, A[k])
    """
    if variant == "H0":
        parts = [np.atleast_1d(float(prev_option)), _vec(state)]
    elif variant == "L0":
        parts = [_vec(state), np.atleast_1d(float(option))]
    elif variant == "H1":
        parts = [np.asarray(prev_option, dtype=np.float64).ravel(), _vec(state)]
    elif variant == "L1":
        parts = [_vec(state), np.asarray(option, dtype=np.float64).ravel()]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return AugmentedState(variant, np.concatenate(parts))


def unpack(aug: AugmentedState, state_dim: int):
    """Inverse of :func:`augment`; returns ``(state_vector, option)``."""
    v = aug.vector
    if aug.variant == "H0":
        return v[1:], int(v[0])
    if aug.variant == "L0":
        return v[:-1], int(v[-1])
    if aug.variant == "H1":
        return v[-state_dim:], v[:-state_dim]
    if aug.variant == "L1":
        return v[:state_dim], v[state_dim:]
    raise ValueError(f"unknown variant {aug.variant!r}")


def _vec(state) -> np.ndarray:
    if isinstance(state, BaseState):
        return np.asarray(state.s_c, dtype=np.float64)
    if isinstance(state, (FirstState, QosStatus)):
        return np.asarray(state.s_N, dtype=np.float64)
    return np.asarray(state, dtype=np.float64).ravel()


TRACE_FIELDS_HEAD = ("k", "x_d", "x_d_dot", "x_r", "x_r_dot", "u", "beta", "effective_beta")
TRACE_FIELDS_TAIL = ("transmit_power", "total_power", "constraint", "r0", "r1")


def trace_fields(config: NetworkConfig) -> tuple:
    return TRACE_FIELDS_HEAD + tuple(f"rate_{n}" for n in range(config.N)) + TRACE_FIELDS_TAIL


class JointEnv:
    """Cart-pole plant actuated over the OFDMA downlink.

    ``mode='coupled'`` drops a control update whose URLLC packet misses its
    rate requirement; ``mode='decoupled'`` delivers every update.
    """

    def __init__(self, plant: PlantParams, network: NetworkConfig, params: EnvParams):
        self.plant = plant
        self.network = network
        self.params = params
        self.rng = np.random.default_rng(0)
        self._ready = False

    def reset(self, seed):
        self.rng = np.random.default_rng(seed)
        r = self.params.init_range
        self.state = PlantState(*self.rng.uniform(-r, r, 4))
        cfg = self.network
        self.distances = self.rng.uniform(cfg.d_min, cfg.d_max, cfg.N)
        self.gains = channel_gains(self.distances, cfg)
        self.u_prev = 0.0
        self.beta_prev = 0
        self.A_prev = np.zeros((cfg.N, cfg.J))
        self.s_N = qos_from_rates(np.zeros(cfg.N), 0, cfg).s_N
        self.k = 0
        self._ready = True
        return self.base_state(), FirstState(self.s_N.copy()), self.channel()

    def channel(self) -> ChannelState:
        return ChannelState(self.distances.copy(), self.gains.copy())

    def base_state(self) -> BaseState:
        return BaseState(np.array(self.state, dtype=np.float64), self.u_prev)

    def step(self, beta: int, u: float, alloc: Allocation, mode: str | None = None):
        if not self._ready:
            raise RuntimeError("call reset() before step()")
        mode = mode or self.params.train_mode
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if beta not in (0, 1):
            raise ValueError("beta must be 0 or 1")
        cfg = self.network
        validate_allocation(alloc, cfg)
        rates = user_rates(alloc, self.gains, cfg)
        s_N = qos_from_rates(rates, beta, cfg).s_N
        r1 = first_reward(alloc, s_N, cfg, self.params.mu2, self.params.mu3,
                          self.params.urllc_weight)
        urllc_ok = bool(np.all(s_N[cfg.N_e:] == 1.0))
        eff_beta = beta if (mode == "decoupled" or urllc_ok) else 0
        u = float(np.clip(u, -self.plant.u_max, self.plant.u_max))
        force = apply_zoh(u, self.u_prev, eff_beta)
        disturbance = self.rng.normal() * self.plant.sigma_w
        c_now = constraint_value(self.state)
        self.state = step_plant(self.state, force, disturbance, self.plant)
        terminal = is_terminal(self.state)
        r0 = base_reward(0.0 if terminal else 1.0, beta, self.params.mu1)
        self.k += 1
        truncated = not terminal and self.k >= self.params.episode_len
        self.u_prev = force
        self.beta_prev = beta
        self.A_prev = np.asarray(alloc.A, dtype=np.float64).copy()
        self.s_N = s_N
        self.distances = move_embb_users(self.distances, self.rng, cfg)
        self.gains = channel_gains(self.distances, cfg)
        done = terminal or truncated
        if done:
            self._ready = False
        info = {
            "k": self.k - 1,
            "effective_beta": eff_beta,
            "force": force,
            "rates": rates,
            "transmit_power": cfg.eps_bs * transmit_power(alloc),
            "total_power": total_power(alloc, cfg),
            "constraint": c_now,
            "next_constraint": constraint_value(self.state),
            "terminal": terminal,
            "truncated": truncated,
            "urllc_ok": urllc_ok,
        }
        return self.base_state(), FirstState(s_N.copy()), r0, r1, done, info


def trace_row(prev_state, beta, info, r0, r1) -> dict:
    row = {
        "k": info["k"],
        "x_d": float(prev_state[0]), "x_d_dot": float(prev_state[1]),
        "x_r": float(prev_state[2]), "x_r_dot": float(prev_state[3]),
        "u": info["force"], "beta": int(beta), "effective_beta": int(info["effective_beta"]),
    }
    for n, r in enumerate(info["rates"]):
        row[f"rate_{n}"] = float(r)
    row.update(transmit_power=info["transmit_power"], total_power=info["total_power"],
               constraint=info["constraint"], r0=float(r0), r1=float(r1))
    return row


__all__ = [
    "AugmentedState", "BaseState", "FirstState", "JointEnv", "VARIANTS", "augment",
    "base_reward", "empty_allocation", "first_reward", "trace_fields", "trace_row", "unpack",
]
