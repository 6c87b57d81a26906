"""Single-cell OFDMA downlink model.

Users are indexed with the eMBB users first (``0 .. N_e-1``) followed by the
URLLC (control) users (``N_e .. N-1``). Rates are in bit/s, powers in watts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .plant import DomainError

LOG2_E = math.log2(math.e)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class NetworkConfig:
    N_e: int = 8
    N_c: int = 1
    J: int = 8
    w: float = 180e3
    P_bs_max: float = dbm_to_watt(44.0)
    P_cst: float = dbm_to_watt(20.0)
    eps_bs: float = 1.0
    N0: float = dbm_to_watt(-62.0)
    h: float = 0.09
    d_min: float = 10.0
    d_max: float = 50.0
    L_c: float = 70.0
    T_e2e: float = 1e-3
    T_comp_max: float = 5e-4
    C_block: float = 100.0
    eps_err: float = 1e-5
    R_e_min: float = 100.0
    mobility_std: float = 0.5

    def __post_init__(self):
        positive = ("N_e", "N_c", "J", "w", "P_bs_max", "P_cst", "N0", "h",
                    "d_min", "d_max", "L_c", "T_e2e", "T_comp_max", "C_block", "R_e_min")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"network.{name} must be positive")
        if self.eps_bs < 1.0:
            raise ConfigError("network.eps_bs must be >= 1")
        if not self.T_comp_max < self.T_e2e:
            raise ConfigError("network.T_comp_max must be smaller than network.T_e2e")
        if not 0.0 < self.eps_err < 0.5:
            raise ConfigError("network.eps_err must lie in (0, 0.5)")
        if self.d_min > self.d_max:
            raise ConfigError("network.d_min must not exceed network.d_max")
        if self.mobility_std < 0:
            raise ConfigError("network.mobility_std must be nonnegative")

    @property
    def N(self) -> int:
        return self.N_e + self.N_c

    @property
    def p_unit_max(self) -> float:
        return self.P_bs_max / self.J

    @property
    def urllc_users(self) -> range:
        return range(self.N_e, self.N)

    @property
    def fbl_penalty(self) -> float:
        """sqrt(1/C) * Qinv(eps) * log2(e): multiplies sqrt(V) in the FBL rate."""
        return math.sqrt(1.0 / self.C_block) * qinv(self.eps_err) * LOG2_E


class ChannelState(NamedTuple):
    distances: np.ndarray
    gains: np.ndarray


class Allocation(NamedTuple):
    A: np.ndarray
    P: np.ndarray


class QosStatus(NamedTuple):
    s_N: np.ndarray


def qinv(eps: float) -> float:
    """Inverse Gaussian Q-function, rational approximation (|error| < 4.5e-4)."""
    if not 0.0 < eps < 1.0:
        raise DomainError("Qinv argument must lie in (0, 1)")
    p = eps if eps <= 0.5 else 1.0 - eps
    t = math.sqrt(-2.0 * math.log(p))
    x = t - (2.515517 + 0.802853 * t + 0.010328 * t * t) / (
        1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t)
    return x if eps <= 0.5 else -x


def empty_allocation(config: NetworkConfig) -> Allocation:
    return Allocation(np.zeros((config.N, config.J)), np.zeros((config.N, config.J)))


def validate_allocation(alloc: Allocation, config: NetworkConfig) -> None:
    A, P = np.asarray(alloc.A), np.asarray(alloc.P)
    shape = (config.N, config.J)
    if A.shape != shape or P.shape != shape:
        raise DomainError(f"allocation matrices must have shape {shape}")
    if not np.all((A == 0) | (A == 1)):
        raise DomainError("assignment matrix must be binary")
    if np.any(A.sum(axis=0) > 1):
        raise DomainError("subcarrier assigned to more than one user (C7)")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise DomainError("powers must be finite and nonnegative")
    if np.any((P > 0) & (A == 0)):
        raise DomainError("positive power on an unassigned subcarrier")


def channel_gains(distances, config: NetworkConfig) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d <= 0):
        raise DomainError("distances must be positive")
    g = config.h * d ** -3.0
    return np.repeat(g[:, None], config.J, axis=1)


def snr(p, g, N0):
    return p * g / N0


def dispersion(gamma):
    return 1.0 - 1.0 / (1.0 + gamma) ** 2


def _row(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(1, -1))


def embb_rate(a_row, p_row, g_row, config: NetworkConfig) -> float:
    return float(kernels.rate_rows(_row(a_row), _row(p_row), _row(g_row),
                                   config.N0, config.w, 0.0)[0])


def urllc_rate(a_row, p_row, g_row, config: NetworkConfig) -> float:
    return float(kernels.rate_rows(_row(a_row), _row(p_row), _row(g_row),
                                   config.N0, config.w, config.fbl_penalty)[0])


def user_rates(alloc: Allocation, gains, config: NetworkConfig) -> np.ndarray:
    """Rates of every user: Shannon for eMBB rows, finite blocklength for URLLC."""
    A = np.ascontiguousarray(alloc.A, dtype=np.float64)
    P = np.ascontiguousarray(alloc.P, dtype=np.float64)
    G = np.ascontiguousarray(gains, dtype=np.float64)
    ne = config.N_e
    out = np.empty(config.N)
    out[:ne] = kernels.rate_rows(A[:ne], P[:ne], G[:ne], config.N0, config.w, 0.0)
    out[ne:] = kernels.rate_rows(A[ne:], P[ne:], G[ne:], config.N0, config.w,
                                 config.fbl_penalty)
    return out


def transmit_power(alloc: Allocation) -> float:
    return float(np.sum(np.asarray(alloc.A) * np.asarray(alloc.P)))


def total_power(alloc: Allocation, config: NetworkConfig) -> float:
    return config.P_cst + config.eps_bs * transmit_power(alloc)


def required_urllc_rate(config: NetworkConfig) -> float:
    t_c = config.T_e2e - config.T_comp_max
    if not t_c > 0:
        raise ConfigError("transmission delay budget T_e2e - T_comp_max must be positive")
    return config.L_c / t_c


def qos_from_rates(rates, beta: int, config: NetworkConfig) -> QosStatus:
    s = np.zeros(config.N)
    s[:config.N_e] = rates[:config.N_e] >= config.R_e_min
    if beta == 0:
        s[config.N_e:] = 1.0
    else:
        s[config.N_e:] = rates[config.N_e:] >= required_urllc_rate(config)
    return QosStatus(s)


def qos_status(alloc: Allocation, channel: ChannelState, beta: int,
               config: NetworkConfig) -> QosStatus:
    return qos_from_rates(user_rates(alloc, channel.gains, config), beta, config)


def reflect(d, lo: float, hi: float) -> np.ndarray:
    """Fold positions back into [lo, hi] by mirror reflection at the walls."""
    d = np.array(d, dtype=np.float64)
    span = hi - lo
    if span == 0:
        return np.full_like(d, lo)
    y = np.mod(d - lo, 2.0 * span)
    return lo + np.where(y > span, 2.0 * span - y, y)


def move_embb_users(distances, rng: np.random.Generator, config: NetworkConfig,
                    step_std: float | None = None) -> np.ndarray:
    """Gaussian radial random walk of the eMBB users; URLLC users stay put."""
    std = config.mobility_std if step_std is None else step_std
    d = np.array(distances, dtype=np.float64)
    steps = rng.normal(0.0, 1.0, size=config.N_e) * std
    d[:config.N_e] = reflect(d[:config.N_e] + steps, config.d_min, config.d_max)
    return d
