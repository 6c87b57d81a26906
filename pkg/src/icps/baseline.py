"""Disjoint model-based comparator: LQR with a relative event trigger, and an
alternating subcarrier-then-power allocator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .network import (Allocation, ChannelState, NetworkConfig, embb_rate, empty_allocation,
                      required_urllc_rate, total_power, urllc_rate, user_rates)
from .plant import DomainError

INFEASIBLE = math.inf
# Powers handed out by the allocator are inflated by this factor so that the
# round-off in the closed-form inverse never leaves a user just below demand.
POWER_MARGIN = 1.0 + 1e-9


class LqrError(RuntimeError):
    pass


def riccati_map(P, A, B, Q, R):
    BtP = B.T @ P
    gain = np.linalg.solve(R + BtP @ B, BtP @ A)
    return Q + A.T @ P @ A - A.T @ P @ B @ gain


def lqr_gain(A, B, Q, R, tol=1e-10, max_iter=10_000):
    """Discrete-time LQR gain from fixed-point iteration of the Riccati map.

    Returns ``(K, P)``; the control law is ``u = -K x``.
    """
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    P = Q.copy()
    for _ in range(max_iter):
        P_next = riccati_map(P, A, B, Q, R)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        if np.max(np.abs(P_next - P)) < tol:
            P = P_next
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return K, P
        P = P_next
    raise LqrError(f"Riccati iteration did not converge in {max_iter} iterations")


def event_trigger(x_current, x_last_sent, sigma: float, eps0: float) -> int:
    """Relative threshold trigger: fire when the sent state is stale enough."""
    x = np.asarray(x_current, dtype=np.float64)
    gap = np.linalg.norm(x - np.asarray(x_last_sent, dtype=np.float64))
    return int(gap > sigma * np.linalg.norm(x) + eps0)


@dataclass
class LqrTriggerController:
    """u = -K x sent only when the event trigger fires; ZOH in between."""

    K: np.ndarray
    u_max: float
    sigma: float = 0.1
    eps0: float = 1e-3

    def __post_init__(self):
        self.reset()

    def reset(self):
        self.x_last = np.zeros(self.K.shape[1])

    def act(self, x, periodic=False):
        x = np.asarray(x, dtype=np.float64)
        beta = 1 if periodic else event_trigger(x, self.x_last, self.sigma, self.eps0)
        u = float(np.clip(-(self.K @ x)[0], -self.u_max, self.u_max))
        if beta:
            self.x_last = x.copy()
        return beta, u


def min_power_for_rate(g: float, rate_demand: float, config: NetworkConfig,
                       rate_kind: str = "embb", tol: float = 1.0) -> float:
    """Smallest single-subcarrier power reaching ``rate_demand`` bit/s.

    Returns ``INFEASIBLE`` when even ``p_unit_max`` does not suffice.
    """
    if not rate_demand > 0:
        raise DomainError("rate demand must be positive")
    p_cap = config.p_unit_max
    if rate_kind == "embb":
        p = config.N0 * math.expm1(rate_demand / config.w * math.log(2.0)) / g
        return p if p <= p_cap else INFEASIBLE
    if rate_kind != "urllc":
        raise ValueError(f"unknown rate kind {rate_kind!r}")

    def rate(p):
        return urllc_rate([1.0], [p], [g], config)

    if rate(p_cap) < rate_demand:
        return INFEASIBLE
    lo, hi = 0.0, p_cap
    for _ in range(400):
        if rate(hi) - rate_demand < tol:
            break
        mid = 0.5 * (lo + hi)
        if rate(mid) >= rate_demand:
            hi = mid
        else:
            lo = mid
    return hi


def demands_for(beta: int, config: NetworkConfig) -> np.ndarray:
    d = np.zeros(config.N)
    d[:config.N_e] = config.R_e_min
    if beta:
        d[config.N_e:] = required_urllc_rate(config)
    return d


@dataclass
class AllocationResult:
    alloc: Allocation
    feasible: bool
    unserved: tuple
    iterations: int
    power: float


def _assign(gains, demands, user_power, config):
    """Give each subcarrier to the highest-priority demanding user still unmet.

    URLLC users outrank eMBB users; within a class the highest gain wins.
    """
    N, J = config.N, config.J
    A = np.zeros((N, J))
    rate = np.zeros(N)
    fbl = np.zeros(N, dtype=bool)
    fbl[config.N_e:] = True
    for j in range(J):
        unmet = [n for n in range(N) if demands[n] > 0 and rate[n] < demands[n]
                 and user_power[n] < INFEASIBLE]
        if not unmet:
            break
        n = max(unmet, key=lambda i: (fbl[i], gains[i, j], -i))
        A[n, j] = 1.0
        rate_fn = urllc_rate if fbl[n] else embb_rate
        rate[n] = rate_fn(A[n], A[n] * user_power[n], gains[n], config)
    return A


def alternate_allocate(channel: ChannelState, demands, config: NetworkConfig,
                       max_iter: int = 100, tol: float = 1e-9) -> AllocationResult:
    """Alternate subcarrier assignment (powers fixed) and minimum-power
    allocation (assignment fixed) until the total power settles."""
    demands = np.asarray(demands, dtype=np.float64)
    gains = np.asarray(channel.gains, dtype=np.float64)
    N, J = config.N, config.J
    if not np.any(demands > 0):
        empty = empty_allocation(config)
        return AllocationResult(empty, True, (), 0, total_power(empty, config))
    user_power = np.where(demands > 0, config.p_unit_max, 0.0)
    prev = math.inf
    A = np.zeros((N, J))
    P = np.zeros((N, J))
    it = 0
    for it in range(1, max_iter + 1):
        A = _assign(gains, demands, user_power, config)
        P = np.zeros((N, J))
        for n in range(N):
            cols = np.flatnonzero(A[n])
            if demands[n] <= 0 or cols.size == 0:
                A[n] = 0.0
                continue
            kind = "urllc" if n >= config.N_e else "embb"
            per = demands[n] / cols.size
            ps = [min_power_for_rate(gains[n, j], per, config, kind) for j in cols]
            if any(p == INFEASIBLE for p in ps):
                A[n] = 0.0
                user_power[n] = INFEASIBLE
                continue
            P[n, cols] = np.asarray(ps) * POWER_MARGIN
            user_power[n] = max(ps) * POWER_MARGIN
        total = float(np.sum(P))
        if abs(total - prev) < tol:
            break
        prev = total
    alloc = Allocation(A, P)
    rates = user_rates(alloc, gains, config)
    unserved = tuple(int(n) for n in range(N) if demands[n] > 0 and rates[n] < demands[n])
    feasible = not unserved and float(np.sum(P)) <= config.P_bs_max
    return AllocationResult(alloc, feasible, unserved, it, total_power(alloc, config))
