"""Exhaustive enumeration on small joint instances.

A scalar plant under ZOH event control shares a tiny OFDMA downlink with one
broadband user. Objectives are the number of control updates and the summed
total BS power; both are minimised.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .network import (Allocation, NetworkConfig, required_urllc_rate, total_power,
                      user_rates)

MAX_COMBINATIONS = 1_000_000


class InstanceTooLarge(ValueError):
    pass


def small_network(**kw) -> NetworkConfig:
    base = dict(N_e=1, N_c=1, J=2, d_min=10.0, d_max=50.0)
    base.update(kw)
    return NetworkConfig(**base)


@dataclass(frozen=True)
class SmallInstance:
    gains: np.ndarray                 # (N, J), user 0 broadband, user 1 control
    levels: tuple                     # nonzero per-subcarrier power levels (W)
    steps: int = 4
    a: float = 1.2                    # x[k+1] = a x[k] + b u[k]
    b: float = 1.0
    k_fb: float = 1.0                 # u = -k_fb x when an update is sent
    x0: float = 1.0
    x_bound: float = 1.5
    config: NetworkConfig = field(default_factory=small_network)

    def __post_init__(self):
        if np.shape(self.gains) != (self.config.N, self.config.J):
            raise ValueError("gains shape does not match the network")
        if not self.levels or min(self.levels) <= 0:
            raise ValueError("power levels must be positive")


def step_allocations(inst: SmallInstance):
    """Every column-exclusive (A, P) with powers drawn from the level set."""
    N, J = inst.config.N, inst.config.J
    choices = [None] + [(n, p) for n in range(N) for p in inst.levels]
    for combo in itertools.product(choices, repeat=J):
        A = np.zeros((N, J))
        P = np.zeros((N, J))
        for j, c in enumerate(combo):
            if c is not None:
                A[c[0], j] = 1.0
                P[c[0], j] = c[1]
        yield Allocation(A, P)


def qos_met(alloc, beta, inst: SmallInstance) -> bool:
    cfg = inst.config
    rates = user_rates(alloc, inst.gains, cfg)
    ok = bool(np.all(rates[:cfg.N_e] >= cfg.R_e_min))
    if beta:
        ok = ok and bool(np.all(rates[cfg.N_e:] >= required_urllc_rate(cfg)))
    return ok and float(np.sum(alloc.P)) <= cfg.P_bs_max


def step_power_options(inst: SmallInstance, beta: int) -> np.ndarray:
    """Distinct total powers of the QoS-feasible allocations for one step."""
    vals = {round(total_power(al, inst.config), 15) for al in step_allocations(inst)
            if qos_met(al, beta, inst)}
    return np.array(sorted(vals))


def plant_feasible(betas, inst: SmallInstance) -> bool:
    x, u = inst.x0, 0.0
    for beta in betas:
        if beta:
            u = -inst.k_fb * x
        x = inst.a * x + inst.b * u
        if abs(x) > inst.x_bound:
            return False
    return True


def enumerate_points(inst: SmallInstance):
    """All feasible (updates, power) objective pairs with their beta sequences.

    Per-step power contributions are deduplicated before taking the product,
    which keeps the enumeration exact while bounding its size.
    """
    opts = {0: step_power_options(inst, 0), 1: step_power_options(inst, 1)}
    total = sum(int(np.prod([opts[b].size for b in seq]))
                for seq in itertools.product((0, 1), repeat=inst.steps))
    if total > MAX_COMBINATIONS:
        raise InstanceTooLarge(f"{total} combinations exceed {MAX_COMBINATIONS}")
    points = []
    for seq in itertools.product((0, 1), repeat=inst.steps):
        if not plant_feasible(seq, inst):
            continue
        for powers in itertools.product(*(opts[b] for b in seq)):
            points.append((sum(seq), float(sum(powers)), seq))
    return points


def pareto_front(points):
    """Nondominated subset of objective tuples (all objectives minimised)."""
    pts = sorted({tuple(p) for p in points})
    front = []
    for p in pts:
        dominated = any(all(q_i <= p_i for q_i, p_i in zip(q, p)) and q != p for q in pts)
        if not dominated:
            front.append(p)
    return front


def brute_force_pareto(inst: SmallInstance):
    return pareto_front([(u, p) for u, p, _ in enumerate_points(inst)])


def lexicographic_solution(inst: SmallInstance):
    """Fewest updates first, then least power: the cascade's decoupled order."""
    pts = enumerate_points(inst)
    if not pts:
        return None
    u_min = min(u for u, _, _ in pts)
    return min(((u, p) for u, p, _ in pts if u == u_min), key=lambda t: t[1])


def min_step_power(inst: SmallInstance, beta: int) -> float:
    opts = step_power_options(inst, beta)
    return float(opts[0]) if opts.size else float("inf")


def random_instance(rng, steps: int = 4) -> SmallInstance:
    """Random distances and a log-spread level set around the needed powers."""
    cfg = small_network()
    d = rng.uniform(cfg.d_min, cfg.d_max, cfg.N)
    gains = np.repeat((cfg.h * d ** -3.0)[:, None], cfg.J, axis=1)
    gains = gains * rng.uniform(0.5, 1.5, gains.shape)
    levels = tuple(sorted(10.0 ** rng.uniform(-9.0, -1.0, 3)))
    return SmallInstance(gains, levels, steps=steps, config=cfg)


def reference_instance() -> SmallInstance:
    """Fixed 2-user / 2-subcarrier / 3-level / 4-step instance."""
    cfg = small_network()
    d = np.array([30.0, 40.0])
    gains = np.repeat((cfg.h * d ** -3.0)[:, None], cfg.J, axis=1) * np.array([[1.0, 0.8],
                                                                                [0.9, 1.1]])
    return SmallInstance(gains, (1e-8, 2e-4, 2e-3), config=cfg)
