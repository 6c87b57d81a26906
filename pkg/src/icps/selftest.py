"""Fast built-in oracle checks, used by ``icps selftest``.

The full suite lives in the repository's tests/ directory; these checks cover
the hand-computed model values and a few gradient spot checks so an installed
copy can be sanity-checked without the test tree.
"""

from __future__ import annotations

import math

import numpy as np

from .baseline import lqr_gain, min_power_for_rate
from .csdac import compute_gae, stability_critic_loss, value_loss
from .kernels import BACKEND
from .network import (Allocation, NetworkConfig, embb_rate, empty_allocation,
                      required_urllc_rate, snr, total_power, urllc_rate)
from .neural import MLP
from .pareto import brute_force_pareto, lexicographic_solution, reference_instance
from .plant import A_MAT, B_MAT


def _close(x, ref, rel):
    return abs(x - ref) <= rel * abs(ref)


def _fd_rel_error(f, theta, g, h=1e-5):
    num = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        num[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return float(np.max(np.abs(num - g)) / max(1.0, float(np.max(np.abs(num)))))


def run_checks():
    cfg = NetworkConfig()
    g = 0.09 / 10.0 ** 3
    out = []

    def check(name, ok, detail=""):
        out.append((name, bool(ok), detail))

    check("kernel backend", BACKEND in ("cython", "python"), BACKEND)
    gam = snr(0.1, g, cfg.N0)
    check("snr 0.1 W at 10 m", _close(gam, 1.426e4, 1e-3), f"{gam:.6g}")
    r = embb_rate([1.0], [0.1], [g], cfg)
    check("eMBB rate", _close(r, 2.484e6, 5e-3), f"{r:.6g}")
    r = urllc_rate([1.0], [0.1], [g], cfg)
    check("URLLC rate", _close(r, 2.373e6, 1e-2), f"{r:.6g}")
    check("required URLLC rate", required_urllc_rate(cfg) == 140_000.0)
    check("circuit power", math.isclose(total_power(empty_allocation(cfg), cfg), 0.1))
    A = np.zeros((cfg.N, cfg.J))
    A[0, 0] = 1.0
    check("total power single entry", math.isclose(total_power(Allocation(A, A * 0.1), cfg), 0.2))
    p = min_power_for_rate(g, 100.0, cfg, "embb")
    check("eMBB min power", _close(p, 2.70e-9, 1e-2), f"{p:.4g}")
    p = min_power_for_rate(g, 140_000.0, cfg, "urllc")
    back = urllc_rate([1.0], [p], [g], cfg)
    check("URLLC round trip", abs(back - 140_000.0) < 1.0, f"{back - 140_000.0:+.3g} bit/s")
    K, _ = lqr_gain(A_MAT, B_MAT, np.diag([1.0, 1.0, 10.0, 10.0]), np.eye(1))
    rad = max(abs(np.linalg.eigvals(A_MAT - B_MAT @ K)))
    check("LQR closed loop Schur", rad < 1.0, f"rho={rad:.4f}")
    adv = compute_gae([1.0, 1.0, 1.0], [0.5, 0.5, 0.5, 0.0], gamma=0.9, xi=0.95)
    check("GAE length 3", abs(adv[0] - (0.95 + 0.855 * 0.95 + 0.5 * 0.855 ** 2)) < 1e-12)
    inst = reference_instance()
    check("Pareto lexicographic point", lexicographic_solution(inst) in brute_force_pareto(inst))

    rng = np.random.default_rng(0)
    net = MLP([3, 5, 1], rng=rng, out_scale=1.0)
    x, x2 = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    rew, done = rng.normal(size=6), (rng.random(6) < 0.3).astype(float)
    _, gv = value_loss(net, net.params, x, rew, x2, done, 0.9)
    err = _fd_rel_error(lambda t: value_loss(net, t, x, rew, x2, done, 0.9)[0], net.params, gv)
    check("value loss gradient", err < 1e-4, f"{err:.2e}")
    gnet = MLP([3, 5, 1], output="relu", rng=rng, out_scale=1.0)
    gnet.params[-1] = 2.0
    c = rng.random(6)
    _, gs = stability_critic_loss(gnet, gnet.params, x, c)
    err = _fd_rel_error(lambda t: stability_critic_loss(gnet, t, x, c)[0], gnet.params, gs)
    check("stability loss gradient", err < 1e-4, f"{err:.2e}")
    return out
