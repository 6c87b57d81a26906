"""Pure-Python twin of ``_kernels.pyx``, used when the extension is not built."""

import math

import numpy as np

BACKEND = "python"


def cartpole_step(x, x_dot, theta, theta_dot, force, masscart, masspole,
                  half_length, gravity, tau, substeps):
    total_mass = masscart + masspole
    polemass_length = masspole * half_length
    dt = tau / substeps
    for _ in range(substeps):
        costh = math.cos(theta)
        sinth = math.sin(theta)
        temp = (force + polemass_length * theta_dot * theta_dot * sinth) / total_mass
        thetaacc = (gravity * sinth - costh * temp) / (
            half_length * (4.0 / 3.0 - masspole * costh * costh / total_mass))
        xacc = temp - polemass_length * thetaacc * costh / total_mass
        x = x + dt * x_dot
        x_dot = x_dot + dt * xacc
        theta = theta + dt * theta_dot
        theta_dot = theta_dot + dt * thetaacc
    return x, x_dot, theta, theta_dot


def gae(rewards, values, next_values, dones, cuts, gamma, xi):
    n = len(rewards)
    out = np.zeros(n, dtype=np.float64)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        if cuts[t] != 0.0:
            acc = 0.0
        delta = rewards[t] + gamma * next_values[t] * (1.0 - dones[t]) - values[t]
        acc = delta + gamma * xi * acc
        out[t] = acc
    return out


def rate_rows(assign, power, gains, noise, bandwidth, penalty_scale):
    n, m = assign.shape
    out = np.zeros(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for j in range(m):
            if assign[i, j] == 0.0:
                continue
            gamma = float(power[i, j]) * float(gains[i, j]) / noise
            cap = math.log2(1.0 + gamma)
            if penalty_scale != 0.0:
                disp = 1.0 - 1.0 / ((1.0 + gamma) * (1.0 + gamma))
                r = cap - math.sqrt(disp) * penalty_scale
                if r < 0.0:
                    r = 0.0
            else:
                r = cap
            acc = acc + r
        out[i] = bandwidth * acc
    return out
