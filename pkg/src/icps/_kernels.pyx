# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Must stay numerically identical to ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, log2, sqrt

cnp.import_array()

BACKEND = "cython"


def cartpole_step(double x, double x_dot, double theta, double theta_dot,
                  double force, double masscart, double masspole,
                  double half_length, double gravity, double tau, int substeps):
    cdef double total_mass = masscart + masspole
    cdef double polemass_length = masspole * half_length
    cdef double dt = tau / substeps
    cdef double costh, sinth, temp, thetaacc, xacc
    cdef int i
    for i in range(substeps):
        costh = cos(theta)
        sinth = sin(theta)
        temp = (force + polemass_length * theta_dot * theta_dot * sinth) / total_mass
        thetaacc = (gravity * sinth - costh * temp) / (
            half_length * (4.0 / 3.0 - masspole * costh * costh / total_mass))
        xacc = temp - polemass_length * thetaacc * costh / total_mass
        x = x + dt * x_dot
        x_dot = x_dot + dt * xacc
        theta = theta + dt * theta_dot
        theta_dot = theta_dot + dt * thetaacc
    return x, x_dot, theta, theta_dot


def gae(double[::1] rewards, double[::1] values, double[::1] next_values,
        double[::1] dones, double[::1] cuts, double gamma, double xi):
    """Backward GAE sweep; ``cuts`` marks trajectory boundaries."""
    cdef Py_ssize_t n = rewards.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef double acc = 0.0
    cdef double delta
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        if cuts[t] != 0.0:
            acc = 0.0
        delta = rewards[t] + gamma * next_values[t] * (1.0 - dones[t]) - values[t]
        acc = delta + gamma * xi * acc
        out[t] = acc
    return out


def rate_rows(double[:, ::1] assign, double[:, ::1] power, double[:, ::1] gains,
              double noise, double bandwidth, double penalty_scale):
    """Per-user rates; penalty_scale = 0 gives Shannon, otherwise the
    finite-blocklength normal approximation scaled by sqrt(1/C) Qinv log2 e."""
    cdef Py_ssize_t n = assign.shape[0]
    cdef Py_ssize_t m = assign.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double gamma, cap, disp, r, acc
    for i in range(n):
        acc = 0.0
        for j in range(m):
            if assign[i, j] == 0.0:
                continue
            gamma = power[i, j] * gains[i, j] / noise
            cap = log2(1.0 + gamma)
            if penalty_scale != 0.0:
                disp = 1.0 - 1.0 / ((1.0 + gamma) * (1.0 + gamma))
                r = cap - sqrt(disp) * penalty_scale
                if r < 0.0:
                    r = 0.0
            else:
                r = cap
            acc = acc + r
        out[i] = bandwidth * acc
    return out
