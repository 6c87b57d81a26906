"""Cart-pole control plant with zero-order-hold event actuation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels

ANGLE_LIMIT = 0.261  # rad
POSITION_LIMIT = 2.4  # m
SAFE_POSITION = 1.1  # m, constraint function is zero inside |x_d| <= SAFE_POSITION


class DomainError(ValueError):
    """Raised for inputs outside an operation's mathematical domain."""


class PlantState(NamedTuple):
    x_d: float
    x_d_dot: float
    x_r: float
    x_r_dot: float

    def __neg__(self) -> "PlantState":
        return PlantState(-self.x_d, -self.x_d_dot, -self.x_r, -self.x_r_dot)

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


class ActuatorCommand(NamedTuple):
    u: float
    beta: int


@dataclass(frozen=True)
class PlantParams:
    masscart: float = 1.0
    masspole: float = 0.1
    half_length: float = 0.5
    gravity: float = 9.8
    u_max: float = 10.0
    tau: float = 1.0 / 12.0
    substeps: int = 4
    sigma_w: float = 0.05

    def __post_init__(self):
        for name in ("masscart", "masspole", "half_length", "gravity", "u_max", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"plant.{name} must be positive")
        if self.sigma_w < 0:
            raise ValueError("plant.sigma_w must be nonnegative")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("plant.substeps must be a positive integer")
        if self.tau / self.substeps > 0.025 + 1e-15:
            raise ValueError("plant.tau / plant.substeps must not exceed 0.025 s")


# Discrete-time linearised cart-pole (0.1 s sampling), state (x_d, x_d', x_r, x_r').
A_MAT = np.array([
    [1.0, 0.1, -0.0166, -0.0005],
    [0.0, 1.0, -0.3374, -0.0166],
    [0.0, 0.0, 1.0996, 0.1033],
    [0.0, 0.0, 2.0247, 1.0996],
])
B_MAT = np.array([[0.0045], [0.0896], [-0.0068], [-0.1377]])
C_MAT = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
])


@dataclass(frozen=True)
class LinearModel:
    A_mat: np.ndarray = A_MAT
    B_mat: np.ndarray = B_MAT
    C_mat: np.ndarray = C_MAT


def step_plant(state, command_force: float, disturbance: float,
               params: PlantParams) -> PlantState:
    """Advance the plant one control period under a constant applied force."""
    s = tuple(float(v) for v in state)
    if len(s) != 4 or not all(math.isfinite(v) for v in s):
        raise DomainError(f"plant state must be 4 finite numbers, got {state!r}")
    if not (math.isfinite(command_force) and math.isfinite(disturbance)):
        raise DomainError("force and disturbance must be finite")
    if abs(command_force) > params.u_max:
        raise DomainError(f"|force| {command_force} exceeds u_max {params.u_max}")
    if is_terminal(s):
        raise DomainError("cannot step a terminal state")
    out = kernels.cartpole_step(
        s[0], s[1], s[2], s[3], command_force + disturbance,
        params.masscart, params.masspole, params.half_length, params.gravity,
        params.tau, int(params.substeps))
    return PlantState(*out)


def apply_zoh(u_candidate: float, u_prev: float, beta: int) -> float:
    """Zero-order hold: take the new input on an update, else keep the old one."""
    return u_candidate if beta == 1 else u_prev


def is_terminal(state) -> bool:
    return abs(state[2]) > ANGLE_LIMIT or abs(state[0]) > POSITION_LIMIT


def linear_model_step(x, u: float, model: LinearModel = LinearModel()) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(4)
    return model.A_mat @ x + model.B_mat[:, 0] * float(u)


def constraint_value(state) -> float:
    return max(abs(float(state[0])) - SAFE_POSITION, 0.0)
