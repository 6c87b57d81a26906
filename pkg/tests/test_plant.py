import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from icps.plant import (A_MAT, B_MAT, DomainError, PlantParams, PlantState, apply_zoh,
                        constraint_value, is_terminal, linear_model_step, step_plant)

small = st.floats(-0.2, 0.2)
state_st = st.tuples(st.floats(-2.0, 2.0), st.floats(-2, 2), small, st.floats(-2, 2))


def cartpole_rhs(t, s, force, p):
    # continuous equations of motion, written out independently of the kernel
    x, xd, th, thd = s
    m_tot = p.masscart + p.masspole
    pml = p.masspole * p.half_length
    c, sn = math.cos(th), math.sin(th)
    temp = (force + pml * thd ** 2 * sn) / m_tot
    thacc = (p.gravity * sn - c * temp) / (
        p.half_length * (4.0 / 3.0 - p.masspole * c ** 2 / m_tot))
    xacc = temp - pml * thacc * c / m_tot
    return [xd, xacc, thd, thacc]


def test_rest_is_equilibrium(plant):
    assert step_plant(PlantState(0, 0, 0, 0), 0.0, 0.0, plant) == (0, 0, 0, 0)


def test_pole_falls_like_reference_integration(plant):
    s0 = (0.0, 0.0, 0.05, 0.0)
    out = step_plant(s0, 0.0, 0.0, plant)
    # reference: plain explicit Euler on the ODE with a 10x finer step
    n = 10 * plant.substeps
    dt = plant.tau / n
    s = np.array(s0)
    for _ in range(n):
        s = s + dt * np.array(cartpole_rhs(0.0, s, 0.0, plant))
    assert out.x_r > 0.05 and s[2] > 0.05
    assert abs(out.x_r - s[2]) <= 0.05 * abs(s[2])
    assert np.sign(out.x_r_dot) == np.sign(s[3])
    # an adaptive solver agrees to the same tolerance
    ref = solve_ivp(cartpole_rhs, (0, plant.tau), s0, args=(0.0, plant), rtol=1e-10, atol=1e-12)
    assert abs(out.x_r - ref.y[2, -1]) <= 0.05 * abs(ref.y[2, -1])


@settings(max_examples=200, deadline=None)
@given(state_st, st.floats(-10, 10))
def test_odd_symmetry(s, u):
    p = PlantParams()
    s = PlantState(*s)
    a = step_plant(s, u, 0.0, p)
    b = step_plant(-s, -u, 0.0, p)
    assert np.allclose(a, -b, atol=1e-12)


def test_rejects_bad_input(plant):
    with pytest.raises(DomainError):
        step_plant((0, 0, math.nan, 0), 0.0, 0.0, plant)
    with pytest.raises(DomainError):
        step_plant((0, 0, 0, 0), 10.5, 0.0, plant)
    with pytest.raises(DomainError):
        step_plant((0, 0, 0.3, 0), 0.0, 0.0, plant)


@pytest.mark.parametrize("u,prev,beta,out", [(3.0, -1.0, 0, -1.0), (3.0, -1.0, 1, 3.0),
                                            (0.0, 0.0, 1, 0.0)])
def test_zoh(u, prev, beta, out):
    assert apply_zoh(u, prev, beta) == out


def test_terminal_and_constraint():
    assert not is_terminal((2.4, 0, 0.261, 0))
    assert is_terminal((2.41, 0, 0, 0))
    assert is_terminal((0, 0, -0.262, 0))
    assert constraint_value((1.0, 5, 0, 0)) == 0.0
    assert constraint_value((-1.6, 0, 0, 0)) == pytest.approx(0.5)


def test_params_validation():
    with pytest.raises(ValueError):
        PlantParams(tau=0.2, substeps=4)
    with pytest.raises(ValueError):
        PlantParams(masspole=0.0)
    PlantParams(tau=0.1, substeps=4)


def test_linear_model_matches_matrices(rng):
    x = rng.normal(size=4)
    assert np.allclose(linear_model_step(x, 0.7), A_MAT @ x + 0.7 * B_MAT[:, 0])
    # the open-loop linear model has an unstable mode (inverted pendulum)
    assert max(abs(np.linalg.eigvals(A_MAT))) > 1.0
