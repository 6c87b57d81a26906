import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from icps.network import (Allocation, ConfigError, DomainError, NetworkConfig, channel_gains,
                          dbm_to_watt, dispersion, embb_rate, empty_allocation,
                          move_embb_users, qinv, qos_from_rates, qos_status, reflect,
                          required_urllc_rate, snr, total_power, transmit_power,
                          urllc_rate, user_rates, validate_allocation)

G10 = 0.09 / 10 ** 3
powers = st.floats(0.0, 3.0)
gains = st.floats(1e-7, 1e-4)


def test_dbm_conversion():
    assert dbm_to_watt(44) == pytest.approx(25.12, rel=1e-3)
    assert dbm_to_watt(20) == pytest.approx(0.1)
    assert dbm_to_watt(-62) == pytest.approx(6.3096e-10, rel=1e-4)


def test_qinv_against_scipy():
    for eps in (1e-5, 1e-3, 0.1, 0.4):
        assert qinv(eps) == pytest.approx(norm.isf(eps), abs=4.5e-4)
    assert qinv(1e-5) == pytest.approx(4.265, abs=1e-3)
    with pytest.raises(DomainError):
        qinv(0.0)


def test_gains():
    g = channel_gains([10.0, 50.0], NetworkConfig())
    assert g[0, 0] == pytest.approx(9.0e-5)
    assert g[1, 0] == pytest.approx(7.2e-7)
    with pytest.raises(DomainError):
        channel_gains([0.0], NetworkConfig())


def test_worked_rates(net):
    gam = snr(0.1, G10, net.N0)
    assert gam == pytest.approx(1.426e4, rel=1e-3)
    hand = 180e3 * math.log2(1 + gam)
    assert embb_rate([1], [0.1], [G10], net) == pytest.approx(2.484e6, rel=5e-3)
    assert embb_rate([1], [0.1], [G10], net) == pytest.approx(hand, rel=1e-12)
    pen = math.sqrt(dispersion(gam) / 100) * qinv(1e-5) * math.log2(math.e)
    assert pen == pytest.approx(0.615, abs=2e-3)
    assert urllc_rate([1], [0.1], [G10], net) == pytest.approx(2.373e6, rel=1e-2)
    assert urllc_rate([1], [0.1], [G10], net) == pytest.approx(180e3 * (math.log2(1 + gam) - pen))


def test_zero_power_zero_rate(net):
    assert embb_rate([1, 1], [0, 0], [G10, G10], net) == 0.0
    assert urllc_rate([1], [0.0], [G10], net) == 0.0
    # low SNR: the penalty exceeds capacity and the rate clamps at zero
    assert urllc_rate([1], [1e-12], [G10], net) == 0.0


@settings(max_examples=200, deadline=None)
@given(powers, powers, gains)
def test_rates_monotone_and_ordered(p1, p2, g):
    net = NetworkConfig()
    lo, hi = sorted((p1, p2))
    assert embb_rate([1], [lo], [g], net) <= embb_rate([1], [hi], [g], net)
    assert urllc_rate([1], [lo], [g], net) <= urllc_rate([1], [hi], [g], net) + 1e-9
    assert urllc_rate([1], [hi], [g], net) <= embb_rate([1], [hi], [g], net)


@given(st.floats(0, 1e7))
def test_dispersion_range(g):
    assert 0.0 <= dispersion(g) < 1.0


@given(st.floats(0, 1e150))
def test_dispersion_bounded_at_high_snr(g):
    # 1/(1+g)^2 underflows double precision eventually; the value saturates at 1
    assert 0.0 <= dispersion(g) <= 1.0


def test_total_power(net):
    assert total_power(empty_allocation(net), net) == pytest.approx(0.1)
    A = np.zeros((net.N, net.J))
    A[0, 0] = 1
    assert total_power(Allocation(A, A * 0.1), net) == pytest.approx(0.2)
    # power on unassigned entries does not count
    assert transmit_power(Allocation(A, np.full_like(A, 0.1))) == pytest.approx(0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 8), st.integers(0, 7), st.floats(0, 1), st.floats(0, 1))
def test_total_power_monotone(n, j, p, dp):
    net = NetworkConfig()
    A = np.ones((net.N, net.J))
    P = np.full((net.N, net.J), p)
    before = total_power(Allocation(A, P), net)
    P[n, j] += dp
    assert total_power(Allocation(A, P), net) >= before


def test_required_rate(net):
    assert required_urllc_rate(net) == pytest.approx(140_000.0)
    with pytest.raises(ConfigError):
        NetworkConfig(T_e2e=1e-3, T_comp_max=1e-3)


def test_validate_allocation(net):
    validate_allocation(empty_allocation(net), net)
    A = np.zeros((net.N, net.J))
    A[0, 0] = A[1, 0] = 1
    with pytest.raises(DomainError, match="C7"):
        validate_allocation(Allocation(A, A * 0), net)
    A = np.zeros((net.N, net.J))
    P = A.copy()
    P[2, 3] = 0.1
    with pytest.raises(DomainError):
        validate_allocation(Allocation(A, P), net)
    with pytest.raises(DomainError):
        validate_allocation(Allocation(np.zeros((2, 2)), np.zeros((2, 2))), net)


def test_qos(net):
    A = np.zeros((net.N, net.J))
    A[0, 0] = 1
    P = A * 2.70e-9
    ch = channel_gains(np.full(net.N, 10.0), net)
    s = qos_status(Allocation(A, P * 1.001), type("C", (), {"gains": ch})(), 0, net).s_N
    assert s[0] == 1 and s[1] == 0
    # URLLC status is vacuously satisfied when no update is requested
    assert s[net.N_e] == 1
    s1 = qos_from_rates(np.zeros(net.N), 1, net).s_N
    assert s1[net.N_e] == 0


def test_user_rates_mixed(net, rng):
    A = np.zeros((net.N, net.J))
    A[np.arange(8), np.arange(8)] = 1
    P = A * 0.01
    g = channel_gains(rng.uniform(10, 50, net.N), net)
    r = user_rates(Allocation(A, P), g, net)
    for n in range(net.N_e):
        assert r[n] == pytest.approx(embb_rate(A[n], P[n], g[n], net))
    assert r[net.N_e] == 0.0


def test_reflect_and_mobility(net, rng):
    assert reflect([50.5], 10, 50)[0] == pytest.approx(49.5)
    assert reflect([9.0], 10, 50)[0] == pytest.approx(11.0)
    d = rng.uniform(10, 50, net.N)
    assert np.array_equal(move_embb_users(d, rng, net, step_std=0.0), d)
    for _ in range(100_000 // 100):
        d = move_embb_users(d, rng, net, step_std=5.0)
        assert np.all((d >= 10) & (d <= 50))
    fixed = d[net.N_e:].copy()
    for _ in range(300):
        d = move_embb_users(d, rng, net)
    assert np.array_equal(d[net.N_e:], fixed)


def test_mobility_long_run(net):
    rng = np.random.default_rng(7)
    d = np.full(net.N, 30.0)
    lo, hi = np.inf, -np.inf
    for _ in range(100_000):
        d = move_embb_users(d, rng, net)
        lo, hi = min(lo, d.min()), max(hi, d.max())
    assert lo >= 10.0 and hi <= 50.0


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(eps_bs=0.5)
    with pytest.raises(ConfigError):
        NetworkConfig(d_min=60.0)
    assert NetworkConfig().N == 9
    assert NetworkConfig().p_unit_max == pytest.approx(25.12 / 8, rel=1e-3)
