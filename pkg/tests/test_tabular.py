import numpy as np
import pytest

from icps.tabular import (compare_estimates, discounted_sum, exact_value, factorisation_test,
                          high_level_view, low_level_view, random_mdp, record_trajectory)


@pytest.fixture(scope="module")
def mdp():
    return random_mdp(np.random.default_rng(11))


def test_kernels_are_stochastic(mdp):
    assert np.allclose(mdp.high_kernel().sum(-1), 1)
    assert np.allclose(mdp.low_kernel().sum(axis=(-2, -1)), 1)


def test_three_estimators_agree(mdp):
    est = compare_estimates(mdp, n=20_000, horizon=80, seed=1)
    exact = exact_value(mdp)
    for name, (m, se) in est.items():
        assert abs(m - exact) <= 4 * se, name


def test_resummation_exact(mdp):
    traj = record_trajectory(mdp, 200, np.random.default_rng(3))
    native = discounted_sum([r for _, _, _, r, _ in traj], mdp.gamma)
    hi = discounted_sum([r for _, _, r in high_level_view(traj, mdp.o_init)], mdp.gamma)
    lo = discounted_sum([r for _, _, r in low_level_view(traj)], mdp.gamma)
    assert abs(native - hi) <= 1e-12 and abs(native - lo) <= 1e-12
    # the augmented states carry the native state and options
    for (aug, o, _), (s, o2, *_ ) in zip(high_level_view(traj), traj):
        assert aug[1] == s and o == o2


def test_factorisation_not_rejected(mdp):
    for ctx in [(0, 0), (1, 2), (0, 3)]:
        _, p, _ = factorisation_test(mdp, n=100_000, seed=sum(ctx), context=ctx)
        assert p > 0.01


def test_factorisation_detects_wrong_model(mdp):
    # a kernel that ignores the option must be rejected by the same test
    wrong = mdp.__class__(mdp.P, mdp.R, mdp.pi_H,
                          np.roll(mdp.pi_L, 1, axis=1), mdp.mu0, gamma=mdp.gamma)
    from icps import tabular
    import scipy.stats as ss
    rng = np.random.default_rng(0)
    n = 100_000
    o = rng.choice(2, n, p=mdp.pi_H[0, 0])
    a = np.array([rng.choice(2, p=mdp.pi_L[0, oo]) for oo in o[:20000]])
    s2 = np.array([rng.choice(4, p=mdp.P[0, aa]) for aa in a])
    obs = np.bincount(o[:20000] * 4 + s2, minlength=8)
    exp = (mdp.pi_H[0, 0][:, None] * wrong.high_kernel()[0]).ravel() * 20000
    if np.allclose(wrong.high_kernel()[0], mdp.high_kernel()[0], atol=1e-3):
        pytest.skip("rolled policy coincides with the original")
    assert ss.chisquare(obs, exp).pvalue < 0.01
