import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from offline_lmdp import (
    CoefLambda,
    OfflineDataset,
    PlayerBounds,
    SoftmaxPolicy,
    TabularPolicy,
    build_random_cmdp,
    exact_eval,
    oco_step,
    optimal_unconstrained,
    pi_update,
    simplex_vertex_argmin,
    softmax_at,
    w_greedy,
    zeta_greedy,
)
from offline_lmdp.players import default_alpha, default_eta, gradient_bound

finite = st.floats(-50, 50, allow_nan=False)


def _dataset(rows):
    n = len(rows)
    z = np.zeros(n, dtype=int)
    return OfflineDataset(z, z, z, np.asarray(rows, dtype=float))


def test_softmax_trivial_cases(ref_mdp):
    np.testing.assert_allclose(softmax_at(SoftmaxPolicy.uniform(5), 2, ref_mdp), np.full(3, 1 / 3), atol=1e-15)
    one = build_random_cmdp(0, (3, 1, 2, 0), 0.9)
    assert softmax_at(SoftmaxPolicy(np.array([3.0, -2.0])), 1, one).tolist() == [1.0]


def test_softmax_sharpening():
    rng = np.random.default_rng(0)
    for seed in range(20):
        mdp = build_random_cmdp(seed, (4, 3, 4, 0), 0.9)
        z = rng.normal(size=4)
        for s in range(4):
            p = softmax_at(SoftmaxPolicy(z), s, mdp)
            q = softmax_at(SoftmaxPolicy(10 * z), s, mdp)
            logits = mdp.features([s])[0] @ z
            if np.sort(logits)[-1] - np.sort(logits)[-2] > 1e-9:
                a = int(np.argmax(p))
                assert q[a] > p[a]


@given(arrays(float, 4, elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_softmax_is_stochastic(z):
    mdp = build_random_cmdp(1, (5, 3, 4, 0), 0.9)
    p = SoftmaxPolicy(z).tabular(mdp)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_pi_update_cases():
    z = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(pi_update(SoftmaxPolicy(z), np.ones(3), 0.0).z, z)
    mdp = build_random_cmdp(2, (3, 2, 3, 0), 0.9)
    alpha = 0.3
    pol = pi_update(SoftmaxPolicy.uniform(3), np.eye(3)[0], alpha)
    f = mdp.features([1])[0]
    expected = np.exp(alpha * f[:, 0]) / np.exp(alpha * f[:, 0]).sum()
    np.testing.assert_allclose(softmax_at(pol, 1, mdp), expected, atol=1e-15)
    zeta = np.array([0.2, -0.4, 1.0])
    pol = SoftmaxPolicy.uniform(3)
    for _ in range(50):
        pol = pi_update(pol, zeta, alpha)
    np.testing.assert_allclose(pol.z, 50 * alpha * zeta, atol=1e-12)


def test_pi_update_is_multiplicative_weights():
    mdp = build_random_cmdp(3, (4, 3, 3, 0), 0.9)
    rng = np.random.default_rng(1)
    pol = SoftmaxPolicy(rng.normal(size=3))
    zeta, alpha = rng.normal(size=3), 0.7
    p = pol.tabular(mdp)
    w = p * np.exp(alpha * (mdp.phi @ zeta).reshape(4, 3))
    np.testing.assert_allclose(pi_update(pol, zeta, alpha).tabular(mdp), w / w.sum(1, keepdims=True), atol=1e-12)


def test_zeta_greedy_cases():
    assert not zeta_greedy(np.zeros(3), 2.0).any()
    np.testing.assert_allclose(zeta_greedy(np.eye(3)[0], 1.0), -np.eye(3)[0])


@given(arrays(float, 5, elements=finite), st.floats(0.1, 100), st.floats(1e-3, 1e3))
def test_zeta_greedy_properties(g, radius, scale):
    z = zeta_greedy(g, radius)
    if np.linalg.norm(g) > 1e-14:
        assert np.linalg.norm(z) == pytest.approx(radius, rel=1e-12)
        np.testing.assert_allclose(zeta_greedy(scale * g, radius), z, atol=1e-9 * radius)
    else:
        assert not z.any()


def test_zeta_greedy_monte_carlo_minimality():
    rng = np.random.default_rng(2)
    g = rng.normal(size=6)
    z = zeta_greedy(g, 3.0)
    cand = rng.normal(size=(10_000, 6))
    cand *= 3.0 * rng.random((10_000, 1)) ** (1 / 6) / np.linalg.norm(cand, axis=1, keepdims=True)
    assert np.all(z @ g <= cand @ g + 1e-12)


def test_simplex_vertex_argmin_cases():
    assert simplex_vertex_argmin(np.array([0.2]), 5.0).tolist() == [0.0]
    assert simplex_vertex_argmin(np.array([0.1, -0.3]), 2.0).tolist() == [0.0, 2.0]
    assert simplex_vertex_argmin(np.array([-0.3, -0.3, 0.1]), 1.0).tolist() == [1.0, 0.0, 0.0]


@given(arrays(float, st.integers(1, 6), elements=finite), st.floats(0.0, 20))
def test_simplex_vertex_argmin_properties(g, d_w):
    w = simplex_vertex_argmin(g, d_w)
    assert np.count_nonzero(w) <= 1 and w.min() >= 0 and w.sum() <= d_w + 1e-12
    vertices = np.vstack([np.zeros(g.size), d_w * np.eye(g.size)])
    assert w @ g <= (vertices @ g).min() + 1e-12


def test_w_greedy_loads_violated_constraint():
    thetas = np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]])
    lam = np.array([0.2, 0.6])
    # J_1 estimate 0.2 < tau_1 = 0.4 is violated, J_2 estimate 0.6 > 0.3 is not
    w = w_greedy(lam, thetas, np.array([0.4, 0.3]), 3.0)
    assert w.tolist() == [3.0, 0.0]
    assert not w_greedy(lam, thetas, np.array([0.1, 0.1]), 3.0).any()
    # the (d, I) layout is accepted as well
    assert w_greedy(lam, thetas[1:].T, np.array([0.4, 0.3]), 3.0).tolist() == [3.0, 0.0]
    with pytest.raises(ValueError):
        w_greedy(lam, np.ones((4, 5)), np.array([0.4, 0.3]), 1.0)


def test_oco_trivial_cases():
    X = np.random.default_rng(3).dirichlet(np.ones(3), size=20)
    ds = _dataset(X)
    c = CoefLambda.from_coefs(np.linspace(-1, 1, 20), X, bound=1.0)
    assert np.array_equal(oco_step(c, np.zeros(3), ds, 5.0, 1.0).coefs, c.coefs)
    out = oco_step(c, np.ones(3), ds, 1e9, 1.0)
    assert np.all(out.coefs == 1.0)
    np.testing.assert_allclose(out.lam, X.mean(axis=0), atol=1e-15)


@given(st.integers(0, 2**31), st.floats(1e-3, 1e3), st.floats(0.1, 5))
def test_oco_stays_in_box(seed, eta, B):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(4), size=30)
    ds = _dataset(X)
    c = CoefLambda.zeros(30, 4, B)
    for _ in range(5):
        c = oco_step(c, rng.normal(scale=10, size=4), ds, eta, B)
        assert np.abs(c.coefs).max() <= B
        np.testing.assert_allclose(c.lam, c.coefs @ X / 30, atol=1e-12)


def _best_box_value(X, xis, B):
    """max over c in [-B, B]^n of sum_t <lambda(c), xi_t>: per-coordinate sign."""
    total = X @ xis.sum(axis=0) / X.shape[0]
    return B * np.abs(total).sum()


def _fixed_sequence_regret(n, T, eta_of, seed=4):
    rng = np.random.default_rng(seed)
    d, B = 5, 1.0
    X = rng.dirichlet(np.ones(d), size=n)
    ds = _dataset(X)
    xi = rng.normal(size=d)
    G = np.linalg.norm(xi)
    eta = eta_of(B, n, G, T)
    c = CoefLambda.zeros(n, d, B)
    earned = 0.0
    for _ in range(T):
        earned += c.lam @ xi
        c = oco_step(c, xi, ds, eta, B)
    regret = (_best_box_value(X, np.tile(xi, (T, 1)), B) - earned) / T
    return regret, 2 * B * G / math.sqrt(T)


@pytest.mark.parametrize("n", [1, 20, 200, 2000])
def test_oco_fixed_sequence_regret(n):
    regret, bound = _fixed_sequence_regret(n, 10_000, default_eta)
    assert regret <= bound + 1e-6


def test_oco_sqrt_n_step_is_too_small_for_large_n():
    """``B sqrt(n) / (G sqrt(T))`` ignores the 1/n in the coefficient gradient."""
    def step(B, n, G, T):
        return B * math.sqrt(n) / (G * math.sqrt(T))

    small, bound = _fixed_sequence_regret(4, 10_000, step)
    assert small <= bound + 1e-6
    large, bound = _fixed_sequence_regret(200, 10_000, step)
    assert large > bound


def test_oco_adversarial_sequence_regret():
    rng = np.random.default_rng(5)
    n, d, T, B, G = 100, 4, 4000, 2.0, 3.0
    X = rng.dirichlet(np.ones(d), size=n)
    ds = _dataset(X)
    xis = rng.normal(size=(T, d))
    xis *= G * rng.random((T, 1)) / np.linalg.norm(xis, axis=1, keepdims=True)
    xis[: T // 2] += 0.5  # drift so the comparator is not trivial
    xis *= G / np.maximum(G, np.linalg.norm(xis, axis=1, keepdims=True))
    eta = default_eta(B, n, G, T)
    c = CoefLambda.zeros(n, d, B)
    earned = 0.0
    for xi in xis:
        earned += c.lam @ xi
        c = oco_step(c, xi, ds, eta, B)
    assert (_best_box_value(X, xis, B) - earned) / T <= 2 * B * G / math.sqrt(T) + 1e-6


def test_mirror_descent_bound():
    rng = np.random.default_rng(6)
    T = 300
    for trial in range(20):
        S, A, d = 5, 3, 4
        mdp = build_random_cmdp(200 + trial, (S, A, d, 0), 0.9)
        d_zeta = PlayerBounds.zeta_radius(d, 0.9)
        pi_star, _ = optimal_unconstrained(mdp)
        nu_star = exact_eval(mdp, pi_star).nu
        alpha = math.sqrt(2 * math.log(A) / T) / d_zeta
        pol = SoftmaxPolicy.uniform(d)
        regret = 0.0
        for _ in range(T):
            zeta = rng.normal(size=d)
            zeta *= d_zeta * rng.random() / np.linalg.norm(zeta)
            q = (mdp.phi @ zeta).reshape(S, A)
            regret += nu_star @ ((pi_star.probs - pol.tabular(mdp)) * q).sum(axis=1)
            pol = pi_update(pol, zeta, alpha)
        assert regret <= math.log(A) / alpha + alpha * T * d_zeta**2 / 2
        assert np.linalg.norm(pol.z) <= alpha * T * d_zeta + 1e-9


def test_player_bounds():
    b = PlayerBounds.build(dim=5, num_actions=3, gamma=0.9, n=100, t_iters=400, c_star=2.0)
    assert b.d_zeta == pytest.approx(math.sqrt(5) + 0.9 * math.sqrt(5) / 0.1)
    assert b.alpha == pytest.approx(default_alpha(3, 5, 0.9, 400))
    assert b.d_pi == pytest.approx(b.alpha * 400 * b.d_zeta)
    assert b.d_w == 0.0
    G = gradient_bound(5, 0.9, b.d_zeta)
    assert b.oco_step == pytest.approx(2 * 2.0 * 100 / (G * 20))
    bc = PlayerBounds.build(dim=5, num_actions=3, gamma=0.9, n=100, t_iters=400, c_star=2.0, d_w=21.0)
    assert bc.d_zeta == pytest.approx(1 + 21 + 0.9 * math.sqrt(5) * 22 / 0.1)
    with pytest.raises(ValueError):
        PlayerBounds(1.0, 0.0, 1.0, -1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        b.with_(c_star=0.0)
