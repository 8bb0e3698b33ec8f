import json

import numpy as np
import pytest

from offline_lmdp import (
    BehaviorDistribution,
    KnownModel,
    LinearCmdp,
    MixturePolicy,
    OfflineDataset,
    PrimalDualSolver,
    SolverConfig,
    SoftmaxPolicy,
    TabularPolicy,
    build_random_cmdp,
    evaluate_mixture,
    exact_eval,
    sample_dataset,
    solve,
    transition_matrix,
)
from offline_lmdp.solver import default_t_iters

from conftest import self_loop_mdp


@pytest.fixture(scope="module")
def run(ref_mdp, ref_behavior):
    ds = sample_dataset(ref_mdp, ref_behavior, 600, 0)
    known = KnownModel.from_mdp(ref_mdp)
    return ds, known


def test_single_state_single_action_is_optimal():
    mdp = self_loop_mdp(reward=0.4)
    ds = sample_dataset(mdp, BehaviorDistribution.uniform(1), 20, 0)
    est = PrimalDualSolver(t_iters=30).fit(ds, KnownModel.from_mdp(mdp))
    assert est.score(mdp) == pytest.approx(0.4, abs=1e-14)


def test_constrained_without_constraints_matches_unconstrained():
    mdp = build_random_cmdp(1, (5, 3, 4, 0), 0.9)
    ds = sample_dataset(mdp, BehaviorDistribution.uniform(15), 300, 0)
    known = KnownModel.from_mdp(mdp)
    plain = PrimalDualSolver(t_iters=200).fit(ds, known)
    for mode in ("constrained", "constrained_exact_feasibility"):
        cons = PrimalDualSolver(mode=mode, t_iters=200, slater_margin=0.1).fit(ds, known)
        assert cons.mixture_.zs.tobytes() == plain.mixture_.zs.tobytes()
        assert cons.trace_.ws.shape == (200, 0)


def test_constrained_config_checks_d_w(ref_mdp):
    known = KnownModel.from_mdp(ref_mdp.with_tau([0.4]))
    cfg = SolverConfig.build(known, 100, mode="constrained", phi=1.0, t_iters=5)
    with pytest.raises(ValueError, match="d_w"):
        SolverConfig(5, cfg.bounds.with_(d_w=3.0), "constrained", phi=1.0, tau_input=np.array([0.4]))


def _bandit():
    mdp = LinearCmdp(1, 4, 4, np.eye(4), np.ones((4, 1)), np.array([[0.1, 0.8, 0.5, 0.3]]), 0.5)
    known = KnownModel(mdp.features, mdp.thetas, 0.0, 0, 4, 4)
    ds = sample_dataset(mdp, BehaviorDistribution.uniform(4), 200, 0)
    return mdp, known, ds


def _bandit_values(t_iters, c_star):
    mdp, known, ds = _bandit()
    est = PrimalDualSolver(t_iters=t_iters, c_star=c_star).fit(ds, known)
    return est.predict_proba([0], known)[:, 0, :] @ mdp.thetas[0]


@pytest.mark.xfail(
    strict=True,
    reason="with the default alpha the policy needs ~200 of the 500 iterations to leave the uniform "
    "start, so the 500-iterate mixture averages about 0.68 against a best arm of 0.8",
)
def test_myopic_bandit_mixture_at_500_iterations():
    assert _bandit_values(500, 4.0).mean() >= 0.8 - 0.05


def test_myopic_bandit_last_iterate_at_500_iterations():
    assert _bandit_values(500, 4.0)[-1] >= 0.8 - 0.05


def test_myopic_bandit_mixture_converges():
    # c_star=8 is a valid (loose) bound; with the exact 4 the best arm's
    # empirical frequency 44/200 < 1/4 leaves lambda* outside the box
    assert _bandit_values(5000, 8.0).mean() >= 0.8 - 0.05


def test_determinism(run):
    ds, known = run
    a = PrimalDualSolver(t_iters=150, c_star=1.7).fit(ds, known)
    b = PrimalDualSolver(t_iters=150, c_star=1.7).fit(ds, known)
    assert a.mixture_.zs.tobytes() == b.mixture_.zs.tobytes()


def test_knowledge_boundary(run, ref_mdp):
    ds, _ = run
    seen = set()

    def features(states):
        seen.update(np.atleast_1d(states).tolist())
        return ref_mdp.features(states)

    known = KnownModel.from_mdp(ref_mdp, features=features)
    for field_name in ("psi", "phi"):
        assert not hasattr(known, field_name)
    PrimalDualSolver(t_iters=40, c_star=1.7).fit(ds, known)
    assert seen <= {ref_mdp.s0} | set(ds.next_states.tolist())
    # the oracle changes only the diagnostics
    plain = PrimalDualSolver(t_iters=40, c_star=1.7).fit(ds, KnownModel.from_mdp(ref_mdp))
    traced = PrimalDualSolver(t_iters=40, c_star=1.7).fit(ds, KnownModel.from_mdp(ref_mdp), oracle=ref_mdp)
    assert plain.mixture_.zs.tobytes() == traced.mixture_.zs.tobytes()
    assert plain.trace_.returns is None and traced.trace_.returns.shape == (40, 2)


def test_trace_and_mixture_invariants(run):
    ds, known = run
    est = PrimalDualSolver(t_iters=120, c_star=1.7).fit(ds, known)
    b, mix, tr = est.config_.bounds, est.mixture_, est.trace_
    assert len(tr) == 120 and mix.t_iters == 120
    assert not mix.zs[0].any()
    steps = np.linalg.norm(np.diff(mix.zs, axis=0), axis=1)
    assert np.all(steps <= b.alpha * b.d_zeta + 1e-12)
    assert np.all(np.linalg.norm(mix.zs, axis=1) <= b.d_pi + 1e-9)
    norms = np.linalg.norm(tr.zetas, axis=1)
    assert np.all((np.abs(norms - b.d_zeta) < 1e-9) | (norms == 0))
    assert not tr.lambdas[0].any()


def test_evaluate_mixture_cases(ref_mdp):
    rng = np.random.default_rng(0)
    z = rng.normal(size=5)
    one = MixturePolicy(z[None], 0.1)
    single = exact_eval(ref_mdp, TabularPolicy(SoftmaxPolicy(z).tabular(ref_mdp))).js
    np.testing.assert_allclose(evaluate_mixture(ref_mdp, one), single, atol=1e-12)
    same = MixturePolicy(np.tile(z, (7, 1)), 0.1)
    np.testing.assert_allclose(evaluate_mixture(ref_mdp, same), single, atol=1e-12)


def test_mixture_matches_monte_carlo(ref_mdp, ref_behavior):
    ds = sample_dataset(ref_mdp, ref_behavior, 500, 1)
    est = PrimalDualSolver(t_iters=50, c_star=1.7, alpha=0.05).fit(ds, KnownModel.from_mdp(ref_mdp))
    probs = est.mixture_.tabular(ref_mdp)
    S, A, gamma = 6, 3, ref_mdp.gamma
    rng = np.random.default_rng(2)
    episodes, horizon = 100_000, 200
    pick = rng.integers(50, size=episodes)
    cdf_pi = np.cumsum(probs, axis=2)
    cdf_p = np.cumsum(transition_matrix(ref_mdp), axis=1)
    s = np.zeros(episodes, dtype=int)
    total = np.zeros(episodes)
    disc = 1.0
    r = ref_mdp.rewards[0]
    for _ in range(horizon):
        a = np.minimum((cdf_pi[pick, s] > rng.random(episodes)[:, None]).argmax(axis=1), A - 1)
        pair = s * A + a
        total += disc * r[pair]
        s = np.minimum((cdf_p[pair] > rng.random(episodes)[:, None]).argmax(axis=1), S - 1)
        disc *= gamma
    samples = (1 - gamma) * total
    se = samples.std() / np.sqrt(episodes)
    assert abs(samples.mean() - est.score(ref_mdp)) <= 3 * se


def test_occupancy_estimate_option(run):
    ds, known = run
    a = PrimalDualSolver(t_iters=60, c_star=1.7, occupancy_estimate="dataset").fit(ds, known)
    b = PrimalDualSolver(t_iters=60, c_star=1.7).fit(ds, known)
    assert a.mixture_.zs[:1].tobytes() == b.mixture_.zs[:1].tobytes()
    assert not np.array_equal(a.mixture_.zs, b.mixture_.zs)
    with pytest.raises(ValueError):
        PrimalDualSolver(t_iters=5, occupancy_estimate="other").fit(ds, known)


def test_config_validation(run, ref_mdp):
    ds, known = run
    with pytest.raises(ValueError):
        PrimalDualSolver(mode="constrained", t_iters=5).fit(ds, known)  # needs phi
    with pytest.raises(ValueError):
        PrimalDualSolver(mode="bogus", t_iters=5).fit(ds, known)
    with pytest.raises(ValueError):
        PrimalDualSolver(t_iters=0).fit(ds, known)
    with pytest.raises(TypeError):
        PrimalDualSolver(t_iters=5).fit(ds.feature_rows, known)
    other = KnownModel.from_mdp(build_random_cmdp(0, (6, 3, 4, 0), 0.9))
    with pytest.raises(ValueError):
        PrimalDualSolver(t_iters=5).fit(ds, other)
    cfg = SolverConfig.build(known, ds.n, mode="constrained_exact_feasibility", phi=0.1, epsilon=0.1, t_iters=5)
    assert cfg.bounds.d_w == pytest.approx(40.0)
    np.testing.assert_allclose(cfg.tau_input, known.tau + 0.01)


def test_exact_feasibility_config_tightens_thresholds(ref_mdp):
    known = KnownModel.from_mdp(ref_mdp.with_tau([0.5]))
    cfg = SolverConfig.build(known, 100, mode="constrained", phi=0.05, t_iters=10)
    assert cfg.bounds.d_w == pytest.approx(21.0) and cfg.tau_input.tolist() == [0.5]


def test_default_t_iters():
    assert default_t_iters(5, 3, 0.9, 0.1) == 10_000
    assert default_t_iters(5, 3, 0.9, 10.0) == 6
    assert default_t_iters(5, 1, 0.9, 0.1) == 1


def test_sklearn_api(run, ref_mdp):
    ds, known = run
    est = PrimalDualSolver(t_iters=20, c_star=1.7)
    params = est.get_params()
    assert params["t_iters"] == 20 and params["mode"] == "unconstrained"
    est.set_params(alpha=0.01)
    assert est.alpha == 0.01
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        est.predict_proba([0], known)
    est.fit(ds, known)
    acts = est.predict(np.arange(6), known, rng=0)
    assert acts.shape == (6,) and acts.min() >= 0 and acts.max() < 3
    p = est.predict_proba(np.arange(6), known)
    assert p.shape == (20, 6, 3)
    np.testing.assert_allclose(p, est.mixture_.tabular(ref_mdp), atol=1e-15)


def test_mixture_json_round_trip(tmp_path, run):
    ds, known = run
    mix = PrimalDualSolver(t_iters=15, c_star=1.7).fit(ds, known).mixture_
    doc = json.loads(mix.to_json())
    assert set(doc) == {"alpha", "zs"} and len(doc["zs"]) == 15
    mix.save(tmp_path / "p.json")
    back = MixturePolicy.load(tmp_path / "p.json")
    assert back.zs.tobytes() == mix.zs.tobytes() and back.alpha == mix.alpha


def test_divergence_is_reported(run):
    ds, known = run
    cfg = SolverConfig.build(known, ds.n, t_iters=5, c_star=1.7)
    bad = SolverConfig(5, cfg.bounds.with_(alpha=float("inf")))
    from offline_lmdp import SolverDivergenceError

    with np.errstate(all="ignore"), pytest.raises(SolverDivergenceError, match="iteration"):
        solve(ds, known, bad)
