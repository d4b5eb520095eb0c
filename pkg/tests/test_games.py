import json

import numpy as np
import pytest

from _gen import random_game, random_shapley
from conefix.games import (
    Arc,
    GameGraph,
    certify_bias_uniqueness,
    convergence_report,
    load_fixture,
    mean_payoff,
    shapley_operator,
    solve_additive_eigenpair,
    value_iteration,
)
from conefix.semidiff import check_additive_homogeneity, check_order_preserving, semidifferential

U = np.array([5.0, 0.0, 4.0])
PSI_MID = np.array([0.0, 1.0, 0.0])


@pytest.fixture(scope="module")
def F():
    return shapley_operator(load_fixture("fig1"))


@pytest.fixture(scope="module")
def solved(F):
    return certify_bias_uniqueness(F, solve_additive_eigenpair(F, psi=PSI_MID))


def game(n, arcs):
    return GameGraph(n, tuple(Arc(i, j, float(w)) for i, j, w in arcs))


def brute_shapley(g, x):
    out = []
    for i in range(g.n):
        vals = [a.payoff + x[a.dst] for a in g.successors(i)]
        out.append(0.5 * (max(vals) + min(vals)))
    return np.array(out)


# ---------------------------------------------------------------------------
# shapley operator


def test_fixture_shape():
    g = load_fixture("fig1")
    assert g.n == 3 and len(g.arcs) == 8
    assert g.is_strongly_connected()
    assert sorted(a.dst for a in g.successors(2)) == [0, 1]


def test_shapley_matches_direct_evaluation(F):
    g = load_fixture("fig1")
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(100, 3)) * 5:
        np.testing.assert_allclose(F(x), brute_shapley(g, x), atol=1e-12)
    np.testing.assert_array_equal(F(U), [6.0, 1.0, 5.0])


def test_single_self_loop():
    F1 = shapley_operator(game(1, [(0, 0, 7)]))
    assert F1(np.array([2.0]))[0] == 9.0


def test_two_node_swap():
    F2 = shapley_operator(game(2, [(0, 1, 0), (1, 0, 0)]))
    np.testing.assert_array_equal(F2(np.array([3.0, -1.0])), [-1.0, 3.0])


@pytest.mark.parametrize("seed", range(5))
def test_random_games_match_direct_evaluation(seed):
    rng = np.random.default_rng(seed)
    g = random_game(rng, 5)
    Fg = shapley_operator(g)
    X = rng.normal(size=(50, 5)) * 3
    np.testing.assert_allclose(Fg(X), np.array([brute_shapley(g, x) for x in X]), atol=1e-12)


# ---------------------------------------------------------------------------
# value iteration and mean payoff


def test_value_iteration_from_bias(F):
    traj = value_iteration(F, U, 10)
    assert traj.shape == (11, 3)
    for k in range(11):
        np.testing.assert_allclose(traj[k], U + k, atol=1e-9)
    for k in range(4):
        np.testing.assert_array_equal(traj[k], U + k)


def test_value_iteration_rejects_negative_steps(F):
    with pytest.raises(ValueError):
        value_iteration(F, U, -1)


def test_mean_payoff_fixture(F):
    mp = mean_payoff(F, k_max=200)
    np.testing.assert_allclose(mp.chi, 1.0, atol=1e-6)
    assert mp.converged
    # the plain Cesaro average carries an O(1/k) bias from the initial point
    assert np.max(np.abs(mp.average - 1.0)) > 1e-6


def test_mean_payoff_of_translations():
    c = [1.5, -2.0, 0.25]
    Fc = shapley_operator(game(3, [(i, i, ci) for i, ci in enumerate(c)]))
    np.testing.assert_allclose(mean_payoff(Fc, 50).chi, c, atol=1e-12)


def test_mean_payoff_of_cycle():
    Fs = shapley_operator(game(2, [(0, 1, 2), (1, 0, 0)]))
    np.testing.assert_allclose(mean_payoff(Fs, 200).chi, [1.0, 1.0], atol=1e-12)


# ---------------------------------------------------------------------------
# solver


def test_solve_fixture_middle_normalizer(solved):
    assert solved.converged
    assert np.ptp(solved.u - U) <= 1e-8
    np.testing.assert_allclose(solved.u, U, atol=1e-8)
    assert solved.mu == pytest.approx(1.0, abs=1e-8)
    assert solved.iterations <= 10_000


def test_solve_fixture_uniform_normalizer(F):
    rep = solve_additive_eigenpair(F)
    np.testing.assert_allclose(rep.u, [2.0, -3.0, 1.0], atol=1e-8)
    assert rep.u.sum() == pytest.approx(0.0, abs=1e-9)


def test_strategies_at_bias(solved):
    plus, minus = solved.strategies
    # successor values at u: node 0 -> (8, 4, 4), node 1 -> (5, 3, -3), node 2 -> (8, 2)
    assert plus == [[0], [0], [0]]
    assert minus == [[1, 2], [2], [1]]


def test_solve_single_self_loop():
    rep = solve_additive_eigenpair(shapley_operator(game(1, [(0, 0, 7)])))
    assert rep.converged and rep.mu == pytest.approx(7.0) and rep.u[0] == 0.0


def test_solve_reports_non_convergence():
    Fd = shapley_operator(game(2, [(0, 0, 1), (1, 1, 0)]))
    rep = solve_additive_eigenpair(Fd, max_iter=200)
    assert not rep.converged
    assert rep.iterations == 200
    assert rep.notes


def test_solve_rejects_bad_parameters(F):
    with pytest.raises(ValueError):
        solve_additive_eigenpair(F, theta=0.0)
    with pytest.raises(ValueError):
        solve_additive_eigenpair(F, psi=[0.5, 0.5])


@pytest.mark.parametrize("seed", range(10))
def test_solve_random_strongly_connected(seed):
    rng = np.random.default_rng(seed)
    Fg = random_shapley(rng, int(rng.integers(2, 7)))
    rep = solve_additive_eigenpair(Fg)
    if rep.converged:
        assert np.ptp(Fg(rep.u) - rep.u) <= 1e-9
        np.testing.assert_allclose(Fg(rep.u), rep.u + rep.mu, atol=1e-8)


# ---------------------------------------------------------------------------
# certification and rates


def test_certify_fixture(solved):
    assert solved.uniqueness == "holds"
    assert solved.rate_bound == pytest.approx(0.5, abs=1e-9)
    assert solved.rate_lower >= 0.5 - 1e-9
    data = json.loads(json.dumps(solved.to_json()))
    assert data["uniqueness"] == "holds" and "E_plus" in data


def test_certify_swap_fails():
    Fs = shapley_operator(game(2, [(0, 1, 0), (1, 0, 0)]))
    rep = certify_bias_uniqueness(Fs, solve_additive_eigenpair(Fs))
    assert rep.uniqueness == "fails"
    assert rep.rate_bound == pytest.approx(1.0)


def test_certify_requires_convergence():
    Fd = shapley_operator(game(2, [(0, 0, 1), (1, 1, 0)]))
    rep = solve_additive_eigenpair(Fd, max_iter=50)
    with pytest.raises(ValueError):
        certify_bias_uniqueness(Fd, rep)


def test_convergence_from_shifted_bias_is_exact(F, solved):
    rep = convergence_report(F, solved, k=5, x0s=np.array([U + 3.25]))
    assert rep.sup_errors[0] == 0.0
    assert rep.final_errors[0] == 0.0


def test_one_step_rate_is_half(F, solved):
    rep = convergence_report(F, solved, k=1, x0s=np.array([U + [0.0, 1.0, 0.0]]))
    assert rep.rates[0] == pytest.approx(0.5, abs=1e-12)


def test_convergence_report_fixture(F, solved):
    rep = convergence_report(F, solved, starts=100, k=40, seed=0)
    assert rep.max_rate <= 0.55
    assert rep.within_bound
    deep = convergence_report(F, solved, starts=100, k=60, seed=0)
    assert np.max(deep.sup_errors) <= 1e-6
    np.testing.assert_allclose(deep.normalized_drifts, deep.drifts - 60 * solved.mu)


# ---------------------------------------------------------------------------
# invariants


def test_fixture_invariants(F):
    rng = np.random.default_rng(1)
    assert check_order_preserving(F, rng, trials=1000)
    assert check_additive_homogeneity(F, rng, trials=1000)


@pytest.mark.parametrize("seed", range(10))
def test_fixed_point_inequality_at_derivative(seed):
    rng = np.random.default_rng(300 + seed)
    Fg = random_shapley(rng, int(rng.integers(2, 6)))
    Fp, _ = semidifferential(Fg, rng.normal(size=Fg.n) * 3)
    # 0 is a fixed point of the homogeneous map Fp
    X = rng.normal(size=(100, Fg.n)) * 4
    R = X - Fp(X)
    assert np.all(R.min(1) <= np.maximum(X.min(1), 0.0) + 1e-12)
    assert np.all(R.max(1) >= np.minimum(X.max(1), 0.0) - 1e-12)


# ---------------------------------------------------------------------------
# graph validation and JSON


@pytest.mark.parametrize(
    "n, arcs",
    [
        (2, [(0, 1, 0)]),
        (2, [(0, 2, 0), (1, 0, 0)]),
        (1, [(0, 0, 1), (0, 0, 2)]),
        (1, [(0, 0, float("inf"))]),
        (0, []),
    ],
)
def test_graph_validation(n, arcs):
    with pytest.raises(ValueError):
        game(n, arcs)


def test_graph_json_round_trip():
    g = load_fixture("fig1")
    assert GameGraph.from_json(json.loads(json.dumps(g.to_json()))) == g


@pytest.mark.parametrize(
    "payload, where",
    [
        ({"n": "3", "arcs": []}, "'n'"),
        ({"n": 1, "arcs": {}}, "'arcs'"),
        ({"n": 1, "arcs": [{"from": 0, "to": 0}]}, r"arcs\[0\]\.payoff"),
        ({"n": 1, "arcs": [{"from": 0.0, "to": 0, "payoff": 1}]}, r"arcs\[0\]\.from"),
    ],
)
def test_graph_json_errors(payload, where):
    with pytest.raises(ValueError, match=where):
        GameGraph.from_json(payload)


def test_disconnected_game_is_flagged():
    assert not game(2, [(0, 0, 1), (1, 1, 0)]).is_strongly_connected()
