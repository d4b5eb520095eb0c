import json

import numpy as np
import pytest

from _gen import random_operator, unit_leaf
from conefix.games import load_fixture, shapley_operator
from conefix.semidiff import (
    AffineTerm,
    MinMaxAffineOp,
    Node,
    breakpoint_radius,
    check_additive_homogeneity,
    compose,
    compose_semidiff,
    directional_derivative_fd,
    identity,
    linear,
    negate,
    power,
    semidifferential,
)

U = np.array([5.0, 0.0, 4.0])


@pytest.fixture(scope="module")
def F():
    return shapley_operator(load_fixture("fig1"))


def printed_derivative(x):
    x1, x2, x3 = x
    return np.array([0.5 * (x1 + min(x2, x3)), 0.5 * (x1 + x3), 0.5 * (x1 + x2)])


def test_evaluate_examples(F):
    np.testing.assert_array_equal(F(U), [6.0, 1.0, 5.0])
    # hand check: (max(3,4,0)+min(3,4,0))/2, (max(0,3,-7)+min(0,3,-7))/2, (3+2)/2
    np.testing.assert_array_equal(F(np.zeros(3)), [2.0, -2.0, 2.5])
    x = np.array([0.3, -7.0, 11.0])
    np.testing.assert_array_equal(identity(3)(x), x)


def test_batch_evaluation_matches_pointwise(F):
    X = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_array_equal(F(X), np.array([F(x) for x in X]))


def test_evaluate_dimension_mismatch(F):
    with pytest.raises(ValueError):
        F(np.zeros(4))


def test_fd_on_single_max():
    f = MinMaxAffineOp((Node("max", (unit_leaf(3, 0, 3), unit_leaf(3, 1, 4), unit_leaf(3, 2, 0))),), 3)
    q, stable = directional_derivative_fd(f, U, [0, 1, 1])
    assert stable
    assert q[0] == 0.0


def test_fd_linear_is_exact_at_every_step():
    L = linear([[1.0, -2.0], [0.5, 3.0]])
    x = np.array([0.7, -1.1])
    for t in (1e-1, 1e-3):
        q, _ = directional_derivative_fd(L, [1.0, 2.0], x, t_schedule=(t,))
        np.testing.assert_allclose(q, L(x), rtol=1e-9)


def test_fd_on_shapley_operator(F):
    q, stable = directional_derivative_fd(F, U, [0, 1, 0])
    assert stable
    np.testing.assert_allclose(q, [0.0, 0.0, 0.5], atol=1e-12)


def test_fd_rejects_bad_schedule(F):
    with pytest.raises(ValueError):
        directional_derivative_fd(F, U, [1, 0, 0], t_schedule=(1e-5, 1e-3))


def test_semidifferential_of_shapley_matches_printed_form(F):
    Fp, active = semidifferential(F, U)
    assert Fp.is_homogeneous
    X = np.random.default_rng(1).normal(size=(200, 3))
    np.testing.assert_allclose(Fp(X), np.array([printed_derivative(x) for x in X]), atol=1e-15)
    assert active.for_coordinate(0) == {(0,): (0,), (1,): (1, 2)}
    assert active.for_coordinate(1) == {(0,): (0,), (1,): (2,)}
    assert active.for_coordinate(2) == {(0,): (0,), (1,): (1,)}


def test_semidifferential_of_affine_is_linear_part():
    A = np.array([[1.0, -2.0], [0.5, 3.0]])
    f = linear(A, [4.0, -1.0])
    fp, _ = semidifferential(f, [3.0, 9.0])
    x = np.array([0.3, 0.8])
    np.testing.assert_allclose(fp(x), A @ x)


def test_semidifferential_with_tie_keeps_both():
    f = MinMaxAffineOp((Node("max", (unit_leaf(2, 0), unit_leaf(2, 1))),), 2)
    fp, active = semidifferential(f, [1.0, 1.0])
    assert active.for_coordinate(0) == {(): (0, 1)}
    for d in ([1, 0], [0, 1], [1, -1]):
        q, stable = directional_derivative_fd(f, [1.0, 1.0], d)
        assert stable
        assert fp(np.array(d, float))[0] == pytest.approx(q[0], abs=1e-9)
        assert fp(np.array(d, float))[0] == max(d)


def test_compose_with_identity():
    rng = np.random.default_rng(2)
    f = random_operator(rng, 3, homogeneous=True)
    X = rng.normal(size=(100, 3))
    np.testing.assert_allclose(compose(identity(3), f)(X), f(X), atol=1e-12)
    np.testing.assert_allclose(compose(f, identity(3))(X), f(X), atol=1e-12)


def test_averaging_map_is_idempotent():
    avg = linear([[0.5, 0.5], [0.5, 0.5]])
    X = np.random.default_rng(3).normal(size=(100, 2))
    assert np.max(np.abs(compose_semidiff(avg, avg)(X) - avg(X))) == 0.0


def test_compose_semidiff_requires_homogeneous():
    with pytest.raises(ValueError):
        compose_semidiff(linear(np.eye(2), [1.0, 0.0]), identity(2))


def test_compose_dimension_mismatch():
    with pytest.raises(ValueError):
        compose(identity(2), identity(3))


def test_compose_handles_negative_weights_and_offsets():
    rng = np.random.default_rng(4)
    for _ in range(30):
        g = random_operator(rng, 3)
        f = random_operator(rng, 3)
        X = rng.normal(size=(50, 3)) * 4
        np.testing.assert_allclose(compose(g, f)(X), g(f(X)), rtol=1e-12, atol=1e-10)


def test_power_shares_subtrees():
    h = random_operator(np.random.default_rng(5), 3, homogeneous=True)
    h8 = power(h, 8)
    assert len(h8.nodes()) <= 8 * 2 * len(h.nodes()) + 3
    x = np.array([0.1, -0.4, 0.9])
    y = x.copy()
    for _ in range(8):
        y = h(y)
    np.testing.assert_allclose(h8(x), y, rtol=1e-10, atol=1e-12)


def test_negate():
    e = random_operator(np.random.default_rng(6), 3).coords[0]
    X = np.random.default_rng(7).normal(size=(20, 3))
    a = MinMaxAffineOp((e,), 3)(X)
    b = MinMaxAffineOp((negate(e),), 3)(X)
    np.testing.assert_allclose(a, -b)


@pytest.mark.parametrize("seed", range(25))
def test_homogeneity_of_semidifferential(seed):
    rng = np.random.default_rng(seed)
    f = random_operator(rng, 4)
    fp, _ = semidifferential(f, rng.normal(size=4))
    x = rng.normal(size=4)
    for t in (0.5, 2.0, 7.0):
        np.testing.assert_allclose(fp(t * x), t * fp(x), rtol=1e-14, atol=1e-14)
    np.testing.assert_array_equal(fp(np.zeros(4)), 0.0)


@pytest.mark.parametrize("seed", range(25))
def test_exact_first_order_expansion(seed):
    rng = np.random.default_rng(100 + seed)
    f = random_operator(rng, 3, depth=3)
    v = rng.normal(size=3) * 2
    fp, _ = semidifferential(f, v)
    for _ in range(10):
        x = rng.normal(size=3)
        t_star = breakpoint_radius(f, v, x)
        assert t_star > 0
        t = min(t_star / 2, 1.0)
        scale = 1 + np.max(np.abs(f(v)))
        np.testing.assert_allclose(f(v + t * x), f(v) + t * fp(x), atol=1e-12 * scale)


def test_breakpoint_radius_is_tight():
    # max(x1, x2) at (1, 0) in direction (-1, 1): crossing at t = 1/2
    f = MinMaxAffineOp((Node("max", (unit_leaf(2, 0), unit_leaf(2, 1))),), 2)
    assert breakpoint_radius(f, [1.0, 0.0], [-1.0, 1.0]) == pytest.approx(0.5)
    assert breakpoint_radius(f, [1.0, 0.0], [1.0, 0.0]) == np.inf


def test_order_preservation_transfers():
    rng = np.random.default_rng(8)
    for _ in range(20):
        f = random_operator(rng, 3, nonneg=True)
        fp, _ = semidifferential(f, rng.normal(size=3))
        X = rng.normal(size=(200, 3))
        Y = X + rng.uniform(0, 2, size=X.shape)
        assert np.all(f(Y) >= f(X))
        assert np.all(fp(Y) >= fp(X))


def test_additive_homogeneity_and_nonexpansiveness_transfer():
    from _gen import random_shapley

    rng = np.random.default_rng(9)
    for _ in range(20):
        F = random_shapley(rng, int(rng.integers(2, 6)))
        Fp, _ = semidifferential(F, rng.normal(size=F.n))
        for G in (F, Fp):
            assert check_additive_homogeneity(G)
            X = rng.normal(size=(200, F.n)) * 5
            Y = rng.normal(size=(200, F.n)) * 5
            D, E = G(X) - G(Y), X - Y
            assert np.all(np.abs(D).max(1) <= np.abs(E).max(1) + 1e-12)
            assert np.all(np.ptp(D, 1) <= np.ptp(E, 1) + 1e-12)


def test_json_round_trip(F):
    data = json.loads(json.dumps(F.to_json()))
    G = MinMaxAffineOp.from_json(data)
    X = np.random.default_rng(10).normal(size=(30, 3))
    np.testing.assert_array_equal(G(X), F(X))
    assert data["coordinates"][0]["op"] == "sum"
    assert data["coordinates"][0]["children"][0]["op"] == "max"
    assert set(data["coordinates"][0]["children"][0]["children"][0]) == {"p", "r"}


@pytest.mark.parametrize(
    "payload, where",
    [
        ({"n": 2, "coordinates": [{"op": "avg", "children": [{"p": [1, 0], "r": 0}]}]}, "coordinates[0].op"),
        ({"n": 2, "coordinates": [{"op": "max", "children": []}]}, "coordinates[0].children"),
        ({"n": 2, "coordinates": [{"p": [1, 0, 0], "r": 0}]}, "coordinates[0].p"),
        (
            {"n": 2, "coordinates": [{"op": "sum", "weights": [-1], "children": [{"p": [1, 0], "r": 0}]}]},
            "coordinates[0]",
        ),
        ({"n": 0, "coordinates": []}, "'n'"),
    ],
)
def test_json_errors_name_the_field(payload, where):
    with pytest.raises(ValueError, match=where.replace("[", r"\[").replace("]", r"\]")):
        MinMaxAffineOp.from_json(payload)


def test_node_invariants():
    with pytest.raises(ValueError):
        Node("sum", (unit_leaf(2, 0),), (-0.5,))
    with pytest.raises(ValueError):
        Node("max", ())
    with pytest.raises(ValueError):
        AffineTerm([1.0, np.inf])
