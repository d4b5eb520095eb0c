"""Piecewise-affine operators built from max/min/sum trees and their semidifferentials.

An operator R^n -> R^m is a tuple of expression trees. Leaves are affine
forms ``p.x + r``; internal nodes take the max, the min, or a nonnegative
weighted sum of their children. Subtrees may be shared, so an operator is in
general a DAG (powers built by :func:`power` rely on this to stay small).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cone_metrics import as_vector

ACTIVE_TOL = 1e-9
OPS = ("max", "min", "sum")


@dataclass(frozen=True, eq=False, repr=False)
class AffineTerm:
    """Leaf ``x -> p.x + r``."""

    p: np.ndarray
    r: float = 0.0

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1)
        if not np.all(np.isfinite(p)) or not np.isfinite(self.r):
            raise ValueError("affine term must have finite weights and offset")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", float(self.r))

    def __repr__(self):
        return f"AffineTerm(p={self.p.tolist()}, r={self.r})"


@dataclass(frozen=True, eq=False, repr=False)
class Node:
    op: str
    children: Tuple["Expr", ...]
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown node op {self.op!r}")
        children = tuple(self.children)
        if not children:
            raise ValueError(f"{self.op} node needs at least one child")
        object.__setattr__(self, "children", children)
        if self.op == "sum":
            if self.weights is None or len(self.weights) != len(children):
                raise ValueError("sum node needs one weight per child")
            w = tuple(float(a) for a in self.weights)
            if any(not np.isfinite(a) or a < 0 for a in w):
                raise ValueError("sum weights must be finite and nonnegative")
            object.__setattr__(self, "weights", w)
        elif self.weights is not None:
            raise ValueError(f"{self.op} node takes no weights")

    def __repr__(self):
        # children may be shared many times over; never expand them
        return f"Node({self.op!r}, {len(self.children)} children)"


Expr = Union[AffineTerm, Node]


def vmax(*children: Expr) -> Node:
    return Node("max", children)


def vmin(*children: Expr) -> Node:
    return Node("min", children)


def wsum(weights: Sequence[float], children: Sequence[Expr]) -> Node:
    return Node("sum", tuple(children), tuple(weights))


def _postorder(roots: Sequence[Expr]) -> List[Expr]:
    """Unique nodes of the DAG, children before parents."""
    seen = set()
    order: List[Expr] = []
    stack = [(r, False) for r in reversed(roots)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded or isinstance(node, AffineTerm):
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return order


class _Program:
    """Flattened DAG: leaves evaluated with one matmul, internal nodes in order."""

    def __init__(self, roots: Sequence[Expr], n: int):
        self.order = _postorder(roots)
        self.slot = {id(node): k for k, node in enumerate(self.order)}
        self.leaf_slots = np.array(
            [k for k, nd in enumerate(self.order) if isinstance(nd, AffineTerm)], dtype=int
        )
        leaves = [self.order[k] for k in self.leaf_slots]
        self.P = np.array([lf.p for lf in leaves]).reshape(len(leaves), n)
        self.R = np.array([lf.r for lf in leaves])
        self.steps = []
        for k, nd in enumerate(self.order):
            if isinstance(nd, Node):
                kids = np.array([self.slot[id(c)] for c in nd.children], dtype=int)
                w = None if nd.weights is None else np.array(nd.weights)
                self.steps.append((k, nd.op, kids, w))
        self.roots = np.array([self.slot[id(r)] for r in roots], dtype=int)

    def node_values(self, X: np.ndarray) -> np.ndarray:
        """Values of every node; X has shape (m, n), result (num_nodes, m)."""
        vals = np.empty((len(self.order), X.shape[0]))
        vals[self.leaf_slots] = self.P @ X.T + self.R[:, None]
        for k, op, kids, w in self.steps:
            if op == "max":
                vals[k] = vals[kids].max(axis=0)
            elif op == "min":
                vals[k] = vals[kids].min(axis=0)
            else:
                vals[k] = w @ vals[kids]
        return vals


@dataclass(frozen=True, eq=False, repr=False)
class MinMaxAffineOp:
    """An operator R^n -> R^m given by one expression per output coordinate."""

    coords: Tuple[Expr, ...]
    n: int

    def __post_init__(self):
        coords = tuple(self.coords)
        if not coords:
            raise ValueError("operator needs at least one coordinate")
        object.__setattr__(self, "coords", coords)
        for leaf in self.leaves():
            if leaf.p.size != self.n:
                raise ValueError(f"leaf has {leaf.p.size} weights, ambient dimension is {self.n}")

    @property
    def m(self) -> int:
        return len(self.coords)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, m={self.m}, nodes={len(self._program.order)})"

    @cached_property
    def _program(self) -> _Program:
        return _Program(self.coords, self.n)

    def nodes(self) -> List[Expr]:
        return list(self._program.order)

    def leaves(self) -> Iterator[AffineTerm]:
        return (nd for nd in _postorder(self.coords) if isinstance(nd, AffineTerm))

    @cached_property
    def is_homogeneous(self) -> bool:
        """True when every leaf is linear (no offsets)."""
        return all(lf.r == 0.0 for lf in self.leaves())

    def evaluate(self, x) -> np.ndarray:
        """Evaluate at one point (shape (n,)) or a batch of points (shape (k, n))."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        if X2.shape[-1] != self.n:
            raise ValueError(f"dimension mismatch: got {X2.shape[-1]}, expected {self.n}")
        prog = self._program
        out = prog.node_values(X2)[prog.roots].T
        return out[0] if single else out

    __call__ = evaluate

    def to_json(self) -> dict:
        return {"n": self.n, "coordinates": [expr_to_json(c) for c in self.coords]}

    @classmethod
    def from_json(cls, data) -> "MinMaxAffineOp":
        if not isinstance(data, dict) or "n" not in data or "coordinates" not in data:
            raise ValueError("operator JSON needs fields 'n' and 'coordinates'")
        n = data["n"]
        if not isinstance(n, int) or n < 1:
            raise ValueError("operator field 'n' must be a positive integer")
        coords = data["coordinates"]
        if not isinstance(coords, list) or not coords:
            raise ValueError("operator field 'coordinates' must be a nonempty list")
        return cls(
            tuple(expr_from_json(c, n, f"coordinates[{i}]") for i, c in enumerate(coords)), n
        )


def expr_to_json(expr: Expr) -> dict:
    if isinstance(expr, AffineTerm):
        return {"p": [float(a) for a in expr.p], "r": expr.r}
    out = {"op": expr.op, "children": [expr_to_json(c) for c in expr.children]}
    if expr.op == "sum":
        out["weights"] = list(expr.weights)
    return out


def expr_from_json(data, n: int, path: str = "expr") -> Expr:
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected an object")
    if "op" not in data:
        p, r = data.get("p"), data.get("r", 0.0)
        if not isinstance(p, list) or len(p) != n:
            raise ValueError(f"{path}.p: expected a list of {n} numbers")
        if not isinstance(r, (int, float)) or isinstance(r, bool):
            raise ValueError(f"{path}.r: expected a number")
        try:
            return AffineTerm(np.array(p, dtype=float), r)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: {exc}") from None
    op, children = data["op"], data.get("children")
    if op not in OPS:
        raise ValueError(f"{path}.op: must be one of {OPS}, got {op!r}")
    if not isinstance(children, list) or not children:
        raise ValueError(f"{path}.children: expected a nonempty list")
    kids = tuple(expr_from_json(c, n, f"{path}.children[{k}]") for k, c in enumerate(children))
    try:
        return Node(op, kids, tuple(data["weights"]) if op == "sum" and "weights" in data else None)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# constructors

def identity(n: int) -> MinMaxAffineOp:
    return linear(np.eye(n))


def linear(A, b=None) -> MinMaxAffineOp:
    """The affine operator x -> A x + b, one leaf per row."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    return MinMaxAffineOp(tuple(AffineTerm(row, c) for row, c in zip(A, b)), A.shape[1])


# ---------------------------------------------------------------------------
# semidifferential

@dataclass(frozen=True)
class ActiveSets:
    """Children attaining each max/min node at the anchor point.

    Keys are ``(coordinate, path)`` where ``path`` lists child indices from
    the coordinate root down to the node. A node shared between several
    parents is recorded under the first path that reaches it.
    """

    sets: Dict[Tuple[int, Tuple[int, ...]], Tuple[int, ...]] = field(default_factory=dict)

    def for_coordinate(self, i: int) -> Dict[Tuple[int, ...], Tuple[int, ...]]:
        return {path: idx for (c, path), idx in self.sets.items() if c == i}

    def to_json(self) -> list:
        return [
            {"coordinate": c, "path": list(path), "active": list(idx)}
            for (c, path), idx in sorted(self.sets.items())
        ]


def _active(op: str, vals: np.ndarray, tol: float) -> Tuple[int, ...]:
    target = vals.max() if op == "max" else vals.min()
    slack = tol * (1.0 + abs(target))
    if op == "max":
        return tuple(int(k) for k in np.flatnonzero(vals >= target - slack))
    return tuple(int(k) for k in np.flatnonzero(vals <= target + slack))


def semidifferential(
    f: MinMaxAffineOp, v, tol: float = ACTIVE_TOL
) -> Tuple[MinMaxAffineOp, ActiveSets]:
    """Symbolic semidifferential f'_v and the active sets at v.

    Each max (min) node keeps only the children whose value at v is within
    ``tol * (1 + |node value|)`` of the node value; surviving leaves lose
    their offsets. The result is positively homogeneous and coincides with
    ``t -> (f(v + t x) - f(v)) / t`` for small t > 0.
    """
    v = as_vector(v, "v")
    if v.size != f.n:
        raise ValueError(f"dimension mismatch: got {v.size}, expected {f.n}")
    prog = f._program
    vals = prog.node_values(v.reshape(1, -1))[:, 0]
    memo: Dict[int, Expr] = {}
    sets: Dict[Tuple[int, Tuple[int, ...]], Tuple[int, ...]] = {}

    def walk(node: Expr, coord: int, path: Tuple[int, ...]) -> Expr:
        key = id(node)
        if key in memo:
            return memo[key]
        if isinstance(node, AffineTerm):
            out: Expr = AffineTerm(node.p, 0.0) if node.r != 0.0 else node
        elif node.op == "sum":
            out = Node(
                "sum",
                tuple(walk(c, coord, path + (k,)) for k, c in enumerate(node.children)),
                node.weights,
            )
        else:
            child_vals = np.array([vals[prog.slot[id(c)]] for c in node.children])
            act = _active(node.op, child_vals, tol)
            sets[(coord, path)] = act
            kids = tuple(walk(node.children[k], coord, path + (k,)) for k in act)
            out = kids[0] if len(kids) == 1 else Node(node.op, kids)
        memo[key] = out
        return out

    coords = tuple(walk(c, i, ()) for i, c in enumerate(f.coords))
    return MinMaxAffineOp(coords, f.n), ActiveSets(sets)


def breakpoint_radius(f: MinMaxAffineOp, v, x, tol: float = ACTIVE_TOL) -> float:
    """Largest t* such that f is affine on the segment [v, v + t* x].

    For every max/min node, an inactive child overtakes the active ones at
    ``(gap at v) / (slope difference)``; t* is the smallest such crossing,
    or ``inf`` if none happens.
    """
    v = as_vector(v, "v")
    x = as_vector(x, "x")
    prog = f._program
    vals = prog.node_values(v.reshape(1, -1))[:, 0]
    slopes = np.empty(len(prog.order))
    t_star = np.inf
    for k, node in enumerate(prog.order):
        if isinstance(node, AffineTerm):
            slopes[k] = node.p @ x
            continue
        kids = np.array([prog.slot[id(c)] for c in node.children])
        cv, cs = vals[kids], slopes[kids]
        if node.op == "sum":
            slopes[k] = np.dot(node.weights, cs)
            continue
        act = np.array(_active(node.op, cv, tol))
        sign = 1.0 if node.op == "max" else -1.0
        # reduce min nodes to max nodes by negation
        best = np.max(sign * cs[act])
        slopes[k] = sign * best
        for j in range(len(kids)):
            if j in act:
                continue
            gap = sign * (vals[k] - cv[j])
            rate = sign * cs[j] - best
            if rate > 0:
                t_star = min(t_star, gap / rate)
    return float(t_star)


def directional_derivative_fd(
    f: Callable[[np.ndarray], np.ndarray],
    v,
    x,
    t_schedule: Sequence[float] = (1e-3, 1e-5, 1e-7),
    rtol: float = 1e-6,
) -> Tuple[np.ndarray, bool]:
    """One-sided difference quotient (f(v + t x) - f(v)) / t at the smallest t.

    Returns the quotient and whether successive quotients agreed to ``rtol``.
    """
    v = as_vector(v, "v")
    x = as_vector(x, "x")
    ts = [float(t) for t in t_schedule]
    if not ts or any(t <= 0 for t in ts) or any(a <= b for a, b in zip(ts, ts[1:])):
        raise ValueError("t_schedule must be positive and strictly decreasing")
    base = np.asarray(f(v), dtype=float)
    quotients = []
    for t in ts:
        val = np.asarray(f(v + t * x), dtype=float)
        if not np.all(np.isfinite(val)):
            raise ValueError(f"evaluation failed at step t={t}")
        quotients.append((val - base) / t)
    stable = all(
        np.allclose(a, b, rtol=rtol, atol=rtol) for a, b in zip(quotients, quotients[1:])
    )
    return quotients[-1], stable


# ---------------------------------------------------------------------------
# composition

def negate(expr: Expr) -> Expr:
    """-expr, pushed down to the leaves (max and min swap).

    The result is cached on the node in both directions, so negating twice
    returns the original object and repeated compositions do not duplicate
    shared subtrees.
    """
    cached = expr.__dict__.get("_negation")
    if cached is not None:
        return cached
    if isinstance(expr, AffineTerm):
        out: Expr = AffineTerm(-expr.p, -expr.r)
    else:
        kids = tuple(negate(c) for c in expr.children)
        op = {"max": "min", "min": "max", "sum": "sum"}[expr.op]
        out = Node(op, kids, expr.weights)
    object.__setattr__(expr, "_negation", out)
    object.__setattr__(out, "_negation", expr)
    return out


def compose(g: MinMaxAffineOp, f: MinMaxAffineOp) -> MinMaxAffineOp:
    """Syntactic composition g o f; f's coordinate trees are shared, not copied."""
    if g.n != f.m:
        raise ValueError(f"cannot compose: g takes {g.n} inputs, f returns {f.m}")
    leaf_memo: Dict[int, Expr] = {}
    sub_memo: Dict[int, Expr] = {}
    zero = np.zeros(f.n)

    def leaf(term: AffineTerm) -> Expr:
        key = id(term)
        if key in leaf_memo:
            return leaf_memo[key]
        nz = np.flatnonzero(term.p)
        if term.r == 0.0 and nz.size == 1 and term.p[nz[0]] == 1.0:
            out: Expr = f.coords[nz[0]]
        else:
            kids: List[Expr] = []
            weights: List[float] = []
            for j in nz:
                pj = term.p[j]
                kids.append(f.coords[j] if pj > 0 else negate(f.coords[j]))
                weights.append(abs(pj))
            if term.r != 0.0 or not kids:
                kids.append(AffineTerm(zero, term.r))
                weights.append(1.0)
            out = kids[0] if len(kids) == 1 and weights[0] == 1.0 else Node("sum", tuple(kids), tuple(weights))
        leaf_memo[key] = out
        return out

    def sub(expr: Expr) -> Expr:
        key = id(expr)
        if key in sub_memo:
            return sub_memo[key]
        if isinstance(expr, AffineTerm):
            out = leaf(expr)
        else:
            out = Node(expr.op, tuple(sub(c) for c in expr.children), expr.weights)
        sub_memo[key] = out
        return out

    return MinMaxAffineOp(tuple(sub(c) for c in g.coords), f.n)


def compose_semidiff(g_prime: MinMaxAffineOp, f_prime: MinMaxAffineOp) -> MinMaxAffineOp:
    """Chain rule (g o f)'_v = g'_{f(v)} o f'_v for homogeneous operands."""
    if not (g_prime.is_homogeneous and f_prime.is_homogeneous):
        raise ValueError("compose_semidiff expects homogeneous operators (linear leaves only)")
    return compose(g_prime, f_prime)


def power(h: MinMaxAffineOp, k: int) -> MinMaxAffineOp:
    """h composed with itself k times (k = 0 gives the identity)."""
    if k < 0:
        raise ValueError("power must be nonnegative")
    if h.n != h.m:
        raise ValueError("power needs a square operator")
    out = identity(h.n)
    for _ in range(k):
        out = compose(h, out)
    return out


# ---------------------------------------------------------------------------
# structural spot checks

def _sample_points(n: int, rng: np.random.Generator, count: int, scale: float = 10.0) -> np.ndarray:
    return rng.uniform(-scale, scale, size=(count, n))


def check_order_preserving(f: MinMaxAffineOp, rng=None, trials: int = 200, tol: float = 0.0) -> bool:
    rng = np.random.default_rng(0) if rng is None else rng
    X = _sample_points(f.n, rng, trials)
    Y = X + rng.uniform(0.0, 5.0, size=X.shape)
    return bool(np.all(f(Y) >= f(X) - tol))


def check_additive_homogeneity(
    f: MinMaxAffineOp, rng=None, trials: int = 200, tol: float = 1e-12, unit=None
) -> bool:
    """f(x + t u) == f(x) + t u on random samples (u defaults to all ones)."""
    if f.n != f.m:
        return False
    rng = np.random.default_rng(1) if rng is None else rng
    u = np.ones(f.n) if unit is None else as_vector(unit, "unit")
    X = _sample_points(f.n, rng, trials)
    t = rng.uniform(-10.0, 10.0, size=(trials, 1))
    lhs = f(X + t * u)
    rhs = f(X) + t * u
    scale = 1.0 + np.maximum(np.abs(lhs), np.abs(rhs))
    return bool(np.all(np.abs(lhs - rhs) <= tol * scale))


def check_homogeneity(f: MinMaxAffineOp, rng=None, trials: int = 64, rtol: float = 1e-9) -> bool:
    """Spot check f(2x) == 2 f(x)."""
    rng = np.random.default_rng(2) if rng is None else rng
    X = _sample_points(f.n, rng, trials)
    a, b = f(2.0 * X), 2.0 * f(X)
    return bool(np.allclose(a, b, rtol=rtol, atol=rtol)) and bool(np.allclose(f(np.zeros(f.n)), 0.0))
