"""Operator norms and Bonsall spectral radius of homogeneous min/max-linear maps.

The operator (semi)norm ``sup N(h(x)) / N(x)`` is always estimated from a
fixed deterministic sample. For small dimension it is also computed exactly:
a homogeneous piecewise-linear map is linear on finitely many polyhedral
cones, so the supremum over the unit ball is attained at a vertex of one of
those pieces. We find it with a mixed-integer program whose binaries pick,
at every max/min node, the child that attains the node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .cone_metrics import as_vector
from .semidiff import (
    AffineTerm,
    Expr,
    MinMaxAffineOp,
    Node,
    _postorder,
    check_additive_homogeneity,
    check_homogeneity,
    compose,
    negate,
)

DEFAULT_SEED = 0x5EED
DEFAULT_SAMPLES = 256
N_EXACT = 6
DEFAULT_DEPTH = 3
MAX_DEPTH = 12


@dataclass(frozen=True)
class NormKind:
    """``sup``, ``local`` (order-unit norm of u) or ``oscillation`` (seminorm omega_u)."""

    kind: str
    u: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in ("sup", "local", "oscillation"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.kind == "local" and self.u is None:
            raise ValueError("local norm needs a unit vector u")
        if self.u is not None:
            u = as_vector(self.u, "u", positive=True)
            object.__setattr__(self, "u", tuple(float(a) for a in u))

    def unit(self, n: int) -> np.ndarray:
        if self.u is None:
            return np.ones(n)
        if len(self.u) != n:
            raise ValueError(f"norm unit has length {len(self.u)}, operator dimension is {n}")
        return np.array(self.u)

    def __call__(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        Z = Y / self.unit(Y.shape[-1])
        if self.kind == "oscillation":
            return Z.max(axis=-1) - Z.min(axis=-1)
        return np.abs(Z).max(axis=-1)

    @property
    def label(self) -> str:
        return {"sup": "sup_norm", "local": "local_norm", "oscillation": "oscillation"}[self.kind]

    def to_json(self):
        out = {"kind": self.label}
        if self.u is not None:
            out["u"] = list(self.u)
        return out


SUP_NORM = NormKind("sup")
OSCILLATION = NormKind("oscillation")


def local_norm_kind(u) -> NormKind:
    return NormKind("local", tuple(as_vector(u, "u", positive=True)))


@dataclass(frozen=True)
class SamplePlan:
    n_random: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    n_exact: int = N_EXACT

    def points(self, n: int, norm: NormKind) -> np.ndarray:
        """Structured directions, then seeded random ones, all of unit norm.

        Directions of zero norm (the kernel of omega) are dropped.
        """
        eye = np.eye(n)
        rows = [eye, -eye]
        if n > 1:
            i, j = np.where(~np.eye(n, dtype=bool))
            rows.append(eye[i] - eye[j])
        rng = np.random.default_rng(self.seed)
        rows.append(rng.standard_normal((self.n_random, n)))
        X = np.vstack(rows)
        X = X * norm.unit(n)
        nrm = norm(X)
        keep = nrm > 1e-12
        return X[keep] / nrm[keep, None]


@dataclass(frozen=True)
class OperatorNorm:
    """Estimate of sup N(h(x)) / N(x).

    ``value`` is attained by ``witness``, so it is always a lower bound. When
    ``exact`` is true, ``bound`` is a certified upper bound from the
    mixed-integer solve and ``value`` equals the supremum up to solver gap.
    """

    value: float
    exact: bool
    witness: Optional[np.ndarray]
    bound: float

    def __float__(self):
        return self.value


@dataclass
class SpectralEstimate:
    upper: float
    lower: float
    norm_kind: NormKind
    depth: int
    exact: bool
    witness: Optional[np.ndarray]
    samples: int
    seed: int
    norms: List[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "upper": self.upper,
            "lower": self.lower,
            "norm_kind": self.norm_kind.to_json(),
            "depth": self.depth,
            "exact": self.exact,
            "witness": None if self.witness is None else [float(a) for a in self.witness],
            "samples": self.samples,
            "seed": self.seed,
            "power_norms": list(self.norms),
        }


@dataclass
class Certificate:
    status: str  # "holds" | "fails" | "inconclusive"
    target: float
    k: Optional[int]
    factor: Optional[float]
    exact: bool
    witness: Optional[np.ndarray] = None

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "target": self.target,
            "k": self.k,
            "factor": self.factor,
            "exact": self.exact,
            "witness": None if self.witness is None else [float(a) for a in self.witness],
        }


# ---------------------------------------------------------------------------

def _validate(h: MinMaxAffineOp, norm: NormKind) -> None:
    if h.n != h.m:
        raise ValueError("operator must map R^n to itself")
    if not check_homogeneity(h):
        raise ValueError("operator is not homogeneous: h(2x) != 2 h(x) on a spot check")
    if norm.kind == "oscillation":
        u = norm.unit(h.n)
        if not np.allclose(h(u), u, rtol=1e-9, atol=1e-9):
            raise ValueError("oscillation seminorm needs h(u) = u for the kernel direction u")
        if not check_additive_homogeneity(h, tol=1e-9, unit=u):
            raise ValueError("oscillation seminorm needs h(x + t u) = h(x) + t u")


def _sample_ratios(h: MinMaxAffineOp, norm: NormKind, X: np.ndarray) -> np.ndarray:
    return norm(h(X)) / norm(X)


def _norm_objective(h: MinMaxAffineOp, norm: NormKind) -> Tuple[Expr, np.ndarray, np.ndarray]:
    """A single max-tree equal to N(h(x)), plus the box domain to search."""
    n = h.n
    u = norm.unit(n)
    terms: List[Expr] = []
    if norm.kind == "oscillation":
        for i in range(n):
            for j in range(n):
                if i != j:
                    terms.append(
                        Node("sum", (h.coords[i], negate(h.coords[j])), (1 / u[i], 1 / u[j]))
                    )
        lo, hi = np.zeros(n), u.copy()
    else:
        for i in range(n):
            terms.append(Node("sum", (h.coords[i],), (1 / u[i],)))
            terms.append(Node("sum", (negate(h.coords[i]),), (1 / u[i],)))
        lo, hi = -u, u.copy()
    return Node("max", tuple(terms)), lo, hi


def _interval_bounds(order: List[Expr], slot: Dict[int, int], lo: np.ndarray, hi: np.ndarray):
    L = np.empty(len(order))
    U = np.empty(len(order))
    for k, nd in enumerate(order):
        if isinstance(nd, AffineTerm):
            L[k] = nd.r + np.sum(np.minimum(nd.p * lo, nd.p * hi))
            U[k] = nd.r + np.sum(np.maximum(nd.p * lo, nd.p * hi))
            continue
        kids = [slot[id(c)] for c in nd.children]
        if nd.op == "max":
            L[k], U[k] = L[kids].max(), U[kids].max()
        elif nd.op == "min":
            L[k], U[k] = L[kids].min(), U[kids].min()
        else:
            w = np.array(nd.weights)
            L[k], U[k] = w @ L[kids], w @ U[kids]
    return L, U


def maximize_piecewise_linear(root: Expr, lo: np.ndarray, hi: np.ndarray):
    """Global maximum of a min/max/sum tree over the box [lo, hi].

    Returns ``(argmax, upper_bound)``. Each node gets a continuous variable
    equal to its value; each max/min node with several children gets one
    binary per child selecting the attaining child (big-M from interval
    bounds over the box).
    """
    n = lo.size
    order = _postorder([root])
    slot = {id(nd): k for k, nd in enumerate(order)}
    L, U = _interval_bounds(order, slot, lo, hi)
    nv = n + len(order)
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    clo: List[float] = []
    chi: List[float] = []
    n_bin = 0
    binaries: List[Tuple[int, int, int, float]] = []  # (node slot, child slot, sign, M)

    def add_row(entries, lb, ub):
        r = len(clo)
        for c, a in entries:
            rows.append(r)
            cols.append(c)
            vals.append(a)
        clo.append(lb)
        chi.append(ub)

    for k, nd in enumerate(order):
        var = n + k
        if isinstance(nd, AffineTerm):
            add_row([(var, 1.0)] + [(j, -nd.p[j]) for j in np.flatnonzero(nd.p)], nd.r, nd.r)
            continue
        kids = [n + slot[id(c)] for c in nd.children]
        if nd.op == "sum":
            ent: Dict[int, float] = {var: 1.0}
            for c, w in zip(kids, nd.weights):
                ent[c] = ent.get(c, 0.0) - w
            add_row(list(ent.items()), 0.0, 0.0)
            continue
        uniq = list(dict.fromkeys(kids))
        if len(uniq) == 1:
            add_row([(var, 1.0), (uniq[0], -1.0)], 0.0, 0.0)
            continue
        group = []
        for c in uniq:
            cs = c - n
            if nd.op == "max":
                add_row([(var, 1.0), (c, -1.0)], 0.0, np.inf)
                M = max(U[k] - L[cs], 0.0)
                binaries.append((var, c, +1, M))
            else:
                add_row([(var, 1.0), (c, -1.0)], -np.inf, 0.0)
                M = max(U[cs] - L[k], 0.0)
                binaries.append((var, c, -1, M))
            group.append(len(binaries) - 1)
        add_row([(nv + b, 1.0) for b in group], 1.0, 1.0)
    n_bin = len(binaries)
    for b, (var, c, sign, M) in enumerate(binaries):
        if sign > 0:  # v - c + M z <= M
            add_row([(var, 1.0), (c, -1.0), (nv + b, M)], -np.inf, M)
        else:  # v - c - M z >= -M
            add_row([(var, 1.0), (c, -1.0), (nv + b, -M)], -M, np.inf)

    total = nv + n_bin
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(len(clo), total))
    c_obj = np.zeros(total)
    c_obj[n + slot[id(root)]] = -1.0
    lb = np.concatenate([lo, L, np.zeros(n_bin)])
    ub = np.concatenate([hi, U, np.ones(n_bin)])
    integrality = np.concatenate([np.zeros(nv), np.ones(n_bin)])
    res = milp(
        c_obj,
        integrality=integrality,
        bounds=Bounds(lb, ub),
        constraints=LinearConstraint(A, clo, chi),
        options={"mip_rel_gap": 0.0, "presolve": True},
    )
    if res.x is None:
        raise RuntimeError(f"mixed-integer solve failed: {res.message}")
    x = np.clip(res.x[:n], lo, hi)
    dual = getattr(res, "mip_dual_bound", None)
    bound = -dual if dual is not None and np.isfinite(dual) else -res.fun
    return x, float(max(bound, -res.fun))


def op_seminorm(
    h: MinMaxAffineOp,
    norm_kind: NormKind = SUP_NORM,
    sample_plan: Optional[SamplePlan] = None,
    exact: Optional[bool] = None,
) -> OperatorNorm:
    """Operator (semi)norm sup_{N(x)=1} N(h(x)) of a homogeneous operator.

    Exact (mixed-integer) when ``h.n <= sample_plan.n_exact`` unless
    ``exact=False``; otherwise the best ratio over the sample.
    """
    plan = sample_plan or SamplePlan()
    _validate(h, norm_kind)
    return _op_seminorm(h, norm_kind, plan, h.n <= plan.n_exact if exact is None else exact)


def _op_seminorm(h, norm, plan, exact, X=None) -> OperatorNorm:
    X = plan.points(h.n, norm) if X is None else X
    if X.shape[0] == 0:
        # omega vanishes identically (n = 1): the seminorm of any h is 0
        return OperatorNorm(0.0, True, None, 0.0)
    ratios = _sample_ratios(h, norm, X)
    best = int(np.argmax(ratios))
    value, witness = float(ratios[best]), X[best]
    bound = np.inf
    if exact:
        root, lo, hi = _norm_objective(h, norm)
        x, bound = maximize_piecewise_linear(root, lo, hi)
        nx = float(norm(x))
        if nx > 1e-12:
            r = float(norm(h(x))) / nx
            if r > value:
                value, witness = r, x / nx
        bound = max(bound, value)
    return OperatorNorm(value, exact, witness, float(bound))


def _powers(h: MinMaxAffineOp, K: int):
    if not 1 <= K <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    hk = h
    yield 1, hk
    for k in range(2, K + 1):
        hk = compose(h, hk)
        yield k, hk


def bonsall_estimate(
    h: MinMaxAffineOp,
    K: int = DEFAULT_DEPTH,
    norm_kind: NormKind = SUP_NORM,
    sample_plan: Optional[SamplePlan] = None,
) -> SpectralEstimate:
    """Bracket the Bonsall spectral radius lim ||h^k||^(1/k) = inf ||h^k||^(1/k).

    ``upper`` is min_{k<=K} ||h^k||^(1/k) (a true upper bound only when
    ``exact``). ``lower`` is the best sampled per-direction rate
    min_{k<=K} (N(h^k x)/N(x))^(1/k); it never exceeds ``upper``.
    """
    plan = sample_plan or SamplePlan()
    _validate(h, norm_kind)
    exact = h.n <= plan.n_exact
    X = plan.points(h.n, norm_kind)
    norms: List[float] = []
    upper = np.inf
    rates = np.full(X.shape[0], np.inf)
    for k, hk in _powers(h, K):
        nk = _op_seminorm(hk, norm_kind, plan, exact, X)
        norms.append(nk.value)
        upper = min(upper, nk.value ** (1.0 / k))
        if X.shape[0]:
            rates = np.minimum(rates, _sample_ratios(hk, norm_kind, X) ** (1.0 / k))
    if X.shape[0]:
        best = int(np.argmax(rates))
        lower, witness = float(rates[best]), X[best]
    else:
        lower, witness = 0.0, None
    return SpectralEstimate(
        upper=float(upper),
        lower=lower,
        norm_kind=norm_kind,
        depth=K,
        exact=exact,
        witness=witness,
        samples=int(X.shape[0]),
        seed=plan.seed,
        norms=norms,
    )


def certify_contraction(
    h: MinMaxAffineOp,
    norm_kind: NormKind,
    target: float,
    K: int = DEFAULT_DEPTH,
    sample_plan: Optional[SamplePlan] = None,
) -> Certificate:
    """Decide whether ||h^k||^(1/k) <= target for some k <= K.

    ``holds`` needs an exact upper bound; the sampled regime can only report
    ``fails`` (a witness beats target^k at every depth) or ``inconclusive``.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    plan = sample_plan or SamplePlan()
    _validate(h, norm_kind)
    exact = h.n <= plan.n_exact
    X = plan.points(h.n, norm_kind)
    beaten = True
    witness = None
    factor = None
    for k, hk in _powers(h, K):
        nk = _op_seminorm(hk, norm_kind, plan, exact, X)
        if exact and nk.bound ** (1.0 / k) <= target:
            return Certificate("holds", target, k, nk.bound ** (1.0 / k), True, nk.witness)
        if nk.value <= target**k:
            beaten = False
        witness = nk.witness
        factor = nk.value ** (1.0 / k)
    status = "fails" if beaten else "inconclusive"
    return Certificate(status, target, K, factor, exact, witness)
