"""Shapley operators of coin-toss games on a weighted digraph.

At each turn a fair coin decides whether Max or Min moves the token along
an arc i -> j; Max then receives A_ij. The dynamic programming operator is

    F_i(x) = (max_j (A_ij + x_j) + min_j (A_ij + x_j)) / 2,

over the successors j of i. It is order preserving and commutes with adding
constants, so it is nonexpansive in the sup-norm and in the oscillation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cone_metrics import as_vector, check_psi, oscillation, uniform_psi
from .semidiff import (
    ActiveSets,
    AffineTerm,
    MinMaxAffineOp,
    Node,
    check_additive_homogeneity,
    check_order_preserving,
    semidifferential,
)
from .spectral import (
    DEFAULT_DEPTH,
    OSCILLATION,
    Certificate,
    SamplePlan,
    bonsall_estimate,
    certify_contraction,
)

UNIQUENESS_TARGET = 1.0 - 1e-6


@dataclass(frozen=True)
class Arc:
    src: int
    dst: int
    payoff: float


@dataclass(frozen=True)
class GameGraph:
    n: int
    arcs: Tuple[Arc, ...]

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ValueError("game needs n >= 1 nodes")
        arcs = tuple(self.arcs)
        seen = set()
        for a in arcs:
            if not (0 <= a.src < self.n and 0 <= a.dst < self.n):
                raise ValueError(f"arc {a.src}->{a.dst} has a node id outside [0, {self.n})")
            if not math.isfinite(a.payoff):
                raise ValueError(f"arc {a.src}->{a.dst} has a non-finite payoff")
            if (a.src, a.dst) in seen:
                raise ValueError(f"duplicate arc {a.src}->{a.dst}")
            seen.add((a.src, a.dst))
        missing = sorted(set(range(self.n)) - {a.src for a in arcs})
        if missing:
            raise ValueError(f"nodes without successors: {missing}")
        object.__setattr__(self, "arcs", arcs)

    def successors(self, i: int) -> List[Arc]:
        return [a for a in self.arcs if a.src == i]

    def is_strongly_connected(self) -> bool:
        adj = {i: [a.dst for a in self.successors(i)] for i in range(self.n)}
        radj: Dict[int, List[int]] = {i: [] for i in range(self.n)}
        for a in self.arcs:
            radj[a.dst].append(a.src)

        def reach(g):
            seen, stack = {0}, [0]
            while stack:
                for j in g[stack.pop()]:
                    if j not in seen:
                        seen.add(j)
                        stack.append(j)
            return len(seen) == self.n

        return reach(adj) and reach(radj)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "arcs": [{"from": a.src, "to": a.dst, "payoff": a.payoff} for a in self.arcs],
        }

    @classmethod
    def from_json(cls, data) -> "GameGraph":
        if not isinstance(data, dict):
            raise ValueError("game JSON must be an object")
        n = data.get("n")
        if not isinstance(n, int) or isinstance(n, bool):
            raise ValueError("game field 'n': expected an integer")
        raw = data.get("arcs")
        if not isinstance(raw, list):
            raise ValueError("game field 'arcs': expected a list")
        arcs = []
        for k, a in enumerate(raw):
            if not isinstance(a, dict):
                raise ValueError(f"arcs[{k}]: expected an object")
            for key, typ in (("from", int), ("to", int), ("payoff", (int, float))):
                if not isinstance(a.get(key), typ) or isinstance(a.get(key), bool):
                    raise ValueError(f"arcs[{k}].{key}: missing or wrong type")
            arcs.append(Arc(a["from"], a["to"], float(a["payoff"])))
        return cls(n, tuple(arcs))


def load_fixture(name: str = "fig1") -> GameGraph:
    """A bundled example game (``fig1``: the three-node coin-toss game)."""
    text = resources.files("conefix.data").joinpath(f"{name}_game.json").read_text()
    return GameGraph.from_json(json.loads(text))


@dataclass(frozen=True, eq=False)
class ShapleyOperator(MinMaxAffineOp):
    """MinMaxAffineOp that remembers which successor each leaf stands for."""

    successors: Tuple[Tuple[int, ...], ...] = ()


def shapley_operator(g: GameGraph) -> ShapleyOperator:
    coords = []
    succ = []
    for i in range(g.n):
        leaves = []
        for a in g.successors(i):
            p = np.zeros(g.n)
            p[a.dst] = 1.0
            leaves.append(AffineTerm(p, a.payoff))
        coords.append(Node("sum", (Node("max", tuple(leaves)), Node("min", tuple(leaves))), (0.5, 0.5)))
        succ.append(tuple(a.dst for a in g.successors(i)))
    return ShapleyOperator(tuple(coords), g.n, tuple(succ))


def strategy_sets(F: ShapleyOperator, active: ActiveSets) -> Tuple[List[List[int]], List[List[int]]]:
    """E+_i and E-_i: successors attaining the max and the min."""
    plus, minus = [], []
    for i, succ in enumerate(F.successors):
        sets = active.for_coordinate(i)
        plus.append([succ[k] for k in sets[(0,)]])
        minus.append([succ[k] for k in sets[(1,)]])
    return plus, minus


def value_iteration(F: MinMaxAffineOp, x0, k: int) -> np.ndarray:
    """Rows F^0(x0), ..., F^k(x0)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    x = as_vector(x0, "x0")
    out = np.empty((k + 1, x.size))
    out[0] = x
    for s in range(1, k + 1):
        out[s] = F(out[s - 1])
    return out


@dataclass
class MeanPayoff:
    chi: np.ndarray
    average: np.ndarray
    k_max: int
    converged: bool

    def to_json(self) -> dict:
        return {
            "chi": self.chi.tolist(),
            "average": self.average.tolist(),
            "k_max": self.k_max,
            "converged": self.converged,
        }


def mean_payoff(F: MinMaxAffineOp, k_max: int = 200, tol: float = 1e-6) -> MeanPayoff:
    """Mean payoff per turn, lim F^k(0)/k.

    ``average`` is F^k(0)/k itself, whose error decays only like 1/k.
    ``chi`` is the increment (F^k(0) - F^(k/2)(0)) / (k/2), which cancels the
    bounded bias term. ``converged`` compares it with the increment over the
    last quarter of the trajectory.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    traj = value_iteration(F, np.zeros(F.n), k_max)
    average = traj[-1] / k_max

    def increment(window):
        window = max(window, 1)
        return (traj[-1] - traj[k_max - window]) / window

    chi = increment(k_max // 2)
    check = increment(k_max // 4)
    return MeanPayoff(chi, average, k_max, bool(np.max(np.abs(chi - check)) <= tol))


@dataclass
class EigenReport:
    u: np.ndarray
    mu: float
    residual: float
    iterations: int
    converged: bool
    psi: np.ndarray
    active_sets: Optional[ActiveSets] = None
    strategies: Optional[Tuple[List[List[int]], List[List[int]]]] = None
    uniqueness: Optional[str] = None
    certificate: Optional[Certificate] = None
    rate_bound: Optional[float] = None
    rate_lower: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "u": self.u.tolist(),
            "mu": self.mu,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "psi": self.psi.tolist(),
            "uniqueness": self.uniqueness,
            "rate_bound": self.rate_bound,
            "rate_lower": self.rate_lower,
            "notes": list(self.notes),
        }
        if self.active_sets is not None:
            out["active_sets"] = self.active_sets.to_json()
        if self.strategies is not None:
            out["E_plus"], out["E_minus"] = self.strategies
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_json()
        return out


def _check_shapley_like(F: MinMaxAffineOp) -> None:
    if F.n != F.m:
        raise ValueError("operator must map R^n to itself")
    if not check_order_preserving(F):
        raise ValueError("operator failed the order-preservation spot check")
    if not check_additive_homogeneity(F):
        raise ValueError("operator failed the additive-homogeneity spot check")


def _affine_piece(F: MinMaxAffineOp, x: np.ndarray):
    """(A, b) with F(y) = A y + b on the piece selected by the maximizers at x."""
    prog = F._program
    vals = prog.node_values(x.reshape(1, -1))[:, 0]
    pieces: Dict[int, Tuple[np.ndarray, float]] = {}
    for k, nd in enumerate(prog.order):
        if isinstance(nd, AffineTerm):
            pieces[k] = (nd.p, nd.r)
            continue
        kids = [prog.slot[id(c)] for c in nd.children]
        if nd.op == "sum":
            pieces[k] = (
                sum(w * pieces[c][0] for w, c in zip(nd.weights, kids)),
                sum(w * pieces[c][1] for w, c in zip(nd.weights, kids)),
            )
        else:
            cv = vals[kids]
            pick = kids[int(np.argmax(cv) if nd.op == "max" else np.argmin(cv))]
            pieces[k] = pieces[pick]
    A = np.array([pieces[r][0] for r in prog.roots])
    b = np.array([pieces[r][1] for r in prog.roots])
    return A, b


def _polish(F: MinMaxAffineOp, x: np.ndarray, psi: np.ndarray):
    """Solve A u + b = u + mu e, psi(u) = 0 on the affine piece active at x."""
    n = F.n
    A, b = _affine_piece(F, x)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A - np.eye(n)
    M[:n, n] = -1.0
    M[n, :n] = psi
    try:
        sol = np.linalg.solve(M, np.concatenate([-b, [0.0]]))
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:n], float(sol[n])


def solve_additive_eigenpair(
    F: MinMaxAffineOp,
    psi=None,
    theta: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> EigenReport:
    """Find (u, mu) with F(u) = u + mu e and psi(u) = 0.

    Krasnoselskii averaging x <- (1 - theta) x + theta (F(x) - psi(F(x)) e)
    from x = 0. Stops once omega(F(x) - x) <= tol and has changed by less
    than tol since the previous step. Failure to converge is reported in the
    returned record, not raised.
    """
    _check_shapley_like(F)
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = F.n
    psi = uniform_psi(n) if psi is None else check_psi(psi, n)
    x = np.zeros(n)
    prev = np.inf
    residual = np.inf
    it = 0
    converged = False
    while it < max_iter:
        y = F(x)
        residual = oscillation(y - x)
        if residual <= tol and abs(residual - prev) < tol:
            converged = True
            break
        prev = residual
        x = (1.0 - theta) * x + theta * (y - (psi @ y))
        it += 1
    u = x - (psi @ x)
    fu = F(u)
    mu = float(psi @ fu - psi @ u)
    polished = False
    if converged:
        cand = _polish(F, u, psi)
        if cand is not None and oscillation(F(cand[0]) - cand[0]) < oscillation(fu - u):
            u, mu, polished = cand[0], cand[1], True
            fu = F(u)
    report = EigenReport(
        u=u, mu=mu, residual=float(oscillation(fu - u)), iterations=it, converged=converged, psi=psi
    )
    if not converged:
        report.notes.append(f"no convergence within {max_iter} iterations")
        return report
    if polished:
        report.notes.append("refined by solving the affine piece active at the iterate")
    _, active = semidifferential(F, u)
    report.active_sets = active
    if isinstance(F, ShapleyOperator):
        report.strategies = strategy_sets(F, active)
    return report


def certify_bias_uniqueness(
    F: MinMaxAffineOp,
    report: EigenReport,
    K: int = DEFAULT_DEPTH,
    sample_plan: Optional[SamplePlan] = None,
) -> EigenReport:
    """Certify that the bias is unique up to constants via omega-contraction of F'_u."""
    if not report.converged:
        raise ValueError("certification needs a converged eigenpair")
    Fp, _ = semidifferential(F, report.u)
    cert = certify_contraction(Fp, OSCILLATION, UNIQUENESS_TARGET, K, sample_plan)
    est = bonsall_estimate(Fp, K, OSCILLATION, sample_plan)
    notes = list(report.notes)
    if cert.status == "holds":
        notes.append(
            "fixed points of F'_u are the constant vectors; the bias is unique up to adding a constant"
        )
    elif cert.status == "fails":
        notes.append("F'_u is not an omega-contraction up to the searched depth; uniqueness not certified")
    else:
        notes.append("contraction could not be decided (sampled regime)")
    return replace(
        report,
        uniqueness=cert.status,
        certificate=cert,
        rate_bound=est.upper,
        rate_lower=est.lower,
        notes=notes,
    )


@dataclass
class ConvergenceReport:
    rates: np.ndarray
    drifts: np.ndarray
    normalized_drifts: np.ndarray
    initial_errors: np.ndarray
    final_errors: np.ndarray
    sup_errors: np.ndarray
    depth: int
    rate_bound: Optional[float]
    slack: float
    seed: int

    @property
    def max_rate(self) -> float:
        return float(np.max(self.rates)) if self.rates.size else 0.0

    @property
    def within_bound(self) -> bool:
        if self.rate_bound is None:
            return False
        return bool(np.all(self.rates <= self.rate_bound + self.slack))

    def to_json(self) -> dict:
        return {
            "depth": self.depth,
            "starts": int(self.rates.size),
            "seed": self.seed,
            "rate_bound": self.rate_bound,
            "slack": self.slack,
            "max_rate": self.max_rate,
            "within_bound": self.within_bound,
            "rates": self.rates.tolist(),
            "drifts": self.drifts.tolist(),
            "normalized_drifts": self.normalized_drifts.tolist(),
            "max_sup_error": float(np.max(self.sup_errors)) if self.sup_errors.size else 0.0,
        }


def random_starts(u, count: int, rng: np.random.Generator, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    """Points x0 with omega(x0 - u) uniform in [lo, hi], plus a random constant shift."""
    u = as_vector(u, "u")
    out = np.empty((count, u.size))
    for s in range(count):
        d = rng.standard_normal(u.size)
        w = oscillation(d)
        if w == 0.0:
            d = np.zeros(u.size)
        else:
            d *= rng.uniform(lo, hi) / w
        out[s] = u + d + rng.uniform(-hi, hi)
    return out


def convergence_report(
    F: MinMaxAffineOp,
    report: EigenReport,
    starts: int = 100,
    k: int = 40,
    seed: int = 0,
    slack: float = 0.05,
    x0s: Optional[np.ndarray] = None,
) -> ConvergenceReport:
    """Empirical geometric rates (omega(F^k(x0) - u) / omega(x0 - u))^(1/k).

    The drift lambda = psi(F^k(x0) - u) makes F^k(x0) - lambda e close to u;
    ``normalized_drifts`` subtracts the k * mu growth.
    """
    if not report.converged:
        raise ValueError("convergence report needs a converged eigenpair")
    rng = np.random.default_rng(seed)
    X0 = random_starts(report.u, starts, rng) if x0s is None else np.atleast_2d(x0s)
    u, psi = report.u, report.psi
    X = X0.copy()
    for _ in range(k):
        X = F(X)
    D0 = X0 - u
    Dk = X - u
    e0 = D0.max(axis=1) - D0.min(axis=1)
    ek = Dk.max(axis=1) - Dk.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(e0 > 0, ek / np.where(e0 > 0, e0, 1.0), 0.0)
    rates = ratio ** (1.0 / k) if k > 0 else np.ones_like(ratio)
    drifts = Dk @ psi
    sup_err = np.max(np.abs(Dk - drifts[:, None]), axis=1)
    return ConvergenceReport(
        rates=rates,
        drifts=drifts,
        normalized_drifts=drifts - k * report.mu,
        initial_errors=e0,
        final_errors=ek,
        sup_errors=sup_err,
        depth=k,
        rate_bound=report.rate_bound,
        slack=slack,
        seed=seed,
    )
