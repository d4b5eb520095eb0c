"""Command-line front end.

    conefix solve    --input game.json [--psi avg|coord:<i>] [--theta 0.5]
    conefix certify  --input builtin:fig1 --depth 3
    conefix rate     --input builtin:fig1 --starts 100 --steps 40
    conefix metric   --input pair.json          # {"x": [...], "y": [...], "u": [...]}
    conefix semidiff --input point.json         # {"game"|"operator": ..., "v": [...]}
    conefix spectral --input op.json --norm oscillation

Reports are JSON on stdout (or --output). Exit status: 0 ok, 1 bad input,
2 the eigenpair iteration did not converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import cone_metrics as cm
from .games import (
    GameGraph,
    certify_bias_uniqueness,
    convergence_report,
    load_fixture,
    mean_payoff,
    shapley_operator,
    solve_additive_eigenpair,
)
from .semidiff import MinMaxAffineOp, breakpoint_radius, directional_derivative_fd, semidifferential
from .spectral import (
    DEFAULT_DEPTH,
    DEFAULT_SEED,
    MAX_DEPTH,
    NormKind,
    SamplePlan,
    bonsall_estimate,
    certify_contraction,
)

SCHEMA_VERSION = "1"
COMMANDS = ("solve", "certify", "rate", "metric", "semidiff", "spectral")
EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    input_path: str
    output_path: Optional[str] = None
    tol: float = 1e-10
    max_iter: int = 10_000
    depth: int = DEFAULT_DEPTH
    seed: int = DEFAULT_SEED
    psi: str = "avg"
    theta: float = 0.5
    starts: int = 100
    steps: int = 40
    norm: str = "oscillation"
    target: Optional[float] = None
    text: bool = False

    def validate(self):
        if self.subcommand not in COMMANDS:
            raise InputError(f"unknown subcommand {self.subcommand!r}")
        if not self.tol > 0:
            raise InputError("--tol must be positive")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InputError(f"--depth must be in [1, {MAX_DEPTH}]")
        if self.max_iter < 1:
            raise InputError("--max-iter must be >= 1")
        if not 0 < self.theta <= 1:
            raise InputError("--theta must lie in (0, 1]")


def _load_json(path: str):
    if path.startswith("builtin:"):
        name = path.split(":", 1)[1]
        try:
            return load_fixture(name).to_json()
        except FileNotFoundError:
            raise InputError(f"{path}: no bundled fixture named {name!r}") from None
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _parse_psi(choice: str, n: int) -> np.ndarray:
    if choice == "avg":
        return cm.uniform_psi(n)
    if choice.startswith("coord:"):
        try:
            i = int(choice.split(":", 1)[1])
        except ValueError:
            raise InputError(f"--psi {choice!r}: expected coord:<index>") from None
        try:
            return cm.coordinate_psi(n, i)
        except ValueError as exc:
            raise InputError(f"--psi {choice!r}: {exc}") from None
    raise InputError(f"--psi {choice!r}: expected 'avg' or 'coord:<index>'")


def _game(path: str, data) -> GameGraph:
    try:
        return GameGraph.from_json(data)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _vector(path: str, data: dict, key: str, required: bool = True):
    if key not in data:
        if required:
            raise InputError(f"{path}: missing field {key!r}")
        return None
    try:
        return cm.ConeVector.from_json(data[key]).entries
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: field {key!r}: {exc}") from None


def _operator(path: str, data: dict) -> MinMaxAffineOp:
    try:
        if "operator" in data:
            return MinMaxAffineOp.from_json(data["operator"])
        if "game" in data:
            return shapley_operator(GameGraph.from_json(data["game"]))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    raise InputError(f"{path}: expected an 'operator' or a 'game' field")


def _eigen_pipeline(cfg: RunConfig, data) -> Tuple[int, dict]:
    g = _game(cfg.input_path, data)
    F = shapley_operator(g)
    psi = _parse_psi(cfg.psi, g.n)
    report = solve_additive_eigenpair(F, psi=psi, theta=cfg.theta, tol=cfg.tol, max_iter=cfg.max_iter)
    out = {"game": g.to_json(), "strongly_connected": g.is_strongly_connected()}
    if not report.converged:
        out["eigen"] = report.to_json()
        return EXIT_NONCONVERGED, out
    if cfg.subcommand in ("certify", "rate"):
        plan = SamplePlan(seed=cfg.seed)
        report = certify_bias_uniqueness(F, report, K=cfg.depth, sample_plan=plan)
    out["eigen"] = report.to_json()
    out["mean_payoff"] = mean_payoff(F).to_json()
    if cfg.subcommand == "rate":
        if report.rate_bound is None or report.rate_bound >= 1.0:
            out["convergence"] = None
            out["convergence_note"] = "no rate bound below 1; geometric convergence not certified"
        else:
            rates = convergence_report(F, report, starts=cfg.starts, k=cfg.steps, seed=cfg.seed)
            out["convergence"] = rates.to_json()
    return EXIT_OK, out


def _metric(cfg: RunConfig, data) -> Tuple[int, dict]:
    if not isinstance(data, dict):
        raise InputError(f"{cfg.input_path}: expected an object with fields 'x' and 'y'")
    x = _vector(cfg.input_path, data, "x")
    y = _vector(cfg.input_path, data, "y")
    u = _vector(cfg.input_path, data, "u", required=False)
    try:
        u = np.ones_like(x) if u is None else u
        out = {
            "hilbert": cm.hilbert_metric(x, y),
            "thompson": cm.thompson_metric(x, y),
            "scale_upper": cm.scale_upper(y, x),
            "scale_lower": cm.scale_lower(y, x),
            "local_norm_diff": cm.local_norm(x - y, u),
            "oscillation_diff": cm.oscillation(x - y, u),
        }
    except ValueError as exc:
        raise InputError(f"{cfg.input_path}: {exc}") from None
    return EXIT_OK, out


def _semidiff(cfg: RunConfig, data) -> Tuple[int, dict]:
    if not isinstance(data, dict):
        raise InputError(f"{cfg.input_path}: expected an object")
    f = _operator(cfg.input_path, data)
    v = _vector(cfg.input_path, data, "v")
    if v.size != f.n:
        raise InputError(f"{cfg.input_path}: 'v' has length {v.size}, operator dimension is {f.n}")
    fp, active = semidifferential(f, v)
    out = {"value": f(v).tolist(), "semidifferential": fp.to_json(), "active_sets": active.to_json()}
    x = _vector(cfg.input_path, data, "direction", required=False)
    if x is not None:
        if x.size != f.n:
            raise InputError(f"{cfg.input_path}: 'direction' has length {x.size}, expected {f.n}")
        q, stable = directional_derivative_fd(f, v, x)
        out["direction"] = {
            "symbolic": fp(x).tolist(),
            "finite_difference": q.tolist(),
            "stabilized": stable,
            "breakpoint_radius": breakpoint_radius(f, v, x),
        }
    return EXIT_OK, out


def _spectral(cfg: RunConfig, data) -> Tuple[int, dict]:
    if not isinstance(data, dict):
        raise InputError(f"{cfg.input_path}: expected an object")
    h = _operator(cfg.input_path, data)
    if "v" in data:
        h, _ = semidifferential(h, _vector(cfg.input_path, data, "v"))
    u = _vector(cfg.input_path, data, "u", required=False)
    try:
        if cfg.norm == "sup":
            norm = NormKind("sup")
        elif cfg.norm == "local":
            norm = NormKind("local", None if u is None else tuple(u))
        else:
            norm = NormKind("oscillation", None if u is None else tuple(u))
        plan = SamplePlan(seed=cfg.seed)
        est = bonsall_estimate(h, cfg.depth, norm, plan)
        out = {"estimate": est.to_json()}
        if cfg.target is not None:
            out["certificate"] = certify_contraction(h, norm, cfg.target, cfg.depth, plan).to_json()
    except ValueError as exc:
        raise InputError(f"{cfg.input_path}: {exc}") from None
    return EXIT_OK, out


def run(cfg: RunConfig) -> Tuple[int, dict]:
    """Dispatch one subcommand; returns (exit status, JSON-ready report)."""
    try:
        cfg.validate()
        data = _load_json(cfg.input_path)
        if cfg.subcommand in ("solve", "certify", "rate"):
            status, body = _eigen_pipeline(cfg, data)
        elif cfg.subcommand == "metric":
            status, body = _metric(cfg, data)
        elif cfg.subcommand == "semidiff":
            status, body = _semidiff(cfg, data)
        else:
            status, body = _spectral(cfg, data)
    except InputError as exc:
        return EXIT_INPUT, {"schema_version": SCHEMA_VERSION, "command": cfg.subcommand, "error": str(exc)}
    return status, {"schema_version": SCHEMA_VERSION, "command": cfg.subcommand, **body}


def _summary(report: dict) -> str:
    if "error" in report:
        return f"error: {report['error']}"
    lines = [f"{report['command']}:"]
    eig = report.get("eigen")
    if eig:
        fmt = ", ".join(f"{a:.6g}" for a in eig["u"])
        lines.append(f"  bias u = ({fmt}), mu = {eig['mu']:.10g}, residual = {eig['residual']:.3g}")
        lines.append(f"  converged = {eig['converged']} after {eig['iterations']} iterations")
        if eig.get("uniqueness"):
            lines.append(f"  uniqueness: {eig['uniqueness']}, rate bound = {eig['rate_bound']:.6g}")
    conv = report.get("convergence")
    if conv:
        lines.append(f"  max empirical rate = {conv['max_rate']:.4f} over {conv['starts']} starts")
    for key in ("hilbert", "thompson"):
        if key in report:
            lines.append(f"  {key} = {report[key]:.12g}")
    if "estimate" in report:
        est = report["estimate"]
        lines.append(f"  spectral radius in [{est['lower']:.6g}, {est['upper']:.6g}] (exact={est['exact']})")
    return "\n".join(lines)


def _to_builtin(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_to_builtin, allow_nan=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", required=True, help="JSON file, or builtin:fig1")
    common.add_argument("--output", help="write the JSON report here instead of stdout")
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--max-iter", type=int, default=10_000)
    common.add_argument("--depth", type=int, default=DEFAULT_DEPTH)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--psi", default="avg", help="avg or coord:<index> (0-based)")
    common.add_argument("--theta", type=float, default=0.5)
    common.add_argument("--starts", type=int, default=100)
    common.add_argument("--steps", type=int, default=40)
    common.add_argument("--norm", choices=("sup", "local", "oscillation"), default="oscillation")
    common.add_argument("--target", type=float, default=None)
    common.add_argument("--text", action="store_true", help="print a plain-text summary to stderr")
    parser = argparse.ArgumentParser(prog="conefix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seed = args.seed
    env = os.environ.get("CONEFIX_SEED")
    if env is not None:
        try:
            seed = int(env, 0)
        except ValueError:
            print(f"error: CONEFIX_SEED={env!r} is not an integer", file=sys.stderr)
            return EXIT_INPUT
    cfg = RunConfig(
        subcommand=args.subcommand,
        input_path=args.input,
        output_path=args.output,
        tol=args.tol,
        max_iter=args.max_iter,
        depth=args.depth,
        seed=seed,
        psi=args.psi,
        theta=args.theta,
        starts=args.starts,
        steps=args.steps,
        norm=args.norm,
        target=args.target,
        text=args.text,
    )
    status, report = run(cfg)
    text = dumps(report)
    if cfg.output_path:
        try:
            Path(cfg.output_path).write_text(text)
        except OSError as exc:
            print(f"error: {cfg.output_path}: cannot write ({exc.strerror})", file=sys.stderr)
            return EXIT_INPUT
    else:
        sys.stdout.write(text)
    if cfg.text or status == EXIT_INPUT:
        print(_summary(report), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
