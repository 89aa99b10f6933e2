"""Command-line front end: solve, sweep, thresholds, verify, simulate.

Exit codes: 0 success, 1 bad input, 2 solver or verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dynamics import FleetState, induced_policy, iterate_to_fixed_point
from .equilibrium import (
    RecoveryFailed,
    SolveFailed,
    build_for_source,
    point_from_solution,
    solve_equilibrium,
)
from .model import (
    Assignment,
    DeploymentMode,
    EconomicParams,
    EquilibriumSolution,
    ModelError,
    Scenario,
    load_scenario,
)
from .qp import QpSettings, dump_problem
from .star import (
    StarCompleteSpec,
    compute_thresholds,
    k_grid,
    sweep,
    write_sweep_csv,
)
from .verify import (
    VerificationError,
    certify_point,
    compute_expected_earnings,
    earnings_residual,
    verify_original_feasibility,
)

EXIT_OK, EXIT_INPUT, EXIT_VERIFY = 0, 1, 2
VERIFY_TOL = 1e-6


class InputError(Exception):
    pass


class DimensionMismatch(InputError):
    pass


class VerifyFailed(Exception):
    pass


def _settings(args) -> QpSettings:
    return QpSettings(eps_primal=args.tol_primal, eps_dual=args.tol_dual, max_iter=args.max_iter)


def _scenario(args) -> Scenario:
    sc = load_scenario(args.scenario)
    k, s = getattr(args, "k", None), getattr(args, "s", None)
    par = sc.params
    if k is not None:
        par = EconomicParams.from_k(par.beta, par.omega, k, par.pbar)
    elif s is not None:
        par = EconomicParams(par.beta, par.omega, s, par.pbar)
    return Scenario(sc.pattern, par)


def _star_spec(path) -> StarCompleteSpec | None:
    doc = json.loads(Path(path).read_text())
    sc = doc.get("star_to_complete") if isinstance(doc, dict) else None
    return StarCompleteSpec(int(sc["n"]), float(sc["xi"])) if sc else None


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_solve(args) -> int:
    sc = _scenario(args)
    settings = _settings(args)
    assignment, mode = Assignment(args.assignment), DeploymentMode(args.mode)
    rep = solve_equilibrium(sc.pattern, sc.params, assignment, mode, settings,
                            search="exhaustive" if args.exhaustive else "cases")
    if args.dump_qp:
        build = build_for_source(rep.source, sc.pattern, sc.params, assignment)
        with open(args.dump_qp, "w") as fh:
            dump_problem(build.qp, fh)
    if args.out:
        _write_json(args.out, rep.to_dict())
    print(f"profit {rep.profit:.12g}")
    print(f"regime {rep.regime.value}")
    worst = max(rep.equilibrium_residual, rep.earnings_residual, rep.kkt.max_violation)
    if worst > VERIFY_TOL:
        raise VerifyFailed(f"solution residual {worst:.3g} exceeds {VERIFY_TOL:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    try:
        ks = k_grid(args.k_from, args.k_to, args.k_step)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    spec = _star_spec(args.scenario)
    p = sc.params
    rows = sweep(sc.pattern, p.beta, p.omega, p.pbar, ks, Assignment(args.assignment), spec,
                 _settings(args), workers=args.workers)
    with open(args.out, "w", newline="") as fh:
        write_sweep_csv(rows, fh)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_thresholds(args) -> int:
    try:
        spec = StarCompleteSpec(args.n, args.xi)
        t = compute_thresholds(spec, args.beta)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.json:
        print(json.dumps(t.to_dict()))
    else:
        for key, val in t.to_dict().items():
            print(f"{key} = {val}")
    return EXIT_OK


def _solution_from_report(doc: dict, n: int) -> EquilibriumSolution:
    try:
        vec = {k: np.asarray(doc[k], dtype=float) for k in ("p", "c", "d", "delta", "x", "z")}
        mat = {k: np.asarray(doc[k], dtype=float) for k in ("y", "r")}
        profit = float(doc["profit"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"report is missing or has a malformed field: {exc}") from None
    for k, v in vec.items():
        if v.shape != (n,):
            raise DimensionMismatch(f"report field {k!r} has shape {v.shape}, scenario has n = {n}")
    for k, v in mat.items():
        if v.shape != (n, n):
            raise DimensionMismatch(f"report field {k!r} has shape {v.shape}, scenario has n = {n}")
    try:
        return EquilibriumSolution(vec["p"], vec["c"], vec["d"], vec["delta"], vec["x"],
                                   mat["y"], vec["z"], mat["r"], profit)
    except ModelError as exc:
        raise VerifyFailed(f"report values are outside the model domain: {exc}") from None


def _default_source(doc: dict, assignment: Assignment) -> str:
    regime = doc.get("regime")
    if regime == "HvOnly":
        return "hv-only"
    if regime == "AvOnly":
        return "av-only"
    return {Assignment.HV_PRIORITY: "hv-case", Assignment.AV_PRIORITY: "av-case",
            Assignment.WEIGHTED: "weighted-surrogate"}[assignment]


def cmd_verify(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed report JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("report must be a JSON object")
    if args.k is None and args.s is None and isinstance(doc.get("s"), (int, float)):
        args.s = float(doc["s"])  # the cost the report was solved at
    sc = _scenario(args)
    assignment = Assignment(args.assignment or doc.get("assignment", "hv"))
    sol = _solution_from_report(doc, sc.pattern.n)
    checks = []
    feas = verify_original_feasibility(sol, sc.pattern, sc.params, assignment)
    checks += list(feas.per_constraint.items())
    try:
        earn = compute_expected_earnings(sol, sc.pattern, sc.params, assignment)
        checks.append(("earnings", earnings_residual(sol, earn, sc.params)))
    except VerificationError as exc:
        checks.append(("earnings", float("inf")))
        print(f"earnings: {exc}", file=sys.stderr)
    source = doc.get("source") or _default_source(doc, assignment)
    source_asg = Assignment(doc.get("assignment", assignment.value))
    build = build_for_source(source, sc.pattern, sc.params, source_asg)
    cert = certify_point(build, point_from_solution(build, sol))
    checks += [(f"kkt:{name}", val) for name, val in cert.per_condition]
    eq = feas.max_violation
    er = dict(checks)["earnings"]
    kkt = cert.max_violation
    print(f"equilibrium_residual {eq:.3e}")
    print(f"earnings_residual {er:.3e}")
    print(f"kkt_max_violation {kkt:.3e}")
    if max(eq, er, kkt) > VERIFY_TOL:
        name, val = max(checks, key=lambda kv: kv[1])
        raise VerifyFailed(f"worst offender {name} = {val:.3e}")
    print("verified")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.steps < 1:
        raise InputError("--steps must be at least 1")
    sc = _scenario(args)
    assignment = Assignment(args.assignment)
    rep = solve_equilibrium(sc.pattern, sc.params, assignment, settings=_settings(args))
    s = rep.solution
    start = FleetState(s.x * (1 + args.perturb), s.z * (1 + args.perturb))
    traj = iterate_to_fixed_point(start, s.p, s.delta, induced_policy(s), sc.pattern, sc.params,
                                  assignment, args.steps, args.tol, keep_states=args.wide)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            traj.write_csv(fh, wide=args.wide)
    print(f"converged={'true' if traj.converged else 'false'} steps={traj.steps}")
    return EXIT_OK


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--tol-primal", type=float, default=d(1e-8), help="QP primal tolerance")
    p.add_argument("--tol-dual", type=float, default=d(1e-8), help="QP dual tolerance")
    p.add_argument("--max-iter", type=int, default=d(200_000), help="QP iteration cap")
    p.add_argument("--seed", type=int, default=d(0),
                   help="seed for randomized scenario generation (solves are deterministic)")


def _add_cost(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=float, help="relative AV cost, overrides the scenario")
    g.add_argument("--s", type=float, help="per-period AV cost, overrides the scenario")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixauto", description=__doc__.splitlines()[0])
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="verb", required=True)
    asg = [a.value for a in Assignment]

    p = sub.add_parser("solve", help="solve one scenario")
    p.add_argument("scenario")
    p.add_argument("--assignment", choices=asg, default="hv")
    p.add_argument("--mode", choices=[m.value for m in DeploymentMode], default="mixed")
    p.add_argument("--out", help="SolveReport JSON path")
    p.add_argument("--exhaustive", action="store_true",
                   help="enumerate all sign patterns (hv/av, n <= 10)")
    p.add_argument("--dump-qp", metavar="PATH", help="write the selected QP as a coordinate listing")
    _add_cost(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="profits over a grid of k")
    p.add_argument("scenario")
    p.add_argument("--k-from", type=float, required=True)
    p.add_argument("--k-to", type=float, required=True)
    p.add_argument("--k-step", type=float, required=True)
    p.add_argument("--assignment", choices=asg, default="hv")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("thresholds", help="closed-form star-to-complete thresholds")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--xi", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("verify", help="re-check a SolveReport")
    p.add_argument("report")
    p.add_argument("scenario")
    p.add_argument("--assignment", choices=asg)
    _add_cost(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="forward dynamics from a perturbed equilibrium")
    p.add_argument("scenario")
    p.add_argument("--assignment", choices=asg, default="hv")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--perturb", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--wide", action="store_true", help="add per-location columns")
    p.add_argument("--out")
    _add_cost(p)
    p.set_defaults(func=cmd_simulate)

    for action in sub.choices.values():
        _add_globals(action, suppress=True)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, ModelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (VerifyFailed, SolveFailed, RecoveryFailed, VerificationError) as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
