"""Command-line benchmark harness.

Subcommands: ``complete`` (misfit-target completion), ``baseline-lsqr``
(unregularized factored least squares), ``robust`` (contaminated data,
Student's t vs least squares), ``weighted`` / ``continuation`` (subspace
re-weighting), and ``oracle-check`` (factored vs SVD-projected value
functions).  Reports are JSON (or a one-line-per-run CSV summary) and every
command is reproducible from its arguments and seed.

Exit codes: 0 success, 2 infeasible rank, 3 budget exhausted or divergence,
4 I/O or bad input, 5 oracle regression.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time

import numpy as np
import scipy

from . import __version__
from .core import FactorPair, SolverConfig, load_matrix, load_matrix_csv, save_matrix
from .data import (
    eta_absolute,
    gen_correlated_slices,
    gen_low_rank,
    gen_mask,
    load_triplets_csv,
    observe,
    contaminate,
    snr_db,
)
from .errors import DivergenceError, TripletParseError
from .operators import SamplingOp
from .pareto import (
    CompletionProblem,
    STATUS_BUDGET,
    STATUS_CONVERGED,
    STATUS_INFEASIBLE_RANK,
    convex_value_function,
    evaluate_value_function,
    gaussian_init,
    solve_bpdn,
)
from .penalties import rho_misfit, students_t, two_norm
from .spg import no_projection, spg_solve
from .weighting import SubspaceWeights, frequency_continuation, solve_weighted_bpdn

EXIT_OK = 0
EXIT_INFEASIBLE_RANK = 2
EXIT_BUDGET = 3
EXIT_IO = 4
EXIT_ORACLE = 5

CSV_COLUMNS = ["solver", "n", "m", "rank", "sample", "eta_rel", "snr_db", "seconds"]


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------

def _parse_gen(spec: str) -> dict:
    parts = spec.split(":")
    kind = parts[0]
    if kind == "lowrank":
        if len(parts) != 3 or not parts[2].startswith("r"):
            raise ValueError(f"bad --gen spec {spec!r}, want lowrank:NxM:rK")
        n, m = (int(t) for t in parts[1].split("x"))
        return {"kind": "lowrank", "n": n, "m": m, "rank": int(parts[2][1:])}
    if kind == "slices":
        if len(parts) != 5 or not parts[2].startswith("r"):
            raise ValueError(f"bad --gen spec {spec!r}, want slices:NxM:rK:COUNT:DRIFT")
        n, m = (int(t) for t in parts[1].split("x"))
        return {
            "kind": "slices",
            "n": n,
            "m": m,
            "rank": int(parts[2][1:]),
            "count": int(parts[3]),
            "drift": float(parts[4]),
        }
    raise ValueError(f"unknown --gen kind {kind!r}")


def _parse_contaminate(spec: str) -> tuple[float, float]:
    frac, mult = spec.split(":")
    return float(frac), float(mult)


def _parse_shape(spec: str) -> tuple[int, int]:
    n, m = (int(t) for t in spec.split("x"))
    return n, m


def _add_instance_args(p: argparse.ArgumentParser):
    p.add_argument("--gen", help="synthetic instance, lowrank:NxM:rK or slices:NxM:rK:C:DRIFT")
    p.add_argument("--input", help="ratings-triplet CSV (row,col,value)")
    p.add_argument("--shape", help="matrix shape NxM when --input cannot infer it")
    p.add_argument("--sample", type=float, default=1.0, help="retained fraction")
    p.add_argument("--mask-mode", choices=["entries", "columns"], default="entries")
    p.add_argument("--seed", type=int, default=0)


def _add_solver_args(p: argparse.ArgumentParser):
    p.add_argument("--rank", type=int, default=10, help="factor rank k")
    p.add_argument("--rank-grow", type=int, default=0, help="columns added per growth event")
    p.add_argument("--eta-rel", type=float, help="misfit target relative to the zero solution")
    p.add_argument("--eta-abs", type=float, help="absolute misfit target")
    p.add_argument("--penalty", choices=["ls", "student"], default="ls")
    p.add_argument("--nu", type=float, default=1.0, help="Student's t degrees of freedom")
    p.add_argument("--max-inner", type=int, default=20_000, help="total inner iteration budget")
    p.add_argument("--max-outer", type=int, default=30)
    p.add_argument("--root-tol", type=float, default=5e-3)
    p.add_argument("--omega", type=float, default=0.5, help="subspace shrink factor")


def _add_output_args(p: argparse.ArgumentParser):
    p.add_argument("--out", help="report path")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--save-matrix", help="write the recovered matrix (binary)")


def _penalty_from_args(args):
    return students_t(args.nu) if args.penalty == "student" else two_norm()


def _config_from_args(args, rank=None) -> SolverConfig:
    return SolverConfig(
        factor_rank=rank if rank is not None else args.rank,
        max_outer_newton_steps=args.max_outer,
        max_inner_spg_iterations=args.max_inner,
        root_tolerance=args.root_tol,
        seed=args.seed,
        rank_growth=args.rank_grow,
    )


def _load_dense(path) -> np.ndarray:
    if str(path).endswith(".csv"):
        return load_matrix_csv(path)
    return load_matrix(path)


def _build_instance(args):
    """Returns (truth or None, Observations)."""
    if args.gen:
        gen = _parse_gen(args.gen)
        if gen["kind"] != "lowrank":
            raise ValueError("this command takes --gen lowrank:NxM:rK")
        truth = gen_low_rank(gen["n"], gen["m"], gen["rank"], seed=args.seed)
        mask = gen_mask((gen["n"], gen["m"]), args.mask_mode, args.sample, seed=args.seed + 1)
        return truth, observe(truth, mask)
    if args.input:
        shape = _parse_shape(args.shape) if args.shape else None
        obs = load_triplets_csv(args.input, shape=shape)
        return None, obs
    raise ValueError("need --gen or --input")


def _eta_abs(args, penalty, b) -> tuple[float, float | None]:
    if args.eta_abs is not None:
        return args.eta_abs, None
    if args.eta_rel is None:
        raise ValueError("need --eta-rel or --eta-abs")
    return eta_absolute(args.eta_rel, penalty, b), args.eta_rel


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "+inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _report_skeleton(args, command: str) -> dict:
    return {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "seed": args.seed,
        "versions": {"lrbpdn": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "runs": [],
    }


def _status_exit(statuses) -> int:
    if any(s == STATUS_INFEASIBLE_RANK for s in statuses):
        return EXIT_INFEASIBLE_RANK
    if any(s == STATUS_BUDGET for s in statuses):
        return EXIT_BUDGET
    return EXIT_OK


def _solve_run(name, problem, eta_abs, eta_rel, config, truth, weights=None) -> dict:
    start = time.perf_counter()
    if weights is None:
        fp, trace = solve_bpdn(eta_abs, problem, config)
    else:
        fp, trace = solve_weighted_bpdn(eta_abs, weights, problem, config)
    wall = time.perf_counter() - start
    run = {
        "solver": name,
        "eta_rel": eta_rel,
        "eta_abs": eta_abs,
        "rank": fp.k,
        "snr_db": None,
        "misfit_final": rho_misfit(problem.penalty, problem.op.forward(fp.product()) - problem.b),
        "tau_final": trace.tau_final,
        "wall_seconds": wall,
        "inner_iterations_total": trace.inner_iterations_total,
        "status": trace.status,
        "pareto_trace": trace.to_json(),
    }
    if truth is not None:
        run["snr_db"] = snr_db(truth, fp.product())
    return run, fp


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_complete(args) -> tuple[int, dict]:
    truth, obs = _build_instance(args)
    penalty = _penalty_from_args(args)
    problem = CompletionProblem(SamplingOp(obs.shape, obs.indices), obs.values, penalty)
    eta_abs, eta_rel = _eta_abs(args, penalty, obs.values)
    config = _config_from_args(args)
    report = _report_skeleton(args, "complete")
    run, fp = _solve_run("lr-bpdn", problem, eta_abs, eta_rel, config, truth)
    report["runs"].append(run)
    if args.save_matrix:
        save_matrix(args.save_matrix, fp.product())
    code = _status_exit([run["status"]])
    if code == EXIT_INFEASIBLE_RANK:
        print(f"infeasible factor rank {args.rank}: misfit stalled above eta", file=sys.stderr)
    return code, report


def cmd_baseline_lsqr(args) -> tuple[int, dict]:
    truth, obs = _build_instance(args)
    penalty = two_norm()
    problem = CompletionProblem(SamplingOp(obs.shape, obs.indices), obs.values, penalty)
    config = _config_from_args(args)
    data_energy = float(np.dot(problem.b, problem.b))
    init = gaussian_init(problem.shape, config.factor_rank, 1e-4 * data_energy, config.seed)
    report = _report_skeleton(args, "baseline-lsqr")
    start = time.perf_counter()
    try:
        state = spg_solve(
            problem.op,
            problem.b,
            penalty,
            no_projection(),
            init,
            tol=1e-7,
            max_iters=args.max_inner,
            memory=config.line_search_memory,
        )
    except DivergenceError as exc:
        report["runs"].append({"solver": "baseline-lsqr", "status": f"diverged: {exc}"})
        return EXIT_BUDGET, report
    wall = time.perf_counter() - start
    fp = state.factors
    run = {
        "solver": "baseline-lsqr",
        "eta_rel": None,
        "eta_abs": None,
        "rank": fp.k,
        "snr_db": snr_db(truth, fp.product()) if truth is not None else None,
        "misfit_final": rho_misfit(penalty, state.residual),
        "tau_final": None,
        "wall_seconds": wall,
        "inner_iterations_total": state.iterations_used,
        "status": "baseline",
        "pareto_trace": None,
    }
    report["runs"].append(run)
    if args.save_matrix:
        save_matrix(args.save_matrix, fp.product())
    return EXIT_OK, report


def cmd_robust(args) -> tuple[int, dict]:
    truth, obs = _build_instance(args)
    if args.contaminate:
        frac, mult = _parse_contaminate(args.contaminate)
        obs, hit = contaminate(obs, frac, mult, mode=args.contaminate_mode, seed=args.seed + 2)
    else:
        hit = np.empty((0, 2), dtype=np.int64)
    op = SamplingOp(obs.shape, obs.indices)
    report = _report_skeleton(args, "robust")
    report["contaminated_count"] = int(hit.shape[0])
    statuses = []
    for name, penalty in (
        ("student-bpdn", students_t(args.nu)),
        ("ls-bpdn", two_norm()),
    ):
        problem = CompletionProblem(op, obs.values, penalty)
        eta_abs, eta_rel = _eta_abs(args, penalty, obs.values)
        run, fp = _solve_run(name, problem, eta_abs, eta_rel, args_config := _config_from_args(args), truth)
        report["runs"].append(run)
        statuses.append(run["status"])
        if args.save_matrix and name == "student-bpdn":
            save_matrix(args.save_matrix, fp.product())
    if truth is not None:
        snrs = {r["solver"]: r["snr_db"] for r in report["runs"]}
        report["snr_delta_db"] = snrs["student-bpdn"] - snrs["ls-bpdn"]
    return _status_exit(statuses), report


def _subspaces_for(args, truth, config) -> SubspaceWeights:
    k = args.subspace_rank or config.factor_rank
    if args.subspace_source == "true":
        if truth is None:
            raise ValueError("--subspace-source true needs a generated instance")
        u, _, vt = np.linalg.svd(truth, full_matrices=False)
        return SubspaceWeights(u[:, :k], vt[:k].T, args.omega)
    if args.subspace_source == "file":
        if not (args.subspace_u and args.subspace_v):
            raise ValueError("--subspace-source file needs --subspace-u and --subspace-v")
        return SubspaceWeights(_load_dense(args.subspace_u), _load_dense(args.subspace_v), args.omega)
    if args.subspace_source == "previous-run":
        if not args.subspace_from:
            raise ValueError("--subspace-source previous-run needs --subspace-from MATRIX")
        x = _load_dense(args.subspace_from)
        u, _, vt = np.linalg.svd(x, full_matrices=False)
        return SubspaceWeights(u[:, :k], vt[:k].T, args.omega)
    raise ValueError(f"unknown subspace source {args.subspace_source!r}")


def cmd_weighted(args) -> tuple[int, dict]:
    truth, obs = _build_instance(args)
    penalty = _penalty_from_args(args)
    problem = CompletionProblem(SamplingOp(obs.shape, obs.indices), obs.values, penalty)
    eta_abs, eta_rel = _eta_abs(args, penalty, obs.values)
    config = _config_from_args(args)
    weights = _subspaces_for(args, truth, config)
    report = _report_skeleton(args, "weighted")
    run_w, fp_w = _solve_run("weighted-bpdn", problem, eta_abs, eta_rel, config, truth, weights=weights)
    run_u, _ = _solve_run("lr-bpdn", problem, eta_abs, eta_rel, config, truth)
    report["runs"] = [run_w, run_u]
    if truth is not None:
        report["snr_delta_db"] = run_w["snr_db"] - run_u["snr_db"]
    if args.save_matrix:
        save_matrix(args.save_matrix, fp_w.product())
    return _status_exit([run_w["status"], run_u["status"]]), report


def cmd_continuation(args) -> tuple[int, dict]:
    if not args.gen:
        raise ValueError("continuation needs --gen slices:NxM:rK:C:DRIFT")
    gen = _parse_gen(args.gen)
    if gen["kind"] != "slices":
        raise ValueError("continuation needs --gen slices:NxM:rK:C:DRIFT")
    stack = gen_correlated_slices(
        gen["n"],
        gen["m"],
        gen["rank"],
        gen["count"],
        gen["drift"],
        seed=args.seed,
        sampling_fraction=args.sample,
        mask_mode=args.mask_mode,
    )
    if args.eta_rel is None:
        raise ValueError("continuation needs --eta-rel")
    config = _config_from_args(args)
    report = _report_skeleton(args, "continuation")
    start = time.perf_counter()
    _, rows = frequency_continuation(stack, args.eta_rel, args.omega, config)
    report["wall_seconds"] = time.perf_counter() - start
    report["runs"] = rows
    weighted = [r["snr_db"] for r in rows if r["weighted"] and r["snr_db"] is not None]
    plain = [r["snr_db"] for r in rows if not r["weighted"] and r["snr_db"] is not None]
    if weighted and plain:
        report["mean_weighted_snr_db"] = float(np.mean(weighted))
        report["mean_unweighted_snr_db"] = float(np.mean(plain))
    statuses = [r["status"] for r in rows if isinstance(r.get("status"), str)]
    solver_statuses = [s for s in statuses if s in (STATUS_CONVERGED, STATUS_BUDGET, STATUS_INFEASIBLE_RANK)]
    return _status_exit(solver_statuses), report


def cmd_oracle_check(args) -> tuple[int, dict]:
    report = _report_skeleton(args, "oracle-check")
    fractions = np.linspace(0.15, 0.9, args.grid_points)
    gaps = []
    start = time.perf_counter()
    for i in range(args.instances):
        seed = args.seed + i
        truth = gen_low_rank(args.size, args.size, args.true_rank, seed=seed)
        mask = gen_mask((args.size, args.size), "entries", args.sample, seed=seed + 1)
        obs = observe(truth, mask)
        problem = CompletionProblem(SamplingOp(obs.shape, obs.indices), obs.values, two_norm())
        tau_star = float(np.linalg.svd(truth, compute_uv=False).sum())
        warm_f = None
        warm_x = None
        for frac in fractions:
            tau = frac * tau_star
            v_f, state_f = evaluate_value_function(
                tau, warm_f, problem,
                tol=args.subproblem_tol, max_iters=args.max_inner,
                factor_rank=args.rank, seed=seed,
            )
            v_c, state_c = convex_value_function(
                tau, problem, tol=args.subproblem_tol, max_iters=args.max_inner,
                warm_x=warm_x, seed=seed,
            )
            warm_f = state_f.factors
            warm_x = state_c.x
            gap = abs(v_f - v_c)
            gaps.append(gap)
            report["runs"].append(
                {
                    "solver": "oracle-check",
                    "instance_seed": seed,
                    "tau": tau,
                    "v_factorized": v_f,
                    "v_convex": v_c,
                    "gap": gap,
                }
            )
    report["wall_seconds"] = time.perf_counter() - start
    report["max_gap"] = max(gaps)
    report["gap_tolerance"] = args.gap_tol
    rank_constrained = args.rank < args.true_rank
    report["rank_constrained"] = rank_constrained
    if report["max_gap"] > args.gap_tol:
        if rank_constrained:
            # a positive gap is the expected rank-constrained behaviour
            return EXIT_INFEASIBLE_RANK, report
        return EXIT_ORACLE, report
    return EXIT_OK, report


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrbpdn", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("complete", help="misfit-target low-rank completion")
    _add_instance_args(p)
    _add_solver_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("baseline-lsqr", help="unregularized factored least-squares fit")
    _add_instance_args(p)
    _add_solver_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_baseline_lsqr)

    p = sub.add_parser("robust", help="contaminated completion, Student's t vs least squares")
    _add_instance_args(p)
    _add_solver_args(p)
    _add_output_args(p)
    p.add_argument("--contaminate", help="FRACTION:MULTIPLIER, e.g. 0.1:3")
    p.add_argument("--contaminate-mode", choices=["columns", "entries"], default="columns")
    p.set_defaults(func=cmd_robust)

    p = sub.add_parser("weighted", help="subspace-weighted completion")
    _add_instance_args(p)
    _add_solver_args(p)
    _add_output_args(p)
    p.add_argument("--subspace-source", choices=["true", "file", "previous-run"], default="true")
    p.add_argument("--subspace-rank", type=int)
    p.add_argument("--subspace-u")
    p.add_argument("--subspace-v")
    p.add_argument("--subspace-from")
    p.set_defaults(func=cmd_weighted)

    p = sub.add_parser("continuation", help="solve a slice stack with learned subspaces")
    _add_instance_args(p)
    _add_solver_args(p)
    _add_output_args(p)
    p.set_defaults(func=cmd_continuation)

    p = sub.add_parser("oracle-check", help="factored vs convex value functions on a tau grid")
    p.add_argument("--size", type=int, default=15)
    p.add_argument("--true-rank", type=int, default=3)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--grid-points", type=int, default=5)
    p.add_argument("--sample", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--gap-tol", type=float, default=1e-4)
    p.add_argument("--subproblem-tol", type=float, default=1e-9)
    p.add_argument("--max-inner", type=int, default=4000)
    _add_output_args(p)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def _write_report(args, report: dict):
    payload = _jsonable(report)
    if args.format == "csv":
        lines = [",".join(CSV_COLUMNS)]
        for run in report.get("runs", []):
            gen = getattr(args, "gen", None)
            shape = _parse_gen(gen) if gen else {}
            row = [
                str(run.get("solver", "")),
                str(shape.get("n", "")),
                str(shape.get("m", "")),
                str(run.get("rank", "")),
                str(getattr(args, "sample", "")),
                str(run.get("eta_rel", "")),
                f"{run['snr_db']:.4f}" if isinstance(run.get("snr_db"), float) else "",
                f"{run['wall_seconds']:.3f}" if isinstance(run.get("wall_seconds"), float) else "",
            ]
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(payload, indent=2, allow_nan=False) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run_cli(argv) -> tuple[int, dict | None]:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code, report = args.func(args)
    except (OSError, TripletParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO, None
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO, None
    _write_report(args, report)
    for run in report.get("runs", []):
        solver = run.get("solver")
        if "snr_db" in run and run.get("snr_db") is not None:
            print(f"{solver}: snr_db={run['snr_db']:.2f} status={run.get('status')}", file=sys.stderr)
    return code, report


def main(argv=None) -> int:
    code, _ = run_cli(argv if argv is not None else sys.argv[1:])
    return code


if __name__ == "__main__":
    sys.exit(main())
