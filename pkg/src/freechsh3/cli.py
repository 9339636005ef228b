"""Command-line pipeline: solve, verify, generate, certify, curve.

Every command that writes an output directory also serializes its run
configuration and the tool version there, so a rerun with equal settings
reproduces all non-network artifacts byte for byte. Exit codes: 0 success or
certified, 1 failed check or not certified, 2 usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, bell, certify, plot, qrng, relax, sdp

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3

FMT = "%.9g"


def _fmt(value: float) -> str:
    return FMT % value


def _write_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    payload = {
        key: value
        for key, value in sorted(vars(args).items())
        if key != "func" and not key.startswith("_")
    }
    payload["tool_version"] = __version__
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _solver_config(args: argparse.Namespace) -> sdp.SolverConfig:
    return sdp.SolverConfig(
        tol=args.tol,
        max_iter=args.max_iter,
        method=args.solver_method,
        embed_complex=args.embed_complex,
    )


def _mode(args: argparse.Namespace) -> relax.RelaxationMode:
    return relax.RelaxationMode(args.mode)


def cmd_solve(args: argparse.Namespace) -> int:
    report = relax.solve_relaxation(
        d=args.d, mode=_mode(args), config=_solver_config(args)
    )
    if report.solution.status is not sdp.SolveStatus.OPTIMAL:
        print(f"solver did not reach optimality: {report.solution.status.value}",
              file=sys.stderr)
        return EXIT_SOLVER
    print(f"f1* = {report.f1_star:.9f}")
    print(f"status = {report.solution.status.value}")
    print(f"iterations = {report.solution.iterations}")
    print(f"primal_residual = {_fmt(report.solution.primal_residual)}")
    print(f"psd_violation = {_fmt(report.solution.psd_violation)}")
    if args.d != 3:
        print(f"note: d={args.d} value is reported as measured; "
              "no optimality claim beyond the solver tolerance is made")
    if args.out:
        out_dir = Path(args.out)
        _write_run_config(out_dir, args)
        with open(out_dir / "solve_report.json", "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "moment_matrix.csv", "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(relax.moment_matrix_to_csv(report.moment_matrix))
        if args.save_problem:
            sdp.save_problem(
                relax.build_relaxation(args.d, mode=_mode(args)),
                out_dir / "problem.sdp",
            )
    return EXIT_OK


def _shipped_golden_text() -> str:
    return (
        resources.files("freechsh3")
        .joinpath("data/optimal_moment_matrix.csv")
        .read_text(encoding="utf-8")
    )


def cmd_verify(args: argparse.Namespace) -> int:
    feas_tol = args.tol
    eig_tol = 1e3 * args.tol
    value_tol = 1e2 * args.tol

    if args.golden:
        golden_text = Path(args.golden).read_text(encoding="utf-8")
    else:
        golden_text = _shipped_golden_text()
    try:
        m_star = relax.moment_matrix_from_integer_csv(golden_text)
    except (ValueError, IndexError) as exc:
        print(f"golden file unreadable: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    failures = []
    hard_coded = relax.optimal_moment_matrix()
    if m_star.shape != hard_coded.shape or bool(
        np.max(np.abs(m_star - hard_coded)) > 0
    ):
        failures.append("golden file disagrees with the built-in matrix")

    problem = relax.build_relaxation(3, mode=relax.RelaxationMode.BASIC)
    feas = sdp.check_feasibility(problem, m_star, feas_tol)
    print(f"constraint_violation = {_fmt(feas.max_violation)}")
    print(f"min_eigenvalue = {_fmt(feas.min_eigenvalue)}")
    print(f"objective = {_fmt(feas.objective)}")
    if not feas.passed:
        failures.append("feasibility check failed")
    if abs(feas.objective - 4.0) > value_tol:
        failures.append("objective is not 4")

    from . import numerics

    eigs = numerics.hermitian_eig(m_star).eigenvalues
    expected = np.array([7 / 3, 4 / 3, 4 / 3] + [0.0] * 10)
    eig_dev = float(np.max(np.abs(eigs - expected)))
    print(f"eigenvalue_deviation = {_fmt(eig_dev)}")
    if eig_dev > eig_tol:
        failures.append("spectrum deviates from {7/3, 4/3 x2, 0 x10}")

    config = relax.extract_configuration(m_star)
    report = relax.verify_configuration(config)
    print(f"state_norm_residual = {_fmt(report.state_norm_residual)}")
    for i in bell.OBSERVABLES:
        print(f"orthonormality[{i}] = {_fmt(report.orthonormality_residual[i])}")
        print(f"completeness[{i}] = {_fmt(report.completeness_residual[i])}")
    for (a, b), norm in sorted(report.commutator_norms.items()):
        print(f"commutator[{a},{b}] = {_fmt(norm)}")
    probs = sorted(report.probabilities.values())
    print(f"outcome_probabilities = [{_fmt(probs[0])}, {_fmt(probs[-1])}]")
    if not report.passes(value_tol):
        failures.append("configuration residuals exceed tolerance")
    if max(abs(p - 1 / 3) for p in report.probabilities.values()) > value_tol:
        failures.append("outcome probabilities deviate from 1/3")
    if (
        report.commutator_norms[(1, 2)] > value_tol
        or report.commutator_norms[(3, 4)] > value_tol
    ):
        failures.append("same-block observables do not commute")
    if report.commutator_norms[(1, 3)] <= 0.1:
        failures.append("cross-block observables unexpectedly commute")

    value = relax.bell_value(config)
    print(f"bell_value = {value:.9f}")
    if abs(value - 4.0) > value_tol:
        failures.append("expression value is not 4")

    if failures:
        for failure in failures:
            print(f"FAIL: {failure}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print("verify: all checks passed")
    return EXIT_OK


def _make_source(args: argparse.Namespace) -> qrng.RandomnessSource:
    return qrng.make_source(
        args.adapter,
        seed=args.seed,
        path=args.path,
        endpoint=args.endpoint,
        cache_path=args.cache,
    )


def cmd_generate(args: argparse.Namespace) -> int:
    config = relax.extract_configuration(relax.optimal_moment_matrix())
    source = _make_source(args)
    try:
        trits, seqs = qrng.run_protocol(config, args.rounds, source)
    except qrng.SourceExhaustedError as exc:
        print(f"randomness source exhausted: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED

    header = {
        "adapter": source.describe(),
        "config": qrng.config_fingerprint(config),
        "rounds": str(args.rounds),
        "trit_rounds": str(len(trits)),
        "sequential_rounds": str(len(seqs)),
    }
    trit_values = [t.trit for t in trits]
    if args.out:
        out_dir = Path(args.out)
        _write_run_config(out_dir, args)
        with open(out_dir / "outcome_log.csv", "w", encoding="utf-8",
                  newline="\n") as fh:
            qrng.write_log(fh, trits, seqs, header)
        if args.trit_format == "ascii":
            with open(out_dir / "trits.txt", "w", encoding="utf-8",
                      newline="\n") as fh:
                fh.write("".join(str(t) for t in trit_values))
                fh.write("\n")
        else:
            with open(out_dir / "trits.bin", "wb") as fh:
                fh.write(qrng.pack_trits(trit_values))
    else:
        qrng.write_log(sys.stdout, trits, seqs, header)

    print(f"rounds = {args.rounds}", file=sys.stderr)
    print(f"trits = {len(trit_values)}", file=sys.stderr)
    if trit_values:
        h = qrng.min_entropy_empirical(trit_values)
        print(f"empirical_min_entropy = {h:.9f}", file=sys.stderr)
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    with open(args.log, "r", encoding="utf-8") as fh:
        trits, seqs, _header = qrng.read_log(fh)
    try:
        report = certify.certification_report(trits, seqs, threshold=args.threshold)
    except certify.EmptyCellError as exc:
        print(f"log incomplete: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (certify.NoConsistentSignsError, certify.AmbiguousSignsError) as exc:
        print(f"sign assignment failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED

    print(f"bell_estimate = {report.bell_estimate:.9f}")
    print(f"threshold = {_fmt(report.threshold)}")
    print(f"certified = {report.certified}")
    if args.out:
        out_dir = Path(args.out)
        _write_run_config(out_dir, args)
        with open(out_dir / "certification_report.json", "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK if report.certified else EXIT_CHECK_FAILED


def cmd_curve(args: argparse.Namespace) -> int:
    grid = certify.default_grid(args.grid_start, args.grid_stop, args.grid_step)
    try:
        curve = certify.entropy_bound_curve(
            grid,
            d=args.d,
            mode=_mode(args),
            solver_config=None,
            bell_constraint=args.bell_constraint,
            refine=args.refine,
            jobs=args.jobs,
        )
    except certify.InfeasibleLevelError as exc:
        print(f"curve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    errors = [p for p in curve.points if p.status != "ok"]
    for p in errors:
        print(f"L={p.L}: {p.status}", file=sys.stderr)
    if curve.zero_crossing:
        lo, hi = curve.zero_crossing
        print(f"zero_crossing = [{_fmt(lo)}, {_fmt(hi)}]")
        print(f"zero_crossing_mid = {_fmt(0.5 * (lo + hi))}")
    for p in curve.points:
        if p.status == "ok":
            print(f"f({_fmt(p.L)}) = {p.f:.9f}")
    if args.out:
        out_dir = Path(args.out)
        _write_run_config(out_dir, args)
        with open(out_dir / "curve.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(curve.to_csv())
        svg = plot.svg_line_plot(
            [(p.L, p.f) for p in curve.points if p.status == "ok"],
            xlabel="free CHSH-3 violation level L",
            ylabel="min-entropy bound f(L) (trits)",
            title="min-entropy bound versus violation level",
        )
        with open(out_dir / "curve.svg", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
        summary = {
            "zero_crossing": list(curve.zero_crossing) if curve.zero_crossing else None,
            "grid": [p.L for p in curve.points],
            "f": [p.f for p in curve.points],
            "max_prob": [p.max_prob for p in curve.points],
            "errors": [p.status for p in errors],
        }
        with open(out_dir / "curve_report.json", "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK if not errors else EXIT_SOLVER


def cmd_classical_bound(args: argparse.Namespace) -> int:
    summary = bell.classical_summary()
    form = bell.chsh3_form()
    print(f"classical_bound = {_fmt(summary.max_value)}")
    print(f"classical_minimum = {_fmt(summary.min_value)}")
    print(f"num_maximizers = {summary.num_maximizers}")
    print(f"algebraic_bound = {_fmt(bell.algebraic_bound(form))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freechsh3",
        description="Free CHSH-3 relaxation, protocol simulation and certification",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_solver_args(p):
        p.add_argument("--d", type=int, default=3, help="outcome dimension")
        p.add_argument("--mode", choices=["basic", "extended"], default="basic")
        p.add_argument("--tol", type=float, default=1e-8)
        p.add_argument("--max-iter", dest="max_iter", type=int, default=20000)
        p.add_argument("--solver-method", choices=["admm", "ipm"], default="admm")
        p.add_argument("--embed-complex", action="store_true")

    p_solve = sub.add_parser("solve", help="solve the level-1 relaxation")
    add_solver_args(p_solve)
    p_solve.add_argument("--out", default=None)
    p_solve.add_argument("--save-problem", action="store_true")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser(
        "verify", help="check the published optimum end to end"
    )
    p_verify.add_argument("--tol", type=float, default=1e-12,
                          help="feasibility tolerance; derived checks scale with it")
    p_verify.add_argument("--golden", default=None,
                          help="integer CSV to verify instead of the shipped one")
    p_verify.set_defaults(func=cmd_verify)

    p_gen = sub.add_parser("generate", help="run the protocol and emit trits")
    p_gen.add_argument("--rounds", type=int, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument(
        "--adapter",
        choices=["seeded-prng", "os-entropy", "beacon-file", "beacon-http"],
        default="seeded-prng",
    )
    p_gen.add_argument("--path", default=None, help="pulse file for beacon-file")
    p_gen.add_argument("--endpoint", default=None,
                       help="URL template with {index} for beacon-http")
    p_gen.add_argument("--cache", default=None, help="pulse cache for beacon-http")
    p_gen.add_argument("--trit-format", choices=["ascii", "packed"],
                       default="ascii")
    p_gen.add_argument("--out", default=None)
    p_gen.set_defaults(func=cmd_generate)

    p_cert = sub.add_parser("certify", help="certify a protocol log")
    p_cert.add_argument("log", help="outcome log path")
    p_cert.add_argument("--threshold", type=float, default=3.9)
    p_cert.add_argument("--out", default=None)
    p_cert.set_defaults(func=cmd_certify)

    p_curve = sub.add_parser("curve", help="min-entropy bound curve f(L)")
    p_curve.add_argument("--d", type=int, default=3)
    p_curve.add_argument("--mode", choices=["basic", "extended"], default="basic")
    p_curve.add_argument("--grid-start", type=float, default=2.0)
    p_curve.add_argument("--grid-stop", type=float, default=4.0)
    p_curve.add_argument("--grid-step", type=float, default=0.05)
    p_curve.add_argument("--bell-constraint", choices=["eq", "geq"], default="eq")
    p_curve.add_argument("--refine", action=argparse.BooleanOptionalAction,
                         default=True)
    p_curve.add_argument("--jobs", type=int, default=1)
    p_curve.add_argument("--out", default=None)
    p_curve.set_defaults(func=cmd_curve)

    p_cb = sub.add_parser("classical-bound", help="enumerate all 81 strategies")
    p_cb.set_defaults(func=cmd_classical_bound)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
