"""Certification: moment estimation from logs and the min-entropy curve.

Sequential test rounds give two probability families: first-stage outcome
frequencies of each observable on the reference state, and the conditional
frequencies between eigenstates of observables from different blocks. The
magnitude of every cross-block second-order moment is the product of three
square roots (first-stage of the row, conditional, first-stage of the
column). Signs are real by assumption and recovered from the constraint that
the three signed moments of a (row, column-observable) triple sum to the
row's first-stage probability. The signed moments evaluate the Bell
expression.

The min-entropy bound f(L) solves, for each of the twelve diagonal moments,
the level-1 relaxation restricted to Bell value L with that moment as the
objective; f(L) is -log3 of the maximum over targets. At L equal to the
relaxation optimum the feasible set is an exposed face with empty interior,
so the level drops onto the null space of the dual slack certificate before
optimizing (facial reduction); everywhere else the plain interior-point
solve is well conditioned.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import bell, relax, sdp
from .bell import BellForm, ProjectorIndex
from .qrng import SequentialRecord
from .relax import MomentBasis, RelaxationMode


class EmptyCellError(ValueError):
    """A required estimation cell received no samples."""

    def __init__(self, cells):
        self.cells = tuple(cells)
        preview = ", ".join(map(str, self.cells[:6]))
        more = "" if len(self.cells) <= 6 else f" and {len(self.cells) - 6} more"
        super().__init__(f"no samples for cells: {preview}{more}")


class NoConsistentSignsError(ValueError):
    """No sign pattern reproduces the first-stage probability within tol."""


class AmbiguousSignsError(ValueError):
    """Multiple genuinely different sign patterns fit within tol."""


class InfeasibleLevelError(ValueError):
    """Requested Bell value exceeds the reachable range of the relaxation."""


CROSS_CELLS: tuple[tuple[ProjectorIndex, ProjectorIndex], ...] = tuple(
    (ProjectorIndex(i, l), ProjectorIndex(j, k))
    for i in bell.BLOCK_A
    for l in range(3)
    for j in bell.BLOCK_B
    for k in range(3)
)

TARGETS: tuple[tuple[int, int], ...] = tuple(
    (i, k) for i in bell.OBSERVABLES for k in range(3)
)


@dataclass
class ProbabilityEstimates:
    """First-stage and conditional probability estimates with sample counts.

    first_stage maps (observable, outcome) to the estimated probability of
    that outcome when the observable is measured on the reference state;
    conditional maps (i, l, j, k) to the estimated squared overlap between
    eigenvectors (i, l) and (j, k). Counts are None for analytic input.
    """

    first_stage: dict[tuple[int, int], float]
    conditional: dict[tuple[int, int, int, int], float]
    first_counts: dict[int, int] | None = None
    conditional_counts: dict[tuple[int, int, int, int], int] | None = None

    def first_stage_sigma(self, i: int, l: int) -> float:
        if self.first_counts is None:
            return 0.0
        n = self.first_counts.get(i, 0)
        if n <= 0:
            return float("inf")
        p = self.first_stage[(i, l)]
        return math.sqrt(max(p * (1.0 - p), 0.0) / n)

    def conditional_sigma(self, i: int, l: int, j: int, k: int) -> float:
        if self.conditional_counts is None:
            return 0.0
        n = self.conditional_counts.get((i, l, j, k), 0)
        if n <= 0:
            return float("inf")
        p = self.conditional[(i, l, j, k)]
        return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def estimate_probabilities(records: list[SequentialRecord]) -> ProbabilityEstimates:
    """Pool a sequential log into probability estimates.

    First-stage cells pool every round in which the observable came first.
    Conditional cells pool both orders of a pair, since the squared overlap
    is symmetric. Raises EmptyCellError listing every needed cell whose
    denominator is zero.
    """
    first_total: dict[int, int] = {i: 0 for i in bell.OBSERVABLES}
    first_hits: dict[tuple[int, int], int] = {
        (i, k): 0 for i in bell.OBSERVABLES for k in range(3)
    }
    pair_total: dict[tuple[int, int, int, int], int] = {}
    pair_hits: dict[tuple[int, int, int, int], int] = {}

    for rec in records:
        j, k = rec.first_observable, rec.first_outcome
        i, l = rec.second_observable, rec.second_outcome
        first_total[j] += 1
        first_hits[(j, k)] += 1
        _accumulate_pair(pair_total, pair_hits, j, k, i, l)

    empty = [i for i in bell.OBSERVABLES if first_total[i] == 0]
    if empty:
        raise EmptyCellError([("first-stage", i) for i in empty])

    first_stage = {
        (i, k): first_hits[(i, k)] / first_total[i]
        for i in bell.OBSERVABLES
        for k in range(3)
    }

    conditional: dict[tuple[int, int, int, int], float] = {}
    conditional_counts: dict[tuple[int, int, int, int], int] = {}
    missing = []
    for alpha, beta in CROSS_CELLS:
        i, l = alpha
        j, k = beta
        denom = pair_total.get((i, l, j), 0) + pair_total.get((j, k, i), 0)
        numer = pair_hits.get((i, l, j, k), 0) + pair_hits.get((j, k, i, l), 0)
        if denom == 0:
            missing.append((i, l, j, k))
            continue
        conditional[(i, l, j, k)] = numer / denom
        conditional_counts[(i, l, j, k)] = denom
    if missing:
        raise EmptyCellError(missing)

    return ProbabilityEstimates(
        first_stage=first_stage,
        conditional=conditional,
        first_counts=first_total,
        conditional_counts=conditional_counts,
    )


def _accumulate_pair(pair_total, pair_hits, j, k, i, l):
    """Count one test round: first (j, k) then observable i gave outcome l."""
    pair_total[(j, k, i)] = pair_total.get((j, k, i), 0) + 1
    pair_hits[(j, k, i, l)] = pair_hits.get((j, k, i, l), 0) + 1


def analytic_probabilities(config: relax.ExtractedConfiguration) -> ProbabilityEstimates:
    """Exact probabilities from a configuration: the infinite-sample limit."""
    phi = config.state
    first_stage = {}
    for i in bell.OBSERVABLES:
        vecs = config.basis_vectors(i)
        for k in range(3):
            first_stage[(i, k)] = float(abs(np.vdot(phi, vecs[k])) ** 2)
    conditional = {}
    for alpha, beta in CROSS_CELLS:
        va = config.basis_vectors(alpha.observable)[alpha.outcome]
        vb = config.basis_vectors(beta.observable)[beta.outcome]
        conditional[(alpha.observable, alpha.outcome,
                     beta.observable, beta.outcome)] = float(abs(np.vdot(va, vb)) ** 2)
    return ProbabilityEstimates(first_stage=first_stage, conditional=conditional)


def estimate_moment_magnitudes(
    est: ProbabilityEstimates,
) -> dict[tuple[ProjectorIndex, ProjectorIndex], float]:
    """|moment| as the three-factor square-root product, per cross cell."""
    magnitudes = {}
    for alpha, beta in CROSS_CELLS:
        i, l = alpha
        j, k = beta
        magnitudes[(alpha, beta)] = math.sqrt(
            max(est.first_stage[(i, l)], 0.0)
            * max(est.conditional[(i, l, j, k)], 0.0)
            * max(est.first_stage[(j, k)], 0.0)
        )
    return magnitudes


@dataclass
class SignDiagnostics:
    pattern: tuple[int, int, int]
    mismatch: float
    runner_up_mismatch: float
    ambiguous: bool


@dataclass
class MomentEstimate:
    magnitudes: dict[tuple[ProjectorIndex, ProjectorIndex], float]
    signs: dict[tuple[ProjectorIndex, ProjectorIndex], int]
    values: dict[tuple[ProjectorIndex, ProjectorIndex], float]
    diagnostics: dict[tuple[ProjectorIndex, int], SignDiagnostics] = field(
        default_factory=dict
    )


def assign_signs(
    magnitudes: dict[tuple[ProjectorIndex, ProjectorIndex], float],
    est: ProbabilityEstimates,
    tol: float | None = None,
) -> MomentEstimate:
    """Resolve the sign of every cross moment from the sum relation.

    For each row projector (i, l) and column observable j, the three signed
    moments over the column outcomes must sum to the first-stage probability
    of (i, l). All eight sign patterns are enumerated; the unique one within
    tol wins. Patterns that differ only on vanishing magnitudes are collapsed
    to plus signs and flagged; genuinely distinct survivors raise
    AmbiguousSignsError, none within tol raises NoConsistentSignsError.
    Default tol per triple: max(5 * sigma of the target cell, 1e-6).
    """
    signs: dict[tuple[ProjectorIndex, ProjectorIndex], int] = {}
    values: dict[tuple[ProjectorIndex, ProjectorIndex], float] = {}
    diagnostics: dict[tuple[ProjectorIndex, int], SignDiagnostics] = {}

    for i in bell.BLOCK_A:
        for l in range(3):
            alpha = ProjectorIndex(i, l)
            target = est.first_stage[(i, l)]
            triple_tol = tol
            if triple_tol is None:
                triple_tol = max(5.0 * est.first_stage_sigma(i, l), 1e-6)
            for j in bell.BLOCK_B:
                cells = [(alpha, ProjectorIndex(j, k)) for k in range(3)]
                mags = [magnitudes[c] for c in cells]
                scored = []
                for pattern in product((+1, -1), repeat=3):
                    total = sum(s * m for s, m in zip(pattern, mags))
                    scored.append((abs(total - target), pattern))
                scored.sort(key=lambda item: (item[0], item[1]))
                candidates = [item for item in scored if item[0] <= triple_tol]
                if not candidates:
                    raise NoConsistentSignsError(
                        f"triple {tuple(alpha)} x observable {j}: best mismatch "
                        f"{scored[0][0]:.3e} exceeds tol {triple_tol:.3e}"
                    )
                value_sets = {
                    tuple(
                        round(s * m, 12) if m > 1e-12 else 0.0
                        for s, m in zip(pattern, mags)
                    )
                    for _, pattern in candidates
                }
                ambiguous = len(candidates) > 1
                if len(value_sets) > 1:
                    raise AmbiguousSignsError(
                        f"triple {tuple(alpha)} x observable {j}: "
                        f"{len(candidates)} sign patterns within tol "
                        f"{triple_tol:.3e} give different moment values"
                    )
                if ambiguous:
                    # degenerate only through vanishing magnitudes
                    pattern = tuple(
                        +1 if m <= 1e-12 else s
                        for s, m in zip(candidates[0][1], mags)
                    )
                else:
                    pattern = candidates[0][1]
                mismatch = candidates[0][0]
                runner_up = scored[1][0] if len(scored) > 1 else float("inf")
                diagnostics[(alpha, j)] = SignDiagnostics(
                    pattern=tuple(pattern),
                    mismatch=mismatch,
                    runner_up_mismatch=runner_up,
                    ambiguous=ambiguous,
                )
                for cell, s, m in zip(cells, pattern, mags):
                    signs[cell] = int(s)
                    values[cell] = s * m

    return MomentEstimate(
        magnitudes=dict(magnitudes), signs=signs, values=values,
        diagnostics=diagnostics,
    )


def estimate_bell(moments: MomentEstimate, form: BellForm | None = None) -> float:
    """Bell expectation from the signed moment table."""
    form = form or bell.chsh3_form()
    missing = [key for key in form.terms if key not in moments.values]
    if missing:
        raise EmptyCellError(missing)
    return float(
        sum(sign * moments.values[key] for key, sign in form.terms.items())
    )


@dataclass
class EntropyPoint:
    L: float
    max_prob: float
    f: float
    argmax: tuple[int, int]
    per_target: dict[tuple[int, int], float]
    status: str = "ok"


@dataclass
class EntropyCurve:
    points: list[EntropyPoint]
    zero_crossing: tuple[float, float] | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("L,f,max_prob,argmax_i,argmax_l\n")
        for p in self.points:
            buf.write(
                f"{p.L:.9g},{p.f:.9g},{p.max_prob:.9g},"
                f"{p.argmax[0]},{p.argmax[1]}\n"
            )
        return buf.getvalue()


class LevelContext:
    """Shared data for a family of fixed-Bell-value solves.

    Holds the base relaxation, its high-accuracy optimum, the dual slack
    certificate used for facial reduction at the boundary, and the warm-start
    cache for the sequence of levels handled by one lane.
    """

    def __init__(
        self,
        d: int = 3,
        mode: RelaxationMode = RelaxationMode.BASIC,
        form: BellForm | None = None,
        solver_config: sdp.SolverConfig | None = None,
        bell_constraint: str = "eq",
    ):
        if bell_constraint not in ("eq", "geq"):
            raise ValueError(f"unknown bell constraint mode {bell_constraint!r}")
        self.d = d
        self.mode = mode
        self.form = form or bell.chsh3_form()
        self.basis = MomentBasis(d)
        self.problem = relax.build_relaxation(d, self.form, mode)
        self.solver_config = solver_config or sdp.SolverConfig(tol=1e-9, method="ipm")
        self.bell_constraint = bell_constraint
        base = sdp.solve(
            self.problem, sdp.SolverConfig(tol=1e-10, method="ipm")
        )
        self.f1_star = base.objective_value
        self.dual_slack = base.dual_slack

    def face_basis(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.dual_slack)
        cut = 1e-6 * max(float(w[-1]), 1.0)
        return v[:, w <= cut]

    def target_objective(self, i: int, k: int) -> np.ndarray:
        obj = np.zeros((self.problem.n, self.problem.n))
        obj[self.basis.index(i, k), self.basis.index(i, k)] = 1.0
        return obj

    def level_problem(self, objective: np.ndarray, level: float) -> sdp.SdpProblem:
        if self.bell_constraint == "eq":
            constraints = self.problem.constraints + ((self.problem.objective, level),)
            return sdp.SdpProblem(
                n=self.problem.n, objective=objective, constraints=constraints
            )
        # C . M >= level through a nonnegative slack in an extra diagonal slot
        n = self.problem.n
        big = n + 1

        def lift(a: np.ndarray) -> np.ndarray:
            out = np.zeros((big, big))
            out[:n, :n] = a
            return out

        constraints = [(lift(a), bv) for a, bv in self.problem.constraints]
        slack_row = lift(self.problem.objective)
        slack_row[n, n] = -1.0
        constraints.append((slack_row, level))
        for r in range(n):
            tie = np.zeros((big, big))
            tie[r, n] = 0.5
            tie[n, r] = 0.5
            constraints.append((tie, 0.0))
        return sdp.SdpProblem(
            n=big, objective=lift(objective), constraints=tuple(constraints)
        )


def _face_point(ctx: LevelContext, level: float) -> EntropyPoint:
    """Boundary-value solve on the face exposed by the dual certificate."""
    v = ctx.face_basis()
    s = v.shape[1]
    rows = [
        (v.T @ a @ v).reshape(-1) for a, _ in ctx.problem.constraints
    ]
    rhs = [bv for _, bv in ctx.problem.constraints]
    rows.append((v.T @ ctx.problem.objective @ v).reshape(-1))
    rhs.append(level)
    design = np.stack(rows)
    rhs = np.array(rhs)
    solution, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    n_mat = solution.reshape(s, s)
    n_mat = 0.5 * (n_mat + n_mat.T)
    residual = float(np.max(np.abs(design @ n_mat.reshape(-1) - rhs)))
    rank = int(np.linalg.matrix_rank(design, tol=1e-9))
    sym_dof = s * (s + 1) // 2
    if residual > 1e-4:
        raise InfeasibleLevelError(
            f"level {level} inconsistent on the optimal face "
            f"(residual {residual:.3e})"
        )
    per_target: dict[tuple[int, int], float] = {}
    if rank >= sym_dof:
        # affine data pins the face point; objectives evaluate directly
        for i, k in TARGETS:
            row = v[ctx.basis.index(i, k), :]
            per_target[(i, k)] = float(row @ n_mat @ row)
    else:
        for i, k in TARGETS:
            row = v[ctx.basis.index(i, k), :]
            reduced_obj = np.outer(row, row)
            reduced_problem = sdp.SdpProblem(
                n=s,
                objective=reduced_obj,
                constraints=tuple(
                    (0.5 * (m.reshape(s, s) + m.reshape(s, s).T), bv)
                    for m, bv in zip(design, rhs)
                ),
            )
            sol = sdp.solve(reduced_problem, ctx.solver_config)
            per_target[(i, k)] = sol.objective_value
    return _finish_point(level, per_target)


def _finish_point(level: float, per_target: dict[tuple[int, int], float],
                  snap_tol: float = 1e-5) -> EntropyPoint:
    argmax = max(per_target, key=lambda key: (per_target[key], -key[0], -key[1]))
    p = per_target[argmax]
    p_clamped = min(max(p, 1e-12), 1.0)
    if p >= 1.0 - snap_tol:
        f = 0.0
    else:
        f = min(max(-math.log(p_clamped, 3), 0.0), 1.0)
    return EntropyPoint(
        L=level, max_prob=p, f=f, argmax=argmax, per_target=dict(per_target)
    )


def entropy_bound_point(
    L: float,
    d: int = 3,
    mode: RelaxationMode = RelaxationMode.BASIC,
    context: LevelContext | None = None,
    **context_kwargs,
) -> EntropyPoint:
    """Largest diagonal moment compatible with Bell value L, and f(L).

    Solves one SDP per target moment and takes the maximum of the maxima;
    f(L) = -log3 of that probability, floored to zero within the snap
    tolerance of 1 (the bound is one-sided, so flooring is always sound).
    """
    ctx = context or LevelContext(d=d, mode=mode, **context_kwargs)
    reach_tol = 1e-6
    if L > ctx.f1_star + reach_tol:
        raise InfeasibleLevelError(
            f"level {L} exceeds the relaxation optimum {ctx.f1_star:.9f}"
        )
    if L >= ctx.f1_star - reach_tol:
        return _face_point(ctx, min(L, ctx.f1_star))
    per_target: dict[tuple[int, int], float] = {}
    for i, k in TARGETS:
        problem = ctx.level_problem(ctx.target_objective(i, k), L)
        sol = sdp.solve(problem, ctx.solver_config)
        if sol.status is sdp.SolveStatus.INFEASIBLE:
            raise InfeasibleLevelError(f"level {L} reported infeasible")
        per_target[(i, k)] = sol.objective_value
    return _finish_point(L, per_target)


def default_grid(start: float = 2.0, stop: float = 4.0, step: float = 0.05):
    count = int(round((stop - start) / step))
    return [round(start + step * k, 10) for k in range(count + 1)]


def entropy_bound_curve(
    grid,
    d: int = 3,
    mode: RelaxationMode = RelaxationMode.BASIC,
    form: BellForm | None = None,
    solver_config: sdp.SolverConfig | None = None,
    bell_constraint: str = "eq",
    refine: bool = True,
    jobs: int = 1,
) -> EntropyCurve:
    """f(L) over a grid, with optional bisection refinement of the crossing.

    Per-point failures are recorded on the point and the curve continues.
    Results are merged in grid order and do not depend on the job count.
    """
    grid = list(grid)
    ctx = LevelContext(
        d=d, mode=mode, form=form, solver_config=solver_config,
        bell_constraint=bell_constraint,
    )

    def compute(level: float) -> EntropyPoint:
        try:
            return entropy_bound_point(level, context=ctx)
        except (InfeasibleLevelError, ValueError) as exc:
            return EntropyPoint(
                L=level, max_prob=float("nan"), f=float("nan"),
                argmax=(0, 0), per_target={}, status=f"error: {exc}",
            )

    if jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(compute, grid))
    else:
        points = [compute(level) for level in grid]

    crossing = None
    ok = [p for p in points if p.status == "ok"]
    below = [p for p in ok if p.f == 0.0]
    above = [p for p in ok if p.f > 0.0]
    if below and above:
        lo = max(p.L for p in below)
        hi = min(p.L for p in above if p.L > lo)
        if refine:
            while hi - lo > 0.02:
                mid = 0.5 * (lo + hi)
                pt = compute(mid)
                if pt.status != "ok":
                    break
                if pt.f == 0.0:
                    lo = mid
                else:
                    hi = mid
        crossing = (lo, hi)

    return EntropyCurve(points=points, zero_crossing=crossing)


@dataclass
class CertificationReport:
    bell_estimate: float
    threshold: float
    certified: bool
    trit_rounds: int
    sequential_rounds: int
    empirical_min_entropy: float | None
    first_stage_sigma: dict[str, float]
    sign_mismatch: dict[str, float]
    ambiguous_triples: list[str]

    def to_json_dict(self) -> dict:
        return {
            "bell_estimate": self.bell_estimate,
            "threshold": self.threshold,
            "certified": self.certified,
            "trit_rounds": self.trit_rounds,
            "sequential_rounds": self.sequential_rounds,
            "empirical_min_entropy": self.empirical_min_entropy,
            "first_stage_sigma": self.first_stage_sigma,
            "sign_mismatch": self.sign_mismatch,
            "ambiguous_triples": self.ambiguous_triples,
        }


def certification_report(
    trit_records,
    sequential_records,
    threshold: float = 3.9,
    form: BellForm | None = None,
) -> CertificationReport:
    """Full pipeline from a log to a pass/fail certification summary."""
    from . import qrng

    est = estimate_probabilities(list(sequential_records))
    moments = assign_signs(estimate_moment_magnitudes(est), est)
    value = estimate_bell(moments, form)
    trits = [t.trit for t in trit_records]
    return CertificationReport(
        bell_estimate=value,
        threshold=threshold,
        certified=bool(value >= threshold),
        trit_rounds=len(trits),
        sequential_rounds=len(sequential_records),
        empirical_min_entropy=(
            qrng.min_entropy_empirical(trits) if trits else None
        ),
        first_stage_sigma={
            f"{i},{l}": est.first_stage_sigma(i, l)
            for i in bell.OBSERVABLES
            for l in range(3)
        },
        sign_mismatch={
            f"{tuple(alpha)},{j}": diag.mismatch
            for (alpha, j), diag in moments.diagnostics.items()
        },
        ambiguous_triples=[
            f"{tuple(alpha)},{j}"
            for (alpha, j), diag in moments.diagnostics.items()
            if diag.ambiguous
        ],
    )
