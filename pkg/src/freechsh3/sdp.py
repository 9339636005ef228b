"""Dense equality-constrained semidefinite programming.

Problems have the shape

    maximize    C . X
    subject to  A_k . X = b_k   (k = 1..m)
                X >= 0          (positive semidefinite)

with . the trace inner product and all data real symmetric. The solver is an
ADMM splitting: one half-step is the least-squares projection onto the affine
constraint set with the objective folded in linearly, the other is the
eigenvalue clipping projection onto the PSD cone. The normal matrix of the
affine projection is factored once per problem. Over-relaxation and a
deterministic residual-balancing rule for the penalty parameter keep the
iteration count low on the small dense instances this package produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import numerics


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max-iterations"
    INFEASIBLE = "infeasible"


def _check_symmetric(a: np.ndarray, n: int, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (n, n):
        raise ValueError(f"{what} must be {n}x{n}, got {a.shape}")
    if a.size and float(np.max(np.abs(a - a.T))) > 1e-12:
        raise ValueError(f"{what} must be symmetric within 1e-12")
    return a


@dataclass(frozen=True)
class SdpProblem:
    """Objective matrix plus a nonempty list of (matrix, value) equalities."""

    n: int
    objective: np.ndarray
    constraints: tuple[tuple[np.ndarray, float], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("matrix side must be positive")
        if not self.constraints:
            raise ValueError("constraint list must be nonempty")
        object.__setattr__(
            self, "objective", _check_symmetric(self.objective, self.n, "objective")
        )
        checked = tuple(
            (_check_symmetric(a, self.n, f"constraint {k}"), float(bv))
            for k, (a, bv) in enumerate(self.constraints)
        )
        object.__setattr__(self, "constraints", checked)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 20000
    method: str = "admm"  # "admm" (splitting) or "ipm" (interior point)
    embed_complex: bool = False  # route through the doubled real embedding
    rho: float = 1.0
    over_relaxation: float = 1.6
    adaptive_rho: bool = True

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.method not in ("admm", "ipm"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SdpSolution:
    X: np.ndarray
    objective_value: float
    status: SolveStatus
    primal_residual: float
    psd_violation: float
    iterations: int
    dual_objective: float
    dual_slack: np.ndarray | None = field(default=None, repr=False)
    warm: tuple | None = field(default=None, repr=False)


@dataclass(frozen=True)
class FeasibilityReport:
    max_violation: float
    min_eigenvalue: float
    objective: float
    passed: bool


def check_feasibility(problem: SdpProblem, x, tol: float) -> FeasibilityReport:
    """Evaluate constraints and PSD-ness of a candidate matrix directly.

    Uses the in-house Jacobi eigensolver so the check shares nothing with the
    ADMM internals beyond the problem data.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n, problem.n):
        raise ValueError(f"candidate must be {problem.n}x{problem.n}, got {x.shape}")
    violation = max(
        abs(float(np.tensordot(a, x)) - bv) for a, bv in problem.constraints
    )
    min_eig = float(numerics.hermitian_eig(0.5 * (x + x.T)).eigenvalues[-1])
    objective = float(np.tensordot(problem.objective, x))
    return FeasibilityReport(
        max_violation=violation,
        min_eigenvalue=min_eig,
        objective=objective,
        passed=(violation <= tol and min_eig >= -tol),
    )


def _embed_problem(problem: SdpProblem) -> SdpProblem:
    """Double the problem through the real embedding, halving the weights so
    objective and constraint values are preserved under block averaging."""

    def emb(a: np.ndarray) -> np.ndarray:
        z = np.zeros_like(a)
        return 0.5 * np.block([[a, z], [z, a]])

    return SdpProblem(
        n=2 * problem.n,
        objective=emb(problem.objective),
        constraints=tuple((emb(a), bv) for a, bv in problem.constraints),
    )


def solve(
    problem: SdpProblem,
    config: SolverConfig | None = None,
    warm_start: tuple | None = None,
) -> SdpSolution:
    """Solve the SDP with the configured method.

    The default ADMM splitting stops when the scaled primal residual, the
    successive iterate change and the duality-gap estimate all fall below
    tol. The interior-point method targets the same tolerance on primal and
    dual infeasibility and relative gap; it is the better choice on instances
    whose feasible set has empty relative interior (a Bell value pinned at
    the maximum), where splitting methods crawl. Output is deterministic for
    fixed (problem, config, warm_start).
    """
    config = config or SolverConfig()
    if config.embed_complex:
        inner_cfg = SolverConfig(
            tol=config.tol,
            max_iter=config.max_iter,
            method=config.method,
            rho=config.rho,
            over_relaxation=config.over_relaxation,
            adaptive_rho=config.adaptive_rho,
        )
        inner = solve(_embed_problem(problem), inner_cfg)
        n = problem.n
        x = 0.5 * (inner.X[:n, :n] + inner.X[n:, n:])
        x = 0.5 * (x + x.T)
        return SdpSolution(
            X=x,
            objective_value=float(np.tensordot(problem.objective, x)),
            status=inner.status,
            primal_residual=inner.primal_residual,
            psd_violation=inner.psd_violation,
            iterations=inner.iterations,
            dual_objective=inner.dual_objective,
        )
    if config.method == "ipm":
        return _solve_ipm(problem, config)
    return _solve_admm(problem, config, warm_start)


def _solve_admm(
    problem: SdpProblem,
    config: SolverConfig,
    warm_start: tuple | None = None,
) -> SdpSolution:
    n = problem.n
    m = len(problem.constraints)
    amat = np.stack([a.reshape(-1) for a, _ in problem.constraints])
    b = np.array([bv for _, bv in problem.constraints])
    c = problem.objective
    gram = amat @ amat.T

    try:
        chol = np.linalg.cholesky(gram)

        def solve_gram(r: np.ndarray) -> np.ndarray:
            return np.linalg.solve(chol.T, np.linalg.solve(chol, r))

        gram_singular = False
    except np.linalg.LinAlgError:
        pinv = np.linalg.pinv(gram, rcond=1e-12)

        def solve_gram(r: np.ndarray) -> np.ndarray:
            return pinv @ r

        gram_singular = True

    def project_affine(y: np.ndarray):
        lam = solve_gram(b - amat @ y)
        return y + amat.T @ lam, lam

    # inconsistent constraint rows make the affine set empty
    if gram_singular:
        probe, _ = project_affine(np.zeros(n * n))
        if float(np.max(np.abs(amat @ probe - b))) > 1e-9 * (
            1.0 + float(np.max(np.abs(b)))
        ):
            return SdpSolution(
                X=np.zeros((n, n)),
                objective_value=float("nan"),
                status=SolveStatus.INFEASIBLE,
                primal_residual=float("inf"),
                psd_violation=0.0,
                iterations=0,
                dual_objective=float("nan"),
            )

    rho = config.rho
    alpha = config.over_relaxation
    if warm_start is not None:
        z, u, rho = warm_start[0].copy(), warm_start[1].copy(), warm_start[2]
    else:
        z = np.zeros((n, n))
        u = np.zeros((n, n))

    x = z
    lam = np.zeros(m)
    primal = float("inf")
    change = float("inf")
    gap = float("inf")
    status = SolveStatus.MAX_ITERATIONS
    it = 0
    best_res = float("inf")
    stall_checks = 0

    for it in range(1, config.max_iter + 1):
        x_vec, lam = project_affine((z - u + c / rho).reshape(-1))
        x = x_vec.reshape(n, n)
        x = 0.5 * (x + x.T)
        x_hat = alpha * x + (1.0 - alpha) * z
        w_mat = x_hat + u
        evals, evecs = np.linalg.eigh(0.5 * (w_mat + w_mat.T))
        z_new = (evecs * np.maximum(evals, 0.0)) @ evecs.T
        z_new = 0.5 * (z_new + z_new.T)
        u = u + x_hat - z_new

        primal = float(np.linalg.norm(x - z_new)) / (1.0 + float(np.linalg.norm(x)))
        change = float(np.linalg.norm(z_new - z)) / (1.0 + float(np.linalg.norm(z_new)))
        obj = float(np.tensordot(c, x))
        dual_obj = float(-rho * (b @ lam))
        gap = abs(obj - dual_obj) / (1.0 + abs(obj))
        z = z_new

        if max(primal, change, gap) <= config.tol:
            status = SolveStatus.OPTIMAL
            break

        if config.adaptive_rho and it % 10 == 0:
            r_norm = float(np.linalg.norm(x - z))
            s_norm = rho * float(np.linalg.norm(z - x_hat))
            if r_norm > 10.0 * s_norm and rho < 1e4:
                rho *= 2.0
                u *= 0.5
            elif s_norm > 10.0 * r_norm and rho > 1e-4:
                rho *= 0.5
                u *= 2.0

        if it % 500 == 0:
            res = max(primal, change)
            if res > 1e4 * config.tol and res > 0.999 * best_res:
                stall_checks += 1
                if stall_checks >= 6:
                    status = SolveStatus.INFEASIBLE
                    break
            else:
                stall_checks = 0
            best_res = min(best_res, res)

    psd_violation = max(0.0, -float(np.linalg.eigvalsh(x)[0]))
    return SdpSolution(
        X=x,
        objective_value=float(np.tensordot(c, x)),
        status=status,
        primal_residual=primal,
        psd_violation=psd_violation,
        iterations=it,
        dual_objective=float(-rho * (b @ lam)),
        warm=(z.copy(), u.copy(), rho),
    )


def _max_psd_step(p: np.ndarray, dp: np.ndarray, fraction: float) -> float:
    """Largest step in [0, 1] keeping p + step * dp positive definite,
    scaled back by the fraction-to-boundary factor."""
    chol = np.linalg.cholesky(p)
    h = np.linalg.solve(chol, np.linalg.solve(chol, dp).T).T
    lam = float(np.linalg.eigvalsh(0.5 * (h + h.T))[0])
    if lam >= -1e-14:
        return 1.0
    return min(1.0, -fraction / lam)


def _solve_ipm(problem: SdpProblem, config: SolverConfig) -> SdpSolution:
    """Infeasible primal-dual path following with Nesterov-Todd scaling.

    Tracks max C.X subject to A(X) = b, X >= 0 together with the dual
    min b.y with slack S = sum_k y_k A_k - C >= 0, driving primal and dual
    infeasibility and the complementarity gap to zero along the central
    path. A Mehrotra-style predictor picks the centering weight. The Schur
    system is m x m and dense; iterations are capped well below the ADMM
    budget because each one is a Newton step.
    """
    n = problem.n
    m = len(problem.constraints)
    amat = np.stack([a.reshape(-1) for a, _ in problem.constraints])
    b = np.array([bv for _, bv in problem.constraints])
    c = problem.objective

    def a_of(x: np.ndarray) -> np.ndarray:
        return amat @ x.reshape(-1)

    def at_of(y: np.ndarray) -> np.ndarray:
        return (amat.T @ y).reshape(n, n)

    scale_b = 1.0 + float(np.max(np.abs(b)))
    scale_c = 1.0 + float(np.linalg.norm(c))
    x = np.eye(n) * scale_b
    s = np.eye(n) * scale_c
    y = np.zeros(m)

    best = None
    best_err = float("inf")
    status = SolveStatus.MAX_ITERATIONS
    max_newton = min(config.max_iter, 200)
    it = 0

    for it in range(1, max_newton + 1):
        rp = b - a_of(x)
        rd = c + s - at_of(y)
        mu = float(np.tensordot(x, s)) / n
        obj = float(np.tensordot(c, x))
        dual_obj = float(b @ y)
        pinf = float(np.max(np.abs(rp))) / scale_b
        dinf = float(np.max(np.abs(rd))) / scale_c
        relgap = abs(obj - dual_obj) / (1.0 + abs(obj) + abs(dual_obj))
        err = max(pinf, dinf, relgap)
        if err < best_err:
            best_err = err
            best = (x.copy(), s.copy(), pinf, relgap, obj, dual_obj, it)
        if err <= config.tol:
            status = SolveStatus.OPTIMAL
            break

        try:
            chol_s = np.linalg.cholesky(s)
            chol_x = np.linalg.cholesky(x)
        except np.linalg.LinAlgError:
            break
        # NT scaling point W with W S W = X
        t_mat = chol_s.T @ x @ chol_s
        evals, evecs = np.linalg.eigh(0.5 * (t_mat + t_mat.T))
        if evals[0] <= 0.0:
            break
        sqrt_t = (evecs * np.sqrt(evals)) @ evecs.T
        inv_ls = np.linalg.solve(chol_s, np.eye(n))
        w_mat = inv_ls.T @ sqrt_t @ inv_ls
        w_mat = 0.5 * (w_mat + w_mat.T)
        s_inv = inv_ls.T @ inv_ls

        v_stack = np.stack(
            [(w_mat @ a.reshape(n, n) @ w_mat).reshape(-1) for a, _ in problem.constraints]
        )
        schur = amat @ v_stack.T
        schur = 0.5 * (schur + schur.T)
        try:
            schur_chol = np.linalg.cholesky(
                schur + 1e-14 * np.trace(schur) / m * np.eye(m)
            )
        except np.linalg.LinAlgError:
            break

        def solve_schur(r: np.ndarray) -> np.ndarray:
            return np.linalg.solve(schur_chol.T, np.linalg.solve(schur_chol, r))

        w_rd_w = w_mat @ rd @ w_mat

        def direction(sigma_mu: float):
            rhs = sigma_mu * a_of(s_inv) + a_of(w_rd_w) - b
            dy = solve_schur(rhs)
            ds = at_of(dy) - rd
            dx = sigma_mu * s_inv - x - w_mat @ ds @ w_mat
            return 0.5 * (dx + dx.T), dy, 0.5 * (ds + ds.T)

        try:
            dx_a, dy_a, ds_a = direction(0.0)
            alpha_a = _max_psd_step(x, dx_a, 1.0)
            beta_a = _max_psd_step(s, ds_a, 1.0)
            mu_aff = float(
                np.tensordot(x + alpha_a * dx_a, s + beta_a * ds_a)
            ) / n
            sigma = min(1.0, max(1e-10, (max(mu_aff, 0.0) / mu) ** 3))
            dx, dy, ds = direction(sigma * mu)
            alpha = _max_psd_step(x, dx, 0.98)
            beta = _max_psd_step(s, ds, 0.98)
        except np.linalg.LinAlgError:
            break

        x = x + alpha * dx
        y = y + beta * dy
        s = s + beta * ds
        x = 0.5 * (x + x.T)
        s = 0.5 * (s + s.T)

    if best is None:
        best = (x, s, float("inf"), float("inf"),
                float(np.tensordot(c, x)), float(b @ y), it)
    x_best, s_best, pinf_best, _, obj_best, dual_best, _ = best
    if status is not SolveStatus.OPTIMAL and best_err <= config.tol:
        status = SolveStatus.OPTIMAL
    psd_violation = max(0.0, -float(np.linalg.eigvalsh(x_best)[0]))
    return SdpSolution(
        X=x_best,
        objective_value=obj_best,
        status=status,
        primal_residual=pinf_best,
        psd_violation=psd_violation,
        iterations=it,
        dual_objective=dual_best,
        dual_slack=s_best,
    )


def _triplets(a: np.ndarray) -> str:
    parts = []
    n = a.shape[0]
    for r in range(n):
        for s in range(r, n):
            if a[r, s] != 0.0:
                parts.append(f"{r} {s} {float(a[r, s])!r}")
    return " ".join(parts)


def save_problem(problem: SdpProblem, path) -> None:
    """Write the archival text format: a header with the matrix side and the
    objective triplets, then one line per constraint.

    Triplets are `row col value` over the upper triangle; the symmetric
    mirror entry is implied. Constraint lines start with the right-hand side.
    """
    lines = [f"n {problem.n}", f"obj {_triplets(problem.objective)}".rstrip()]
    for a, bv in problem.constraints:
        lines.append(f"con {float(bv)!r} {_triplets(a)}".rstrip())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _fill_triplets(n: int, tokens: list[str], what: str) -> np.ndarray:
    if len(tokens) % 3 != 0:
        raise ValueError(f"{what}: triplet list length must be a multiple of 3")
    a = np.zeros((n, n))
    for p in range(0, len(tokens), 3):
        r, s, v = int(tokens[p]), int(tokens[p + 1]), float(tokens[p + 2])
        if not (0 <= r <= s < n):
            raise ValueError(f"{what}: triplet ({r},{s}) out of range or not upper")
        a[r, s] = v
        a[s, r] = v
    return a


def load_problem(path) -> SdpProblem:
    """Parse the text format written by save_problem."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("n "):
        raise ValueError("missing 'n <side>' header line")
    n = int(lines[0].split()[1])
    objective = None
    constraints = []
    for ln in lines[1:]:
        tokens = ln.split()
        if tokens[0] == "obj":
            objective = _fill_triplets(n, tokens[1:], "objective")
        elif tokens[0] == "con":
            constraints.append((_fill_triplets(n, tokens[2:], "constraint"), float(tokens[1])))
        else:
            raise ValueError(f"unrecognized line {ln!r}")
    if objective is None:
        raise ValueError("missing objective line")
    return SdpProblem(n=n, objective=objective, constraints=tuple(constraints))
