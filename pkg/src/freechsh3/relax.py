"""Level-1 moment relaxation of the free CHSH-3 problem.

The moment matrix is indexed by the empty word followed by the projector
symbols, observable-major. Linearizing the projector identities (idempotence,
orthogonality of distinct outcomes of one observable, completeness of each
observable) yields an equality-constrained SDP whose optimum upper-bounds the
operator problem. This module builds that SDP for any outcome dimension
d >= 3, ships the known rank-3 optimal moment matrix, and turns a feasible
moment matrix back into an explicit state and four order-3 observables.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from . import bell, numerics, sdp
from .bell import BellForm, ProjectorIndex


class ZeroColumnError(ValueError):
    """A projector column required to be present has negligible norm."""


class RelaxationMode(Enum):
    BASIC = "basic"
    EXTENDED = "extended"  # adds cross-observable row-completeness sums


class MomentBasis:
    """Index bookkeeping for the (1 + 4d) moment matrix of dimension d.

    Order: empty word, then outcomes 0..2 of observables 1..4, then the
    padding outcomes 3..d-1 grouped by observable.
    """

    def __init__(self, d: int):
        if d < 3:
            raise ValueError(f"outcome dimension must be at least 3, got {d}")
        self.d = int(d)
        self.n = 1 + 4 * self.d

    def index(self, i: int, k: int) -> int:
        if not (1 <= i <= 4 and 0 <= k < self.d):
            raise ValueError(f"projector ({i},{k}) out of range for d={self.d}")
        if k < 3:
            return 1 + (i - 1) * 3 + k
        return 13 + (i - 1) * (self.d - 3) + (k - 3)

    def projector_indices(self) -> list[ProjectorIndex]:
        omega_part = [
            ProjectorIndex(i, k) for i in bell.OBSERVABLES for k in range(3)
        ]
        extras = [
            ProjectorIndex(i, k) for i in bell.OBSERVABLES for k in range(3, self.d)
        ]
        return omega_part + extras


def build_relaxation(
    d: int,
    form: BellForm | None = None,
    mode: RelaxationMode = RelaxationMode.BASIC,
) -> sdp.SdpProblem:
    """Assemble the level-1 relaxation as an SdpProblem.

    The objective splits each form coefficient c symmetrically as c/2 on the
    (alpha, beta) and (beta, alpha) slots. Constraints: the empty-word moment
    is 1; for each observable the diagonal slot of every outcome equals its
    first-row moment and distinct outcomes have zero cross moment; the
    first-row moments of each observable sum to 1. Extended mode additionally
    ties, for every observable i and every projector beta of another
    observable, the sum of the (i, mu) x beta slots to the beta moment.
    """
    basis = MomentBasis(d)
    form = form or bell.chsh3_form()
    n = basis.n

    objective = np.zeros((n, n))
    for (alpha, beta), sign in form.terms.items():
        a = basis.index(*alpha)
        b = basis.index(*beta)
        objective[a, b] += 0.5 * sign
        objective[b, a] += 0.5 * sign

    constraints: list[tuple[np.ndarray, float]] = []

    mat = np.zeros((n, n))
    mat[0, 0] = 1.0
    constraints.append((mat, 1.0))

    for alpha in basis.projector_indices():
        a = basis.index(*alpha)
        mat = np.zeros((n, n))
        mat[a, a] = 1.0
        mat[0, a] = -0.5
        mat[a, 0] = -0.5
        constraints.append((mat, 0.0))

    for i in bell.OBSERVABLES:
        for mu in range(d):
            for nu in range(mu + 1, d):
                a = basis.index(i, mu)
                b = basis.index(i, nu)
                mat = np.zeros((n, n))
                mat[a, b] = 0.5
                mat[b, a] = 0.5
                constraints.append((mat, 0.0))

    for i in bell.OBSERVABLES:
        mat = np.zeros((n, n))
        for mu in range(d):
            a = basis.index(i, mu)
            mat[0, a] += 0.5
            mat[a, 0] += 0.5
        constraints.append((mat, 1.0))

    if mode is RelaxationMode.EXTENDED:
        for i in bell.OBSERVABLES:
            for beta in basis.projector_indices():
                if beta.observable == i:
                    continue
                b = basis.index(*beta)
                mat = np.zeros((n, n))
                for mu in range(d):
                    a = basis.index(i, mu)
                    mat[a, b] += 0.5
                    mat[b, a] += 0.5
                mat[0, b] -= 0.5
                mat[b, 0] -= 0.5
                constraints.append((mat, 0.0))

    return sdp.SdpProblem(n=n, objective=objective, constraints=tuple(constraints))


def expected_constraint_count(d: int, mode: RelaxationMode) -> int:
    """Closed-form count of the constraints build_relaxation emits."""
    count = 1 + 4 * d + 4 * (d * (d - 1) // 2) + 4
    if mode is RelaxationMode.EXTENDED:
        count += 12 * d
    return count


@dataclass
class SolveReport:
    f1_star: float
    moment_matrix: np.ndarray
    mode: RelaxationMode
    d: int
    solution: sdp.SdpSolution

    def to_json_dict(self) -> dict:
        return {
            "f1_star": self.f1_star,
            "d": self.d,
            "mode": self.mode.value,
            "status": self.solution.status.value,
            "iterations": self.solution.iterations,
            "primal_residual": self.solution.primal_residual,
            "psd_violation": self.solution.psd_violation,
            "dual_objective": self.solution.dual_objective,
        }


def solve_relaxation(
    d: int = 3,
    form: BellForm | None = None,
    mode: RelaxationMode = RelaxationMode.BASIC,
    config: sdp.SolverConfig | None = None,
) -> SolveReport:
    problem = build_relaxation(d, form, mode)
    solution = sdp.solve(problem, config)
    return SolveReport(
        f1_star=solution.objective_value,
        moment_matrix=solution.X,
        mode=mode,
        d=d,
        solution=solution,
    )


# Known optimal moment matrix for d = 3 (integer entries at scale 1/9).
OPTIMAL_MOMENT_NUMERATORS = (
    (9, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3),
    (3, 3, 0, 0, 0, 3, 0, 2, -1, 2, 2, 2, -1),
    (3, 0, 3, 0, 0, 0, 3, 2, 2, -1, -1, 2, 2),
    (3, 0, 0, 3, 3, 0, 0, -1, 2, 2, 2, -1, 2),
    (3, 0, 0, 3, 3, 0, 0, -1, 2, 2, 2, -1, 2),
    (3, 3, 0, 0, 0, 3, 0, 2, -1, 2, 2, 2, -1),
    (3, 0, 3, 0, 0, 0, 3, 2, 2, -1, -1, 2, 2),
    (3, 2, 2, -1, -1, 2, 2, 3, 0, 0, 0, 3, 0),
    (3, -1, 2, 2, 2, -1, 2, 0, 3, 0, 0, 0, 3),
    (3, 2, -1, 2, 2, 2, -1, 0, 0, 3, 3, 0, 0),
    (3, 2, -1, 2, 2, 2, -1, 0, 0, 3, 3, 0, 0),
    (3, 2, 2, -1, -1, 2, 2, 3, 0, 0, 0, 3, 0),
    (3, -1, 2, 2, 2, -1, 2, 0, 3, 0, 0, 0, 3),
)

MOMENT_SCALE = Fraction(1, 9)


def optimal_moment_matrix() -> np.ndarray:
    """The rank-3 optimal moment matrix for d = 3 (objective value 4)."""
    return np.array(OPTIMAL_MOMENT_NUMERATORS, dtype=float) / 9.0


def reference_operators() -> dict[int, np.ndarray]:
    """The four known-optimal qutrit observables in the diagonal gauge of
    observable 1, assembled from their published closed forms."""
    w = bell.OMEGA
    w2 = w.conjugate()
    x1 = np.diag([1.0 + 0j, w, w2])
    x2 = np.diag([w, w2, 1.0 + 0j])
    x3 = np.array(
        [[-w, 2, 2 * w2], [2, -w2, 2 * w], [2 * w2, 2 * w, -1]], dtype=complex
    ) / 3.0
    x4 = np.array(
        [[-w2, 2 * w, 2], [2 * w, -1, 2 * w2], [2, 2 * w2, -w]], dtype=complex
    ) / 3.0
    return {1: x1, 2: x2, 3: x3, 4: x4}


def reference_state() -> np.ndarray:
    return np.full(3, 1.0 / np.sqrt(3.0), dtype=complex)


@dataclass
class ExtractedConfiguration:
    """State plus per-observable eigenvectors and assembled observables.

    Eigenvectors are keyed by (observable, outcome exponent). Outcomes whose
    moment column vanished are listed in `absent`; their directions were
    completed deterministically in the orthogonal complement so that every
    observable is unitary with cube equal to the identity.
    """

    d: int
    rank: int
    state: np.ndarray
    eigenvectors: dict[tuple[int, int], np.ndarray]
    operators: dict[int, np.ndarray]
    absent: tuple[tuple[int, int], ...] = ()
    gauged_factor: np.ndarray | None = field(default=None, repr=False)

    def basis_vectors(self, i: int) -> np.ndarray:
        """Rows are the eigenvectors of observable i for outcomes 0..2."""
        missing = [k for k in range(3) if (i, k) not in self.eigenvectors]
        if missing:
            raise ZeroColumnError(
                f"observable {i} lacks eigenvectors for outcomes {missing}"
            )
        return np.stack([self.eigenvectors[(i, k)] for k in range(3)])


def _fix_vector_phase(vec: np.ndarray) -> np.ndarray:
    mags = np.abs(vec)
    peak = float(mags.max())
    if peak == 0.0:
        return vec
    lead = int(np.argmax(mags > 1e-9 * peak))
    pivot = vec[lead]
    return vec * (pivot.conjugate() / abs(pivot))


def _orthonormal_complement_basis(
    present: list[np.ndarray], rank: int
) -> list[np.ndarray]:
    """Deterministic completion of a partial orthonormal family to C^rank."""
    basis = list(present)
    extras = []
    for j in range(rank):
        cand = np.zeros(rank, dtype=complex)
        cand[j] = 1.0
        for u in basis:
            cand = cand - u * np.vdot(u, cand)
        norm = float(np.linalg.norm(cand))
        if norm > 1e-8:
            cand /= norm
            basis.append(cand)
            extras.append(cand)
        if len(basis) == rank:
            break
    return extras


def extract_configuration(
    m, tol: float = 1e-7, strict: bool = False
) -> ExtractedConfiguration:
    """Recover a state and observables from a feasible moment matrix.

    The PSD factor is gauge-fixed by orthonormalizing the projector columns in
    canonical order (observable 1 first), so that observable 1 comes out
    diagonal whenever its three columns are independent. The state is column 0
    of the gauged factor; each present projector column, normalized, is the
    eigenvector of its outcome. With strict=True a vanishing projector column
    raises ZeroColumnError instead of being recorded as absent.
    """
    m = np.asarray(m, dtype=float)
    side = m.shape[0]
    if (side - 1) % 4 != 0 or side < 13:
        raise ValueError(f"moment matrix side {side} is not 1 + 4d with d >= 3")
    d = (side - 1) // 4
    basis = MomentBasis(d)

    rf = numerics.rank_factor(m, tol)
    rank = rf.rank
    factor = rf.factor

    col_scale = max(1.0, float(np.max(np.abs(factor))))
    gauge: list[np.ndarray] = []
    for alpha in basis.projector_indices():
        col = factor[:, basis.index(*alpha)].copy()
        for u in gauge:
            col = col - u * np.vdot(u, col)
        if float(np.linalg.norm(col)) > 1e-6 * col_scale:
            gauge.append(col / np.linalg.norm(col))
        if len(gauge) == rank:
            break
    gauge.extend(_orthonormal_complement_basis(gauge, rank))
    q = np.stack(gauge[:rank]).conj()
    gauged = q @ factor

    state = gauged[:, 0].copy()
    eigenvectors: dict[tuple[int, int], np.ndarray] = {}
    absent: list[tuple[int, int]] = []
    for alpha in basis.projector_indices():
        col = gauged[:, basis.index(*alpha)]
        norm = float(np.linalg.norm(col))
        if norm < max(tol, 1e-9):
            if strict:
                raise ZeroColumnError(
                    f"projector column {tuple(alpha)} has norm {norm:.3e}"
                )
            absent.append(tuple(alpha))
            continue
        eigenvectors[tuple(alpha)] = _fix_vector_phase(col / norm)

    operators: dict[int, np.ndarray] = {}
    for i in bell.OBSERVABLES:
        present = [eigenvectors[(i, k)] for k in range(d) if (i, k) in eigenvectors]
        completion = _orthonormal_complement_basis(present, rank)
        op = np.zeros((rank, rank), dtype=complex)
        fill = iter(completion)
        for k in range(d):
            if (i, k) in eigenvectors:
                vec = eigenvectors[(i, k)]
            else:
                vec = next(fill, None)
                if vec is None:
                    continue
            op += bell.outcome_value(k) * np.outer(vec, vec.conj())
        operators[i] = op

    return ExtractedConfiguration(
        d=d,
        rank=rank,
        state=state,
        eigenvectors=eigenvectors,
        operators=operators,
        absent=tuple(absent),
        gauged_factor=gauged,
    )


def bell_value(
    config: ExtractedConfiguration,
    form: BellForm | None = None,
    require_real: bool = True,
) -> float:
    """Direct evaluation of the form on the configuration.

    Sums coefficient * <state| P_alpha P_beta |state> in complex arithmetic
    and returns the real part, which is what the relaxation objective sees on
    the Hermitian moment matrix of the configuration. Missing projectors
    contribute nothing. With require_real (the default, appropriate for
    configurations whose value is known real) an imaginary residue above
    1e-9 raises instead of being dropped silently.
    """
    form = form or bell.chsh3_form()
    phi = config.state
    total = 0.0 + 0.0j
    for (alpha, beta), sign in form.terms.items():
        va = config.eigenvectors.get(tuple(alpha))
        vb = config.eigenvectors.get(tuple(beta))
        if va is None or vb is None:
            continue
        total += sign * np.vdot(phi, va) * np.vdot(va, vb) * np.vdot(vb, phi)
    if require_real and abs(total.imag) > 1e-9:
        raise ValueError(f"expression value has imaginary part {total.imag:.3e}")
    return float(total.real)


@dataclass
class ConfigurationReport:
    state_norm_residual: float
    orthonormality_residual: dict[int, float]
    completeness_residual: dict[int, float]
    unitarity_residual: dict[int, float]
    cube_residual: dict[int, float]
    commutator_norms: dict[tuple[int, int], float]
    eigen_relation_residual: dict[tuple[int, int], float]
    probabilities: dict[tuple[int, int], float]

    def passes(self, tol: float = 1e-8) -> bool:
        checks = [self.state_norm_residual]
        checks += list(self.orthonormality_residual.values())
        checks += list(self.completeness_residual.values())
        checks += list(self.unitarity_residual.values())
        checks += list(self.cube_residual.values())
        return max(checks) <= tol

    def to_json_dict(self) -> dict:
        return {
            "state_norm_residual": self.state_norm_residual,
            "orthonormality_residual": {
                str(k): v for k, v in self.orthonormality_residual.items()
            },
            "completeness_residual": {
                str(k): v for k, v in self.completeness_residual.items()
            },
            "unitarity_residual": {
                str(k): v for k, v in self.unitarity_residual.items()
            },
            "cube_residual": {str(k): v for k, v in self.cube_residual.items()},
            "commutator_norms": {
                f"{a},{b}": v for (a, b), v in self.commutator_norms.items()
            },
            "eigen_relation_residual": {
                f"{a},{b}": v for (a, b), v in self.eigen_relation_residual.items()
            },
            "probabilities": {
                f"{i},{k}": v for (i, k), v in self.probabilities.items()
            },
        }


def verify_configuration(config: ExtractedConfiguration) -> ConfigurationReport:
    """Residual report on a configuration; informational, never raises.

    Covers eigenbasis orthonormality and completeness, unitarity and the
    order-3 identity of each observable, all pairwise commutator norms, the
    shifted eigenbasis identification between the two observables of each
    commuting block, and the outcome probabilities of the state.
    """
    phi = config.state
    rank = config.rank
    eye = np.eye(rank)

    orth: dict[int, float] = {}
    comp: dict[int, float] = {}
    unit: dict[int, float] = {}
    cube: dict[int, float] = {}
    for i in bell.OBSERVABLES:
        vecs = [
            config.eigenvectors[(i, k)]
            for k in range(config.d)
            if (i, k) in config.eigenvectors
        ]
        if vecs:
            v = np.stack(vecs)
            gram = v @ v.conj().T
            orth[i] = float(np.max(np.abs(gram - np.eye(len(vecs)))))
            proj_sum = v.conj().T @ v
            comp[i] = float(np.max(np.abs(proj_sum - eye)))
        else:
            orth[i] = 0.0
            comp[i] = float(np.max(np.abs(eye)))
        op = config.operators[i]
        unit[i] = float(np.max(np.abs(op @ op.conj().T - eye)))
        cube[i] = float(np.max(np.abs(np.linalg.matrix_power(op, 3) - eye)))

    comm: dict[tuple[int, int], float] = {}
    for a in bell.OBSERVABLES:
        for b in bell.OBSERVABLES:
            if a < b:
                xa, xb = config.operators[a], config.operators[b]
                comm[(a, b)] = float(np.linalg.norm(xa @ xb - xb @ xa))

    relation: dict[tuple[int, int], float] = {}
    for a, b in ((1, 2), (3, 4)):
        worst = 0.0
        for k in range(3):
            va = config.eigenvectors.get((a, k))
            vb = config.eigenvectors.get((b, (k + 1) % 3))
            if va is None or vb is None:
                worst = 1.0
                break
            worst = max(worst, 1.0 - abs(np.vdot(va, vb)))
        relation[(a, b)] = worst

    probs = {
        key: float(abs(np.vdot(phi, vec)) ** 2)
        for key, vec in config.eigenvectors.items()
        if key[1] < 3
    }

    return ConfigurationReport(
        state_norm_residual=float(abs(np.linalg.norm(phi) - 1.0)),
        orthonormality_residual=orth,
        completeness_residual=comp,
        unitarity_residual=unit,
        cube_residual=cube,
        commutator_norms=comm,
        eigen_relation_residual=relation,
        probabilities=probs,
    )


def moment_matrix_to_integer_csv() -> str:
    """Golden-file form of the optimal moment matrix: integer entries with
    the scale recorded in the header."""
    buf = io.StringIO()
    buf.write(f"# scale: {MOMENT_SCALE.numerator}/{MOMENT_SCALE.denominator}\n")
    for row in OPTIMAL_MOMENT_NUMERATORS:
        buf.write(",".join(str(v) for v in row) + "\n")
    return buf.getvalue()


def moment_matrix_from_integer_csv(text: str) -> np.ndarray:
    """Parse the golden-file form back into a float matrix."""
    scale = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "scale:" in line:
                frac = line.split("scale:", 1)[1].strip()
                num, den = frac.split("/")
                scale = Fraction(int(num), int(den))
            continue
        rows.append([int(v) for v in line.split(",")])
    if scale is None:
        raise ValueError("missing '# scale: p/q' header")
    m = np.array(rows, dtype=float) * (scale.numerator / scale.denominator)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"moment matrix must be square, got {m.shape}")
    return m


def moment_matrix_to_csv(m: np.ndarray) -> str:
    """Plain float CSV of a solved moment matrix."""
    buf = io.StringIO()
    for row in np.asarray(m, dtype=float):
        buf.write(",".join(f"{v!r}" for v in row) + "\n")
    return buf.getvalue()
