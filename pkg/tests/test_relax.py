from fractions import Fraction

import numpy as np
import pytest

from freechsh3 import bell, numerics, relax, sdp
from freechsh3.bell import DeterministicStrategy, ProjectorIndex
from freechsh3.relax import MomentBasis, RelaxationMode

OMEGA = bell.OMEGA

# the published rank-3 factor, rows scaled by sqrt(3)/9
FACTOR_ROWS = (
    (3, 3, 0, 0, 0, 3, 0, 2, -1, 2, 2, 2, -1),
    (3, 0, 3, 0, 0, 0, 3, 2, 2, -1, -1, 2, 2),
    (3, 0, 0, 3, 3, 0, 0, -1, 2, 2, 2, -1, 2),
)


def published_factor():
    return np.array(FACTOR_ROWS, dtype=float) * np.sqrt(3.0) / 9.0


def audit_constraint_count(d, extended):
    """Combinatorial re-derivation, independent of the builder's loops."""
    empty_word = 1
    idempotence = 4 * d
    orthogonality = 4 * (d * (d - 1) // 2)
    completeness = 4
    total = empty_word + idempotence + orthogonality + completeness
    if extended:
        total += 4 * 3 * d
    return total


def classical_moment_matrix(strategy: DeterministicStrategy) -> np.ndarray:
    """Rank-1 moment matrix of a deterministic assignment: y_ab = y_a y_b."""
    basis = MomentBasis(3)
    y = np.zeros(13)
    y[0] = 1.0
    assignment = strategy.assignment()
    for i in bell.OBSERVABLES:
        for k in range(3):
            y[basis.index(i, k)] = 1.0 if assignment[i] == k else 0.0
    return np.outer(y, y)


def test_builder_shapes_and_counts():
    problem = relax.build_relaxation(3)
    assert problem.n == 13
    assert len(problem.constraints) == 29
    assert len(problem.constraints) == relax.expected_constraint_count(
        3, RelaxationMode.BASIC
    )
    assert audit_constraint_count(3, extended=False) == 29

    extended = relax.build_relaxation(3, mode=RelaxationMode.EXTENDED)
    assert len(extended.constraints) == 65
    assert audit_constraint_count(3, extended=True) == 65

    assert relax.build_relaxation(4).n == 17
    with pytest.raises(ValueError):
        relax.build_relaxation(2)


def test_objective_has_48_half_entries():
    problem = relax.build_relaxation(3)
    nonzero = problem.objective[problem.objective != 0.0]
    assert nonzero.size == 48
    assert set(np.abs(nonzero)) == {0.5}


def test_moment_basis_index_order():
    basis = MomentBasis(3)
    assert basis.index(1, 0) == 1
    assert basis.index(1, 2) == 3
    assert basis.index(2, 0) == 4
    assert basis.index(4, 2) == 12
    basis4 = MomentBasis(4)
    assert basis4.index(4, 2) == 12
    assert [basis4.index(i, 3) for i in range(1, 5)] == [13, 14, 15, 16]
    with pytest.raises(ValueError):
        basis.index(1, 3)


@pytest.mark.parametrize("mode", [RelaxationMode.BASIC, RelaxationMode.EXTENDED])
def test_solve_relaxation_value(mode):
    report = relax.solve_relaxation(3, mode=mode)
    assert report.solution.status is sdp.SolveStatus.OPTIMAL
    assert abs(report.f1_star - 4.0) < 1e-6
    assert abs(report.moment_matrix[0, 0] - 1.0) < 1e-6


def test_published_matrix_entries_and_spectrum():
    m = relax.optimal_moment_matrix()
    assert m[0, 0] == 1.0
    assert np.allclose(m[0, 1:], 1.0 / 3.0, atol=1e-15)
    eigs = numerics.hermitian_eig(m).eigenvalues
    expected = np.array([7 / 3, 4 / 3, 4 / 3] + [0.0] * 10)
    assert np.max(np.abs(eigs - expected)) < 1e-12


def test_published_matrix_is_feasible_with_objective_exactly_4():
    problem = relax.build_relaxation(3)
    report = sdp.check_feasibility(problem, relax.optimal_moment_matrix(), 1e-12)
    assert report.passed
    assert abs(report.objective - 4.0) < 1e-12
    # exact rational evaluation of the objective over the integer table
    basis = MomentBasis(3)
    total = Fraction(0)
    for (alpha, beta), sign in bell.chsh3_form().terms.items():
        num = relax.OPTIMAL_MOMENT_NUMERATORS[basis.index(*alpha)][basis.index(*beta)]
        total += sign * Fraction(num) * relax.MOMENT_SCALE
    assert total == 4


def test_published_matrix_satisfies_extended_constraints():
    problem = relax.build_relaxation(3, mode=RelaxationMode.EXTENDED)
    report = sdp.check_feasibility(problem, relax.optimal_moment_matrix(), 1e-12)
    assert report.passed


def test_d4_embedding_of_published_matrix_is_feasible():
    m3 = relax.optimal_moment_matrix()
    basis3, basis4 = MomentBasis(3), MomentBasis(4)
    m4 = np.zeros((17, 17))
    m4[0, 0] = 1.0
    indices = [(0, 0)] + [
        (basis3.index(i, k), basis4.index(i, k))
        for i in bell.OBSERVABLES
        for k in range(3)
    ]
    for a3, a4 in indices:
        for b3, b4 in indices:
            m4[a4, b4] = m3[a3, b3]
    problem = relax.build_relaxation(4)
    report = sdp.check_feasibility(problem, m4, 1e-12)
    assert report.passed
    assert abs(report.objective - 4.0) < 1e-12


def test_d4_solve_at_least_4():
    report = relax.solve_relaxation(4, config=sdp.SolverConfig(tol=1e-8, method="ipm"))
    assert report.f1_star >= 4.0 - 1e-6


def test_extraction_reproduces_published_configuration():
    config = relax.extract_configuration(relax.optimal_moment_matrix())
    assert config.rank == 3
    assert config.absent == ()
    assert np.max(np.abs(config.state - np.full(3, 1 / np.sqrt(3.0)))) < 1e-12

    reference = relax.reference_operators()
    assert np.max(np.abs(config.operators[1] - np.diag([1.0, OMEGA, OMEGA.conjugate()]))) < 1e-12
    for i in bell.OBSERVABLES:
        assert np.max(np.abs(config.operators[i] - reference[i])) < 1e-12

    # published closed-form entries of the third observable
    x3 = config.operators[3]
    assert abs(x3[0, 1] - 2.0 / 3.0) < 1e-12
    assert abs(x3[0, 0] - (-OMEGA / 3.0)) < 1e-12

    # gauged factor equals the published one entry for entry
    assert np.max(np.abs(config.gauged_factor - published_factor())) < 1e-12

    # eigenvectors match the published factor columns up to a global phase
    b = published_factor()
    basis = MomentBasis(3)
    for (i, k), vec in config.eigenvectors.items():
        col = b[:, basis.index(i, k)]
        col = col / np.linalg.norm(col)
        assert abs(abs(np.vdot(vec, col)) - 1.0) < 1e-12


def test_extraction_of_classical_rank_one_matrix():
    m = classical_moment_matrix(DeterministicStrategy(0, 0, 0, 0))
    config = relax.extract_configuration(m)
    assert config.rank == 1
    # one present eigenvector per observable, the rest recorded absent
    assert len(config.eigenvectors) == 4
    assert len(config.absent) == 8
    for i in bell.OBSERVABLES:
        op = config.operators[i]
        assert op.shape == (1, 1)
        for j in bell.OBSERVABLES:
            other = config.operators[j]
            assert np.max(np.abs(op @ other - other @ op)) < 1e-14
    with pytest.raises(relax.ZeroColumnError):
        relax.extract_configuration(m, strict=True)


def test_extraction_rejects_bad_input():
    with pytest.raises(ValueError):
        relax.extract_configuration(np.eye(7))
    with pytest.raises(numerics.NotPsdError):
        m = relax.optimal_moment_matrix() - 0.5 * np.eye(13)
        relax.extract_configuration(m)


def test_bell_value_of_published_configuration():
    config = relax.extract_configuration(relax.optimal_moment_matrix())
    assert abs(relax.bell_value(config) - 4.0) < 1e-10


def diagonal_configuration(strategy: DeterministicStrategy):
    """All observables diagonal in the standard basis; the state is e1 and
    each observable's outcome labels are permuted so e1 yields the assigned
    outcome."""
    eigenvectors = {}
    assignment = strategy.assignment()
    eye = np.eye(3, dtype=complex)
    for i in bell.OBSERVABLES:
        shift = assignment[i]
        for k in range(3):
            eigenvectors[(i, k)] = eye[(k - shift) % 3]
    operators = {
        i: sum(
            bell.outcome_value(k) * np.outer(eigenvectors[(i, k)],
                                             eigenvectors[(i, k)].conj())
            for k in range(3)
        )
        for i in bell.OBSERVABLES
    }
    return relax.ExtractedConfiguration(
        d=3, rank=3, state=eye[0], eigenvectors=eigenvectors, operators=operators
    )


def test_bell_value_of_diagonal_configurations_matches_classical_oracle():
    for strategy in bell.all_strategies():
        config = diagonal_configuration(strategy)
        value = relax.bell_value(config)
        assert abs(value - bell.classical_value(strategy)) < 1e-10
        assert value <= 2.0 + 1e-10


def test_bell_value_with_swapped_block_matches_direct_arithmetic():
    base = relax.extract_configuration(relax.optimal_moment_matrix())
    eigenvectors = dict(base.eigenvectors)
    for k in range(3):
        eigenvectors[(3, k)] = base.eigenvectors[(1, k)]
        eigenvectors[(4, k)] = base.eigenvectors[(2, k)]
    swapped = relax.ExtractedConfiguration(
        d=3, rank=3, state=base.state, eigenvectors=eigenvectors,
        operators=base.operators,
    )
    # independent oracle: raw sums of projector products
    phi = base.state
    expected = 0.0 + 0.0j
    for (alpha, beta), sign in bell.chsh3_form().terms.items():
        va = eigenvectors[tuple(alpha)]
        vb = eigenvectors[tuple(beta)]
        expected += sign * np.vdot(phi, va) * np.vdot(va, vb) * np.vdot(vb, phi)
    assert abs(expected.imag) < 1e-12
    assert abs(relax.bell_value(swapped) - expected.real) < 1e-12


def test_verify_configuration_published():
    config = relax.extract_configuration(relax.optimal_moment_matrix())
    report = relax.verify_configuration(config)
    assert report.passes(1e-10)
    assert report.commutator_norms[(1, 2)] < 1e-10
    assert report.commutator_norms[(3, 4)] < 1e-10
    assert report.commutator_norms[(1, 3)] > 0.1
    assert report.commutator_norms[(1, 4)] > 0.1
    assert report.commutator_norms[(2, 3)] > 0.1
    assert len(report.probabilities) == 12
    for p in report.probabilities.values():
        assert abs(p - 1.0 / 3.0) < 1e-10
    for residual in report.eigen_relation_residual.values():
        assert residual < 1e-10


def test_verify_configuration_reports_malformed_input():
    eye = np.eye(3, dtype=complex)
    eigenvectors = {(i, k): eye[0] for i in bell.OBSERVABLES for k in range(3)}
    operators = {i: np.outer(eye[0], eye[0]) * 1.0 for i in bell.OBSERVABLES}
    broken = relax.ExtractedConfiguration(
        d=3, rank=3, state=eye[0], eigenvectors=eigenvectors, operators=operators
    )
    report = relax.verify_configuration(broken)
    assert not report.passes(1e-8)
    assert max(report.completeness_residual.values()) > 0.5
    assert max(report.orthonormality_residual.values()) > 0.5


def random_qutrit_configuration(rng) -> relax.ExtractedConfiguration:
    """Random feasible configuration: Haar-ish bases from QR factorizations."""
    state = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    state = state / np.linalg.norm(state)
    eigenvectors = {}
    operators = {}
    for i in bell.OBSERVABLES:
        g = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        q, r = np.linalg.qr(g)
        q = q * (np.diagonal(r) / np.abs(np.diagonal(r)))
        for k in range(3):
            eigenvectors[(i, k)] = q[:, k]
        operators[i] = sum(
            bell.outcome_value(k) * np.outer(q[:, k], q[:, k].conj())
            for k in range(3)
        )
    return relax.ExtractedConfiguration(
        d=3, rank=3, state=state, eigenvectors=eigenvectors, operators=operators
    )


def test_relaxation_soundness_over_random_configurations():
    report = relax.solve_relaxation(3)
    rng = np.random.default_rng(2024)
    values = [
        relax.bell_value(random_qutrit_configuration(rng), require_real=False)
        for _ in range(100)
    ]
    paper_value = relax.bell_value(
        relax.extract_configuration(relax.optimal_moment_matrix())
    )
    for v in values + [paper_value]:
        assert v <= report.f1_star + 1e-6


def test_bound_sandwich():
    assert bell.classical_bound() == 2.0
    report = relax.solve_relaxation(3)
    assert abs(report.f1_star - 4.0) < 1e-6
    assert bell.classical_bound() < report.f1_star < bell.algebraic_bound(
        bell.chsh3_form()
    )


def complex_moment_matrix(config: relax.ExtractedConfiguration) -> np.ndarray:
    """Gram matrix of (state, projector * state): Hermitian, PSD, feasible."""
    basis = MomentBasis(3)
    words = [config.state]
    for alpha in basis.projector_indices():
        vec = config.eigenvectors[tuple(alpha)]
        words.append(vec * np.vdot(vec, config.state))
    m = np.zeros((13, 13), dtype=complex)
    for a, wa in enumerate(words):
        for b, wb in enumerate(words):
            m[a, b] = np.vdot(wa, wb)
    return m


def test_real_part_of_complex_feasible_point_stays_feasible():
    problem = relax.build_relaxation(3)
    rng = np.random.default_rng(55)
    for _ in range(5):
        config = random_qutrit_configuration(rng)
        m = complex_moment_matrix(config)
        assert np.max(np.abs(m - m.conj().T)) < 1e-12
        assert np.max(np.abs(m.imag)) > 1e-6  # genuinely complex sample
        real_part = 0.5 * (m + m.T).real
        report = sdp.check_feasibility(problem, real_part, 1e-9)
        assert report.passed
        complex_objective = float(np.tensordot(problem.objective, m.real))
        assert abs(report.objective - complex_objective) < 1e-12


def test_golden_csv_roundtrip():
    text = relax.moment_matrix_to_integer_csv()
    parsed = relax.moment_matrix_from_integer_csv(text)
    assert np.array_equal(parsed, relax.optimal_moment_matrix())
    with pytest.raises(ValueError):
        relax.moment_matrix_from_integer_csv("1,2\n3,4\n")


def test_solve_report_export():
    report = relax.solve_relaxation(3)
    payload = report.to_json_dict()
    assert payload["d"] == 3
    assert payload["mode"] == "basic"
    assert abs(payload["f1_star"] - 4.0) < 1e-6
