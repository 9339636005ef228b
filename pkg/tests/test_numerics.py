import math

import numpy as np
import pytest

from freechsh3 import numerics, relax


def eig2x2_closed_form(a, b, c):
    """Analytic eigenvalues of [[a, b], [b, c]], descending."""
    mean = 0.5 * (a + c)
    radius = math.sqrt((0.5 * (a - c)) ** 2 + b * b)
    return mean + radius, mean - radius


def eig3x3_closed_form(m):
    """Trigonometric closed form for a symmetric 3x3 matrix, descending."""
    m = np.asarray(m, dtype=float)
    q = np.trace(m) / 3.0
    k = m - q * np.eye(3)
    p = math.sqrt(max(np.sum(k * k) / 6.0, 0.0))
    if p == 0.0:
        return np.array([q, q, q])
    det = np.linalg.det(k / p)
    r = max(-1.0, min(1.0, det / 2.0))
    phi = math.acos(r) / 3.0
    eig1 = q + 2.0 * p * math.cos(phi)
    eig3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    eig2 = 3.0 * q - eig1 - eig3
    return np.array(sorted([eig1, eig2, eig3], reverse=True))


def random_hermitian(rng, n, complex_entries=True):
    a = rng.standard_normal((n, n))
    if complex_entries:
        a = a + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def test_identity_eigenvalues():
    dec = numerics.hermitian_eig(np.eye(3))
    assert np.allclose(dec.eigenvalues, [1.0, 1.0, 1.0], atol=1e-14)


def test_optimal_moment_matrix_spectrum():
    dec = numerics.hermitian_eig(relax.optimal_moment_matrix())
    expected = np.array([7 / 3, 4 / 3, 4 / 3] + [0.0] * 10)
    assert np.max(np.abs(dec.eigenvalues - expected)) < 1e-12


def test_reconstruction_random_real_and_complex():
    rng = np.random.default_rng(1234)
    for trial in range(6):
        for complex_entries in (False, True):
            m = random_hermitian(rng, 8, complex_entries)
            dec = numerics.hermitian_eig(m)
            v, w = dec.eigenvectors, dec.eigenvalues
            rebuilt = (v * w) @ v.conj().T
            scale = np.max(np.abs(m))
            assert np.max(np.abs(rebuilt - m)) <= 1e-10 * scale
            assert np.max(np.abs(v.conj().T @ v - np.eye(8))) <= 1e-10
            assert np.all(np.diff(w) <= 1e-12)
            assert not np.iscomplexobj(w)


def test_eigenvalues_match_closed_forms():
    rng = np.random.default_rng(99)
    for _ in range(25):
        a, b, c = rng.standard_normal(3)
        dec = numerics.hermitian_eig(np.array([[a, b], [b, c]]))
        hi, lo = eig2x2_closed_form(a, b, c)
        assert abs(dec.eigenvalues[0] - hi) < 1e-10
        assert abs(dec.eigenvalues[1] - lo) < 1e-10
    for _ in range(25):
        m = random_hermitian(rng, 3, complex_entries=False)
        dec = numerics.hermitian_eig(m)
        assert np.max(np.abs(dec.eigenvalues - eig3x3_closed_form(m))) < 1e-10


def test_complex_2x2_closed_form():
    m = np.array([[1.0, 1j], [-1j, 1.0]])
    dec = numerics.hermitian_eig(m)
    assert np.allclose(dec.eigenvalues, [2.0, 0.0], atol=1e-12)
    rebuilt = (dec.eigenvectors * dec.eigenvalues) @ dec.eigenvectors.conj().T
    assert np.max(np.abs(rebuilt - m)) < 1e-12


def test_non_hermitian_rejected():
    with pytest.raises(numerics.NonHermitianError):
        numerics.hermitian_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(numerics.NonHermitianError):
        numerics.require_hermitian(np.zeros((2, 3)))


def test_no_convergence_error_on_zero_sweep_budget():
    m = np.array([[1.0, 0.5], [0.5, 2.0]])
    with pytest.raises(numerics.NoConvergenceError):
        numerics.hermitian_eig(m, max_sweeps=0)


def test_real_embed_block_structure_and_doubling():
    rng = np.random.default_rng(5)
    m = random_hermitian(rng, 4, complex_entries=False).real
    emb = numerics.real_embed(m)
    assert np.array_equal(emb[:4, :4], emb[4:, 4:])
    assert np.max(np.abs(emb[:4, 4:])) == 0.0

    # complex case: embedding spectrum is the original with doubled counts,
    # checked against an independent dense eigensolver
    m2 = np.array([[1.0, 1j], [-1j, 1.0]])
    emb2 = numerics.real_embed(m2)
    independent = np.sort(np.linalg.eigvalsh(emb2))
    assert np.allclose(independent, [0.0, 0.0, 2.0, 2.0], atol=1e-12)

    m_star = relax.optimal_moment_matrix()
    own = numerics.hermitian_eig(m_star).eigenvalues
    doubled = np.sort(np.repeat(own, 2))[::-1]
    emb3 = numerics.hermitian_eig(numerics.real_embed(m_star)).eigenvalues
    assert np.max(np.abs(emb3 - doubled)) < 1e-10


def test_real_embed_preserves_psd_both_directions():
    rng = np.random.default_rng(17)
    for _ in range(8):
        b = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        psd = b.conj().T @ b
        emb = numerics.real_embed(psd)
        assert numerics.hermitian_eig(emb).eigenvalues[-1] > -1e-10
        not_psd = psd - (np.trace(psd).real / 2.0) * np.eye(5)
        if numerics.hermitian_eig(not_psd).eigenvalues[-1] < -1e-8:
            emb2 = numerics.real_embed(not_psd)
            assert numerics.hermitian_eig(emb2).eigenvalues[-1] < -1e-8


def test_rank_factor_on_optimal_moment_matrix():
    m = relax.optimal_moment_matrix()
    rf = numerics.rank_factor(m)
    assert rf.rank == 3
    rebuilt = rf.factor.conj().T @ rf.factor
    assert np.max(np.abs(rebuilt - m)) <= 1e-9 * np.max(np.abs(m))


def test_rank_factor_trivial_cases():
    rf0 = numerics.rank_factor(np.zeros((3, 3)))
    assert rf0.rank == 0
    assert rf0.factor.shape == (0, 3)
    rf1 = numerics.rank_factor(np.array([[4.0]]))
    assert rf1.rank == 1
    assert np.allclose(rf1.factor, [[2.0]], atol=1e-14)


def test_rank_factor_multiply_back_property():
    rng = np.random.default_rng(7)
    for n, r in ((4, 2), (6, 6), (5, 1)):
        b = rng.standard_normal((r, n)) + 1j * rng.standard_normal((r, n))
        m = b.conj().T @ b
        rf = numerics.rank_factor(m)
        assert rf.rank == r
        rebuilt = rf.factor.conj().T @ rf.factor
        assert np.max(np.abs(rebuilt - m)) <= 1e-9 * np.max(np.abs(m))


def test_rank_factor_deterministic_row_phases():
    rng = np.random.default_rng(3)
    b = rng.standard_normal((2, 5))
    m = b.T @ b
    f1 = numerics.rank_factor(m).factor
    f2 = numerics.rank_factor(m).factor
    assert np.array_equal(f1, f2)
    for row in f1:
        lead = row[np.argmax(np.abs(row) > 1e-9 * np.max(np.abs(row)))]
        assert lead.real > 0.0
        assert abs(lead.imag) < 1e-12


def test_rank_factor_rejects_indefinite():
    with pytest.raises(numerics.NotPsdError):
        numerics.rank_factor(np.diag([1.0, -1.0]))


def test_project_psd_clips_negative_modes():
    m = np.diag([2.0, -3.0])
    p = numerics.project_psd(m)
    assert np.allclose(p, np.diag([2.0, 0.0]), atol=1e-12)
    rng = np.random.default_rng(11)
    m2 = random_hermitian(rng, 5, complex_entries=False).real
    p2 = numerics.project_psd(m2)
    assert numerics.hermitian_eig(p2).eigenvalues[-1] >= -1e-12
