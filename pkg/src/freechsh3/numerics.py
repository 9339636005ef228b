"""Dense Hermitian linear algebra used across the package.

The eigensolver is a cyclic Jacobi iteration. Real symmetric input is
diagonalized directly; complex Hermitian input is diagonalized through its
2n x 2n real embedding, whose spectrum is the original one with every
eigenvalue doubled. Jacobi is slow compared to LAPACK but deterministic,
dependency-free and accurate at the matrix sizes used here (n <= 64).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonHermitianError(ValueError):
    """Input matrix is not Hermitian within the requested tolerance."""


class NoConvergenceError(RuntimeError):
    """Jacobi sweeps hit the iteration cap before off-diagonal decay."""


class NotPsdError(ValueError):
    """Matrix has an eigenvalue below the negative tolerance."""


@dataclass(frozen=True)
class EigDecomposition:
    """Eigenvalues in descending order with matching unitary column vectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class RankFactorization:
    """Low-rank factor with M = factor.conj().T @ factor, rank rows."""

    rank: int
    factor: np.ndarray


def require_hermitian(m, tol: float = 1e-12) -> np.ndarray:
    """Validate and return m as a square complex Hermitian ndarray."""
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonHermitianError(f"expected a square matrix, got shape {a.shape}")
    dev = float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0
    if dev > tol:
        raise NonHermitianError(
            f"matrix deviates from Hermitian symmetry by {dev:.3e} (tol {tol:.3e})"
        )
    return a


def real_embed(m, tol: float = 1e-12) -> np.ndarray:
    """Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix.

    The embedding is positive semidefinite exactly when the input is, and its
    eigenvalues are those of the input with multiplicities doubled.
    """
    a = require_hermitian(m, tol)
    re, im = a.real, a.imag
    top = np.hstack([re, -im])
    bottom = np.hstack([im, re])
    out = np.vstack([top, bottom])
    return 0.5 * (out + out.T)


def _jacobi_cyclic(a: np.ndarray, max_sweeps: int = 64):
    """Cyclic-by-row Jacobi diagonalization of a real symmetric matrix.

    Returns (eigenvalues descending, eigenvector columns). Deterministic for
    a fixed input: sweep order, rotation formulas and the final stable sort
    involve no randomness.
    """
    a = np.array(a, dtype=float)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = max(1.0, float(np.max(np.abs(a))))
    skip_tol = 1e-18 * scale
    stop_tol = n * 3e-16 * scale
    for _ in range(max_sweeps):
        off = float(np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0))
        if off <= stop_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip_tol:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        raise NoConvergenceError(
            f"Jacobi did not converge within {max_sweeps} sweeps (n={n})"
        )
    w = a.diagonal().copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _complex_vectors_from_embedding(w2, v2, n, scale):
    """Recover n complex eigenpairs from the 2n real embedding eigenpairs.

    Embedding eigenvalues come in exactly doubled pairs; a real eigenvector
    (x; y) maps to the complex eigenvector x + iy. Within each numerically
    degenerate cluster a Gram-Schmidt pass keeps one complex vector per pair.
    """
    cluster_tol = 1e-11 * max(1.0, scale)
    w = 0.5 * (w2[0::2] + w2[1::2])
    vectors = np.zeros((n, n), dtype=complex)
    col = 0
    idx = 0
    while idx < len(w2):
        hi = idx + 1
        while hi < len(w2) and abs(w2[hi] - w2[idx]) <= cluster_tol:
            hi += 1
        size = hi - idx
        if size % 2 != 0:
            # borderline cluster split; widen to the next pair boundary
            hi += 1
            size += 1
        kept: list[np.ndarray] = []
        for j in range(idx, hi):
            cand = v2[:n, j] + 1j * v2[n:, j]
            for u in kept:
                cand = cand - u * np.vdot(u, cand)
            norm = float(np.linalg.norm(cand))
            if norm > 1e-3:
                kept.append(cand / norm)
            if len(kept) == size // 2:
                break
        if len(kept) != size // 2:
            raise NoConvergenceError(
                "failed to pair embedding eigenvectors into complex ones"
            )
        for u in kept:
            vectors[:, col] = u
            col += 1
        idx = hi
    return w[:col], vectors[:, :col]


def hermitian_eig(m, tol: float = 1e-12, max_sweeps: int = 64) -> EigDecomposition:
    """Full eigendecomposition of a Hermitian matrix, eigenvalues descending."""
    a = require_hermitian(m, tol)
    n = a.shape[0]
    if n == 0:
        return EigDecomposition(np.zeros(0), np.zeros((0, 0), dtype=complex))
    if float(np.max(np.abs(a.imag))) <= tol:
        w, v = _jacobi_cyclic(a.real, max_sweeps)
        return EigDecomposition(w, v.astype(complex))
    scale = float(np.max(np.abs(a)))
    w2, v2 = _jacobi_cyclic(real_embed(a, tol), max_sweeps)
    w, v = _complex_vectors_from_embedding(w2, v2, n, scale)
    if len(w) != n:
        raise NoConvergenceError("embedding recovery produced a rank mismatch")
    return EigDecomposition(w, v)


def _fix_row_phases(factor: np.ndarray) -> np.ndarray:
    """Rotate each row by a unit phase so its first significant entry has
    positive real part (and zero imaginary part), making output deterministic."""
    out = factor.copy()
    for r in range(out.shape[0]):
        row = out[r]
        mags = np.abs(row)
        peak = float(mags.max()) if mags.size else 0.0
        if peak == 0.0:
            continue
        lead = int(np.argmax(mags > 1e-9 * peak))
        pivot = row[lead]
        out[r] = row * (pivot.conjugate() / abs(pivot))
    return out


def rank_factor(m, tol: float | None = None) -> RankFactorization:
    """Factor a Hermitian PSD matrix as factor.conj().T @ factor.

    The factor has one row per eigenvalue above tol (default: 1e-7 times the
    largest eigenvalue), each row being sqrt(eigenvalue) times the conjugated
    eigenvector, with a deterministic per-row phase convention.
    """
    dec = hermitian_eig(m)
    w = dec.eigenvalues
    lead = float(w[0]) if w.size else 0.0
    if tol is None:
        tol = 1e-7 * max(lead, 0.0)
    if w.size and float(w[-1]) < -tol:
        raise NotPsdError(
            f"matrix has eigenvalue {float(w[-1]):.6e} below -tol ({-tol:.6e})"
        )
    rank = int(np.sum(w > tol))
    rows = np.zeros((rank, dec.eigenvectors.shape[0]), dtype=complex)
    for k in range(rank):
        rows[k] = np.sqrt(w[k]) * dec.eigenvectors[:, k].conj()
    return RankFactorization(rank=rank, factor=_fix_row_phases(rows))


def project_psd(m, tol: float = 1e-12) -> np.ndarray:
    """Nearest (Frobenius) positive semidefinite matrix: clip negative modes."""
    dec = hermitian_eig(m, tol)
    w = np.maximum(dec.eigenvalues, 0.0)
    v = dec.eigenvectors
    out = (v * w) @ v.conj().T
    return 0.5 * (out + out.conj().T)
