"""Rank-1 SVD denoisers for FS-GCC matrices.

The SVD is a one-sided (Hestenes) Jacobi iteration on the rows of the
L x N matrix, after a QR reduction when N >> L. Pairs of rows are rotated
until mutually orthogonal; the pairs within one round of the round-robin
schedule are disjoint, so each round is a single vectorised update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fsgcc import FsGccMatrix


@dataclass(frozen=True)
class SvdFactorization:
    u: np.ndarray  # (L, r)
    singular_values: np.ndarray  # (r,), descending
    v: np.ndarray  # (N, r)

    def reconstruct(self, rank: int | None = None) -> np.ndarray:
        k = len(self.singular_values) if rank is None else rank
        return (self.u[:, :k] * self.singular_values[:k]) @ self.v[:, :k].conj().T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint (p, q) pairs covering every pair once; n even."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def svd(matrix, tol: float = 1e-15, max_sweeps: int = 60) -> SvdFactorization:
    """Thin SVD A = U diag(s) V^H with r = min(L, N)."""
    a = np.asarray(matrix, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError("svd expects a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if a.shape[0] > a.shape[1]:
        f = svd(a.conj().T, tol, max_sweeps)
        return SvdFactorization(f.v, f.singular_values, f.u)
    if a.shape[1] > 2 * a.shape[0]:
        # QR preconditioning: A = R^H Q^H, rotate the small L x L factor only
        q, r = np.linalg.qr(a.conj().T)
        f = _jacobi(r.conj().T, tol, max_sweeps)
        return SvdFactorization(f.u, f.singular_values, q @ f.v)
    return _jacobi(a, tol, max_sweeps)


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> SvdFactorization:
    n_rows = a.shape[0]
    m = n_rows + (n_rows % 2)
    # rows of w get orthogonalised; rot accumulates the same row operations
    w = np.zeros((m, a.shape[1]), dtype=np.complex128)
    w[:n_rows] = a
    rot = np.eye(m, dtype=np.complex128)
    rounds = _round_robin(m) if m > 1 else []

    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            wp, wq = w[p], w[q]
            alpha = np.einsum("ij,ij->i", wp.conj(), wp).real
            beta = np.einsum("ij,ij->i", wq.conj(), wq).real
            gamma = np.einsum("ij,ij->i", wp.conj(), wq)
            g = np.abs(gamma)
            active = g > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q, alpha, beta, gamma, g = (x[active] for x in (p, q, alpha, beta, gamma, g))
            zeta = (beta - alpha) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ph = (gamma / g).conj()  # e^{-i arg gamma}
            for mat in (w, rot):
                xp, xq = mat[p], mat[q]
                mat[p] = c[:, None] * xp - (s * ph)[:, None] * xq
                mat[q] = s[:, None] * xp + (c * ph)[:, None] * xq
        if not rotated:
            break

    w, rot = w[:n_rows], rot[:n_rows, :n_rows]
    sigma = np.linalg.norm(w, axis=1)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w, rot = w[order], rot[order]
    # A = rot^H w  =>  U = rot^H (columns), V^H = rows of w / sigma
    u = rot.conj().T
    v = np.zeros_like(w)
    nz = sigma > 0
    v[nz] = w[nz] / sigma[nz, None]
    return SvdFactorization(u, sigma, v.conj().T)


def rank1(fs: FsGccMatrix | np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
    entries = fs.entries if isinstance(fs, FsGccMatrix) else np.asarray(fs)
    f = svd(entries)
    return f.u[:, 0], float(f.singular_values[0]), f.v[:, 0]


def svd_fsgcc_denoise(fs: FsGccMatrix | np.ndarray) -> np.ndarray:
    """Magnitude of the best rank-1 approximation."""
    u1, s1, v1 = rank1(fs)
    return np.abs(s1 * np.outer(u1, v1.conj()))


def wsvd_weights(u1: np.ndarray) -> np.ndarray:
    mag = np.abs(u1)
    top = mag.max()
    return mag / top if top > 0 else np.ones_like(mag)


def wsvd_fsgcc_denoise(fs: FsGccMatrix | np.ndarray) -> np.ndarray:
    """Rank-1 magnitude with each band scaled by |u1[l]| / max |u1|."""
    u1, s1, v1 = rank1(fs)
    return wsvd_weights(u1)[:, None] * np.abs(s1 * np.outer(u1, v1.conj()))
