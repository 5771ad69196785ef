"""Dense matrix helpers: validation, SVD with a full right basis, norms, RNG streams.

Matrices are plain 2-D float64 numpy arrays. ``as_matrix`` is the single
admission point that enforces shape and finiteness.
"""
from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg


class SvdConvergenceError(RuntimeError):
    """Raised when the Jacobi sweep cap is hit before the columns are orthogonal."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdResult:
    left: np.ndarray  # S x S
    singular_values: np.ndarray  # min(S, m), non-increasing
    right: np.ndarray  # m x m, columns are right-singular vectors

    def reconstruct(self) -> np.ndarray:
        s, m = self.left.shape[0], self.right.shape[0]
        k = self.singular_values.size
        return (self.left[:, :k] * self.singular_values) @ self.right[:, :k].T if k else np.zeros((s, m))


@functools.lru_cache(maxsize=64)
def _completion_draws(n: int, ncols: int, seed: int) -> np.ndarray:
    draws = np.random.default_rng(seed).standard_normal((n, ncols))
    draws.setflags(write=False)
    return draws


def completion_columns(q: np.ndarray, n: int, count: int, seed: int = 0) -> np.ndarray:
    """The first ``count`` columns that ``complete_basis`` would append to ``q``.

    Gram-Schmidt never looks ahead, so a prefix of the draws gives a prefix
    of the completion; callers that only need a few null-space directions
    skip the rest.
    """
    y = np.array(_completion_draws(n, n - q.shape[1], seed)[:, :count])
    if q.shape[1]:
        for _ in range(2):
            y -= q @ (q.T @ y)
    qn, rn = scipy.linalg.qr(y, mode="economic", check_finite=False)
    qn *= np.where(np.diag(rn) < 0, -1.0, 1.0)
    return qn


def complete_basis(q: np.ndarray, n: int, seed: int = 0) -> np.ndarray:
    """Extend orthonormal columns ``q`` (n x k) to an n x n orthogonal matrix.

    The new columns are seeded Gaussian draws orthogonalised against ``q``
    (two Gram-Schmidt passes) and then among themselves. QR with a positive
    diagonal gives the same vectors classical Gram-Schmidt would.
    """
    k = q.shape[1]
    if k >= n:
        return q[:, :n]
    return np.hstack([q, completion_columns(q, n, n - k, seed)])


def _order_desc(s: np.ndarray) -> np.ndarray:
    # stable: equal singular values keep their original column order
    return np.argsort(-s, kind="stable")


def _jacobi_tall(b: np.ndarray, max_sweeps: int, tol: float = 1e-15):
    """One-sided (Hestenes) Jacobi on a tall matrix b (n x p, n >= p).

    Returns (u, s, v) with b = u diag(s) v^T, u n x p (columns of zero
    singular values left as zero vectors), v p x p orthogonal.
    """
    b = b.copy()
    p = b.shape[1]
    v = np.eye(p)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(p - 1):
            for j in range(i + 1, p):
                bi, bj = b[:, i], b[:, j]
                alpha = bi @ bi
                beta = bj @ bj
                gamma = bi @ bj
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = c * t
                new_i = c * bi - sn * bj
                new_j = sn * bi + c * bj
                b[:, i], b[:, j] = new_i, new_j
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i] = c * vi - sn * vj
                v[:, j] = sn * vi + c * vj
        if not rotated:
            break
    else:
        cond = np.linalg.cond(b) if b.size else float("nan")
        raise SvdConvergenceError(
            f"Jacobi SVD did not converge in {max_sweeps} sweeps "
            f"(shape {b.shape}, condition estimate {cond:.3e}, max |entry| {np.abs(b).max():.3e})"
        )
    s = np.linalg.norm(b, axis=0)
    order = _order_desc(s)
    s, b, v = s[order], b[:, order], v[:, order]
    u = np.zeros_like(b)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    nz = s > 1e-14 * scale
    u[:, nz] = b[:, nz] / s[nz]
    s = np.where(nz, s, 0.0)
    return u, s, v


def svd(a, method: str = "lapack", basis_seed: int = 0) -> SvdResult:
    """Full SVD ``a = left @ diag(s) @ right.T`` with square orthogonal factors.

    ``method="lapack"`` uses numpy's thin SVD, ``method="jacobi"`` a one-sided
    Jacobi sweep capped at 100*max(rows, cols) sweeps. In both cases the
    directions for zero (or missing) singular values are filled in with
    ``complete_basis`` so the result does not depend on LAPACK's arbitrary
    null-space choice.
    """
    u, s, v = _thin_svd(as_matrix(a), method)
    r = int(np.count_nonzero(s))
    rows, cols = u.shape[0], v.shape[0]
    left = complete_basis(u[:, :r], rows, basis_seed)
    right = complete_basis(v[:, :r], cols, basis_seed)
    return SvdResult(left=left, singular_values=s, right=right)


def right_singular_basis(a, method: str = "lapack", basis_seed: int = 0) -> np.ndarray:
    """The m x m right factor of ``svd`` without building the left one."""
    _, s, v = _thin_svd(as_matrix(a), method)
    return complete_basis(v[:, : int(np.count_nonzero(s))], v.shape[0], basis_seed)


def leading_right_vectors(a, count: int, method: str = "lapack", basis_seed: int = 0) -> np.ndarray:
    """First ``count`` columns of ``right_singular_basis(a)``, completing only as far as needed."""
    _, s, v = _thin_svd(as_matrix(a), method)
    k = int(np.count_nonzero(s))
    if count <= k:
        return v[:, :count]
    return np.hstack([v[:, :k], completion_columns(v[:, :k], v.shape[0], count - k, basis_seed)])


def _thin_svd(a: np.ndarray, method: str):
    rows, cols = a.shape
    if method == "lapack":
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        v = vt.T
        # LAPACK already sorts; the stable reorder only matters for exact ties
        if np.any(np.diff(s) > 0):
            order = _order_desc(s)
            u, s, v = u[:, order], s[order], v[:, order]
        scale = s[0] if s[0] > 0 else 1.0
        s = np.where(s > 1e-14 * scale, s, 0.0)
        return u, s, v
    if method == "jacobi":
        cap = 100 * max(rows, cols)
        if rows >= cols:
            return _jacobi_tall(a, cap)
        v, s, u = _jacobi_tall(a.T, cap)
        return u, s, v
    raise ValueError(f"unknown svd method {method!r}")


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # rescale so squares of tiny or huge entries neither underflow nor overflow
    b = a / scale
    return scale * float(np.sqrt(np.sum(b * b)))


def spectral_norm(a, rtol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on a^T a."""
    a = np.asarray(a, dtype=np.float64)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0:
        return 0.0
    a = a / scale
    ata = a.T @ a
    # deterministic start with a component along every coordinate
    x = np.linspace(1.0, 2.0, ata.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = ata @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            # start vector landed in the null space; restart on a column of a^T a
            x = ata[:, np.argmax(np.linalg.norm(ata, axis=0))]
            x = x / np.linalg.norm(x)
            continue
        x = y / ny
        new = float(x @ (ata @ x))
        if abs(new - lam) <= rtol * max(abs(new), 1e-300):
            lam = new
            break
        lam = new
    return scale * float(np.sqrt(max(lam, 0.0)))


def stream(master_seed: int, purpose: str, *ids: int) -> np.random.Generator:
    """Independent counter-based generator for (master_seed, purpose, ids...).

    Streams are keyed, not forked, so the draw a client sees never depends on
    how many other streams were consumed before it.
    """
    tag = int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:8], "little")
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, tag, *[int(i) + 1 for i in ids]])
    return np.random.Generator(np.random.Philox(seq))
