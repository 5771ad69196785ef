"""Null-space projector built from the global prompt and local prompt refinement."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .prompts import ConfigurationError
from .tensor import as_matrix, leading_right_vectors, right_singular_basis


@dataclass(frozen=True)
class SubspaceProjector:
    """Orthogonal projector R = X2 X2^T onto the weak right-singular directions.

    R is stored as I - X1 X1^T, which is the same matrix but only needs the
    first r basis vectors. X2 itself is built on first access.
    """

    R: np.ndarray = field(repr=False)
    lam: float
    r: int
    m_prime: int
    tag: tuple[int, int] = (0, 0)
    source: np.ndarray | None = field(default=None, repr=False, compare=False)
    svd_method: str = "lapack"
    basis_seed: int = 0

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    @functools.cached_property
    def basis(self) -> np.ndarray:
        """X2, the m x m_prime block of retained right-singular vectors."""
        if self.source is None:
            return np.eye(self.dim)[:, self.r :]
        return right_singular_basis(self.source, self.svd_method, self.basis_seed)[:, self.r :]


def removed_directions(lam: float, m: int) -> int:
    """floor(lam * m), robust to products like 0.29 * 100 = 28.999999999999996."""
    return int(math.floor(round(lam * m, 9)))


def build_projector(
    global_prompt,
    lam: float,
    tag: tuple[int, int] = (0, 0),
    svd_method: str = "lapack",
    basis_seed: int = 0,
) -> SubspaceProjector:
    if not 0.0 < lam < 1.0:
        raise ConfigurationError(f"lambda must lie in (0, 1), got {lam}")
    g = as_matrix(global_prompt, "global prompt").copy()
    m = g.shape[1]
    if m < 2:
        raise ConfigurationError("embedding dimension must be at least 2")
    r = removed_directions(lam, m)
    x1 = leading_right_vectors(g, r, svd_method, basis_seed)
    proj = -(x1 @ x1.T)
    proj[np.diag_indices(m)] += 1.0
    proj = 0.5 * (proj + proj.T)
    return SubspaceProjector(proj, lam, r, m - r, tag, g, svd_method, basis_seed)


def identity_projector(m: int) -> SubspaceProjector:
    """R = I, used when refinement is switched off."""
    return SubspaceProjector(R=np.eye(m), lam=0.0, r=0, m_prime=m)


def refine(local_prompt, proj: SubspaceProjector) -> np.ndarray:
    g = np.asarray(local_prompt, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != proj.dim:
        raise ValueError(f"local prompt shape {g.shape} does not match projector dimension {proj.dim}")
    return g @ proj.R


def least_squares_oracle(local_prompt, proj: SubspaceProjector) -> np.ndarray:
    """Closest matrix to ``local_prompt`` whose rows lie in span(X2).

    Works row by row in a modified Gram-Schmidt basis of the X2 columns and
    never touches ``proj.R``.
    """
    g = np.asarray(local_prompt, dtype=np.float64)
    basis = []
    for col in proj.basis.T:
        v = col.copy()
        for q in basis:
            v -= (q @ v) * q
        n = np.linalg.norm(v)
        if n > 1e-12:
            basis.append(v / n)
    out = np.zeros_like(g)
    for i, row in enumerate(g):
        acc = np.zeros_like(row)
        for q in basis:
            acc += (row @ q) * q
        out[i] = acc
    return out
