"""
Dense matrix decompositions used by the precoders.

HO-GSVD of several tall matrices sharing one right basis, the dominant
right-singular subspace of a stack of channels, BD null-space bases and left
pseudo-inverses. Everything here is a pure function of its inputs.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .errors import DecompositionError, DimensionMismatch, RankDeficiency

logger = logging.getLogger(__name__)

# Relative singular-value floor below which a matrix counts as rank deficient.
RANK_RTOL = 1e-10
# Gram matrices worse conditioned than this get a small ridge before solving.
RIDGE_COND = 1e12
RIDGE_SCALE = 1e-12
# Eigenvalues of the quotient mean are real in exact arithmetic.
IMAG_TOL = 1e-8
SIGMA_FLOOR = 1e-12
MAX_COND_V = 1.0 / np.finfo(float).eps


class SubspaceRole(str, Enum):
    ROW_SPACE_INTERSECTION = "row_space_intersection"
    NULL_SPACE = "null_space"


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal columns spanning a subspace of C^N."""
    matrix: np.ndarray
    role: SubspaceRole

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class HoGsvdResult:
    """
    Factors of A_i = U_i diag(sigma_i) V^H for every input matrix.

    `eigenvalues` holds the quotient-mean eigenvalues in stream order (the
    singular values for a single input). `degenerate` lists (matrix, stream)
    pairs whose value was clamped to zero.
    """
    U: Tuple[np.ndarray, ...]
    sigma: Tuple[np.ndarray, ...]
    V: np.ndarray
    eigenvalues: np.ndarray
    degenerate: Tuple[Tuple[int, int], ...] = ()

    @property
    def num_matrices(self) -> int:
        return len(self.U)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.V))

    def reconstruct(self, index: int) -> np.ndarray:
        return (self.U[index] * self.sigma[index]) @ self.V.conj().T


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.complex128)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def _has_full_column_rank(a: np.ndarray) -> bool:
    if a.shape[1] == 0:
        return True
    s = np.linalg.svd(a, compute_uv=False)
    return bool(s[0] > 0 and s[-1] > RANK_RTOL * s[0])


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = gram.shape[0]
    if np.linalg.cond(gram) > RIDGE_COND:
        ridge = RIDGE_SCALE * np.trace(gram).real / n
        logger.debug("ill-conditioned Gram matrix, adding ridge %.3e", ridge)
        gram = gram + ridge * np.eye(n)
    return sla.solve(gram, rhs, assume_a="her")


def _quotient_mean(grams: Sequence[np.ndarray]) -> np.ndarray:
    count = len(grams)
    n = grams[0].shape[0]
    total = np.zeros((n, n), dtype=np.complex128)
    for i in range(count):
        for j in range(i + 1, count):
            # S_i S_j^-1 = (S_j^-1 S_i)^H because both are Hermitian
            total += _solve_gram(grams[j], grams[i]).conj().T
            total += _solve_gram(grams[i], grams[j]).conj().T
    return total / (count * (count - 1))


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Scale columns to unit norm with the largest-magnitude entry real positive."""
    v = v / np.linalg.norm(v, axis=0)
    pivots = np.argmax(np.abs(v), axis=0)
    lead = v[pivots, np.arange(v.shape[1])]
    return v * (np.abs(lead) / lead)


def _shared_right_basis(mats: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    if len(mats) == 1:
        _, s, vh = np.linalg.svd(mats[0], full_matrices=False)
        return vh.conj().T, s

    grams = [a.conj().T @ a for a in mats]
    w, vecs = sla.eig(_quotient_mean(grams))
    scale = np.maximum(1.0, np.abs(w.real))
    if np.any(np.abs(w.imag) > IMAG_TOL * scale):
        worst = float(np.max(np.abs(w.imag) / scale))
        raise DecompositionError(f"quotient mean has complex eigenvalues (relative imag {worst:.2e})")
    order = np.argsort(-w.real, kind="stable")
    return vecs[:, order], w.real[order]


def _orthogonal_unit(block: np.ndarray) -> np.ndarray:
    if block.shape[1] == 0:
        return np.eye(block.shape[0], dtype=np.complex128)[:, 0]
    return sla.null_space(block.conj().T)[:, 0]


def ho_gsvd(matrices: Sequence) -> HoGsvdResult:
    """
    Higher-order GSVD of S >= 1 full-column-rank matrices with equal column count.

    V is built from the eigenvectors of the quotient mean of the Gram matrices
    (the SVD right basis for a single input); then B_i = A_i V^-H,
    sigma_i = column norms of B_i and U_i = B_i / sigma_i.
    """
    mats = [_as_matrix(a, f"matrix {i}") for i, a in enumerate(matrices)]
    if not mats:
        raise DimensionMismatch("ho_gsvd needs at least one matrix")
    n = mats[0].shape[1]
    for i, a in enumerate(mats):
        if a.shape[1] != n:
            raise DimensionMismatch(f"matrix {i} has {a.shape[1]} columns, expected {n}")
        if a.shape[0] < n:
            raise DimensionMismatch(f"matrix {i} is {a.shape[0]}x{n}; needs at least {n} rows")
        if not _has_full_column_rank(a):
            raise RankDeficiency(f"matrix {i} does not have full column rank", index=i)

    vecs, eigenvalues = _shared_right_basis(mats)
    v = _fix_phase(vecs)
    cond = np.linalg.cond(v)
    if not np.isfinite(cond) or cond > MAX_COND_V:
        raise DecompositionError(f"shared right basis is singular (cond {cond:.3e})")

    lu = sla.lu_factor(v)
    u_list, sigma_list, degenerate = [], [], []
    for i, a in enumerate(mats):
        b = sla.lu_solve(lu, a.conj().T).conj().T
        sigma = np.linalg.norm(b, axis=0)
        small = sigma < SIGMA_FLOOR
        u = b / np.where(small, 1.0, sigma)
        pending = [int(c) for c in np.flatnonzero(small)]
        while pending:
            col = pending.pop(0)
            others = [c for c in range(n) if c != col and c not in pending]
            u[:, col] = _orthogonal_unit(u[:, others])
            degenerate.append((i, col))
        sigma = np.where(small, 0.0, sigma)
        u_list.append(u)
        sigma_list.append(sigma)

    if degenerate:
        logger.warning("HO-GSVD clamped %d degenerate stream(s): %s", len(degenerate), degenerate)
    return HoGsvdResult(
        U=tuple(u_list),
        sigma=tuple(sigma_list),
        V=v,
        eigenvalues=np.asarray(eigenvalues, dtype=float),
        degenerate=tuple(degenerate),
    )


def row_space_intersection(matrices: Sequence, target_dim: int) -> SubspaceBasis:
    """Dominant `target_dim` right singular vectors of the vertically stacked matrices."""
    mats = [_as_matrix(a) for a in matrices]
    if not mats:
        raise DimensionMismatch("row_space_intersection needs at least one matrix")
    n = mats[0].shape[1]
    if any(a.shape[1] != n for a in mats):
        raise DimensionMismatch("all matrices must share the column count")
    stacked = np.vstack(mats)
    if target_dim < 1 or target_dim > min(stacked.shape):
        raise DimensionMismatch(
            f"target_dim {target_dim} outside [1, {min(stacked.shape)}] for stacked shape {stacked.shape}")
    _, _, vh = np.linalg.svd(stacked, full_matrices=False)
    return SubspaceBasis(vh[:target_dim].conj().T, SubspaceRole.ROW_SPACE_INTERSECTION)


def null_space_basis(stacked, dim: int) -> SubspaceBasis:
    """Orthonormal basis of `dim` directions annihilated by a full-row-rank matrix."""
    a = _as_matrix(stacked, "stacked")
    rows, n = a.shape
    if dim < 1 or dim > n:
        raise DimensionMismatch(f"dim {dim} outside [1, {n}]")
    if rows == 0:
        return SubspaceBasis(np.eye(n, dtype=np.complex128)[:, :dim], SubspaceRole.NULL_SPACE)

    _, s, vh = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    if rank < rows:
        raise RankDeficiency(f"stacked matrix has rank {rank} < {rows} rows")
    if n - rank < dim:
        raise RankDeficiency(f"null space has dimension {n - rank}, {dim} requested")
    return SubspaceBasis(vh[n - dim:].conj().T, SubspaceRole.NULL_SPACE)


def left_pseudo_inverse(tall) -> np.ndarray:
    a = _as_matrix(tall, "tall")
    m, n = a.shape
    if m < n:
        raise DimensionMismatch(f"left inverse needs m >= n, got {m}x{n}")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if n and not (s[0] > 0 and s[-1] > RANK_RTOL * s[0]):
        raise RankDeficiency("matrix does not have full column rank")
    return (vh.conj().T / s) @ u.conj().T
