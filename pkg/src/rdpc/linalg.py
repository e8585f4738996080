"""Dense linear-algebra kernels shared by the rest of the package.

SVD is the single primitive for rank, null space and pseudo-inverse so that
every module makes the same rank decision for the same matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)


def definiteness_margin(m: np.ndarray) -> float:
    """Eigenvalue margin used to accept strict definiteness."""
    return 1e-10 * max(1.0, float(np.linalg.norm(m)))


def sym(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def svec(m: np.ndarray) -> np.ndarray:
    """Isometric vectorization of the upper triangle (row-major order).

    Off-diagonal entries carry a weight of sqrt(2), so that
    ``svec(a) @ svec(b) == trace(a @ b)`` for symmetric ``a`` and ``b``.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    iu = np.triu_indices(n)
    v = m[iu].copy()
    v[iu[0] != iu[1]] *= SQRT2
    return v


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def smat(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if svec_dim(n) != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    iu = np.triu_indices(n)
    vals = v.copy()
    off = iu[0] != iu[1]
    vals[off] /= SQRT2
    m = np.zeros((n, n))
    m[iu] = vals
    m[(iu[1], iu[0])] = vals
    return m


def _rank_cut(s: np.ndarray, shape: tuple[int, ...], rtol: float | None) -> float:
    if s.size == 0:
        return 0.0
    if rtol is None:
        rtol = max(shape) * np.finfo(float).eps
    return rtol * s[0]


def numerical_rank(m: np.ndarray, rtol: float | None = None) -> int:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > _rank_cut(s, m.shape, rtol)))


def null_space_basis(m: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical kernel of ``m``.

    Singular values at or below ``rtol * sigma_max`` count as zero; the default
    ``rtol`` is ``max(shape) * eps``.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    ncols = m.shape[1]
    if m.shape[0] == 0 or not np.any(m):
        return np.eye(ncols)
    _, s, vt = np.linalg.svd(m, full_matrices=True)
    rank = int(np.sum(s > _rank_cut(s, m.shape, rtol)))
    return vt[rank:].T.copy()


def range_basis(m: np.ndarray, rtol: float | None = None) -> np.ndarray:
    """Orthonormal basis of the column space of ``m``."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0 or not np.any(m):
        return np.zeros((m.shape[0], 0))
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    rank = int(np.sum(s > _rank_cut(s, m.shape, rtol)))
    return u[:, :rank].copy()


def pseudo_inverse(m: np.ndarray, rtol: float | None = None) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0 or not np.any(m):
        return np.zeros(m.shape[::-1])
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    keep = s > _rank_cut(s, m.shape, rtol)
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def spectral_radius(m: np.ndarray) -> float:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError("spectral radius needs a square matrix")
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def psd_sqrt(m: np.ndarray, floor: float = 1e-14) -> np.ndarray:
    """Symmetric square root; eigenvalues below ``floor`` are clamped to zero."""
    w, v = np.linalg.eigh(sym(m))
    w = np.where(w < floor, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def is_negative_definite(m: np.ndarray) -> bool:
    m = sym(m)
    if m.size == 0:
        return True
    return bool(np.linalg.eigvalsh(m)[-1] <= -definiteness_margin(m))


def schur_equivalence_check(q, r, p) -> tuple[bool, bool, bool]:
    """Evaluate the three equivalent Schur-complement statements.

    Returns the truth values of (i) ``[[q, r], [r.T, p]] < 0``,
    (ii) ``q < 0`` and ``p - r.T q^-1 r < 0``, and
    (iii) ``p < 0`` and ``q - r p^-1 r.T < 0``.
    """
    q = sym(np.atleast_2d(q))
    p = sym(np.atleast_2d(p))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if r.shape != (q.shape[0], p.shape[0]):
        raise ValueError("q, r, p do not conform")
    full = is_negative_definite(np.block([[q, r], [r.T, p]]))
    second = is_negative_definite(q) and is_negative_definite(p - r.T @ np.linalg.solve(q, r))
    third = is_negative_definite(p) and is_negative_definite(q - r @ np.linalg.solve(p, r.T))
    return full, second, third


@dataclass
class FinslerReport:
    passed: bool
    n22_min_eig: float
    schur_residual: float
    kernel_residual: float
    scale: float
    checks: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n22_min_eig": self.n22_min_eig,
            "schur_residual": self.schur_residual,
            "kernel_residual": self.kernel_residual,
            "scale": self.scale,
            "checks": dict(self.checks),
        }


def finsler_preconditions(n: np.ndarray, q: int, s: int, tol: float = 1e-8,
                          psd_tol: float = 1e-10) -> FinslerReport:
    """Check the data-side hypotheses of the matrix Finsler lemma for ``n``.

    ``n`` is split after row/column ``q``. Residuals are reported in absolute
    terms and compared against ``tol * ||n||`` (``psd_tol`` for the eigenvalue
    test of the lower-right block).
    """
    n = sym(n)
    if n.shape != (q + s, q + s):
        raise ValueError(f"expected a {q + s}x{q + s} matrix, got {n.shape}")
    scale = float(np.linalg.norm(n, 2)) if n.size else 0.0
    n11, n12, n22 = n[:q, :q], n[:q, q:], n[q:, q:]
    min_eig = float(np.linalg.eigvalsh(n22)[0]) if s else 0.0
    schur = float(np.linalg.norm(n11 - n12 @ pseudo_inverse(n22) @ n12.T, 2)) if q else 0.0
    ker = null_space_basis(n22) if s else np.zeros((0, 0))
    kernel = float(np.linalg.norm(n12 @ ker, 2)) if ker.size and q else 0.0
    checks = {
        "n22_psd": min_eig >= -psd_tol * scale,
        "schur_complement_zero": schur <= tol * scale,
        "kernel_inclusion": kernel <= tol * scale,
    }
    return FinslerReport(all(checks.values()), min_eig, schur, kernel, scale, checks)


class BlockLayout:
    """Partition of a square matrix into consecutive diagonal blocks."""

    def __init__(self, sizes):
        sizes = [int(s) for s in sizes]
        if any(s < 0 for s in sizes):
            raise ValueError("block sizes must be nonnegative")
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.dim = int(self.offsets[-1])

    def __len__(self) -> int:
        return len(self.sizes)

    def zeros(self) -> np.ndarray:
        return np.zeros((self.dim, self.dim))

    def slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])

    def place(self, out: np.ndarray, i: int, j: int, block, symmetric: bool = True) -> None:
        """Add ``block`` at block position (i, j); mirror its transpose if asked."""
        if not (0 <= i < len(self) and 0 <= j < len(self)):
            raise IndexError(f"block ({i}, {j}) outside a {len(self)}-block layout")
        block = np.asarray(block, dtype=float)
        if np.ndim(block) == 0:
            block = block * np.eye(self.sizes[i])
        if block.shape != (self.sizes[i], self.sizes[j]):
            raise ValueError(
                f"block ({i}, {j}) has shape {block.shape}, layout expects "
                f"{(self.sizes[i], self.sizes[j])}")
        out[self.slice(i), self.slice(j)] += block
        if symmetric and i != j:
            out[self.slice(j), self.slice(i)] += block.T

    def block(self, m: np.ndarray, i: int, j: int) -> np.ndarray:
        return m[self.slice(i), self.slice(j)]
