"""Orthonormal subspaces, a matrix-free symmetric eigensolver and principal angles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Subspace:
    """Span of the orthonormal columns of ``basis`` (d x m)."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.array(self.basis, dtype=np.float64)
        if B.ndim == 1:
            B = B[:, None]
        if B.ndim != 2 or not 1 <= B.shape[1] <= B.shape[0]:
            raise SpectralError(f"basis must be d x m with 1 <= m <= d, got {B.shape}")
        err = np.abs(B.T @ B - np.eye(B.shape[1])).max()
        if err > 1e-10:
            raise SpectralError(f"basis columns are not orthonormal (max error {err:.3g})")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @classmethod
    def from_vectors(cls, V) -> "Subspace":
        """Orthonormalize the columns of V (assumed full column rank)."""
        Q, _ = np.linalg.qr(np.asarray(V, dtype=np.float64))
        return cls(Q)

    @classmethod
    def random(cls, d: int, m: int, rng) -> "Subspace":
        return cls.from_vectors(rng.standard_normal((d, m)))

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def truncate(self, m: int) -> "Subspace":
        return Subspace(self.basis[:, :m])


def project(S: Subspace, x) -> np.ndarray:
    """``P_S x`` for a vector (d,) or a batch of row vectors (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != S.ambient_dim:
        raise SpectralError(f"vector dimension {x.shape[-1]} != subspace ambient dimension {S.ambient_dim}")
    return (x @ S.basis) @ S.basis.T


def sample_unit(S: Subspace, rng, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) from the unit sphere of S."""
    g = rng.standard_normal(S.dim if size is None else (size, S.dim))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    v = g @ S.basis.T
    # re-normalize: the basis is orthonormal only to ~1e-15
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# -- symmetric operators --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SymmetricOperator:
    """Matrix-free symmetric linear map.

    ``apply_block`` maps a (d, k) block of column vectors to its image.  The
    constructor checks symmetry on 5 random vector pairs.
    """

    dim: int
    apply_block: Callable[[np.ndarray], np.ndarray]
    check_rng: np.random.Generator | None = field(default=None, repr=False)
    symmetry_tol: float = 1e-6

    def __post_init__(self):
        rng = self.check_rng if self.check_rng is not None else np.random.default_rng(0)
        U = rng.standard_normal((self.dim, 5))
        V = rng.standard_normal((self.dim, 5))
        AU, AV = self(U), self(V)
        lhs = np.einsum("ij,ij->j", U, AV)
        rhs = np.einsum("ij,ij->j", V, AU)
        scale = np.linalg.norm(U, axis=0) * np.linalg.norm(AV, axis=0) + np.linalg.norm(V, axis=0) * np.linalg.norm(AU, axis=0)
        if np.any(np.abs(lhs - rhs) > self.symmetry_tol * np.maximum(scale, 1e-300)):
            raise SpectralError("operator failed the symmetry check")

    @classmethod
    def from_matrix(cls, A) -> "SymmetricOperator":
        A = np.asarray(A, dtype=np.float64)
        return cls(A.shape[0], lambda U: A @ U)

    def __call__(self, U):
        U = np.asarray(U, dtype=np.float64)
        if U.ndim == 1:
            return self.apply_block(U[:, None])[:, 0]
        return self.apply_block(U)


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    subspace: Subspace
    residuals: np.ndarray
    iterations: int
    converged: bool
    shift: float

    def to_json(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "residuals": self.residuals.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "shift": self.shift,
            "dim": self.subspace.dim,
            "ambient_dim": self.subspace.ambient_dim,
        }


def _norm_estimate(op: SymmetricOperator, rng, steps: int = 20) -> float:
    v = rng.standard_normal(op.dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(steps):
        w = op(v)
        nw = np.linalg.norm(w)
        est = max(est, nw)
        if nw == 0:
            break
        v = w / nw
    return est


def top_eigenpairs(
    op: SymmetricOperator,
    m: int,
    mode: str = "most_positive",
    tol: float = 1e-9,
    max_iter: int = 5000,
    rng=None,
    extra: int = 5,
) -> EigenResult:
    """Leading eigenpairs of a symmetric operator by block power iteration.

    ``most_positive`` returns the algebraically largest eigenvalues: the
    iteration runs on ``A + cI`` where ``c`` estimates ``||A||``.
    ``largest_magnitude`` iterates on ``A`` itself.  Each step applies the
    operator to a block of ``m + extra`` vectors, re-orthonormalizes, and
    performs a Rayleigh-Ritz projection.  Iteration stops once the top-m
    Ritz values move by at most ``tol * (|lambda| + c)`` between steps and
    every residual ``||A q - lambda q||`` is below the same bound.  A result
    that runs out of iterations is returned with ``converged=False``.
    """
    d = op.dim
    if not 1 <= m <= d:
        raise SpectralError(f"need 1 <= m <= d, got m={m}, d={d}")
    if mode not in ("most_positive", "largest_magnitude"):
        raise SpectralError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    p = min(d, m + extra)

    norm_est = _norm_estimate(op, rng)
    scale = norm_est if norm_est > 0 else 1.0
    shift = (1.05 * scale) if mode == "most_positive" else 0.0

    Q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    prev = None
    theta = np.zeros(p)
    resid = np.full(m, np.inf)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        AQ = op(Q)
        T = Q.T @ AQ
        T = 0.5 * (T + T.T)
        theta, Y = np.linalg.eigh(T)
        order = np.argsort(theta)[::-1] if mode == "most_positive" else np.argsort(np.abs(theta))[::-1]
        theta, Y = theta[order], Y[:, order]
        Q = Q @ Y
        AQ = AQ @ Y
        resid = np.linalg.norm(AQ[:, :m] - Q[:, :m] * theta[:m], axis=0)
        bound = tol * (np.abs(theta[:m]) + max(shift, scale))
        if prev is not None and np.all(np.abs(theta[:m] - prev) <= bound) and np.all(resid <= bound):
            converged = True
            break
        prev = theta[:m].copy()
        Q, _ = np.linalg.qr(AQ + shift * Q)
    basis, _ = np.linalg.qr(Q[:, :m])
    basis *= np.sign(np.sum(basis * Q[:, :m], axis=0))
    return EigenResult(theta[:m].copy(), Subspace(basis), resid, it, converged, shift)


# -- principal angles -----------------------------------------------------------

def jacobi_singular_values(M, tol: float = 1e-15, max_sweeps: int = 60) -> np.ndarray:
    """Singular values of a small matrix by one-sided (Hestenes) Jacobi, descending."""
    A = np.array(M, dtype=np.float64)
    if A.shape[0] < A.shape[1]:
        A = A.T
    n = A.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = A[:, i] @ A[:, i]
                b = A[:, j] @ A[:, j]
                c = A[:, i] @ A[:, j]
                if abs(c) <= tol * np.sqrt(a * b) or c == 0.0:
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * c)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                ai = A[:, i].copy()
                A[:, i] = cs * ai - sn * A[:, j]
                A[:, j] = sn * ai + cs * A[:, j]
        if not rotated:
            break
    return np.sort(np.linalg.norm(A, axis=0))[::-1]


def principal_angles(S1: Subspace, S2: Subspace) -> np.ndarray:
    """Cosines of the principal angles between two subspaces, descending."""
    if S1.ambient_dim != S2.ambient_dim:
        raise SpectralError(f"ambient dimensions differ: {S1.ambient_dim} vs {S2.ambient_dim}")
    cos = jacobi_singular_values(S1.basis.T @ S2.basis)
    return np.clip(cos[: min(S1.dim, S2.dim)], 0.0, 1.0)
