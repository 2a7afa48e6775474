"""Curved and normal subspaces, universal perturbation sampling and fooling rates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import PerturbationRecord, attack_dataset, minimal_perturbation
from .model import Classifier, hvp_batch, logit_gradients, predict
from .spectral import EigenResult, Subspace, SymmetricOperator, sample_unit, top_eigenpairs

SOURCES = ("random_in_Sc", "random_in_Sf", "isotropic", "greedy", "file")
MODES = ("vector", "direction")


class UniversalError(ValueError):
    pass


class UnreachableError(UniversalError):
    def __init__(self, message, achieved_rate):
        super().__init__(message)
        self.achieved_rate = achieved_rate


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass
class UniversalCandidate:
    v: np.ndarray
    norm: float
    source: str
    seed: int | None = None

    @classmethod
    def of(cls, v, source, seed=None) -> "UniversalCandidate":
        v = np.asarray(v, dtype=np.float64)
        return cls(v, float(np.linalg.norm(v)), source, seed)

    def to_json(self) -> dict:
        return {"v": self.v.tolist(), "norm": self.norm, "source": self.source, "seed": self.seed}

    @classmethod
    def from_json(cls, obj) -> "UniversalCandidate":
        return cls(np.asarray(obj["v"], dtype=np.float64), float(obj["norm"]), obj["source"], obj.get("seed"))


@dataclass
class FoolingResult:
    candidate: UniversalCandidate
    mode: str
    n_evaluated: int
    n_fooled: int

    @property
    def rate(self) -> float:
        return self.n_fooled / self.n_evaluated

    def to_json(self, include_vector: bool = True) -> dict:
        cand = self.candidate.to_json()
        if not include_vector:
            cand.pop("v")
        return {
            "candidate": cand,
            "mode": self.mode,
            "n_evaluated": self.n_evaluated,
            "n_fooled": self.n_fooled,
            "rate": self.rate,
        }


# -- subspaces ------------------------------------------------------------------

@dataclass
class CurvatureSubspace:
    subspace: Subspace
    eigen: EigenResult
    n_used: int
    n_skipped: int


def _as_records(clf, points_or_records, threads=1):
    if isinstance(points_or_records, np.ndarray):
        return attack_dataset(clf, points_or_records, threads=threads)
    return list(points_or_records)


def averaged_projected_hessian(clf: Classifier, records) -> SymmetricOperator:
    """Matrix-free ``u -> mean_i P_i H_i P_i u / ||grad F_i(z_i)||`` over the records."""
    Z = np.stack([rec.z for rec in records])
    seeds = np.stack([rec.boundary_function(clf).seed for rec in records])
    G = logit_gradients(clf, Z, seeds)
    gnorm = np.linalg.norm(G, axis=1)
    N = G / gnorm[:, None]

    def apply_block(U):
        V = np.broadcast_to(U.T, (len(Z),) + U.T.shape)  # (n, k, d)
        PV = V - np.einsum("nkd,nd->nk", V, N)[..., None] * N[:, None, :]
        HPV = hvp_batch(clf, seeds, Z, PV)
        PHPV = HPV - np.einsum("nkd,nd->nk", HPV, N)[..., None] * N[:, None, :]
        return (PHPV / gnorm[:, None, None]).mean(axis=0).T

    return SymmetricOperator(clf.input_dim, apply_block)


def build_curvature_subspace(
    clf: Classifier, points_or_records, m: int, tol: float = 1e-6, max_iter: int = 500, rng=None, threads: int = 1
) -> CurvatureSubspace:
    """Span of the top-m most positive eigenvectors of the averaged projected Hessian."""
    records = _as_records(clf, points_or_records, threads)
    used = [rec for rec in records if rec.converged]
    if not used:
        raise UniversalError("no converged minimal perturbations to build the subspace from")
    if not 1 <= m <= clf.input_dim:
        raise UniversalError(f"need 1 <= m <= d, got m={m}")
    op = averaged_projected_hessian(clf, used)
    eig = top_eigenpairs(op, m, "most_positive", tol=tol, max_iter=max_iter, rng=rng)
    return CurvatureSubspace(eig.subspace, eig, len(used), len(records) - len(used))


def build_normal_subspace(records, m: int, rank_tol: float = 1e-8) -> Subspace:
    """Top-m left singular vectors of the matrix of normalized r(x_i).

    If the normals span fewer than m dimensions (singular values below
    ``rank_tol`` times the largest), only the rank-many columns are returned
    and a RankDeficiencyWarning is emitted.
    """
    R = np.stack([rec.r / np.linalg.norm(rec.r) for rec in records if rec.converged], axis=1)
    if R.shape[1] < m:
        raise UniversalError(f"need at least m={m} converged records, got {R.shape[1]}")
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0]))
    k = min(m, rank)
    if k < m:
        warnings.warn(f"normals have rank {rank} < m={m}; returning {k} columns", RankDeficiencyWarning, stacklevel=2)
    return Subspace(U[:, :k])


# -- sampling and evaluation -----------------------------------------------------

def _rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng, None
    return np.random.default_rng(seed_or_rng), seed_or_rng


def sample_universal(S: Subspace, target_norm: float, rng, source: str = "random_in_Sc") -> UniversalCandidate:
    if not target_norm > 0:
        raise UniversalError("target_norm must be positive")
    gen, seed = _rng(rng)
    return UniversalCandidate.of(target_norm * sample_unit(S, gen), source, seed)


def isotropic_candidate(d: int, target_norm: float, rng) -> UniversalCandidate:
    gen, seed = _rng(rng)
    g = gen.standard_normal(d)
    return UniversalCandidate.of(target_norm * g / np.linalg.norm(g), "isotropic", seed)


def _fooled(clf, X, v, mode, base=None):
    base = predict(clf, X) if base is None else base
    fooled = predict(clf, X + v) != base
    if mode == "direction":
        fooled |= predict(clf, X - v) != base
    return fooled


def fooling_rate(clf: Classifier, X, candidate: UniversalCandidate, mode: str = "vector") -> FoolingResult:
    """Share of points whose label changes under ``x + v`` (or ``x +/- v`` in direction mode)."""
    if mode not in MODES:
        raise UniversalError(f"unknown mode {mode!r}")
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise UniversalError("dataset is empty")
    fooled = _fooled(clf, X, candidate.v, mode)
    return FoolingResult(candidate, mode, len(X), int(fooled.sum()))


def _noise_rate(clf, X, base, directions, norm):
    rates = [np.mean(predict(clf, X + norm * u) != base) for u in directions]
    return float(np.median(rates))


def random_noise_fooling_norm(
    clf: Classifier,
    X,
    target_rate: float,
    rng,
    n_directions: int = 20,
    bounds=(1e-3, 1e4),
    rel_tol: float = 1e-4,
) -> float:
    """Smallest noise norm whose median vector-mode fooling rate reaches ``target_rate``.

    Each of the ``n_directions`` draws is one isotropic unit vector shared by
    all points; the directions are fixed up front so the rate is a
    deterministic function of the norm.  The norm is found by bisection on
    a log scale over ``bounds``.
    """
    if not 0 < target_rate < 1:
        raise UniversalError("target_rate must lie strictly between 0 and 1")
    X = np.asarray(X, dtype=np.float64)
    gen, _ = _rng(rng)
    U = gen.standard_normal((n_directions, X.shape[1]))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    base = predict(clf, X)

    lo, hi = bounds
    rate_hi = _noise_rate(clf, X, base, U, hi)
    if rate_hi < target_rate:
        raise UnreachableError(
            f"median fooling rate {rate_hi:.4f} at norm {hi:g} is below target {target_rate}", rate_hi
        )
    if _noise_rate(clf, X, base, U, lo) >= target_rate:
        return lo
    while hi / lo > 1.0 + rel_tol:
        mid = np.sqrt(lo * hi)
        if _noise_rate(clf, X, base, U, mid) >= target_rate:
            hi = mid
        else:
            lo = mid
    return float(hi)


def greedy_universal(
    clf: Classifier, X, xi: float, max_passes: int = 10, rng=None, mode: str = "vector", max_iter: int = 50
) -> UniversalCandidate:
    """Baseline: greedy accumulation of per-point minimal perturbations.

    A reconstruction of the classic universal perturbation procedure: walk
    the shuffled data, add the minimal perturbation of every point that ``v``
    does not fool yet, and project ``v`` back onto the xi-ball.  Stops when a
    pass moves the fooling rate by less than 1 percentage point.
    """
    if not xi > 0:
        raise UniversalError("xi must be positive")
    X = np.asarray(X, dtype=np.float64)
    gen, seed = _rng(rng)
    base = predict(clf, X)
    v = np.zeros(X.shape[1])
    best_v, best_rate = v.copy(), 0.0
    prev_rate = 0.0
    for _ in range(max_passes):
        for i in gen.permutation(len(X)):
            if predict(clf, X[i] + v) != base[i]:
                continue
            rec = minimal_perturbation(clf, X[i] + v, max_iter=max_iter, refine_iter=0)
            if not rec.converged:
                continue
            v = v + (1.0 + 0.02) * rec.r
            nv = np.linalg.norm(v)
            if nv > xi:
                v *= xi / nv
        rate = float(np.mean(_fooled(clf, X, v, mode, base)))
        if rate >= best_rate:
            best_v, best_rate = v.copy(), rate
        if abs(rate - prev_rate) < 0.01:
            break
        prev_rate = rate
    return UniversalCandidate.of(best_v, "greedy", seed)
