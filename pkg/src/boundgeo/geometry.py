"""Boundary-local geometry around datapoints.

The boundary function attached to a perturbation record is
``F = f_target - f_source``: it is negative at the datapoint, zero on the
boundary and grows toward the adversarial side.  With this orientation a
positive normal curvature means the boundary bends toward the datapoint
(its class region closes around it), which is the case where moving along
the tangent direction eventually crosses the boundary.  A point inside a
ball-shaped class region of radius R sees curvature ``+1/R``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Classifier, PairFunction, hvp_batch, logit_gradients, logits, pair_gradient, predict
from .spectral import Subspace, sample_unit

OVERSHOOT = 0.02
MAX_ITER = 50
MIN_ANGLE = 1e-6


class GeometryError(ValueError):
    pass


class BoundaryError(GeometryError):
    pass


class DegenerateFrameError(GeometryError):
    pass


class DegenerateDirectionError(GeometryError):
    pass


@dataclass
class PerturbationRecord:
    x: np.ndarray
    r: np.ndarray
    z: np.ndarray
    source_class: int
    target_class: int
    iterations: int
    residual: float
    converged: bool
    index: int = -1

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.r))

    def boundary_function(self, clf: Classifier) -> PairFunction:
        return PairFunction(clf, self.target_class, self.source_class)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "x": self.x.tolist(),
            "r": self.r.tolist(),
            "z": self.z.tolist(),
            "source_class": self.source_class,
            "target_class": self.target_class,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PerturbationRecord":
        return cls(
            x=np.asarray(obj["x"], dtype=np.float64),
            r=np.asarray(obj["r"], dtype=np.float64),
            z=np.asarray(obj["z"], dtype=np.float64),
            source_class=int(obj["source_class"]),
            target_class=int(obj["target_class"]),
            iterations=int(obj["iterations"]),
            residual=float(obj["residual"]),
            converged=bool(obj["converged"]),
            index=int(obj.get("index", -1)),
        )


def boundary_project(pf: PairFunction, a, b, tol: float, max_iter: int = 200) -> np.ndarray:
    """Point z on the segment [a, b] with ``|F(z)| <= tol``.

    Plain bisection until the tolerance is met, followed by a few
    false-position steps inside the final bracket, which land on the exact
    root whenever F is affine along the segment.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    fa, fb = float(pf.value(a)), float(pf.value(b))
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise BoundaryError(f"endpoints have the same sign (F(a)={fa:.6g}, F(b)={fb:.6g})")

    lo, hi, flo = 0.0, 1.0, fa
    t, ft = 0.5, None
    for _ in range(max_iter):
        t = 0.5 * (lo + hi)
        ft = float(pf.value(a + t * (b - a)))
        if abs(ft) <= tol or ft == 0.0:
            break
        if np.sign(ft) == np.sign(flo):
            lo, flo = t, ft
        else:
            hi = t

    best_t, best_f = t, ft
    fhi = float(pf.value(a + hi * (b - a))) if hi != t else ft
    for _ in range(3):
        if flo == fhi:
            break
        s = lo + (hi - lo) * flo / (flo - fhi)
        if not lo < s < hi:
            break
        fs = float(pf.value(a + s * (b - a)))
        if abs(fs) < abs(best_f):
            best_t, best_f = s, fs
        if fs == 0.0:
            break
        if np.sign(fs) == np.sign(flo):
            lo, flo = s, fs
        else:
            hi, fhi = s, fs
    if abs(best_f) > tol:
        raise BoundaryError(f"bisection stopped at |F| = {abs(best_f):.3g} > tol = {tol:.3g}")
    return a + best_t * (b - a)


def _first_flip(clf, x, y, source, n_scan):
    """Bracket ``(t0, t1)`` around the first label change on the segment [x, y]."""
    # uniform grid plus a geometric one, so long segments still resolve crossings near x
    ts = np.union1d(np.linspace(0.0, 1.0, n_scan + 1)[1:], np.geomspace(1e-3, 1.0, n_scan))
    labels = predict(clf, x + ts[:, None] * (y - x))
    hit = np.nonzero(labels != source)[0]
    if hit.size == 0:
        return None
    k = int(hit[0])
    return (ts[k - 1] if k > 0 else 0.0), ts[k], int(labels[k])


def _boundary_on_segment(clf, x, y, source, tol, n_scan=32):
    """First boundary point on [x, y] as ``(z, target)``, or None."""
    found = _first_flip(clf, x, y, source, n_scan)
    if found is None:
        return None
    t0, t1, target = found
    pf = PairFunction(clf, source, target)
    a, b = x + t0 * (y - x), x + t1 * (y - x)
    try:
        return boundary_project(pf, a, b, tol), target
    except BoundaryError:
        return None


def minimal_perturbation(
    clf: Classifier,
    x,
    max_iter: int = MAX_ITER,
    tol: float | None = None,
    overshoot: float = OVERSHOOT,
    refine_iter: int = 20,
) -> PerturbationRecord:
    """Smallest label-changing perturbation by iterative linearization.

    Each step linearizes every margin ``f_k - f_source`` and moves to the
    nearest linearized boundary; once ``x + (1 + overshoot) r`` changes label,
    the first label change on that segment is located and refined by
    bisection.  The ray direction is then turned toward the boundary normal
    at the hit point, with backtracking, for as long as the first boundary
    crossing along the ray moves closer to x.  Rays along each margin
    gradient at x serve as extra starting points when they hit closer.
    """
    if max_iter < 1:
        raise GeometryError("max_iter must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    L = clf.num_classes
    source = predict(clf, x)
    others = np.array([k for k in range(L) if k != source])
    seeds = np.zeros((L - 1, L))
    seeds[np.arange(L - 1), others] = 1.0
    seeds[:, source] = -1.0

    r_tot = np.zeros_like(x)
    y = x
    flipped = False
    it = 0
    for it in range(1, max_iter + 1):
        f = logits(clf, y)
        W = logit_gradients(clf, np.repeat(y[None], L - 1, axis=0), seeds)
        gaps = f[others] - f[source]
        wnorm = np.linalg.norm(W, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.where(wnorm > 0, np.abs(gaps) / wnorm, np.inf)
        best = int(np.argmin(dist))
        if not np.isfinite(dist[best]):
            break
        r_tot = r_tot + (np.abs(gaps[best]) / wnorm[best] ** 2) * W[best]
        y = x + (1.0 + overshoot) * r_tot
        if predict(clf, y) != source:
            flipped = True
            break

    fail = PerturbationRecord(x, r_tot, x + r_tot, source, int(others[0]), it, np.inf, False)
    if not flipped:
        return fail
    if tol is None:
        tol = 1e-6 * (1.0 + abs(float(logits(clf, x)[others].max() - logits(clf, x)[source])))
    found = _boundary_on_segment(clf, x, y, source, tol)
    if found is None:
        return fail
    z, target = found

    def refine(z, target):
        # turn the ray toward the boundary normal at the hit while that shortens r
        dist = np.linalg.norm(z - x)
        u = (z - x) / dist
        for _ in range(refine_iter):
            g = pair_gradient(PairFunction(clf, target, source), z)
            gn = np.linalg.norm(g)
            if gn == 0 or g @ u >= gn * (1.0 - 1e-12):
                break
            g = g / gn
            for lam in (1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125):
                w = (1.0 - lam) * u + lam * g
                w /= np.linalg.norm(w)
                cand = _boundary_on_segment(clf, x, x + dist * w, source, tol)
                if cand is not None and np.linalg.norm(cand[0] - x) < dist * (1.0 - 1e-12):
                    z, target = cand
                    dist = np.linalg.norm(z - x)
                    u = (z - x) / dist
                    break
            else:
                break
        return z, target

    if refine_iter > 0:
        z, target = refine(z, target)
    # other starts: rays along each margin gradient at x, kept only if they hit closer
    G0 = logit_gradients(clf, np.repeat(x[None], L - 1, axis=0), seeds)
    f0 = logits(clf, x)
    for k, g in zip(others, G0 if refine_iter > 0 else ()):
        gn = np.linalg.norm(g)
        if gn == 0:
            continue
        dist = np.linalg.norm(z - x)
        guess = (f0[source] - f0[k]) / gn
        for reach in sorted({min(dist, 4.0 * guess), dist}):
            cand = _boundary_on_segment(clf, x, x + reach * g / gn, source, tol)
            if cand is not None and np.linalg.norm(cand[0] - x) < dist * (1.0 - 1e-12):
                z, target = refine(*cand)
                break

    r = z - x
    pf = PairFunction(clf, source, target)
    residual = abs(float(pf.value(z)))
    ok = residual <= tol and predict(clf, x + (1.0 + overshoot) * r) != source
    return PerturbationRecord(x, r, z, source, target, it, residual, bool(ok))


def attack_dataset(clf: Classifier, X, threads: int = 1, **kw) -> list[PerturbationRecord]:
    X = np.asarray(X, dtype=np.float64)

    def run(i):
        rec = minimal_perturbation(clf, X[i], **kw)
        rec.index = i
        return rec

    if threads <= 1:
        return [run(i) for i in range(len(X))]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(run, range(len(X))))


# -- normal sections ------------------------------------------------------------

@dataclass
class NormalSectionFrame:
    basis: np.ndarray  # d x 2, columns r/||r|| and the orthogonalized direction
    alpha: float
    h2: np.ndarray
    raw_h2: np.ndarray = field(repr=False)


def _require_converged(record):
    if not record.converged:
        raise GeometryError("perturbation record did not converge")


def _section_basis(record, v):
    v = np.asarray(v, dtype=np.float64)
    e1 = record.r / np.linalg.norm(record.r)
    w = v - (v @ e1) * e1
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0 or nw < np.sin(MIN_ANGLE) * nv:
        raise DegenerateFrameError("direction is parallel to the normal r(x)")
    return np.column_stack([e1, w / nw])


def normal_section_frame(clf: Classifier, record: PerturbationRecord, v) -> NormalSectionFrame:
    _require_converged(record)
    Pi = _section_basis(record, v)
    F = record.boundary_function(clf)
    HPi = hvp_batch(clf, F.seed[None], record.z[None], Pi.T[None])[0]  # rows: H e1, H e2
    M = Pi.T @ HPi.T
    alpha = np.linalg.norm(pair_gradient(F, record.z)) / np.linalg.norm(record.r)
    return NormalSectionFrame(Pi, float(alpha), 0.5 * (M + M.T), M)


def _tangent_curvatures(clf, records, V):
    """Normal curvatures for directions V (n, k, d) at the records' boundary points."""
    Z = np.stack([rec.z for rec in records])
    seeds = np.stack([rec.boundary_function(clf).seed for rec in records])
    G = logit_gradients(clf, Z, seeds)
    gnorm = np.linalg.norm(G, axis=1)
    N = G / gnorm[:, None]
    PV = V - np.einsum("nkd,nd->nk", V, N)[..., None] * N[:, None, :]
    pnorm2 = np.einsum("nkd,nkd->nk", PV, PV)
    HPV = hvp_batch(clf, seeds, Z, PV)
    quad = np.einsum("nkd,nkd->nk", PV, HPV)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = quad / (pnorm2 * gnorm[:, None])
    return kappa, np.sqrt(pnorm2)


def normal_curvature(clf: Classifier, record: PerturbationRecord, v) -> float:
    """Curvature of the boundary at z in the normal section containing v.

    ``(Pv)^T H (Pv) / (||Pv||^2 ||grad F(z)||)`` with P the tangent-plane
    projector at z.
    """
    _require_converged(record)
    v = np.asarray(v, dtype=np.float64)
    kappa, pnorm = _tangent_curvatures(clf, [record], v[None, None, :])
    if pnorm[0, 0] < 1e-12:
        raise DegenerateDirectionError("direction has no tangential component")
    return float(kappa[0, 0])


@dataclass
class CurvatureReport:
    point_index: int
    samples: np.ndarray
    mean: float
    std: float
    count: int

    def to_json(self) -> dict:
        return {
            "point_index": self.point_index,
            "samples": self.samples.tolist(),
            "mean": self.mean,
            "std": self.std,
            "count": self.count,
        }


def curvature_profile(
    clf: Classifier, records, S: Subspace, K: int, rng, max_resample: int = 10
) -> list[CurvatureReport]:
    """Subspace-averaged curvature for several records, batched through the model."""
    if K < 1:
        raise GeometryError("K must be >= 1")
    records = list(records)
    for rec in records:
        _require_converged(rec)
    V = sample_unit(S, rng, size=len(records) * K).reshape(len(records), K, -1)
    kappa, pnorm = _tangent_curvatures(clf, records, V)
    for _ in range(max_resample):
        bad = pnorm < 1e-12
        if not bad.any():
            break
        rows = np.nonzero(bad.any(axis=1))[0]
        for i in rows:
            cols = np.nonzero(bad[i])[0]
            Vi = sample_unit(S, rng, size=len(cols))[None]
            k_i, p_i = _tangent_curvatures(clf, [records[i]], Vi)
            kappa[i, cols], pnorm[i, cols] = k_i[0], p_i[0]
    else:
        if (pnorm < 1e-12).any():
            raise DegenerateDirectionError("could not draw a direction with a tangential component")
    return [
        CurvatureReport(rec.index, kappa[i].copy(), float(kappa[i].mean()), float(kappa[i].std()), K)
        for i, rec in enumerate(records)
    ]


def avg_subspace_curvature(clf: Classifier, record: PerturbationRecord, S: Subspace, K: int, rng) -> CurvatureReport:
    return curvature_profile(clf, [record], S, K, rng)[0]


# -- cross sections -------------------------------------------------------------

@dataclass
class CrossSection:
    a: np.ndarray  # offsets along r/||r||
    b: np.ndarray  # offsets along the orthogonalized direction
    labels: np.ndarray  # (len(a), len(b))
    boundary: np.ndarray  # (k, 2) points (a, b) where F = 0
    basis: np.ndarray

    def write_csv(self, path_grid, path_boundary=None) -> None:
        with open(path_grid, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "label"])
            for i, a in enumerate(self.a):
                for j, b in enumerate(self.b):
                    w.writerow([repr(float(a)), repr(float(b)), int(self.labels[i, j])])
        if path_boundary is not None:
            with open(path_boundary, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["a", "b"])
                for a, b in self.boundary:
                    w.writerow([repr(float(a)), repr(float(b))])


def cross_section_map(
    clf: Classifier, record: PerturbationRecord, v, extent=(2.0, 2.0), resolution=(41, 41)
) -> CrossSection:
    """Label map of the plane ``x + a r_hat + b v_hat`` and the zero level of F inside it."""
    _require_converged(record)
    n_r, n_v = resolution
    if n_r < 2 or n_v < 2:
        raise GeometryError("resolution must be at least 2 x 2")
    Pi = _section_basis(record, v)
    a = np.linspace(-extent[0], extent[0], n_r)
    b = np.linspace(-extent[1], extent[1], n_v)
    A, B = np.meshgrid(a, b, indexing="ij")
    pts = record.x + A.reshape(-1, 1) * Pi[:, 0] + B.reshape(-1, 1) * Pi[:, 1]
    labels = predict(clf, pts).reshape(n_r, n_v)
    F = record.boundary_function(clf)
    vals = F.value(pts).reshape(n_r, n_v)
    scale = 1e-10 * (1.0 + np.abs(vals).max())

    def point(ab):
        return record.x + ab[0] * Pi[:, 0] + ab[1] * Pi[:, 1]

    crossings = []
    for i in range(n_r):
        for j in range(n_v):
            for di, dj in ((1, 0), (0, 1)):
                k, l = i + di, j + dj
                if k >= n_r or l >= n_v:
                    continue
                if np.sign(vals[i, j]) * np.sign(vals[k, l]) < 0:
                    p0, p1 = np.array([a[i], b[j]]), np.array([a[k], b[l]])
                    zp = boundary_project(F, point(p0), point(p1), scale)
                    crossings.append(Pi.T @ (zp - record.x))
    boundary = np.array(crossings).reshape(-1, 2)
    return CrossSection(a, b, labels, boundary, Pi)
