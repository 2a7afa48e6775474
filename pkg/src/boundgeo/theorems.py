"""Monte Carlo checks of the flat- and curved-boundary robustness bounds.

Each check builds a world that satisfies the corresponding boundary model
exactly, draws perturbations uniformly from a sphere of the predicted
radius inside a subspace, and compares the mean fooled fraction with the
guaranteed bound.  A verdict passes when the empirical rate is at least
the bound minus two binomial standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Classifier, linear_classifier, predict, sphere_classifier
from .spectral import Subspace, sample_unit


@dataclass
class TheoremReport:
    theorem: str
    inputs: dict
    predicted_rho: float | None
    empirical_success_rate: float
    standard_error: float
    bound: float
    trials: int
    seed: int
    verdict: bool
    per_trial: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "theorem": self.theorem,
            "inputs": self.inputs,
            "predicted_rho": self.predicted_rho,
            "empirical_success_rate": self.empirical_success_rate,
            "standard_error": self.standard_error,
            "bound": self.bound,
            "trials": self.trials,
            "seed": self.seed,
            "verdict": "pass" if self.verdict else "fail",
            "per_trial": self.per_trial,
        }

    def summary_row(self) -> str:
        rho = "-" if self.predicted_rho is None else f"{self.predicted_rho:.4f}"
        return (
            f"{self.theorem:<7} rho={rho:>9}  rate={self.empirical_success_rate:.4f}  "
            f"bound={self.bound:.4f}  2SE={2 * self.standard_error:.4f}  "
            f"{'PASS' if self.verdict else 'FAIL'}"
        )


def _streams(seed: int, n: int):
    """One generator for setup plus one per trial, all derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n + 1)
    return np.random.default_rng(children[0]), [np.random.default_rng(c) for c in children[1:]]


def _report(theorem, inputs, rho, rates, n_per_trial, bound, trials, seed):
    rate = float(np.mean(rates))
    se = math.sqrt(max(rate * (1.0 - rate), 0.0) / (len(rates) * n_per_trial))
    verdict = rate >= bound - 2.0 * se
    return TheoremReport(theorem, inputs, rho, rate, se, bound, trials, seed, bool(verdict), [float(r) for r in rates])


# -- concentration lemma ---------------------------------------------------------

def lemma1_betas(delta: float, m: int) -> tuple[float, float]:
    """Lower and upper factors bounding ``||P_m v||^2`` around ``m/d``."""
    q = delta ** (2.0 / m)
    beta1 = max(q / math.e, 1.0 - math.sqrt(2.0 * (1.0 - q)))
    log_term = math.log(1.0 / delta)
    beta2 = 1.0 + 2.0 * math.sqrt(log_term / m) + 2.0 * log_term / m
    return beta1, beta2


def validate_lemma1(d: int, m: int, delta: float, trials: int, seed: int = 0, chunk: int = 2000) -> TheoremReport:
    """Coverage of ``[beta1 m/d, beta2 m/d]`` by ``||P_m v||^2`` for v uniform on the sphere."""
    if not 1 <= m <= d:
        raise ValueError(f"need 1 <= m <= d, got m={m}, d={d}")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    beta1, beta2 = lemma1_betas(delta, m)
    lo, hi = beta1 * m / d, beta2 * m / d
    inside = 0
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        g = rng.standard_normal((k, d))
        v = g / np.linalg.norm(g, axis=1, keepdims=True)
        proj = np.sum(v[:, :m] ** 2, axis=1)
        inside += int(np.sum((proj >= lo) & (proj <= hi)))
        done += k
    coverage = inside / trials
    se = math.sqrt(coverage * (1.0 - coverage) / trials)
    bound = 1.0 - 2.0 * delta
    inputs = {"d": d, "m": m, "delta": delta, "beta1": beta1, "beta2": beta2}
    return TheoremReport("lemma1", inputs, None, coverage, se, bound, trials, seed, coverage >= bound - 2.0 * se)


# -- flat boundary model -----------------------------------------------------------

def theorem1_rho(m: int, delta: float, xi: float = 0.0) -> float:
    return math.sqrt(math.e * m) / (delta * (1.0 - xi))


@dataclass
class LinearWorld:
    clf: Classifier
    points: np.ndarray
    normals: Subspace  # span of all pairwise normals w_i - w_j


def make_linear_world(L: int, d: int, n_points: int, rng) -> LinearWorld:
    """Random multiclass linear classifier (no bias) with datapoints at unit boundary distance.

    Without a bias every margin is homogeneous, so rescaling a point keeps
    its class and scales its boundary distance; each point is rescaled so
    that distance is exactly 1.
    """
    if L < 2 or d <= L:
        raise ValueError("need L >= 2 and d > L")
    W = rng.standard_normal((d, L))
    clf = linear_classifier(W)
    Y = rng.standard_normal((n_points, d))
    f = Y @ W
    cls = np.argmax(f, axis=1)
    dist = np.full((n_points, L), np.inf)
    for j in range(L):
        diff = W[:, cls] - W[:, [j]]
        nrm = np.linalg.norm(diff, axis=0)
        gap = f[np.arange(n_points), cls] - f[:, j]
        dist[:, j] = np.where(cls == j, np.inf, gap / np.where(nrm > 0, nrm, 1.0))
    X = Y / dist.min(axis=1, keepdims=True)
    normals = Subspace.from_vectors(W[:, :-1] - W[:, [-1]])
    return LinearWorld(clf, X, normals)


def validate_theorem1(
    L: int, d: int, delta: float, xi: float = 0.0, n_points: int = 500, trials: int = 50,
    seed: int = 0, rho_scale: float = 1.0,
) -> TheoremReport:
    """Fooled fraction of ``x +/- v`` with v uniform on the rho-sphere of the normal span."""
    if not 0 < delta < 1 or not 0 <= xi < 1:
        raise ValueError("need 0 < delta < 1 and 0 <= xi < 1")
    setup, trial_rngs = _streams(seed, trials)
    world = make_linear_world(L, d, n_points, setup)
    m = L - 1
    rho = theorem1_rho(m, delta, xi)
    X = world.points
    base = predict(world.clf, X)
    rates = []
    for rng in trial_rngs:
        v = rho_scale * rho * sample_unit(world.normals, rng)
        fooled = (predict(world.clf, X + v) != base) | (predict(world.clf, X - v) != base)
        rates.append(fooled.mean())
    inputs = {"L": L, "d": d, "m": m, "delta": delta, "xi": xi, "n_points": n_points, "rho_scale": rho_scale}
    return _report("thm1", inputs, rho, rates, n_points, 1.0 - delta, trials, seed)


# -- curved boundary model ---------------------------------------------------------

def theorem2_rho(kappa: float, m: int, delta: float) -> float:
    return math.sqrt(2.0 * math.log(2.0 / delta) / m) / kappa + kappa ** -0.5


@dataclass
class SphereWorld:
    """Datapoints whose own class region is a ball of radius 1/kappa.

    Point x sits inside its ball with center ``x + (1 - R) u_x``, so the
    closest boundary point is ``x + u_x`` and ``||r(x)|| = 1``.  Every normal
    section of the boundary is a circle of radius R, i.e. curvature kappa
    bending toward x; the fooled set is the complement of the closed ball.
    A ball can only keep x at distance 1 from its surface when R >= 1, so
    kappa is limited to (0, 1].
    """

    d: int
    kappa: float
    points: np.ndarray
    normals: np.ndarray

    @property
    def radius(self) -> float:
        return 1.0 / self.kappa

    @property
    def centers(self) -> np.ndarray:
        return self.points + (1.0 - self.radius) * self.normals


def make_sphere_world(d: int, kappa: float, n_points: int, rng) -> SphereWorld:
    if not 0 < kappa <= 1:
        raise ValueError(
            f"kappa={kappa} is infeasible: the boundary point closest to x cannot curve "
            "more than 1/||r(x)|| = 1 toward x"
        )
    X = rng.standard_normal((n_points, d))
    U = rng.standard_normal((n_points, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return SphereWorld(d, kappa, X, U)


def sphere_world_classifier(world: SphereWorld, index: int) -> Classifier:
    """Per-point oracle: class 0 (x's class) inside the ball, class 1 outside."""
    return sphere_classifier(world.centers[index], world.radius)


def validate_theorem2(
    world: SphereWorld, m: int, delta: float, trials: int = 50, seed: int = 0, rho_scale: float = 1.0
) -> TheoremReport:
    """Fooled fraction of ``x + v`` with v uniform on the rho-sphere of a random m-dim subspace."""
    if not 1 <= m <= world.d:
        raise ValueError(f"need 1 <= m <= d, got m={m}")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    setup, trial_rngs = _streams(seed, trials)
    S = Subspace.random(world.d, m, setup)
    rho = theorem2_rho(world.kappa, m, delta)
    clfs = [sphere_world_classifier(world, i) for i in range(len(world.points))]
    base = np.array([predict(c, x) for c, x in zip(clfs, world.points)])
    rates = []
    for rng in trial_rngs:
        v = rho_scale * rho * sample_unit(S, rng)
        moved = np.array([predict(c, x + v) for c, x in zip(clfs, world.points)])
        rates.append(np.mean(moved != base))
    inputs = {"kappa": world.kappa, "m": m, "d": world.d, "delta": delta, "n_points": len(world.points), "rho_scale": rho_scale}
    return _report("thm2", inputs, rho, rates, len(world.points), 1.0 - delta, trials, seed)


def run_theorem2(
    kappa: float, m: int, d: int, delta: float, n_points: int = 500, trials: int = 50, seed: int = 0,
    rho_scale: float = 1.0,
) -> TheoremReport:
    """Build a SphereWorld from ``seed`` and validate on it; the world uses its own stream."""
    world = make_sphere_world(d, kappa, n_points, np.random.default_rng([seed, 2]))
    return validate_theorem2(world, m, delta, trials, seed, rho_scale)
