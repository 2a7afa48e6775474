"""Acceptance checks, one printed PASS/FAIL line per criterion."""

import time

import numpy as np
import pytest

from boundgeo.data import DatasetConfig, gen_dataset
from boundgeo.geometry import attack_dataset, curvature_profile, minimal_perturbation, normal_curvature
from boundgeo.model import PairFunction, init_mlp, pair_gradient, pair_hvp, sphere_classifier
from boundgeo.spectral import Subspace, SymmetricOperator, principal_angles, top_eigenpairs
from boundgeo.theorems import run_theorem2, theorem1_rho, validate_lemma1, validate_theorem1
from boundgeo.training import ModelSpec, TrainConfig, train
from boundgeo.universal import (
    UnreachableError, build_curvature_subspace, build_normal_subspace, fooling_rate, isotropic_candidate,
    random_noise_fooling_norm, sample_universal,
)

from oracles import jacobi_eigh, largest_principal_sine, random_symmetric
from test_model import central_diff


def report(capsys, n, ok, detail, started, limit):
    elapsed = time.perf_counter() - started
    ok = bool(ok) and elapsed < limit
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.1f} s, limit {limit} s)")
    assert ok, detail


def test_criterion_01_gradients(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    clf = init_mlp([8, 16, 16, 3], rng)
    pf = PairFunction(clf, 1, 0)
    grad_err = sym_err = 0.0
    for x in rng.standard_normal((100, 8)):
        g = pair_gradient(pf, x)
        grad_err = max(grad_err, np.linalg.norm(g - central_diff(pf.value, x)) / np.linalg.norm(g))
        u, w = rng.standard_normal((2, 8))
        sym_err = max(sym_err, abs(w @ pair_hvp(pf, x, u) - u @ pair_hvp(pf, x, w)))
    report(capsys, 1, grad_err <= 1e-5 and sym_err <= 1e-6,
           f"gradient rel err {grad_err:.2e}, hvp symmetry err {sym_err:.2e}", t0, 10)


def test_criterion_02_sphere_curvature(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for R in (0.5, 1.0, 2.0):
        c = rng.standard_normal(6)
        u = rng.standard_normal(6)
        u /= np.linalg.norm(u)
        clf = sphere_classifier(c, R)
        rec = minimal_perturbation(clf, c + 0.5 * R * u)
        for v in rng.standard_normal((10, 6)):
            worst = max(worst, abs(normal_curvature(clf, rec, v) - 1.0 / R))
    report(capsys, 2, worst <= 1e-3, f"max |kappa - 1/R| {worst:.2e}", t0, 5)


def test_criterion_03_eigensolver(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    rel = sine = 0.0
    for _ in range(20):
        A = random_symmetric(rng, 50)
        w, V = jacobi_eigh(A)
        res = top_eigenpairs(SymmetricOperator.from_matrix(A), 5, rng=rng)
        rel = max(rel, np.max(np.abs(res.eigenvalues - w[:5]) / np.abs(w[:5])))
        sine = max(sine, largest_principal_sine(V[:, :5], res.subspace.basis))
    report(capsys, 3, rel <= 1e-8 and sine <= 1e-6, f"max rel eig err {rel:.2e}, max angle sine {sine:.2e}", t0, 30)


def test_criterion_04_lemma1(capsys):
    t0 = time.perf_counter()
    rep = validate_lemma1(1000, 10, 0.1, 10_000, seed=0)
    floor = 1 - 2 * 0.1 - 2 * rep.standard_error
    report(capsys, 4, rep.empirical_success_rate >= floor,
           f"coverage {rep.empirical_success_rate:.4f} vs floor {floor:.4f}", t0, 30)


def test_criterion_05_theorem1(capsys):
    t0 = time.perf_counter()
    rep = validate_theorem1(10, 200, 0.2, n_points=500, trials=50, seed=0)
    low = validate_theorem1(10, 200, 0.2, n_points=500, trials=50, seed=0, rho_scale=0.25)
    floor = 0.8 - 2 * rep.standard_error
    ok = (abs(rep.predicted_rho - theorem1_rho(9, 0.2)) < 1e-12 and rep.empirical_success_rate >= floor
          and low.empirical_success_rate < rep.empirical_success_rate)
    report(capsys, 5, ok, f"rho {rep.predicted_rho:.3f}: rate {rep.empirical_success_rate:.4f} vs floor {floor:.4f}; "
           f"rho/4 rate {low.empirical_success_rate:.4f}", t0, 60)


def test_criterion_06_theorem2(capsys):
    t0 = time.perf_counter()
    rep = run_theorem2(1.0, 10, 100, 0.2, n_points=500, trials=50, seed=0)
    low = run_theorem2(1.0, 10, 100, 0.2, n_points=500, trials=50, seed=0, rho_scale=1 / 3)
    floor = 0.8 - 2 * rep.standard_error
    ok = (abs(rep.predicted_rho - 1.6786) < 1e-4 and rep.empirical_success_rate >= floor
          and low.empirical_success_rate < rep.empirical_success_rate)
    report(capsys, 6, ok, f"rho {rep.predicted_rho:.4f}: rate {rep.empirical_success_rate:.4f} vs floor {floor:.4f}; "
           f"rho/3 rate {low.empirical_success_rate:.4f}", t0, 60)


# one draw of the toy benchmark; the seed also fixes the embedding plane, so held-out points come from a split
TRAIN, HELD_OUT = gen_dataset(DatasetConfig("rings", 0, 100, 2, 2000, noise=0.05)).split(1500)


def bench_model(seed):
    return train(ModelSpec.parse("mlp:64x64:tanh"), TRAIN, TrainConfig(epochs=50, seed=seed))


@pytest.fixture(scope="module")
def benchmark():
    t0 = time.perf_counter()
    clf = bench_model(1)
    train_recs = attack_dataset(clf, TRAIN.points[:300])
    return clf, HELD_OUT.points, train_recs, time.perf_counter() - t0


def mean_rate(clf, X, make, n=20):
    return float(np.mean([fooling_rate(clf, X, make(s)).rate for s in range(n)]))


def test_criterion_07_curvature_subspace_fools_more(benchmark, capsys):
    t0 = time.perf_counter()
    clf, X, recs, setup = benchmark
    t0 -= setup
    sc = build_curvature_subspace(clf, recs, 5, max_iter=500, rng=np.random.default_rng(0)).subspace
    sf = build_normal_subspace(recs, 5)
    d = X.shape[1]

    def rates(budget):
        return (mean_rate(clf, X, lambda s: sample_universal(sc, budget, 1000 + s)),
                mean_rate(clf, X, lambda s: sample_universal(sf, budget, 2000 + s, "random_in_Sf")),
                mean_rate(clf, X, lambda s: isotropic_candidate(d, budget, 3000 + s)))

    try:
        budget = 0.2 * random_noise_fooling_norm(clf, X, 0.9, 0)
    except UnreachableError as err:
        # the criterion has no budget; show where the comparison lands at reachable ones
        diag = []
        for target in (0.25, 0.4):
            b = 0.2 * random_noise_fooling_norm(clf, X, target, 0)
            diag.append(f"0.2*norm({target})={b:.3f}: Sc/Sf/iso " + "/".join(f"{r:.3f}" for r in rates(b)))
        report(capsys, 7, False, f"noise norm for 0.9 unreachable (median rate {err.achieved_rate:.3f}); "
               + "; ".join(diag), t0, 300)
        return
    r_c, r_f, r_i = rates(budget)
    report(capsys, 7, r_c >= r_f + 0.10 and r_c >= r_i + 0.15,
           f"budget {budget:.3f}: Sc {r_c:.3f}, Sf {r_f:.3f}, iso {r_i:.3f}", t0, 300)


def test_criterion_08_curvature_decreases_with_m(benchmark, capsys):
    t0 = time.perf_counter()
    clf, X, recs, _ = benchmark
    sc = build_curvature_subspace(clf, recs, 50, max_iter=500, rng=np.random.default_rng(0)).subspace
    held = attack_dataset(clf, X[:100])
    means = []
    for m in (2, 10, 50):
        reps = curvature_profile(clf, held, sc.truncate(m), 20, np.random.default_rng(m))
        means.append(float(np.mean([r.mean for r in reps])))
    ok = means[0] > 0 and means[0] > means[1] > means[2]
    report(capsys, 8, ok, "mean kappa at m=2/10/50: " + "/".join(f"{k:.4f}" for k in means), t0, 120)


def test_criterion_09_subspaces_shared_across_seeds(capsys):
    t0 = time.perf_counter()
    ds = gen_dataset(DatasetConfig("rings", 0, 100, 2, 2000, noise=0.05))
    subspaces = []
    for seed in (1, 2):
        clf = train(ModelSpec.parse("mlp:64x64:tanh"), ds, TrainConfig(epochs=30, seed=seed))
        recs = attack_dataset(clf, ds.points[:100])
        subspaces.append(build_curvature_subspace(clf, recs, 10, max_iter=600, rng=np.random.default_rng(0)).subspace)
    sa, sb = subspaces
    top = principal_angles(sa, sb)[0]
    rng = np.random.default_rng(103)
    base = [principal_angles(Subspace.random(100, 10, rng), Subspace.random(100, 10, rng))[0] for _ in range(500)]
    thresh = np.mean(base) + 3 * np.std(base)
    report(capsys, 9, top > thresh, f"top cosine {top:.3f} vs random mean+3sd {thresh:.3f}", t0, 300)


def test_criterion_10_cli_determinism(tmp_path, capsys):
    from test_cli import pipeline

    t0 = time.perf_counter()
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    ma, mb = pipeline(a, capsys), pipeline(b, capsys)
    diff = [r["command"] for r, s in zip(ma["runs"], mb["runs"]) if r["outputs"] != s["outputs"]]
    report(capsys, 10, not diff and len(ma["runs"]) == len(mb["runs"]),
           f"{len(ma['runs'])} runs compared, mismatches: {diff or 'none'}", t0, 60)
