import math

import numpy as np
import pytest

from boundgeo.geometry import minimal_perturbation
from boundgeo.model import PairFunction, predict
from boundgeo.theorems import (
    TheoremReport, lemma1_betas, make_linear_world, make_sphere_world, run_theorem2, sphere_world_classifier,
    theorem1_rho, theorem2_rho, validate_lemma1, validate_theorem1, validate_theorem2,
)


def test_lemma1_beta2_value():
    b1, b2 = lemma1_betas(0.1, 10)
    assert b2 == pytest.approx(1 + 2 * math.sqrt(math.log(10) / 10) + 2 * math.log(10) / 10, rel=1e-15)
    assert b2 == pytest.approx(2.4202, abs=1e-4)
    assert 0 < b1 < 1


def test_lemma1_full_projection():
    rep = validate_lemma1(20, 20, 0.2, 500, seed=1)
    assert rep.empirical_success_rate == 1.0 and rep.verdict


@pytest.mark.parametrize("d,m,delta", [(100, 5, 0.2), (1000, 10, 0.1), (1000, 50, 0.1)])
def test_lemma1_coverage(d, m, delta):
    rep = validate_lemma1(d, m, delta, 10_000, seed=0)
    assert rep.verdict
    assert rep.empirical_success_rate >= 1 - 2 * delta - 2 * rep.standard_error


def test_lemma1_bad_parameters():
    with pytest.raises(ValueError):
        validate_lemma1(10, 11, 0.1, 10)
    with pytest.raises(ValueError):
        validate_lemma1(10, 5, 1.0, 10)


def test_theorem1_rho_value():
    assert theorem1_rho(9, 0.2) == pytest.approx(math.sqrt(9 * math.e) / 0.2)
    assert theorem1_rho(9, 0.2) == pytest.approx(24.73, abs=5e-3)


def test_linear_world_unit_distance():
    world = make_linear_world(5, 30, 50, np.random.default_rng(0))
    for x in world.points[:10]:
        assert minimal_perturbation(world.clf, x).norm == pytest.approx(1.0, rel=1e-6)
    assert world.normals.dim == 4


def test_theorem1_binary_fools_everything():
    rep = validate_theorem1(2, 20, 0.3, n_points=200, trials=10, seed=3)
    assert rep.empirical_success_rate == 1.0


@pytest.mark.parametrize("L,d,delta", [(3, 50, 0.3), (10, 200, 0.2)])
def test_theorem1_verdict(L, d, delta):
    rep = validate_theorem1(L, d, delta, n_points=500, trials=50, seed=0)
    assert rep.verdict
    low = validate_theorem1(L, d, delta, n_points=500, trials=50, seed=0, rho_scale=0.25)
    assert rep.empirical_success_rate >= low.empirical_success_rate


def test_theorem2_rho_values():
    assert theorem2_rho(1, 10, 0.2) == pytest.approx(1.6786, abs=1e-4)
    assert theorem2_rho(2, 20, 0.1) == pytest.approx(0.9808, abs=1e-4)
    rhos = [theorem2_rho(k, 10, 0.2) for k in (1, 4, 16)]
    assert rhos[0] > rhos[1] > rhos[2] > 0


def test_sphere_world_geometry():
    world = make_sphere_world(12, 0.5, 10, np.random.default_rng(1))
    for i, x in enumerate(world.points):
        clf = sphere_world_classifier(world, i)
        assert predict(clf, x) == 0
        rec = minimal_perturbation(clf, x)
        assert rec.norm == pytest.approx(1.0, abs=1e-9)
        F = PairFunction(clf, 0, 1)
        assert abs(F.value(x + world.normals[i])) <= 1e-12
        # past the boundary along the normal the label flips
        assert predict(clf, x + 1.5 * world.normals[i]) == 1


def test_sphere_world_rejects_infeasible_curvature():
    with pytest.raises(ValueError, match="infeasible"):
        make_sphere_world(10, 2.0, 5, np.random.default_rng(0))


def test_theorem2_verdict_and_scale():
    rep = run_theorem2(1.0, 10, 100, 0.2, n_points=500, trials=50, seed=0)
    assert rep.verdict and rep.predicted_rho == pytest.approx(1.6786, abs=1e-4)
    low = run_theorem2(1.0, 10, 100, 0.2, n_points=500, trials=50, seed=0, rho_scale=1 / 3)
    assert low.empirical_success_rate < rep.empirical_success_rate


def test_theorem2_curved_world_below_unit_kappa():
    rep = run_theorem2(0.5, 10, 100, 0.2, n_points=300, trials=30, seed=4)
    assert rep.verdict


@pytest.mark.xfail(raises=ValueError, strict=True, reason="kappa > 1 cannot hold at the nearest boundary point when ||r|| = 1")
def test_theorem2_kappa_two():
    assert run_theorem2(2.0, 20, 200, 0.1, n_points=500, trials=50, seed=0).verdict


def test_reports_are_reproducible():
    a = validate_theorem1(3, 30, 0.3, n_points=100, trials=5, seed=9)
    b = validate_theorem1(3, 30, 0.3, n_points=100, trials=5, seed=9)
    assert a.per_trial == b.per_trial
    world = make_sphere_world(20, 1.0, 50, np.random.default_rng(2))
    r1 = validate_theorem2(world, 5, 0.2, trials=5, seed=1, rho_scale=0.7)
    r2 = validate_theorem2(world, 5, 0.2, trials=5, seed=1, rho_scale=0.7)
    assert r1.to_json() == r2.to_json()


def test_verdict_rule():
    rep = validate_theorem1(3, 30, 0.3, n_points=100, trials=5, seed=9, rho_scale=0.05)
    assert rep.verdict == (rep.empirical_success_rate >= rep.bound - 2 * rep.standard_error)
    assert not rep.verdict
    obj = rep.to_json()
    assert obj["verdict"] == "fail" and obj["theorem"] == "thm1"
    assert "FAIL" in rep.summary_row()
    assert isinstance(rep, TheoremReport)
