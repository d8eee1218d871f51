import math
import warnings

import numpy as np
import pytest

from magnograph import graph as G
from magnograph.energy import EnergyParams
from magnograph.errors import ConvergenceError, DivergenceError, ValidationError
from magnograph.operator import eigenpairs
from magnograph import solver as S

from conftest import make_system


@pytest.fixture(scope="module")
def unit_interval():
    return make_system(G.interval(1.0), 1e-2)


def test_config_validates_schedule():
    with pytest.raises(ValidationError):
        S.SolverConfig(r_schedule=(4, 2))
    with pytest.raises(ValidationError):
        S.SolverConfig(r_schedule=(1.0, 2.0))
    assert S.SolverConfig(r_schedule=[2, 3]).r_schedule == (2.0, 3.0)


def test_minimize_rayleigh_interval(unit_interval):
    cp = S.minimize_rayleigh(unit_interval, 0.7)
    assert cp.multiplier == pytest.approx(1.0, abs=1e-10)
    assert cp.mass == pytest.approx(0.7)
    assert np.ptp(np.abs(cp.values)) < 1e-6


def test_minimize_rayleigh_loop_with_flux():
    sysm = make_system(G.loop(2 * math.pi), 1e-2, 0.25)
    cp = S.minimize_rayleigh(sysm, 1.0)
    assert cp.multiplier == pytest.approx(1 + 0.25 ** 2, rel=1e-4)
    mod = np.abs(cp.values)
    assert np.ptp(mod) < 1e-6 * mod.max()


def test_minimize_rayleigh_degenerate_flux_value():
    # half flux quantum: the two lowest modes coincide, only the value is determined
    sysm = make_system(G.loop(2 * math.pi), 1e-2, 0.5)
    assert S.minimize_rayleigh(sysm, 1.0).multiplier == pytest.approx(1.25, rel=1e-4)


def test_projected_gradient_constant_state(unit_interval):
    rng = np.random.default_rng(0)
    u0 = 1 + 0.05 * rng.standard_normal(unit_interval.ndof)
    cp = S.projected_gradient(unit_interval, u0, EnergyParams(4.0, 0.5))
    assert cp.dichotomy == S.MINIMIZED
    assert cp.multiplier == pytest.approx(0.5, abs=1e-8)
    assert cp.mass == pytest.approx(0.5, rel=1e-12)
    assert all(b <= a + 1e-12 for a, b in zip(cp.trace, cp.trace[1:]))


def test_projected_gradient_supercritical_diverges(unit_interval):
    rng = np.random.default_rng(1)
    u0 = np.exp(-((unit_interval.grid.interpolate(lambda e, x: x) - 0.3) / 0.1) ** 2)
    u0 = u0 + 0.01 * rng.standard_normal(unit_interval.ndof)
    with pytest.raises(DivergenceError):
        S.projected_gradient(unit_interval, u0, EnergyParams(8.0, 5.0))


def test_zero_seed_rejected(unit_interval):
    with pytest.raises(ConvergenceError):
        S.penalized_critical_point(unit_interval, np.zeros(unit_interval.ndof), EnergyParams(4.0, 0.5, r=2.0))


def test_penalized_point_is_inside_ball(unit_interval):
    seed = np.ones(unit_interval.ndof)
    cp = S.penalized_critical_point(unit_interval, seed, EnergyParams(4.0, 0.5, r=4.0))
    assert cp.dichotomy == S.PENALIZED
    assert 0 < cp.mass < 0.5
    assert cp.weak_residual < 1e-8
    assert cp.boundedness_ok


def test_r_continuation_constant_family(unit_interval):
    rng = np.random.default_rng(2)
    seed = 1 + 0.1 * rng.standard_normal(unit_interval.ndof)
    cp = S.r_continuation(unit_interval, seed, EnergyParams(4.0, 0.5))
    assert cp.dichotomy == S.MASS_REACHED
    assert cp.mass == pytest.approx(0.5, rel=1e-6)
    assert cp.multiplier == pytest.approx(0.5, abs=1e-8)
    masses = [t["mass"] for t in cp.trace]
    assert all(b >= a for a, b in zip(masses, masses[1:]))
    assert cp.strong_residual < 1e-6 and max(cp.vertex_residuals.values()) < 1e-6


def test_shift_maps_multiplier_back(unit_interval):
    seed = np.ones(unit_interval.ndof)
    plain = S.r_continuation(unit_interval, seed, EnergyParams(4.0, 0.5))
    shifted = S.r_continuation(unit_interval, seed, EnergyParams(4.0, 0.5), shift=-2.0)
    assert shifted.shift == -2.0
    assert shifted.multiplier == pytest.approx(plain.multiplier, abs=1e-8)
    assert shifted.energy == pytest.approx(plain.energy, abs=1e-10)


def test_multi_branch_distinct_and_sorted():
    sysm = make_system(G.interval(math.pi), 1e-2)
    spec = eigenpairs(sysm, 3)
    pts = S.multi_branch(sysm, spec, EnergyParams(4.0, 1e-2), 3)
    assert len(pts) == 3
    assert [p.energy for p in pts] == sorted(p.energy for p in pts)
    for i in range(3):
        for j in range(i):
            d, _ = S.phase_distance(pts[i].values, pts[j].values, sysm.w)
            assert d > 1e-3 * math.sqrt(1e-2)
    with pytest.raises(ValidationError):
        S.multi_branch(sysm, spec, EnergyParams(4.0, 1e-2), 4)


def test_branch_collapse_reported(unit_interval):
    # a huge deflation-free distinctness threshold makes every later branch a repeat
    spec = eigenpairs(unit_interval, 2)
    cfg = S.SolverConfig(distinct_tol=1e3, retries=1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pts = S.multi_branch(unit_interval, spec, EnergyParams(4.0, 0.1), 2, cfg)
    assert len(pts) == 1
    assert any(issubclass(w.category, S.BranchCollapse) for w in caught)


def test_phase_distance_ignores_global_phase(unit_interval):
    u = np.random.default_rng(3).standard_normal(unit_interval.ndof) + 0j
    d, ph = S.phase_distance(u, np.exp(1.1j) * u, unit_interval.w)
    assert d < 1e-7 and ph == pytest.approx(np.exp(-1.1j))


def test_residuals_of_eigenfunction():
    sysm = make_system(G.tadpole(2.0, 1.0), 2e-3, {"loop": 0.4})
    spec = eigenpairs(sysm, 1)
    phi = 1e-6 * spec.vectors[:, 0]  # tiny amplitude: the nonlinear term is negligible
    assert S.strong_residual(sysm, phi, spec.eigenvalues[0], 4.0) < 1e-3
    assert max(S.vertex_residuals(sysm, phi).values()) < 1e-2


def test_evaluate_point_matches_solver(unit_interval):
    cp = S.r_continuation(unit_interval, np.ones(unit_interval.ndof), EnergyParams(4.0, 0.5))
    again = S.evaluate_point(unit_interval, cp.values, EnergyParams(4.0, 0.5), lam=cp.multiplier)
    assert again.energy == cp.energy and again.mass == cp.mass
    assert again.weak_residual < 1e-8
    assert again.summary()["dichotomy_flag"] == S.MASS_REACHED
