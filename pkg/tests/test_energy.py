import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magnograph import graph as G
from magnograph import energy as E
from magnograph.errors import DomainError, LeftAdmissibleSet, RegimeError, ValidationError
from magnograph.operator import eigenpairs

from conftest import make_system

R_VALUES = st.sampled_from([1.5, 2.0, 3.0, 8.0, 64.0])


@given(st.floats(1e-3, 1 - 1e-3), R_VALUES)
def test_penalty_inequality(s, r):
    assert E.f_r_prime(s, r) * s > r * E.f_r(s, r)


@given(st.floats(1e-3, 0.999), st.floats(1e-6, 1e-3), R_VALUES)
def test_h_r_increasing(s, ds, r):
    t = min(s + ds, 1 - 1e-9)
    assert E.h_r(t, r) > E.h_r(s, r)


@given(st.floats(1e-2, 0.98), R_VALUES)
def test_penalty_derivatives_by_differences(s, r):
    d = 1e-6
    fd1 = (E.f_r(s + d, r) - E.f_r(s - d, r)) / (2 * d)
    fd2 = (E.f_r_prime(s + d, r) - E.f_r_prime(s - d, r)) / (2 * d)
    assert fd1 == pytest.approx(E.f_r_prime(s, r), rel=1e-6, abs=1e-12)
    assert fd2 == pytest.approx(E.f_r_second(s, r), rel=1e-6, abs=1e-10)


def test_penalty_domain():
    assert E.f_r(0.0, 2) == 0.0 and E.f_r_prime(0.0, 2) == 0.0 and E.h_r(0.0, 2) == 0.0
    for bad in (-0.1, 1.0, 1.5):
        with pytest.raises(DomainError):
            E.f_r(bad, 2)
    with pytest.raises(DomainError):
        E.f_r(0.5, 1.0)


@given(st.floats(0.01, 50.0), st.floats(0.1, 10.0), R_VALUES)
def test_mass_for_multiplier_inverts(lam, mu, r):
    s = E.mass_for_multiplier(lam, mu, r)
    assert 2 / mu * E.f_r_prime(s, r) == pytest.approx(lam, rel=1e-9)
    assert E.mass_for_multiplier(-1.0, mu, r) == 0.0


def test_params_validation():
    with pytest.raises(ValidationError):
        E.EnergyParams(2.0, 1.0)
    with pytest.raises(ValidationError):
        E.EnergyParams(4.0, 0.0)
    with pytest.raises(ValidationError):
        E.EnergyParams(4.0, 1.0, r=1.0)


def test_energy_of_constant_on_interval():
    ell, c = 2.0, 0.3
    sysm = make_system(G.interval(ell), 0.01)
    u = np.full(sysm.ndof, c, dtype=complex)
    rep = E.energy(sysm, u, E.EnergyParams(4.0, 1.0))
    assert rep.total == pytest.approx(0.5 * c * c * ell - c ** 4 * ell / 4, rel=1e-13)
    assert rep.multiplier_estimate == pytest.approx(1 - c * c, rel=1e-10)
    g, lam = E.gradient(sysm, u, E.EnergyParams(4.0, 1.0))
    assert np.max(np.abs(g - lam * sysm.w * u)) < 1e-10


def test_region_restricts_nonlinearity():
    g = G.parse_graph("e0 : a -- b : 1\ne1 : b -- c : 1\ncore subgraph e0")
    sysm = make_system(g, 0.01)
    u = np.ones(sysm.ndof, dtype=complex)
    f = E.Functional(sysm, E.EnergyParams(4.0, 5.0))
    assert f.psi(u) == pytest.approx(0.25, rel=1e-13)
    assert E.Functional(sysm, E.EnergyParams(4.0, 5.0), region={"e0", "e1"}).psi(u) == pytest.approx(0.5)


def test_penalty_leaves_admissible_set(interval_pi):
    u = np.ones(interval_pi.ndof, dtype=complex)
    f = E.Functional(interval_pi, E.EnergyParams(4.0, 1.0, r=2.0))
    with pytest.raises(LeftAdmissibleSet):
        f.energy(u)


@given(st.integers(0, 10 ** 6))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    sysm = make_system(G.tadpole(1.0, 1.5), 0.05, "0.4 + 0.3*sin(x)", "1 + x^2")
    u = rng.standard_normal(sysm.ndof) + 1j * rng.standard_normal(sysm.ndof)
    v = rng.standard_normal(sysm.ndof) + 1j * rng.standard_normal(sysm.ndof)
    p = float(rng.uniform(2.5, 8))
    mu = E.Functional(sysm, E.EnergyParams(p, 1.0)).mass(u) / float(rng.uniform(0.1, 0.8))
    params = E.EnergyParams(p, mu, float(rng.choice([2.0, 3.0, 16.0])))
    f = E.Functional(sysm, params)
    t = 1e-5
    fd = (f.energy(u + t * v) - f.energy(u - t * v)) / (2 * t)
    an = float(np.real(np.vdot(v, f.gradient(u))))
    assert fd == pytest.approx(an, rel=1e-5, abs=1e-9 * abs(f.energy(u)))


@pytest.fixture(scope="module")
def tadpole_gns():
    sysm = make_system(G.tadpole(1.0, 1.0), 0.02, {"loop": 0.3})
    spec = eigenpairs(sysm, 4)
    return sysm, spec, {p: E.estimate_gns_constants(sysm, p, 1000, seed=0, spectrum=spec) for p in (3, 4, 6)}


def test_gns_constants_bound_fresh_probes(tadpole_gns):
    sysm, spec, consts = tadpole_gns
    U = E.ProbeFactory(sysm, spec).probes(np.random.default_rng(99), 2000)
    for p, c in consts.items():
        rp, rinf = E.gns_ratios(sysm, U, p)
        assert rp.max() <= c.C_p
        assert rinf.max() <= c.C_inf
        assert c.provenance.startswith("empirical")


def test_gns_needs_enough_probes(interval_pi):
    with pytest.raises(ValidationError):
        E.estimate_gns_constants(interval_pi, 4, probes=10)


def test_young_constant_closed_forms():
    assert E.young_constant_half(1, C_inf=2.0) == 8.0
    # q = 2: exponent s = 4, C = C_4^(1/2), beta = 4/3
    c4 = 1.7
    expected = (c4 ** 0.5) ** (4 / 3) * 2 ** (-1 / 3) * 3 / 4
    assert E.young_constant_half(2, C_s=c4) == pytest.approx(expected)
    assert E.perturbed_nu(math.inf, 0.3) == 0.3
    with pytest.raises(ValidationError):
        E.young_constant_half(2)


@pytest.mark.parametrize("q", [1, 2])
def test_perturbation_absorbed(tadpole_gns, q):
    # int |V_q| |u|^2 <= ||u||^2 / 2 + C_half ||V_q||_q^beta ||u||_2^2 on probes
    sysm, spec, consts = tadpole_gns
    rng = np.random.default_rng(5)
    C4 = consts[4]
    Cs = E.estimate_gns_constants(sysm, 4, 1000, seed=1, spectrum=spec).C_p if q == 2 else None
    chalf = E.young_constant_half(q, C_s=Cs, C_inf=C4.C_inf)
    beta = 2.0 if q == 1 else 2 * q / (2 * q - 1)
    U = E.ProbeFactory(sysm, spec).probes(rng, 300)
    for j in range(U.shape[1]):
        u = U[:, j]
        Vq = -np.abs(rng.standard_normal(sysm.ndof)) * rng.uniform(0.1, 5)
        lhs = float(np.dot(sysm.w * np.abs(Vq), np.abs(u) ** 2))
        rhs = 0.5 * sysm.quad(u) + chalf * E.lq_norm_nodal(sysm.grid, Vq, q) ** beta * sysm.w @ np.abs(u) ** 2
        assert lhs <= rhs * (1 + 1e-12)
    nu = E.perturbed_nu(q, E.lq_norm_nodal(sysm.grid, Vq, q), C_s=Cs, C_inf=C4.C_inf)
    shifted = E.perturbed_system(sysm, Vq, nu)
    assert eigenpairs(shifted, 1).eigenvalues[0] > 0


def thresholds_for(p, C=1.3, lambdas=(1.0, 2.0, 5.0), ess=math.inf):
    return E.Thresholds(p, C, 1.2, tuple(lambdas), ess)


def test_mu_tilde_matches_closed_form():
    for p in (3.0, 4.0, 5.0):
        thr = thresholds_for(p)
        lam, C = thr.lambdas, thr.C_p
        closed = min((p * (lam[i] - lam[i - 1]) / (2 * C * lam[i] ** ((p - 2) / 4))) ** (2 / (p - 2))
                     for i in (1, 2))
        assert thr.mu_tilde(3) == pytest.approx(closed, rel=1e-8)
        assert thr.chain_holds(0.99 * closed, 3) and not thr.chain_holds(1.01 * closed, 3)
    assert thresholds_for(4).mu_tilde(1) == math.inf


def test_mu_cp_regimes():
    thr6 = thresholds_for(6.0)
    assert thr6.mu_cp(0.1) == thr6.mu_cp(10.0)
    thr8 = thresholds_for(8.0)
    assert thr8.mu_cp(2.0) < thr8.mu_cp(1.0)
    with pytest.raises(ValidationError):
        thr8.mu_cp(0.0)


def test_mu_star_lambda():
    thr5 = thresholds_for(5.0)
    vals = [thr5.mu_star(-l) for l in (0.5, 1.0, 4.0, 16.0)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    # p = 4: (4/2)^(1/2) (4/2)^(1/2) C^-1 |lambda|^(1/2)
    assert thresholds_for(4.0).mu_star(-4.0) == pytest.approx(2 * 2 / 1.3)
    with pytest.raises(RegimeError):
        thresholds_for(6.0).mu_star(-1.0)
    with pytest.raises(RegimeError):
        thr5.mu_star(0.5)


def test_delta_and_double_star():
    compact = thresholds_for(4.0)
    assert compact.delta(1) == 1.0 and compact.mu_double_star(1) > 0
    touching = thresholds_for(4.0, lambdas=(1.0, 1.5), ess=1.0)
    assert touching.delta(1) == 0.0
    assert touching.mu_double_star(1) == 0.0 and touching.mu_star_0() == 0.0
    gap = thresholds_for(4.0, lambdas=(0.5, 0.8), ess=1.0)
    assert gap.gm_count() == 2 and gap.mu_star_0() > 0
    assert gap.mu_star_k(2) <= gap.mu_tilde(2)
    names = [n for n, _ in gap.table(2)]
    assert "mu_star_0" in names and "mu_double_star_2" in names
