import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magnograph import graph as G
from magnograph import field as F
from magnograph.errors import PotentialDomainError, ValidationError
from magnograph.operator import (assemble, eigenpairs, groundstate_support_check, hermiticity_defect,
                                 rayleigh, spectral_projector)

from conftest import make_system


def random_graph(rng):
    nv = int(rng.integers(1, 5))
    lines = [f"v{int(rng.integers(0, k))} -- v{k} : {float(rng.uniform(0.3, 3))!r}" for k in range(1, nv)]
    for _ in range(int(rng.integers(0 if nv > 1 else 1, 3))):
        a, b = rng.integers(0, nv, 2)
        lines.append(f"v{a} -- v{b} : {float(rng.uniform(0.3, 3))!r}")
    for _ in range(int(rng.integers(0, 2))):
        lines.append(f"v{int(rng.integers(0, nv))} --> inf")
    return G.parse_graph("\n".join(lines))


def random_system(seed, h=0.05):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    c = [float(t) for t in rng.uniform(-3, 3, 4)]
    A = f"{c[0]!r} + {c[1]!r}*cos({c[2]!r}*x) + {c[3]!r}*x"
    V = f"1 + {abs(c[1])!r}*exp(-x)"
    return make_system(g, h, A, V, L_trunc=3.0)


@given(st.integers(0, 10 ** 6))
def test_hermitian_and_matches_quadratic_form(seed):
    sysm = random_system(seed)
    assert hermiticity_defect(sysm.S) == 0.0
    u = np.random.default_rng(seed).standard_normal((sysm.ndof, 2)) @ np.array([1, 1j])
    assert sysm.quad(u) == pytest.approx(F.norm_HA(sysm.grid, sysm.pots, u) ** 2, rel=1e-12)
    assert np.real(np.vdot(u, sysm.M @ u)) == pytest.approx(F.mass(sysm.grid, u), rel=1e-14)


@given(st.integers(0, 10 ** 6))
def test_magnetic_ground_energy_dominates(seed):
    sysm = random_system(seed)
    plain = assemble(sysm.grid, F.with_potentials(sysm.pots, A_mid=0 * sysm.pots.A_mid,
                                                  theta=0 * sysm.pots.theta))
    assert eigenpairs(sysm, 1).eigenvalues[0] >= eigenpairs(plain, 1).eigenvalues[0] - 1e-10


def test_interval_spectrum_and_orthonormality(interval_pi):
    spec = eigenpairs(interval_pi, 4)
    assert np.allclose(spec.eigenvalues, [1, 2, 5, 10], rtol=2e-4)
    G_ = spec.vectors.conj().T @ (interval_pi.M @ spec.vectors)
    assert np.allclose(G_, np.eye(4), atol=1e-10)
    assert np.all(spec.residuals < 1e-10)
    assert spec.certified_clusters() == 4


def test_sparse_path_agrees_with_dense(interval_pi):
    dense = eigenpairs(interval_pi, 4)
    sparse = eigenpairs(interval_pi, 4, dense_limit=0)
    assert np.allclose(dense.eigenvalues, sparse.eigenvalues, rtol=1e-10)
    for j in range(4):
        assert abs(abs(np.vdot(dense.vectors[:, j], interval_pi.M @ sparse.vectors[:, j])) - 1) < 1e-8


def test_loop_degeneracy_clusters():
    sysm = make_system(G.loop(2 * math.pi), 1e-2)
    spec = eigenpairs(sysm, 5)
    assert list(spec.clusters) == [0, 1, 1, 2, 2]
    assert np.allclose(spec.distinct(), [1, 2, 5], rtol=1e-3)


def test_eigenpairs_rejects_bad_k(interval_pi):
    with pytest.raises(ValidationError):
        eigenpairs(interval_pi, 0)
    with pytest.raises(ValidationError):
        eigenpairs(interval_pi, interval_pi.ndof + 1)


def test_assemble_rejects_small_V(interval_pi):
    bad = F.with_potentials(interval_pi.pots, V=0.5 * interval_pi.pots.V)
    with pytest.raises(PotentialDomainError):
        assemble(interval_pi.grid, bad)


def test_spectral_projector(interval_pi):
    spec = eigenpairs(interval_pi, 4)
    P = spectral_projector(spec, 3.0, interval_pi)
    assert P.rank == 2 and P.next_eigenvalue == pytest.approx(5, rel=1e-3)
    v = np.random.default_rng(0).standard_normal(interval_pi.ndof).astype(complex)
    assert np.allclose(P(P(v)), P(v))
    c = P.complement(v)
    assert abs(np.vdot(P(v), interval_pi.M @ c)) < 1e-10
    with pytest.raises(ValidationError):
        spectral_projector(spec, 20.0, interval_pi)


def test_rayleigh_of_eigenvector(interval_pi):
    spec = eigenpairs(interval_pi, 2)
    assert rayleigh(interval_pi, spec.vectors[:, 1]) == pytest.approx(spec.eigenvalues[1], rel=1e-12)


def test_groundstate_support_on_core():
    g = G.star([1.0], 2)
    sysm = make_system(g, 0.05, 0.0, "1 + 2*exp(-x)", L_trunc=10.0)
    spec = eigenpairs(sysm, 1)
    ok, frac = groundstate_support_check(spec, sysm.grid, g.compact_core)
    assert ok and 0 < frac < 1


def test_shifted_system_moves_spectrum(interval_pi):
    lam = eigenpairs(interval_pi.shifted(0.5), 2).eigenvalues
    assert np.allclose(lam, eigenpairs(interval_pi, 2).eigenvalues - 0.5, atol=1e-12)
