import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from magnograph import graph as G
from magnograph import field as F
from magnograph.errors import ParseError, PotentialDomainError, ValidationError
from magnograph.operator import assemble


def test_grid_counts_and_weights():
    g = G.tadpole(2.0, 1.0)
    grid = F.build_grid(g, 0.1)
    assert grid.edge_grid("loop").n == 21 and grid.edge_grid("tail").n == 11
    # loop: two shared end nodes, tail: one interior run plus the far vertex
    assert grid.ndof == 2 + 19 + 9
    assert grid.weights.sum() == pytest.approx(3.0, rel=1e-14)
    assert np.all(grid.weights > 0)


def test_half_line_is_truncated_and_pinned():
    g = G.star([1.0], 2)
    grid = F.build_grid(g, 0.5, L_trunc=5.0)
    eg = grid.edge_grid("h0")
    assert eg.length == 5.0 and eg.dofs[-1] == F.PINNED
    # pinned node contributes no weight; everything else is trapezoid
    assert grid.weights.sum() == pytest.approx(1.0 + 2 * (5.0 - 0.25))


def test_default_truncation_length():
    assert F.default_L_trunc(G.star([1.0, 2.0], 1)) == 24.0
    assert F.default_L_trunc(G.star([], 2)) == 50.0


def test_region_weights_at_shared_vertex():
    g = G.parse_graph("e0 : a -- b : 1\ne1 : b -- c : 1\ncore subgraph e0")
    grid = F.build_grid(g, 0.25)
    wr = grid.region_weights()
    b = grid.vertex_dof["b"]
    assert wr[b] == pytest.approx(0.125)
    assert grid.weights[b] == pytest.approx(0.25)
    assert wr.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("text, x, expected", [
    ("1 + x^2", 2.0, 5.0),
    ("sin(pi*x)", 0.5, 1.0),
    ("exp(-x)*cos(x)", 0.0, 1.0),
    ("-3", 7.0, -3.0),
])
def test_parse_expression(text, x, expected):
    assert F.parse_expression(text)(np.array([x]))[0] == pytest.approx(expected)


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "y + 1", "sin(x, x)", "1 +", "[x]"])
def test_parse_expression_rejects(text):
    with pytest.raises(ParseError):
        F.parse_expression(text)


def test_potential_below_one_rejected():
    grid = F.build_grid(G.interval(1.0), 0.1)
    with pytest.raises(PotentialDomainError):
        F.make_potentials(grid, 0.0, "0.5 + x")


def test_theta_is_integral_of_A():
    grid = F.build_grid(G.interval(2.0), 0.1)
    pots = F.make_potentials(grid, "3*x^2", 1.0)
    assert pots.theta.sum() == pytest.approx(8.0, rel=1e-13)
    assert pots.A_mid[0] == pytest.approx(3 * 0.05 ** 2)


def test_per_edge_potentials_and_ess_inf():
    g = G.star([1.0], 2)
    grid = F.build_grid(g, 0.1, 10.0)
    pots = F.make_potentials(grid, {"e0": 0.5}, {"*": 2.0, "h1": "1 + exp(-x)"})
    assert np.all(pots.A_mid[grid.edge_grid("e0").elem_slice] == 0.5)
    assert np.all(pots.A_mid[grid.edge_grid("h0").elem_slice] == 0.0)
    assert pots.ess_inf() == pytest.approx(1.0)
    assert F.make_potentials(F.build_grid(G.interval(1.0), 0.1)).ess_inf() == math.inf


def test_constant_field_on_loop():
    # |D_A 1|^2 = a^2 in the continuum; the link form gives (2 sin(a h/2)/h)^2
    a, ell = 0.7, 2 * math.pi
    for h in (1e-2, 5e-3):
        grid = F.build_grid(G.loop(ell), h)
        pots = F.make_potentials(grid, a, 1.0)
        u = np.ones(grid.ndof)
        assert F.mass(grid, u) == pytest.approx(ell, rel=1e-14)
        assert F.norm_HA(grid, pots, u) ** 2 == pytest.approx(ell * (a * a + 1), rel=h * h)


def test_lp_and_sup_norms():
    grid = F.build_grid(G.interval(2.0), 0.01)
    u = 3 * np.ones(grid.ndof)
    assert F.lp_norm(grid, u, 4) == pytest.approx(3 * 2 ** 0.25)
    assert F.sup_norm(u) == 3.0
    with pytest.raises(ValidationError):
        F.lp_norm(grid, u, 0.5)


def test_graph_function_validates_size():
    grid = F.build_grid(G.interval(1.0), 0.1)
    with pytest.raises(ValidationError):
        F.GraphFunction(grid, np.ones(3))
    f = F.GraphFunction.from_function(grid, lambda e, x: x)
    assert f.mass() == pytest.approx(1 / 3, rel=1e-2)


def _random_state(seed, g, h=0.05):
    rng = np.random.default_rng(seed)
    grid = F.build_grid(g, h, 4.0)
    a = [float(t) for t in rng.uniform(-2, 2, 3)]
    A = {e.id: f"{a[0]!r} + {a[1]!r}*sin({a[2]!r}*x)" for e in g.edges}
    pots = F.make_potentials(grid, A, f"2 + cos({a[2]!r}*x)")
    u = rng.standard_normal(grid.ndof) + 1j * rng.standard_normal(grid.ndof)
    return grid, pots, u


@given(st.integers(0, 10 ** 6), st.sampled_from(["loop", "tail"]))
def test_reorientation_preserves_physics(seed, eid):
    g = G.tadpole(1.5, 1.0)
    grid, pots, u = _random_state(seed, g)
    g2, grid2, pots2, u2 = F.reorient_edge(g, grid, pots, u, eid)
    assert g2.edge(eid).tail == g.edge(eid).head
    assert F.mass(grid2, u2) == pytest.approx(F.mass(grid, u), rel=1e-12)
    assert F.norm_HA(grid2, pots2, u2) == pytest.approx(F.norm_HA(grid, pots, u), rel=1e-12)
    lam1 = np.linalg.eigvalsh(assemble(grid, pots).S.toarray())
    lam2 = np.linalg.eigvalsh(assemble(grid2, pots2).S.toarray())
    assert np.allclose(lam1, lam2, rtol=0, atol=1e-10 * lam1.max())


def test_reorient_half_line_rejected():
    g = G.star([1.0], 1)
    grid, pots, u = _random_state(0, g)
    with pytest.raises(ValidationError):
        F.reorient_edge(g, grid, pots, u, "h0")


@given(st.integers(0, 10 ** 6))
def test_discrete_gauge_invariance(seed):
    # u -> exp(i chi) u with theta -> theta + chi_b - chi_a leaves |D_A u| unchanged
    g = G.tadpole(1.0, 2.0)
    grid, pots, u = _random_state(seed, g)
    chi = np.random.default_rng(seed + 1).uniform(0, 2 * np.pi, grid.ndof)
    a, b = grid.elem_a, grid.elem_b
    live = (a >= 0) & (b >= 0)
    theta = pots.theta.copy()
    theta[live] += chi[b[live]] - chi[a[live]]
    pots2 = F.with_potentials(pots, theta=theta)
    d1 = np.abs(F.covariant_derivative(grid, pots, u))
    d2 = np.abs(F.covariant_derivative(grid, pots2, np.exp(1j * chi) * u))
    assert np.allclose(d1[live], d2[live], rtol=1e-12, atol=1e-12)


@given(st.integers(0, 10 ** 6))
def test_snapshot_round_trip(tmp_path_factory, seed):
    g = G.star([1.0, 0.5], 1)
    grid, pots, u = _random_state(seed, g)
    path = tmp_path_factory.mktemp("snap") / "u.snap"
    F.write_snapshot(path, grid, u, {"lambda": 0.1})
    header, v = F.read_snapshot(path, grid)
    assert np.array_equal(u, v)
    assert header["grid"] == grid.digest()
    assert float(header["lambda"]) == 0.1


def test_snapshot_mismatch_and_garbage(tmp_path):
    grid = F.build_grid(G.interval(1.0), 0.1)
    path = tmp_path / "u.snap"
    F.write_snapshot(path, grid, np.ones(grid.ndof))
    with pytest.raises(ValidationError):
        F.read_snapshot(path, F.build_grid(G.interval(1.0), 0.05))
    path.write_text("edge e0 n 2\n0 1 0\nfoo bar\n")
    with pytest.raises(ParseError):
        F.read_snapshot(path)


def test_potential_file_formats(tmp_path):
    expr = tmp_path / "a.pot"
    expr.write_text("default 0.5\nedge e0 expr 2*x  # override\n")
    spec = F.read_potential_file(expr)
    assert spec.source("e0") == "2*x" and spec.source("e1") == "0.5"
    samples = tmp_path / "b.pot"
    samples.write_text("edge e0 n 3\n0 1\n0.5 2\n1 3\n")
    grid = F.build_grid(G.interval(1.0), 0.25)
    pots = F.make_potentials(grid, F.read_potential_file(samples), 1.0)
    assert np.allclose(pots.A_mid, 1 + 2 * grid.edge_grid("e0").x_mid)
    empty = tmp_path / "c.pot"
    empty.write_text("# nothing\n")
    with pytest.raises(ParseError):
        F.read_potential_file(empty)
