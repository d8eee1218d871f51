"""Piecewise-linear discretization of fields on a metric graph.

Every bounded edge carries a uniform grid with ``n_e >= 2`` nodes.  Nodes at
vertices share one global degree of freedom, which realizes continuity.  A
half-line is truncated at ``L_trunc`` and its far node is pinned to zero by
elimination, so it owns no degree of freedom.

Magnetic potential
------------------
``A`` is stored twice: as midpoint samples ``A_mid`` (one per element) and as
element phases ``theta = int_element A dx``.  The covariant difference on an
element ``[x_j, x_{j+1}]`` of width ``h`` is the link-variable form

    D_A u = (exp(-i theta/2) u_{j+1} - exp(i theta/2) u_j) / (i h)
          = cos(theta/2) (u_{j+1} - u_j)/(i h)
            - (2 sin(theta/2)/h) (u_j + u_{j+1})/2,

which agrees with ``(u_{j+1}-u_j)/(i h) - A_mid (u_j+u_{j+1})/2`` up to
O(h^2) and is exactly covariant under discrete gauge transforms.  As a
consequence ``|D_A u| >= ||u_{j+1}| - |u_j||/h`` holds element by element and
the spectrum depends on loop fluxes only modulo 2*pi.

Quadrature: element terms use the midpoint rule (``|D_A u|^2 h``), nodal
terms use the trapezoidal rule (weights ``w``).
"""
from __future__ import annotations

import ast
import hashlib
import math
import operator as _op
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .errors import ParseError, PotentialDomainError, ValidationError
from .graph import Edge, MetricGraph

PINNED = -1


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeGrid:
    edge_id: str
    length: float          # truncated length for half-lines
    n: int                 # node count including both end nodes
    dofs: np.ndarray       # global dof per node, PINNED for the far node of a half-line
    half_line: bool
    elem_slice: slice      # position of this edge's elements in the global element arrays

    @property
    def h(self) -> float:
        return self.length / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n)

    @property
    def x_mid(self) -> np.ndarray:
        x = self.x
        return 0.5 * (x[1:] + x[:-1])


@dataclass(frozen=True, eq=False)
class GraphGrid:
    graph: MetricGraph
    target_h: float
    L_trunc: float
    edges: tuple[EdgeGrid, ...]
    vertex_dof: Mapping[str, int]
    ndof: int
    weights: np.ndarray        # trapezoid weight per dof
    elem_a: np.ndarray         # left dof of each element (or PINNED)
    elem_b: np.ndarray         # right dof of each element (or PINNED)
    elem_h: np.ndarray

    def edge_grid(self, eid: str) -> EdgeGrid:
        for eg in self.edges:
            if eg.edge_id == eid:
                return eg
        raise KeyError(eid)

    @property
    def n_elements(self) -> int:
        return len(self.elem_h)

    def region_weights(self, region: Optional[frozenset] = None) -> np.ndarray:
        """Trapezoid weights restricted to the edges of ``region``.

        A vertex shared by region and non-region edges only receives the
        half-element contributions of the region edges.
        """
        if region is None:
            region = self.graph.region_edges()
        w = np.zeros(self.ndof)
        for eg in self.edges:
            if eg.edge_id in region:
                _add_edge_weights(w, eg)
        return w

    def edge_values(self, u: np.ndarray, eid: str) -> np.ndarray:
        """Nodal values of ``u`` along edge ``eid`` (pinned nodes read as 0)."""
        eg = self.edge_grid(eid)
        out = np.zeros(eg.n, dtype=np.result_type(u.dtype, float))
        live = eg.dofs != PINNED
        out[live] = u[eg.dofs[live]]
        return out

    def interpolate(self, fn: Callable[[str, np.ndarray], np.ndarray], dtype=complex) -> np.ndarray:
        """Sample ``fn(edge_id, x)`` at every node.  Vertex values are averaged."""
        u = np.zeros(self.ndof, dtype=dtype)
        count = np.zeros(self.ndof)
        for eg in self.edges:
            vals = np.broadcast_to(np.asarray(fn(eg.edge_id, eg.x), dtype=dtype), (eg.n,))
            live = eg.dofs != PINNED
            np.add.at(u, eg.dofs[live], vals[live])
            np.add.at(count, eg.dofs[live], 1.0)
        return u / count

    def digest(self) -> str:
        h = hashlib.sha256(self.graph.digest().encode())
        h.update(repr((self.target_h, self.L_trunc)).encode())
        for eg in self.edges:
            h.update(f"{eg.edge_id}:{eg.n}:{eg.length!r}".encode())
        return h.hexdigest()[:16]


def _add_edge_weights(w: np.ndarray, eg: EdgeGrid) -> None:
    nodal = np.full(eg.n, eg.h)
    nodal[0] = nodal[-1] = 0.5 * eg.h
    live = eg.dofs != PINNED
    np.add.at(w, eg.dofs[live], nodal[live])


def default_L_trunc(g: MetricGraph) -> float:
    core = g.bounded_edges
    return 12.0 * max(e.length for e in core) if core else 50.0


def build_grid(g: MetricGraph, target_h: float, L_trunc: Optional[float] = None) -> GraphGrid:
    if not target_h > 0:
        raise ValidationError("target_h must be positive")
    if L_trunc is None:
        L_trunc = default_L_trunc(g)
    if g.half_lines and not L_trunc > 0:
        raise ValidationError("L_trunc must be positive")
    vertex_dof = {vid: k for k, vid in enumerate(g.vertex_ids())}
    nxt = len(vertex_dof)
    edges, ea, eb, eh = [], [], [], []
    n_el = 0
    for e in g.edges:
        length = L_trunc if e.is_half_line else e.length
        n = max(2, int(math.ceil(length / target_h - 1e-9)) + 1)
        dofs = np.empty(n, dtype=np.int64)
        dofs[0] = vertex_dof[e.tail]
        dofs[1:-1] = np.arange(nxt, nxt + n - 2)
        nxt += n - 2
        dofs[-1] = PINNED if e.is_half_line else vertex_dof[e.head]
        eg = EdgeGrid(e.id, float(length), n, dofs, e.is_half_line, slice(n_el, n_el + n - 1))
        n_el += n - 1
        edges.append(eg)
        ea.append(dofs[:-1])
        eb.append(dofs[1:])
        eh.append(np.full(n - 1, eg.h))
    w = np.zeros(nxt)
    for eg in edges:
        _add_edge_weights(w, eg)
    for eg in edges:
        eg.dofs.setflags(write=False)
    return GraphGrid(g, float(target_h), float(L_trunc), tuple(edges), dict(vertex_dof), nxt, w,
                     np.concatenate(ea), np.concatenate(eb), np.concatenate(eh))


# ---------------------------------------------------------------------------
# expressions
# ---------------------------------------------------------------------------

_BINOPS = {ast.Add: _op.add, ast.Sub: _op.sub, ast.Mult: _op.mul, ast.Div: _op.truediv, ast.Pow: _op.pow}
_UNARY = {ast.USub: _op.neg, ast.UAdd: _op.pos}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": math.pi}


def parse_expression(text: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile an expression in ``x`` built from + - * / ^, sin, cos, exp.

    ``^`` denotes exponentiation.  The result is vectorized over ``x``.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"bad expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return check(node.operand)
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return check(node.args[0])
        if isinstance(node, ast.Name) and (node.id == "x" or node.id in _CONSTS):
            return True
        if isinstance(node, ast.Constant):
            return isinstance(node.value, (int, float)) and not isinstance(node.value, bool)
        raise ParseError(f"unsupported construct in expression {text!r}")

    check(tree)

    def ev(node, x):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, x), ev(node.right, x))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](ev(node.operand, x))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](ev(node.args[0], x))
        if isinstance(node, ast.Name):
            return x if node.id == "x" else _CONSTS[node.id]
        return float(node.value)

    def fn(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(ev(tree.body, x), dtype=float), x.shape).copy()

    fn.source = text
    return fn


@dataclass(frozen=True)
class Sampled:
    """Potential given by samples on one edge, linearly interpolated."""

    x: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.x, self.values)


PotentialSource = Union[float, str, Callable, Sampled]


def _as_callable(src: PotentialSource) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(src, (int, float)):
        c = float(src)
        return lambda x: np.full(np.shape(x), c)
    if isinstance(src, str):
        return parse_expression(src)
    if callable(src):
        return src
    raise ValidationError(f"unsupported potential source {src!r}")


def describe_source(src) -> str:
    if isinstance(src, (int, float)):
        return repr(float(src))
    if isinstance(src, str):
        return src
    if isinstance(src, Sampled):
        h = hashlib.sha256(np.ascontiguousarray(src.x).tobytes() + np.ascontiguousarray(src.values).tobytes())
        return "samples:" + h.hexdigest()[:12]
    return getattr(src, "source", getattr(src, "__name__", "callable"))


class PotentialSpec(dict):
    """Mapping edge id -> potential source, with a fallback under key ``"*"``."""

    def __init__(self, default: PotentialSource = 0.0, per_edge: Optional[Mapping] = None):
        super().__init__(per_edge or {})
        self.setdefault("*", default)

    def source(self, eid: str) -> PotentialSource:
        return self.get(eid, self["*"])

    def describe(self) -> str:
        return ";".join(f"{k}={describe_source(v)}" for k, v in sorted(self.items()))


def _as_spec(s) -> PotentialSpec:
    if isinstance(s, PotentialSpec):
        return s
    if isinstance(s, Mapping):
        d = dict(s)
        default = d.pop("*", 0.0)
        return PotentialSpec(default, d)
    return PotentialSpec(s)


_GAUSS3 = (np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)]), np.array([5.0, 8.0, 5.0]) / 9.0)


@dataclass(frozen=True, eq=False)
class PotentialPair:
    A_mid: np.ndarray          # per element, sign tied to edge orientation
    theta: np.ndarray          # per element, integral of A over the element
    V: np.ndarray              # per dof
    tail_limits: Mapping[str, float] = field(default_factory=dict)  # liminf of V per half-line
    descriptor: str = ""

    def digest(self) -> str:
        h = hashlib.sha256(self.A_mid.tobytes() + self.theta.tobytes() + self.V.tobytes())
        return h.hexdigest()[:16]

    def ess_inf(self) -> float:
        """Surrogate for inf of the essential spectrum (inf for compact graphs)."""
        return min(self.tail_limits.values()) if self.tail_limits else math.inf


def _tail_limit(fn) -> float:
    far = fn(np.array([1e6, 1e7, 1e8]))
    if not np.all(np.isfinite(far)) or np.all(far > 1e6):
        return math.inf
    window = fn(np.linspace(1e4, 1e4 + 200.0, 4001))
    return float(np.min(window))


def make_potentials(grid: GraphGrid, A: PotentialSource | Mapping = 0.0,
                    V: PotentialSource | Mapping = 1.0) -> PotentialPair:
    """Sample A (midpoints and element phases) and V (nodes) onto ``grid``.

    Raises PotentialDomainError if V < 1 at any sampled node.
    """
    A_spec, V_spec = _as_spec(A), _as_spec(V)
    ne = grid.n_elements
    A_mid = np.zeros(ne)
    theta = np.zeros(ne)
    Vsum = np.zeros(grid.ndof)
    wsum = np.zeros(grid.ndof)
    tails = {}
    xi, wq = _GAUSS3
    for eg in grid.edges:
        a_src = A_spec.source(eg.edge_id)
        a_fn = _as_callable(a_src)
        xm = eg.x_mid
        A_mid[eg.elem_slice] = a_fn(xm)
        if isinstance(a_src, Sampled):
            theta[eg.elem_slice] = A_mid[eg.elem_slice] * eg.h
        else:
            pts = xm[:, None] + 0.5 * eg.h * xi[None, :]
            theta[eg.elem_slice] = 0.5 * eg.h * (a_fn(pts.ravel()).reshape(pts.shape) @ wq)
        v_fn = _as_callable(V_spec.source(eg.edge_id))
        vals = v_fn(eg.x)
        live = eg.dofs != PINNED
        if not np.all(np.isfinite(vals[live])):
            raise PotentialDomainError(f"V is not finite on edge {eg.edge_id}")
        if np.any(vals[live] < 1.0):
            raise PotentialDomainError(
                f"V < 1 on edge {eg.edge_id} (min {vals[live].min():.6g}); shift the potential instead")
        nodal = np.full(eg.n, eg.h)
        nodal[0] = nodal[-1] = 0.5 * eg.h
        np.add.at(Vsum, eg.dofs[live], (nodal * vals)[live])
        np.add.at(wsum, eg.dofs[live], nodal[live])
        if eg.half_line:
            tails[eg.edge_id] = _tail_limit(v_fn)
    if not np.all(np.isfinite(A_mid)) or not np.all(np.isfinite(theta)):
        raise ValidationError("A is not finite on the grid")
    desc = f"A[{A_spec.describe()}] V[{V_spec.describe()}]"
    return PotentialPair(A_mid, theta, Vsum / wsum, tails, desc)


def with_potentials(pots: PotentialPair, A_mid=None, theta=None, V=None) -> PotentialPair:
    kw = {}
    if A_mid is not None:
        kw["A_mid"] = np.asarray(A_mid, float)
    if theta is not None:
        kw["theta"] = np.asarray(theta, float)
    if V is not None:
        kw["V"] = np.asarray(V, float)
    return replace(pots, **kw)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GraphFunction:
    grid: GraphGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.ndof,):
            raise ValidationError(f"expected {self.grid.ndof} values, got {self.values.shape}")

    @classmethod
    def from_function(cls, grid: GraphGrid, fn: Callable[[str, np.ndarray], np.ndarray]) -> "GraphFunction":
        return cls(grid, grid.interpolate(fn))

    def mass(self) -> float:
        return mass(self.grid, self.values)


def _endpoints(grid: GraphGrid, u: np.ndarray):
    ua = np.where(grid.elem_a >= 0, u[np.maximum(grid.elem_a, 0)], 0)
    ub = np.where(grid.elem_b >= 0, u[np.maximum(grid.elem_b, 0)], 0)
    return ua, ub


def _vals(u):
    return u.values if isinstance(u, GraphFunction) else np.asarray(u)


def covariant_derivative(grid: GraphGrid, pots: PotentialPair, u) -> np.ndarray:
    """Per-element values of D_A u (link-variable form, see module docstring)."""
    u = _vals(u)
    ua, ub = _endpoints(grid, u)
    half = np.exp(0.5j * pots.theta)
    return (ub * np.conj(half) - ua * half) / (1j * grid.elem_h)


def mass(grid: GraphGrid, u) -> float:
    u = _vals(u)
    return float(np.dot(grid.weights, np.abs(u) ** 2))


def inner_l2(grid: GraphGrid, u, w) -> complex:
    """Quadrature of the integral of u * conj(w); its real part is (u, w)_2."""
    return complex(np.sum(grid.weights * _vals(u) * np.conj(_vals(w))))


def norm_HA(grid: GraphGrid, pots: PotentialPair, u) -> float:
    d = covariant_derivative(grid, pots, u)
    u = _vals(u)
    return float(math.sqrt(np.dot(grid.elem_h, np.abs(d) ** 2) + np.dot(grid.weights * pots.V, np.abs(u) ** 2)))


def kinetic_norm(grid: GraphGrid, pots: PotentialPair, u) -> float:
    """||D_A u||_2 alone (no potential term)."""
    d = covariant_derivative(grid, pots, u)
    return float(math.sqrt(np.dot(grid.elem_h, np.abs(d) ** 2)))


def lp_norm(grid: GraphGrid, u, p: float, weights: Optional[np.ndarray] = None) -> float:
    if p < 1:
        raise ValidationError("p must be >= 1")
    w = grid.weights if weights is None else weights
    return float(np.dot(w, np.abs(_vals(u)) ** p) ** (1.0 / p))


def sup_norm(u) -> float:
    u = _vals(u)
    return float(np.max(np.abs(u))) if u.size else 0.0


# ---------------------------------------------------------------------------
# reorientation
# ---------------------------------------------------------------------------

def reorient_edge(g: MetricGraph, grid: GraphGrid, pots: PotentialPair, u, eid: str):
    """Reverse the orientation of bounded edge ``eid``.

    Returns ``(g', grid', pots', u')`` describing the same physical state: node
    order on ``eid`` is reversed and its A samples change sign.
    """
    e = g.edge(eid)
    if e.is_half_line:
        raise ValidationError("only bounded edges can be reoriented")
    new_edges = tuple(Edge(x.id, x.head, x.tail, x.length) if x.id == eid else x for x in g.edges)
    g2 = MetricGraph(g.vertices, new_edges, g.region)
    grid2 = build_grid(g2, grid.target_h, grid.L_trunc)
    perm = np.empty(grid.ndof, dtype=np.int64)  # new dof -> old dof
    for eg_old, eg_new in zip(grid.edges, grid2.edges):
        old = eg_old.dofs[::-1] if eg_old.edge_id == eid else eg_old.dofs
        live = eg_new.dofs != PINNED
        perm[eg_new.dofs[live]] = old[live]
    A_mid = pots.A_mid.copy()
    theta = pots.theta.copy()
    sl = grid.edge_grid(eid).elem_slice
    A_mid[sl] = -A_mid[sl][::-1]
    theta[sl] = -theta[sl][::-1]
    pots2 = replace(pots, A_mid=A_mid, theta=theta, V=pots.V[perm])
    u2 = _vals(u)[perm]
    if isinstance(u, GraphFunction):
        u2 = GraphFunction(grid2, u2)
    return g2, grid2, pots2, u2


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_snapshot(path, grid: GraphGrid, u, header: Optional[Mapping] = None) -> None:
    u = _vals(u)
    lines = [f"# grid {grid.digest()}"]
    for k, v in (header or {}).items():
        lines.append(f"# {k} {_fmt(v) if isinstance(v, (float, np.floating)) else v}")
    for eg in grid.edges:
        vals = grid.edge_values(u, eg.edge_id)
        lines.append(f"edge {eg.edge_id} n {eg.n}")
        for x, z in zip(eg.x, vals):
            lines.append(f"{_fmt(x)} {_fmt(z.real)} {_fmt(z.imag)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path, grid: Optional[GraphGrid] = None):
    """Return ``(header, blocks)`` or ``(header, values)`` when ``grid`` is given.

    ``blocks`` maps edge id to an array of shape (n, 3) holding x, re, im.
    """
    header, blocks = {}, {}
    cur, rows, expect = None, [], 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split(None, 1)
                if len(parts) == 2:
                    header[parts[0]] = parts[1]
                continue
            if line.startswith("edge "):
                tok = line.split()
                if len(tok) != 4 or tok[2] != "n":
                    raise ParseError(f"line {lineno}: bad edge header")
                if cur is not None and len(rows) != expect:
                    raise ParseError(f"edge {cur}: expected {expect} rows, got {len(rows)}")
                if cur is not None:
                    blocks[cur] = np.array(rows)
                cur, rows, expect = tok[1], [], int(tok[3])
                continue
            try:
                row = [float(t) for t in line.split()]
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric sample") from None
            if cur is None or len(row) not in (2, 3):
                raise ParseError(f"line {lineno}: sample outside an edge block")
            rows.append(row + [0.0] * (3 - len(row)))
    if cur is not None:
        if len(rows) != expect:
            raise ParseError(f"edge {cur}: expected {expect} rows, got {len(rows)}")
        blocks[cur] = np.array(rows)
    if grid is None:
        return header, blocks
    u = np.zeros(grid.ndof, dtype=complex)
    for eg in grid.edges:
        if eg.edge_id not in blocks or len(blocks[eg.edge_id]) != eg.n:
            raise ValidationError(f"snapshot does not match grid on edge {eg.edge_id}")
        b = blocks[eg.edge_id]
        live = eg.dofs != PINNED
        u[eg.dofs[live]] = (b[:, 1] + 1j * b[:, 2])[live]
    return header, u


def read_potential_file(path) -> PotentialSpec:
    """Potential file: either sample blocks (``edge <id> n <count>`` + ``x value``)
    or expression lines ``edge <id> expr <expression>`` / ``default <expression>``."""
    per_edge, default = {}, None
    with open(path) as fh:
        text = fh.read()
    if any(ln.strip().startswith("edge ") and " n " in ln for ln in text.splitlines()):
        _, blocks = read_snapshot(path)
        for eid, b in blocks.items():
            per_edge[eid] = Sampled(b[:, 0].copy(), b[:, 1].copy())
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if ln.startswith("default "):
            default = ln.split(None, 1)[1]
            parse_expression(default)
        elif ln.startswith("edge ") and " expr " in ln:
            tok = ln.split(None, 3)
            parse_expression(tok[3])
            per_edge[tok[1]] = tok[3]
    if default is None and not per_edge:
        raise ParseError(f"{path}: no potential data")
    return PotentialSpec(default if default is not None else 0.0, per_edge)
