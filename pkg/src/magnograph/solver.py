"""Critical points of the energy on the mass sphere.

Three solvers are provided:

* ``minimize_rayleigh``: linear ground state by a preconditioned three-term
  Rayleigh-Ritz iteration (independent of the ARPACK path in ``operator``).
* ``projected_gradient``: Sobolev-preconditioned descent of E on the sphere
  ``mass = mu``, for minimization problems.
* ``penalized_critical_point`` / ``r_continuation`` / ``multi_branch``: Newton
  on the gradient of the penalized functional ``E - f_r(mass/mu)`` inside
  ``mass < mu``, continued along an increasing r-schedule and polished on the
  sphere by a bordered Newton solve (the r -> infinity limit).

All Newton solves work on the real-ified unknowns ``x = [Re u, Im u]``; the
U(1) gauge freedom is removed by replacing the equation for ``Im u[anchor]``
with ``Im u[anchor] = 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import EnergyParams, Functional, f_r_prime, f_r_second
from .errors import ConvergenceError, DivergenceError, LeftAdmissibleSet, ValidationError
from .field import GraphFunction
from .operator import HermitianSystem

MASS_REACHED = "MassReached"
MASS_STAGNATED = "MassStagnated"
PENALIZED = "Penalized"
MINIMIZED = "Minimized"


class BranchCollapse(UserWarning):
    """Fewer distinct branches than requested were found."""


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-8
    max_iter: int = 60
    pg_max_iter: int = 20000
    r_schedule: tuple = tuple(2.0 ** k for k in range(1, 11))
    mass_tol: float = 1e-6
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    deflation_shift: float = 1.0
    phase_anchor: Optional[int] = None
    seed: int = 0
    distinct_tol: float = 1e-3
    retries: int = 3
    polish: bool = True
    stagnation_tol: float = 1e-6
    divergence_energy: float = -1e6
    seed_smoothing: int = 1

    def __post_init__(self):
        r = tuple(float(x) for x in self.r_schedule)
        if not r or any(x <= 1 for x in r) or any(b <= a for a, b in zip(r, r[1:])):
            raise ValidationError("r_schedule must be strictly increasing with entries > 1")
        object.__setattr__(self, "r_schedule", r)


@dataclass(eq=False)
class CriticalPoint:
    u: GraphFunction
    multiplier: float
    energy: float
    mass: float
    weak_residual: float
    strong_residual: float
    vertex_residuals: dict
    branch: str = ""
    r_final: Optional[float] = None
    dichotomy: str = MASS_REACHED
    mu: Optional[float] = None
    p: Optional[float] = None
    shift: float = 0.0
    penalized_energy: Optional[float] = None
    trace: list = field(default_factory=list)
    boundedness_ok: Optional[bool] = None

    @property
    def values(self) -> np.ndarray:
        return self.u.values

    def summary(self) -> dict:
        return {"mu": self.mu, "p": self.p, "lambda": self.multiplier, "energy": self.energy,
                "mass": self.mass,
                "residuals": {"weak": self.weak_residual, "strong": self.strong_residual,
                              "vertex_max": max(self.vertex_residuals.values(), default=0.0)},
                "branch": self.branch, "r_final": self.r_final, "dichotomy_flag": self.dichotomy,
                "shift": self.shift}


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------

def _node_A(A_mid: np.ndarray, h: float):
    """A and A' at interior nodes from midpoint samples."""
    A = 0.5 * (A_mid[1:] + A_mid[:-1])
    dA = (A_mid[1:] - A_mid[:-1]) / h
    return A, dA


def strong_residual(sys: HermitianSystem, u: np.ndarray, lam: float, p: float, region=None) -> float:
    """max over edge interiors of the strong-form residual, relative to ||u||_inf.

    u'' = -lam u - chi |u|^(p-2) u + 2i A u' + i A' u + (A^2 + V) u
    """
    grid, pots = sys.grid, sys.pots
    region = grid.graph.region_edges() if region is None else frozenset(region)
    scale = max(np.max(np.abs(u)), 1e-300)
    worst = 0.0
    for eg in grid.edges:
        if eg.n < 3:
            continue
        ue = grid.edge_values(u, eg.edge_id)
        h = eg.h
        d2 = (ue[2:] - 2 * ue[1:-1] + ue[:-2]) / h ** 2
        d1 = (ue[2:] - ue[:-2]) / (2 * h)
        A, dA = _node_A(pots.A_mid[eg.elem_slice], h)
        V = pots.V[eg.dofs[1:-1]]
        c = ue[1:-1]
        chi = 1.0 if eg.edge_id in region else 0.0
        rhs = -lam * c - chi * np.abs(c) ** (p - 2) * c + 2j * A * d1 + 1j * dA * c + (A ** 2 + V) * c
        worst = max(worst, float(np.max(np.abs(d2 - rhs))))
    return worst / scale


def _end_A(A_mid: np.ndarray, at_start: bool) -> float:
    a = A_mid if at_start else A_mid[::-1]
    return float(1.5 * a[0] - 0.5 * a[1]) if len(a) > 1 else float(a[0])


def _end_derivative(ue: np.ndarray, h: float, at_start: bool) -> complex:
    """Derivative d/dx at x=0 (start) or x=length (end), second order if possible."""
    if at_start:
        if len(ue) >= 3:
            return (-3 * ue[0] + 4 * ue[1] - ue[2]) / (2 * h)
        return (ue[1] - ue[0]) / h
    if len(ue) >= 3:
        return (3 * ue[-1] - 4 * ue[-2] + ue[-3]) / (2 * h)
    return (ue[-1] - ue[-2]) / h


def vertex_residuals(sys: HermitianSystem, u: np.ndarray) -> dict:
    """|sum over incident edges of (1/i) u_e'(v) - A_e^{+-}(v) u_e(v)| per vertex,
    relative to ||u||_inf; derivatives are taken pointing into each edge."""
    grid, pots = sys.grid, sys.pots
    scale = max(np.max(np.abs(u)), 1e-300)
    acc = {vid: 0j for vid in grid.vertex_dof}
    for eg in grid.edges:
        e = grid.graph.edge(eg.edge_id)
        ue = grid.edge_values(u, eg.edge_id)
        A = pots.A_mid[eg.elem_slice]
        h = eg.h
        acc[e.tail] += -1j * _end_derivative(ue, h, True) - _end_A(A, True) * ue[0]
        if not eg.half_line:
            acc[e.head] += -1j * (-_end_derivative(ue, h, False)) - (-_end_A(A, False)) * ue[-1]
    return {vid: abs(z) / scale for vid, z in acc.items()}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _rescale(F: Functional, u: np.ndarray, target_mass: float) -> np.ndarray:
    m = F.mass(u)
    if m <= 0:
        raise ConvergenceError("cannot rescale the zero field")
    return u * math.sqrt(target_mass / m)


def _anchor_index(u: np.ndarray, cfg: SolverConfig) -> int:
    if cfg.phase_anchor is not None:
        k = int(cfg.phase_anchor)
        if not 0 <= k < len(u):
            raise ValidationError("phase_anchor out of range")
        if abs(u[k]) > 1e-8 * np.max(np.abs(u)):
            return k
    return int(np.argmax(np.abs(u)))


def _fix_phase(u: np.ndarray, k: int) -> np.ndarray:
    return u * (abs(u[k]) / u[k]) if u[k] != 0 else u


def phase_distance(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> tuple[float, complex]:
    """min over theta of ||u - e^{i theta} v||_M and the minimizing phase factor."""
    ip = np.sum(w * u * np.conj(v))
    ph = ip / abs(ip) if ip != 0 else 1.0 + 0j
    d2 = np.dot(w, np.abs(u) ** 2) + np.dot(w, np.abs(v) ** 2) - 2 * abs(ip)
    return math.sqrt(max(d2, 0.0)), ph


def _realify(S):
    Sr, Si = S.real.tocsr(), S.imag.tocsr()
    return sp.bmat([[Sr, -Si], [Si, Sr]], format="csr")


def _load_hessian(wK: np.ndarray, u: np.ndarray, p: float):
    a, b = u.real, u.imag
    r2 = a * a + b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        base = wK * r2 ** ((p - 2) / 2)
        cross = np.where(r2 > 0, (p - 2) * wK * r2 ** ((p - 4) / 2), 0.0)
    n = len(u)
    Haa = base + cross * a * a
    Hbb = base + cross * b * b
    Hab = cross * a * b
    return sp.bmat([[sp.diags(Haa), sp.diags(Hab)], [sp.diags(Hab), sp.diags(Hbb)]], format="csr"), n


class _Deflation:
    def __init__(self, known: Sequence[np.ndarray], w: np.ndarray, shift: float):
        self.known = [np.asarray(k, complex) for k in known]
        self.w = w
        self.shift = shift

    def factor_and_grad(self, u: np.ndarray):
        """Deflation factor m(u) and the real-ified gradient of log m."""
        if not self.known:
            return 1.0, None
        m = 1.0
        g = np.zeros(len(u), complex)
        for v in self.known:
            d, ph = phase_distance(u, v, self.w)
            d2 = max(d * d, 1e-300)
            mi = 1.0 + self.shift / d2
            m *= mi
            # grad of d^2 is 2 M (u - ph v); grad of log(mi) = -shift/d2^2 * grad d2 / mi
            g += (-self.shift / d2 ** 2 / mi) * 2 * self.w * (u - ph * v)
        return m, np.concatenate([g.real, g.imag])


# ---------------------------------------------------------------------------
# Newton kernels
# ---------------------------------------------------------------------------

def _solve_rank1(J0, qt, q, beta, rhs):
    """Solve (J0 - beta qt q^T) x = rhs with a sparse LU of J0."""
    lu = spla.splu(J0.tocsc())
    y = lu.solve(rhs)
    if beta == 0.0:
        return y
    z = lu.solve(qt)
    denom = 1.0 - beta * np.dot(q, z)
    return y + z * (beta * np.dot(q, y) / denom)


class _PenalizedNewton:
    def __init__(self, F: Functional, cfg: SolverConfig, anchor: int, deflation: Optional[_Deflation]):
        self.F, self.cfg, self.k = F, cfg, anchor
        self.n = F.sys.ndof
        self.R = _realify(F.sys.S)
        self.w2 = np.concatenate([F.w, F.w])
        self.defl = deflation

    def residual(self, u):
        g = self.F.gradient(u)
        res = np.concatenate([g.real, g.imag])
        res[self.n + self.k] = u[self.k].imag
        return res

    def weak(self, u):
        g = self.F.gradient(u)
        nu = math.sqrt(self.F.mass(u))
        return self.F.dual_norm(g) / nu if nu > 0 else math.inf

    def step(self, u):
        F, n, k = self.F, self.n, self.k
        p, mu, r = F.params.p, F.params.mu, F.params.r
        x = np.concatenate([u.real, u.imag])
        H, _ = _load_hessian(F.wK, u, p)
        s = F.s(u)
        lam = F.lam_pen(u)
        J0 = (self.R - H - lam * sp.diags(self.w2)).tolil()
        beta = 4.0 / mu ** 2 * float(f_r_second(s, r))
        q = self.w2 * x
        qt = q.copy()
        J0[n + k, :] = 0.0
        J0[n + k, n + k] = 1.0
        qt[n + k] = 0.0
        rhs = -self.residual(u)
        dx = _solve_rank1(J0.tocsr(), qt, q, beta, rhs)
        if self.defl is not None:
            m, glog = self.defl.factor_and_grad(u)
            if glog is not None:
                denom = 1.0 - float(np.dot(glog, dx))
                if abs(denom) > 1e-12:
                    dx = dx / denom
        return dx[:n] + 1j * dx[n:]

    def merit(self, u):
        val = float(np.linalg.norm(self.residual(u) / np.sqrt(np.maximum(self.w2, 1e-300))))
        if self.defl is not None:
            m, _ = self.defl.factor_and_grad(u)
            val *= m
        return val

    def inside(self, u):
        return self.F.s(u) < 1.0


class _ConstrainedNewton:
    """Newton for S u - N(u) = lam M u, mass(u) = mu (lam is an unknown)."""

    def __init__(self, F: Functional, cfg: SolverConfig, anchor: int, deflation: Optional[_Deflation],
                 fixed_lambda: Optional[float] = None):
        self.F, self.cfg, self.k = F, cfg, anchor
        self.n = F.sys.ndof
        self.R = _realify(F.sys.S)
        self.w2 = np.concatenate([F.w, F.w])
        self.defl = deflation
        self.fixed = fixed_lambda

    def _res(self, u, lam):
        F, n = self.F, self.n
        g = F.sys.S @ u - F.load(u) - lam * (F.w * u)
        res = np.concatenate([g.real, g.imag])
        res[n + self.k] = u[self.k].imag
        if self.fixed is not None:
            return res
        return np.concatenate([res, [0.5 * (F.mass(u) - F.params.mu)]])

    def weak(self, state):
        u, lam = state
        g = self.F.projected_residual(u, lam)
        return self.F.dual_norm(g) / math.sqrt(self.F.mass(u))

    def step(self, state):
        u, lam = state
        F, n, k = self.F, self.n, self.k
        x = np.concatenate([u.real, u.imag])
        H, _ = _load_hessian(F.wK, u, F.params.p)
        J = (self.R - H - lam * sp.diags(self.w2)).tolil()
        J[n + k, :] = 0.0
        J[n + k, n + k] = 1.0
        if self.fixed is None:
            col = -(self.w2 * x)
            col[n + k] = 0.0
            J = sp.bmat([[J.tocsr(), sp.csr_matrix(col[:, None])],
                         [sp.csr_matrix((self.w2 * x)[None, :]), None]], format="csc")
        dx = spla.splu(J.tocsc()).solve(-self._res(u, lam))
        if self.defl is not None:
            m, glog = self.defl.factor_and_grad(u)
            if glog is not None:
                denom = 1.0 - float(np.dot(glog, dx[:2 * n]))
                if abs(denom) > 1e-12:
                    dx = dx / denom
        du = dx[:n] + 1j * dx[n:2 * n]
        dl = 0.0 if self.fixed is not None else float(dx[2 * n])
        return du, dl

    def merit(self, state):
        u, lam = state
        r = self._res(u, lam)
        val = float(np.linalg.norm(r[:2 * self.n] / np.sqrt(self.w2)))
        if self.fixed is None:
            val += abs(r[-1]) / max(self.F.params.mu, 1e-300)
        if self.defl is not None:
            val *= self.defl.factor_and_grad(u)[0]
        return val


def _damped_newton(kernel, state, cfg: SolverConfig, constrained: bool):
    """Backtracking Newton on ``kernel``; returns (state, iterations)."""
    F = kernel.F
    for it in range(cfg.max_iter):
        u = state[0] if constrained else state
        if F.mass(u) < 1e-14 * F.params.mu:
            raise ConvergenceError("iteration collapsed onto the trivial critical point u = 0")
        if kernel.weak(state) <= cfg.grad_tol:
            return state, it
        if constrained:
            du, dl = kernel.step(state)
        else:
            du = kernel.step(state)
        phi0 = kernel.merit(state)
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            if constrained:
                trial = (u + alpha * du, state[1] + alpha * dl)
                ok = True
            else:
                trial = u + alpha * du
                ok = kernel.inside(trial)
            if ok and F.mass(trial[0] if constrained else trial) > 0:
                phi = kernel.merit(trial)
                if phi <= (1 - cfg.armijo * alpha) * phi0 or (alpha == 1.0 and phi < phi0):
                    accepted = True
                    break
            alpha *= cfg.shrink
        if not accepted:
            if not constrained and not kernel.inside(u + alpha * du):
                raise LeftAdmissibleSet("could not stay inside mass < mu after backtracking")
            raise ConvergenceError(f"line search failed (weak residual {kernel.weak(state):.3e})")
        state = trial
    u = state[0] if constrained else state
    if kernel.weak(state) <= cfg.grad_tol:
        return state, cfg.max_iter
    raise ConvergenceError(f"Newton did not converge in {cfg.max_iter} iterations "
                           f"(weak residual {kernel.weak(state):.3e})")


# ---------------------------------------------------------------------------
# public solvers
# ---------------------------------------------------------------------------

def _finish(F: Functional, u, lam, *, branch="", r_final=None, dichotomy=MASS_REACHED, weak=None,
            penalized_energy=None, trace=None, shift=0.0, base_sys=None) -> CriticalPoint:
    sys = base_sys if base_sys is not None else F.sys
    lam_true = lam + shift
    E = F.free_energy(u) + 0.5 * shift * F.mass(u)
    if weak is None:
        weak = F.dual_norm(F.projected_residual(u, lam)) / math.sqrt(F.mass(u))
    return CriticalPoint(GraphFunction(sys.grid, u), float(lam_true), float(E), F.mass(u), float(weak),
                         strong_residual(sys, u, lam_true, F.params.p, F.region),
                         vertex_residuals(sys, u), branch, r_final, dichotomy, F.params.mu,
                         F.params.p, shift, penalized_energy, trace or [])


def evaluate_point(sys: HermitianSystem, u, params: EnergyParams, lam: Optional[float] = None, region=None,
                   branch: str = "", dichotomy: str = MASS_REACHED, shift: float = 0.0,
                   r_final: Optional[float] = None) -> CriticalPoint:
    """Wrap a field (e.g. read back from a bundle) as a CriticalPoint with
    freshly evaluated energy and residuals.  ``lam`` defaults to the Rayleigh
    multiplier; ``shift`` is recorded only."""
    F = Functional(sys, EnergyParams(params.p, params.mu), region)
    u = np.asarray(u.values if isinstance(u, GraphFunction) else u, complex)
    if lam is None:
        lam = F.multiplier(u)
    cp = _finish(F, u, lam, branch=branch, r_final=r_final, dichotomy=dichotomy)
    cp.shift = shift
    return cp


def minimize_rayleigh(sys: HermitianSystem, mu: float, u0: Optional[np.ndarray] = None, tol: float = 1e-11,
                      max_iter: int = 2000, seed: int = 0) -> CriticalPoint:
    """Linear ground state: minimize u^H S u subject to u^H M u = mu."""
    n = sys.ndof
    w = sys.w
    rng = np.random.default_rng(seed)
    x = np.asarray(u0, complex) if u0 is not None else (np.ones(n) + 0.1 * rng.standard_normal(n)).astype(complex)
    lu = spla.splu(sys.S.tocsc())
    x = lu.solve(w * x)  # one smoothing step
    prev = None
    rho = 0.0
    for it in range(max_iter):
        x = x / math.sqrt(np.dot(w, np.abs(x) ** 2))
        Sx = sys.S @ x
        rho = float(np.real(np.vdot(x, Sx)))
        r = Sx - rho * w * x
        if math.sqrt(np.dot(np.abs(r) ** 2, 1 / w)) <= tol * rho:
            break
        cols = [x, lu.solve(r)]
        if prev is not None:
            cols.append(prev)
        V = np.array(cols).T
        # unit columns first, so that tiny corrections near convergence survive the rank cut
        V = V / np.sqrt(np.maximum(w @ np.abs(V) ** 2, 1e-300))
        B = V.conj().T @ (w[:, None] * V)
        ev, Q = np.linalg.eigh(0.5 * (B + B.conj().T))
        keep = ev > 1e-12 * ev.max()
        Vb = V @ (Q[:, keep] / np.sqrt(ev[keep]))
        A = Vb.conj().T @ (sys.S @ Vb)
        lam, Y = np.linalg.eigh(0.5 * (A + A.conj().T))
        xn = Vb @ Y[:, 0]
        prev = xn - x * np.vdot(w * x, xn)
        x = xn
    else:
        raise ConvergenceError("Rayleigh minimization did not converge")
    x = _fix_phase(x, int(np.argmax(np.abs(x)))) * math.sqrt(mu)
    E = 0.5 * sys.quad(x)
    res = sys.S @ x - rho * w * x
    weak = math.sqrt(np.dot(np.abs(res) ** 2, 1 / w)) / math.sqrt(mu)
    return CriticalPoint(GraphFunction(sys.grid, x), rho, E, mu, weak, 0.0, vertex_residuals(sys, x),
                         "linear-ground-state", None, MINIMIZED, mu, None)


def _pg_weak(F: Functional, u, mu) -> float:
    G = F.sys.S @ u - F.load(u)
    lam = float(np.real(np.vdot(u, G))) / mu
    return F.dual_norm(G - lam * (F.w * u)) / math.sqrt(mu)


def projected_gradient(sys: HermitianSystem, u0, params: EnergyParams, cfg: SolverConfig = SolverConfig(),
                       region=None) -> CriticalPoint:
    """Descent of E on {mass = mu} with H^1_A-preconditioned gradients."""
    F = Functional(sys, EnergyParams(params.p, params.mu), region)
    mu = params.mu
    u = _rescale(F, np.asarray(u0.values if isinstance(u0, GraphFunction) else u0, complex), mu)
    lu = spla.splu(sys.S.tocsc())
    E = F.energy(u)
    trace = [E]
    for it in range(cfg.pg_max_iter):
        G = sys.S @ u - F.load(u)
        Mu = F.w * u
        lam = float(np.real(np.vdot(u, G))) / mu
        weak = F.dual_norm(G - lam * Mu) / math.sqrt(mu)
        if weak <= cfg.grad_tol:
            k = _anchor_index(u, cfg)
            u = _fix_phase(u, k)
            return _finish(F, u, lam, branch="projected-gradient", dichotomy=MINIMIZED, weak=weak, trace=trace)
        d = lu.solve(G)
        nrm = lu.solve(Mu)
        d = d - (np.real(np.vdot(Mu, d)) / np.real(np.vdot(Mu, nrm))) * nrm
        slope = float(np.real(np.vdot(d, G)))
        # rounding level of energy differences
        noise = 64 * np.finfo(float).eps * (float(np.dot(np.abs(sys.S.diagonal()), np.abs(u) ** 2)) + abs(E))
        tau = 1.0  # natural step length of the preconditioned flow
        accepted = False
        for _ in range(cfg.max_backtracks):
            trial = _rescale(F, u - tau * d, mu)
            Et = F.energy(trial)
            if Et <= E - cfg.armijo * tau * slope:
                accepted = True
                break
            if Et <= E + noise and _pg_weak(F, trial, mu) < weak:
                # energy differences are at roundoff level; use the residual instead
                accepted = True
                break
            tau *= cfg.shrink
        if not accepted:
            # at roundoff level the energy cannot decrease any more
            if weak <= 1e3 * cfg.grad_tol:
                return _finish(F, u, lam, branch="projected-gradient", dichotomy=MINIMIZED, weak=weak,
                               trace=trace)
            raise ConvergenceError(f"projected gradient stalled (weak residual {weak:.3e})")
        u, E = trial, Et
        trace.append(E)
        if E < cfg.divergence_energy:
            raise DivergenceError(f"energy fell below {cfg.divergence_energy:g} after {it + 1} steps "
                                  f"(||u||^2 = {sys.quad(u):.3e}); E is unbounded below on the sphere")
    raise ConvergenceError("projected gradient reached the iteration limit")


def _ray_maximizer(F: Functional, uhat: np.ndarray) -> np.ndarray:
    """Scale ``uhat`` to the maximizer of E_{r,mu} along its ray."""
    p, mu, r = F.params.p, F.params.mu, F.params.r
    a = F.sys.quad(uhat)
    b = float(np.dot(F.wK, np.abs(uhat) ** p))
    m = F.mass(uhat)
    tmax = math.sqrt(mu / m)

    def phi(t):
        s = min(t * t * m / mu, 1 - 1e-16)
        return a - t ** (p - 2) * b - 2 * m / mu * float(f_r_prime(s, r))

    hi = tmax * (1 - 1e-12)
    while phi(hi) > 0 and hi < tmax:
        hi = 0.5 * (hi + tmax)
    if phi(hi) > 0:
        return uhat * hi
    t = so.brentq(phi, 0.0, hi, xtol=1e-14 * tmax, rtol=1e-13)
    return uhat * t


def penalized_critical_point(sys: HermitianSystem, seed, params: EnergyParams, cfg: SolverConfig = SolverConfig(),
                             r: Optional[float] = None, region=None, known=(), predict: bool = True,
                             anchor: Optional[int] = None) -> CriticalPoint:
    """Critical point of E_{r,mu} near ``seed`` (Newton with phase anchor)."""
    r = params.r if r is None else r
    if r is None:
        raise ValidationError("penalty exponent r is required")
    F = Functional(sys, EnergyParams(params.p, params.mu, r), region)
    u = np.asarray(seed.values if isinstance(seed, GraphFunction) else seed, complex).copy()
    if F.mass(u) == 0:
        raise ConvergenceError("zero seed: u = 0 is the trivial critical point")
    if F.s(u) >= 1:
        u = _rescale(F, u, 0.9 * params.mu)
    if predict:
        u = _ray_maximizer(F, u)
    k = _anchor_index(u, cfg) if anchor is None else anchor
    u = _fix_phase(u, k)
    defl = _Deflation(known, F.w, cfg.deflation_shift * params.mu) if len(known) else None
    kernel = _PenalizedNewton(F, cfg, k, defl)
    u, its = _damped_newton(kernel, u, cfg, constrained=False)
    lam = F.lam_pen(u)
    cp = _finish(F, u, lam, r_final=r, dichotomy=PENALIZED, weak=kernel.weak(u), penalized_energy=F.energy(u))
    if r >= params.p / 2:
        cp.boundedness_ok = (params.p - 2) / 2 * sys.quad(u) <= params.p * F.energy(u) + 1e-9 * max(1.0, sys.quad(u))
    return cp


def _polish(F: Functional, u, lam, cfg: SolverConfig, k: int, known=(), fixed_lambda=None):
    defl = _Deflation(known, F.w, cfg.deflation_shift * F.params.mu) if len(known) else None
    kernel = _ConstrainedNewton(F, cfg, k, defl, fixed_lambda)
    if fixed_lambda is None:
        state = (_rescale(F, u, F.params.mu), lam)
        (u, lam), _ = _damped_newton(kernel, state, cfg, constrained=True)
    else:
        state = (u, fixed_lambda)
        (u, lam), _ = _damped_newton(kernel, state, cfg, constrained=True)
    return u, lam, kernel.weak((u, lam))


def r_continuation(sys: HermitianSystem, seed, params: EnergyParams, cfg: SolverConfig = SolverConfig(),
                   region=None, known_by_stage: Optional[dict] = None, shift: float = 0.0,
                   branch: str = "") -> CriticalPoint:
    """Follow penalized critical points along ``cfg.r_schedule`` and pass to the
    constrained limit.

    ``shift`` solves the problem for the form Q - shift*(.,.)_2 and maps the
    multiplier back (lam = shift + lam_shifted); it needs shift < lambda_1.
    ``known_by_stage`` maps a stage key (r value or "final") to previously
    found points used for deflation.
    """
    base = sys
    if shift:
        sys = sys.shifted(shift)
    known_by_stage = known_by_stage or {}
    u = np.asarray(seed.values if isinstance(seed, GraphFunction) else seed, complex)
    if cfg.seed_smoothing > 0:
        # inverse-iteration passes damp rough components of the seed; eigenfunction seeds are unchanged
        lu = spla.splu(sys.S.tocsc())
        for _ in range(cfg.seed_smoothing):
            u = lu.solve(sys.w * u)
    trace, stages = [], {}
    F = Functional(sys, EnergyParams(params.p, params.mu), region)
    k = None
    cp = None
    for r in cfg.r_schedule:
        cp = penalized_critical_point(sys, u, params, cfg, r=r, region=region,
                                      known=known_by_stage.get(r, ()), anchor=k)
        u = cp.values
        if k is None:
            k = _anchor_index(u, cfg)
        stages[r] = u.copy()
        trace.append({"r": r, "mass": cp.mass, "lambda_r": cp.multiplier, "energy_r": cp.penalized_energy,
                      "weak": cp.weak_residual, "bounded": cp.boundedness_ok})
        if params.mu - cp.mass <= cfg.mass_tol * params.mu:
            break
    gap = params.mu - cp.mass
    r_last = cp.r_final
    lam_last = trace[-1]["lambda_r"]
    if gap <= cfg.mass_tol * params.mu:
        res = _finish(F, u, lam_last, branch=branch, r_final=r_last, dichotomy=MASS_REACHED, trace=trace,
                      shift=shift, base_sys=base)
    else:
        stagnated = (len(trace) >= 2 and lam_last <= cfg.stagnation_tol * max(1.0, trace[0]["lambda_r"])
                     and trace[-1]["mass"] - trace[-2]["mass"] <= 1e-3 * params.mu)
        if stagnated:
            uf, lf, weak = _polish(F, u, 0.0, cfg, k, known_by_stage.get("final", ()), fixed_lambda=0.0)
            res = _finish(F, uf, 0.0, branch=branch, r_final=r_last, dichotomy=MASS_STAGNATED, weak=weak,
                          trace=trace, shift=shift, base_sys=base)
        elif cfg.polish:
            uf, lf, weak = _polish(F, u, lam_last, cfg, k, known_by_stage.get("final", ()))
            res = _finish(F, uf, lf, branch=branch, r_final=math.inf, dichotomy=MASS_REACHED, weak=weak,
                          trace=trace, shift=shift, base_sys=base)
        else:
            raise ConvergenceError(f"mass gap {gap / params.mu:.3e} (relative) after r = {r_last:g}")
    res.trace = trace
    res.stages = stages
    return res


def multi_branch(sys: HermitianSystem, spectrum, params: EnergyParams, k: int,
                 cfg: SolverConfig = SolverConfig(), region=None, shift: float = 0.0):
    """Up to k gauge-distinct critical points seeded from phi_1..phi_k."""
    if k > spectrum.k:
        raise ValidationError(f"spectrum has only {spectrum.k} eigenpairs")
    w = sys.w
    rng = np.random.default_rng(cfg.seed)
    found: list[CriticalPoint] = []
    warnings_out = []
    for j in range(1, k + 1):
        phi = spectrum.vectors[:, j - 1]
        base_seed = phi * math.sqrt(min(0.9 * params.mu, params.mu) / np.dot(w, np.abs(phi) ** 2))
        seed = base_seed
        point = None
        for attempt in range(cfg.retries + 1):
            known = {}
            for cp in found:
                for key, val in getattr(cp, "stages", {}).items():
                    known.setdefault(key, []).append(val)
                known.setdefault("final", []).append(cp.values - 0.0)
            try:
                cand = r_continuation(sys, seed, params, cfg, region, known, shift, branch=f"seeded-from-phi_{j}")
            except ConvergenceError:
                cand = None
            if cand is not None and all(
                    phase_distance(cand.values, f.values, w)[0] > cfg.distinct_tol * math.sqrt(params.mu)
                    for f in found):
                point = cand
                break
            noise = rng.standard_normal(sys.ndof) + 1j * rng.standard_normal(sys.ndof)
            noise *= 1e-2 * math.sqrt(params.mu) / math.sqrt(np.dot(w, np.abs(noise) ** 2))
            seed = base_seed + noise
        if point is None:
            msg = f"branch {j}: no new gauge orbit after {cfg.retries} retries"
            warnings_out.append(msg)
            warnings.warn(msg, BranchCollapse)
            continue
        found.append(point)
    found.sort(key=lambda c: c.energy)
    return found
