"""Energy functionals, the penalty family and threshold formulas.

Discrete conventions (``w`` trapezoid weights, ``w_K`` region weights)::

    E(u)       = 1/2 u^H S u - Psi(u),   Psi(u) = (1/p) sum_j w_K[j] |u_j|^p
    E_r,mu(u)  = E(u) - f_r(mass(u)/mu)
    g(u)       = S u - N(u) - lam_pen M u,   N_j = w_K[j] |u_j|^(p-2) u_j
    lam_pen    = (2/mu) f_r'(mass(u)/mu)

``Re(v^H g)`` is the directional derivative of ``E_r,mu`` along ``v``.  At a
constrained critical point of E one has ``S u - N(u) = lam M u``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize as so
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import DomainError, LeftAdmissibleSet, RegimeError, ValidationError
from .field import GraphGrid
from .graph import is_compact
from .operator import HermitianSystem, Spectrum


# ---------------------------------------------------------------------------
# penalty family
# ---------------------------------------------------------------------------

def _check_s(s, r):
    s = np.asarray(s, dtype=float)
    if r <= 1:
        raise DomainError("r must exceed 1")
    if np.any(s < 0) or np.any(s >= 1):
        raise DomainError("s must lie in [0, 1)")
    return s


def f_r(s, r):
    s = _check_s(s, r)
    return s ** r / (1.0 - s)


def f_r_prime(s, r):
    s = _check_s(s, r)
    return r * s ** (r - 1) / (1.0 - s) + s ** r / (1.0 - s) ** 2


def f_r_second(s, r):
    s = _check_s(s, r)
    return (r * (r - 1) * s ** (r - 2) / (1.0 - s) + 2 * r * s ** (r - 1) / (1.0 - s) ** 2
            + 2 * s ** r / (1.0 - s) ** 3)


def h_r(s, r):
    s = _check_s(s, r)
    return f_r_prime(s, r) * s - f_r(s, r)


def mass_for_multiplier(lam: float, mu: float, r: float) -> float:
    """Solve (2/mu) f_r'(s) = lam for s in (0, 1); f_r' is increasing."""
    target = 0.5 * mu * lam
    if target <= 0:
        return 0.0
    g = lambda s: float(f_r_prime(s, r)) - target
    hi = 1.0 - 1e-15
    return so.brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-14)


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyParams:
    p: float
    mu: float
    r: Optional[float] = None

    def __post_init__(self):
        if not self.p > 2:
            raise ValidationError("p must exceed 2")
        if not self.mu > 0:
            raise ValidationError("mu must be positive")
        if self.r is not None and not self.r > 1:
            raise ValidationError("r must exceed 1")

    def with_r(self, r) -> "EnergyParams":
        return EnergyParams(self.p, self.mu, r)


@dataclass(frozen=True)
class EnergyReport:
    quadratic: float
    psi: float
    penalty: float
    total: float
    mass: float
    grad_norm: float
    multiplier_estimate: float


class Functional:
    """Energy, gradient and nonlinear load for one system and parameter set.

    ``region`` (a set of edge ids) selects where Psi is integrated; by default
    it is the graph's nonlinearity region.
    """

    def __init__(self, sys: HermitianSystem, params: EnergyParams, region=None):
        self.sys = sys
        self.params = params
        self.region = None if region is None else frozenset(region)
        grid = sys.grid
        self.wK = grid.region_weights(None if region is None else frozenset(region))
        self.w = grid.weights

    def with_params(self, params: EnergyParams) -> "Functional":
        f = Functional.__new__(Functional)
        f.sys, f.params, f.region, f.wK, f.w = self.sys, params, self.region, self.wK, self.w
        return f

    # scalar pieces
    def mass(self, u) -> float:
        return float(np.dot(self.w, np.abs(u) ** 2))

    def quadratic(self, u) -> float:
        return 0.5 * self.sys.quad(u)

    def psi(self, u) -> float:
        p = self.params.p
        return float(np.dot(self.wK, np.abs(u) ** p)) / p

    def load(self, u) -> np.ndarray:
        """Nodal nonlinear load N(u)."""
        p = self.params.p
        return self.wK * np.abs(u) ** (p - 2) * u

    def s(self, u) -> float:
        return self.mass(u) / self.params.mu

    def penalty(self, u) -> float:
        if self.params.r is None:
            return 0.0
        s = self.s(u)
        if s >= 1:
            raise LeftAdmissibleSet(f"mass/mu = {s:.17g} >= 1")
        return float(f_r(s, self.params.r))

    def lam_pen(self, u) -> float:
        if self.params.r is None:
            return 0.0
        s = self.s(u)
        if s >= 1:
            raise LeftAdmissibleSet(f"mass/mu = {s:.17g} >= 1")
        return 2.0 / self.params.mu * float(f_r_prime(s, self.params.r))

    def energy(self, u) -> float:
        return self.quadratic(u) - self.psi(u) - self.penalty(u)

    def free_energy(self, u) -> float:
        """E without the penalty term."""
        return self.quadratic(u) - self.psi(u)

    def gradient(self, u) -> np.ndarray:
        g = self.sys.S @ u - self.load(u)
        lp = self.lam_pen(u)
        if lp:
            g = g - lp * (self.w * u)
        return g

    def multiplier(self, u) -> float:
        """Rayleigh-type multiplier Re<S u - N(u), u> / mass(u)."""
        m = self.mass(u)
        if m == 0:
            return 0.0
        return float(np.real(np.vdot(u, self.sys.S @ u - self.load(u)))) / m

    def projected_residual(self, u, lam: Optional[float] = None) -> np.ndarray:
        if lam is None:
            lam = self.multiplier(u)
        return self.sys.S @ u - self.load(u) - lam * (self.w * u)

    def dual_norm(self, g) -> float:
        """L2 norm of the Riesz representative M^{-1} g."""
        return float(math.sqrt(np.dot(np.abs(g) ** 2, 1.0 / self.w)))

    def report(self, u) -> EnergyReport:
        q, ps, pen = self.quadratic(u), self.psi(u), self.penalty(u)
        g = self.gradient(u)
        lam = self.lam_pen(u) if self.params.r is not None else self.multiplier(u)
        return EnergyReport(q, ps, pen, q - ps - pen, self.mass(u), self.dual_norm(g), lam)


def energy(sys: HermitianSystem, u, params: EnergyParams, region=None) -> EnergyReport:
    return Functional(sys, params, region).report(np.asarray(u, complex))


def gradient(sys: HermitianSystem, u, params: EnergyParams, region=None):
    """Assembled residual vector and the multiplier estimate."""
    f = Functional(sys, params, region)
    u = np.asarray(u, complex)
    lam = f.lam_pen(u) if params.r is not None else f.multiplier(u)
    return f.gradient(u), lam


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg-Sobolev constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GNSConstants:
    C_p: float
    C_inf: float
    p: float
    probes: int
    safety: float
    compact: bool
    provenance: str

    def describe(self) -> str:
        return self.provenance


def _kinetic_matrix(sys: HermitianSystem):
    return (sys.S - sp.diags(sys.w * sys.pots.V)).tocsr()


def gns_quadratic(sys: HermitianSystem, compact: Optional[bool] = None):
    """Matrix whose form is ||u||^2 (compact) or ||D_A u||_2^2 (noncompact)."""
    if compact is None:
        compact = is_compact(sys.grid.graph)
    return sys.S if compact else _kinetic_matrix(sys)


def gns_ratios(sys: HermitianSystem, U: np.ndarray, p: float, Q=None):
    """Ratios ||u||_p^p / (q^{p/4-1/2} m^{p/4+1/2}) and ||u||_inf / (q m)^{1/4}
    for every column of ``U``; q is the GNS quadratic form, m the mass."""
    if Q is None:
        Q = gns_quadratic(sys)
    w = sys.w
    A = np.abs(U)
    q = np.real(np.sum(np.conj(U) * (Q @ U), axis=0))
    m = w @ A ** 2
    P = w @ A ** p
    rp = P / (q ** (p / 4 - 0.5) * m ** (p / 4 + 0.5))
    rinf = A.max(axis=0) / (q * m) ** 0.25
    return rp, rinf


class ProbeFactory:
    """Probe fields for the GNS ratios: random smooth fields, eigenfunctions
    and peaked bumps centred at vertices and random nodes."""

    def __init__(self, sys: HermitianSystem, spectrum: Optional[Spectrum] = None):
        self.sys = sys
        self.grid = sys.grid
        self.spectrum = spectrum
        grid = self.grid
        keep = (grid.elem_a >= 0) & (grid.elem_b >= 0) & (grid.elem_a != grid.elem_b)
        G = sp.coo_matrix((grid.elem_h[keep], (grid.elem_a[keep], grid.elem_b[keep])),
                          shape=(grid.ndof, grid.ndof)).tocsr()
        self._adj = G.maximum(G.T)
        self._smoother = None

    def _smooth(self):
        if self._smoother is None:
            import scipy.sparse.linalg as spla
            self._smoother = spla.splu(self.sys.S.tocsc())
        return self._smoother

    def random_fields(self, rng, count):
        n = self.grid.ndof
        xi = rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count))
        lu = self._smooth()
        U = lu.solve((self.sys.w[:, None] * xi).astype(complex))
        # a second smoothing pass for half of them gives smoother fields
        half = count // 2
        if half:
            U[:, :half] = lu.solve((self.sys.w[:, None] * U[:, :half]).astype(complex))
        return U

    def eigen_combos(self, rng, count):
        if self.spectrum is None:
            return np.zeros((self.grid.ndof, 0), complex)
        Phi = self.spectrum.vectors
        k = Phi.shape[1]
        out = [Phi[:, j] for j in range(min(k, count))]
        while len(out) < count:
            c = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) * rng.exponential(1.0, k)
            out.append(Phi @ c)
        return np.array(out[:count]).T

    def bumps(self, rng, count, include_vertices=True):
        grid = self.grid
        centres = list(grid.vertex_dof.values()) if include_vertices else []
        n_rand = max(0, count // 4 - len(centres))
        centres += list(rng.integers(0, grid.ndof, n_rand))
        D = dijkstra(self._adj, directed=False, indices=np.array(centres))
        span = max(grid.graph.total_length(), grid.L_trunc if grid.graph.half_lines else 0.0, grid.target_h)
        out = []
        for j in range(count):
            d = D[j % len(centres)]
            width = math.exp(rng.uniform(math.log(2 * grid.target_h), math.log(span)))
            shape = j % 3
            if shape == 0:
                b = np.exp(-d / width)
            elif shape == 1:
                b = np.exp(-(d / width) ** 2)
            else:
                z = np.exp(-d / width)
                b = 2 * z / (1 + z * z)  # sech without overflow
            out.append(b.astype(complex))
        return np.array(out).T

    def probes(self, rng, count):
        n_b = count // 3
        n_e = count // 6
        n_r = count - n_b - n_e
        parts = [self.random_fields(rng, n_r), self.eigen_combos(rng, n_e), self.bumps(rng, n_b)]
        return np.concatenate([p for p in parts if p.shape[1]], axis=1)


def _refine_ratio(sys, Q, u0, p, maxiter=200):
    """Local ascent of log(gns ratio) from ``u0`` (real-ified L-BFGS)."""
    w = sys.w
    n = len(u0)
    a_, b_ = p / 4 - 0.5, p / 4 + 0.5

    def neg(x):
        u = x[:n] + 1j * x[n:]
        au = np.abs(u)
        Qu = Q @ u
        q = float(np.real(np.vdot(u, Qu)))
        m = float(w @ au ** 2)
        P = float(w @ au ** p)
        if q <= 0 or m <= 0 or P <= 0:
            return 0.0, np.zeros_like(x)
        val = math.log(P) - a_ * math.log(q) - b_ * math.log(m)
        g = p * w * au ** (p - 2) * u / P - a_ * 2 * Qu / q - b_ * 2 * w * u / m
        return -val, -np.concatenate([g.real, g.imag])

    x0 = np.concatenate([u0.real, u0.imag])
    res = so.minimize(neg, x0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter})
    return res.x[:n] + 1j * res.x[n:]


def estimate_gns_constants(sys: HermitianSystem, p: float, probes: int = 1000, seed: int = 0,
                           spectrum: Optional[Spectrum] = None, safety: float = 1.05,
                           refine: int = 4) -> GNSConstants:
    """Empirical GNS constants: max ratio over a probe set, times ``safety``.

    The best ``refine`` probes are additionally pushed uphill by a local
    optimizer, so the estimate sits close to the discrete supremum.
    """
    if probes < 100:
        raise ValidationError("at least 100 probes are required")
    compact = is_compact(sys.grid.graph)
    Q = gns_quadratic(sys, compact)
    rng = np.random.default_rng(seed)
    fac = ProbeFactory(sys, spectrum)
    U = fac.probes(rng, probes)
    rp, rinf = gns_ratios(sys, U, p, Q)
    extra = []
    for j in np.argsort(rp)[::-1][:refine]:
        extra.append(_refine_ratio(sys, Q, U[:, j], p))
    for j in np.argsort(rinf)[::-1][:refine]:
        extra.append(_refine_ratio(sys, Q, U[:, j], 12.0))
    if extra:
        E = np.array(extra).T
        rp2, rinf2 = gns_ratios(sys, E, p, Q)
        rp = np.concatenate([rp, rp2])
        rinf = np.concatenate([rinf, rinf2])
    prov = (f"empirical:probes={U.shape[1]}+{len(extra)}refined:seed={seed}:safety={safety}:"
            f"{'H1A' if compact else 'DA'}")
    return GNSConstants(float(safety * rp.max()), float(safety * rinf.max()), float(p), int(U.shape[1]),
                        safety, compact, prov)


# ---------------------------------------------------------------------------
# perturbed norms
# ---------------------------------------------------------------------------

def young_constant_half(q: float, C_s: Optional[float] = None, C_inf: Optional[float] = None) -> float:
    """C_{1/2} in  int |V_q||u|^2 <= ||u||^2/2 + C_{1/2} ||V_q||_q^{2q/(2q-1)} ||u||_2^2.

    For q > 1 it uses the GNS constant at exponent s = 2q/(q-1); for q = 1 it
    uses the sup-norm constant.
    """
    if q == 1:
        if C_inf is None:
            raise ValidationError("q = 1 needs the sup-norm constant")
        return C_inf ** 4 / 2.0
    if not q > 1:
        raise ValidationError("q must be >= 1")
    if C_s is None:
        raise ValidationError("q > 1 needs the GNS constant at exponent 2q/(q-1)")
    C = C_s ** ((q - 1) / q)
    beta = 2 * q / (2 * q - 1)
    return C ** beta * q ** (-1.0 / (2 * q - 1)) * (2 * q - 1) / (2 * q)


def perturbed_nu(q: float, Vq_norm: float, C_s=None, C_inf=None) -> float:
    """Smallest admissible shift nu for a perturbation with ||V_q||_q = Vq_norm."""
    if math.isinf(q):
        return float(Vq_norm)
    beta = 2.0 if q == 1 else 2 * q / (2 * q - 1)
    return 1.0 + young_constant_half(q, C_s, C_inf) * Vq_norm ** beta


def perturbed_system(sys: HermitianSystem, Vq: np.ndarray, nu: float) -> HermitianSystem:
    """System for the form of D_A^2 + V + V_q + nu (V_q nodal, may be negative)."""
    S = (sys.S + sp.diags(sys.w * (np.asarray(Vq, float) + nu))).tocsr()
    return HermitianSystem(S, sys.M, sys.grid, sys.pots)


def lq_norm_nodal(grid: GraphGrid, f: np.ndarray, q: float) -> float:
    f = np.abs(np.asarray(f, float))
    if math.isinf(q):
        return float(f.max())
    return float(np.dot(grid.weights, f ** q) ** (1.0 / q))


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Thresholds:
    p: float
    C_p: float
    C_inf: float
    lambdas: tuple           # distinct eigenvalues (one per cluster), ascending
    ess_inf: float
    provenance: str = "empirical"
    flags: tuple = field(default=("empirical-constant",))

    @property
    def lambda_1(self) -> float:
        return self.lambdas[0]

    def lam(self, k: int) -> float:
        if not 1 <= k <= len(self.lambdas):
            raise ValidationError(f"level {k} not available ({len(self.lambdas)} computed)")
        return self.lambdas[k - 1]

    def mu_cp(self, c: float) -> float:
        p, C = self.p, self.C_p
        e = (6 - p) / (2 * p - 4)
        if p <= 6:
            return C ** (2 / (2 - p)) * self.lambda_1 ** e
        if not c > 0:
            raise ValidationError("c must be positive")
        return C ** (2 / (2 - p)) * (2 * p * c / (p - 2)) ** e

    def mu_star(self, lam: float) -> float:
        p, C = self.p, self.C_p
        if not (2 < p < 6):
            raise RegimeError("mu*_lambda is defined for 2 < p < 6 only")
        if not lam < 0:
            raise RegimeError("mu*_lambda is defined for lambda < 0 only")
        e = (6 - p) / (2 * p - 4)
        return ((4 / (6 - p)) ** e * (4 / (p - 2)) ** 0.5 * C ** (2 / (2 - p)) * abs(lam) ** e)

    def chain_holds(self, mu: float, k: int) -> bool:
        p, C = self.p, self.C_p
        for i in range(2, k + 1):
            li, lprev = self.lam(i), self.lam(i - 1)
            if not mu * lprev / 2 < mu * li / 2 - C * mu ** (p / 2) * li ** ((p - 2) / 4) / p:
                return False
        return True

    def mu_tilde(self, k: int, rtol: float = 1e-10) -> float:
        """Largest mu for which the strict energy chain holds up to level k."""
        self.lam(k)
        if k == 1:
            return math.inf
        lo, hi = 1e-300, 1.0
        if not self.chain_holds(lo, k):
            return 0.0
        while self.chain_holds(hi, k):
            lo, hi = hi, 2 * hi
            if hi > 1e300:
                return math.inf
        while hi - lo > rtol * hi:
            mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
            if self.chain_holds(mid, k):
                lo = mid
            else:
                hi = mid
        return lo

    def delta(self, k: int) -> float:
        if math.isinf(self.ess_inf):
            return 1.0
        return (self.ess_inf - self.lam(k)) / 2

    def mu_double_star(self, k: int) -> float:
        """Returns 0 when level k is not below the essential spectrum."""
        d = self.delta(k)
        if d <= 0:
            return 0.0
        p = self.p
        return (self.C_inf ** -2 * ((p - 2) / (p * self.lam(k))) ** 0.5
                * (d / (3 * (p - 1))) ** (2 / (p - 2)))

    def mu_0(self) -> float:
        return self.mu_cp(self.lambda_1 / 2)

    def mu_star_0(self) -> float:
        return min(self.mu_0(), self.mu_double_star(1))

    def mu_star_k(self, k: int) -> float:
        return min(self.mu_cp(self.lam(k) / 2), self.mu_tilde(k), self.mu_double_star(k))

    def gm_count(self) -> int:
        """Certified number of eigenvalue clusters below the essential spectrum."""
        return int(sum(1 for l in self.lambdas if l < self.ess_inf))

    def inputs_hash(self) -> str:
        h = hashlib.sha256(repr((self.p, self.C_p, self.C_inf, tuple(self.lambdas), self.ess_inf)).encode())
        return h.hexdigest()[:16]

    def table(self, k: int):
        """Rows (name, value) of every threshold up to level k."""
        rows = [("C_p", self.C_p), ("C_inf", self.C_inf), ("ess_inf", self.ess_inf), ("mu_0", self.mu_0()), ("mu_star_0", self.mu_star_0())]
        for j in range(1, min(k, len(self.lambdas)) + 1):
            rows += [(f"lambda_{j}", self.lam(j)), (f"delta_{j}", self.delta(j)),
                     (f"mu_tilde_{j}", self.mu_tilde(j)), (f"mu_double_star_{j}", self.mu_double_star(j)),
                     (f"mu_star_{j}", self.mu_star_k(j))]
        return rows


def thresholds(spectrum: Spectrum, gns: GNSConstants) -> Thresholds:
    return Thresholds(gns.p, gns.C_p, gns.C_inf, tuple(float(x) for x in spectrum.distinct()),
                      float(spectrum.ess_inf), gns.provenance)
