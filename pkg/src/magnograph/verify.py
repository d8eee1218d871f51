"""Audits: machine-checkable inequalities over computed objects.

Every audit takes already computed data (fields, critical points, spectra,
thresholds) and returns an :class:`AuditReport`.  Audits never solve for
critical points themselves; the only computation they may trigger is the
spectrum callback of :func:`audit_gauge_flux`.

Reports are plain data and serialize to CSV rows
``check,target_hash,pass,measured,bound,tol``.
"""
from __future__ import annotations

import hashlib
import math
import re
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .energy import EnergyParams, Thresholds
from .field import GraphGrid, PotentialPair, covariant_derivative, sup_norm, with_potentials
from .graph import MetricGraph
from .operator import EIG_TOL, Spectrum
from .solver import MASS_REACHED, CriticalPoint

NONEXISTENCE_SCOPE = ("nonexistence audit can only falsify: a pass means no audited point "
                      "lies in the excluded region, not that no such point exists")

AUDIT_HEADER = "check,target_hash,pass,measured,bound,tol"


@dataclass(frozen=True)
class AuditReport:
    check: str
    target_hash: str
    passed: bool
    measured: float
    bound: float
    tol: float
    notes: str = ""

    def row(self) -> str:
        return ",".join([self.check, self.target_hash, "1" if self.passed else "0",
                         _fmt(self.measured), _fmt(self.bound), _fmt(self.tol)])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part).tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return h.hexdigest()[:16]


def point_digest(cp: CriticalPoint) -> str:
    return _digest(cp.values, cp.multiplier, cp.energy, cp.mass, cp.branch, cp.shift)


def points_digest(points: Iterable[CriticalPoint]) -> str:
    return _digest(*[point_digest(cp) for cp in points])


def write_audit_csv(path, reports: Sequence[AuditReport], manifest_hash: Optional[str] = None) -> None:
    lines = []
    if manifest_hash is not None:
        lines.append(f"# manifest={manifest_hash}")
    if any(r.check == "nonexistence" for r in reports):
        lines.append(f"# scope: {NONEXISTENCE_SCOPE}")
    lines.append(AUDIT_HEADER)
    lines += [r.row() for r in reports]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_audit_csv(path) -> list[dict]:
    out = []
    with open(path) as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    keys = rows[0].split(",")
    for ln in rows[1:]:
        out.append(dict(zip(keys, ln.split(","))))
    return out


# ---------------------------------------------------------------------------
# diamagnetic inequality
# ---------------------------------------------------------------------------

def audit_diamagnetic(u, pots: PotentialPair, grid: GraphGrid, C: float = 1.0,
                      Du: Optional[np.ndarray] = None) -> AuditReport:
    """Element-wise check of ``| |u|' | <= |D_A u|``.

    The left side is the difference quotient of the modulus.  Elements where
    ``min(|u_j|, |u_{j+1}|) < 1e-8 ||u||_inf`` are exempt.  ``Du`` lets a
    caller supply stored covariant derivatives instead of recomputing them.
    Measured is the largest violation relative to ``||u||_inf``; the
    tolerance is ``C h``.
    """
    u = u.values if hasattr(u, "values") else np.asarray(u)
    scale = sup_norm(u)
    if scale == 0:
        raise ValueError("audit_diamagnetic needs a nonzero field")
    ua = np.where(grid.elem_a >= 0, np.abs(u[np.maximum(grid.elem_a, 0)]), 0.0)
    ub = np.where(grid.elem_b >= 0, np.abs(u[np.maximum(grid.elem_b, 0)]), 0.0)
    lhs = np.abs(ub - ua) / grid.elem_h
    rhs = np.abs(covariant_derivative(grid, pots, u) if Du is None else np.asarray(Du))
    live = np.minimum(ua, ub) >= 1e-8 * scale
    viol = (lhs - rhs)[live] / scale
    measured = float(viol.max()) if viol.size else 0.0
    tol = C * float(grid.elem_h.max())
    exempt = int(np.sum(~live))
    return AuditReport("diamagnetic", _digest(u, pots.theta, grid.digest()), measured <= tol,
                       measured, 0.0, tol, f"elements={len(lhs)} exempt={exempt}")


# ---------------------------------------------------------------------------
# nonexistence below the critical mass
# ---------------------------------------------------------------------------

def free_residual(cp: CriticalPoint) -> float:
    """Residual of the unconstrained equation E'(u) = 0, bounded by the
    constrained residual plus the multiplier."""
    return cp.weak_residual + abs(cp.multiplier)


def audit_nonexistence(points: Sequence[CriticalPoint], thresholds: Thresholds, c: float,
                       grad_tol: float = 1e-6) -> AuditReport:
    """No free critical point may have mass below ``mu_{c,p}`` and energy at
    most ``c mu_{c,p}``; for 2 < p < 6 no point with negative multiplier may
    have mass below ``mu*_lambda``.

    Measured is the number of offending points.  The notes record the
    smallest margin ``mass / mu*_lambda`` among negative-multiplier points.
    """
    mu_c = thresholds.mu_cp(c)
    bad = 0
    audited = 0
    ratios = []
    p = thresholds.p
    for cp in points:
        if free_residual(cp) <= grad_tol:
            audited += 1
            if cp.mass < mu_c and cp.energy <= c * mu_c:
                bad += 1
        if 2 < p < 6 and cp.multiplier < 0 and cp.weak_residual <= grad_tol:
            audited += 1
            ms = thresholds.mu_star(cp.multiplier)
            ratios.append(cp.mass / ms)
            if cp.mass < ms:
                bad += 1
    notes = f"{NONEXISTENCE_SCOPE}; mu_cp={_fmt(mu_c)}; audited={audited}"
    if ratios:
        notes += f"; min mass/mu_star={_fmt(min(ratios))}"
    return AuditReport("nonexistence", _digest(points_digest(points), thresholds.inputs_hash(), c),
                       bad == 0, float(bad), 0.0, 0.0, notes)


# ---------------------------------------------------------------------------
# multiplier ranges
# ---------------------------------------------------------------------------

_BRANCH_INDEX = re.compile(r"phi_(\d+)$")


def branch_index(cp: CriticalPoint) -> int:
    """Eigenfunction index the point was seeded from (1 when unlabeled)."""
    m = _BRANCH_INDEX.search(cp.branch or "")
    return int(m.group(1)) if m else 1


def audit_multiplier_ranges(points: Sequence[CriticalPoint], spec: Spectrum, params: EnergyParams,
                            tol: float = 1e-6, small_mu: Optional[float] = None) -> AuditReport:
    """Every MassReached point seeded from phi_j has ``lambda <= lambda_j + tol``.

    When ``params.mu <= small_mu`` (typically a computed threshold) the
    points must also satisfy ``lambda >= -tol``.  For points computed with a
    shift ``s`` the stored multiplier is the mapped-back value ``s + lambda_s``,
    so the same bound applies.
    """
    lam = spec.eigenvalues
    worst = -math.inf
    checked = 0
    for cp in points:
        if cp.dichotomy != MASS_REACHED:
            continue
        j = branch_index(cp)
        if j > len(lam):
            raise ValueError(f"spectrum has no level {j}")
        checked += 1
        worst = max(worst, cp.multiplier - lam[j - 1])
        if small_mu is not None and params.mu <= small_mu:
            worst = max(worst, -cp.multiplier)
    measured = worst if checked else 0.0
    return AuditReport("multiplier_range", _digest(points_digest(points), lam, params.mu, params.p),
                       measured <= tol, float(measured), 0.0, tol, f"points={checked}")


# ---------------------------------------------------------------------------
# gauge and flux
# ---------------------------------------------------------------------------

def cycle_rank(g: MetricGraph) -> int:
    return len(g.bounded_edges) - len(g.vertices) + 1


def tree_gauge(grid: GraphGrid, pots: PotentialPair) -> PotentialPair:
    """Exact discrete gauge transform removing the phase from a spanning tree
    of the element graph.  What remains sits on one element per independent
    cycle and equals that cycle's flux."""
    n = grid.ndof
    a, b, theta = grid.elem_a, grid.elem_b, pots.theta
    adj = [[] for _ in range(n)]
    for k in range(len(a)):
        if a[k] >= 0 and b[k] >= 0 and a[k] != b[k]:
            adj[a[k]].append(k)
            adj[b[k]].append(k)
    chi = np.full(n, np.nan)
    tree = np.zeros(len(a), dtype=bool)
    for root in range(n):
        if not np.isnan(chi[root]):
            continue
        chi[root] = 0.0
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for k in adj[v]:
                other, sign = (b[k], 1.0) if a[k] == v else (a[k], -1.0)
                if np.isnan(chi[other]):
                    chi[other] = chi[v] + sign * theta[k]
                    tree[k] = True
                    queue.append(other)
    new = np.zeros_like(theta)
    live = (a >= 0) & (b >= 0)
    new[live] = theta[live] - (chi[b[live]] - chi[a[live]])
    new[tree] = 0.0
    return with_potentials(pots, A_mid=new / grid.elem_h, theta=new)


def _spectral_gap(l1, l2) -> float:
    l1, l2 = np.asarray(l1), np.asarray(l2)
    k = min(len(l1), len(l2))
    return float(np.max(np.abs(l1[:k] - l2[:k]) / np.maximum(1.0, np.abs(l1[:k]))))


def audit_gauge_flux(g: MetricGraph, grid: GraphGrid, pots: PotentialPair,
                     spec_fn: Callable[[PotentialPair], np.ndarray],
                     alt_pots: Optional[PotentialPair] = None, expect_equal: bool = True,
                     eig_tol: float = EIG_TOL) -> AuditReport:
    """Spectra depend on A only through cycle fluxes modulo 2 pi.

    Without ``alt_pots`` the spectrum of ``pots`` is compared with the
    spectrum after the tree gauge (on a tree that is A = 0) and with every
    cycle flux shifted by 2 pi.  With ``alt_pots`` the two spectra are
    compared directly; ``expect_equal=False`` turns the check into a
    separation test (they must differ by more than ``eig_tol``).
    Measured is the largest relative eigenvalue difference.
    """
    base = np.asarray(spec_fn(pots))
    rank = cycle_rank(g)
    h2 = float(grid.elem_h.max()) ** 2
    if alt_pots is not None:
        gap = _spectral_gap(base, spec_fn(alt_pots))
        passed = gap <= eig_tol if expect_equal else gap > eig_tol
        check = "gauge_equal" if expect_equal else "gauge_separated"
        return AuditReport(check, _digest(pots.theta, alt_pots.theta, grid.digest()), passed, gap,
                           0.0 if expect_equal else eig_tol, eig_tol, f"cycle_rank={rank}")
    fixed = tree_gauge(grid, pots)
    gaps = [_spectral_gap(base, spec_fn(fixed))]
    if rank > 0:
        shifted = fixed.theta.copy()
        shifted[fixed.theta != 0] += 2 * math.pi
        # when every cycle carries zero flux, put 2 pi onto the first cycle element
        if not np.any(fixed.theta != 0):
            cyc = np.flatnonzero(_cycle_elements(grid, pots))
            shifted[cyc[:1]] += 2 * math.pi
        gaps.append(_spectral_gap(base, spec_fn(with_potentials(fixed, A_mid=shifted / grid.elem_h,
                                                                theta=shifted))))
    tol = eig_tol if rank > 0 else max(eig_tol, h2)
    gap = max(gaps)
    return AuditReport("gauge_flux", _digest(pots.theta, grid.digest()), gap <= tol, gap, 0.0, tol,
                       f"cycle_rank={rank}")


def _cycle_elements(grid: GraphGrid, pots: PotentialPair) -> np.ndarray:
    """Elements left over by the spanning tree (one per independent cycle)."""
    probe = with_potentials(pots, A_mid=np.ones_like(pots.A_mid), theta=np.ones_like(pots.theta))
    return tree_gauge(grid, probe).theta != 0


# ---------------------------------------------------------------------------
# energy levels
# ---------------------------------------------------------------------------

def audit_energy_levels(points: Sequence[CriticalPoint], spec: Spectrum, params: EnergyParams,
                        thresholds: Optional[Thresholds] = None, tol: float = 1e-6,
                        ground_tol: Optional[float] = None) -> AuditReport:
    """Branch j (seeded from phi_j) must satisfy
    ``mu lambda_{j-1}/2 < E_j <= mu lambda_j/2 + tol`` (no lower bound for j=1).

    Measured is the largest violation with the upper side already reduced by
    its tolerance, so the report passes iff ``measured <= 0``.  The notes
    record the smallest slack and whether mu lies inside the interlacing
    regime of ``thresholds``.
    """
    lam = spec.eigenvalues
    mu = params.mu
    worst = -math.inf
    slack = math.inf
    for cp in points:
        j = branch_index(cp)
        if j > len(lam):
            raise ValueError(f"spectrum has no level {j}")
        t = tol if (j > 1 or ground_tol is None) else ground_tol
        upper = mu * lam[j - 1] / 2
        worst = max(worst, cp.energy - upper - t)
        slack = min(slack, upper - cp.energy)
        if j > 1:
            lower = mu * lam[j - 2] / 2
            worst = max(worst, lower - cp.energy)
            slack = min(slack, cp.energy - lower)
    notes = f"points={len(points)} min_slack={_fmt(slack if points else 0.0)}"
    if thresholds is not None and points:
        k = max(branch_index(cp) for cp in points)
        mt = thresholds.mu_tilde(k)
        notes += f" mu_tilde_{k}={_fmt(mt)} regime={'inside' if mu <= mt else 'outside'}"
    measured = worst if points else 0.0
    return AuditReport("energy_levels", _digest(points_digest(points), lam, mu, params.p), measured <= 0,
                       float(measured), 0.0, tol, notes)
