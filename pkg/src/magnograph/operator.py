"""Assembly of the magnetic Schroedinger form and its generalized eigenproblem.

``S`` represents ``Q(u, w) = int D_A u conj(D_A w) + V u conj(w)`` and ``M``
the (lumped, diagonal) L2 form, so that ``u^H S u = norm_HA(u)^2`` and
``u^H M u = mass(u)`` exactly.  Vertex conditions are natural: they come out of
the unconstrained weak form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, PotentialDomainError, ValidationError
from .field import GraphGrid, PotentialPair

DENSE_LIMIT = 2000
EIG_TOL = 1e-8


def cluster_tol(lam: float) -> float:
    return 1e-7 * max(1.0, abs(lam))


@dataclass(frozen=True, eq=False)
class HermitianSystem:
    S: sp.csr_matrix
    M: sp.csr_matrix
    grid: GraphGrid
    pots: PotentialPair

    @property
    def ndof(self) -> int:
        return self.grid.ndof

    @property
    def w(self) -> np.ndarray:
        return self.grid.weights

    def shifted(self, s: float) -> "HermitianSystem":
        """System for the form Q - s (.,.)_2, used to move the multiplier."""
        return HermitianSystem((self.S - s * self.M).tocsr(), self.M, self.grid, self.pots)

    def quad(self, u: np.ndarray) -> float:
        return float(np.real(np.vdot(u, self.S @ u)))


def assemble(grid: GraphGrid, pots: PotentialPair, g=None) -> HermitianSystem:
    """Assemble S and M.  ``g`` is accepted for symmetry with the other APIs
    and must match ``grid.graph`` when given."""
    if g is not None and g is not grid.graph and g.digest() != grid.graph.digest():
        raise ValidationError("graph does not match grid")
    if np.any(pots.V < 1.0):
        raise PotentialDomainError("V < 1 on the grid")
    n = grid.ndof
    a, b, h = grid.elem_a, grid.elem_b, grid.elem_h
    z = np.exp(1j * pots.theta) / h
    # element matrix (1/h) [[1, -exp(-i theta)], [-exp(i theta), 1]]
    rows, cols, vals = [], [], []
    for (r, c, v) in ((a, a, 1.0 / h + 0j), (b, b, 1.0 / h + 0j), (a, b, -np.conj(z)), (b, a, -z)):
        keep = (r >= 0) & (c >= 0)
        rows.append(r[keep])
        cols.append(c[keep])
        vals.append(v[keep])
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    K.sum_duplicates()
    # enforce exact conjugate symmetry: keep the strict upper triangle and mirror it
    U = sp.triu(K, 1).tocsr()
    d = np.real(K.diagonal()) + grid.weights * pots.V
    S = (U + U.conj().T + sp.diags(d)).tocsr()
    S.sort_indices()
    M = sp.diags(grid.weights.astype(complex)).tocsr()
    return HermitianSystem(S, M, grid, pots)


def hermiticity_defect(S) -> float:
    D = (S - S.conj().T).tocoo()
    return float(np.max(np.abs(D.data))) if D.nnz else 0.0


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    vectors: np.ndarray         # columns, M-orthonormal
    residuals: np.ndarray       # ||S phi - lambda M phi|| / ||S phi||
    clusters: np.ndarray        # cluster id per eigenvalue
    ess_inf: float = math.inf   # surrogate for inf sigma_ess

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def distinct(self) -> np.ndarray:
        """One representative eigenvalue (the first) per cluster."""
        _, idx = np.unique(self.clusters, return_index=True)
        return self.eigenvalues[np.sort(idx)]

    def certified_clusters(self) -> int:
        """Number of computed clusters lying strictly below the essential spectrum."""
        return int(np.sum(self.distinct() < self.ess_inf))


def _clusters(lam: np.ndarray) -> np.ndarray:
    ids = np.zeros(len(lam), dtype=int)
    for j in range(1, len(lam)):
        ids[j] = ids[j - 1] + (0 if lam[j] - lam[j - 1] <= cluster_tol(lam[j]) else 1)
    return ids


def eigenpairs(sys: HermitianSystem, k: int, dense_limit: int = DENSE_LIMIT, sigma: float = 0.0) -> Spectrum:
    """Smallest ``k`` eigenpairs of S x = lambda M x, ascending and M-orthonormal."""
    n = sys.ndof
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}]")
    dm = 1.0 / np.sqrt(sys.w)
    Dm = sp.diags(dm)
    B = (Dm @ sys.S @ Dm).tocsr()
    if n <= dense_limit or k >= n - 1:
        Bd = B.toarray()
        Bd = 0.5 * (Bd + Bd.conj().T)
        lam, Y = sla.eigh(Bd, subset_by_index=[0, k - 1])
    else:
        try:
            lam, Y = spla.eigsh(B, k=k, sigma=sigma, which="LM", tol=0.0, maxiter=20 * n)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"eigensolver did not converge: {exc}") from None
        order = np.argsort(lam)
        lam, Y = lam[order], Y[:, order]
        # re-orthonormalize inside clusters of near-equal eigenvalues
        Y, _ = np.linalg.qr(Y)
        H = Y.conj().T @ (B @ Y)
        lam, R = np.linalg.eigh(0.5 * (H + H.conj().T))
        Y = Y @ R
    Phi = dm[:, None] * Y
    Phi = np.array([_fix_phase(c) for c in Phi.T]).T
    SPhi = sys.S @ Phi
    res = np.linalg.norm(SPhi - (sys.M @ Phi) * lam[None, :], axis=0) / np.linalg.norm(SPhi, axis=0)
    return Spectrum(np.asarray(lam, float), Phi, res, _clusters(lam), sys.pots.ess_inf())


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Deterministic phase: largest-modulus entry made real positive."""
    j = int(np.argmax(np.abs(v) - 1e-12 * np.arange(len(v))))
    return v * (abs(v[j]) / v[j]) if v[j] != 0 else v


@dataclass(frozen=True, eq=False)
class SpectralProjector:
    threshold: float
    basis: np.ndarray           # M-orthonormal columns with lambda <= threshold
    M: sp.csr_matrix
    next_eigenvalue: float

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if self.rank == 0:
            return np.zeros_like(v, dtype=complex)
        return self.basis @ (self.basis.conj().T @ (self.M @ v))

    def complement(self, v: np.ndarray) -> np.ndarray:
        return v - self(v)


def spectral_projector(spec: Spectrum, Lam: float, sys: HermitianSystem) -> SpectralProjector:
    lam = spec.eigenvalues
    if not Lam < lam[-1]:
        raise ValidationError("threshold must lie below the largest computed eigenvalue")
    keep = lam <= Lam
    above = lam[~keep]
    # a cluster must not be split by the threshold
    nxt = float(above[0])
    return SpectralProjector(float(Lam), spec.vectors[:, keep], sys.M, nxt)


def groundstate_support_check(spec: Spectrum, grid: GraphGrid, region, support_tol: float = 1e-6):
    """Fraction of the ground state's mass carried by ``region`` (a set of edge ids)."""
    phi = spec.vectors[:, 0]
    wr = grid.region_weights(frozenset(region))
    frac = float(np.dot(wr, np.abs(phi) ** 2) / np.dot(grid.weights, np.abs(phi) ** 2))
    return frac > support_tol, frac


def rayleigh(sys: HermitianSystem, u: np.ndarray) -> float:
    return float(np.real(np.vdot(u, sys.S @ u)) / np.real(np.vdot(u, sys.M @ u)))
