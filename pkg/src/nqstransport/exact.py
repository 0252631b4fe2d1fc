"""Exact references: diagonalization and the free-fermion solution of the chain.

Two independent routes are kept deliberately: sparse/dense diagonalization of
the spin Hamiltonian works in any dimension up to memory limits, while the
periodic chain additionally maps onto free fermions, giving closed forms for
the spectrum, the ground-state fidelity between nearby couplings, and the
fidelity susceptibility.  Tests lean on their agreement.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .lattice import Lattice, TfimHamiltonian, basis_flip_indices, diagonal_energies

__all__ = [
    "EdResult",
    "exact_diagonalize",
    "jw_momenta",
    "dispersion",
    "bogoliubov_angle",
    "ExactSolution1D",
    "exact_low_spectrum_1d",
    "ground_energy_1d",
    "gap_1d",
    "chi0_exact_1d",
    "agp_coefficient",
    "bogoliubov_fidelity",
]

_DENSE_LIMIT = 4096
_DEGENERACY_TOL = 1e-8


@dataclass
class EdResult:
    """Lowest part of an exact spectrum with orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    method: str

    def degenerate_groups(self, tol: float = _DEGENERACY_TOL):
        """Indices grouped by eigenvalue within ``tol`` (absolute)."""
        groups = []
        current = [0]
        for i in range(1, len(self.eigenvalues)):
            if self.eigenvalues[i] - self.eigenvalues[current[-1]] <= tol:
                current.append(i)
            else:
                groups.append(current)
                current = [i]
        groups.append(current)
        return groups

    def manifold(self, level: int, tol: float = _DEGENERACY_TOL) -> np.ndarray:
        """Orthonormal basis of the degenerate manifold containing ``level``.

        The last computed group may be truncated by the requested eigenvalue
        count; callers comparing against manifolds should request enough
        levels to close the group.
        """
        for group in self.degenerate_groups(tol):
            if level in group:
                return self.eigenvectors[:, group]
        raise IndexError(f"level {level} not present")


def _hamiltonian_csr(h: TfimHamiltonian) -> scipy.sparse.csr_matrix:
    lat = h.lattice
    N = lat.n_sites
    dim = 1 << N
    diag = diagonal_energies(h, lat.all_configurations())
    flips = basis_flip_indices(lat)
    idx = np.arange(dim, dtype=np.int64)
    rows = np.concatenate([idx, np.repeat(idx, N)])
    cols = np.concatenate([idx, flips.ravel()])
    vals = np.concatenate([diag, -np.ones(dim * N)])
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(dim, dim))
    return mat.tocsr()


def exact_diagonalize(h: TfimHamiltonian, count: int = 6, method: str = "auto") -> EdResult:
    """Lowest ``count`` eigenpairs of the spin Hamiltonian.

    ``method`` is "dense", "lanczos", or "auto" (dense up to 4096 basis
    states).  Eigenvalues ascend; eigenvectors are orthonormal columns.
    Residual norms are checked to 1e-9 relative to the spectral scale.
    """
    N = h.lattice.n_sites
    dim = 1 << N
    if count < 1:
        raise ValueError("count must be at least 1")
    count = min(count, dim)
    if method == "auto":
        method = "dense" if dim <= _DENSE_LIMIT else "lanczos"
    mat = _hamiltonian_csr(h)
    if method == "dense":
        vals, vecs = np.linalg.eigh(mat.toarray())
        vals, vecs = vals[:count], vecs[:, :count]
    elif method == "lanczos":
        if count >= dim - 1:
            raise ValueError("lanczos requires count < dim - 1; use dense")
        # Deterministic start vector so degenerate manifolds come out stable.
        v0 = np.cos(0.7 * np.arange(dim)) + 0.3
        ncv = min(dim, max(4 * count + 1, 40))
        vals, vecs = scipy.sparse.linalg.eigsh(
            mat, k=count, which="SA", v0=v0, ncv=ncv, maxiter=20000
        )
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = max(1.0, float(np.max(np.abs(vals))))
    resid = mat @ vecs - vecs * vals
    worst = np.max(np.linalg.norm(resid, axis=0))
    if worst > 1e-9 * scale:
        raise RuntimeError(f"diagonalization residual {worst:.3e} exceeds tolerance")
    return EdResult(eigenvalues=vals, eigenvectors=vecs, method=method)


# ----------------------------------------------------------------------------
# Free-fermion solution of the periodic chain.
# ----------------------------------------------------------------------------


def jw_momenta(n_sites: int, parity: int):
    """Momenta of the fermion modes in the given parity sector.

    Returns ``(paired, unpaired)``.  ``paired`` holds the +/-k partners that
    mix under pairing; ``unpaired`` is empty for parity 0 and ``[0, pi]`` for
    parity 1, where those two modes decouple.
    """
    if n_sites < 2 or n_sites % 2:
        raise ValueError("chain length must be even and at least 2")
    if parity not in (0, 1):
        raise ValueError("parity must be 0 or 1")
    if parity == 0:
        ls = np.arange(1, n_sites // 2 + 1)
        half = (2 * np.pi / n_sites) * (ls - 0.5)
        unpaired = np.array([])
    else:
        ls = np.arange(1, n_sites // 2)
        half = (2 * np.pi / n_sites) * ls
        unpaired = np.array([0.0, np.pi])
    paired = np.concatenate([half, -half])
    return paired, unpaired


def dispersion(k, coupling: float) -> np.ndarray:
    """Quasiparticle energy eps_k = sqrt((1 - c cos k)^2 + (c sin k)^2)."""
    k = np.asarray(k, dtype=np.float64)
    return np.sqrt((1.0 - coupling * np.cos(k)) ** 2 + (coupling * np.sin(k)) ** 2)


def bogoliubov_angle(k, coupling: float) -> np.ndarray:
    """Rotation angle theta_k with cos = (1 - c cos k)/eps, sin = c sin k/eps."""
    k = np.asarray(k, dtype=np.float64)
    return np.arctan2(coupling * np.sin(k), 1.0 - coupling * np.cos(k))


def agp_coefficient(k: float, coupling: float) -> float:
    """Adiabatic gauge potential coefficient -sin k / (2 eps_k^2)."""
    eps = float(dispersion(k, coupling))
    if eps == 0.0:
        raise ValueError("gapless mode: adiabatic gauge potential undefined")
    return -np.sin(k) / (2.0 * eps**2)


@dataclass(frozen=True)
class ExactSolution1D:
    """Bogoliubov data for one parity sector of the periodic chain."""

    n_sites: int
    coupling: float
    parity: int

    def __post_init__(self):
        jw_momenta(self.n_sites, self.parity)  # validates

    @cached_property
    def paired_momenta(self) -> np.ndarray:
        return jw_momenta(self.n_sites, self.parity)[0]

    @cached_property
    def unpaired_momenta(self) -> np.ndarray:
        return jw_momenta(self.n_sites, self.parity)[1]

    @cached_property
    def energies(self) -> np.ndarray:
        return dispersion(self.paired_momenta, self.coupling)

    @cached_property
    def angles(self) -> np.ndarray:
        return bogoliubov_angle(self.paired_momenta, self.coupling)

    @cached_property
    def agp_coefficients(self) -> np.ndarray:
        eps = self.energies
        if np.any(eps == 0.0):
            raise ValueError("gapless mode: adiabatic gauge potential undefined")
        return -np.sin(self.paired_momenta) / (2.0 * eps**2)


def _positive_half(n_sites: int, parity: int) -> np.ndarray:
    paired, _ = jw_momenta(n_sites, parity)
    return paired[paired > 0]


def ground_energy_1d(n_sites: int, coupling: float) -> float:
    """Parity-0 vacuum energy: minus the sum of 2 eps_k over the +k modes."""
    ks = _positive_half(n_sites, 0)
    return float(-2.0 * dispersion(ks, coupling).sum())


def _sector_levels(n_sites: int, coupling: float, parity: int, count: int):
    """Lowest ``count`` levels of one parity sector by lazy subset-sum."""
    ks = _positive_half(n_sites, parity)
    eps = dispersion(ks, coupling)
    base = float(-2.0 * eps.sum())
    # Cost of occupying each mode; +/-k are separate slots with equal cost.
    costs = list(np.repeat(2.0 * eps, 2))
    if parity == 1:
        # The k = 0, pi modes decouple from pairing.  Their block reads
        # 2(n0 + npi - 1) + 2c(npi - n0): empty costs -2, occupying k=0
        # costs 2(1-c) and k=pi costs 2(1+c) on top of that.
        base += -2.0
        costs.append(2.0 * (1.0 - coupling))
        costs.append(2.0 * (1.0 + coupling))
    # Fermion parity of the physical sector must equal ``parity``.  Negative
    # costs (k=0 beyond the critical point) are folded into the base energy,
    # flipping the parity bookkeeping for that slot.
    required = parity
    norm = []
    for c in costs:
        if c < 0:
            base += c
            required ^= 1
            norm.append(-c)
        else:
            norm.append(c)
    norm.sort()
    levels = []
    if required == 0:
        levels.append(base)
    if norm:
        # Heap over (sum, last index, excitation parity); expansion by
        # appending the next slot or replacing the last one enumerates all
        # subsets in ascending order of total cost.
        heap = [(norm[0], 0, 1)]
        while heap and len(levels) < count:
            s, i, par = heapq.heappop(heap)
            if par == required:
                levels.append(base + s)
            if i + 1 < len(norm):
                heapq.heappush(heap, (s + norm[i + 1], i + 1, par ^ 1))
                heapq.heappush(heap, (s - norm[i] + norm[i + 1], i + 1, par))
    return levels[:count]


def exact_low_spectrum_1d(n_sites: int, coupling: float, count: int = 6) -> np.ndarray:
    """Lowest ``count`` eigenvalues of the periodic chain, both parity sectors.

    Degenerate levels appear with their multiplicity.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if coupling < 0:
        raise ValueError("coupling must be >= 0")
    levels = _sector_levels(n_sites, coupling, 0, count)
    levels += _sector_levels(n_sites, coupling, 1, count)
    return np.sort(np.array(levels))[:count]


def gap_1d(n_sites: int, coupling: float) -> float:
    """Energy gap between the two lowest levels of the periodic chain."""
    lo = exact_low_spectrum_1d(n_sites, coupling, 2)
    return float(lo[1] - lo[0])


def chi0_exact_1d(n_sites: int, coupling: float) -> float:
    """Ground-state fidelity susceptibility: sum of sin^2 k / (4 eps_k^4)."""
    ks = _positive_half(n_sites, 0)
    eps = dispersion(ks, coupling)
    return float(np.sum(np.sin(ks) ** 2 / (4.0 * eps**4)))


def bogoliubov_fidelity(n_sites: int, coupling_a: float, coupling_b: float) -> float:
    """Squared overlap of ground states at two couplings.

    Product over the +k parity-0 modes of cos^2((theta_k(a) - theta_k(b))/2).
    """
    ks = _positive_half(n_sites, 0)
    dtheta = bogoliubov_angle(ks, coupling_a) - bogoliubov_angle(ks, coupling_b)
    return float(np.prod(np.cos(dtheta / 2.0) ** 2))


def ed_hamiltonian(lattice: Lattice, coupling: float) -> scipy.sparse.csr_matrix:
    """Sparse matrix of the Hamiltonian in the full configuration basis."""
    return _hamiltonian_csr(TfimHamiltonian(lattice, coupling))
