"""Transverse-field Ising model on chains and square lattices.

Spin configurations are arrays of sigma^z eigenvalues stored as +/-1
integers, so bond products and magnetizations read directly off the raw
arrays.  The Hamiltonian is

    H = -coupling * sum_<ij> z_i z_j - sum_i X_i

with X_i flipping the spin at site i.  Bonds are deduplicated unordered
pairs; on the periodic two-site chain the two bonds joining the same pair
collapse to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Lattice",
    "TfimHamiltonian",
    "NonFiniteAmplitudeError",
    "connected_configurations",
    "local_energy",
    "dh_dlambda_local",
]

_FULL_BASIS_SITE_LIMIT = 24


class NonFiniteAmplitudeError(ValueError):
    """A log-amplitude came back non-finite at some configuration."""

    def __init__(self, message, configuration=None):
        super().__init__(message)
        self.configuration = configuration


@dataclass(frozen=True)
class Lattice:
    """Periodic or open chain (dimension 1) or square lattice (dimension 2)."""

    dimension: int
    extent: int
    boundary: str = "periodic"

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.extent < 2:
            raise ValueError(f"extent must be at least 2, got {self.extent}")
        if self.boundary not in ("periodic", "open"):
            raise ValueError(
                f"boundary must be 'periodic' or 'open', got {self.boundary!r}"
            )

    @property
    def n_sites(self) -> int:
        return self.extent if self.dimension == 1 else self.extent**2

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.extent,) * self.dimension

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @cached_property
    def bonds(self) -> np.ndarray:
        """Nearest-neighbor pairs as an (n_bonds, 2) array, each pair once."""
        L = self.extent
        pairs = set()
        if self.dimension == 1:
            for i in range(L):
                j = i + 1
                if j == L:
                    if self.boundary == "open":
                        continue
                    j = 0
                if i != j:
                    pairs.add((min(i, j), max(i, j)))
        else:
            for r in range(L):
                for c in range(L):
                    i = r * L + c
                    for dr, dc in ((0, 1), (1, 0)):
                        rr, cc = r + dr, c + dc
                        if rr == L or cc == L:
                            if self.boundary == "open":
                                continue
                            rr %= L
                            cc %= L
                        j = rr * L + cc
                        if i != j:
                            pairs.add((min(i, j), max(i, j)))
        out = np.array(sorted(pairs), dtype=np.intp)
        return out.reshape(-1, 2)

    def site_index(self, *coords) -> int:
        if len(coords) != self.dimension:
            raise ValueError("coordinate count does not match dimension")
        if self.dimension == 1:
            return coords[0] % self.extent
        r, c = coords
        return (r % self.extent) * self.extent + (c % self.extent)

    def validate_configuration(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[-1] != self.n_sites:
            raise ValueError(
                f"configuration has {x.shape[-1]} sites, lattice has {self.n_sites}"
            )
        if not np.all(np.abs(x) == 1):
            raise ValueError("configuration entries must be +1 or -1")
        return x

    def translate(self, x: np.ndarray, shift) -> np.ndarray:
        """Translate configuration(s) by a lattice vector.

        ``shift`` is an integer for chains or a pair ``(dr, dc)`` for square
        lattices.  Only defined on periodic lattices.
        """
        if not self.periodic:
            raise ValueError("translation requires a periodic lattice")
        x = np.asarray(x)
        if self.dimension == 1:
            return np.roll(x, int(np.asarray(shift).item() if np.ndim(shift) else shift), axis=-1)
        dr, dc = shift
        L = self.extent
        grid = x.reshape(x.shape[:-1] + (L, L))
        grid = np.roll(np.roll(grid, dr, axis=-2), dc, axis=-1)
        return grid.reshape(x.shape)

    def all_configurations(self) -> np.ndarray:
        """Every configuration as an (2^N, N) int8 array.

        Row ``b`` holds the configuration whose index is ``b`` under
        :meth:`configuration_index`; limited to 24 sites.
        """
        N = self.n_sites
        if N > _FULL_BASIS_SITE_LIMIT:
            raise ValueError(
                f"full basis limited to {_FULL_BASIS_SITE_LIMIT} sites, lattice has {N}"
            )
        idx = np.arange(1 << N, dtype=np.int64)
        bits = (idx[:, None] >> np.arange(N)) & 1
        return (1 - 2 * bits).astype(np.int8)

    def configuration_index(self, x) -> np.ndarray:
        """Basis index of configuration(s): bit i set when spin i is down."""
        x = self.validate_configuration(x)
        bits = ((1 - x.astype(np.int64)) // 2) << np.arange(self.n_sites)
        return bits.sum(axis=-1)


@dataclass(frozen=True)
class TfimHamiltonian:
    """H = -coupling * sum_bonds z z - sum_sites X on a fixed lattice."""

    lattice: Lattice
    coupling: float

    def __post_init__(self):
        if not np.isfinite(self.coupling) or self.coupling < 0:
            raise ValueError(f"coupling must be finite and >= 0, got {self.coupling}")


def bond_product_sum(lattice: Lattice, x: np.ndarray) -> np.ndarray:
    """sum over bonds of x_i x_j, batched over leading axes."""
    b = lattice.bonds
    x = np.asarray(x)
    return np.einsum("...i,...i->...", x[..., b[:, 0]], x[..., b[:, 1]])


def diagonal_energies(h: TfimHamiltonian, x: np.ndarray) -> np.ndarray:
    """Diagonal matrix element <x|H|x>, batched."""
    return -h.coupling * bond_product_sum(h.lattice, x).astype(np.float64)


def dh_dlambda_local(h: TfimHamiltonian, x: np.ndarray) -> np.ndarray:
    """Local value of dH/d(coupling): minus the bond product sum (diagonal)."""
    h.lattice.validate_configuration(x)
    return -bond_product_sum(h.lattice, x).astype(np.float64)


def connected_configurations(h: TfimHamiltonian, x: np.ndarray):
    """Configurations with nonzero <x'|H|x>, as (configuration, element) pairs.

    The diagonal pair comes first, then one single-site flip per site with
    element -1.  N+1 entries in total.
    """
    x = h.lattice.validate_configuration(x)
    if x.ndim != 1:
        raise ValueError("connected_configurations expects a single configuration")
    out = [(x.copy(), float(diagonal_energies(h, x)))]
    for i in range(h.lattice.n_sites):
        xf = x.copy()
        xf[i] = -xf[i]
        out.append((xf, -1.0))
    return out


def connected_batch(h: TfimHamiltonian, x: np.ndarray):
    """Batched connected set: (n, N+1, N) configurations, (n, N+1) elements."""
    x = h.lattice.validate_configuration(np.atleast_2d(x))
    n, N = x.shape
    configs = np.repeat(x[:, None, :], N + 1, axis=1)
    rows = np.arange(N)
    configs[:, 1 + rows, rows] *= -1
    elems = np.full((n, N + 1), -1.0)
    elems[:, 0] = diagonal_energies(h, x)
    return configs, elems


def local_energy(h: TfimHamiltonian, logpsi, x: np.ndarray) -> complex:
    """<x|H|Psi>/<x|Psi> for a log-amplitude callable ``logpsi``."""
    pairs = connected_configurations(h, x)
    ref = complex(logpsi(pairs[0][0]))
    if not np.isfinite(ref.real) or not np.isfinite(ref.imag):
        raise NonFiniteAmplitudeError(
            "log-amplitude is non-finite at the sample configuration", x
        )
    total = complex(pairs[0][1])
    for xp, elem in pairs[1:]:
        lp = complex(logpsi(xp))
        if not np.isfinite(lp.real) or not np.isfinite(lp.imag):
            raise NonFiniteAmplitudeError(
                "log-amplitude is non-finite at a connected configuration", xp
            )
        total += elem * np.exp(lp - ref)
    return total


def basis_flip_indices(lattice: Lattice) -> np.ndarray:
    """(2^N, N) table: index of the configuration with site i flipped."""
    N = lattice.n_sites
    if N > _FULL_BASIS_SITE_LIMIT:
        raise ValueError("flip table limited to 24 sites")
    idx = np.arange(1 << N, dtype=np.int64)
    return idx[:, None] ^ (np.int64(1) << np.arange(N, dtype=np.int64))
