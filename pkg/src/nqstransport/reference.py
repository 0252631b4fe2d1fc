"""Zeroth-order eigenstates of the decoupled (coupling -> 0) limit.

At zero coupling the ground state is the uniform superposition and every
excited level is a degenerate manifold of spin flips in the transverse
basis.  First-order degenerate perturbation theory in the bond term picks
definite combinations: the bond operator hops flips between neighboring
sites, so diagonalizing that hopping matrix inside a momentum sector fixes
the reference state used to seed a transported eigenstate.

Amplitudes live in the measurement (sigma^z) basis, where a flip set A
contributes the product of spins over A, so references evaluate directly on
sampled configurations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice

__all__ = ["ExcitationSpec", "ReferenceState", "build_reference_state"]

# Real part assigned to log |psi0| at a node of the reference amplitude.
NODE_LOG_FLOOR = -30.0
_DEFAULT_MANIFOLD_CAP = 512


@dataclass(frozen=True)
class ExcitationSpec:
    """Which zero-coupling manifold and which member of it.

    ``n_flips`` 0 means the ground state.  ``momentum`` is a tuple of integer
    momentum indices (one per lattice axis, in units of 2 pi / extent) and
    ``order`` selects by energy rank inside that momentum sector.
    """

    n_flips: int = 0
    momentum: tuple[int, ...] = ()
    order: int = 0

    def label(self) -> str:
        if self.n_flips == 0:
            return "ground"
        mom = ",".join(str(m) for m in self.momentum)
        return f"flip{self.n_flips}-k{mom}-n{self.order}"


@dataclass
class ReferenceState:
    """A fixed zero-coupling eigenstate with closed-form amplitudes."""

    lattice: Lattice
    excitation: ExcitationSpec
    members: tuple[tuple[int, ...], ...]
    amplitudes: np.ndarray
    first_order_coefficient: float
    base_energy: float

    @property
    def is_ground(self) -> bool:
        return self.excitation.n_flips == 0

    def energy_estimate(self, coupling: float) -> float:
        """First-order perturbative energy at the given coupling."""
        return self.base_energy + coupling * self.first_order_coefficient

    def raw_amplitude(self, x: np.ndarray) -> np.ndarray:
        """Unlogged amplitude, batched over leading axes."""
        x = self.lattice.validate_configuration(np.asarray(x))
        xf = x.astype(np.float64)
        out = np.zeros(x.shape[:-1], dtype=np.complex128)
        for amp, member in zip(self.amplitudes, self.members):
            if member:
                out += amp * np.prod(xf[..., list(member)], axis=-1)
            else:
                out += amp
        return out

    def log_amplitude(self, x: np.ndarray) -> np.ndarray:
        """Complex log of the amplitude with node values clamped.

        At configurations where the amplitude vanishes the real part is
        pinned to ``NODE_LOG_FLOOR`` and the phase to zero, keeping the
        quantity finite for downstream arithmetic.
        """
        amp = self.raw_amplitude(x)
        mag = np.abs(amp)
        floor = np.exp(NODE_LOG_FLOOR)
        at_node = mag < floor
        safe = np.where(at_node, 1.0, amp)
        out = np.log(np.where(at_node, floor, np.abs(safe)).astype(np.complex128))
        out += 1j * np.where(at_node, 0.0, np.angle(safe))
        return out


def _translations(lattice: Lattice):
    """All translation vectors and the translated-site tables."""
    L = lattice.extent
    if lattice.dimension == 1:
        vecs = [(v,) for v in range(L)]
    else:
        vecs = [(a, b) for a in range(L) for b in range(L)]
    tables = []
    for vec in vecs:
        if lattice.dimension == 1:
            table = [(i + vec[0]) % L for i in range(L)]
        else:
            table = [
                ((i // L + vec[0]) % L) * L + (i % L + vec[1]) % L
                for i in range(lattice.n_sites)
            ]
        tables.append(table)
    return vecs, tables


def _hopping_matrix(lattice: Lattice, members, index):
    """Projection of the bond-flip operator onto a fixed flip-count manifold.

    The bond term toggles the flips at both bond endpoints; staying inside
    the manifold requires exactly one endpoint flipped, i.e. nearest-neighbor
    hopping.  The diagonal vanishes identically.
    """
    dim = len(members)
    mat = np.zeros((dim, dim))
    for a, member in enumerate(members):
        s = set(member)
        for i, j in lattice.bonds:
            if (i in s) != (j in s):
                target = tuple(sorted(s ^ {i, j}))
                mat[index[target], a] += -1.0
    return mat


def build_reference_state(
    lattice: Lattice,
    excitation: ExcitationSpec,
    max_manifold_dim: int = _DEFAULT_MANIFOLD_CAP,
) -> ReferenceState:
    """Construct the reference eigenstate selected by ``excitation``."""
    m = excitation.n_flips
    if m < 0 or m > lattice.n_sites:
        raise ValueError(f"flip count {m} outside [0, {lattice.n_sites}]")
    if m == 0:
        return ReferenceState(
            lattice=lattice,
            excitation=excitation,
            members=((),),
            amplitudes=np.array([1.0 + 0.0j]),
            first_order_coefficient=0.0,
            base_energy=-float(lattice.n_sites),
        )
    if len(excitation.momentum) != lattice.dimension:
        raise ValueError(
            f"momentum needs {lattice.dimension} component(s), got {excitation.momentum}"
        )
    if not lattice.periodic:
        raise ValueError("momentum-resolved references require a periodic lattice")

    members = list(itertools.combinations(range(lattice.n_sites), m))
    if len(members) > max_manifold_dim:
        raise ValueError(
            f"flip manifold has dimension {len(members)}, cap is {max_manifold_dim}"
        )
    index = {mem: i for i, mem in enumerate(members)}
    hop = _hopping_matrix(lattice, members, index)

    vecs, tables = _translations(lattice)
    k = 2.0 * np.pi * np.asarray(excitation.momentum, dtype=np.float64) / lattice.extent
    phases = np.array([np.exp(-1j * np.dot(k, v)) for v in vecs])
    dim = len(members)
    projected = np.zeros((dim, dim), dtype=np.complex128)
    for phase, table in zip(phases, tables):
        perm = np.array([index[tuple(sorted(table[i] for i in mem))] for mem in members])
        projected[perm, np.arange(dim)] += phase
    projected /= len(vecs)

    # Orthonormal basis of the momentum sector from the projector columns.
    u, s, _ = np.linalg.svd(projected)
    rank = int(np.sum(s > 1e-10))
    if rank == 0:
        raise ValueError(
            f"momentum {excitation.momentum} sector is empty for {m} flips"
        )
    basis = u[:, :rank]
    block = basis.conj().T @ hop @ basis
    evals, evecs = np.linalg.eigh(block)
    if not 0 <= excitation.order < rank:
        raise ValueError(
            f"order {excitation.order} outside sector of dimension {rank}"
        )
    vec = basis @ evecs[:, excitation.order]
    vec = vec / np.linalg.norm(vec)
    # Fix the overall phase so the largest-magnitude amplitude is positive real.
    pivot = int(np.argmax(np.abs(vec)))
    vec = vec * np.exp(-1j * np.angle(vec[pivot]))
    return ReferenceState(
        lattice=lattice,
        excitation=excitation,
        members=tuple(members),
        amplitudes=vec,
        first_order_coefficient=float(evals[excitation.order]),
        base_energy=-float(lattice.n_sites) + 2.0 * m,
    )
