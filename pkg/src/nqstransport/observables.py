"""Physical diagnostics of sampled and checkpointed states.

Energies, variance-based quality scores, overlaps against exact manifolds,
state-to-state fidelities, the fidelity susceptibility extracted from
neighboring-coupling checkpoints, and magnetization moments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ansatz import WavefunctionParameters, log_amplitude_batch
from .exact import EdResult
from .reference import ReferenceState
from .sampler import SampleBatch, expectation

__all__ = [
    "ObservableRecord",
    "v_score",
    "amplitude_vector",
    "manifold_infidelity",
    "best_manifold_match",
    "nqs_fidelity",
    "fidelity_susceptibility",
    "magnetization_moments",
    "binder_cumulant",
]

log = logging.getLogger(__name__)


@dataclass
class ObservableRecord:
    """One results row: state quality at a single coupling."""

    coupling: float
    track: str
    energy: float
    energy_stderr: float
    variance: float
    v_score: float
    converged: bool
    iterations: int
    infidelity: float | None = None
    m2: float | None = None
    m4: float | None = None


def v_score(energy: float, variance: float, n_sites: int) -> float:
    """Dimensionless quality metric N*Var/E^2; zero for exact eigenstates."""
    e = float(np.real(energy))
    if e == 0.0:
        raise ValueError("V-score undefined at zero energy")
    return n_sites * float(variance) / e**2


def amplitude_vector(p: WavefunctionParameters, ref: ReferenceState) -> np.ndarray:
    """Normalized amplitudes over the full configuration basis."""
    basis = p.lattice.all_configurations()
    logs = log_amplitude_batch(p, ref, basis)
    v = np.exp(logs - logs.real.max())
    return v / np.linalg.norm(v)


def _projection_infidelity(psi: np.ndarray, basis: np.ndarray) -> float:
    basis = np.asarray(basis)
    if basis.ndim == 1:
        basis = basis[:, None]
    if basis.ndim != 2 or basis.shape[0] < basis.shape[1]:
        raise ValueError("manifold basis must hold one column per member state")
    gram = basis.conj().T @ basis
    if not np.allclose(gram, np.eye(basis.shape[1]), atol=1e-8):
        raise ValueError("manifold basis columns are not orthonormal")
    proj = basis.conj().T @ psi
    return float(max(0.0, 1.0 - np.sum(np.abs(proj) ** 2)))


def manifold_infidelity(p: WavefunctionParameters, ref: ReferenceState, basis: np.ndarray) -> float:
    """1 minus the squared projection onto a degenerate exact manifold.

    ``basis`` holds orthonormal columns spanning the manifold (one column
    for a non-degenerate level).
    """
    return _projection_infidelity(amplitude_vector(p, ref), basis)


def best_manifold_match(p: WavefunctionParameters, ref: ReferenceState, ed: EdResult):
    """Degenerate group with the largest overlap, and the infidelity to it.

    Robust identification of which exact level a state sits on, usable
    across level crossings where energy ordering alone is ambiguous.
    Returns (group level indices, infidelity).
    """
    psi = amplitude_vector(p, ref)
    best = None
    for group in ed.degenerate_groups():
        infid = _projection_infidelity(psi, ed.eigenvectors[:, list(group)])
        if best is None or infid < best[1]:
            best = (group, infid)
    return best


def nqs_fidelity(
    pA: WavefunctionParameters,
    pB: WavefunctionParameters,
    ref: ReferenceState,
    batchA: SampleBatch | None = None,
    batchB: SampleBatch | None = None,
) -> tuple[float, float]:
    """Squared overlap between two states of the same architecture.

    Without batches the exact normalized overlap is computed by full
    summation. With batches (one drawn from each state) the symmetric
    two-ratio estimator E_A[psiB/psiA] * E_B[psiA/psiB] is used, with the
    error propagated from both factors.
    """
    if batchA is None or batchB is None:
        basis = pA.lattice.all_configurations()
        la = log_amplitude_batch(pA, ref, basis)
        lb = log_amplitude_batch(pB, ref, basis)
        a = np.exp(la - la.real.max())
        b = np.exp(lb - lb.real.max())
        num = np.abs(np.vdot(a, b)) ** 2
        den = np.vdot(a, a).real * np.vdot(b, b).real
        return float(num / den), 0.0
    logB_atA = log_amplitude_batch(pB, ref, batchA.configurations)
    logA_atB = log_amplitude_batch(pA, ref, batchB.configurations)
    rA, eA = expectation(batchA, np.exp(logB_atA - batchA.log_amplitudes))
    rB, eB = expectation(batchB, np.exp(logA_atB - batchB.log_amplitudes))
    f = float(np.real(rA * rB))
    stderr = float(np.abs(rB) * eA + np.abs(rA) * eB)
    if abs(rA) < 3 * eA and abs(rB) < 3 * eB:
        log.warning("fidelity factors indistinguishable from zero; reporting 0 (disjoint support?)")
        return 0.0, stderr
    return float(np.clip(f, 0.0, 1.0 + stderr)), stderr


def fidelity_susceptibility(f_minus: float, f_plus: float, eps: float) -> float:
    """Curvature of the log-fidelity between neighboring couplings.

    Extracted from the two symmetric neighbors as -ln(F- * F+)/(2 eps^2),
    the quadratic coefficient of -ln F(coupling, coupling +- eps).
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if f_minus <= 0.0 or f_plus <= 0.0:
        raise ValueError("fidelities must be positive")
    return float(-np.log(f_minus * f_plus) / (2.0 * eps**2))


def magnetization_moments(batch: SampleBatch) -> tuple[float, float]:
    """Second and fourth moments of the mean magnetization per sample."""
    m = batch.configurations.mean(axis=1).astype(float)
    m2, _ = expectation(batch, m**2)
    m4, _ = expectation(batch, m**4)
    return float(np.real(m2)), float(np.real(m4))


def binder_cumulant(batch: SampleBatch) -> float:
    """Dimensionless moment ratio 1 - <m^4>/(3 <m^2>^2)."""
    m2, m4 = magnetization_moments(batch)
    if m2 == 0.0:
        raise ValueError("Binder cumulant undefined for vanishing second moment")
    return 1.0 - m4 / (3.0 * m2**2)
