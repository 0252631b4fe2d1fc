"""One inverse-power-iteration update of the variational parameters.

Each step assembles the sampled linear system from log-derivative rows,
projected rows, and local energies, solves it with a soft pseudoinverse
(switching to the kernel-space form when parameters outnumber samples),
and applies a damped parameter update on a cosine-annealed schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import log_jacobian_batch
from .lattice import TfimHamiltonian, connected_batch, diagonal_energies
from .sampler import SampleBatch, expectation

__all__ = [
    "SolverConfig",
    "SolverError",
    "IpiSystem",
    "IterationDiagnostics",
    "eta_schedule",
    "soft_inverse_weights",
    "soft_pseudoinverse_solve",
    "assemble_system",
    "solve_system",
    "ipi_step",
    "converged",
]


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Update-step knobs: solve regularization, damping schedule, gauge."""

    n_iterations: int = 80
    eta_initial: float = 0.02
    eta_final: float = 0.01
    s_cutoff: float = 1e-8
    shift: float = 0.0
    gauge_centering: bool = True
    trust_radius: float = 1e3
    variance_cutoff: float = 5e-7

    def __post_init__(self):
        if not (0.0 < self.eta_final <= self.eta_initial <= 1.0):
            raise ValueError("damping must satisfy 0 < eta_final <= eta_initial <= 1")
        if self.s_cutoff <= 0.0:
            raise ValueError("s_cutoff must be positive")
        if self.shift < 0.0:
            raise ValueError("diagonal shift must be >= 0")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.trust_radius <= 0.0 or self.variance_cutoff <= 0.0:
            raise ValueError("trust_radius and variance_cutoff must be positive")


@dataclass
class IpiSystem:
    """Row-scaled linear system for one update.

    Rows carry a factor sqrt(w_i), so real-part contractions of the form
    J^dagger(.) reproduce sample-weighted expectations. Uniform weights
    reduce the factor to 1/sqrt(n_total).
    """

    J: np.ndarray
    Pmat: np.ndarray
    eps: np.ndarray
    omega: float
    n_total: int
    energy: complex
    energy_stderr: float
    energy_variance: float

    def __post_init__(self):
        if self.J.shape != self.Pmat.shape:
            raise ValueError("J and Pmat shapes disagree")
        if self.eps.shape[0] != self.J.shape[0]:
            raise ValueError("eps length does not match row count")


@dataclass
class IterationDiagnostics:
    iteration: int
    energy: complex
    energy_stderr: float
    variance: float
    delta_norm: float
    eta: float
    eta_applied: float
    sigma_min: float
    sigma_max: float
    solve_path: str
    trust_rejected: bool


def eta_schedule(t: int, cfg: SolverConfig) -> float:
    """Cosine-annealed damping, eta_initial at t=0 down to eta_final at t=M."""
    M = cfg.n_iterations
    c = np.cos(0.5 * np.pi * min(t, M) / M)
    return cfg.eta_final + (cfg.eta_initial - cfg.eta_final) * c * c


def soft_inverse_weights(sigma: np.ndarray, cutoff: float) -> np.ndarray:
    """Smoothly truncated reciprocals of singular values.

    ``cutoff`` is relative to the largest singular value. A value at the
    absolute cutoff maps to half its plain reciprocal; zero maps to zero.
    """
    sigma = np.asarray(sigma, dtype=float)
    smax = sigma.max(initial=0.0)
    if smax == 0.0:
        return np.zeros_like(sigma)
    eps = cutoff * smax
    return sigma**5 / (sigma**6 + eps**6)


def soft_pseudoinverse_solve(A: np.ndarray, rhs: np.ndarray, cfg: SolverConfig, return_info: bool = False):
    """Solve A x = rhs through an SVD with soft singular-value inversion."""
    try:
        U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"SVD failed on a {A.shape[0]}x{A.shape[1]} system "
            f"(|A|_max={np.abs(A).max():.3e}, finite={np.isfinite(A).all()})"
        ) from exc
    w = soft_inverse_weights(sigma, cfg.s_cutoff)
    x = Vt.T @ (w * (U.T @ rhs))
    if return_info:
        return x, (float(sigma.min(initial=0.0)), float(sigma.max(initial=0.0)))
    return x


def _model_jacobian(p, ref, X):
    """Log-amplitudes and per-parameter log-derivatives for a batch.

    ``ref = None`` treats ``p`` as a bare model exposing
    ``log_jacobian_batch(X)`` (used for alternative parameterizations in
    tests); otherwise ``p`` is WavefunctionParameters over reference ``ref``.
    """
    if ref is None:
        return p.log_jacobian_batch(X)
    return log_jacobian_batch(p, ref, X)


def _nonfinite_report(name, arr, p):
    bad = ~np.isfinite(arr)
    if not bad.any():
        return None
    idx = np.argwhere(bad)[0]
    sample = int(idx[0])
    if arr.ndim == 1 or not hasattr(p, "layout"):
        return f"nonfinite {name} entry at sample {sample}"
    col = int(idx[1])
    offset = 0
    for block, shape, is_complex in p.layout:
        size = int(np.prod(shape, dtype=int)) * (2 if is_complex else 1)
        if col < offset + size:
            return f"nonfinite {name} entry at sample {sample}, parameter block '{block}'"
        offset += size
    return f"nonfinite {name} entry at sample {sample}, parameter {col}"


_CHUNK_ROWS = 128


def assemble_system(
    batch: SampleBatch,
    p,
    ref,
    h: TfimHamiltonian,
    omega: float,
    centering: bool = True,
) -> IpiSystem:
    """Build the update system from a sample batch.

    Projected rows follow P(x) = sum_x' H_xx' (psi(x')/psi(x)) J(x') - omega J(x),
    which equals the derivative of the local energy plus (E_loc - omega) J.
    With centering on, weighted column means are removed from J and the
    weighted energy mean from the residual, fixing the tangent-space gauge.
    """
    X = batch.configurations
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    w = batch.weights
    N = X.shape[1]

    if batch.full_basis:
        if n != 2**N:
            raise ValueError("full-basis batch does not cover the complete basis")
        logs, J = _model_jacobian(p, ref, X)
        diag = diagonal_energies(h, X)
        base = np.arange(n)
        bits = 1 << np.arange(N)
        flip_idx = base[:, None] ^ bits[None, :]
        ratios = -np.exp(logs[flip_idx] - logs[:, None])
        e_loc = diag + ratios.sum(axis=1)
        Pm = np.empty_like(J)
        for lo in range(0, n, _CHUNK_ROWS):
            hi = min(lo + _CHUNK_ROWS, n)
            Pm[lo:hi] = np.einsum("ns,nsp->np", ratios[lo:hi], J[flip_idx[lo:hi]])
        Pm += (diag - omega)[:, None] * J
    else:
        confs, elems = connected_batch(h, X)
        flat = confs.reshape(n * (N + 1), N)
        keys = (flat < 0).astype(np.int64) @ (1 << np.arange(N, dtype=np.int64))
        _, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        logs_u, J_u = _model_jacobian(p, ref, flat[first])
        inv = inv.reshape(n, N + 1)
        self_idx = inv[:, 0]
        ratios = elems * np.exp(logs_u[inv] - logs_u[self_idx][:, None])
        e_loc = ratios.sum(axis=1)
        J = J_u[self_idx]
        Pm = np.empty_like(J)
        for lo in range(0, n, _CHUNK_ROWS):
            hi = min(lo + _CHUNK_ROWS, n)
            Pm[lo:hi] = np.einsum("nc,ncp->np", ratios[lo:hi], J_u[inv[lo:hi]])
        Pm -= omega * J

    for name, arr in (("Jacobian", J), ("projected-Jacobian", Pm), ("local-energy", e_loc)):
        msg = _nonfinite_report(name, arr, p)
        if msg is not None:
            raise SolverError(msg)

    energy, stderr = expectation(batch, e_loc)
    variance = float(w @ np.abs(e_loc - energy) ** 2)
    if centering:
        J = J - (w @ J)[None, :]
        eps = e_loc - energy
    else:
        eps = e_loc.astype(np.complex128)
    sq = np.sqrt(w)
    return IpiSystem(
        J=J * sq[:, None],
        Pmat=Pm * sq[:, None],
        eps=eps * sq,
        omega=float(omega),
        n_total=n,
        energy=energy,
        energy_stderr=stderr,
        energy_variance=variance,
    )


def solve_system(system: IpiSystem, cfg: SolverConfig):
    """Parameter update direction from the assembled system.

    The real-part contractions enter through stacked real/imaginary rows.
    With n_params <= n_samples the square normal system is solved directly;
    otherwise the kernel-space identity
    (J^T P + gI)^{-1} J^T = J^T (P J^T + gI)^{-1} gives the same update
    from a smaller solve.
    """
    J_R = np.vstack([system.J.real, system.J.imag])
    P_R = np.vstack([system.Pmat.real, system.Pmat.imag])
    e_R = np.concatenate([system.eps.real, system.eps.imag])
    n_params = J_R.shape[1]
    gamma = cfg.shift
    if n_params <= system.n_total:
        A = J_R.T @ P_R
        if gamma:
            A = A + gamma * np.eye(n_params)
        delta, sig = soft_pseudoinverse_solve(A, -(J_R.T @ e_R), cfg, return_info=True)
        path = "direct"
    else:
        K = P_R @ J_R.T
        if gamma:
            K = K + gamma * np.eye(K.shape[0])
        y, sig = soft_pseudoinverse_solve(K, e_R, cfg, return_info=True)
        delta = -(J_R.T @ y)
        path = "woodbury"
    return delta, sig, path


def ipi_step(p, ref, h: TfimHamiltonian, omega: float, batch: SampleBatch, cfg: SolverConfig, t: int):
    """Assemble, solve, and apply one damped update; returns (p', diagnostics)."""
    system = assemble_system(batch, p, ref, h, omega, centering=cfg.gauge_centering)
    delta, (s_min, s_max), path = solve_system(system, cfg)
    eta = eta_schedule(t, cfg)
    dn = float(np.linalg.norm(delta))
    rejected = dn > cfg.trust_radius
    eta_applied = min(eta / 2.0, cfg.trust_radius / dn) if rejected else eta
    new_p = p.replace_vector(p.to_vector() + eta_applied * delta)
    diag = IterationDiagnostics(
        iteration=t,
        energy=system.energy,
        energy_stderr=system.energy_stderr,
        variance=system.energy_variance,
        delta_norm=dn,
        eta=eta,
        eta_applied=eta_applied,
        sigma_min=s_min,
        sigma_max=s_max,
        solve_path=path,
        trust_rejected=rejected,
    )
    return new_p, diag


def converged(diag: IterationDiagnostics, variance_cutoff: float) -> bool:
    """Early-stopping test on the energy variance."""
    return diag.variance < variance_cutoff
