"""Configuration sampling: single-spin-flip Metropolis and full summation.

Chains carry private RNG streams derived from (seed, chain index), so any
chain's trajectory is reproducible independently of how many chains run.
For lattices up to 24 sites the full-summation mode enumerates the basis
and weights configurations by |psi|^2 exactly, which removes sampling noise
from every downstream estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ansatz import WavefunctionParameters, log_amplitude_batch
from .lattice import Lattice
from .reference import ReferenceState

__all__ = [
    "SamplerConfig",
    "SampleBatch",
    "sample",
    "sample_from_logpsi",
    "full_summation_batch",
    "expectation",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Metropolis chain counts and schedule, or exact-summation mode."""

    mode: str = "metropolis"
    n_chains: int = 12
    samples_per_chain: int = 32
    burn_in: int = 100
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("metropolis", "full-summation"):
            raise ValueError(f"mode must be 'metropolis' or 'full-summation', got {self.mode!r}")
        if self.n_chains < 1 or self.samples_per_chain < 1:
            raise ValueError("n_chains and samples_per_chain must be >= 1")
        if self.burn_in < 0 or self.thinning < 1:
            raise ValueError("burn_in must be >= 0 and thinning >= 1")


@dataclass
class SampleBatch:
    """Weighted configurations with sampling diagnostics."""

    configurations: np.ndarray
    weights: np.ndarray
    log_amplitudes: np.ndarray
    n_chains: int
    samples_per_chain: int
    acceptance_rate: float | None = None
    frozen_chains: tuple = ()
    full_basis: bool = False
    final_configurations: np.ndarray | None = None

    @property
    def n_total(self) -> int:
        return self.configurations.shape[0]


def _chain_rngs(seed: int, n_chains: int):
    return [np.random.default_rng(np.random.SeedSequence((seed, c))) for c in range(n_chains)]


def sample_from_logpsi(
    logpsi,
    lattice: Lattice,
    cfg: SamplerConfig,
    initial: np.ndarray | None = None,
    burn_in: int | None = None,
) -> SampleBatch:
    """Metropolis sampling of |psi|^2 for a batched log-amplitude callable.

    ``initial`` (n_chains, N) warm-starts the chains; ``burn_in`` overrides
    the configured burn-in, which callers use to shorten re-equilibration
    when continuing from a previous batch.
    """
    N = lattice.n_sites
    C = cfg.n_chains
    S = cfg.samples_per_chain
    burn = cfg.burn_in if burn_in is None else burn_in
    rngs = _chain_rngs(cfg.seed, C)
    if initial is None:
        X = np.stack([r.integers(0, 2, size=N) * 2 - 1 for r in rngs]).astype(np.int8)
    else:
        X = np.array(initial, dtype=np.int8).reshape(C, N).copy()
    sweeps = burn + S * cfg.thinning
    steps = sweeps * N
    sites = np.stack([r.integers(0, N, size=steps) for r in rngs])
    us = np.stack([r.random(steps) for r in rngs])
    logv = np.asarray(logpsi(X))
    accepted = np.zeros(C, dtype=np.int64)
    accepted_burn = np.zeros(C, dtype=np.int64)
    rows = np.arange(C)
    kept_x = np.empty((S, C, N), dtype=np.int8)
    kept_l = np.empty((S, C), dtype=np.complex128)
    kept = 0
    for sweep in range(sweeps):
        for step in range(N):
            t = sweep * N + step
            prop = X.copy()
            prop[rows, sites[:, t]] *= -1
            logp = np.asarray(logpsi(prop))
            ratio = np.exp(np.minimum(2.0 * (logp.real - logv.real), 0.0))
            acc = us[:, t] < ratio
            X[acc] = prop[acc]
            logv[acc] = logp[acc]
            accepted += acc
            if sweep < burn:
                accepted_burn += acc
        if sweep >= burn and (sweep - burn + 1) % cfg.thinning == 0:
            kept_x[kept] = X
            kept_l[kept] = logv
            kept += 1
    assert kept == S
    configs = kept_x.transpose(1, 0, 2).reshape(C * S, N)
    logs = kept_l.transpose(1, 0).reshape(C * S)
    frozen = tuple(int(c) for c in np.nonzero((accepted_burn == 0) & (burn > 0))[0])
    return SampleBatch(
        configurations=configs,
        weights=np.full(C * S, 1.0 / (C * S)),
        log_amplitudes=logs,
        n_chains=C,
        samples_per_chain=S,
        acceptance_rate=float(accepted.sum()) / float(C * steps),
        frozen_chains=frozen,
        final_configurations=X.copy(),
    )


def full_summation_batch(logpsi, lattice: Lattice) -> SampleBatch:
    """Exact |psi|^2 weights over the complete configuration basis."""
    basis = lattice.all_configurations()
    logs = np.asarray(logpsi(basis))
    shift = logs.real.max()
    w = np.exp(2.0 * (logs.real - shift))
    w /= w.sum()
    return SampleBatch(
        configurations=basis,
        weights=w,
        log_amplitudes=logs,
        n_chains=1,
        samples_per_chain=basis.shape[0],
        full_basis=True,
    )


def _node_avoiding_initial(ref: ReferenceState, cfg: SamplerConfig) -> np.ndarray:
    """Per-chain starts that climb |psi0| so no chain sits on a node."""
    N = ref.lattice.n_sites
    rngs = _chain_rngs(cfg.seed, cfg.n_chains)
    X = np.stack([r.integers(0, 2, size=N) * 2 - 1 for r in rngs]).astype(np.int8)
    amp = np.abs(ref.raw_amplitude(X))
    for _ in range(2):
        for site in range(N):
            trial = X.copy()
            trial[:, site] *= -1
            trial_amp = np.abs(ref.raw_amplitude(trial))
            better = trial_amp > amp
            X[better] = trial[better]
            amp[better] = trial_amp[better]
    return X


def sample(
    p: WavefunctionParameters,
    ref: ReferenceState,
    cfg: SamplerConfig,
    initial: np.ndarray | None = None,
    burn_in: int | None = None,
) -> SampleBatch:
    """Draw a batch from the current wave function."""
    lattice = p.lattice

    def logpsi(X):
        return log_amplitude_batch(p, ref, X)

    if cfg.mode == "full-summation":
        return full_summation_batch(logpsi, lattice)
    if initial is None and not ref.is_ground:
        initial = _node_avoiding_initial(ref, cfg)
    return sample_from_logpsi(logpsi, lattice, cfg, initial=initial, burn_in=burn_in)


def expectation(batch: SampleBatch, values) -> tuple[complex, float]:
    """Weighted mean and standard error of per-configuration values.

    Full-summation batches carry zero standard error; Metropolis batches
    estimate it from the spread of per-chain means.
    """
    if callable(values):
        values = values(batch.configurations)
    vals = np.asarray(values)
    if vals.shape[0] != batch.n_total:
        raise ValueError("value count does not match batch size")
    mean = complex(np.dot(batch.weights, vals))
    if batch.full_basis:
        return mean, 0.0
    C, S = batch.n_chains, batch.samples_per_chain
    if C > 1:
        chain_means = vals.reshape(C, S).mean(axis=1)
        var = np.mean(np.abs(chain_means - mean) ** 2)
        if C > 1:
            var = var * C / (C - 1)
        err = float(np.sqrt(var / C))
    else:
        err = float(np.sqrt(np.var(vals) / max(1, S - 1)))
    return mean, err
