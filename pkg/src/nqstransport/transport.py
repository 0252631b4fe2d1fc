"""Adiabatic continuation of eigenstates along a coupling grid.

Each track starts from a perturbative reference at a small coupling,
pre-optimizes it there, then walks the grid: set the target energy one
step ahead from first-order perturbation theory, iterate the solver to
convergence, record a checkpoint, repeat. Tracks are independent and can
run in parallel; all randomness derives from (seed, track, step,
iteration), so scheduling order never changes results.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ansatz import AnsatzConfig, WavefunctionParameters, initialize_parameters, log_amplitude_batch
from .lattice import Lattice, TfimHamiltonian, connected_batch, dh_dlambda_local
from .observables import v_score
from .reference import ExcitationSpec, ReferenceState, build_reference_state
from .sampler import SampleBatch, SamplerConfig, expectation, sample
from .solver import SolverConfig, converged, ipi_step

__all__ = [
    "TrackSpec",
    "TransportPlan",
    "TransportState",
    "perturbative_target",
    "measure_energy",
    "transport_eigenstate",
    "transport_all",
]

WARM_BURN_IN = 10

# The warm-up at the first grid point starts cold, so it runs the same
# solver with at least this much damping headroom; grid steps inherit a
# near-converged state and use the configured schedule unchanged. The
# fresh-initialization Jacobian is uniformly tiny and its small singular
# values carry no signal, so the warm-up also clamps the pseudoinverse
# cutoff hard; without this the first updates amplify null-direction
# noise and the parameters drift into badly conditioned territory.
PREOPT_ETA_INITIAL = 0.1
PREOPT_ETA_FINAL = 0.02
PREOPT_S_CUTOFF = 1e-2


@dataclass(frozen=True)
class TrackSpec:
    """One eigenstate to transport, named by its reference excitation."""

    excitation: ExcitationSpec
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.excitation.label())


@dataclass(frozen=True)
class TransportPlan:
    lattice: Lattice
    coupling_initial: float
    coupling_final: float
    n_steps: int
    tracks: tuple[TrackSpec, ...]
    ansatz: AnsatzConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0
    couplings: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.couplings is None:
            if self.coupling_final < self.coupling_initial:
                raise ValueError("coupling_final must be >= coupling_initial")
            if self.n_steps < 1:
                raise ValueError("n_steps must be >= 1")
        else:
            cs = tuple(float(c) for c in self.couplings)
            if len(cs) < 1 or any(b < a for a, b in zip(cs, cs[1:])):
                raise ValueError("explicit couplings must be non-decreasing and nonempty")
            object.__setattr__(self, "couplings", cs)
        if not self.tracks:
            raise ValueError("plan needs at least one track")
        labels = [t.label for t in self.tracks]
        if len(set(labels)) != len(labels):
            raise ValueError("track labels must be unique")

    @property
    def grid(self) -> np.ndarray:
        """Coupling values visited, initial point included."""
        if self.couplings is not None:
            return np.asarray(self.couplings)
        return np.linspace(self.coupling_initial, self.coupling_final, self.n_steps + 1)


@dataclass
class TransportState:
    """Checkpointed snapshot of one track at one coupling."""

    track: str
    coupling: float
    parameters: WavefunctionParameters
    energy: float
    energy_stderr: float
    variance: float
    v_score: float
    iterations: int
    converged: bool

    def __post_init__(self):
        if not np.isfinite(self.energy):
            raise ValueError("energy must be finite")
        if self.variance < 0.0:
            raise ValueError("variance must be >= 0")


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def measure_energy(p: WavefunctionParameters, ref: ReferenceState, h: TfimHamiltonian, batch: SampleBatch):
    """Local-energy statistics of a batch: (mean, stderr, variance)."""
    X = batch.configurations
    n, N = X.shape
    confs, elems = connected_batch(h, X)
    logs = log_amplitude_batch(p, ref, confs.reshape(n * (N + 1), N)).reshape(n, N + 1)
    e_loc = (elems * np.exp(logs - logs[:, 0][:, None])).sum(axis=1)
    energy, stderr = expectation(batch, e_loc)
    variance = float(batch.weights @ np.abs(e_loc - energy) ** 2)
    return float(energy.real), stderr, variance


def perturbative_target(state: TransportState, delta: float, batch: SampleBatch) -> float:
    """First-order target energy at the next coupling."""
    h = TfimHamiltonian(state.parameters.lattice, state.coupling)
    slope, _ = expectation(batch, dh_dlambda_local(h, batch.configurations))
    return state.energy + delta * float(slope.real)


def _optimize(p, ref, h, omega, plan: TransportPlan, label: str, step: int, cfg: SolverConfig | None = None):
    """Run solver iterations until the variance cutoff or the budget M."""
    cfg = plan.solver if cfg is None else cfg
    warm = None
    diag = None
    done = False
    for t in range(cfg.n_iterations):
        scfg = replace(plan.sampler, seed=_stable_seed(plan.seed, label, step, t))
        batch = sample(p, ref, scfg, initial=warm, burn_in=None if warm is None else WARM_BURN_IN)
        p, diag = ipi_step(p, ref, h, omega, batch, cfg, t)
        warm = batch.final_configurations
        if converged(diag, cfg.variance_cutoff):
            done = True
            break
    return p, diag.iteration + 1, done


def _measurement_batch(p, ref, plan: TransportPlan, label: str, step: int) -> SampleBatch:
    scfg = replace(plan.sampler, seed=_stable_seed(plan.seed, label, step, "measure"))
    return sample(p, ref, scfg)


def _record_state(p, ref, h, plan, label, coupling, iterations, done, step) -> tuple[TransportState, SampleBatch]:
    batch = _measurement_batch(p, ref, plan, label, step)
    energy, stderr, variance = measure_energy(p, ref, h, batch)
    state = TransportState(
        track=label,
        coupling=float(coupling),
        parameters=p,
        energy=energy,
        energy_stderr=stderr,
        variance=variance,
        v_score=v_score(energy, variance, plan.lattice.n_sites),
        iterations=iterations,
        converged=done,
    )
    return state, batch


def transport_eigenstate(
    plan: TransportPlan,
    track: TrackSpec,
    on_checkpoint=None,
    resume: list[TransportState] | None = None,
) -> list[TransportState]:
    """Carry one eigenstate across the coupling grid.

    ``resume`` takes previously recorded states for this track (ordered by
    coupling); transport continues after the last one. Each completed grid
    point is passed to ``on_checkpoint`` as it is produced.
    """
    grid = plan.grid
    ref = build_reference_state(plan.lattice, track.excitation)
    states: list[TransportState] = []

    if resume:
        states = list(resume)
        if len(states) > len(grid):
            raise ValueError("resume carries more states than grid points")
        p = states[-1].parameters
        start = len(states)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(_stable_seed(plan.seed, track.label, "init")))
        p = initialize_parameters(plan.lattice, plan.ansatz, rng)
        coupling0 = float(grid[0])
        h0 = TfimHamiltonian(plan.lattice, coupling0)
        omega0 = ref.energy_estimate(coupling0)
        warmup = replace(
            plan.solver,
            eta_initial=max(plan.solver.eta_initial, PREOPT_ETA_INITIAL),
            eta_final=max(plan.solver.eta_final, PREOPT_ETA_FINAL),
            s_cutoff=max(plan.solver.s_cutoff, PREOPT_S_CUTOFF),
        )
        p, _, _ = _optimize(p, ref, h0, omega0, plan, track.label, "preopt", cfg=warmup)
        # The coarse pre-optimization caps how far the variance can drop, so
        # the first grid point gets the same production-cutoff polish every
        # later point receives, targeting the energy the warm state reached.
        batch0 = _measurement_batch(p, ref, plan, track.label, "preopt-measure")
        energy0, _, _ = measure_energy(p, ref, h0, batch0)
        p, iterations, done = _optimize(p, ref, h0, energy0, plan, track.label, 0)
        state, _ = _record_state(p, ref, h0, plan, track.label, coupling0, iterations, done, 0)
        states.append(state)
        if on_checkpoint is not None:
            on_checkpoint(state)
        start = 1

    for step in range(start, len(grid)):
        coupling = float(grid[step])
        prev = states[-1]
        delta = coupling - prev.coupling
        batch = _measurement_batch(p, ref, plan, track.label, f"target-{step}")
        omega = perturbative_target(prev, delta, batch)
        h = TfimHamiltonian(plan.lattice, coupling)
        p, iterations, done = _optimize(p, ref, h, omega, plan, track.label, step)
        state, _ = _record_state(p, ref, h, plan, track.label, coupling, iterations, done, step)
        states.append(state)
        if on_checkpoint is not None:
            on_checkpoint(state)
    return states


def _run_track(args):
    plan, track = args
    return track.label, transport_eigenstate(plan, track)


def transport_all(
    plan: TransportPlan,
    workers: int = 1,
    on_checkpoint=None,
    resume: dict[str, list[TransportState]] | None = None,
):
    """All tracks of the plan; returns ({label: states}, {label: error}).

    Tracks share nothing, so results are identical whether they run
    sequentially or across ``workers`` processes. Failures are isolated
    per track.
    """
    results: dict[str, list[TransportState]] = {}
    errors: dict[str, str] = {}
    resume = resume or {}
    if workers > 1 and on_checkpoint is None and not resume:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {t.label: pool.submit(_run_track, (plan, t)) for t in plan.tracks}
            for label, fut in futures.items():
                try:
                    results[label] = fut.result()[1]
                except Exception as exc:
                    errors[label] = f"{type(exc).__name__}: {exc}"
        return results, errors
    for track in plan.tracks:
        try:
            results[track.label] = transport_eigenstate(
                plan, track, on_checkpoint=on_checkpoint, resume=resume.get(track.label)
            )
        except Exception as exc:
            errors[track.label] = f"{type(exc).__name__}: {exc}"
    return results, errors
