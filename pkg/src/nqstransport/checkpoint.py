"""Binary checkpoints for transported states.

One file per (track, grid point). The parameter vector is stored
verbatim as float64 together with a layout manifest (block names,
shapes, real/imag pairing), so a reader can rebuild the wave function
without trusting anything beyond the file and the run configuration.
Sampling streams are derived deterministically from the run seed, the
track label, and the step and iteration indices, so the stored RNG state
is that derivation tuple rather than a mutable generator snapshot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ansatz import initialize_parameters
from .transport import TransportPlan, TransportState

CHECKPOINT_SCHEMA = 1

__all__ = ["CheckpointError", "CheckpointRecord", "save_checkpoint", "load_checkpoint", "restore_track"]


class CheckpointError(RuntimeError):
    """Unreadable, inconsistent, or mismatched checkpoint file."""


@dataclass
class CheckpointRecord:
    """Decoded checkpoint contents."""

    schema_version: int
    config_digest: str
    track: str
    step: int
    coupling: float
    theta: np.ndarray
    layout: list
    energy: float
    energy_stderr: float
    variance: float
    v_score: float
    iterations: int
    converged: bool
    rng_state: dict

    def to_state(self, plan: TransportPlan) -> TransportState:
        """Rebuild the transported state under the given plan."""
        template = initialize_parameters(plan.lattice, plan.ansatz, np.random.default_rng(0))
        expected = [[name, list(shape), bool(cplx)] for name, shape, cplx in template.layout]
        if self.layout != expected:
            raise CheckpointError("checkpoint layout manifest does not match the run's wave-function shape")
        p = template.replace_vector(self.theta)
        return TransportState(
            track=self.track,
            coupling=self.coupling,
            parameters=p,
            energy=self.energy,
            energy_stderr=self.energy_stderr,
            variance=self.variance,
            v_score=self.v_score,
            iterations=self.iterations,
            converged=self.converged,
        )


def save_checkpoint(path, state: TransportState, config_digest: str, seed: int, step: int) -> None:
    """Write one grid point of one track."""
    layout = [[name, list(shape), bool(cplx)] for name, shape, cplx in state.parameters.layout]
    meta = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config_digest": config_digest,
        "track": state.track,
        "step": step,
        "coupling": state.coupling,
        "layout": layout,
        "energy": state.energy,
        "energy_stderr": state.energy_stderr,
        "variance": state.variance,
        "v_score": state.v_score,
        "iterations": state.iterations,
        "converged": state.converged,
        "rng_state": {"scheme": "derived-per-iteration", "seed": seed, "track": state.track, "step": step},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, theta=state.parameters.to_vector(), meta=np.array(json.dumps(meta, sort_keys=True)))


def load_checkpoint(path) -> CheckpointRecord:
    """Decode one checkpoint file."""
    try:
        with np.load(path, allow_pickle=False) as data:
            theta = np.asarray(data["theta"], dtype=np.float64)
            meta = json.loads(str(data["meta"]))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("schema_version") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"checkpoint {path} has unsupported schema version {meta.get('schema_version')}")
    return CheckpointRecord(
        schema_version=meta["schema_version"],
        config_digest=meta["config_digest"],
        track=meta["track"],
        step=meta["step"],
        coupling=meta["coupling"],
        theta=theta,
        layout=meta["layout"],
        energy=meta["energy"],
        energy_stderr=meta["energy_stderr"],
        variance=meta["variance"],
        v_score=meta["v_score"],
        iterations=meta["iterations"],
        converged=meta["converged"],
        rng_state=meta["rng_state"],
    )


def restore_track(directory, label: str, plan: TransportPlan, config_digest: str) -> list[TransportState]:
    """Load a track's checkpoints in step order, verifying the run digest.

    Returns the contiguous prefix of recorded states; a digest mismatch
    is a refusal, not a skip, so stale hyperparameters cannot leak into a
    resumed run.
    """
    directory = Path(directory)
    records = []
    for path in sorted(directory.glob(f"{_sanitize(label)}-step*.npz")):
        rec = load_checkpoint(path)
        if rec.config_digest != config_digest:
            raise CheckpointError(
                f"checkpoint {path} was written under config digest {rec.config_digest[:12]}, "
                f"refusing to resume under {config_digest[:12]}"
            )
        if rec.track != label:
            raise CheckpointError(f"checkpoint {path} belongs to track {rec.track!r}, not {label!r}")
        records.append(rec)
    records.sort(key=lambda r: r.step)
    states = []
    for want, rec in enumerate(records):
        if rec.step != want:
            break
        states.append(rec.to_state(plan))
    return states


def _sanitize(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label)


def checkpoint_filename(label: str, step: int) -> str:
    return f"{_sanitize(label)}-step{step:04d}.npz"
