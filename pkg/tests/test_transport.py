"""Carrying eigenstates along the coupling grid."""

import numpy as np
import pytest

from nqstransport.ansatz import table_defaults
from nqstransport.exact import exact_diagonalize
from nqstransport.lattice import Lattice, TfimHamiltonian
from nqstransport.observables import best_manifold_match
from nqstransport.reference import ExcitationSpec, build_reference_state
from nqstransport.sampler import SamplerConfig, full_summation_batch
from nqstransport.solver import SolverConfig
from nqstransport.transport import (
    TrackSpec,
    TransportPlan,
    TransportState,
    _stable_seed,
    perturbative_target,
    transport_all,
    transport_eigenstate,
)

from _support import table_from_state

LAT4 = Lattice(1, 4)


def _plan(**kw):
    args = dict(
        lattice=LAT4,
        coupling_initial=0.05,
        coupling_final=0.5,
        n_steps=5,
        tracks=(TrackSpec(ExcitationSpec()),),
        ansatz=table_defaults(1, 4),
        solver=SolverConfig(s_cutoff=1e-4),
        sampler=SamplerConfig(mode="full-summation"),
        seed=3,
    )
    args.update(kw)
    return TransportPlan(**args)


def test_plan_validation():
    with pytest.raises(ValueError):
        _plan(coupling_final=0.01)
    with pytest.raises(ValueError):
        _plan(n_steps=0)
    with pytest.raises(ValueError):
        _plan(tracks=())
    with pytest.raises(ValueError):
        _plan(tracks=(TrackSpec(ExcitationSpec(), label="a"), TrackSpec(ExcitationSpec(1, (0,), 0), label="a")))
    with pytest.raises(ValueError):
        _plan(couplings=(0.3, 0.2))


def test_grid_forms():
    assert np.allclose(_plan().grid, np.linspace(0.05, 0.5, 6))
    explicit = _plan(couplings=(0.1, 0.1, 0.4))
    assert np.array_equal(explicit.grid, [0.1, 0.1, 0.4])


def test_track_label_defaults_to_the_excitation():
    assert TrackSpec(ExcitationSpec()).label == "ground"
    assert TrackSpec(ExcitationSpec(1, (1,), 0), label="probe").label == "probe"


def test_stable_seed_is_deterministic_and_sensitive():
    a = _stable_seed(3, "ground", 0, 1)
    assert a == _stable_seed(3, "ground", 0, 1)
    assert a != _stable_seed(3, "ground", 0, 2)
    assert a != _stable_seed(4, "ground", 0, 1)
    assert 0 <= a < 2**64


def test_perturbative_target_is_energy_plus_slope():
    ed = exact_diagonalize(TfimHamiltonian(LAT4, 0.3), count=1, method="dense")
    model = table_from_state(LAT4, ed.eigenvectors[:, 0])
    batch = full_summation_batch(model.log_amplitude_batch, LAT4)
    state = TransportState(
        track="ground",
        coupling=0.3,
        parameters=model,
        energy=float(ed.eigenvalues[0]),
        energy_stderr=0.0,
        variance=0.0,
        v_score=0.0,
        iterations=0,
        converged=True,
    )
    pair = (batch.configurations.astype(float) * np.roll(batch.configurations.astype(float), 1, axis=1)).sum(axis=1)
    slope = float(batch.weights @ -pair)
    expected = ed.eigenvalues[0] + 0.1 * slope
    assert perturbative_target(state, 0.1, batch) == pytest.approx(expected, abs=1e-12)


def test_state_validation():
    with pytest.raises(ValueError):
        TransportState("g", 0.1, None, np.nan, 0.0, 0.0, 0.0, 1, True)
    with pytest.raises(ValueError):
        TransportState("g", 0.1, None, -1.0, 0.0, -1e-3, 0.0, 1, True)


@pytest.fixture(scope="module")
def small_run():
    plan = _plan(tracks=(TrackSpec(ExcitationSpec()), TrackSpec(ExcitationSpec(1, (1,), 0))))
    results, errors = transport_all(plan)
    assert errors == {}
    return plan, results


def test_transport_tracks_exact_levels(small_run):
    plan, results = small_run
    eds = {
        float(c): exact_diagonalize(TfimHamiltonian(LAT4, float(c)), count=8, method="dense")
        for c in plan.grid
    }
    for track in plan.tracks:
        ref = build_reference_state(LAT4, track.excitation)
        states = results[track.label]
        assert [s.coupling for s in states] == list(plan.grid)
        for s in states:
            ed = eds[s.coupling]
            group, infid = best_manifold_match(s.parameters, ref, ed)
            rel = abs(s.energy - ed.eigenvalues[group[0]]) / abs(ed.eigenvalues[group[0]])
            assert rel < 1e-3
            assert infid < 1e-2
        assert states[-1].v_score < 0.006


def test_checkpoint_callback_sees_states_in_order(small_run):
    plan, results = small_run
    seen = []
    track = plan.tracks[0]
    states = transport_eigenstate(plan, track, on_checkpoint=seen.append)
    assert seen == states
    assert [s.coupling for s in seen] == list(plan.grid)
    # a repeat run is bit-identical: all randomness is derived, not shared
    prev = results[track.label]
    for a, b in zip(states, prev):
        assert np.array_equal(a.parameters.to_vector(), b.parameters.to_vector())
        assert a.energy == b.energy


def test_resume_reproduces_the_uninterrupted_run(small_run):
    plan, results = small_run
    track = plan.tracks[0]
    full = results[track.label]
    partial = [s for s in full[:3]]
    resumed = transport_eigenstate(plan, track, resume=partial)
    assert len(resumed) == len(full)
    for a, b in zip(resumed, full):
        assert np.array_equal(a.parameters.to_vector(), b.parameters.to_vector())
        assert a.energy == b.energy
        assert a.iterations == b.iterations
    with pytest.raises(ValueError):
        transport_eigenstate(plan, track, resume=full + full)


def test_parallel_execution_matches_sequential(small_run):
    plan, results = small_run
    par_results, par_errors = transport_all(plan, workers=2)
    assert par_errors == {}
    assert set(par_results) == set(results)
    for label, states in results.items():
        for a, b in zip(par_results[label], states):
            assert np.array_equal(a.parameters.to_vector(), b.parameters.to_vector())
            assert a.energy == b.energy
            assert a.v_score == b.v_score


def test_failures_are_isolated_per_track():
    plan = _plan(
        n_steps=1,
        solver=SolverConfig(n_iterations=2, s_cutoff=1e-4),
        tracks=(
            TrackSpec(ExcitationSpec()),
            TrackSpec(ExcitationSpec(1, (0, 0), 0), label="bad-momentum"),
        ),
    )
    results, errors = transport_all(plan)
    assert "ground" in results
    assert list(errors) == ["bad-momentum"]
    assert "ValueError" in errors["bad-momentum"]
