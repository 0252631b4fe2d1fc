"""Run files: defaults, validation messages, and digest stability."""

import dataclasses

import pytest

from nqstransport.config import (
    ConfigError,
    config_digest,
    config_from_mapping,
    load_config,
)
from nqstransport.reference import ExcitationSpec


def _minimal(dimension=1, extent=8, **extra):
    data = {"model": {"dimension": dimension, "extent": extent}}
    data.update(extra)
    return data


def test_one_dimensional_defaults():
    cfg = config_from_mapping(_minimal(1, 8))
    assert cfg.model.coupling_initial == 0.05
    assert cfg.model.coupling_final == 1.0
    assert cfg.model.n_steps == 20
    assert (cfg.ansatz.blocks, cfg.ansatz.embed_dim, cfg.ansatz.enhancement) == (2, 4, 2)
    assert cfg.solver.n_iterations == 80
    assert (cfg.solver.eta_initial, cfg.solver.eta_final) == (0.02, 0.01)
    assert cfg.solver.variance_cutoff == 5e-7
    assert cfg.solver.s_cutoff == 1e-4
    assert cfg.sampler.n_chains == 12
    assert cfg.sampler.samples_per_chain == 8
    assert cfg.tracks == (ExcitationSpec(),)
    assert cfg.seed == 0


def test_two_dimensional_defaults():
    cfg = config_from_mapping(_minimal(2, 3))
    assert cfg.model.coupling_final == 0.329
    assert cfg.model.n_steps == 25
    assert cfg.ansatz.embed_dim == 8
    assert cfg.solver.n_iterations == 100
    assert (cfg.solver.eta_initial, cfg.solver.eta_final) == (0.02, 0.0005)
    assert cfg.solver.variance_cutoff == 5e-5
    assert (cfg.sampler.n_chains, cfg.sampler.samples_per_chain) == (32, 32)


def test_overrides_apply():
    cfg = config_from_mapping(
        _minimal(
            1,
            4,
            solver={"n_iterations": 7, "eta_initial": 0.5, "eta_final": 0.5},
            sampler={"mode": "full-summation"},
            seed=17,
            tracks=["ground", {"n_flips": 1, "momentum": 1, "order": 0}],
        )
    )
    assert cfg.solver.n_iterations == 7
    assert cfg.sampler.mode == "full-summation"
    assert cfg.seed == 17
    assert cfg.tracks[1] == ExcitationSpec(1, (1,), 0)


def test_unknown_keys_are_named():
    with pytest.raises(ConfigError, match=r"solver\.learning_rate is not a recognized field"):
        config_from_mapping(_minimal(solver={"learning_rate": 0.1}))
    with pytest.raises(ConfigError, match=r"config\.extra is not a recognized field"):
        config_from_mapping(_minimal(extra=1))


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigError, match="n_steps"):
        config_from_mapping(_minimal(model={"dimension": 1, "extent": 8, "n_steps": 0}))
    with pytest.raises(ConfigError, match="dimension"):
        config_from_mapping({"model": {"dimension": 3, "extent": 4}})
    with pytest.raises(ConfigError, match="extent"):
        config_from_mapping({"model": {"dimension": 1}})
    with pytest.raises(ConfigError, match="boundary"):
        config_from_mapping(_minimal(model={"dimension": 1, "extent": 8, "boundary": "open"}))
    with pytest.raises(ConfigError, match="seed"):
        config_from_mapping(_minimal(seed=True))
    with pytest.raises(ConfigError, match="tracks"):
        config_from_mapping(_minimal(tracks=[]))
    with pytest.raises(ConfigError, match="distinct"):
        config_from_mapping(_minimal(tracks=["ground", "ground"]))


def test_schema_version_gate():
    with pytest.raises(ConfigError, match="schema_version"):
        config_from_mapping(_minimal(schema_version=99))


def test_digest_is_stable_and_sensitive():
    a = config_from_mapping(_minimal(1, 8))
    b = config_from_mapping(_minimal(1, 8))
    assert config_digest(a) == config_digest(b)
    assert len(config_digest(a)) == 64
    assert a.run_id() == config_digest(a)[:12]
    c = config_from_mapping(_minimal(1, 8, seed=1))
    assert config_digest(a) != config_digest(c)
    d = config_from_mapping(_minimal(1, 8, solver={"s_cutoff": 1e-5}))
    assert config_digest(a) != config_digest(d)
    # the output directory is bookkeeping, not physics
    e = config_from_mapping(_minimal(1, 8, output_dir="elsewhere"))
    assert config_digest(a) == config_digest(e)


def test_plan_round_trip():
    cfg = config_from_mapping(
        _minimal(1, 4, sampler={"mode": "full-summation"}, tracks=["ground"])
    )
    plan = cfg.plan()
    assert plan.lattice.n_sites == 4
    assert plan.grid[0] == 0.05
    assert plan.grid[-1] == 1.0
    assert plan.tracks[0].label == "ground"
    assert plan.solver == cfg.solver


def test_load_config_from_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "model:\n  dimension: 1\n  extent: 6\nsolver:\n  n_iterations: 5\nseed: 9\n"
    )
    cfg = load_config(path)
    assert cfg.model.extent == 6
    assert cfg.solver.n_iterations == 5
    assert cfg.seed == 9
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [not, a, mapping\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(bad)


def test_float_typed_integers_are_rejected():
    with pytest.raises(ConfigError, match="n_iterations"):
        config_from_mapping(_minimal(solver={"n_iterations": 7.5}))
    cfg = config_from_mapping(_minimal(solver={"n_iterations": 7.0}))
    assert cfg.solver.n_iterations == 7
    assert isinstance(cfg.solver.n_iterations, int)


def test_configs_are_frozen():
    cfg = config_from_mapping(_minimal())
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.model.extent = 10
