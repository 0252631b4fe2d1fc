"""Neural correction factor: forward pass, symmetries, and derivatives."""

import numpy as np
import pytest

from nqstransport.ansatz import (
    AnsatzConfig,
    WavefunctionParameters,
    encoder_forward,
    initialize_parameters,
    local_energy_gradient,
    log_amplitude_batch,
    log_jacobian_batch,
    rbm_log,
    table_defaults,
)
from nqstransport.lattice import Lattice, TfimHamiltonian, local_energy
from nqstransport.reference import ExcitationSpec, build_reference_state

SMALL = AnsatzConfig(blocks=1, embed_dim=2, rbm_channels=2)


def _setup(dimension, extent, config=SMALL, seed=3):
    lat = Lattice(dimension, extent)
    ref = build_reference_state(lat, ExcitationSpec())
    rng = np.random.default_rng(seed)
    p = initialize_parameters(lat, config, rng)
    return lat, ref, p


def test_table_defaults():
    cfg = table_defaults(1, 8)
    assert (cfg.blocks, cfg.embed_dim, cfg.rbm_channels) == (2, 4, 4)
    assert table_defaults(2, 3).embed_dim == 8


def test_vector_round_trip():
    lat, _, p = _setup(1, 6)
    vec = p.to_vector()
    assert vec.dtype == np.float64
    assert vec.shape == (p.n_parameters,)
    total = sum(
        int(np.prod(shape)) * (2 if is_complex else 1)
        for _, shape, is_complex in p.layout
    )
    assert total == p.n_parameters
    q = p.replace_vector(vec.copy())
    assert np.array_equal(q.to_vector(), vec)
    for name in p.blocks:
        assert np.array_equal(np.asarray(q.blocks[name]), np.asarray(p.blocks[name]))


@pytest.mark.parametrize("dimension,extent", [(1, 6), (2, 3)])
def test_translation_invariance(dimension, extent):
    lat, ref, p = _setup(dimension, extent)
    rng = np.random.default_rng(11)
    X = rng.choice([-1, 1], size=(12, lat.n_sites)).astype(np.int8)
    base = log_amplitude_batch(p, ref, X)
    shifts = [(1,), (2,)] if dimension == 1 else [(1, 0), (0, 1), (2, 2)]
    for shift in shifts:
        moved = log_amplitude_batch(p, ref, lat.translate(X, shift))
        assert np.abs(moved - base).max() < 1e-10


def test_encoder_shifts_with_the_configuration():
    lat, _, p = _setup(1, 6)
    rng = np.random.default_rng(5)
    x = rng.choice([-1, 1], size=lat.n_sites).astype(np.int8)
    y = encoder_forward(p, x)
    y_shift = encoder_forward(p, lat.translate(x, (1,)))
    assert np.allclose(y_shift, np.roll(y, 1, axis=-1), atol=1e-12)


def test_encoder_output_stays_inside_unit_interval():
    lat, _, p = _setup(1, 8)
    # crank every weight far outside the initialization scale
    big = p.replace_vector(p.to_vector() * 1e3 + 0.7)
    rng = np.random.default_rng(13)
    X = rng.choice([-1, 1], size=(20, lat.n_sites)).astype(np.int8)
    y = encoder_forward(big, X)
    assert np.abs(y).max() < 1.0


def test_zero_mixing_reduces_to_reference():
    lat, ref, p = _setup(1, 6)
    names = [name for name, _, _ in p.layout]
    vec = p.to_vector()
    offset = 0
    for name, shape, is_complex in p.layout:
        width = int(np.prod(shape)) * (2 if is_complex else 1)
        if name == "mix_b":
            vec[offset : offset + width] = 0.0
        offset += width
    stripped = p.replace_vector(vec)
    X = lat.all_configurations()
    logs = log_amplitude_batch(stripped, ref, X)
    expected = float(stripped.blocks["mix_a"]) * ref.log_amplitude(X)
    assert np.array_equal(logs, expected)
    assert "mix_a" in names and "mix_b" in names


def test_rbm_log_validates_augmented_shape():
    lat, _, p = _setup(1, 6)
    with pytest.raises(ValueError):
        rbm_log(p, np.zeros((p.config.embed_dim + 2, lat.n_sites)))


@pytest.mark.parametrize(
    "dimension,extent,config",
    [
        (1, 4, table_defaults(1, 4)),
        (2, 2, SMALL),
    ],
)
def test_jacobian_matches_finite_differences(dimension, extent, config):
    lat = Lattice(dimension, extent)
    ref = build_reference_state(lat, ExcitationSpec())
    rng = np.random.default_rng(7)
    p = initialize_parameters(lat, config, rng)
    X = rng.choice([-1, 1], size=(5, lat.n_sites)).astype(np.int8)
    _, jac = log_jacobian_batch(p, ref, X)
    vec = p.to_vector()
    eps = 1e-6
    fd = np.empty_like(jac)
    for mu in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[mu] += eps
        dn[mu] -= eps
        f_up = log_amplitude_batch(p.replace_vector(up), ref, X)
        f_dn = log_amplitude_batch(p.replace_vector(dn), ref, X)
        fd[:, mu] = (f_up - f_dn) / (2.0 * eps)
    scale = np.abs(fd).max()
    assert np.abs(jac - fd).max() / scale < 1e-6


def test_local_energy_gradient_matches_finite_differences():
    lat = Lattice(1, 4)
    ref = build_reference_state(lat, ExcitationSpec())
    h = TfimHamiltonian(lat, 0.5)
    rng = np.random.default_rng(19)
    p = initialize_parameters(lat, SMALL, rng)
    x = rng.choice([-1, 1], size=lat.n_sites).astype(np.int8)
    grad = local_energy_gradient(p, ref, h, x)
    vec = p.to_vector()
    eps = 1e-6
    fd = np.empty(vec.size, dtype=np.complex128)
    for mu in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[mu] += eps
        dn[mu] -= eps

        def eloc(v):
            q = p.replace_vector(v)
            return local_energy(
                h, lambda c: log_amplitude_batch(q, ref, np.atleast_2d(c))[0], x
            )

        fd[mu] = (eloc(up) - eloc(dn)) / (2.0 * eps)
    scale = max(np.abs(fd).max(), 1.0)
    assert np.abs(grad - fd).max() / scale < 1e-6


def test_local_energy_gradient_rejects_batches():
    lat = Lattice(1, 4)
    ref = build_reference_state(lat, ExcitationSpec())
    h = TfimHamiltonian(lat, 0.5)
    p = initialize_parameters(lat, SMALL, np.random.default_rng(0))
    with pytest.raises(ValueError):
        local_energy_gradient(p, ref, h, lat.all_configurations()[:2])


def test_initialization_is_seed_deterministic():
    lat = Lattice(1, 6)
    a = initialize_parameters(lat, SMALL, np.random.default_rng(42))
    b = initialize_parameters(lat, SMALL, np.random.default_rng(42))
    assert np.array_equal(a.to_vector(), b.to_vector())
    c = initialize_parameters(lat, SMALL, np.random.default_rng(43))
    assert not np.array_equal(a.to_vector(), c.to_vector())
