"""Variational wave function: reference state times an augmented RBM.

The log-amplitude is

    ln psi(x) = a * ln psi0(x) + b * ln phi(x)

with psi0 a fixed reference state and phi a complex RBM evaluated on the
spin configuration augmented by learned feature channels:

    ln phi(x) = sum_{k,r} ln cosh( bias_k + (W_k * [x, f(x)])_r )

where f is a translation-equivariant residual convolutional encoder
(normalize, widen, SiLU, narrow, add) ending in SoftSign, and * is a
circular convolution whose kernel spans the whole lattice.  Complex RBM
parameters are stored as independent real and imaginary parts, so every
variational parameter is real; Jacobians of the complex log-amplitude with
respect to those real parameters are assembled by explicit reverse-mode
differentiation, batched over configurations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .lattice import Lattice, NonFiniteAmplitudeError, TfimHamiltonian, connected_batch
from .reference import ReferenceState

__all__ = [
    "AnsatzConfig",
    "WavefunctionParameters",
    "initialize_parameters",
    "parameter_layout",
    "log_amplitude",
    "log_amplitude_batch",
    "log_jacobian",
    "log_jacobian_batch",
    "rbm_log",
    "encoder_forward",
    "local_energy_gradient",
]


@dataclass(frozen=True)
class AnsatzConfig:
    """Shape and initialization knobs for the variational wave function."""

    blocks: int = 2
    embed_dim: int = 4
    enhancement: int = 2
    encoder_kernel: int = 3
    rbm_channels: int = 4
    init_scale: float = 1e-2
    initial_mix: float = 1e-2
    norm_eps: float = 1e-6

    def __post_init__(self):
        if self.blocks < 0:
            raise ValueError("blocks must be >= 0")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.enhancement < 1:
            raise ValueError("enhancement must be >= 1")
        if self.encoder_kernel < 1 or self.encoder_kernel % 2 == 0:
            raise ValueError("encoder_kernel must be odd and >= 1")
        if self.rbm_channels < 1:
            raise ValueError("rbm_channels must be >= 1")


def table_defaults(dimension: int, extent: int) -> AnsatzConfig:
    """Published hyperparameters: embedding N/2 on chains, 8 on squares."""
    if dimension == 1:
        return AnsatzConfig(embed_dim=max(1, extent // 2))
    return AnsatzConfig(embed_dim=8)


# ----------------------------------------------------------------------------
# Convolution index tables.
# ----------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _encoder_offsets(dimension: int, kernel: int):
    half = kernel // 2
    axis = range(-half, half + 1)
    if dimension == 1:
        return tuple((o,) for o in axis)
    return tuple(itertools.product(axis, axis))


@lru_cache(maxsize=64)
def _full_offsets(dimension: int, extent: int):
    axis = range(extent)
    if dimension == 1:
        return tuple((o,) for o in axis)
    return tuple(itertools.product(axis, axis))


@lru_cache(maxsize=128)
def _gather_tables(lattice: Lattice, offsets):
    """Index and validity tables for out[r] = sum_t w[t] in[r + offset_t]."""
    N = lattice.n_sites
    L = lattice.extent
    idx = np.zeros((N, len(offsets)), dtype=np.intp)
    mask = np.ones((N, len(offsets)))
    for t, off in enumerate(offsets):
        for r in range(N):
            if lattice.dimension == 1:
                j = r + off[0]
                ok = 0 <= j < L or lattice.periodic
                j %= L
            else:
                r1, r2 = divmod(r, L)
                j1, j2 = r1 + off[0], r2 + off[1]
                ok = (0 <= j1 < L and 0 <= j2 < L) or lattice.periodic
                j = (j1 % L) * L + (j2 % L)
            idx[r, t] = j
            if not ok:
                mask[r, t] = 0.0
    if lattice.periodic:
        mask = None
    return idx, mask


def _negate(offsets):
    return tuple(tuple(-c for c in off) for off in offsets)


def _conv_forward(h, kernel, bias, lattice, offsets):
    """out[n,o,r] = bias[o] + sum_{c,t} kernel[o,c,t] h[n,c,idx[r,t]]."""
    idx, mask = _gather_tables(lattice, offsets)
    gathered = h[:, :, idx]
    if mask is not None:
        gathered = gathered * mask
    out = np.einsum("oct,ncrt->nor", kernel, gathered, optimize=True)
    return out + bias[None, :, None], gathered


def _conv_backward(g_out, gathered, kernel, lattice, offsets):
    """Cotangents for input, kernel (per sample), and bias (per sample)."""
    ridx, rmask = _gather_tables(lattice, _negate(offsets))
    g_rev = g_out[:, :, ridx]
    if rmask is not None:
        g_rev = g_rev * rmask
    g_in = np.einsum("oct,nojt->ncj", kernel, g_rev, optimize=True)
    g_kernel = np.einsum("nor,ncrt->noct", g_out, gathered, optimize=True)
    g_bias = g_out.sum(axis=2)
    return g_in, g_kernel, g_bias


# FFT-based full-lattice circular correlation for the RBM on periodic
# lattices; the gather path above covers open boundaries.


def _spatial(h, lattice):
    return h.reshape(h.shape[:-1] + lattice.shape)


def _flat(h, lattice):
    return h.reshape(h.shape[: -lattice.dimension] + (lattice.n_sites,))


def _fftn(h, lattice):
    axes = tuple(range(-lattice.dimension, 0))
    return np.fft.fftn(_spatial(h, lattice), axes=axes)


def _ifftn(H, lattice):
    axes = tuple(range(-lattice.dimension, 0))
    return np.fft.ifftn(H, axes=axes)


def _rev_freq(H, lattice):
    """H[m] -> H[-m mod L] along every spatial axis."""
    L = lattice.extent
    rev = (-np.arange(L)) % L
    if lattice.dimension == 1:
        return H[..., rev]
    return H[..., rev[:, None], rev[None, :]]


def _rbm_conv_forward(xt, kernel, bias, lattice):
    """z[n,k,r] = bias[k] + sum_{l,t} kernel[k,l,t] xt[n,l,r+t] (wrapped)."""
    if lattice.periodic:
        fx = _fftn(xt.astype(np.complex128), lattice)
        fw = _rev_freq(_fftn(kernel, lattice), lattice)
        fz = np.einsum("kl...,nl...->nk...", fw, fx, optimize=True)
        z = _flat(_ifftn(fz, lattice), lattice)
        cache = (fx, None)
    else:
        offsets = _full_offsets(lattice.dimension, lattice.extent)
        z, gathered = _conv_forward(xt, kernel, np.zeros(kernel.shape[0]), lattice, offsets)
        cache = (None, gathered)
    return z + bias[None, :, None], cache


def _rbm_conv_backward(g_z, xt, cache, kernel, lattice):
    fx, gathered = cache
    if lattice.periodic:
        fg = _fftn(g_z, lattice)
        fw = _fftn(kernel, lattice)
        g_xt = _flat(_ifftn(np.einsum("kl...,nk...->nl...", fw, fg, optimize=True), lattice), lattice)
        g_kernel = _ifftn(np.einsum("nl...,nk...->nkl...", fx, _rev_freq(fg, lattice), optimize=True), lattice)
        g_kernel = g_kernel.reshape(g_kernel.shape[:3] + (lattice.n_sites,))
    else:
        offsets = _full_offsets(lattice.dimension, lattice.extent)
        g_xt, g_kernel, _ = _conv_backward(g_z, gathered, kernel, lattice, offsets)
    g_bias = g_z.sum(axis=2)
    return g_xt, g_kernel, g_bias


# ----------------------------------------------------------------------------
# Pointwise pieces.
# ----------------------------------------------------------------------------


def _layer_norm_forward(h, gamma, beta, eps):
    mu = h.mean(axis=2, keepdims=True)
    var = h.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    hhat = (h - mu) * inv
    out = hhat * gamma[None, :, None] + beta[None, :, None]
    return out, (hhat, inv)


def _layer_norm_backward(g_out, cache, gamma):
    hhat, inv = cache
    g_hhat = g_out * gamma[None, :, None]
    g_gamma = (g_out * hhat).sum(axis=2)
    g_beta = g_out.sum(axis=2)
    g_h = inv * (
        g_hhat
        - g_hhat.mean(axis=2, keepdims=True)
        - hhat * (g_hhat * hhat).mean(axis=2, keepdims=True)
    )
    return g_h, g_gamma, g_beta


def _silu(c):
    sig = expit(c)
    return c * sig, sig


def _silu_grad(c, sig):
    return sig * (1.0 + c * (1.0 - sig))


def _softsign(t):
    return t / (1.0 + np.abs(t))


def _log_cosh(z):
    """ln cosh for complex arguments without overflow in the real part."""
    s = np.where(z.real >= 0, 1.0, -1.0)
    # |exp(-2 s z)| <= 1 by construction, so the log never overflows.
    return s * z + np.log(1.0 + np.exp(-2.0 * s * z)) - np.log(2.0)


# ----------------------------------------------------------------------------
# Parameter container.
# ----------------------------------------------------------------------------


def parameter_layout(lattice: Lattice, config: AnsatzConfig):
    """Ordered (name, shape, is_complex) triples defining the flat vector.

    Complex blocks occupy two consecutive runs in the flat vector: all real
    parts, then all imaginary parts.
    """
    d = config.embed_dim
    ad = config.enhancement * d
    taps = len(_encoder_offsets(lattice.dimension, config.encoder_kernel))
    layout = [
        ("mix_a", (), False),
        ("mix_b", (), False),
        ("embed", (d,), False),
    ]
    for i in range(config.blocks):
        layout += [
            (f"b{i}_norm_gamma", (d,), False),
            (f"b{i}_norm_beta", (d,), False),
            (f"b{i}_up_kernel", (ad, d, taps), False),
            (f"b{i}_up_bias", (ad,), False),
            (f"b{i}_down_kernel", (d, ad, taps), False),
            (f"b{i}_down_bias", (d,), False),
        ]
    layout += [
        ("out_norm_gamma", (d,), False),
        ("out_norm_beta", (d,), False),
        ("rbm_kernel", (config.rbm_channels, d + 1, lattice.n_sites), True),
        ("rbm_bias", (config.rbm_channels,), True),
    ]
    return layout


@dataclass
class WavefunctionParameters:
    """Named parameter blocks plus the fixed flattening layout."""

    lattice: Lattice
    config: AnsatzConfig
    blocks: dict

    @property
    def layout(self):
        return parameter_layout(self.lattice, self.config)

    @property
    def n_parameters(self) -> int:
        return sum((2 if cplx else 1) * int(np.prod(shape, dtype=int)) for _, shape, cplx in self.layout)

    def to_vector(self) -> np.ndarray:
        parts = []
        for name, shape, cplx in self.layout:
            block = np.asarray(self.blocks[name])
            if block.shape != shape:
                raise ValueError(f"block {name} has shape {block.shape}, expected {shape}")
            if cplx:
                parts.append(block.real.ravel())
                parts.append(block.imag.ravel())
            else:
                parts.append(block.ravel().astype(np.float64))
        if not parts:
            return np.zeros(0)
        return np.concatenate([np.atleast_1d(p) for p in parts])

    def replace_vector(self, vec: np.ndarray) -> "WavefunctionParameters":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_parameters,):
            raise ValueError(f"vector length {vec.shape} does not match {self.n_parameters}")
        blocks = {}
        pos = 0
        for name, shape, cplx in self.layout:
            size = int(np.prod(shape, dtype=int))
            if cplx:
                re = vec[pos : pos + size].reshape(shape)
                im = vec[pos + size : pos + 2 * size].reshape(shape)
                blocks[name] = re + 1j * im
                pos += 2 * size
            else:
                block = vec[pos : pos + size].reshape(shape)
                blocks[name] = block.copy() if shape else float(block)
                pos += size
        return WavefunctionParameters(self.lattice, self.config, blocks)

    def copy(self) -> "WavefunctionParameters":
        return WavefunctionParameters(
            self.lattice,
            self.config,
            {k: (np.array(v) if np.ndim(v) else v) for k, v in self.blocks.items()},
        )


def initialize_parameters(
    lattice: Lattice, config: AnsatzConfig, rng: np.random.Generator
) -> WavefunctionParameters:
    """Fresh parameters: near-identity encoder, small random kernels.

    Kernels and RBM weights (both parts) draw from Normal(0, init_scale);
    the mixing starts at a = 1, b = initial_mix so the initial state hugs
    the reference.
    """
    d = config.embed_dim
    ad = config.enhancement * d
    taps = len(_encoder_offsets(lattice.dimension, config.encoder_kernel))
    s = config.init_scale
    blocks = {
        "mix_a": 1.0,
        "mix_b": config.initial_mix,
        "embed": rng.normal(0.0, 1.0, size=d),
    }
    for i in range(config.blocks):
        blocks[f"b{i}_norm_gamma"] = np.ones(d)
        blocks[f"b{i}_norm_beta"] = np.zeros(d)
        blocks[f"b{i}_up_kernel"] = rng.normal(0.0, s, size=(ad, d, taps))
        blocks[f"b{i}_up_bias"] = np.zeros(ad)
        blocks[f"b{i}_down_kernel"] = rng.normal(0.0, s, size=(d, ad, taps))
        blocks[f"b{i}_down_bias"] = np.zeros(d)
    blocks["out_norm_gamma"] = np.ones(d)
    blocks["out_norm_beta"] = np.zeros(d)
    K = config.rbm_channels
    shape = (K, d + 1, lattice.n_sites)
    blocks["rbm_kernel"] = rng.normal(0.0, s, size=shape) + 1j * rng.normal(0.0, s, size=shape)
    blocks["rbm_bias"] = rng.normal(0.0, s, size=K) + 1j * rng.normal(0.0, s, size=K)
    return WavefunctionParameters(lattice, config, blocks)


# ----------------------------------------------------------------------------
# Forward evaluation.
# ----------------------------------------------------------------------------


def _encoder_pass(p: WavefunctionParameters, xf: np.ndarray, keep_cache: bool):
    cfg = p.config
    lat = p.lattice
    offs = _encoder_offsets(lat.dimension, cfg.encoder_kernel)
    b = p.blocks
    h = xf[:, None, :] * np.asarray(b["embed"])[None, :, None]
    cache = {"h_in": [], "norm": [], "c1": [], "sig": [], "gath_up": [], "gath_dn": [], "s1": [], "nrm": []}
    for i in range(cfg.blocks):
        nrm, ncache = _layer_norm_forward(h, b[f"b{i}_norm_gamma"], b[f"b{i}_norm_beta"], cfg.norm_eps)
        c1, gath_up = _conv_forward(nrm, b[f"b{i}_up_kernel"], b[f"b{i}_up_bias"], lat, offs)
        s1, sig = _silu(c1)
        c2, gath_dn = _conv_forward(s1, b[f"b{i}_down_kernel"], b[f"b{i}_down_bias"], lat, offs)
        if keep_cache:
            cache["h_in"].append(h)
            cache["norm"].append(ncache)
            cache["nrm"].append(nrm)
            cache["c1"].append(c1)
            cache["sig"].append(sig)
            cache["gath_up"].append(gath_up)
            cache["gath_dn"].append(gath_dn)
            cache["s1"].append(s1)
        h = h + c2
    on, ocache = _layer_norm_forward(h, b["out_norm_gamma"], b["out_norm_beta"], cfg.norm_eps)
    y = _softsign(on)
    if keep_cache:
        cache["out_norm"] = ocache
        cache["on"] = on
        cache["h_out"] = h
    return y, cache


def _forward(p: WavefunctionParameters, ref: ReferenceState, X: np.ndarray, keep_cache: bool):
    lat = p.lattice
    X = lat.validate_configuration(np.atleast_2d(np.asarray(X)))
    xf = X.astype(np.float64)
    y, enc_cache = _encoder_pass(p, xf, keep_cache)
    xt = np.concatenate([xf[:, None, :], y], axis=1)
    z, rbm_cache = _rbm_conv_forward(xt, np.asarray(p.blocks["rbm_kernel"]), np.asarray(p.blocks["rbm_bias"]), lat)
    lc = _log_cosh(z)
    log_phi = lc.sum(axis=(1, 2))
    log_ref = ref.log_amplitude(X)
    a = float(p.blocks["mix_a"])
    bmix = float(p.blocks["mix_b"])
    log_psi = a * log_ref + bmix * log_phi
    if not keep_cache:
        return log_psi, None
    cache = {
        "X": X,
        "xf": xf,
        "xt": xt,
        "y": y,
        "z": z,
        "enc": enc_cache,
        "rbm": rbm_cache,
        "log_phi": log_phi,
        "log_ref": log_ref,
    }
    return log_psi, cache


def log_amplitude_batch(p: WavefunctionParameters, ref: ReferenceState, X: np.ndarray) -> np.ndarray:
    """Complex log-amplitudes for a batch of configurations."""
    out, _ = _forward(p, ref, X, keep_cache=False)
    return out


def log_amplitude(p: WavefunctionParameters, ref: ReferenceState, x: np.ndarray):
    """Complex log-amplitude of one configuration (or a batch)."""
    x = np.asarray(x)
    single = x.ndim == 1
    out = log_amplitude_batch(p, ref, x)
    if not np.all(np.isfinite(out.real) & np.isfinite(out.imag)):
        bad = np.argwhere(~(np.isfinite(out.real) & np.isfinite(out.imag)))
        cfg = np.atleast_2d(x)[bad[0][0]]
        raise NonFiniteAmplitudeError("log-amplitude is non-finite", cfg)
    return complex(out[0]) if single else out


def rbm_log(p: WavefunctionParameters, xtilde: np.ndarray) -> np.ndarray:
    """ln phi of an already-augmented multichannel configuration."""
    xtilde = np.asarray(xtilde, dtype=np.float64)
    single = xtilde.ndim == 2
    if single:
        xtilde = xtilde[None]
    d = p.config.embed_dim
    if xtilde.shape[1] != d + 1 or xtilde.shape[2] != p.lattice.n_sites:
        raise ValueError(
            f"augmented configuration must have shape ({d + 1}, {p.lattice.n_sites})"
        )
    z, _ = _rbm_conv_forward(xtilde, np.asarray(p.blocks["rbm_kernel"]), np.asarray(p.blocks["rbm_bias"]), p.lattice)
    out = _log_cosh(z).sum(axis=(1, 2))
    return out[0] if single else out


def encoder_forward(p: WavefunctionParameters, x: np.ndarray) -> np.ndarray:
    """Feature channels f(x) in (-1, 1), batched over leading axes."""
    x = np.asarray(x)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    p.lattice.validate_configuration(X)
    y, _ = _encoder_pass(p, X.astype(np.float64), keep_cache=False)
    return y[0] if single else y


# ----------------------------------------------------------------------------
# Reverse-mode Jacobian.
# ----------------------------------------------------------------------------


def _backward(p: WavefunctionParameters, cache) -> dict:
    """Per-sample gradients of ln psi for every block, batch axis first."""
    cfg = p.config
    lat = p.lattice
    b = p.blocks
    offs = _encoder_offsets(lat.dimension, cfg.encoder_kernel)
    n = cache["X"].shape[0]
    bmix = float(b["mix_b"])
    grads = {
        "mix_a": cache["log_ref"].copy(),
        "mix_b": cache["log_phi"].copy(),
    }
    # d ln psi / d z, z the RBM pre-activation.
    g_z = bmix * np.tanh(cache["z"])
    g_xt, g_rbm_k, g_rbm_b = _rbm_conv_backward(
        g_z, cache["xt"], cache["rbm"], np.asarray(b["rbm_kernel"]), lat
    )
    grads["rbm_kernel"] = g_rbm_k
    grads["rbm_bias"] = g_rbm_b
    # Only the learned channels continue backward; channel 0 is the raw spin.
    g_y = g_xt[:, 1:, :]
    enc = cache["enc"]
    on = enc["on"]
    g_on = g_y / (1.0 + np.abs(on)) ** 2
    g_h, g_og, g_ob = _layer_norm_backward(g_on, enc["out_norm"], b["out_norm_gamma"])
    grads["out_norm_gamma"] = g_og
    grads["out_norm_beta"] = g_ob
    for i in reversed(range(cfg.blocks)):
        g_c2 = g_h
        g_s1, g_dnk, g_dnb = _conv_backward(g_c2, enc["gath_dn"][i], b[f"b{i}_down_kernel"], lat, offs)
        grads[f"b{i}_down_kernel"] = g_dnk
        grads[f"b{i}_down_bias"] = g_dnb
        g_c1 = g_s1 * _silu_grad(enc["c1"][i], enc["sig"][i])
        g_nrm, g_upk, g_upb = _conv_backward(g_c1, enc["gath_up"][i], b[f"b{i}_up_kernel"], lat, offs)
        grads[f"b{i}_up_kernel"] = g_upk
        grads[f"b{i}_up_bias"] = g_upb
        g_h_in, g_gam, g_bet = _layer_norm_backward(g_nrm, enc["norm"][i], b[f"b{i}_norm_gamma"])
        grads[f"b{i}_norm_gamma"] = g_gam
        grads[f"b{i}_norm_beta"] = g_bet
        g_h = g_h + g_h_in
    grads["embed"] = np.einsum("ncr,nr->nc", g_h, cache["xf"], optimize=True)
    return grads


def _flatten_gradients(p: WavefunctionParameters, grads: dict, n: int) -> np.ndarray:
    out = np.empty((n, p.n_parameters), dtype=np.complex128)
    pos = 0
    for name, shape, cplx in p.layout:
        size = int(np.prod(shape, dtype=int))
        g = np.asarray(grads[name]).reshape(n, size)
        if cplx:
            out[:, pos : pos + size] = g
            out[:, pos + size : pos + 2 * size] = 1j * g
            pos += 2 * size
        else:
            out[:, pos : pos + size] = g
            pos += size
    return out


def log_jacobian_batch(p: WavefunctionParameters, ref: ReferenceState, X: np.ndarray):
    """Log-amplitudes and per-configuration parameter Jacobian rows.

    Returns ``(log_psi, jac)`` with ``jac[i, mu] = d ln psi(x_i) / d theta_mu``
    as a dense complex matrix over the flat real parameter vector.
    """
    X = np.atleast_2d(np.asarray(X))
    log_psi, cache = _forward(p, ref, X, keep_cache=True)
    grads = _backward(p, cache)
    return log_psi, _flatten_gradients(p, grads, X.shape[0])


def log_jacobian(p: WavefunctionParameters, ref: ReferenceState, x: np.ndarray) -> np.ndarray:
    """Jacobian of ln psi at one configuration, shape (n_parameters,)."""
    x = np.asarray(x)
    single = x.ndim == 1
    _, jac = log_jacobian_batch(p, ref, x)
    return jac[0] if single else jac


def local_energy_gradient(
    p: WavefunctionParameters,
    ref: ReferenceState,
    h: TfimHamiltonian,
    x: np.ndarray,
) -> np.ndarray:
    """Parameter gradient of the local energy at one configuration.

    Chains through every connected configuration:

        d E_loc(x) = sum_x' <x'|H|x> (psi(x')/psi(x)) (J(x') - J(x))
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError("local_energy_gradient expects a single configuration")
    configs, elems = connected_batch(h, x)
    flat = configs[0]
    logs, jac = log_jacobian_batch(p, ref, flat)
    ratios = np.exp(logs - logs[0])
    weights = elems[0] * ratios
    return weights @ (jac - jac[0])
