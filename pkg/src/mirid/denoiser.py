"""Small convolutional nets with hand-written forward and reverse-mode passes.

The nets consume complex channel stacks [ch, ny, nx] by unpacking them into
interleaved real channels [2*ch, ny, nx], run a plain conv / leaky-ReLU
stack (3x3 kernels, zero padding, same-size output), and pack the result
back to complex. The final conv layer has no activation and is
zero-initialized, so a fresh net maps everything to zero.

Gradient convention: the "gradient" of a real loss with respect to a
complex tensor u is the complex tensor dL/d(Re u) + i * dL/d(Im u). Under
this convention the channel pack/unpack maps are mutually adjoint
isometries and all checks against central finite differences are exact to
truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .numerics import RngStream

KERNEL = 3

_EINSUM_PATHS: dict[tuple, list] = {}


def _einsum(subscripts: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """einsum with a cached contraction path (conv shapes repeat heavily)."""
    key = (subscripts, a.shape, b.shape)
    path = _EINSUM_PATHS.get(key)
    if path is None:
        path = np.einsum_path(subscripts, a, b, optimize="optimal")[0]
        _EINSUM_PATHS[key] = path
    return np.einsum(subscripts, a, b, optimize=path)


@dataclass
class ConvLayer:
    """One 3x3 convolution: weights [out_ch, in_ch, 3, 3], bias [out_ch]."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4 or self.weights.shape[2:] != (KERNEL, KERNEL):
            raise ValueError(f"weights must be [out, in, 3, 3], got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError("bias length must equal out_ch")


@dataclass
class NetArch:
    """Shape of a denoising net acting on ``complex_channels`` complex inputs."""

    complex_channels: int
    hidden: int = 16
    n_layers: int = 4
    alpha: float = 0.01  # leaky-ReLU slope

    def channel_sequence(self) -> list[int]:
        io = 2 * self.complex_channels
        if self.n_layers < 1:
            raise ValueError("need at least one layer")
        if self.n_layers == 1:
            return [io, io]
        return [io] + [self.hidden] * (self.n_layers - 1) + [io]


@dataclass
class DenoiserNet:
    """Trainable conv stack; two instances exist per recon (image / k-space)."""

    layers: list[ConvLayer]
    alpha: float = 0.01

    def shape_signature(self) -> tuple:
        return tuple((l.weights.shape, l.bias.shape) for l in self.layers)

    def num_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)


@dataclass
class NetGradients:
    """Parameter gradients congruent with a DenoiserNet."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_for(cls, net: DenoiserNet) -> "NetGradients":
        return cls(
            [np.zeros_like(l.weights) for l in net.layers],
            [np.zeros_like(l.bias) for l in net.layers],
        )

    def add_scaled(self, other: "NetGradients", scale: float = 1.0) -> None:
        for i in range(len(self.weights)):
            self.weights[i] += scale * other.weights[i]
            self.biases[i] += scale * other.biases[i]


@dataclass
class NetTape:
    """Cached activations from one net_forward, consumed by net_backward."""

    conv_inputs: list[np.ndarray] = field(default_factory=list)
    preactivations: list[np.ndarray] = field(default_factory=list)
    signature: tuple = ()


def channels_from_complex(u: np.ndarray) -> np.ndarray:
    """[ch, ny, nx] complex -> [2*ch, ny, nx] real, order [re0, im0, re1, ...]."""
    u = np.asarray(u, dtype=np.complex128)
    out = np.empty((2 * u.shape[0],) + u.shape[1:], dtype=np.float64)
    out[0::2] = u.real
    out[1::2] = u.imag
    return out


def complex_from_channels(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`channels_from_complex`."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] % 2 != 0:
        raise ValueError("leading extent must be even")
    return v[0::2] + 1j * v[1::2]


def leaky_relu(v: np.ndarray, alpha: float = 0.01) -> np.ndarray:
    return np.where(v >= 0, v, alpha * v)


def _windows(padded: np.ndarray, ny: int, nx: int) -> np.ndarray:
    """All 3x3 patches of a padded [ch, ny+2, nx+2] tensor as a strided view."""
    s = padded.strides
    return as_strided(
        padded,
        (padded.shape[0], ny, nx, KERNEL, KERNEL),
        (s[0], s[1], s[2], s[1], s[2]),
        writeable=False,
    )


def conv_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Same-size 3x3 correlation with zero padding plus per-channel bias."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != layer.weights.shape[1]:
        raise ValueError(
            f"input has {x.shape[0]} channels, layer expects {layer.weights.shape[1]}"
        )
    ny, nx = x.shape[1], x.shape[2]
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = _windows(padded, ny, nx)
    out = _einsum("ihwkl,oikl->ohw", win, layer.weights)
    return out + layer.bias[:, None, None]


def conv_backward(
    upstream: np.ndarray, x: np.ndarray, layer: ConvLayer
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a conv layer: returns (input_grad, weight_grad, bias_grad)."""
    ny, nx = x.shape[1], x.shape[2]
    padded_x = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win_x = _windows(padded_x, ny, nx)
    weight_grad = _einsum("ihwkl,ohw->oikl", win_x, upstream)
    bias_grad = upstream.sum(axis=(1, 2))
    padded_up = np.pad(upstream, ((0, 0), (1, 1), (1, 1)))
    win_up = _windows(padded_up, ny, nx)
    flipped = layer.weights[:, :, ::-1, ::-1]
    input_grad = _einsum("ohwkl,oikl->ihw", win_up, flipped)
    return input_grad, weight_grad, bias_grad


def net_forward(u: np.ndarray, net: DenoiserNet) -> tuple[np.ndarray, NetTape]:
    """Run the conv stack on a complex channel stack.

    Returns the complex output (zero for a freshly initialized net) and the
    activation tape for :func:`net_backward`.
    """
    tape = NetTape(signature=net.shape_signature())
    v = channels_from_complex(u)
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        tape.conv_inputs.append(v)
        v = conv_forward(v, layer)
        if i < last:
            tape.preactivations.append(v)
            v = leaky_relu(v, net.alpha)
    return complex_from_channels(v), tape


def net_backward(
    upstream: np.ndarray, tape: NetTape, net: DenoiserNet
) -> tuple[np.ndarray, NetGradients]:
    """Exact reverse-mode pass through the conv stack.

    ``upstream`` is the loss gradient at the net output (complex
    convention above). Returns the gradient at the net input and the
    parameter gradients, accumulated layer-major.
    """
    if tape.signature != net.shape_signature():
        raise ValueError("stale tape: net shape changed since forward")
    if len(tape.conv_inputs) != len(net.layers):
        raise ValueError("stale tape: layer count mismatch")
    grads = NetGradients.zeros_for(net)
    g = channels_from_complex(upstream)
    for i in range(len(net.layers) - 1, -1, -1):
        if i < len(net.layers) - 1:
            pre = tape.preactivations[i]
            g = g * np.where(pre >= 0, 1.0, net.alpha)
        g, grads.weights[i][...], grads.biases[i][...] = conv_backward(
            g, tape.conv_inputs[i], net.layers[i]
        )
    return complex_from_channels(g), grads


def init_weights(arch: NetArch, rng: RngStream) -> DenoiserNet:
    """Fan-in-scaled random hidden layers, zero final layer.

    Hidden weights have variance 2 / (9 * in_ch); all biases start at zero.
    The zero final layer makes a fresh net the zero map, so the surrounding
    residual structure starts as the identity.
    """
    channels = arch.channel_sequence()
    layers = []
    for i in range(len(channels) - 1):
        in_ch, out_ch = channels[i], channels[i + 1]
        if i == len(channels) - 2:
            w = np.zeros((out_ch, in_ch, KERNEL, KERNEL))
        else:
            std = np.sqrt(2.0 / (9.0 * in_ch))
            w = std * rng.normal((out_ch, in_ch, KERNEL, KERNEL))
        layers.append(ConvLayer(w, np.zeros(out_ch)))
    return DenoiserNet(layers, alpha=arch.alpha)


def net_param_vector(net: DenoiserNet) -> np.ndarray:
    """Flatten all parameters, layer-major, weights before bias."""
    parts = []
    for layer in net.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.bias.ravel())
    return np.concatenate(parts)


def set_net_params(net: DenoiserNet, vector: np.ndarray) -> None:
    """Write a flat parameter vector back into the net (inverse of packing)."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.size != net.num_params():
        raise ValueError("parameter vector length mismatch")
    offset = 0
    for layer in net.layers:
        n = layer.weights.size
        layer.weights[...] = vector[offset : offset + n].reshape(layer.weights.shape)
        offset += n
        n = layer.bias.size
        layer.bias[...] = vector[offset : offset + n]
        offset += n


def gradients_vector(grads: NetGradients) -> np.ndarray:
    """Flatten gradients in the same order as :func:`net_param_vector`."""
    parts = []
    for w, b in zip(grads.weights, grads.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)
