"""Dense direct and transposed convolution layers in 2D and 3D.

Tensors are float64 arrays laid out as ``(batch, channels, *spatial)``.
A transposed layer with ``stride=2, kernel=5, padding=2`` maps a spatial
extent ``s`` to ``2s - 1``; the matching direct layer maps ``2s - 1`` back
to ``s``.  Stacking ``dp`` of them gives :func:`output_size`.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

__all__ = [
    "ACTIVATIONS",
    "ConvSpec",
    "LayerParams",
    "NetworkParams",
    "ShapeError",
    "output_size",
    "conv_forward",
    "conv_backward",
    "network_forward",
    "network_backward",
    "generator_forward",
    "discriminator_forward",
    "default_ladder",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "none")
LEAK = 0.2
CHECKPOINT_MAGIC = "SGANCKPT"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with a layer."""


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 5
    stride: int = 2
    padding: int | None = None
    transposed: bool = False
    activation: str = "none"
    ndim: int = 2

    def __post_init__(self):
        if self.padding is None:
            object.__setattr__(self, "padding", (self.kernel_size - 1) // 2)
        if self.kernel_size % 2 != 1 or not 1 <= self.kernel_size <= 9:
            raise ValueError(f"kernel_size must be odd and <= 9, got {self.kernel_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.ndim not in (2, 3):
            raise ValueError(f"ndim must be 2 or 3, got {self.ndim}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + (self.kernel_size,) * self.ndim

    def out_extent(self, n: int) -> int:
        k, s, p = self.kernel_size, self.stride, self.padding
        if self.transposed:
            return (n - 1) * s - 2 * p + k
        return (n + 2 * p - k) // s + 1


@dataclass
class LayerParams:
    spec: ConvSpec
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.shape != self.spec.weight_shape:
            raise ShapeError(
                f"weights shape {self.weights.shape} != {self.spec.weight_shape}"
            )
        if self.biases.shape != (self.spec.out_channels,):
            raise ShapeError(f"biases shape {self.biases.shape} != ({self.spec.out_channels},)")


@dataclass
class NetworkParams:
    layers: list[LayerParams]
    role: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ("generator", "discriminator"):
            raise ValueError(f"role must be generator or discriminator, got {self.role!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.spec.out_channels != b.spec.in_channels:
                raise ShapeError(
                    f"channel mismatch between layers: {a.spec.out_channels} -> {b.spec.in_channels}"
                )

    @property
    def dp(self) -> int:
        return len(self.layers)

    @property
    def ndim(self) -> int:
        return self.layers[0].spec.ndim

    @property
    def in_channels(self) -> int:
        return self.layers[0].spec.in_channels

    def arrays(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` used by the optimizer."""
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.biases])
        return out

    def with_arrays(self, arrays) -> NetworkParams:
        layers = [
            LayerParams(layer.spec, arrays[2 * i], arrays[2 * i + 1])
            for i, layer in enumerate(self.layers)
        ]
        return NetworkParams(layers, self.role, dict(self.meta))

    def copy(self) -> NetworkParams:
        return self.with_arrays([a.copy() for a in self.arrays()])


def output_size(z_x: int, dp: int) -> int:
    """Spatial extent produced by ``dp`` stride-2 transposed layers from ``z_x`` latent cells."""
    if z_x < 1 or dp < 1:
        raise ValueError("z_x and dp must be >= 1")
    return (z_x - 1) * 2**dp + 1


# --- activations -----------------------------------------------------------

def _activate(a, name):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "leaky_relu":
        return np.where(a > 0, a, LEAK * a)
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return expit(a)
    return a


def _activation_grad(out, grad, name):
    if name == "relu":
        return grad * (out > 0)
    if name == "leaky_relu":
        return grad * np.where(out > 0, 1.0, LEAK)
    if name == "tanh":
        return grad * (1.0 - out * out)
    if name == "sigmoid":
        return grad * out * (1.0 - out)
    return grad


# --- convolution kernels ---------------------------------------------------

def _check_input(x, spec: ConvSpec):
    if x.ndim != spec.ndim + 2:
        raise ShapeError(f"expected a {spec.ndim + 2}-d tensor, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"axis 1 (channels): got {x.shape[1]}, layer expects {spec.in_channels}"
        )
    for ax, n in enumerate(x.shape[2:], start=2):
        if spec.out_extent(n) < 1:
            raise ShapeError(f"axis {ax}: extent {n} too small for kernel {spec.kernel_size}")


def _windows(xp, k, s, n_out, d):
    """Strided k^d windows of a padded tensor: shape (N, C, *n_out, *k)."""
    axes = tuple(range(2, 2 + d))
    win = sliding_window_view(xp, (k,) * d, axis=axes)
    sl = (slice(None), slice(None)) + tuple(slice(0, s * (m - 1) + 1, s) for m in n_out)
    return win[sl]


def _scatter(buf, cols, k, s, n_in, d):
    """Add ``cols`` (N, C, *n_in, *k) into ``buf`` at stride ``s`` offsets."""
    for off in itertools.product(range(k), repeat=d):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + s * (m - 1) + 1, s) for o, m in zip(off, n_in)
        )
        buf[sl] += cols[(Ellipsis,) + off]


def _direct(x, w, s, p, d):
    k = w.shape[-1]
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p)] * d) if p else x
    n_out = [(n + 2 * p - k) // s + 1 for n in x.shape[2:]]
    win = _windows(xp, k, s, n_out, d)
    # (N, *n_out, O)
    out = np.tensordot(win, w, axes=([1] + list(range(2 + d, 2 + 2 * d)), list(range(1, 2 + d))))
    return np.moveaxis(out, -1, 1), win


def _direct_backward(dz, x_shape, win, w, s, p, d):
    k = w.shape[-1]
    batch_axes = [0] + list(range(2, 2 + d))
    dw = np.tensordot(dz, win, axes=(batch_axes, batch_axes))  # (O, C, *k)
    dcols = np.tensordot(dz, w, axes=([1], [0]))  # (N, *n_out, C, *k)
    dcols = np.moveaxis(dcols, 1 + d, 1)  # (N, C, *n_out, *k)
    padded = [n + 2 * p for n in x_shape[2:]]
    dxp = np.zeros(tuple(x_shape[:2]) + tuple(padded))
    _scatter(dxp, dcols, k, s, dz.shape[2:], d)
    if p:
        dxp = dxp[(slice(None), slice(None)) + (slice(p, -p),) * d]
    return dxp, dw


def _transposed(x, w, s, p, d):
    k = w.shape[-1]
    n_in = x.shape[2:]
    full = [(n - 1) * s + k for n in n_in]
    cols = np.tensordot(x, w, axes=([1], [1]))  # (N, *n_in, O, *k)
    cols = np.moveaxis(cols, 1 + d, 1)  # (N, O, *n_in, *k)
    buf = np.zeros((x.shape[0], w.shape[0]) + tuple(full))
    _scatter(buf, cols, k, s, n_in, d)
    if p:
        buf = buf[(slice(None), slice(None)) + (slice(p, -p),) * d]
    return buf


def _transposed_backward(dz, x, w, s, p, d):
    k = w.shape[-1]
    dbuf = np.pad(dz, [(0, 0), (0, 0)] + [(p, p)] * d) if p else dz
    win = _windows(dbuf, k, s, x.shape[2:], d)  # (N, O, *n_in, *k)
    kaxes = list(range(2 + d, 2 + 2 * d))
    dx = np.tensordot(win, w, axes=([1] + kaxes, [0] + list(range(2, 2 + d))))
    dx = np.moveaxis(dx, -1, 1)
    batch_axes = [0] + list(range(2, 2 + d))
    dw = np.tensordot(win, x, axes=(batch_axes, batch_axes))  # (O, *k, C)
    dw = np.moveaxis(dw, -1, 1)
    return dx, dw


def conv_forward(x, layer: LayerParams, return_cache: bool = False):
    """Apply one convolution layer (bias and activation included).

    With ``return_cache=True`` also returns the state needed by
    :func:`conv_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = layer.spec
    _check_input(x, spec)
    d, s, p = spec.ndim, spec.stride, spec.padding
    win = None
    if spec.transposed:
        a = _transposed(x, layer.weights, s, p, d)
    else:
        a, win = _direct(x, layer.weights, s, p, d)
    a += layer.biases.reshape((1, -1) + (1,) * d)
    out = _activate(a, spec.activation)
    if return_cache:
        return out, (x, win, out)
    return out


def conv_backward(layer: LayerParams, cache, dout):
    """Gradients ``(dx, dW, db)`` of one layer given the upstream gradient ``dout``."""
    if cache is None:
        raise RuntimeError("conv_backward needs the cache of a completed forward pass")
    x, win, out = cache
    spec = layer.spec
    d, s, p = spec.ndim, spec.stride, spec.padding
    dz = _activation_grad(out, np.asarray(dout, dtype=np.float64), spec.activation)
    db = dz.sum(axis=(0,) + tuple(range(2, 2 + d)))
    if spec.transposed:
        dx, dw = _transposed_backward(dz, x, layer.weights, s, p, d)
    else:
        dx, dw = _direct_backward(dz, x.shape, win, layer.weights, s, p, d)
    return dx, dw, db


def network_forward(params: NetworkParams, x):
    """Run the whole stack; returns the output and the per-layer caches."""
    caches = []
    h = x
    for layer in params.layers:
        h, cache = conv_forward(h, layer, return_cache=True)
        caches.append(cache)
    return h, caches


def network_backward(params: NetworkParams, caches, dout):
    """Backpropagate ``dout`` through the stack.

    Returns ``(grads, dx)`` where ``grads`` is the flat list
    ``[dW0, db0, dW1, db1, ...]`` aligned with :meth:`NetworkParams.arrays`.
    """
    if caches is None or len(caches) != params.dp:
        raise RuntimeError("missing cached activations for backward pass")
    grads = [None] * (2 * params.dp)
    g = dout
    for i in range(params.dp - 1, -1, -1):
        g, dw, db = conv_backward(params.layers[i], caches[i], g)
        grads[2 * i] = dw
        grads[2 * i + 1] = db
    return grads, g


def _batched(x, ndim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim + 1:
        return x[None], True
    if x.ndim == ndim + 2:
        return x, False
    raise ShapeError(f"expected {ndim + 1}-d or {ndim + 2}-d input, got shape {x.shape}")


def generator_forward(Z, params: NetworkParams):
    """Map a latent field ``(q, *spatial)`` (or a batch of them) to ``(1, *spatial)`` output."""
    if params.role != "generator":
        raise ValueError(f"expected a generator, got role {params.role!r}")
    z, single = _batched(Z, params.ndim)
    out, _ = network_forward(params, z)
    return out[0] if single else out


def discriminator_forward(X, params: NetworkParams):
    """Probability field of ``X`` being real, and its mean."""
    if params.role != "discriminator":
        raise ValueError(f"expected a discriminator, got role {params.role!r}")
    x, single = _batched(X, params.ndim)
    if x.shape[1] != 1:
        raise ShapeError(f"axis 1 (channels): discriminator input must be single-channel, got {x.shape[1]}")
    field_, _ = network_forward(params, x)
    if single:
        field_ = field_[0]
    return field_, float(field_.mean())


# --- construction and persistence -----------------------------------------

def default_ladder(role: str, dp: int = 5) -> list[int]:
    """Output channels per layer: ``[512, 256, 128, 64, 1]`` for dp=5 generators."""
    widths = [64 * 2**i for i in range(dp - 2, -1, -1)] + [1]
    if role == "discriminator":
        widths = widths[-2::-1] + [1]
    return widths


def init_params(
    role: str,
    ladder,
    in_channels: int = 1,
    ndim: int = 2,
    kernel_size: int = 5,
    stride: int = 2,
    padding: int | None = None,
    seed: int = 0,
) -> NetworkParams:
    """Fan-in scaled Gaussian weights, zero biases.

    ``ladder`` lists the output channels of each layer; its last entry must
    be 1 (single-channel image for G, single probability field for D).
    """
    ladder = [int(c) for c in ladder]
    if not ladder or any(c < 1 for c in ladder) or ladder[-1] != 1:
        raise ValueError(f"invalid channel ladder {ladder}: must be positive and end with 1")
    if role == "discriminator" and in_channels != 1:
        raise ValueError("discriminator input must be single-channel")
    rng = np.random.default_rng(seed)
    transposed = role == "generator"
    hidden, last = ("relu", "tanh") if transposed else ("leaky_relu", "sigmoid")
    layers = []
    c_in = in_channels
    for i, c_out in enumerate(ladder):
        spec = ConvSpec(
            in_channels=c_in,
            out_channels=c_out,
            kernel_size=kernel_size,
            stride=stride,
            padding=padding,
            transposed=transposed,
            activation=last if i == len(ladder) - 1 else hidden,
            ndim=ndim,
        )
        fan_in = c_in * kernel_size**ndim
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.weight_shape)
        layers.append(LayerParams(spec, w, np.zeros(c_out)))
        c_in = c_out
    return NetworkParams(layers, role, {"seed": seed})


def save_checkpoint(path, params: NetworkParams, epoch: int = 0, seed: int = 0):
    lines = [
        f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
        f"role {params.role}",
        f"dp {params.dp}",
        f"ndim {params.ndim}",
        "channels " + " ".join(str(c) for c in [params.in_channels] + [l.spec.out_channels for l in params.layers]),
    ]
    for i, layer in enumerate(params.layers):
        s = layer.spec
        lines.append(
            f"layer {i} kernel {s.kernel_size} stride {s.stride} padding {s.padding} "
            f"transposed {int(s.transposed)} activation {s.activation}"
        )
    lines += [f"epoch {epoch}", f"seed {seed}", "end"]
    payload = b"".join(a.astype("<f8").tobytes(order="C") for a in params.arrays())
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii") + payload)


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    """Read a checkpoint; returns the parameters and the manifest fields."""
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: missing manifest terminator")
    header = raw[:cut].decode("ascii").splitlines()
    payload = raw[cut + len(marker):]
    magic = header[0].split()
    if magic[0] != CHECKPOINT_MAGIC or int(magic[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    info = {}
    layer_lines = []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "layer":
            tok = rest.split()
            layer_lines.append(dict(zip(tok[1::2], tok[2::2])))
        else:
            info[key] = rest
    channels = [int(c) for c in info["channels"].split()]
    ndim = int(info["ndim"])
    layers = []
    offset = 0
    for i, fields in enumerate(layer_lines):
        spec = ConvSpec(
            in_channels=channels[i],
            out_channels=channels[i + 1],
            kernel_size=int(fields["kernel"]),
            stride=int(fields["stride"]),
            padding=int(fields["padding"]),
            transposed=bool(int(fields["transposed"])),
            activation=fields["activation"],
            ndim=ndim,
        )
        n_w = int(np.prod(spec.weight_shape))
        w = np.frombuffer(payload, "<f8", n_w, offset).reshape(spec.weight_shape)
        offset += 8 * n_w
        b = np.frombuffer(payload, "<f8", spec.out_channels, offset)
        offset += 8 * spec.out_channels
        layers.append(LayerParams(spec, w.astype(np.float64), b.astype(np.float64)))
    if offset != len(payload):
        raise ValueError(f"{path}: payload size {len(payload)} does not match manifest ({offset})")
    meta = {"epoch": int(info.get("epoch", 0)), "seed": int(info.get("seed", 0)), "dp": int(info["dp"])}
    return NetworkParams(layers, info["role"], meta), meta
