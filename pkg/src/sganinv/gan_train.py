"""Adversarial training of a generator/discriminator pair on training-image patches."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convnet import (
    NetworkParams,
    init_params,
    network_backward,
    network_forward,
    output_size,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingError",
    "TrainResult",
    "encode_facies",
    "decode_facies",
    "sample_patches",
    "d_loss",
    "g_loss",
    "d_loss_and_grads",
    "g_loss_and_grads",
    "weight_penalty",
    "adam_step",
    "train",
]

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    minibatches_per_epoch: int = 100
    batch_size: int = 25
    patch_zx: int = 7
    q: int = 1
    learning_rate: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reg_alpha: float = 1e-5
    disc_input_noise_std: float = 0.1
    kernel_size: int = 5
    seed: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or self.minibatches_per_epoch < 1:
            raise ValueError("batch_size and minibatches_per_epoch must be >= 1")
        if self.reg_alpha < 0 or self.disc_input_noise_std < 0:
            raise ValueError("reg_alpha and disc_input_noise_std must be >= 0")
        if self.patch_zx < 1 or self.q < 1:
            raise ValueError("patch_zx and q must be >= 1")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> AdamState:
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


@dataclass
class TrainResult:
    generator: NetworkParams
    discriminator: NetworkParams
    losses: list = field(default_factory=list)  # (epoch, minibatch, d_loss, g_loss)
    checkpoints: list = field(default_factory=list)  # (epoch, path)


# --- facies encoding ------------------------------------------------------

def encode_facies(grid, n_facies: int = 2) -> np.ndarray:
    """Map facies codes ``0..F-1`` evenly onto ``[-1, 1]`` (binary: -1/+1, ternary: -1/0/+1)."""
    if n_facies not in (2, 3):
        raise ValueError(f"only 2 or 3 facies are supported, got {n_facies}")
    g = np.asarray(grid)
    if g.size and (g.min() < 0 or g.max() >= n_facies):
        raise ValueError(f"facies codes must lie in 0..{n_facies - 1}")
    return -1.0 + 2.0 * g.astype(np.float64) / (n_facies - 1)


def decode_facies(x, n_facies: int = 2) -> np.ndarray:
    if n_facies not in (2, 3):
        raise ValueError(f"only 2 or 3 facies are supported, got {n_facies}")
    codes = np.rint((np.asarray(x, dtype=np.float64) + 1.0) * (n_facies - 1) / 2.0)
    return np.clip(codes, 0, n_facies - 1).astype(np.int64)


def sample_patches(ti, extent: int, count: int, rng, n_facies: int = 2) -> np.ndarray:
    """Random axis-aligned crops of the training image, encoded, as ``(count, 1, *extent)``.

    ``rng`` is a seed or a :class:`numpy.random.Generator`.
    """
    ti = np.asarray(ti)
    rng = np.random.default_rng(rng)
    for ax, n in enumerate(ti.shape):
        if extent > n:
            raise ValueError(f"patch extent {extent} exceeds training image axis {ax} ({n})")
    enc = encode_facies(ti, n_facies)
    out = np.empty((count, 1) + (extent,) * ti.ndim)
    for i in range(count):
        origin = [rng.integers(0, n - extent + 1) for n in ti.shape]
        out[i, 0] = enc[tuple(slice(o, o + extent) for o in origin)]
    return out


# --- losses -----------------------------------------------------------------

def weight_penalty(params: NetworkParams) -> float:
    """Sum of squared weights (biases excluded)."""
    return float(sum(np.sum(l.weights * l.weights) for l in params.layers))


def _neg_log_mean(p):
    """``-mean(log(clamp(p)))`` and its derivative with respect to ``p``."""
    pc = np.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP)
    inside = (p >= LOG_CLAMP) & (p <= 1.0 - LOG_CLAMP)
    return -np.mean(np.log(pc)), np.where(inside, -1.0 / (pc * p.size), 0.0)


def _noisy(x, std, rng):
    if std > 0:
        return x + rng.normal(0.0, std, size=x.shape)
    return x


def d_loss_and_grads(real, fake, D: NetworkParams, alpha=1e-5, noise_std=0.1, rng=None):
    """Discriminator loss and its gradients (flat list aligned with ``D.arrays()``)."""
    rng = np.random.default_rng(rng)
    real = _noisy(np.asarray(real, dtype=np.float64), noise_std, rng)
    fake = _noisy(np.asarray(fake, dtype=np.float64), noise_std, rng)
    p_real, c_real = network_forward(D, real)
    p_fake, c_fake = network_forward(D, fake)
    l_real, g_real = _neg_log_mean(p_real)
    l_fake, g_fake = _neg_log_mean(1.0 - p_fake)
    grads_r, _ = network_backward(D, c_real, g_real)
    grads_f, _ = network_backward(D, c_fake, -g_fake)
    grads = [a + b for a, b in zip(grads_r, grads_f)]
    for i, layer in enumerate(D.layers):
        grads[2 * i] = grads[2 * i] + 2.0 * alpha * layer.weights
    return l_real + l_fake + alpha * weight_penalty(D), grads


def d_loss(real, fake, D: NetworkParams, alpha=1e-5, noise_std=0.1, rng=None) -> float:
    return d_loss_and_grads(real, fake, D, alpha, noise_std, rng)[0]


def g_loss_and_grads(Z, G: NetworkParams, D: NetworkParams, alpha=1e-5, noise_std=0.1, rng=None,
                     g_cache=None):
    """Non-saturating generator loss and gradients for both networks.

    Returns ``(loss, g_grads, d_grads)``; the discriminator gradients of this
    composite are returned for completeness but are not used in training.
    ``g_cache`` may hold ``(fake, caches)`` from an earlier forward pass of ``G`` on ``Z``.
    """
    rng = np.random.default_rng(rng)
    if g_cache is None:
        fake, caches_g = network_forward(G, Z)
    else:
        fake, caches_g = g_cache
    p_fake, caches_d = network_forward(D, _noisy(fake, noise_std, rng))
    loss, g_p = _neg_log_mean(p_fake)
    d_grads, dx = network_backward(D, caches_d, g_p)
    g_grads, _ = network_backward(G, caches_g, dx)
    for i, layer in enumerate(G.layers):
        g_grads[2 * i] = g_grads[2 * i] + 2.0 * alpha * layer.weights
    return loss + alpha * weight_penalty(G), g_grads, d_grads


def g_loss(fake, D: NetworkParams, G: NetworkParams, alpha=1e-5, noise_std=0.1, rng=None) -> float:
    rng = np.random.default_rng(rng)
    p_fake, _ = network_forward(D, _noisy(np.asarray(fake, dtype=np.float64), noise_std, rng))
    loss, _ = _neg_log_mean(p_fake)
    return loss + alpha * weight_penalty(G)


# --- optimizer --------------------------------------------------------------

def adam_step(params, grads, state: AdamState, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected ADAM update; returns new arrays and state (inputs untouched)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    t = state.step + 1
    new_p, new_m, new_v = [], [], []
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape} vs grad {np.shape(g)}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


# --- training loop -------------------------------------------------------------

def checkpoint_name(epoch: int) -> str:
    return f"generator_epoch_{epoch:04d}.ckpt"


def train(ti, config: TrainConfig, g_ladder, d_ladder=None, n_facies: int = 2,
          loss_csv=None, progress=None) -> TrainResult:
    """Alternate one discriminator and one generator ADAM step per minibatch.

    A generator checkpoint is written to ``config.checkpoint_dir`` after
    every epoch (when set); the loss trace is written to ``loss_csv``.
    """
    ti = np.asarray(ti)
    g_ladder = list(g_ladder)
    dp = len(g_ladder)
    d_ladder = list(d_ladder) if d_ladder is not None else g_ladder[-2::-1] + [1]
    if len(d_ladder) != dp:
        raise ValueError("generator and discriminator must have the same depth")
    extent = output_size(config.patch_zx, dp)
    for ax, n in enumerate(ti.shape):
        if extent > n:
            raise ValueError(f"patch extent {extent} exceeds training image axis {ax} ({n})")

    ss = np.random.default_rng(config.seed)
    g_seed, d_seed = (int(s) for s in ss.integers(0, 2**31 - 1, size=2))
    rng = np.random.default_rng(ss.integers(0, 2**63 - 1))
    G = init_params("generator", g_ladder, in_channels=config.q, ndim=ti.ndim,
                    kernel_size=config.kernel_size, seed=g_seed)
    D = init_params("discriminator", d_ladder, in_channels=1, ndim=ti.ndim,
                    kernel_size=config.kernel_size, seed=d_seed)
    g_state = AdamState.zeros_like(G.arrays())
    d_state = AdamState.zeros_like(D.arrays())
    adam_kw = dict(lr=config.learning_rate, beta1=config.adam_beta1,
                   beta2=config.adam_beta2, eps=config.adam_eps)

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult(G, D)
    writer = fh = None
    if loss_csv is not None:
        fh = open(loss_csv, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "minibatch", "d_loss", "g_loss"])
    z_shape = (config.batch_size, config.q) + (config.patch_zx,) * ti.ndim
    try:
        for epoch in range(1, config.epochs + 1):
            for mb in range(config.minibatches_per_epoch):
                real = sample_patches(ti, extent, config.batch_size, rng, n_facies)
                Z = rng.uniform(-1.0, 1.0, size=z_shape)
                fake, caches_g = network_forward(G, Z)
                ld, d_grads = d_loss_and_grads(real, fake, D, config.reg_alpha,
                                               config.disc_input_noise_std, rng)
                new_d, d_state = adam_step(D.arrays(), d_grads, d_state, **adam_kw)
                D = D.with_arrays(new_d)
                lg, g_grads, _ = g_loss_and_grads(Z, G, D, config.reg_alpha,
                                                  config.disc_input_noise_std, rng,
                                                  g_cache=(fake, caches_g))
                if not (math.isfinite(ld) and math.isfinite(lg)):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, minibatch {mb}: d={ld}, g={lg}"
                    )
                new_g, g_state = adam_step(G.arrays(), g_grads, g_state, **adam_kw)
                G = G.with_arrays(new_g)
                result.losses.append((epoch, mb, ld, lg))
                if writer is not None:
                    writer.writerow([epoch, mb, repr(ld), repr(lg)])
            G.meta.update(epoch=epoch, seed=config.seed)
            if ckpt_dir is not None:
                path = ckpt_dir / checkpoint_name(epoch)
                save_checkpoint(path, G, epoch=epoch, seed=config.seed)
                result.checkpoints.append((epoch, path))
            if fh is not None:
                fh.flush()
            last = result.losses[-1]
            log.info("epoch %d: d_loss=%.4f g_loss=%.4f", epoch, last[2], last[3])
            if progress is not None:
                progress(epoch, G)
    finally:
        if fh is not None:
            fh.close()
    result.generator, result.discriminator = G, D
    return result
