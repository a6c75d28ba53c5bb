import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sganinv.convnet import init_params, load_checkpoint, network_forward
from sganinv.gan_train import (
    AdamState,
    TrainConfig,
    adam_step,
    d_loss,
    d_loss_and_grads,
    decode_facies,
    encode_facies,
    g_loss,
    g_loss_and_grads,
    sample_patches,
    train,
    weight_penalty,
)


def zero_net(role, ladder):
    p = init_params(role, ladder, seed=0)
    return p.with_arrays([np.zeros_like(a) for a in p.arrays()])


def biased_disc(bias):
    """Discriminator whose output is sigmoid(bias) everywhere."""
    d = zero_net("discriminator", [2, 1])
    arrays = d.arrays()
    arrays[-1] = np.array([bias])
    return d.with_arrays(arrays)


def test_encode_binary():
    np.testing.assert_array_equal(encode_facies([[0, 1], [1, 0]], 2), [[-1, 1], [1, -1]])


def test_encode_ternary_middle():
    np.testing.assert_array_equal(encode_facies(np.ones((3, 4), int), 3), 0.0)


@pytest.mark.parametrize("f", [2, 3])
def test_encode_roundtrip(f):
    g = np.random.default_rng(f).integers(0, f, size=(9, 7))
    np.testing.assert_array_equal(decode_facies(encode_facies(g, f), f), g)


def test_encode_rejects_four_facies():
    with pytest.raises(ValueError):
        encode_facies(np.zeros((2, 2), int), 4)


def test_full_crop_is_unique():
    ti = np.random.default_rng(0).integers(0, 2, size=(17, 17))
    batch = sample_patches(ti, 17, 3, 0)
    for patch in batch:
        np.testing.assert_array_equal(patch[0], encode_facies(ti))


def test_patch_batch_shape_and_values():
    ti = np.random.default_rng(0).integers(0, 2, size=(120, 100))
    batch = sample_patches(ti, 33, 8, 1)
    assert batch.shape == (8, 1, 33, 33)
    assert set(np.unique(batch)) <= {-1.0, 1.0}


def test_patch_sampling_full_scale_shape():
    ti = np.zeros((2500, 2500), dtype=np.int8)
    assert sample_patches(ti, 353, 64, 0).shape == (64, 1, 353, 353)


def test_patch_sampling_deterministic():
    ti = np.random.default_rng(0).integers(0, 2, size=(40, 40))
    np.testing.assert_array_equal(sample_patches(ti, 9, 5, 3), sample_patches(ti, 9, 5, 3))


def test_patch_too_large():
    with pytest.raises(ValueError):
        sample_patches(np.zeros((10, 20), int), 11, 1, 0)


def test_d_loss_at_half():
    d = zero_net("discriminator", [2, 1])
    x = np.zeros((2, 1, 9, 9))
    assert d_loss(x, x, d, alpha=0.0, noise_std=0.0) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_d_loss_perfect_discriminator_limit():
    # logit +40 on real (all +1), -40 on fake (all -1)
    d = zero_net("discriminator", [1])
    arrays = d.arrays()
    arrays[0][...] = 0.0
    arrays[0][0, 0, 2, 2] = 40.0
    d = d.with_arrays(arrays)
    real = np.ones((1, 1, 9, 9))
    fake = -np.ones((1, 1, 9, 9))
    assert d_loss(real, fake, d, alpha=0.0, noise_std=0.0) < 1e-10


def test_d_loss_matches_termwise_transcription():
    rng = np.random.default_rng(3)
    d = init_params("discriminator", [3, 1], seed=9)
    real = rng.uniform(-1, 1, (2, 1, 9, 9))
    fake = rng.uniform(-1, 1, (2, 1, 9, 9))
    alpha = 1e-3
    p_r = network_forward(d, real)[0]
    p_f = network_forward(d, fake)[0]
    total = 0.0
    for v in p_r.ravel():
        total -= math.log(v) / p_r.size
    for v in p_f.ravel():
        total -= math.log(1 - v) / p_f.size
    reg = sum(float(w) ** 2 for l in d.layers for w in l.weights.ravel())
    expected = total + alpha * reg
    assert d_loss(real, fake, d, alpha=alpha, noise_std=0.0) == pytest.approx(expected, abs=1e-12)


def test_g_loss_at_half():
    d = zero_net("discriminator", [2, 1])
    g = zero_net("generator", [2, 1])
    assert g_loss(np.zeros((2, 1, 9, 9)), d, g, alpha=0.0, noise_std=0.0) == pytest.approx(
        math.log(2), abs=1e-12
    )


def test_g_loss_fooled_discriminator():
    d = biased_disc(60.0)
    g = zero_net("generator", [2, 1])
    # only the 1e-12 log clamp remains
    assert g_loss(np.zeros((1, 1, 9, 9)), d, g, alpha=0.0, noise_std=0.0) < 1e-11


def test_g_loss_regulariser():
    d = zero_net("discriminator", [2, 1])
    g = init_params("generator", [4, 1], seed=2)
    alpha = 1e-5
    base = g_loss(np.zeros((1, 1, 9, 9)), d, g, alpha=0.0, noise_std=0.0)
    with_reg = g_loss(np.zeros((1, 1, 9, 9)), d, g, alpha=alpha, noise_std=0.0)
    sq = sum(np.sum(l.weights**2) for l in g.layers)
    assert with_reg - base == pytest.approx(alpha * sq, abs=1e-12)
    assert weight_penalty(g) == pytest.approx(sq, rel=1e-15)


def test_losses_finite_under_saturation():
    x = np.zeros((1, 1, 9, 9))
    for bias in (-800.0, 800.0):
        d = biased_disc(bias)
        assert math.isfinite(d_loss(x, x, d, alpha=0.0, noise_std=0.0))
        assert math.isfinite(g_loss(x, d, zero_net("generator", [2, 1]), alpha=0.0, noise_std=0.0))


def test_d_plus_g_matches_transcription_without_noise():
    rng = np.random.default_rng(5)
    g = init_params("generator", [3, 1], seed=1)
    d = init_params("discriminator", [3, 1], seed=2)
    Z = rng.uniform(-1, 1, (2, 1, 3, 3))
    real = rng.uniform(-1, 1, (2, 1, 9, 9))
    fake = network_forward(g, Z)[0]
    p_r = network_forward(d, real)[0]
    p_f = network_forward(d, fake)[0]
    expected = (
        -np.mean(np.log(p_r)) - np.mean(np.log(1 - p_f)) - np.mean(np.log(p_f))
    )
    got = d_loss(real, fake, d, 0.0, 0.0) + g_loss_and_grads(Z, g, d, 0.0, 0.0)[0]
    assert got == pytest.approx(expected, abs=1e-12)


def _numeric_grad(f, arrays, h=1e-6):
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f()
            arr[idx] = orig - h
            fm = f()
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def test_d_loss_gradients_finite_differences():
    rng = np.random.default_rng(8)
    d = init_params("discriminator", [2, 1], kernel_size=3, padding=1, seed=3)
    real = rng.uniform(-1, 1, (2, 1, 9, 9))
    fake = rng.uniform(-1, 1, (2, 1, 9, 9))
    arrays = [a.copy() for a in d.arrays()]
    _, grads = d_loss_and_grads(real, fake, d, alpha=1e-2, noise_std=0.0)
    num = _numeric_grad(lambda: d_loss(real, fake, d.with_arrays(arrays), 1e-2, 0.0), arrays)
    for a, n in zip(grads, num):
        np.testing.assert_allclose(a, n, rtol=1e-6, atol=1e-9)


def test_noise_changes_loss_only_when_enabled():
    d = init_params("discriminator", [2, 1], seed=3)
    x = np.zeros((1, 1, 9, 9))
    a = d_loss(x, x, d, 0.0, 0.1, rng=1)
    b = d_loss(x, x, d, 0.0, 0.1, rng=2)
    assert a != b
    assert d_loss(x, x, d, 0.0, 0.0, rng=1) == d_loss(x, x, d, 0.0, 0.0, rng=2)


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.5, -2.0])]
    new, state = adam_step(p, [np.zeros(2)], AdamState.zeros_like(p))
    np.testing.assert_array_equal(new[0], p[0])
    assert state.step == 1


@pytest.mark.parametrize("g", [3.0, -0.01, 1e3])
def test_adam_first_step_is_sign(g):
    new, _ = adam_step([np.array([0.0])], [np.array([g])], AdamState.zeros_like([np.zeros(1)]), lr=2e-4)
    assert new[0][0] == pytest.approx(-2e-4 * np.sign(g), rel=1e-6)


def test_adam_decreases_quadratic():
    w = [np.array([1.0])]
    state = AdamState.zeros_like(w)
    prev = abs(w[0][0])
    for _ in range(10):
        w, state = adam_step(w, [2 * w[0]], state, lr=0.05)
        assert abs(w[0][0]) < prev
        prev = abs(w[0][0])


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]))


@settings(max_examples=10, deadline=None)
@given(st.floats(-5, 5), st.floats(1e-3, 10))
def test_adam_update_bounded_by_lr(w0, g):
    new, _ = adam_step([np.array([w0])], [np.array([g])], AdamState.zeros_like([np.zeros(1)]), lr=1e-3)
    assert abs(new[0][0] - w0) <= 1e-3 * (1 + 1e-9)


def small_config(tmp_path, **kw):
    base = dict(epochs=2, minibatches_per_epoch=3, batch_size=2, patch_zx=3, seed=4,
                checkpoint_dir=str(tmp_path / "ck"))
    base.update(kw)
    return TrainConfig(**base)


def test_train_writes_one_checkpoint_per_epoch(tmp_path):
    ti = np.random.default_rng(0).integers(0, 2, size=(30, 30))
    ti_before = ti.copy()
    cfg = small_config(tmp_path)
    res = train(ti, cfg, [4, 1], loss_csv=tmp_path / "loss.csv")
    files = sorted((tmp_path / "ck").glob("*.ckpt"))
    assert len(files) == 2 and len(res.checkpoints) == 2
    rows = (tmp_path / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,minibatch,d_loss,g_loss"
    assert len(rows) == 1 + 2 * 3
    g, meta = load_checkpoint(files[-1])
    assert meta["epoch"] == 2
    for a, b in zip(g.arrays(), res.generator.arrays()):
        assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(ti, ti_before)
    assert cfg == small_config(tmp_path)


def test_train_is_deterministic(tmp_path):
    ti = np.random.default_rng(0).integers(0, 2, size=(30, 30))
    a = train(ti, small_config(tmp_path / "a"), [4, 1], loss_csv=tmp_path / "a.csv")
    b = train(ti, small_config(tmp_path / "b"), [4, 1], loss_csv=tmp_path / "b.csv")
    assert a.losses == b.losses
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_train_ternary_q3(tmp_path):
    ti = np.random.default_rng(1).integers(0, 3, size=(30, 30))
    res = train(ti, small_config(tmp_path, q=3, epochs=1), [4, 1], n_facies=3)
    assert res.generator.in_channels == 3


def test_train_rejects_oversized_patch(tmp_path):
    with pytest.raises(ValueError):
        train(np.zeros((10, 10), int), small_config(tmp_path, patch_zx=5), [4, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(reg_alpha=-1)
