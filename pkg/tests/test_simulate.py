import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sganinv.convnet import init_params
from sganinv.simulate import (
    PostprocessSpec,
    crop_center,
    generate,
    median_filter,
    rank_transform,
    sample_latent,
    threshold,
)


def naive_median(grid, k):
    """Sort every (edge-mirrored) neighbourhood and take the middle value."""
    r = k // 2
    padded = np.pad(grid, r, mode="symmetric")
    out = np.empty_like(grid)
    for idx in np.ndindex(grid.shape):
        window = padded[tuple(slice(i, i + k) for i in idx)]
        out[idx] = sorted(window.ravel())[window.size // 2]
    return out


def test_latent_shape_and_range():
    z = sample_latent((1, 5, 5, 5), 0)
    assert z.size == 125
    assert np.all((z >= -1) & (z <= 1))


def test_latent_mean():
    z = sample_latent((100_000,), 1)
    assert abs(z.mean()) < 0.02


def test_latent_deterministic():
    np.testing.assert_array_equal(sample_latent((3, 4, 4), 7), sample_latent((3, 4, 4), 7))


def test_median_constant():
    g = np.full((6, 5), 0.3)
    np.testing.assert_array_equal(median_filter(g, (3, 3)), g)


def test_median_removes_single_spike():
    g = np.zeros((3, 3))
    g[1, 1] = 1
    np.testing.assert_array_equal(median_filter(g, (3, 3)), 0)


def test_median_matches_sort_oracle():
    g = np.random.default_rng(0).uniform(size=(7, 7))
    np.testing.assert_array_equal(median_filter(g, (3, 3)), naive_median(g, 3))


def test_median_3d_matches_sort_oracle():
    g = np.random.default_rng(1).uniform(size=(5, 4, 6))
    np.testing.assert_array_equal(median_filter(g, (3, 3, 3)), naive_median(g, 3))


def test_median_even_kernel():
    with pytest.raises(ValueError):
        median_filter(np.zeros((4, 4)), (2, 2))


def test_median_idempotent_on_blocky_grid():
    g = np.zeros((20, 20))
    g[3:10, 2:15] = 1
    g[12:19, 5:9] = 1
    once = median_filter(g, (3, 3))
    np.testing.assert_array_equal(median_filter(once, (3, 3)), once)


def test_threshold_binary():
    np.testing.assert_array_equal(threshold(np.array([0.49, 0.51, 0.5])), [0, 1, 0])


def test_threshold_ternary():
    np.testing.assert_array_equal(
        threshold(np.array([0.2, 0.5, 0.8, 0.33, 0.67]), (0.33, 0.67)), [0, 1, 2, 0, 1]
    )


def test_threshold_range_check():
    with pytest.raises(ValueError):
        threshold(np.array([1.2]))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (4, 4), elements=st.floats(0, 1)),
    st.integers(0, 15),
    st.floats(0, 1),
)
def test_threshold_monotone(g, i, bump):
    before = threshold(g, (0.33, 0.67))
    g2 = g.copy()
    idx = np.unravel_index(i, g.shape)
    g2[idx] = max(g2[idx], bump)
    assert threshold(g2, (0.33, 0.67))[idx] >= before[idx]


def test_rank_transform_example():
    np.testing.assert_array_equal(rank_transform(np.array([0.1, 0.9, 0.5]), [2, 4, 7]), [2, 7, 4])


def test_rank_transform_constant_grid_uses_rowmajor_order():
    out = rank_transform(np.zeros((2, 3)), [1, 2, 3, 4, 5, 6])
    np.testing.assert_array_equal(out, [[1, 2, 3], [4, 5, 6]])


def test_rank_transform_reproduces_quantiles():
    rng = np.random.default_rng(2)
    grid = rng.normal(size=(8, 8))
    vals = rng.lognormal(size=64)
    out = rank_transform(grid, vals)
    np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(vals))
    # order is preserved
    assert np.all(np.argsort(out.ravel(), kind="stable") == np.argsort(grid.ravel(), kind="stable"))


def test_rank_transform_empty():
    with pytest.raises(ValueError):
        rank_transform(np.zeros(3), [])


def test_crop_offsets():
    g = np.arange(129 * 129).reshape(129, 129)
    c = crop_center(g, (125, 125))
    assert c.shape == (125, 125)
    assert c[0, 0] == g[2, 2]


def test_crop_too_large():
    with pytest.raises(ValueError):
        crop_center(np.zeros((5, 5)), (6, 5))


def test_generate_published_sizes():
    g = init_params("generator", [2, 2, 2, 2, 1], seed=0)
    out = generate(g, sample_latent((1, 20, 20), 0), PostprocessSpec(median_kernel=(3, 3)))
    assert out.shape == (609, 609)
    assert set(np.unique(out)) <= {0, 1}
    out = generate(g, sample_latent((1, 5, 5), 0), PostprocessSpec(crop=(125, 125)))
    assert out.shape == (125, 125)


def test_generate_zero_generator_gives_facies_zero():
    g = init_params("generator", [2, 1], seed=0)
    g = g.with_arrays([np.zeros_like(a) for a in g.arrays()])
    np.testing.assert_array_equal(generate(g, sample_latent((1, 4, 4), 0)), 0)


def test_generate_deterministic_and_continuous():
    g = init_params("generator", [4, 1], in_channels=3, seed=1)
    z = sample_latent((3, 5, 5), 3)
    spec = PostprocessSpec(thresholds=None)
    a = generate(g, z, spec)
    np.testing.assert_array_equal(a, generate(g, z, spec))
    assert a.dtype == np.float64 and a.min() >= 0 and a.max() <= 1


def test_generate_rank_transform():
    g = init_params("generator", [4, 1], seed=1)
    vals = tuple(np.linspace(1e-5, 1e-2, 17 * 17))
    out = generate(g, sample_latent((1, 5, 5), 3), PostprocessSpec(thresholds=None, rank_values=vals))
    np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(vals))


def test_generate_crop_too_large():
    g = init_params("generator", [2, 1], seed=0)
    with pytest.raises(ValueError):
        generate(g, sample_latent((1, 3, 3), 0), PostprocessSpec(crop=(10, 10)))


def test_postprocess_spec_validation():
    with pytest.raises(ValueError):
        PostprocessSpec(thresholds=(0.67, 0.33))
    with pytest.raises(ValueError):
        PostprocessSpec(thresholds=(1.0,))
    assert PostprocessSpec(thresholds=(0.33, 0.67)).n_facies == 3
