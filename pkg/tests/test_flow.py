import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sganinv.flow import (
    FlowError,
    FlowModel,
    boundary_fluxes,
    default_model,
    k_field_from_facies,
    observe,
    regular_lattice,
    solve_heads,
)


def dense_heads(model):
    """Loop-assembled cell balance with every cell as an unknown, solved densely."""
    nr, nc = model.shape
    k = model.k
    n = nr * nc
    A = np.zeros((n, n))
    b = np.zeros(n)
    h_l, h_r = model.fixed_heads()
    wells = {(r, c): q for r, c, q in model.wells}
    for r in range(nr):
        for c in range(nc):
            i = r * nc + c
            if c == 0 or c == nc - 1:
                A[i, i] = 1.0
                b[i] = h_l if c == 0 else h_r
                continue
            for dr, dc in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < nr):
                    continue
                kh = 2 * k[r, c] * k[rr, cc] / (k[r, c] + k[rr, cc])
                t = kh * model.thickness * (model.dy / model.dx if dc else model.dx / model.dy)
                A[i, i] += t
                A[i, rr * nc + cc] -= t
            b[i] = wells.get((r, c), 0.0)
    return np.linalg.solve(A, b).reshape(nr, nc)


def test_uniform_field_is_linear_on_125_cells():
    model = FlowModel(np.full((125, 125), 1e-3))
    assert model.h_left == pytest.approx(1.25, abs=1e-12)
    h = solve_heads(model)
    x = (np.arange(125) + 0.5) * 1.0
    np.testing.assert_allclose(h, np.broadcast_to(1.25 - 0.01 * x, h.shape), rtol=0, atol=1e-9)
    grad = -np.diff(h, axis=1)
    np.testing.assert_allclose(grad, 0.01, rtol=0, atol=1e-9)


def test_uniform_flux_matches_darcy():
    k = 2e-4
    model = FlowModel(np.full((10, 20), k))
    q_l, q_r = boundary_fluxes(model, solve_heads(model))
    darcy = k * 0.01 * 10 * 1.0 * 1.0
    assert q_l == pytest.approx(darcy, rel=1e-10)
    assert q_r == pytest.approx(-darcy, rel=1e-10)


def test_two_zone_series_flux():
    k = np.full((4, 20), 1e-3)
    k[:, 10:] = 1e-5
    model = FlowModel(k)
    h = solve_heads(model)
    h_l, h_r = model.fixed_heads()
    # series resistance between the two fixed-head centres
    resist = 0.0
    for c in range(19):
        k1, k2 = k[0, c], k[0, c + 1]
        resist += 0.5 / k1 + 0.5 / k2
    per_row = (h_l - h_r) / resist
    q_l, q_r = boundary_fluxes(model, h)
    assert q_l == pytest.approx(4 * per_row, rel=1e-10)
    assert q_r == pytest.approx(-4 * per_row, rel=1e-10)


def test_well_mass_balance():
    k = np.exp(np.random.default_rng(0).normal(-7, 1, size=(33, 33)))
    model = default_model(k, rate=-1e-3)
    q_l, q_r = boundary_fluxes(model, solve_heads(model))
    assert abs(q_l + q_r - 1e-3) <= 1e-8


def test_well_lowers_heads():
    k = np.full((33, 33), 1e-2)
    h0 = solve_heads(default_model(k, rate=0))
    h1 = solve_heads(default_model(k, rate=-1e-3))
    assert np.all(h1[:, 1:-1] < h0[:, 1:-1])
    assert np.argmin(h1 - h0) == np.ravel_multi_index((16, 16), (33, 33))


@pytest.mark.parametrize("shape", [(7, 9), (12, 12), (30, 25)])
def test_matches_dense_oracle(shape):
    rng = np.random.default_rng(shape[0])
    k = np.exp(rng.normal(-6, 1.5, size=shape))
    model = FlowModel(k, dx=1.5, dy=0.7, thickness=2.0, wells=[(shape[0] // 2, 3, -2e-4)])
    np.testing.assert_allclose(solve_heads(model), dense_heads(model), rtol=0, atol=1e-9)


def test_maximum_principle_without_wells():
    k = np.where(np.random.default_rng(1).uniform(size=(20, 20)) < 0.3, 1e-2, 1e-4)
    model = FlowModel(k)
    h = solve_heads(model)
    h_l, h_r = model.fixed_heads()
    assert h.max() <= h_l + 1e-12 and h.min() >= h_r - 1e-12


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
def test_scaling_k_leaves_heads_unchanged(seed, scale):
    k = np.exp(np.random.default_rng(seed).normal(-6, 1, size=(8, 10)))
    a = solve_heads(FlowModel(k))
    b = solve_heads(FlowModel(k * scale))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


def test_observe_follows_listed_order():
    k = np.exp(np.random.default_rng(2).normal(-6, 1, size=(10, 10)))
    pts = [(2, 3), (7, 1), (5, 5)]
    h = solve_heads(FlowModel(k))
    m1 = FlowModel(k, observations=pts)
    m2 = FlowModel(k, observations=pts[::-1])
    np.testing.assert_array_equal(observe(h, m1), observe(h, m2)[::-1])


def test_observation_on_fixed_head_column():
    model = FlowModel(np.full((5, 8), 1e-3), observations=[(2, 0), (2, 7)])
    np.testing.assert_allclose(observe(solve_heads(model), model), model.fixed_heads(), rtol=0, atol=0)


def test_observe_without_points():
    model = FlowModel(np.full((5, 8), 1e-3))
    with pytest.raises(ValueError):
        observe(solve_heads(model), model)


def test_k_mapping():
    grid = np.array([[0, 1], [2, 1]])
    k = k_field_from_facies(grid, {0: 1e-4, 1: 1e-2, 2: 1e-3})
    np.testing.assert_array_equal(k, [[1e-4, 1e-2], [1e-3, 1e-2]])


def test_k_mapping_missing_facies():
    with pytest.raises(ValueError):
        k_field_from_facies(np.array([[0, 3]]), {0: 1e-4})


def test_invalid_conductivity():
    with pytest.raises(ValueError):
        FlowModel(np.array([[1e-3, 0.0, 1e-3]]))
    with pytest.raises(ValueError):
        FlowModel(np.array([[1e-3, np.nan, 1e-3]]))


def test_well_outside_or_on_boundary():
    with pytest.raises(ValueError):
        FlowModel(np.full((5, 5), 1e-3), wells=[(5, 2, -1e-3)])
    with pytest.raises(ValueError):
        FlowModel(np.full((5, 5), 1e-3), wells=[(2, 0, -1e-3)])


def test_singular_like_contrast_reports_error_or_solves():
    k = np.full((6, 6), 1e-3)
    k[:, 3] = 1e-300
    model = FlowModel(k)
    try:
        h = solve_heads(model)
    except FlowError:
        return
    assert np.all(np.isfinite(h))


def test_lattice_on_125_cells():
    pts = regular_lattice(125)
    assert len(pts) == 49
    rows = sorted({r for r, _ in pts})
    assert rows == list(range(16, 107, 15))


def test_desk_lattice():
    rows = sorted({r for r, _ in regular_lattice(33)})
    assert rows == [5, 9, 13, 17, 21, 25, 29]


def test_lattice_does_not_fit():
    with pytest.raises(ValueError):
        regular_lattice(5)
