import numpy as np
import pytest

from sganinv.training_images import channel_ti


def test_codes_and_fraction():
    ti = channel_ti((120, 150), channel_fraction=0.3, seed=3)
    assert ti.shape == (120, 150) and ti.dtype == np.int64
    assert set(np.unique(ti)) <= {0, 1}
    # one channel at most overshoots the target
    assert 0.3 <= ti.mean() < 0.3 + 0.1


def test_deterministic():
    np.testing.assert_array_equal(channel_ti((60, 60), seed=5), channel_ti((60, 60), seed=5))
    assert not np.array_equal(channel_ti((60, 60), seed=5), channel_ti((60, 60), seed=6))


def test_levees_flank_channels():
    ti = channel_ti((80, 80), levee_width=2.0, seed=1)
    assert set(np.unique(ti)) == {0, 1, 2}
    # every levee cell has a channel cell within the levee width plus one cell
    lev = np.argwhere(ti == 2)
    chan = np.argwhere(ti == 1)
    for r, c in lev[:: max(1, len(lev) // 50)]:
        near = chan[np.abs(chan[:, 1] - c) <= 3]
        assert np.min(np.abs(near[:, 0] - r)) <= 4


@pytest.mark.parametrize("seed", range(4))
def test_channels_cover_the_domain(seed):
    # no wide channel-free bands: every 33-row window holds some channel
    ti = channel_ti((200, 200), seed=seed)
    rows = ti.mean(axis=1)
    windows = np.convolve(rows, np.ones(33), mode="valid")
    assert windows.min() > 0
