import numpy as np
import pytest
from hypothesis import given, strategies as st

from lccal.diffmap import OFFSET, build_difference_map, write_difference_map
from lccal.projection import CameraIntrinsics, DepthImage, read_pgm16
from oracles import diffmap_loop

SMALL = CameraIntrinsics.virtual(12, 20, 15.0)


def random_pair(rng, intr=SMALL):
    ldp = np.where(rng.random(intr.shape) < 0.3, rng.uniform(0.5, 40, intr.shape), 0.0)
    cdp = np.where(rng.random(intr.shape) < 0.9, ldp + rng.normal(0, 0.2, intr.shape), rng.uniform(0, 40, intr.shape))
    return DepthImage(intr, ldp), DepthImage(intr, np.abs(cdp))


@given(st.integers(0, 100_000), st.floats(0.01, 2.0))
def test_matches_pointwise_oracle_bit_exact(seed, e_tar):
    ldp, cdp = random_pair(np.random.default_rng(seed))
    got = build_difference_map(ldp, cdp, e_tar).channels
    want = diffmap_loop(ldp.depth, cdp.depth, e_tar)
    assert np.array_equal(got, want)


@given(st.integers(0, 100_000))
def test_channels_disjoint_and_sum(seed):
    ldp, cdp = random_pair(np.random.default_rng(seed))
    dm = build_difference_map(ldp, cdp, 0.1)
    assert not np.any((dm.large != 0) & (dm.small != 0))
    assert np.array_equal(dm.large + dm.small, ldp.depth - cdp.depth)
    assert np.all(np.abs(dm.small) <= 0.1)
    assert np.all((dm.large == 0) | (np.abs(dm.large) > 0.1))
    assert np.array_equal(dm.lidar, ldp.depth)


def test_threshold_boundary_goes_to_small():
    a = np.zeros(SMALL.shape)
    b = np.zeros(SMALL.shape)
    a[0, 0], b[0, 0] = 1.5, 1.0
    dm = build_difference_map(DepthImage(SMALL, a), DepthImage(SMALL, b), 0.5)
    assert dm.small[0, 0] == 0.5 and dm.large[0, 0] == 0


def test_mask_missing_lidar():
    ldp, cdp = random_pair(np.random.default_rng(0))
    dm = build_difference_map(ldp, cdp, 0.1, mask_missing_lidar=True)
    hole = ldp.depth == 0
    assert np.all(dm.large[hole] == 0) and np.all(dm.small[hole] == 0)


def test_validation():
    ldp, cdp = random_pair(np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_difference_map(ldp, cdp, 0.0)
    with pytest.raises(ValueError):
        build_difference_map(ldp, DepthImage(CameraIntrinsics.virtual(8, 8, 5.0), np.zeros((8, 8))))


def test_channels_read_only():
    ldp, cdp = random_pair(np.random.default_rng(0))
    with pytest.raises(ValueError):
        build_difference_map(ldp, cdp).channels[0, 0, 0] = 1.0


def test_written_encoding(tmp_path):
    a = np.zeros(SMALL.shape)
    b = np.zeros(SMALL.shape)
    a[0, 0], b[0, 0] = 2.0, 1.0     # large +1 m
    a[0, 1], b[0, 1] = 1.0, 1.05    # small -5 cm
    paths = write_difference_map(tmp_path, build_difference_map(DepthImage(SMALL, a), DepthImage(SMALL, b), 0.1))
    ch = [read_pgm16(p) for p in paths]
    assert ch[0][0, 0] == 2000
    assert ch[1][0, 0] == OFFSET + 1000 and ch[1][0, 1] == OFFSET
    assert ch[2][0, 1] == OFFSET - 50
