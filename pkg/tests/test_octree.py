"""Voxelization, Morton ordering, and occupancy-stream round trips."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mesongs.errors import CorruptStreamError
from mesongs.gaussian_model import GaussianCloud, sh_rest_width
from mesongs.octree import (Octree, decode_octree, encode_octree,
                            morton_decode, morton_encode, voxelize)
from mesongs.synthetic import synthetic_cloud


def slow_morton(ix, iy, iz, bits=21):
    key = 0
    for i in range(bits):
        key |= ((ix >> i) & 1) << (3 * i)
        key |= ((iy >> i) & 1) << (3 * i + 1)
        key |= ((iz >> i) & 1) << (3 * i + 2)
    return key


class TestMorton:
    def test_matches_bitwise_reference(self):
        rng = np.random.default_rng(0)
        ix, iy, iz = rng.integers(0, 1 << 21, size=(3, 500), dtype=np.uint64)
        keys = morton_encode(ix, iy, iz)
        ref = [slow_morton(int(a), int(b), int(c)) for a, b, c in zip(ix, iy, iz)]
        np.testing.assert_array_equal(keys, np.array(ref, dtype=np.uint64))

    def test_axis_bit_positions(self):
        one = np.array([1], dtype=np.uint64)
        zero = np.array([0], dtype=np.uint64)
        assert int(morton_encode(one, zero, zero)[0]) == 0b001
        assert int(morton_encode(zero, one, zero)[0]) == 0b010
        assert int(morton_encode(zero, zero, one)[0]) == 0b100

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, (1 << 21) - 1), st.integers(0, (1 << 21) - 1),
           st.integers(0, (1 << 21) - 1))
    def test_round_trip(self, x, y, z):
        arr = lambda v: np.array([v], dtype=np.uint64)
        key = morton_encode(arr(x), arr(y), arr(z))
        bx, by, bz = morton_decode(key)
        assert (int(bx[0]), int(by[0]), int(bz[0])) == (x, y, z)


def cloud_from_positions(positions, **overrides):
    n = len(positions)
    rng = np.random.default_rng(99)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    fields = dict(
        positions=np.asarray(positions, dtype=np.float64),
        rotations=quats,
        log_scales=rng.normal(size=(n, 3)),
        opacity_logits=rng.normal(size=n),
        sh_dc=rng.normal(size=(n, 3)),
        sh_rest=rng.normal(size=(n, sh_rest_width(3))),
        sh_degree=3,
    )
    fields.update(overrides)
    return GaussianCloud(**fields)


class TestVoxelize:
    def test_opacity_logits_average(self):
        # first two points share the corner voxel; the third anchors the bbox
        cloud = cloud_from_positions([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0],
                                      [10.0, 10.0, 10.0]],
                                     opacity_logits=np.array([0.0, 2.0, 5.0]))
        _, merged = voxelize(cloud, depth=1)
        assert len(merged) == 2
        np.testing.assert_allclose(merged.opacity_logits, [1.0, 5.0])

    def test_counts_conserved(self):
        cloud = synthetic_cloud(700, seed=1)
        grid, merged = voxelize(cloud, depth=4)
        assert grid.source_counts.sum() == len(cloud)
        assert len(merged) == len(grid.voxel_keys)

    def test_keys_sorted_unique(self):
        grid, _ = voxelize(synthetic_cloud(900, seed=2), depth=5)
        assert (np.diff(grid.voxel_keys.astype(np.int64)) > 0).all()

    def test_centers_within_half_voxel(self):
        cloud = synthetic_cloud(400, seed=3)
        grid, merged = voxelize(cloud, depth=6)
        centers = grid.centers()
        np.testing.assert_array_equal(merged.positions, centers)
        vox = grid.voxel_size
        # every source point lands inside the voxel of its merged center
        key_of = {int(k): i for i, k in enumerate(grid.voxel_keys)}
        idx = np.floor((cloud.positions - grid.bbox_min) / vox).astype(np.int64)
        idx = np.clip(idx, 0, (1 << 6) - 1)
        for p, (ix, iy, iz) in zip(cloud.positions, idx):
            c = centers[key_of[slow_morton(ix, iy, iz)]]
            assert np.abs(p - c).max() <= vox / 2 + 1e-12

    def test_bbox_is_cubic_and_contains_points(self):
        cloud = synthetic_cloud(300, seed=4)
        grid, _ = voxelize(cloud, depth=3)
        assert grid.bbox_size > 0
        assert (cloud.positions >= grid.bbox_min - 1e-12).all()
        assert (cloud.positions <= grid.bbox_min + grid.bbox_size + 1e-12).all()

    def test_quaternion_sign_alignment(self):
        q = np.array([0.5, 0.5, 0.5, 0.5])
        r = np.array([1.0, 0.0, 0.0, 0.0])
        cloud = cloud_from_positions([[0, 0, 0], [1e-3, 0, 0], [9.0, 9.0, 9.0]],
                                     rotations=np.stack([q, -q, r]))
        _, merged = voxelize(cloud, depth=1)
        assert len(merged) == 2
        np.testing.assert_allclose(merged.rotations[0], q, atol=1e-12)

    def test_merged_quaternions_unit_norm(self):
        _, merged = voxelize(synthetic_cloud(800, seed=5), depth=2)
        np.testing.assert_allclose(np.linalg.norm(merged.rotations, axis=1),
                                   1.0, atol=1e-9)

    def test_attribute_merge_is_mean_in_raw_space(self):
        cloud = synthetic_cloud(50, seed=6)
        grid, merged = voxelize(cloud, depth=1)
        idx = np.floor((cloud.positions - grid.bbox_min) / grid.voxel_size)
        idx = np.clip(idx.astype(np.int64), 0, 1)
        keys = np.array([slow_morton(*map(int, row)) for row in idx])
        for j, k in enumerate(grid.voxel_keys):
            sel = keys == int(k)
            np.testing.assert_allclose(merged.sh_dc[j],
                                       cloud.sh_dc[sel].mean(axis=0), atol=1e-12)
            np.testing.assert_allclose(merged.log_scales[j],
                                       cloud.log_scales[sel].mean(axis=0),
                                       atol=1e-12)

    def test_single_point_cloud(self):
        cloud = cloud_from_positions([[0.3, -0.2, 0.9]])
        grid, merged = voxelize(cloud, depth=8)
        assert len(merged) == 1
        assert grid.bbox_size == 1.0

    def test_depth_bounds(self):
        cloud = synthetic_cloud(10, seed=7)
        for depth in (0, 22):
            with pytest.raises(ValueError):
                voxelize(cloud, depth)


class TestOccupancyStream:
    def test_round_trip_keys_bit_exact(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            depth = int(rng.integers(1, 8))
            top = 1 << (3 * depth)
            m = int(rng.integers(1, min(top, 600) + 1))
            keys = np.sort(rng.choice(top, size=m, replace=False)).astype(np.uint64)
            grid, _ = voxelize(synthetic_cloud(4, seed=seed), depth=depth)
            grid = grid.__class__(depth=depth, bbox_min=grid.bbox_min,
                                  bbox_size=grid.bbox_size, voxel_keys=keys,
                                  source_counts=np.ones(m, dtype=np.int64))
            tree = encode_octree(grid)
            back_keys, centers, sched = decode_octree(tree)
            np.testing.assert_array_equal(back_keys, keys)
            assert sched.leaf_count == m

    def test_decoded_centers_match_grid(self):
        grid, merged = voxelize(synthetic_cloud(500, seed=8), depth=6)
        _, centers, _ = decode_octree(encode_octree(grid))
        np.testing.assert_array_equal(centers, merged.positions)

    def test_single_leaf_stream_length(self):
        grid, _ = voxelize(cloud_from_positions([[0.0, 0.0, 0.0]]), depth=5)
        tree = encode_octree(grid)
        assert len(tree.occupancy) == 5

    def test_full_root_level(self):
        keys = np.arange(8, dtype=np.uint64)
        grid, _ = voxelize(synthetic_cloud(4, seed=0), depth=1)
        grid = grid.__class__(depth=1, bbox_min=grid.bbox_min,
                              bbox_size=grid.bbox_size, voxel_keys=keys,
                              source_counts=np.ones(8, dtype=np.int64))
        tree = encode_octree(grid)
        assert tree.occupancy == b"\xff"

    def test_zero_byte_is_corrupt(self):
        tree = Octree(depth=2, bbox_min=np.zeros(3), bbox_size=1.0,
                      occupancy=b"\x01\x00")
        with pytest.raises(CorruptStreamError):
            decode_octree(tree)

    def test_truncated_stream_is_corrupt(self):
        grid, _ = voxelize(synthetic_cloud(200, seed=9), depth=4)
        tree = encode_octree(grid)
        bad = Octree(depth=4, bbox_min=tree.bbox_min, bbox_size=tree.bbox_size,
                     occupancy=tree.occupancy[:-1])
        with pytest.raises(CorruptStreamError):
            decode_octree(bad)

    def test_trailing_bytes_are_corrupt(self):
        grid, _ = voxelize(synthetic_cloud(200, seed=10), depth=4)
        tree = encode_octree(grid)
        bad = Octree(depth=4, bbox_min=tree.bbox_min, bbox_size=tree.bbox_size,
                     occupancy=tree.occupancy + b"\x07")
        with pytest.raises(CorruptStreamError):
            decode_octree(bad)

    def test_schedule_matches_encoder_side(self):
        from mesongs.transform import build_raht_schedule
        grid, _ = voxelize(synthetic_cloud(350, seed=11), depth=5)
        _, _, sched = decode_octree(encode_octree(grid))
        # decoder has no access to source counts; unit weights there
        unit = build_raht_schedule(grid.voxel_keys, grid.depth)
        assert sched.leaf_count == unit.leaf_count
        assert sched.depth == unit.depth
        assert len(sched.levels) == len(unit.levels)
        for got, ref in zip(sched.levels, unit.levels):
            assert got.size == ref.size
            for name in ("left", "keep", "left_slot", "w_left", "w_right"):
                np.testing.assert_array_equal(getattr(got, name),
                                              getattr(ref, name))
