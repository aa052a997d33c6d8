"""Octree voxelization of Gaussian positions and occupancy-byte coding.

Positions land in a cubic grid of 2^depth voxels per axis. The cube is the
tightest axis-aligned cube around the data: centered on the per-axis midrange
and sized by the largest extent (plus a 1e-9 relative margin so boundary
points stay inside). Voxels are identified by Morton keys with the x bit
lowest, then y, then z; the key order is also the storage order of the merged
cloud, which is what makes the RAHT schedule reconstructible downstream.

Gaussians sharing a voxel merge by arithmetic mean in pre-activation space.
Quaternions are sign-aligned to the first member of the voxel before
averaging (q and -q encode the same rotation) and re-normalized after.

The tree serializes breadth-first as one occupancy byte per internal node,
bit k set iff child octant k (k = x + 2y + 4z) is occupied. Leaf geometry is
fully implied, so decoding recovers exactly the sorted voxel keys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError
from .gaussian_model import GaussianCloud
from .transform import build_raht_schedule

MAX_DEPTH = 21  # 3 * 21 = 63 key bits, the most a uint64 Morton code holds


def _spread_bits(v):
    """Space 21-bit integers so their bits land three apart (bit i -> 3i)."""
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact_bits(v):
    v = v.astype(np.uint64) & np.uint64(0x1249249249249249)
    v = (v ^ (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v ^ (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v ^ (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v ^ (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v ^ (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def morton_encode(ix, iy, iz):
    """Interleave integer voxel coordinates; x occupies the lowest bit."""
    return (_spread_bits(np.asarray(ix)) |
            (_spread_bits(np.asarray(iy)) << np.uint64(1)) |
            (_spread_bits(np.asarray(iz)) << np.uint64(2)))


def morton_decode(keys):
    keys = np.asarray(keys, dtype=np.uint64)
    return (_compact_bits(keys),
            _compact_bits(keys >> np.uint64(1)),
            _compact_bits(keys >> np.uint64(2)))


@dataclass(frozen=True)
class VoxelGrid:
    """Occupied-voxel summary of a cloud at a fixed depth."""

    depth: int
    bbox_min: np.ndarray      # (3,)
    bbox_size: float          # cube edge length
    voxel_keys: np.ndarray    # (M,) uint64, strictly increasing
    source_counts: np.ndarray  # (M,) int64, Gaussians merged per voxel

    @property
    def voxel_size(self):
        return self.bbox_size / (1 << self.depth)

    def centers(self):
        ix, iy, iz = morton_decode(self.voxel_keys)
        idx = np.stack([ix, iy, iz], axis=1).astype(np.float64)
        return self.bbox_min + (idx + 0.5) * self.voxel_size


@dataclass(frozen=True)
class Octree:
    depth: int
    bbox_min: np.ndarray
    bbox_size: float
    occupancy: bytes  # breadth-first occupancy bytes, one per internal node


def voxelize(cloud, depth):
    """Quantize positions to a depth-`depth` octree grid and merge collisions.

    Returns (grid, merged_cloud); merged rows are in ascending Morton-key
    order with positions replaced by voxel centers.
    """
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in [1, {MAX_DEPTH}]")
    if len(cloud) == 0:
        raise ValueError("cannot voxelize an empty cloud")

    pos = cloud.positions
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    size = float((hi - lo).max()) * (1.0 + 1e-9)
    if size == 0.0:
        size = 1.0  # all points coincide; any positive cube works
    bbox_min = (lo + hi) / 2.0 - size / 2.0

    res = 1 << depth
    voxel = size / res
    idx = np.floor((pos - bbox_min) / voxel).astype(np.int64)
    np.clip(idx, 0, res - 1, out=idx)
    keys = morton_encode(idx[:, 0], idx[:, 1], idx[:, 2])

    order = np.argsort(keys, kind="stable")  # stable: voxel member order = input order
    skeys = keys[order]
    uniq, starts, counts = np.unique(skeys, return_index=True, return_counts=True)
    m = len(uniq)
    group = np.repeat(np.arange(m), counts)

    def mean_of(arr):
        arr = arr[order]
        flat = arr.reshape(len(arr), -1)
        sums = np.add.reduceat(flat, starts, axis=0)
        return sums / counts[:, None]

    rot = cloud.rotations[order]
    first = rot[starts][group]
    flips = np.where(np.einsum("ij,ij->i", rot, first) < 0.0, -1.0, 1.0)
    rot_mean = np.add.reduceat(rot * flips[:, None], starts, axis=0) / counts[:, None]
    norms = np.linalg.norm(rot_mean, axis=1)
    degenerate = norms < 1e-12
    if degenerate.any():  # opposing members cancelled out; keep the first one
        rot_mean[degenerate] = rot[starts][degenerate]
        norms[degenerate] = 1.0
    rot_mean /= norms[:, None]

    grid = VoxelGrid(depth=depth, bbox_min=bbox_min, bbox_size=size,
                     voxel_keys=uniq, source_counts=counts.astype(np.int64))
    merged = GaussianCloud(
        positions=grid.centers(),
        rotations=rot_mean,
        log_scales=mean_of(cloud.log_scales),
        opacity_logits=mean_of(cloud.opacity_logits[:, None])[:, 0],
        sh_dc=mean_of(cloud.sh_dc),
        sh_rest=mean_of(cloud.sh_rest),
        sh_degree=cloud.sh_degree)
    return grid, merged


def encode_octree(grid):
    """Breadth-first occupancy bytes for the grid's occupied keys."""
    keys = grid.voxel_keys
    out = []
    for level in range(grid.depth):
        child_shift = np.uint64(3 * (grid.depth - level - 1))
        children = np.unique(keys >> child_shift)
        parents, inverse = np.unique(children >> np.uint64(3), return_inverse=True)
        bits = np.zeros(len(parents), dtype=np.uint8)
        np.bitwise_or.at(bits, inverse,
                         (np.uint64(1) << (children & np.uint64(7))).astype(np.uint8))
        out.append(bits.tobytes())
    return Octree(depth=grid.depth, bbox_min=grid.bbox_min.copy(),
                  bbox_size=grid.bbox_size, occupancy=b"".join(out))


def decode_octree(tree):
    """Recover (voxel_keys, centers, raht_schedule) from occupancy bytes.

    The schedule is rebuilt from the decoded keys, so it equals the one the
    encoder derived from the original grid, plan for plan.
    """
    if not 1 <= tree.depth <= MAX_DEPTH:
        raise CorruptStreamError(f"octree depth {tree.depth} out of range")
    if not (tree.bbox_size > 0 and np.isfinite(tree.bbox_size)
            and np.isfinite(tree.bbox_min).all()):
        raise CorruptStreamError("octree bounding box is degenerate")

    occ = np.frombuffer(tree.occupancy, dtype=np.uint8)
    prefixes = np.zeros(1, dtype=np.uint64)
    pos = 0
    for _ in range(tree.depth):
        n = len(prefixes)
        if pos + n > len(occ):
            raise CorruptStreamError("truncated octree occupancy stream")
        bytes_here = occ[pos:pos + n]
        pos += n
        if (bytes_here == 0).any():
            raise CorruptStreamError("zero occupancy byte (empty internal node)")
        bits = np.unpackbits(bytes_here[:, None], axis=1, bitorder="little")
        parent_idx, octant = np.nonzero(bits)  # row-major -> ascending key order
        prefixes = (prefixes[parent_idx] << np.uint64(3)) | octant.astype(np.uint64)
    if pos != len(occ):
        raise CorruptStreamError("trailing bytes after octree occupancy stream")

    grid = VoxelGrid(depth=tree.depth, bbox_min=np.asarray(tree.bbox_min, dtype=np.float64),
                     bbox_size=float(tree.bbox_size), voxel_keys=prefixes,
                     source_counts=np.ones(len(prefixes), dtype=np.int64))
    schedule = build_raht_schedule(prefixes, tree.depth)
    return prefixes, grid.centers(), schedule
