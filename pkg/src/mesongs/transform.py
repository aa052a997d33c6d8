"""Rotation re-parameterization and the region-adaptive hierarchical transform.

Quaternions cost four channels; the codec stores three Euler angles instead
(ZYX convention: yaw psi about z, then pitch theta about y, then roll phi
about x). The conversion is even in q, so q and -q map to the same angles.

RAHT decorrelates per-voxel attributes over the octree. Leaves sit on sorted
Morton keys; each of the 3*depth passes merges sibling nodes along one axis
(x, then y, then z per octree level, matching the Morton bit order with x in
the lowest bit). A pair with subtree weights w1, w2 transforms through

    [dc]   1/sqrt(w1+w2) * [ sqrt(w1)  sqrt(w2)] [a1]
    [ac] =                 [-sqrt(w2)  sqrt(w1)] [a2]

which is orthonormal, so energy is preserved and the inverse is the
transpose. Unpaired nodes pass through with their weight. After all passes a
single DC coefficient remains plus M-1 ACs emitted in schedule order.

The merge schedule depends only on the occupied keys, so the decoder rebuilds
the exact schedule from the octree and never needs side information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptStreamError

# ---------------------------------------------------------------------------
# quaternion <-> Euler
# ---------------------------------------------------------------------------


def quat_to_euler(quats):
    """Unit quaternion(s) [w, x, y, z] -> Euler angles [phi, theta, psi].

    phi (roll, about x) and psi (yaw, about z) lie in (-pi, pi]; theta
    (pitch, about y) in [-pi/2, pi/2]. The expressions are even in q. At
    gimbal lock (|w*y - x*z| = 1/2) only phi -/+ psi is determined and the
    generic atan2 forms degrade to 0/0, so rows within a few ulp of lock
    take a closed-form branch: psi = 0 and phi = the locked combination,
    which reproduces the rotation matrix.
    """
    q = np.asarray(quats, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]

    phi = np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    s = 2.0 * (w * y - x * z)
    # clip guards the sqrt against 1 +/- s dipping below zero in floats
    theta = -np.pi / 2.0 + 2.0 * np.arctan2(
        np.sqrt(np.clip(1.0 + s, 0.0, None)), np.sqrt(np.clip(1.0 - s, 0.0, None)))
    psi = np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    # at theta = +/-pi/2 the matrix depends only on phi -/+ psi, which stays
    # well conditioned as atan2 of even terms; assign it all to phi
    locked = np.abs(s) >= 1.0 - 1e-15
    if locked.any():
        combined = np.arctan2(2.0 * (w * x - y * z), 1.0 - 2.0 * (x * x + z * z))
        phi = np.where(locked, combined, phi)
        psi = np.where(locked, 0.0, psi)

    # atan2 returns [-pi, pi]; fold the closed end onto +pi
    phi = np.where(phi == -np.pi, np.pi, phi)
    psi = np.where(psi == -np.pi, np.pi, psi)
    out = np.stack([phi, theta, psi], axis=1)
    return out[0] if single else out


def euler_to_rotmat(eulers):
    """Euler angles [phi, theta, psi] -> rotation matrix Rz(psi)Ry(theta)Rx(phi)."""
    e = np.asarray(eulers, dtype=np.float64)
    single = e.ndim == 1
    e = np.atleast_2d(e)
    cp, sp = np.cos(e[:, 0]), np.sin(e[:, 0])   # phi
    ct, st = np.cos(e[:, 1]), np.sin(e[:, 1])   # theta
    cs, ss = np.cos(e[:, 2]), np.sin(e[:, 2])   # psi
    m = np.empty((len(e), 3, 3), dtype=np.float64)
    m[:, 0, 0] = ct * cs
    m[:, 0, 1] = -cp * ss + sp * st * cs
    m[:, 0, 2] = sp * ss + cp * st * cs
    m[:, 1, 0] = ct * ss
    m[:, 1, 1] = cp * cs + sp * st * ss
    m[:, 1, 2] = -sp * cs + cp * st * ss
    m[:, 2, 0] = -st
    m[:, 2, 1] = sp * ct
    m[:, 2, 2] = cp * ct
    return m[0] if single else m


def euler_to_quat(eulers):
    """Euler angles -> unit quaternion [w, x, y, z] with w >= 0."""
    e = np.asarray(eulers, dtype=np.float64)
    single = e.ndim == 1
    e = np.atleast_2d(e)
    cp, sp = np.cos(e[:, 0] / 2.0), np.sin(e[:, 0] / 2.0)
    ct, st = np.cos(e[:, 1] / 2.0), np.sin(e[:, 1] / 2.0)
    cs, ss = np.cos(e[:, 2] / 2.0), np.sin(e[:, 2] / 2.0)
    q = np.empty((len(e), 4), dtype=np.float64)
    q[:, 0] = cp * ct * cs + sp * st * ss
    q[:, 1] = sp * ct * cs - cp * st * ss
    q[:, 2] = cp * st * cs + sp * ct * ss
    q[:, 3] = cp * ct * ss - sp * st * cs
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    neg = q[:, 0] < 0
    q[neg] *= -1.0
    return q[0] if single else q


def quat_to_rotmat(quats):
    """Unit quaternion(s) [w, x, y, z] -> rotation matrix, standard form."""
    q = np.asarray(quats, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m[0] if single else m


# ---------------------------------------------------------------------------
# RAHT
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MergeLevel:
    """One pairing pass over the current node array (size -> size - len(left))."""

    size: int            # node count entering the pass
    left: np.ndarray     # positions of pair-left nodes; right sibling is left+1
    keep: np.ndarray     # positions surviving into the next pass (ascending)
    left_slot: np.ndarray  # where each pair's DC lands inside `keep`
    w_left: np.ndarray   # int64 subtree weights of the pair members
    w_right: np.ndarray


@dataclass(frozen=True)
class RahtSchedule:
    """Merge plan for a fixed leaf layout; reusable across channels."""

    leaf_count: int
    depth: int
    levels: tuple  # MergeLevel per pass, fine to coarse (3 * depth entries)

    @property
    def ac_count(self):
        return max(self.leaf_count - 1, 0)


def build_raht_schedule(voxel_keys, depth, leaf_weights=None):
    """Derive the merge schedule from sorted Morton keys.

    Sibling nodes (keys equal after dropping the lowest bit) pair up; the
    rest pass through. Keys shift right one bit per pass, so each octree
    level contributes three passes merging along x, y, z in turn.
    """
    keys = np.asarray(voxel_keys, dtype=np.uint64)
    if keys.ndim != 1 or len(keys) == 0:
        raise ValueError("voxel_keys must be a non-empty 1-D array")
    if len(keys) > 1 and not (keys[1:] > keys[:-1]).all():
        raise ValueError("voxel_keys must be strictly increasing")
    if not 1 <= depth <= 21:
        raise ValueError("depth must be in [1, 21]")
    if keys.max() >> np.uint64(3 * depth):
        raise ValueError("voxel key exceeds the key range of this depth")

    if leaf_weights is None:
        weights = np.ones(len(keys), dtype=np.int64)
    else:
        weights = np.asarray(leaf_weights, dtype=np.int64)
        if weights.shape != keys.shape or (weights <= 0).any():
            raise ValueError("leaf_weights must be positive, one per key")

    levels = []
    for _ in range(3 * depth):
        half = keys >> np.uint64(1)
        pairable = np.zeros(len(keys), dtype=bool)
        if len(keys) > 1:
            pairable[:-1] = half[:-1] == half[1:]
        # strictly increasing keys make chains impossible: a pair-left key is
        # even, so it can never also be the right sibling of its predecessor
        left = np.nonzero(pairable)[0]
        survive = np.ones(len(keys), dtype=bool)
        survive[left + 1] = False
        keep = np.nonzero(survive)[0]
        left_slot = np.searchsorted(keep, left)
        levels.append(MergeLevel(
            size=len(keys), left=left, keep=keep, left_slot=left_slot,
            w_left=weights[left].copy(), w_right=weights[left + 1].copy()))
        weights = weights.copy()
        weights[left] += weights[left + 1]
        weights = weights[keep]
        keys = half[keep]
    return RahtSchedule(leaf_count=levels[0].size, depth=depth, levels=tuple(levels))


def _as_columns(values, count, what):
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
        squeeze = True
    elif vals.ndim == 2:
        squeeze = False
    else:
        raise ValueError(f"{what} must be 1-D or 2-D")
    if vals.shape[0] != count:
        raise ValueError(f"{what} has {vals.shape[0]} rows, schedule expects {count}")
    return vals, squeeze


@dataclass(frozen=True)
class RahtCoefficients:
    """Transform output: one DC per channel plus M-1 ACs in schedule order."""

    dc: np.ndarray   # () or (C,)
    ac: np.ndarray   # (M-1,) or (M-1, C)
    labels: tuple = ()


def raht_forward(values, schedule):
    """Forward transform of per-leaf values (shape (M,) or (M, C))."""
    vals, squeeze = _as_columns(values, schedule.leaf_count, "values")
    vals = vals.copy()
    ac_parts = []
    for lv in schedule.levels:
        if len(lv.left):
            wl = np.sqrt(lv.w_left.astype(np.float64))[:, None]
            wr = np.sqrt(lv.w_right.astype(np.float64))[:, None]
            norm = np.sqrt((lv.w_left + lv.w_right).astype(np.float64))[:, None]
            a, b = vals[lv.left], vals[lv.left + 1]
            ac_parts.append((-wr * a + wl * b) / norm)
            vals = vals[lv.keep]
            vals[lv.left_slot] = (wl * a + wr * b) / norm
        else:
            vals = vals[lv.keep]
    ac = np.concatenate(ac_parts, axis=0) if ac_parts else \
        np.empty((0, vals.shape[1]), dtype=np.float64)
    dc = vals[0]
    if squeeze:
        return RahtCoefficients(dc=dc[0], ac=ac[:, 0])
    return RahtCoefficients(dc=dc, ac=ac)


def raht_inverse(coeffs, schedule):
    """Invert raht_forward; exact up to float64 rounding."""
    dc = np.asarray(coeffs.dc, dtype=np.float64)
    squeeze = dc.ndim == 0
    dc = np.atleast_1d(dc)
    ac = np.asarray(coeffs.ac, dtype=np.float64)
    if ac.ndim == 1:
        ac = ac[:, None]
    if ac.ndim != 2 or ac.shape[1] != len(dc):
        raise CorruptStreamError("AC/DC channel count mismatch")
    if ac.shape[0] != schedule.ac_count:
        raise CorruptStreamError(
            f"expected {schedule.ac_count} AC coefficients, got {ac.shape[0]}")

    # the forward pass emitted ACs level by level; recover the chunk offsets
    offsets = np.cumsum([0] + [len(lv.left) for lv in schedule.levels])
    vals = dc[None, :].copy()
    for i in range(len(schedule.levels) - 1, -1, -1):
        lv = schedule.levels[i]
        cur = np.empty((lv.size, vals.shape[1]), dtype=np.float64)
        cur[lv.keep] = vals
        if len(lv.left):
            wl = np.sqrt(lv.w_left.astype(np.float64))[:, None]
            wr = np.sqrt(lv.w_right.astype(np.float64))[:, None]
            norm = np.sqrt((lv.w_left + lv.w_right).astype(np.float64))[:, None]
            d = cur[lv.left]
            a = ac[offsets[i]:offsets[i + 1]]
            cur[lv.left] = (wl * d - wr * a) / norm
            cur[lv.left + 1] = (wr * d + wl * a) / norm
        vals = cur
    return vals[:, 0] if squeeze else vals
