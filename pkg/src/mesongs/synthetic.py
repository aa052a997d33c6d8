"""Reproducible random scenes and camera rigs for desk-scale runs.

Attributes are rounded through float32 (matching real checkpoints, and
making PLY round trips exact). sh_rest rows come from a small prototype
mixture plus noise, so the vector quantizer sees the kind of clusterable
data real scenes produce.
"""

from __future__ import annotations

import numpy as np

from .gaussian_model import Camera, GaussianCloud


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def synthetic_cloud(n, seed, sh_degree=3):
    """Blob-mixture test scene with n Gaussians; deterministic in seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    n_blobs = 6
    blob_centers = rng.uniform(-0.8, 0.8, size=(n_blobs, 3))
    blob = rng.integers(0, n_blobs, size=n)
    positions = blob_centers[blob] + rng.normal(0.0, 0.22, size=(n, 3))

    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)

    rest_width = 3 * ((sh_degree + 1) ** 2 - 1)
    if rest_width:
        n_protos = max(4, min(64, n // 16))
        protos = rng.normal(0.0, 0.12, size=(n_protos, rest_width))
        sh_rest = protos[rng.integers(0, n_protos, size=n)]
        sh_rest = sh_rest + rng.normal(0.0, 0.02, size=(n, rest_width))
    else:
        sh_rest = np.zeros((n, 0))

    return GaussianCloud(
        positions=_f32(positions),
        rotations=_f32(quats),
        log_scales=_f32(rng.normal(np.log(0.02), 0.35, size=(n, 3))),
        opacity_logits=_f32(rng.normal(1.0, 1.5, size=n)),
        sh_dc=_f32(rng.normal(0.0, 0.9, size=(n, 3))),
        sh_rest=_f32(sh_rest),
        sh_degree=sh_degree)


def _look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)):
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(np.asarray(up, dtype=np.float64), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return rot, -rot @ eye


def orbit_cameras(count, width=64, height=64, radius=3.2, phase=0.0):
    """Cameras on an orbit ring, alternating above/below the equator."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cams = []
    fx = fy = 0.8 * width
    for i in range(count):
        azim = phase + 2.0 * np.pi * i / count
        elev = np.deg2rad(18.0 if i % 2 == 0 else -14.0)
        eye = radius * np.array([np.cos(elev) * np.cos(azim),
                                 np.sin(elev),
                                 np.cos(elev) * np.sin(azim)])
        rot, t = _look_at(eye)
        cams.append(Camera(width=width, height=height, fx=fx, fy=fy,
                           cx=width / 2.0, cy=height / 2.0,
                           rotation=rot, translation=t))
    return cams


def synthetic_scene(n, seed, sh_degree=3, train_views=8, test_views=4,
                    width=64, height=64):
    """Scene plus disjoint train/test camera rigs (test ring is phase-shifted)."""
    cloud = synthetic_cloud(n, seed, sh_degree=sh_degree)
    train = orbit_cameras(train_views, width=width, height=height, phase=0.0)
    test = orbit_cameras(test_views, width=width, height=height,
                         phase=np.pi / 7.0)
    return cloud, train, test
