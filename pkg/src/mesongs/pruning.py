"""Importance scoring and pruning of low-impact Gaussians.

Global importance is the product of two terms. The view-dependent term sums
each Gaussian's blending weight alpha * transmittance over every pixel of
every training view, i.e. exactly how much color it actually contributed.
The view-independent term penalizes bloated Gaussians: the activated-scale
volume is normalized by its 90th percentile over the scene, clamped to
[0, 1], and raised to a small exponent beta so the penalty stays gentle.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .renderer import render


@dataclass(frozen=True)
class ImportanceScores:
    """Per-Gaussian pruning scores; i_g = i_d * i_i."""

    i_d: np.ndarray  # view-dependent accumulated blending weight
    i_i: np.ndarray  # view-independent volume term
    i_g: np.ndarray
    beta: float


def view_dependent_scores(cloud, cameras, threads=1):
    """Sum of per-pixel blending weights over all cameras, per Gaussian."""
    if not cameras:
        raise ValueError("at least one camera is required for scoring")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(lambda cam: render(cloud, cam).contributions,
                                     cameras))
    else:
        partials = [render(cloud, cam).contributions for cam in cameras]
    total = np.zeros(len(cloud), dtype=np.float64)
    for part in partials:  # fixed camera order keeps the reduction deterministic
        total += part
    return total


def view_independent_scores(cloud, beta=0.1):
    """Clamped normalized volume raised to beta.

    Volume is the product of activated scales; the reference volume is the
    90th percentile (linear interpolation) so the top decile saturates at 1.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    volumes = np.exp(cloud.log_scales.sum(axis=1))
    v_ref = np.percentile(volumes, 90)
    v_norm = np.clip(volumes / v_ref, 0.0, 1.0)
    return v_norm ** beta


def compute_importance(cloud, cameras, beta=0.1, threads=1):
    i_d = view_dependent_scores(cloud, cameras, threads=threads)
    i_i = view_independent_scores(cloud, beta=beta)
    return ImportanceScores(i_d=i_d, i_i=i_i, i_g=i_d * i_i, beta=beta)


def prune(cloud, scores, tau):
    """Drop the floor(tau * N) lowest-importance Gaussians.

    Ties break by index: among equal scores the lower index goes first.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must be in [0, 1)")
    i_g = np.asarray(scores.i_g if isinstance(scores, ImportanceScores) else scores,
                     dtype=np.float64)
    if i_g.shape != (len(cloud),):
        raise ValueError("scores do not match the cloud size")
    k = int(math.floor(tau * len(cloud)))
    if k == 0:
        return cloud
    order = np.argsort(i_g, kind="stable")
    keep = np.sort(order[k:])
    return cloud.take(keep)


def quantile_curve(scores):
    """Cumulative importance share of the x% least important Gaussians.

    Returns (x_percent, y_percent), each of length N + 1, from (0, 0) to
    (100, 100). Uniform scores give the diagonal.
    """
    s = np.asarray(scores.i_g if isinstance(scores, ImportanceScores) else scores,
                   dtype=np.float64)
    if s.ndim != 1 or len(s) == 0:
        raise ValueError("scores must be a non-empty 1-D array")
    if (s < 0).any():
        raise ValueError("scores must be non-negative")
    total = s.sum()
    if total == 0:
        raise ValueError("all scores are zero; the curve is undefined")
    n = len(s)
    cum = np.concatenate([[0.0], np.cumsum(np.sort(s))])
    x = 100.0 * np.arange(n + 1) / n
    # dividing first makes the endpoint exactly 100 (cum[-1]/cum[-1] == 1)
    y = 100.0 * (cum / cum[-1])
    return x, y
