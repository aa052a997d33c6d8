"""Scalar block quantization and codebook vector quantization.

Block quantizer: a channel splits into fixed-length blocks; each block
stores float32 min/max and maps values to b-bit codes through

    S_c = (max - min) / 2^b
    Z_c = 2^b - max / S_c - 1/2
    code = round(clamp(v / S_c + Z_c, 0, 2^b - 1))

with round-half-to-even. The half-step shift centers the 2^b grid points
inside [min, max], so every in-range value lands within S_c/2 of a grid
point; an integer zero point would leave one end of the block up to
1.5 * S_c from its nearest level. S_c and Z_c derive from the
float32-rounded min/max (exactly what the container stores), so encode
and decode agree bit for bit. A block whose min equals its max stores
code 0 and decodes to the min.

Vector quantizer: k-means++ seeding followed by full-batch Lloyd when the
training set has at most 100k vectors, mini-batch updates otherwise. The
Lloyd passes use triangle-inequality bounds to skip points whose
assignment provably cannot change, which keeps large fits fast without
altering the result. Everything is driven by one seeded generator, so a
fit is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptStreamError, DataError

FULL_BATCH_LIMIT = 100_000
_EPS32 = float(np.finfo(np.float32).eps)


# ---------------------------------------------------------------------------
# block quantizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizedChannel:
    codes: np.ndarray      # (n,) uint16, values < 2^bit_width
    block_min: np.ndarray  # (n_blocks,) float32
    block_max: np.ndarray  # (n_blocks,) float32
    bit_width: int
    block_length: int


def _block_params(block_min, block_max, bit_width):
    """Per-block scale and zero point in float64, from the stored f32 extrema."""
    mn = block_min.astype(np.float64)
    mx = block_max.astype(np.float64)
    levels = float(1 << bit_width)
    scale = (mx - mn) / levels
    degenerate = scale <= 0.0
    safe = np.where(degenerate, 1.0, scale)
    zero = levels - mx / safe - 0.5
    return safe, zero, degenerate


def block_quantize(values, bit_width, block_length):
    """Quantize a 1-D channel to b-bit codes in blocks of block_length."""
    if not 1 <= bit_width <= 16:
        raise ValueError("bit_width must be in [1, 16]")
    if block_length < 1:
        raise ValueError("block_length must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) == 0:
        raise ValueError("values must be a non-empty 1-D array")
    starts = np.arange(0, len(v), block_length)
    finite = np.isfinite(v)
    if not finite.all():
        block = int(np.nonzero(~finite)[0][0] // block_length)
        raise DataError(f"non-finite value in block {block}")

    block_min = np.minimum.reduceat(v, starts).astype(np.float32)
    block_max = np.maximum.reduceat(v, starts).astype(np.float32)
    scale, zero, degenerate = _block_params(block_min, block_max, bit_width)

    lengths = np.diff(np.append(starts, len(v)))
    exp = lambda per_block: np.repeat(per_block, lengths)
    top = float((1 << bit_width) - 1)
    codes = np.rint(np.clip(v / exp(scale) + exp(zero), 0.0, top))
    codes[exp(degenerate)] = 0.0
    return QuantizedChannel(codes=codes.astype(np.uint16),
                            block_min=block_min, block_max=block_max,
                            bit_width=bit_width, block_length=block_length)


def block_dequantize(channel):
    """Reconstruct a channel from codes and stored block extrema."""
    codes = np.asarray(channel.codes)
    n_blocks = int(np.ceil(len(codes) / channel.block_length)) if len(codes) else 0
    if len(channel.block_min) != n_blocks or len(channel.block_max) != n_blocks:
        raise CorruptStreamError("block table does not match channel length")
    if len(codes) == 0:
        return np.empty(0, dtype=np.float64)
    if int(codes.max(initial=0)) >> channel.bit_width:
        raise CorruptStreamError("quantized code exceeds bit width")
    scale, zero, degenerate = _block_params(
        np.asarray(channel.block_min), np.asarray(channel.block_max),
        channel.bit_width)
    starts = np.arange(0, len(codes), channel.block_length)
    lengths = np.diff(np.append(starts, len(codes)))
    exp = lambda per_block: np.repeat(per_block, lengths)
    out = (codes.astype(np.float64) - exp(zero)) * exp(scale)
    deg = exp(degenerate)
    out[deg] = exp(np.asarray(channel.block_min, dtype=np.float64))[deg]
    return out


# ---------------------------------------------------------------------------
# vector quantizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # (K, D) float64
    indices: np.ndarray    # (N,) training-set assignment, nearest centroid
    wcss: tuple = field(default=())  # per-iteration WCSS (full-batch fits)


def _plus_plus_seeds(sample, k, rng):
    """k-means++ on a training subsample; one distance pass per pick."""
    n = len(sample)
    seeds = np.empty((k, sample.shape[1]), dtype=np.float32)
    seeds[0] = sample[rng.integers(n)]
    norms = (sample * sample).sum(axis=1)
    d2 = norms - 2.0 * (sample @ seeds[0]) + (seeds[0] * seeds[0]).sum()
    np.maximum(d2, 0.0, out=d2)
    for j in range(1, k):
        p = d2.astype(np.float64)
        total = p.sum()
        if total > 0:
            pick = rng.choice(n, p=p / total)
        else:
            pick = rng.integers(n)
        seeds[j] = sample[pick]
        nd = norms - 2.0 * (sample @ seeds[j]) + (seeds[j] * seeds[j]).sum()
        np.minimum(d2, np.maximum(nd, 0.0), out=d2)
    return seeds.astype(np.float64)


def _augment(c32):
    """Stack -||c||^2 / 2 as an extra column so one sgemm against [x | 1]
    yields x.c - ||c||^2/2, which orders like squared distance."""
    k, d = c32.shape
    ca = np.empty((k, d + 1), dtype=np.float32)
    ca[:, :d] = c32
    ca[:, d] = -0.5 * (c32 * c32).sum(axis=1)
    return ca


def _scan_rows(x32, c32, rows, chunk=1024):
    """Exact-in-f32 nearest and second-nearest distances for chosen rows.

    The chunk keeps the (chunk, K) score block cache-resident, so the scan
    runs at sgemm speed plus two reduction passes.
    """
    k, d = c32.shape
    ca = _augment(c32)
    assign = np.empty(len(rows), dtype=np.int64)
    d1 = np.empty(len(rows), dtype=np.float64)
    d2 = np.empty(len(rows), dtype=np.float64)
    xa = np.ones((min(chunk, len(rows)), d + 1), dtype=np.float32)
    for s in range(0, len(rows), chunk):
        idx = rows[s:s + chunk]
        xs = x32[idx]
        xa[:len(idx), :d] = xs
        v = xa[:len(idx)] @ ca.T  # x.c - ||c||^2/2, higher = nearer
        a = v.argmax(axis=1)
        r = np.arange(len(idx))
        lead = v[r, a].astype(np.float64)
        if k == 1:
            second = np.full(len(idx), -np.inf)
        else:
            v[r, a] = -np.inf
            second = v.max(axis=1).astype(np.float64)
        xn = (xs * xs).sum(axis=1, dtype=np.float64)
        assign[s:s + chunk] = a
        d1[s:s + chunk] = np.sqrt(np.maximum(xn - 2.0 * lead, 0.0))
        d2[s:s + chunk] = np.sqrt(np.maximum(xn - 2.0 * second, 0.0))
    return assign, d1, d2


def _cluster_means(x, assign, k):
    counts = np.bincount(assign, minlength=k)
    sums = np.empty((k, x.shape[1]), dtype=np.float64)
    for d in range(x.shape[1]):
        sums[:, d] = np.bincount(assign, weights=x[:, d], minlength=k)
    return sums, counts


def _reseed_empty(newc, counts, assign, ub, lb, x):
    """Move each empty centroid onto the farthest member of the largest cluster.

    Returns the summed squared distance of the departed members to their old
    centroid: the amount the mean-decomposition WCSS identity over-counts.
    """
    departed = 0.0
    for j in np.nonzero(counts == 0)[0]:
        donor = int(np.argmax(counts))
        members = np.nonzero(assign == donor)[0]
        dist = ((x[members] - newc[donor]) ** 2).sum(axis=1)
        far_pos = int(np.argmax(dist))
        far = members[far_pos]
        departed += float(dist[far_pos])
        newc[j] = x[far]
        assign[far] = j
        ub[far] = 0.0
        lb[far] = 0.0
        counts[donor] -= 1
        counts[j] += 1
    return departed


def _lloyd(x, seeds, iters, collect_wcss):
    """Full-batch Lloyd; bound bookkeeping only skips provably-idle points."""
    n, k = len(x), len(seeds)
    c = seeds.copy()
    x32 = x.astype(np.float32)
    c32 = c.astype(np.float32)

    assign, ub, lb = _scan_rows(x32, c32, np.arange(n))
    sumsq_x = float((x * x).sum())
    wcss = []
    for _ in range(iters):
        sums, counts = _cluster_means(x, assign, k)
        nz = counts > 0
        newc = np.where(nz[:, None], sums / np.maximum(counts, 1)[:, None], c)
        # sum over clusters of count * ||mean||^2, against the memberships
        # the means were computed from
        mean_term = float(((sums[nz] ** 2).sum(axis=1) / counts[nz]).sum())
        reseeded = np.nonzero(counts == 0)[0]
        departed = _reseed_empty(newc, counts, assign, ub, lb, x)
        if collect_wcss:
            # within-cluster variance decomposition; members donated to
            # reseeded centroids now sit on them, so their terms drop out
            val = sumsq_x - mean_term - departed
            if n * x.shape[1] <= 2_000_000 or val < 1e-6 * sumsq_x:
                # the subtraction cancels when clusters are much tighter
                # than the data norm; recompute directly while affordable
                val = float(((x - newc[assign]) ** 2).sum())
            wcss.append(val)

        moves = np.sqrt(((newc - c) ** 2).sum(axis=1))
        c = newc
        c32 = c.astype(np.float32)
        ub += moves[assign]
        if len(reseeded):
            # a teleported centroid would collapse the shared lower bound for
            # every point; decay by the largest ordinary move and fold in the
            # exact distance to each reseeded centroid instead
            ordinary = np.delete(moves, reseeded)
            lb -= ordinary.max() if len(ordinary) else 0.0
            res32 = c32[reseeded]
            rn = (res32 * res32).sum(axis=1)
            for st in range(0, n, 8192):
                xs = x32[st:st + 8192]
                dr = rn[None, :] - 2.0 * (xs @ res32.T)
                dr += (xs * xs).sum(axis=1)[:, None]
                near = np.sqrt(np.maximum(dr.min(axis=1), 0.0))
                np.minimum(lb[st:st + 8192], near, out=lb[st:st + 8192])
        else:
            lb -= moves.max()

        # half the distance from each centroid to its nearest neighbor
        if k > 1:
            s = np.full(k, np.inf)
            cn = (c32 * c32).sum(axis=1)
            for st in range(0, k, 4096):
                d = cn[None, :] - 2.0 * (c32[st:st + 4096] @ c32.T)
                d += cn[st:st + 4096, None]
                np.fill_diagonal(d[:, st:st + 4096], np.inf)
                s[st:st + 4096] = np.sqrt(np.maximum(d.min(axis=1), 0.0))
            s *= 0.5
        else:
            s = np.zeros(1)

        thresh = np.maximum(s[assign], lb)
        cand = np.nonzero(ub > thresh)[0]
        if len(cand) * 2 < n:
            # tightening pays off only when it can spare a large rescan
            exact = np.sqrt(np.maximum(
                ((x32[cand] - c32[assign[cand]]) ** 2).sum(axis=1), 0.0))
            ub[cand] = exact
            cand = cand[exact > thresh[cand]]
        if len(cand):
            assign[cand], ub[cand], lb[cand] = _scan_rows(x32, c32, cand)
    return c, wcss


def vq_fit(vectors, k, iters=10, batch_size=65536, seed=0):
    """Train a codebook; deterministic for fixed (vectors, parameters, seed)."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("vectors must be a non-empty 2-D array")
    if not np.isfinite(x).all():
        raise DataError("vectors contain non-finite values")
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"codebook size {k} must be in [1, {n}]")
    if iters < 0 or batch_size < 1:
        raise ValueError("iters must be >= 0 and batch_size >= 1")

    rng = np.random.default_rng(seed)
    sub = min(n, 4 * k)
    sample = x[np.sort(rng.choice(n, size=sub, replace=False))] if sub < n else x
    seeds = _plus_plus_seeds(sample.astype(np.float32), k, rng)

    if n <= FULL_BATCH_LIMIT:
        centroids, wcss = _lloyd(x, seeds, iters, collect_wcss=True)
    else:
        centroids = seeds.copy()
        weight = np.zeros(k, dtype=np.float64)
        for _ in range(iters):
            batch = np.sort(rng.choice(n, size=min(batch_size, n), replace=False))
            a, _, _ = _scan_rows(x.astype(np.float32)[batch],
                                 centroids.astype(np.float32), np.arange(len(batch)))
            sums, counts = _cluster_means(x[batch], a, k)
            hit = counts > 0
            weight[hit] += counts[hit]
            step = (counts[hit] / weight[hit])[:, None]
            centroids[hit] += step * (sums[hit] / counts[hit, None] - centroids[hit])
        wcss = []

    indices = vq_encode(x, centroids)
    return Codebook(centroids=centroids, indices=indices, wcss=tuple(wcss))


def vq_encode(vectors, centroids, chunk=1024):
    """Nearest-centroid index per vector, ties to the lowest index.

    The scan runs in float32 for speed; rows whose two best distances land
    within the float32 error bound are re-ranked exactly in float64, so the
    result matches an exhaustive float64 search.
    """
    x = np.asarray(vectors, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    if x.ndim != 2 or c.ndim != 2 or x.shape[1] != c.shape[1]:
        raise ValueError("vectors and centroids must be 2-D with equal width")
    x32 = x.astype(np.float32)
    c32 = c.astype(np.float32)
    k = len(c)
    ca = _augment(c32)
    cn64 = (c * c).sum(axis=1)
    scale = float(np.abs(x).max(initial=0.0) ** 2 + cn64.max(initial=0.0) + 1.0)
    tol = 256.0 * _EPS32 * scale

    out = np.empty(len(x), dtype=np.int64)
    xa = np.ones((min(chunk, len(x)), x.shape[1] + 1), dtype=np.float32)
    for st in range(0, len(x), chunk):
        xs = x32[st:st + chunk]
        xa[:len(xs), :x.shape[1]] = xs
        v = xa[:len(xs)] @ ca.T  # x.c - ||c||^2/2, higher = nearer
        if k == 1:
            out[st:st + chunk] = 0
            continue
        rows = np.arange(len(xs))
        best = v.argmax(axis=1)
        lead = v[rows, best]
        v[rows, best] = -np.inf
        gap = 2.0 * (lead.astype(np.float64) - v.max(axis=1))
        close = np.nonzero(gap <= tol)[0]
        if len(close):
            xd = x[st + close]
            dd = cn64[None, :] - 2.0 * (xd @ c.T)
            best[close] = np.argmin(dd, axis=1)
        out[st:st + chunk] = best
    return out


def vq_decode(indices, centroids):
    """Look up centroid rows; exact copies of the codebook entries."""
    idx = np.asarray(indices)
    c = np.asarray(centroids)
    if len(idx) and (idx.min() < 0 or idx.max() >= len(c)):
        raise CorruptStreamError("vector index outside the codebook")
    return c[idx]
