"""CPU reference renderer for Gaussian scenes.

Splats project through the linearized perspective map: with camera-frame mean
(x, y, z), the Jacobian

    J = [[fx/z, 0, -fx*x/z^2],
         [0, fy/z, -fy*y/z^2]]

takes the camera-frame covariance R Sigma R^T to the 2D screen covariance
J (R Sigma R^T) J^T, plus a 0.3 pixel^2 low-pass floor on the diagonal.
Pixels sample at (col + 0.5, row + 0.5); a splat is evaluated exactly at
every pixel whose sample point falls inside its 3-sigma bounding rectangle.

Blending runs front to back in depth order (ties by Gaussian index):
alpha = min(0.99, opacity * exp(-0.5 d^T cov2d^-1 d)), splats with
alpha < 1/255 are skipped entirely, and a pixel stops accepting splats once
its transmittance falls below 1e-4. Remaining transmittance multiplies the
background. The per-splat sum of alpha * transmittance over all pixels is
returned as its contribution, the quantity view-dependent pruning consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian_model import activate
from .transform import quat_to_rotmat

NEAR_PLANE = 0.01
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
TRANSMITTANCE_MIN = 1e-4
COV2D_FLOOR = 0.3
SINGULAR_DET = 1e-12

# real SH basis constants, degrees 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def eval_sh(sh_dc, sh_rest, direction, degree):
    """Evaluate SH color for unit view direction(s); clamps to [0, 1].

    Accepts leading batch dimensions on all arguments. `sh_rest` holds the
    non-DC coefficients channel-major: index c * ((degree+1)^2 - 1) + (j - 1)
    is coefficient j of color channel c, matching the checkpoint layout.
    """
    if not 0 <= degree <= 3:
        raise ValueError("SH degree must be in [0, 3]")
    dc = np.asarray(sh_dc, dtype=np.float64)
    out = SH_C0 * dc
    if degree > 0:
        rest = np.asarray(sh_rest, dtype=np.float64)
        k = (degree + 1) ** 2 - 1
        sh = rest.reshape(rest.shape[:-1] + (3, k))
        d = np.asarray(direction, dtype=np.float64)
        x, y, z = (d[..., 0, None], d[..., 1, None], d[..., 2, None])
        out = out - SH_C1 * y * sh[..., 0] + SH_C1 * z * sh[..., 1] \
            - SH_C1 * x * sh[..., 2]
        if degree > 1:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            out = (out
                   + SH_C2[0] * xy * sh[..., 3]
                   + SH_C2[1] * yz * sh[..., 4]
                   + SH_C2[2] * (2.0 * zz - xx - yy) * sh[..., 5]
                   + SH_C2[3] * xz * sh[..., 6]
                   + SH_C2[4] * (xx - yy) * sh[..., 7])
        if degree > 2:
            out = (out
                   + SH_C3[0] * y * (3.0 * xx - yy) * sh[..., 8]
                   + SH_C3[1] * xy * z * sh[..., 9]
                   + SH_C3[2] * y * (4.0 * zz - xx - yy) * sh[..., 10]
                   + SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[..., 11]
                   + SH_C3[4] * x * (4.0 * zz - xx - yy) * sh[..., 12]
                   + SH_C3[5] * z * (xx - yy) * sh[..., 13]
                   + SH_C3[6] * x * (xx - 3.0 * yy) * sh[..., 14])
    return np.clip(0.5 + out, 0.0, 1.0)


def covariance_3d(rotations, log_scales):
    """World-frame covariance R S S^T R^T for each Gaussian, (N, 3, 3)."""
    rot = quat_to_rotmat(np.atleast_2d(rotations))
    scaled = rot * np.exp(np.atleast_2d(log_scales))[:, None, :]
    return scaled @ scaled.transpose(0, 2, 1)


def _project_all(positions, cov3d, camera):
    """Vectorized projection; returns (visible_mask, mean2d, cov2d, depth)."""
    rot, t = camera.rotation, camera.translation
    pc = positions @ rot.T + t
    z = pc[:, 2]
    visible = z > NEAR_PLANE
    zs = np.where(visible, z, 1.0)  # dummy for culled rows

    mean2d = np.empty((len(pc), 2), dtype=np.float64)
    mean2d[:, 0] = camera.fx * pc[:, 0] / zs + camera.cx
    mean2d[:, 1] = camera.fy * pc[:, 1] / zs + camera.cy

    jac = np.zeros((len(pc), 2, 3), dtype=np.float64)
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * pc[:, 0] / (zs * zs)
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * pc[:, 1] / (zs * zs)

    cov_cam = rot[None] @ cov3d @ rot.T[None]
    cov2d = jac @ cov_cam @ jac.transpose(0, 2, 1)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR
    return visible, mean2d, cov2d, z


def project_gaussian(mean, cov3d, camera):
    """Project one Gaussian; None when culled by the near plane.

    Returns (mean2d pixels, cov2d with the 0.3 low-pass floor, camera depth).
    """
    visible, mean2d, cov2d, z = _project_all(
        np.asarray(mean, dtype=np.float64)[None, :],
        np.asarray(cov3d, dtype=np.float64)[None], camera)
    if not visible[0]:
        return None
    return mean2d[0], cov2d[0], float(z[0])


@dataclass
class RenderOutput:
    image: np.ndarray          # (H, W, 3) in [0, 1]
    contributions: np.ndarray  # (N,) sum of alpha * transmittance over pixels
    skipped_singular: int      # splats dropped by the degenerate-cov2d guard


def render(cloud, camera, background=(0.0, 0.0, 0.0)):
    """Rasterize the cloud; deterministic for a fixed scene and camera."""
    h, w = camera.height, camera.width
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape != (3,):
        raise ValueError("background must be an RGB triple")
    n = len(cloud)
    image = np.zeros((h, w, 3), dtype=np.float64)
    contributions = np.zeros(n, dtype=np.float64)
    if n == 0:
        image += bg
        return RenderOutput(image, contributions, 0)

    cov3d = covariance_3d(cloud.rotations, cloud.log_scales)
    visible, mean2d, cov2d, depth = _project_all(cloud.positions, cov3d, camera)
    _, opacities = activate(cloud)

    campos = camera.position
    dirs = cloud.positions - campos
    lens = np.linalg.norm(dirs, axis=1, keepdims=True)
    lens[lens == 0.0] = 1.0
    colors = eval_sh(cloud.sh_dc, cloud.sh_rest, dirs / lens, cloud.sh_degree)

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1]
    det = a * c - b * b
    singular = visible & (det <= SINGULAR_DET)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = 3.0 * np.sqrt(np.maximum(lam_max, 0.0))

    order = np.argsort(depth, kind="stable")
    order = order[visible[order] & ~singular[order]]

    transmittance = np.ones((h, w), dtype=np.float64)
    frozen = np.zeros((h, w), dtype=bool)
    safe_det = np.where(det > SINGULAR_DET, det, 1.0)
    inv_a, inv_b, inv_c = c / safe_det, -b / safe_det, a / safe_det

    for g in order:
        mx, my = mean2d[g]
        r = radius[g]
        # pixels whose sample point (col+0.5, row+0.5) lies within the rect
        c0 = max(int(math.ceil(mx - r - 0.5)), 0)
        c1 = min(int(math.floor(mx + r - 0.5)), w - 1)
        r0 = max(int(math.ceil(my - r - 0.5)), 0)
        r1 = min(int(math.floor(my + r - 0.5)), h - 1)
        if c0 > c1 or r0 > r1:
            continue
        dx = np.arange(c0, c1 + 1) + 0.5 - mx
        dy = (np.arange(r0, r1 + 1) + 0.5 - my)[:, None]
        power = -0.5 * (inv_a[g] * dx * dx + inv_c[g] * dy * dy) - inv_b[g] * dy * dx
        alpha = np.minimum(opacities[g] * np.exp(power), ALPHA_MAX)
        live = (alpha >= ALPHA_MIN) & ~frozen[r0:r1 + 1, c0:c1 + 1]
        if not live.any():
            continue
        t_here = transmittance[r0:r1 + 1, c0:c1 + 1]
        weight = np.where(live, alpha * t_here, 0.0)
        image[r0:r1 + 1, c0:c1 + 1] += weight[:, :, None] * colors[g]
        contributions[g] = weight.sum()
        t_new = np.where(live, t_here * (1.0 - alpha), t_here)
        transmittance[r0:r1 + 1, c0:c1 + 1] = t_new
        frozen[r0:r1 + 1, c0:c1 + 1] |= t_new < TRANSMITTANCE_MIN

    image += transmittance[:, :, None] * bg
    return RenderOutput(image, contributions, int(np.count_nonzero(singular)))
