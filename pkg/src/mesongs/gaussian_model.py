"""Gaussian scene container, camera model, and checkpoint PLY I/O.

A scene is a flat array of anisotropic 3D Gaussians stored in pre-activation
space: log-scales (exp gives the axis lengths), opacity logits (sigmoid gives
alpha), unit quaternions [w, x, y, z], and spherical-harmonic coefficients
split into the DC triplet and the higher-degree remainder.

PLY payloads are 32-bit floats; everything is promoted to float64 in memory
and rounded back to float32 on save, so save(load(p)) reproduces the file
bit-exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

# elementary scalar types a PLY header may declare
_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def sh_rest_width(sh_degree):
    """Coefficient count of the non-DC SH block: 3 * ((f+1)^2 - 1)."""
    return 3 * ((sh_degree + 1) ** 2 - 1)


def _degree_from_width(width):
    k, f = width // 3 + 1, 0
    while (f + 1) ** 2 < k:
        f += 1
    if width % 3 or (f + 1) ** 2 != k:
        raise FormatError(f"f_rest property count {width} does not match any SH degree")
    return f


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True, order="C")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GaussianCloud:
    """Immutable scene of N Gaussians in pre-activation space."""

    positions: np.ndarray       # (N, 3) world coordinates
    rotations: np.ndarray       # (N, 4) unit quaternions [w, x, y, z]
    log_scales: np.ndarray      # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh_dc: np.ndarray           # (N, 3)
    sh_rest: np.ndarray         # (N, D), D = 3 * ((sh_degree+1)^2 - 1)
    sh_degree: int

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(self.positions))
        object.__setattr__(self, "rotations", _frozen(self.rotations))
        object.__setattr__(self, "log_scales", _frozen(self.log_scales))
        object.__setattr__(self, "opacity_logits", _frozen(np.ravel(self.opacity_logits)))
        object.__setattr__(self, "sh_dc", _frozen(self.sh_dc))
        rest = np.asarray(self.sh_rest, dtype=np.float64)
        rest = rest.reshape(len(self.positions), sh_rest_width(self.sh_degree))
        object.__setattr__(self, "sh_rest", _frozen(rest))

        n = len(self.positions)
        shapes = {
            "positions": (self.positions, (n, 3)),
            "rotations": (self.rotations, (n, 4)),
            "log_scales": (self.log_scales, (n, 3)),
            "opacity_logits": (self.opacity_logits, (n,)),
            "sh_dc": (self.sh_dc, (n, 3)),
            "sh_rest": (self.sh_rest, (n, sh_rest_width(self.sh_degree))),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
        if self.sh_degree < 0:
            raise ValueError("sh_degree must be >= 0")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.abs(norms - 1.0).max() > 1e-5:
                raise ValueError("rotations are not unit quaternions")

    def __len__(self):
        return len(self.positions)

    def take(self, indices):
        """Row subset (or reorder) as a new cloud."""
        return GaussianCloud(
            self.positions[indices], self.rotations[indices],
            self.log_scales[indices], self.opacity_logits[indices],
            self.sh_dc[indices], self.sh_rest[indices], self.sh_degree)


def activate(cloud):
    """Map pre-activation fields to rendering space.

    Returns (scales, opacities): exp of the log-scales and sigmoid of the
    opacity logits.
    """
    return np.exp(cloud.log_scales), _sigmoid(cloud.opacity_logits)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; `rotation`/`translation` map world to camera space
    (x_cam = R @ x_world + t, camera looks along +z)."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(np.ravel(self.translation)))
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation is not orthonormal")

    @property
    def position(self):
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation


def load_cameras(path):
    """Read a camera rig from JSON (schema documented in FORMAT.md)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid camera JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cameras"), list):
        raise FormatError("camera JSON must be an object with a 'cameras' list")
    cameras = []
    for i, entry in enumerate(doc["cameras"]):
        try:
            cameras.append(Camera(
                width=int(entry["width"]), height=int(entry["height"]),
                fx=float(entry["fx"]), fy=float(entry["fy"]),
                cx=float(entry["cx"]), cy=float(entry["cy"]),
                rotation=np.asarray(entry["rotation"], dtype=np.float64),
                translation=np.asarray(entry["translation"], dtype=np.float64)))
        except KeyError as exc:
            raise FormatError(f"camera {i}: missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise DataError(f"camera {i}: {exc}") from exc
    if not cameras:
        raise FormatError("camera JSON lists no cameras")
    return cameras


def save_cameras(cameras, path):
    doc = {"cameras": [{
        "width": c.width, "height": c.height,
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "rotation": c.rotation.tolist(), "translation": c.translation.tolist(),
    } for c in cameras]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def _required_properties(rest_width):
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(rest_width)]
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def load_ply(path):
    """Load a Gaussian checkpoint from binary little-endian PLY.

    Required float32 vertex properties: x y z, f_dc_0..2, f_rest_0..(D-1),
    opacity, scale_0..2, rot_0..3. Extra properties (e.g. normals) are
    ignored. Rotation rows are normalized at load time; rows that are
    already unit to float32 precision are left untouched so a save/load
    round trip is bit-exact.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file")
    header = blob[: end + len(b"end_header\n")]
    payload = blob[len(header):]

    fmt = None
    count = None
    fields = []          # (name, numpy type) in file order, vertex element only
    in_vertex = False
    seen_vertex = False
    for line in header.decode("ascii", "replace").splitlines()[1:-1]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            if tok[1] == "vertex":
                if seen_vertex:
                    raise FormatError("duplicate vertex element")
                in_vertex = seen_vertex = True
                count = int(tok[2])
            else:
                if not seen_vertex and int(tok[2]) > 0:
                    raise FormatError(f"unsupported element '{tok[1]}' before vertex data")
                in_vertex = False
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise FormatError("list properties are not supported")
            if tok[1] not in _PLY_TYPES:
                raise FormatError(f"unsupported property type '{tok[1]}'")
            fields.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt != "binary_little_endian":
        raise FormatError(f"unsupported PLY format '{fmt}'")
    if count is None:
        raise FormatError("missing vertex element")

    names = [n for n, _ in fields]
    rest_width = sum(1 for n in names if re.fullmatch(r"f_rest_\d+", n))
    degree = _degree_from_width(rest_width)
    for name in _required_properties(rest_width):
        if name not in names:
            raise FormatError(f"missing property '{name}'")

    dtype = np.dtype([(n, "<" + t) for n, t in fields])
    if len(payload) < count * dtype.itemsize:
        raise FormatError("truncated PLY payload")
    rows = np.frombuffer(payload, dtype=dtype, count=count)

    def col(name):
        return rows[name].astype(np.float64)

    def block(prefix, width):
        out = np.empty((count, width), dtype=np.float64)
        for i in range(width):
            out[:, i] = col(f"{prefix}{i}")
        return out

    data = {
        "positions": np.stack([col("x"), col("y"), col("z")], axis=1),
        "sh_dc": block("f_dc_", 3),
        "sh_rest": block("f_rest_", rest_width),
        "opacity_logits": col("opacity"),
        "log_scales": block("scale_", 3),
        "rotations": block("rot_", 4),
    }
    for name, arr in data.items():
        bad = ~np.isfinite(arr)
        if bad.any():
            row = int(np.nonzero(bad.reshape(count, -1).any(axis=1))[0][0])
            raise DataError(f"non-finite value in '{name}' at row {row}")

    if count:
        norms = np.linalg.norm(data["rotations"], axis=1)
        if (norms == 0).any():
            row = int(np.nonzero(norms == 0)[0][0])
            raise DataError(f"zero-norm rotation at row {row}")
        off = np.abs(norms - 1.0) > 1e-6
        if off.any():
            data["rotations"] = data["rotations"].copy()
            data["rotations"][off] /= norms[off, None]

    return GaussianCloud(sh_degree=degree, **data)


def ply_nbytes(cloud):
    """Size in bytes of the PLY save_ply would write for this cloud."""
    names = _required_properties(cloud.sh_rest.shape[1])
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")
    return len(("\n".join(header) + "\n").encode("ascii")) + 4 * len(names) * len(cloud)


def save_ply(cloud, path):
    """Write the checkpoint layout load_ply expects (float32 payload)."""
    names = _required_properties(cloud.sh_rest.shape[1])
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in names]
    header.append("end_header")

    table = np.concatenate([
        cloud.positions, cloud.sh_dc, cloud.sh_rest,
        cloud.opacity_logits[:, None], cloud.log_scales, cloud.rotations,
    ], axis=1).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(table.tobytes())
