"""Serialized scene container and the end-to-end encode/decode pipeline.

File layout (all integers little-endian; full byte spec in FORMAT.md):

    magic "MSON" | version u8 | flags u8 | bit_width u8 | sh_degree u8
    block_length u32 | leaf_count u64 | codebook_size u32
    6 section entries: offset u64, compressed u64, raw u64, crc32 u32

Sections, in file order: octree, dc, important, codebook, indices, metadata.
Each is an independent raw-DEFLATE stream; the CRC covers the compressed
bytes so corruption is caught before anything is inflated or interpreted.

The "important" attributes travel as ten scalar channels in a fixed order
(opacity logit, three Euler angles, three log-scales, three SH DC values).
Channels pass through the hierarchical transform over the octree -- except
the scales when the effective raht-on-scales flag is off -- and the AC
coefficients are block-quantized to bit_width bits. sh_rest rows are
vector-quantized; the codebook ships as float32 with packed indices.

With EncoderConfig.raw_coefficients set (a debug mode) every coefficient and
sh_rest row is stored as raw float32 and quantization/VQ are skipped, which
isolates the octree + Euler + transform stages.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import CorruptStreamError, FormatError, PipelineError
from .gaussian_model import GaussianCloud, sh_rest_width
from .octree import Octree, decode_octree, encode_octree, voxelize
from .pruning import compute_importance, prune
from .quantization import (QuantizedChannel, block_dequantize, block_quantize,
                           vq_decode, vq_fit)
from .transform import (RahtCoefficients, build_raht_schedule, euler_to_quat,
                        quat_to_euler, raht_forward, raht_inverse)

MAGIC = b"MSON"
VERSION = 1

FLAG_RAHT_SCALES = 0x01
FLAG_RAW_COEFFS = 0x02
FLAG_HAS_SH_REST = 0x04

SECTIONS = ("octree", "dc", "important", "codebook", "indices", "metadata")
CHANNELS = ("opacity", "euler_phi", "euler_theta", "euler_psi",
            "scale_0", "scale_1", "scale_2", "sh_dc_0", "sh_dc_1", "sh_dc_2")
_SCALE_CHANNELS = frozenset(("scale_0", "scale_1", "scale_2"))

_HEADER = struct.Struct("<4sBBBBIQI")
_ENTRY = struct.Struct("<QQQI")
HEADER_BYTES = _HEADER.size + len(SECTIONS) * _ENTRY.size


@dataclass
class EncoderConfig:
    tau: float = 0.66
    beta: float = 0.1
    depth: int = 12
    bit_width: int = 8
    block_length: int = 8192
    codebook_size: int = 4096
    vq_iters: int = 10
    vq_batch: int = 65536
    raht_scales: str = "auto"  # "auto" | "on" | "off"
    seed: int = 0
    raw_coefficients: bool = False

    def validate(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must be in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 1 <= self.depth <= 21:
            raise ValueError("depth must be in [1, 21]")
        if not 1 <= self.bit_width <= 16:
            raise ValueError("bit_width must be in [1, 16]")
        if self.block_length < 1:
            raise ValueError("block_length must be >= 1")
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be >= 1")
        if self.vq_iters < 0 or self.vq_batch < 1:
            raise ValueError("vq_iters must be >= 0 and vq_batch >= 1")
        if self.raht_scales not in ("auto", "on", "off"):
            raise ValueError("raht_scales must be auto, on, or off")

    def effective_raht_scales(self):
        """Scales skip the transform at coarse bit widths under 'auto'."""
        if self.raht_scales == "auto":
            return self.bit_width > 8
        return self.raht_scales == "on"


# ---------------------------------------------------------------------------
# bit packing
# ---------------------------------------------------------------------------


def pack_bits(values, bits):
    """Pack unsigned ints to a little-endian bitstream, `bits` per value."""
    v = np.asarray(values, dtype=np.uint32)
    if len(v) == 0:
        return b""
    mat = ((v[:, None] >> np.arange(bits, dtype=np.uint32)) & 1).astype(np.uint8)
    return np.packbits(mat.reshape(-1), bitorder="little").tobytes()


def unpack_bits(data, bits, count):
    need = (count * bits + 7) // 8
    if len(data) != need:
        raise CorruptStreamError(
            f"packed stream is {len(data)} bytes, expected {need}")
    if count == 0:
        return np.empty(0, dtype=np.uint32)
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    tail = raw[count * bits:]
    if tail.any():
        raise CorruptStreamError("non-zero padding bits in packed stream")
    mat = raw[: count * bits].reshape(count, bits).astype(np.uint32)
    return (mat << np.arange(bits, dtype=np.uint32)).sum(axis=1, dtype=np.uint32)


def _index_bits(k):
    return max(1, int(k - 1).bit_length())


# ---------------------------------------------------------------------------
# container parsing / serialization
# ---------------------------------------------------------------------------


@dataclass
class MesonContainer:
    """Parsed container: header fields plus decompressed section payloads."""

    bit_width: int
    sh_degree: int
    block_length: int
    leaf_count: int
    codebook_size: int
    raht_scales_on: bool
    raw_coefficients: bool
    has_sh_rest: bool
    sections: dict

    def flags(self):
        return ((FLAG_RAHT_SCALES if self.raht_scales_on else 0)
                | (FLAG_RAW_COEFFS if self.raw_coefficients else 0)
                | (FLAG_HAS_SH_REST if self.has_sh_rest else 0))

    def to_bytes(self):
        entries = []
        blobs = []
        offset = HEADER_BYTES
        for name in SECTIONS:
            raw = self.sections[name]
            co = zlib.compressobj(level=6, wbits=-15)
            comp = co.compress(raw) + co.flush()
            entries.append(_ENTRY.pack(offset, len(comp), len(raw),
                                       zlib.crc32(comp) & 0xFFFFFFFF))
            blobs.append(comp)
            offset += len(comp)
        head = _HEADER.pack(MAGIC, VERSION, self.flags(), self.bit_width,
                            self.sh_degree, self.block_length,
                            self.leaf_count, self.codebook_size)
        return b"".join([head, *entries, *blobs])

    @classmethod
    def from_bytes(cls, data):
        header, table = _read_header(data)
        sections = {name: _load_section(data, name, entry)
                    for name, entry in zip(SECTIONS, table)}
        return cls(sections=sections, **header)


def _read_header(data):
    if len(data) < HEADER_BYTES:
        raise FormatError("file shorter than the container header")
    magic, version, flags, bits, degree, block_len, leaves, k = \
        _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError("bad magic; not a scene container")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if flags & ~(FLAG_RAHT_SCALES | FLAG_RAW_COEFFS | FLAG_HAS_SH_REST):
        raise FormatError(f"unknown flag bits 0x{flags:02x}")
    if not 1 <= bits <= 16:
        raise FormatError(f"bit width {bits} out of range")
    if block_len < 1 or leaves < 1:
        raise FormatError("invalid block length or leaf count")
    header = {
        "bit_width": bits, "sh_degree": degree, "block_length": block_len,
        "leaf_count": leaves, "codebook_size": k,
        "raht_scales_on": bool(flags & FLAG_RAHT_SCALES),
        "raw_coefficients": bool(flags & FLAG_RAW_COEFFS),
        "has_sh_rest": bool(flags & FLAG_HAS_SH_REST),
    }
    table = []
    pos = _HEADER.size
    expected_offset = HEADER_BYTES
    for name in SECTIONS:
        offset, comp_len, raw_len, crc = _ENTRY.unpack_from(data, pos)
        pos += _ENTRY.size
        if offset != expected_offset:
            raise CorruptStreamError(f"section '{name}' offset mismatch")
        if offset + comp_len > len(data):
            raise CorruptStreamError(f"section '{name}' overruns the file")
        table.append((offset, comp_len, raw_len, crc))
        expected_offset = offset + comp_len
    if expected_offset != len(data):
        raise CorruptStreamError("trailing bytes after the last section")
    return header, table


def _load_section(data, name, entry):
    offset, comp_len, raw_len, crc = entry
    comp = data[offset:offset + comp_len]
    if (zlib.crc32(comp) & 0xFFFFFFFF) != crc:
        raise CorruptStreamError(f"CRC mismatch in section '{name}'")
    try:
        raw = zlib.decompress(comp, wbits=-15)
    except zlib.error as exc:
        raise CorruptStreamError(f"section '{name}' fails to inflate: {exc}") from exc
    if len(raw) != raw_len:
        raise CorruptStreamError(f"section '{name}' inflates to the wrong size")
    return raw


class _Reader:
    """Cursor over a section payload with hard bounds checks."""

    def __init__(self, buf, name):
        self.buf, self.name, self.pos = buf, name, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CorruptStreamError(f"section '{self.name}' is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st):
        return st.unpack(self.take(st.size))

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)

    def done(self):
        if self.pos != len(self.buf):
            raise CorruptStreamError(f"trailing bytes in section '{self.name}'")


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------


def _raht_flags(raht_scales_on):
    return tuple(name not in _SCALE_CHANNELS or raht_scales_on
                 for name in CHANNELS)


def _serialize_octree(tree):
    head = struct.pack("<Bdddd", tree.depth, *tree.bbox_min, tree.bbox_size)
    return head + struct.pack("<Q", len(tree.occupancy)) + tree.occupancy


def _parse_octree(buf):
    r = _Reader(buf, "octree")
    depth, x, y, z, size = r.unpack(struct.Struct("<Bdddd"))
    (count,) = r.unpack(struct.Struct("<Q"))
    occupancy = r.take(count)
    r.done()
    return Octree(depth=depth, bbox_min=np.array([x, y, z]), bbox_size=size,
                  occupancy=bytes(occupancy))


def encode(cloud, cameras=None, config=None, threads=1):
    """Compress a cloud to container bytes.

    Deterministic: the same cloud, cameras, and config produce identical
    bytes. tau > 0 requires cameras (view-dependent scoring renders the
    scene from every training view).
    """
    cfg = config if config is not None else EncoderConfig()
    cfg.validate()
    if len(cloud) == 0:
        raise ValueError("cannot encode an empty cloud")

    if cfg.tau > 0:
        if not cameras:
            raise ValueError("tau > 0 requires training cameras")
        scores = compute_importance(cloud, cameras, beta=cfg.beta, threads=threads)
        cloud = prune(cloud, scores, cfg.tau)
        if len(cloud) == 0:
            raise PipelineError("pruning removed every Gaussian")

    grid, merged = voxelize(cloud, cfg.depth)
    tree = encode_octree(grid)
    schedule = build_raht_schedule(grid.voxel_keys, cfg.depth)
    m = len(merged)

    raht_scales_on = cfg.effective_raht_scales()
    raht_on = _raht_flags(raht_scales_on)
    eulers = np.atleast_2d(quat_to_euler(merged.rotations))
    channels = np.column_stack([
        merged.opacity_logits, eulers, merged.log_scales, merged.sh_dc])

    coeffs = raht_forward(channels[:, np.asarray(raht_on)], schedule)
    dc32 = np.asarray(coeffs.dc, dtype=np.float32).reshape(-1)

    important = bytearray()
    tables = []
    col = 0
    for i, name in enumerate(CHANNELS):
        data = coeffs.ac[:, col] if raht_on[i] else channels[:, i]
        col += raht_on[i]
        if cfg.raw_coefficients:
            important += data.astype("<f4").tobytes()
            tables.append((np.empty(0, np.float32), np.empty(0, np.float32)))
        elif len(data) == 0:
            tables.append((np.empty(0, np.float32), np.empty(0, np.float32)))
        else:
            qc = block_quantize(data, cfg.bit_width, cfg.block_length)
            important += pack_bits(qc.codes, cfg.bit_width)
            tables.append((qc.block_min, qc.block_max))

    has_rest = merged.sh_rest.shape[1] > 0
    if not has_rest:
        codebook_blob, indices_blob, k_eff = b"", b"", 0
    elif cfg.raw_coefficients:
        codebook_blob = merged.sh_rest.astype("<f4").tobytes()
        indices_blob, k_eff = b"", 0
    else:
        k_eff = min(cfg.codebook_size, m)
        book = vq_fit(merged.sh_rest, k_eff, iters=cfg.vq_iters,
                      batch_size=cfg.vq_batch, seed=cfg.seed)
        codebook_blob = book.centroids.astype("<f4").tobytes()
        indices_blob = pack_bits(book.indices, _index_bits(k_eff))

    meta = bytearray(struct.pack("<BIdddd", cfg.depth, cfg.block_length,
                                 *grid.bbox_min, grid.bbox_size))
    for mn, mx in tables:
        meta += struct.pack("<I", len(mn))
        pair = np.empty((len(mn), 2), dtype="<f4")
        pair[:, 0], pair[:, 1] = mn, mx
        meta += pair.tobytes()

    container = MesonContainer(
        bit_width=cfg.bit_width, sh_degree=merged.sh_degree,
        block_length=cfg.block_length, leaf_count=m, codebook_size=k_eff,
        raht_scales_on=raht_scales_on, raw_coefficients=cfg.raw_coefficients,
        has_sh_rest=has_rest,
        sections={
            "octree": _serialize_octree(tree),
            "dc": struct.pack("<H", len(dc32)) + dc32.astype("<f4").tobytes(),
            "important": bytes(important),
            "codebook": codebook_blob,
            "indices": indices_blob,
            "metadata": bytes(meta),
        })
    return container.to_bytes()


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def decode(data):
    """Reconstruct a renderable cloud from container bytes (fail-closed)."""
    c = MesonContainer.from_bytes(data)
    m = c.leaf_count

    tree = _parse_octree(c.sections["octree"])
    keys, centers, schedule = decode_octree(tree)
    if len(keys) != m:
        raise CorruptStreamError(
            f"octree decodes to {len(keys)} leaves, header says {m}")

    meta = _Reader(c.sections["metadata"], "metadata")
    depth, block_len, bx, by, bz, bsize = meta.unpack(struct.Struct("<BIdddd"))
    if depth != tree.depth or block_len != c.block_length:
        raise CorruptStreamError("metadata echo disagrees with header/octree")
    if (np.array([bx, by, bz]) != tree.bbox_min).any() or bsize != tree.bbox_size:
        raise CorruptStreamError("metadata bounding box disagrees with octree")
    raht_on = _raht_flags(c.raht_scales_on)
    tables = []
    for name, on in zip(CHANNELS, raht_on):
        (n_blocks,) = meta.unpack(struct.Struct("<I"))
        length = m - 1 if on else m
        expect = 0 if c.raw_coefficients else -(-length // c.block_length)
        if n_blocks != expect:
            raise CorruptStreamError(f"channel '{name}': bad block count")
        pair = meta.array("<f4", 2 * n_blocks).reshape(n_blocks, 2)
        tables.append((pair[:, 0], pair[:, 1]))
    meta.done()

    dcr = _Reader(c.sections["dc"], "dc")
    (dc_count,) = dcr.unpack(struct.Struct("<H"))
    if dc_count != sum(raht_on):
        raise CorruptStreamError("DC count disagrees with the channel layout")
    dc = dcr.array("<f4", dc_count).astype(np.float64)
    dcr.done()

    imp = _Reader(c.sections["important"], "important")
    channels = np.empty((m, len(CHANNELS)), dtype=np.float64)
    ac_cols = []
    for i, name in enumerate(CHANNELS):
        length = m - 1 if raht_on[i] else m
        if c.raw_coefficients:
            values = imp.array("<f4", length).astype(np.float64)
        elif length == 0:
            values = np.empty(0, dtype=np.float64)
        else:
            packed = imp.take((length * c.bit_width + 7) // 8)
            codes = unpack_bits(packed, c.bit_width, length)
            qc = QuantizedChannel(
                codes=codes.astype(np.uint16), block_min=tables[i][0],
                block_max=tables[i][1], bit_width=c.bit_width,
                block_length=c.block_length)
            values = block_dequantize(qc)
        if raht_on[i]:
            ac_cols.append(values)
        else:
            channels[:, i] = values
    imp.done()

    if ac_cols:
        restored = raht_inverse(
            RahtCoefficients(dc=dc, ac=np.stack(ac_cols, axis=1)), schedule)
        channels[:, np.asarray(raht_on)] = restored

    rest_width = sh_rest_width(c.sh_degree)
    if not c.has_sh_rest or c.raw_coefficients:
        if len(c.sections["indices"]):
            raise CorruptStreamError("unexpected vector index payload")
    if not c.has_sh_rest:
        if rest_width != 0:
            raise CorruptStreamError("missing sh_rest payload for this SH degree")
        if len(c.sections["codebook"]):
            raise CorruptStreamError("unexpected codebook payload")
        sh_rest = np.zeros((m, 0))
    elif c.raw_coefficients:
        book = _Reader(c.sections["codebook"], "codebook")
        sh_rest = book.array("<f4", m * rest_width).astype(np.float64)
        sh_rest = sh_rest.reshape(m, rest_width)
        book.done()
    else:
        if not 1 <= c.codebook_size <= m:
            raise CorruptStreamError("codebook size out of range")
        book = _Reader(c.sections["codebook"], "codebook")
        cents = book.array("<f4", c.codebook_size * rest_width).astype(np.float64)
        cents = cents.reshape(c.codebook_size, rest_width)
        book.done()
        idx_blob = c.sections["indices"]
        indices = unpack_bits(idx_blob, _index_bits(c.codebook_size), m)
        sh_rest = vq_decode(indices, cents)

    return GaussianCloud(
        positions=centers,
        rotations=euler_to_quat(channels[:, 1:4]),
        log_scales=channels[:, 4:7],
        opacity_logits=channels[:, 0],
        sh_dc=channels[:, 7:10],
        sh_rest=sh_rest,
        sh_degree=c.sh_degree)


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositionReport:
    header: dict
    rows: tuple  # (name, compressed_bytes, percent)
    total_bytes: int

    def to_text(self):
        lines = ["container header:"]
        for key, val in self.header.items():
            lines.append(f"  {key}: {val}")
        lines.append(f"{'section':>10} {'bytes':>12} {'percent':>9}")
        for name, size, pct in self.rows:
            lines.append(f"{name:>10} {size:>12} {pct:>8.2f}%")
        lines.append(f"{'total':>10} {self.total_bytes:>12} {100.0:>8.2f}%")
        return "\n".join(lines)


def inspect(data):
    """Header echo and per-section size breakdown; validates CRCs."""
    header, table = _read_header(data)
    for name, entry in zip(SECTIONS, table):
        offset, comp_len, _, crc = entry
        if (zlib.crc32(data[offset:offset + comp_len]) & 0xFFFFFFFF) != crc:
            raise CorruptStreamError(f"CRC mismatch in section '{name}'")
    total = len(data)
    rows = [("header", HEADER_BYTES, 100.0 * HEADER_BYTES / total)]
    rows += [(name, entry[1], 100.0 * entry[1] / total)
             for name, entry in zip(SECTIONS, table)]
    return CompositionReport(header=dict(header), rows=tuple(rows),
                             total_bytes=total)
