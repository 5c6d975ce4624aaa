"""Progressive octree encoder/decoder and its container format.

Container (all integers little-endian; see FORMAT.md):

    "LDRC" | u8 version | u8 B | u16 D | u8 K | 8-byte model digest | u8 flags
    [f64 origin x3 | f64 step]            if flags & 1
    u8 N2 | N2 x (u8 x, u8 y, u8 z)       base level, Morton order
    for b = 2 .. B-1:
        [u8 network index]                if K > 0 and b > 6
        stage-1 chunk | stage-2 chunk     (u32 count | self-delimiting payload)
    u32 CRC-32 of everything above
"""
from __future__ import annotations

import queue
import struct
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import boe
from .entropy import StreamError, decode_payload, encode_symbols
from .morton import (
    LevelState,
    OccupancySymbols,
    build_hierarchy,
    coarsen_explicit,
    expand_children,
    morton_encode,
    resort,
)
from .pointcloud import QuantizedCloud

MAGIC = b"LDRC"
VERSION = 1
FLAG_FRAME = 1
QUEUE_DEPTH = 4


class CodecError(ValueError):
    pass


class ModelMismatchError(CodecError):
    pass


class CRCError(CodecError):
    pass


@dataclass
class LevelReport:
    level: int
    parents: int
    network: int
    index_bytes: int
    stage_bits: list = field(default_factory=lambda: [0, 0])  # payload bits per stage
    chunk_bytes: int = 0  # both chunks, framing included

    @property
    def bits(self) -> int:
        return sum(self.stage_bits)


@dataclass
class EncodeResult:
    data: bytes
    levels: list
    header_bytes: int
    points: int

    @property
    def bpp(self) -> float:
        return 8 * len(self.data) / self.points

    @property
    def payload_bits(self) -> int:
        return sum(r.bits for r in self.levels)


def _check_models(models):
    if models.kind == "neural" and len(models.networks) != models.K + 1:
        raise ModelMismatchError("model pool does not hold K + 1 networks")


def _hierarchy(cloud: QuantizedCloud, ordering: str):
    if cloud.count == 0:
        raise CodecError("cannot encode an empty cloud")
    if ordering == "morton":
        return build_hierarchy(cloud.level())
    if ordering != "explicit":
        raise ValueError(f"unknown ordering {ordering!r}")
    # emulate pipelines that re-sort at every level, down and up
    top = resort(LevelState(cloud.bit_depth, cloud.coords, morton_encode(cloud.coords, cloud.bit_depth)))
    levels, labels = {top.level: top}, {}
    cur = top
    while cur.level > 2:
        cur, lab = coarsen_explicit(cur)
        levels[cur.level] = cur
        labels[cur.level] = lab
    for b in sorted(levels):
        levels[b] = resort(levels[b])
    return levels, labels


def _steps(levels, labels, models, B):
    """Run the context model level by level; yield what the coder needs."""
    session = models.new_session()
    for b in range(2, B):
        lab = labels[b]
        q1, q2 = lab.stage1, lab.stage2
        k = boe.select(b, boe.descriptor(q1, q2), models.centers) if _signals_index(models, b) else 0
        session.begin_level(b, levels[b], k)
        yield b, k, 1, session.predict_stage(1), q1
        session.absorb_stage(1, q1)
        yield b, k, 2, session.predict_stage(2), q2
        session.absorb_stage(2, q2)
        session.end_level(last=b == B - 1)


def _header(cloud: QuantizedCloud, models, base: LevelState) -> bytes:
    if base.count > 64:
        raise CodecError("base level holds more than 64 voxels")
    frame = not (np.allclose(cloud.origin, 0) and cloud.step == 1.0)
    h = MAGIC + struct.pack("<BBHB", VERSION, cloud.bit_depth, models.dim, models.K)
    h += models.digest() + struct.pack("<B", FLAG_FRAME if frame else 0)
    if frame:
        h += struct.pack("<4d", *np.asarray(cloud.origin, dtype=float), float(cloud.step))
    h += struct.pack("<B", base.count) + base.coords.astype(np.uint8).tobytes()
    return h


def _signals_index(models, b: int) -> bool:
    return bool(models.K) and b > boe.BYPASS_MAX_LEVEL


def _assemble(header, levels, models, picked, chunks) -> tuple[bytes, list]:
    parts = [header]
    reports = []
    for b in range(2, max(levels) if levels else 2):
        signal = _signals_index(models, b)
        rep = LevelReport(b, levels[b].count, picked[b], int(signal))
        if signal:
            parts.append(struct.pack("<B", picked[b]))
        for s in (1, 2):
            c = chunks[(b, s)]
            parts.append(c.to_bytes())
            rep.stage_bits[s - 1] = c.payload_bits
            rep.chunk_bytes += len(c)
        reports.append(rep)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body)), reports


def encode(cloud: QuantizedCloud, models, mode: str = "sync", ordering: str = "morton") -> EncodeResult:
    """Encode a voxel cloud; ``mode`` is "sync" or "pipelined"."""
    _check_models(models)
    B = cloud.bit_depth
    levels, labels = _hierarchy(cloud, ordering)
    header = _header(cloud, models, levels[2])
    chunks = {}
    picked = {}
    steps = _steps(levels, labels, models, B)
    if mode == "sync":
        for b, k, s, table, sym in steps:
            picked[b] = k
            chunks[(b, s)] = encode_symbols(sym, table)
    elif mode == "pipelined":
        _run_pipeline(steps, chunks, picked)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    data, reports = _assemble(header, levels, models, picked, chunks)
    return EncodeResult(data, reports, len(header), cloud.count)


def encode_pipelined(cloud: QuantizedCloud, models, ordering: str = "morton") -> EncodeResult:
    return encode(cloud, models, "pipelined", ordering)


def _run_pipeline(steps, chunks, picked):
    """Model inference on this thread, entropy coding on one consumer thread."""
    work = queue.Queue(maxsize=QUEUE_DEPTH)
    failure = []

    def consume():
        while True:
            item = work.get()
            if item is None:
                return
            if failure:
                continue
            b, s, table, sym = item
            try:
                chunks[(b, s)] = encode_symbols(sym, table)
            except BaseException as e:  # handed back to the producer
                failure.append(e)

    worker = threading.Thread(target=consume, name="entropy-coder", daemon=True)
    worker.start()
    try:
        for b, k, s, table, sym in steps:
            if failure:
                break
            picked[b] = k
            work.put((b, s, table, sym))
    finally:
        work.put(None)
        worker.join()
    if failure:
        raise CodecError(f"entropy coder failed: {failure[0]}") from failure[0]


def _read(data, off, fmt):
    size = struct.calcsize(fmt)
    if off + size > len(data):
        raise CodecError("premature end of container")
    return struct.unpack_from(fmt, data, off), off + size


def read_header(data: bytes) -> dict:
    if len(data) < 4 + 4 or data[:4] != MAGIC:
        raise CodecError("not a container (bad magic)")
    (version, B, dim, K), off = _read(data, 4, "<BBHB")
    if version != VERSION:
        raise CodecError(f"unknown container version {version}")
    digest = bytes(data[off:off + 8])
    off += 8
    (flags,), off = _read(data, off, "<B")
    origin, step = np.zeros(3), 1.0
    if flags & FLAG_FRAME:
        vals, off = _read(data, off, "<4d")
        origin, step = np.array(vals[:3]), vals[3]
    (n2,), off = _read(data, off, "<B")
    if off + 3 * n2 > len(data):
        raise CodecError("premature end of container")
    base = np.frombuffer(data, np.uint8, 3 * n2, off).reshape(n2, 3).astype(np.int64)
    off += 3 * n2
    return dict(B=B, dim=dim, K=K, digest=digest, origin=origin, step=step, base=base, offset=off)


def decode(data: bytes, models, ordering: str = "morton") -> QuantizedCloud:
    data = bytes(data)
    if data[:4] != MAGIC[:len(data)]:
        raise CodecError("not a container (bad magic)")
    if len(data) < 8:
        raise CodecError("premature end of container")
    if zlib.crc32(data[:-4]) != struct.unpack_from("<I", data, len(data) - 4)[0]:
        raise CRCError("CRC-32 mismatch: container is corrupt")
    h = read_header(data)
    if (h["K"], h["dim"]) != (models.K, models.dim):
        raise ModelMismatchError(
            f"stream was coded with D={h['dim']}, K={h['K']}; model has D={models.dim}, K={models.K}")
    if h["digest"] != models.digest():
        raise ModelMismatchError("stream was coded with a different model file")
    _check_models(models)
    B = h["B"]
    end = len(data) - 4
    buf = np.frombuffer(data, dtype=np.uint8)[:end]
    try:
        level = LevelState.from_sorted(h["base"], 2)
    except ValueError as e:
        raise CodecError(f"bad base level: {e}") from None
    if ordering == "explicit":
        level = resort(level)
    off = h["offset"]
    session = models.new_session()
    for b in range(2, B):
        k = 0
        if _signals_index(models, b):
            (k,), off = _read(buf, off, "<B")
            if k > models.K:
                raise CodecError(f"network index {k} at level {b} exceeds K={models.K}")
        session.begin_level(b, level, k)
        q = {}
        for s in (1, 2):
            (n,), off = _read(buf, off, "<I")
            if n != level.count:
                raise CodecError(f"level {b} stage {s}: {n} symbols, expected {level.count}")
            try:
                q[s], off = decode_payload(buf, off, n, session.predict_stage(s))
            except StreamError as e:
                raise CodecError(f"level {b} stage {s}: {e}") from None
            session.absorb_stage(s, q[s])
        labels = OccupancySymbols.from_stages(q[1], q[2])
        if np.any(labels.octant == 0):
            raise CodecError(f"level {b}: decoded an empty octant label")
        session.end_level(last=b == B - 1)
        level = expand_children(level, labels)
        if ordering == "explicit":
            level = resort(level)
    if off != end:
        raise CodecError(f"{end - off} unread bytes before the CRC")
    return QuantizedCloud(level.coords, B, h["origin"], h["step"])


@dataclass
class PointBits:
    level: int
    coords: np.ndarray  # (N_b, 3) parents at this level
    stage_bits: np.ndarray  # (2, N_b) ideal bits under the quantized rows
    chunk_bits: tuple  # measured payload bits of the two chunks

    @property
    def bits(self) -> np.ndarray:
        return self.stage_bits.sum(axis=0)


def per_point_bits(cloud: QuantizedCloud, models, level: int) -> PointBits:
    """-log2 of the coded probability of each parent's two stage symbols at ``level``."""
    B = cloud.bit_depth
    if not 2 <= level < B:
        raise ValueError(f"level must be in [2, {B - 1}]")
    levels, labels = _hierarchy(cloud, "morton")
    stage_bits = np.zeros((2, levels[level].count))
    chunk_bits = [0, 0]
    for b, k, s, table, sym in _steps(levels, labels, models, level + 1):
        if b == level:
            rows = table.materialize(sym)
            stage_bits[s - 1] = rows.bits(sym)
            chunk_bits[s - 1] = encode_symbols(sym, rows).payload_bits
    return PointBits(level, levels[level].coords, stage_bits, tuple(chunk_bits))


def uniform_bound_bits(cloud: QuantizedCloud) -> int:
    """8 bits per coded parent: what a model-free coder of octant bytes would spend."""
    levels, _ = build_hierarchy(cloud.level())
    return 8 * sum(levels[b].count for b in range(2, cloud.bit_depth))
