"""PLY reading/writing and voxel quantization."""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .morton import MAX_BIT_DEPTH, LevelState, initial_sort

log = logging.getLogger(__name__)

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


SNAP_TOL = 1e-9


class PlyError(ValueError):
    pass


class PlyHeaderError(PlyError):
    pass


class PlyPropertyError(PlyError):
    pass


class PlyTruncatedError(PlyError):
    pass


class QuantizationError(ValueError):
    pass


@dataclass(eq=False)
class RawCloud:
    points: np.ndarray  # (N, 3) float64

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass(eq=False)
class QuantizedCloud:
    """Deduplicated voxel coordinates in ascending Morton order."""

    coords: np.ndarray  # (N, 3) int64
    bit_depth: int
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    step: float = 1.0
    merged: int = 0  # raw points dropped as duplicates

    @property
    def count(self) -> int:
        return len(self.coords)

    def level(self) -> LevelState:
        """The cloud as the top level of the hierarchy (validated, not sorted)."""
        return LevelState.from_sorted(self.coords, self.bit_depth)

    def dequantize(self) -> np.ndarray:
        return self.coords * self.step + np.asarray(self.origin, dtype=np.float64)


def from_coords(coords, bit_depth: int, origin=None, step: float = 1.0) -> QuantizedCloud:
    """Build a valid cloud from integer voxel coordinates (sorts and dedups)."""
    if not 2 <= bit_depth <= MAX_BIT_DEPTH:
        raise QuantizationError(f"bit depth must be in [2, {MAX_BIT_DEPTH}]")
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(c) == 0:
        raise QuantizationError("empty cloud")
    lv = initial_sort(c, bit_depth)
    return QuantizedCloud(lv.coords, bit_depth,
                          np.zeros(3) if origin is None else np.asarray(origin, float),
                          float(step), len(c) - lv.count)


def default_frame(points: np.ndarray, bit_depth: int):
    origin = np.floor(points.min(axis=0))
    extent = float((points.max(axis=0) - origin).max())
    step = extent / ((1 << bit_depth) - 0.5) if extent > 0 else 1.0
    return origin, step


def quantize(cloud: RawCloud, bit_depth: int, origin=None, step: float | None = None) -> QuantizedCloud:
    """floor((p - origin) / step), reject out-of-grid points, dedup, Morton-sort."""
    if not 2 <= bit_depth <= MAX_BIT_DEPTH:
        raise QuantizationError(f"bit depth must be in [2, {MAX_BIT_DEPTH}]")
    pts = cloud.points
    if len(pts) == 0:
        raise QuantizationError("empty cloud")
    d_origin, d_step = default_frame(pts, bit_depth)
    origin = d_origin if origin is None else np.asarray(origin, dtype=np.float64)
    step = d_step if step is None else float(step)
    if not step > 0:
        raise QuantizationError("step must be positive")
    q = (pts - origin) / step
    v = np.floor(q)
    # lattice points written by write_ply may come back a hair below the integer
    near = np.rint(q)
    v = np.where(np.abs(q - near) < SNAP_TOL, near, v)
    bad = np.flatnonzero(np.any((v < 0) | (v >= (1 << bit_depth)), axis=1))
    if len(bad):
        shown = ", ".join(str(i) for i in bad[:10])
        raise QuantizationError(
            f"{len(bad)} point(s) fall outside [0, 2^{bit_depth}) after quantization "
            f"(indices {shown}{', ...' if len(bad) > 10 else ''})")
    lv = initial_sort(v.astype(np.int64), bit_depth)
    merged = len(pts) - lv.count
    if merged:
        log.debug("merged %d duplicate voxels", merged)
    return QuantizedCloud(lv.coords, bit_depth, origin, step, merged)


_HEADER_END = re.compile(rb"end_header[ \t]*\r?\n")


def read_ply(path) -> RawCloud:
    """Read x, y, z of every vertex (ASCII or binary little-endian PLY)."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"ply"):
        raise PlyHeaderError(f"{path}: missing 'ply' magic")
    m = _HEADER_END.search(data)
    if m is None:
        raise PlyHeaderError(f"{path}: no end_header line")
    header = data[:m.start()].decode("ascii", errors="replace").splitlines()
    body = data[m.end():]

    fmt = None
    elements = []  # [name, count, [(prop, dtype)]]
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2:
                raise PlyHeaderError(f"{path}: bad format line")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyHeaderError(f"{path}: bad element line {line!r}")
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise PlyHeaderError(f"{path}: property before any element")
            if len(tok) >= 2 and tok[1] == "list":
                if len(tok) != 5:
                    raise PlyHeaderError(f"{path}: bad list property {line!r}")
                if tok[2] not in PLY_TYPES or tok[3] not in PLY_TYPES:
                    raise PlyPropertyError(f"{path}: unsupported list type in {line!r}")
                elements[-1][2].append((tok[4], ("list", PLY_TYPES[tok[2]], PLY_TYPES[tok[3]])))
            else:
                if len(tok) != 3:
                    raise PlyHeaderError(f"{path}: bad property line {line!r}")
                if tok[1] not in PLY_TYPES:
                    raise PlyPropertyError(f"{path}: unsupported property type {tok[1]!r}")
                elements[-1][2].append((tok[2], PLY_TYPES[tok[1]]))
        else:
            raise PlyHeaderError(f"{path}: unexpected header line {line!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyHeaderError(f"{path}: unsupported format {fmt!r}")
    if not elements or elements[0][0] != "vertex":
        raise PlyHeaderError(f"{path}: first element must be 'vertex'")
    name, count, props = elements[0]
    names = [p for p, _ in props]
    for axis in "xyz":
        if axis not in names:
            raise PlyPropertyError(f"{path}: vertex has no {axis!r} property")
    if any(isinstance(t, tuple) for _, t in props):
        raise PlyPropertyError(f"{path}: list properties on vertices are not supported")

    if fmt == "ascii":
        text = body.decode("ascii", errors="replace").split("\n")
        rows = [ln.split() for ln in text if ln.strip()][:count]
        if len(rows) < count:
            raise PlyTruncatedError(f"{path}: header declares {count} vertices, found {len(rows)}")
        try:
            table = np.array([[float(v) for v in r[:len(props)]] for r in rows], dtype=np.float64)
        except ValueError as e:
            raise PlyTruncatedError(f"{path}: malformed vertex row ({e})") from None
        if count and table.shape[1] != len(props):
            raise PlyTruncatedError(f"{path}: vertex row shorter than the declared properties")
        table = table.reshape(count, len(props))
        pts = table[:, [names.index(a) for a in "xyz"]]
    else:
        dt = np.dtype([(p, "<" + t) for p, t in props])
        need = dt.itemsize * count
        if len(body) < need:
            raise PlyTruncatedError(
                f"{path}: header declares {count} vertices ({need} bytes), payload has {len(body)}")
        rec = np.frombuffer(body, dtype=dt, count=count)
        pts = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
    return RawCloud(pts)


def write_ply(cloud: QuantizedCloud, path, binary: bool = False) -> None:
    """Write voxel centers' lattice points (coords * step + origin) as PLY."""
    if cloud.count == 0:
        raise QuantizationError("refusing to write an empty cloud")
    pts = cloud.dequantize()
    kind = "binary_little_endian" if binary else "ascii"
    header = (f"ply\nformat {kind} 1.0\nelement vertex {len(pts)}\n"
              "property double x\nproperty double y\nproperty double z\nend_header\n")
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(header.encode("ascii"))
            if binary:
                f.write(pts.astype("<f8").tobytes())
            else:
                np.savetxt(f, pts, fmt="%.17g")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
