"""Morton codes and the order-preserving octree hierarchy.

Every level of the hierarchy keeps its voxels in ascending 3D Morton order.
Halving a coordinate drops the three low bits of its code, so parents inherit
the order of their children and the children of one parent form a contiguous
run. Nothing here sorts except :func:`initial_sort` (and the explicit-sort
emulation used for benchmarking).
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

MAX_BIT_DEPTH = 21

# u = dx + 2*dy + 4*dz
OCTANT_OFFSETS = np.array(
    [[u & 1, (u >> 1) & 1, (u >> 2) & 1] for u in range(8)], dtype=np.int64
)

# byte -> 8-bit occupancy row, bit u in column u
MASK_TABLE = ((np.arange(256)[:, None] >> np.arange(8)[None, :]) & 1).astype(bool)
POPCOUNT = MASK_TABLE.sum(axis=1).astype(np.int64)

# 3x3x3 window in lexicographic (dx, dy, dz) order; index 13 is the center
KERNEL_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.int64)
CENTER = 13


class _SortCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self.value = 0

    def bump(self):
        with self._lock:
            self.value += 1


SORTS = _SortCounter()


@contextmanager
def count_sorts():
    """Yield a callable returning the number of coordinate sorts since entry."""
    start = SORTS.value
    yield lambda: SORTS.value - start


def _spread(v):
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact(v):
    v = v & np.uint64(0x1249249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def _check_depth(bit_depth):
    if not 0 <= bit_depth <= MAX_BIT_DEPTH:
        raise ValueError(f"bit depth {bit_depth} outside [0, {MAX_BIT_DEPTH}]")


def morton_encode(coords, bit_depth: int):
    """Interleave bits: bit k of x -> code bit 3k, y -> 3k+1, z -> 3k+2.

    Accepts one triple (returns an ``int``) or an ``(N, 3)`` array (returns
    an int64 array).
    """
    _check_depth(bit_depth)
    c = np.asarray(coords, dtype=np.int64)
    single = c.ndim == 1
    c = c.reshape(-1, 3)
    if c.size and (c.min() < 0 or c.max() >= (1 << bit_depth)):
        raise ValueError(f"coordinate component outside [0, 2^{bit_depth})")
    codes = (_spread(c[:, 0]) | (_spread(c[:, 1]) << np.uint64(1))
             | (_spread(c[:, 2]) << np.uint64(2))).astype(np.int64)
    return int(codes[0]) if single else codes


def morton_decode(codes, bit_depth: int):
    """Inverse of :func:`morton_encode`."""
    _check_depth(bit_depth)
    m = np.asarray(codes, dtype=np.int64)
    single = m.ndim == 0
    m = m.reshape(-1)
    if m.size and (m.min() < 0 or m.max() >= (1 << (3 * bit_depth))):
        raise ValueError(f"Morton code outside [0, 8^{bit_depth})")
    u = m.astype(np.uint64)
    out = np.stack([_compact(u), _compact(u >> np.uint64(1)), _compact(u >> np.uint64(2))],
                   axis=1).astype(np.int64)
    return tuple(int(v) for v in out[0]) if single else out


@dataclass(eq=False)
class LevelState:
    """Occupied voxels of one level, ascending in Morton order."""

    level: int
    coords: np.ndarray  # (N, 3) int64
    codes: np.ndarray  # (N,) int64

    @property
    def count(self) -> int:
        return len(self.codes)

    @classmethod
    def from_sorted(cls, coords, level: int, check: bool = True) -> "LevelState":
        """Wrap coordinates already in strictly ascending Morton order (no sort)."""
        coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
        codes = morton_encode(coords, level)
        if check and np.any(np.diff(codes) <= 0):
            raise ValueError("coordinates are not strictly ascending in Morton order")
        return cls(level, coords, codes)

    def is_ordered(self) -> bool:
        return bool(np.all(np.diff(self.codes) > 0))


@dataclass(eq=False)
class OccupancySymbols:
    """Per-parent octant labels and their two 4-bit stage symbols."""

    octant: np.ndarray  # (N,) uint8, never 0

    @classmethod
    def from_stages(cls, stage1, stage2) -> "OccupancySymbols":
        s1 = np.asarray(stage1, dtype=np.int64)
        s2 = np.asarray(stage2, dtype=np.int64)
        return cls((16 * s2 + s1).astype(np.uint8))

    @property
    def stage1(self) -> np.ndarray:
        return (self.octant & 15).astype(np.int64)

    @property
    def stage2(self) -> np.ndarray:
        return (self.octant >> 4).astype(np.int64)

    def stage(self, s: int) -> np.ndarray:
        return self.stage1 if s == 1 else self.stage2

    def __len__(self):
        return len(self.octant)


def initial_sort(coords, bit_depth: int) -> LevelState:
    """Deduplicate and Morton-sort raw voxel coordinates.

    This is the one sort the codec performs.
    """
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    if len(c) == 0:
        raise ValueError("cannot sort an empty coordinate set")
    codes = morton_encode(c, bit_depth)
    SORTS.bump()
    order = np.argsort(codes, kind="stable")
    codes = codes[order]
    keep = np.ones(len(codes), dtype=bool)
    keep[1:] = codes[1:] != codes[:-1]
    return LevelState(bit_depth, np.ascontiguousarray(c[order][keep]), codes[keep])


def coarsen(level: LevelState) -> tuple[LevelState, OccupancySymbols]:
    """Halve a level into its parents and the parents' octant labels.

    Duplicate parents are adjacent, so a run-length scan replaces any sort.
    """
    if level.level < 3:
        raise ValueError("coarsen needs level >= 3 (the base level is 2)")
    halved = level.codes >> 3
    starts = np.flatnonzero(np.r_[True, halved[1:] != halved[:-1]])
    bits = np.left_shift(1, level.codes & 7)
    octant = np.bitwise_or.reduceat(bits, starts).astype(np.uint8)
    parent = LevelState(level.level - 1, level.coords[starts] >> 1, halved[starts])
    return parent, OccupancySymbols(octant)


def occupancy_mask(octant) -> np.ndarray:
    """(N, 8) bool rows, row n bit u = (O_n >> u) & 1, via the 256-entry table."""
    o = np.asarray(octant)
    if np.any(o == 0):
        raise ValueError("octant label 0 cannot occur for an occupied parent")
    if o.size and (o.min() < 0 or o.max() > 255):
        raise ValueError("octant label outside [1, 255]")
    return MASK_TABLE[o.astype(np.int64)]


def expand_children(parent: LevelState, labels: OccupancySymbols) -> LevelState:
    """Children of every parent, candidates enumerated in Morton octant order."""
    octant = labels.octant if isinstance(labels, OccupancySymbols) else np.asarray(labels)
    if len(octant) != parent.count:
        raise ValueError("labels are not aligned with the parent level")
    mask = occupancy_mask(octant)
    codes = ((parent.codes[:, None] << 3) | np.arange(8, dtype=np.int64)[None, :])[mask]
    coords = (2 * parent.coords[:, None, :] + OCTANT_OFFSETS[None, :, :])[mask]
    return LevelState(parent.level + 1, coords, codes)


def replicate_features(features, mask) -> np.ndarray:
    """Copy each parent's row to each of its occupied children, in child order."""
    features = np.asarray(features)
    mask = np.asarray(mask, dtype=bool)
    if features.shape[0] != mask.shape[0]:
        raise ValueError(f"{features.shape[0]} feature rows for {mask.shape[0]} parents")
    return np.repeat(features, mask.sum(axis=1), axis=0)


def build_hierarchy(top: LevelState) -> tuple[dict[int, LevelState], dict[int, OccupancySymbols]]:
    """Coarsen from ``top.level`` down to level 2.

    Returns ``levels[b]`` for b = 2..B and ``labels[b]`` (children at b+1) for
    b = 2..B-1.
    """
    levels = {top.level: top}
    labels = {}
    cur = top
    while cur.level > 2:
        parent, lab = coarsen(cur)
        levels[parent.level] = parent
        labels[parent.level] = lab
        cur = parent
    return levels, labels


# Explicit-sort emulation: the same hierarchy, rebuilt with a sort per step.

def coarsen_explicit(level: LevelState) -> tuple[LevelState, OccupancySymbols]:
    if level.level < 3:
        raise ValueError("coarsen needs level >= 3 (the base level is 2)")
    SORTS.bump()
    halved, inverse = np.unique(level.codes >> 3, return_inverse=True)
    octant = np.zeros(len(halved), dtype=np.int64)
    np.bitwise_or.at(octant, inverse.reshape(-1), np.left_shift(1, level.codes & 7))
    return (LevelState(level.level - 1, morton_decode(halved, level.level - 1), halved),
            OccupancySymbols(octant.astype(np.uint8)))


def resort(level: LevelState) -> LevelState:
    SORTS.bump()
    order = np.argsort(level.codes)
    return LevelState(level.level, level.coords[order], level.codes[order])


def neighbor_index(level: LevelState, offsets=KERNEL_OFFSETS) -> np.ndarray:
    """(N, K) row index of the occupied voxel at coords + offset, -1 if empty.

    Exact lookup by binary search over the level's ascending Morton codes.
    """
    n = level.count
    out = np.full((n, len(offsets)), -1, dtype=np.int64)
    hi = 1 << level.level
    for k, off in enumerate(np.asarray(offsets, dtype=np.int64)):
        if not off.any():
            out[:, k] = np.arange(n)
            continue
        nc = level.coords + off
        valid = np.flatnonzero(np.all((nc >= 0) & (nc < hi), axis=1))
        if len(valid) == 0:
            continue
        q = morton_encode(nc[valid], level.level)
        pos = np.searchsorted(level.codes, q)
        pos_c = np.minimum(pos, n - 1)
        hit = level.codes[pos_c] == q
        out[valid[hit], k] = pos_c[hit]
    return out


def neighbor_stats(level: LevelState, window: int) -> float:
    """Mean count of other occupied voxels around each voxel.

    window=2: the voxel's own 2x2x2 octant block; window=3: the centered
    3x3x3 cube.
    """
    if window == 2:
        if level.count == 0:
            return 0.0
        block = level.codes >> 3
        starts = np.flatnonzero(np.r_[True, block[1:] != block[:-1]])
        sizes = np.diff(np.r_[starts, level.count])
        return float((sizes * (sizes - 1)).sum() / level.count)
    if window == 3:
        if level.count == 0:
            return 0.0
        offs = np.delete(KERNEL_OFFSETS, CENTER, axis=0)
        return float((neighbor_index(level, offs) >= 0).sum() / level.count)
    raise ValueError("window must be 2 or 3")
