"""Deterministic LiDAR-like scans for training and tests.

A spinning sensor at height ``sensor_height`` fires one beam per
(ring, azimuth) pair. Beam ``i`` would hit flat ground on a circle of radius
r_i; the ring radii follow the beam elevation angles, so ring spacing grows
with range and point density falls off roughly as 1/r. Axis-aligned boxes
standing on the ground intercept beams that reach them first.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .pointcloud import RawCloud, quantize


def ring_radii(rings: int, sensor_height: float = 1.8, min_deg: float = 2.0, max_deg: float = 24.0):
    elev = np.deg2rad(np.linspace(max_deg, min_deg, rings)) if rings > 1 else np.deg2rad([max_deg])
    return sensor_height / np.tan(elev)


def _random_boxes(rng, n, r_lo, r_hi):
    boxes = []
    for _ in range(n):
        r = rng.uniform(r_lo, r_hi)
        a = rng.uniform(0, 2 * np.pi)
        cx, cy = r * np.cos(a), r * np.sin(a)
        hx, hy = rng.uniform(0.4, 2.5, size=2)
        h = rng.uniform(0.8, 3.0)
        boxes.append((cx - hx, cx + hx, cy - hy, cy + hy, h))
    return np.array(boxes).reshape(-1, 5)


def terrain(x, y, rng, slope: float = 0.02, amplitude: float = 0.3):
    a = rng.uniform(0, 2 * np.pi)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    return slope * (np.cos(a) * x + np.sin(a) * y) + amplitude * np.sin(x / 7 + ph[0]) * np.sin(y / 9 + ph[1])


def gen_ring_scan(rings: int = 32, points_per_ring: int = 256, noise: float = 0.02, seed: int = 0,
                  boxes: int = 8, sensor_height: float = 1.8) -> RawCloud:
    """One synthetic sweep with exactly ``rings * points_per_ring`` returns."""
    rng = np.random.default_rng(seed)
    radii = ring_radii(rings, sensor_height)
    az = np.arange(points_per_ring) * (2 * np.pi / points_per_ring)
    az = az[None, :] + rng.uniform(0, 2 * np.pi / points_per_ring, size=(rings, 1)) * (noise > 0)
    r = np.broadcast_to(radii[:, None], az.shape).copy()
    dx, dy = np.cos(az), np.sin(az)
    z = np.zeros_like(r)

    # obstacles only where there is range between the nearest and farthest ring
    r_lo, r_hi = radii.min() * 1.5, radii.max()
    if boxes and r_hi > r_lo:
        for x0, x1, y0, y1, h in _random_boxes(rng, boxes, r_lo, r_hi):
            # slab test of the ground ray (0 -> r) against the box footprint
            with np.errstate(divide="ignore", invalid="ignore"):
                tx0, tx1 = x0 / dx, x1 / dx
                ty0, ty1 = y0 / dy, y1 / dy
            tmin = np.maximum(np.minimum(tx0, tx1), np.minimum(ty0, ty1))
            tmax = np.minimum(np.maximum(tx0, tx1), np.maximum(ty0, ty1))
            tmin = np.nan_to_num(tmin, nan=np.inf)
            # beam height at horizontal distance t falls linearly from the sensor to 0 at r
            hit_z = sensor_height * (1 - tmin / r)
            hit = (tmin > 0) & (tmin <= tmax) & (tmin < r) & (hit_z <= h)
            r = np.where(hit, tmin, r)
            z = np.where(hit, hit_z, z)

    x = r * dx
    y = r * dy
    if noise > 0:
        z = z + terrain(x, y, rng)
        z = z + rng.normal(0, noise, size=z.shape)
        x = x + rng.normal(0, noise * 0.5, size=x.shape)
        y = y + rng.normal(0, noise * 0.5, size=y.shape)
    return RawCloud(np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1))


def scan_frame(seed: int, bit_depth: int = 12, rings: int = 32, points_per_ring: int = 256,
               extent: float = 120.0, noise: float = 0.02, boxes: int = 8):
    """A ring scan quantized on a fixed grid centered at the sensor."""
    raw = gen_ring_scan(rings, points_per_ring, noise, seed, boxes)
    step = extent / (1 << bit_depth)
    origin = np.array([-extent / 2, -extent / 2, -extent / 2])
    keep = np.all((raw.points - origin >= 0) & (raw.points - origin < extent), axis=1)
    return quantize(RawCloud(raw.points[keep]), bit_depth, origin, step)


class Corpus(Sequence):
    """``n`` quantized frames with seeds seed, seed+1, ..., generated on access."""

    def __init__(self, n: int, seed: int = 0, **kw):
        self.n, self.seed, self.kw = int(n), int(seed), kw

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self.n))]
        if not -self.n <= i < self.n:
            raise IndexError(i)
        return scan_frame(self.seed + i % self.n, **self.kw)


def corpus(n: int, seed: int = 0, **kw) -> Corpus:
    return Corpus(n, seed, **kw)


def gen_plane(n: int = 3000, bit_depth: int = 10, noise: float = 1.5, seed: int = 0):
    """A tilted plane through the grid center, with Gaussian noise in grid units."""
    rng = np.random.default_rng(seed)
    hi = 1 << bit_depth
    uv = rng.uniform(0.05 * hi, 0.95 * hi, size=(n, 2))
    z = 0.5 * hi + 0.2 * (uv[:, 0] - hi / 2) - 0.1 * (uv[:, 1] - hi / 2) + rng.normal(0, noise, size=n)
    pts = np.column_stack([uv, np.clip(z, 0, hi - 1)])
    return quantize(RawCloud(pts), bit_depth, np.zeros(3), 1.0)
