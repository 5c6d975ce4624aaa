"""Bag-of-Encoders: occupancy descriptors, K-means centers, network selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BYPASS_MAX_LEVEL = 6  # levels up to here always use the base network


def descriptor(q1, q2) -> np.ndarray:
    """16-bin histograms of both stage symbols, concatenated and normalized."""
    q1 = np.asarray(q1, dtype=np.int64)
    q2 = np.asarray(q2, dtype=np.int64)
    if len(q1) == 0 or len(q1) != len(q2):
        raise ValueError("descriptor needs two equal-length, non-empty symbol arrays")
    h = np.concatenate([np.bincount(q1, minlength=16), np.bincount(q2, minlength=16)])
    return h / h.sum()


@dataclass
class BoECenters:
    centers: np.ndarray  # (K, 32)
    inertia: list = field(default_factory=list)  # per Lloyd iteration

    @property
    def K(self) -> int:
        return len(self.centers)


def _kmeanspp(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        i = rng.choice(len(x), p=d2 / tot) if tot > 0 else rng.integers(len(x))
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(axis=1))
    return np.array(centers)


def fit_centers(descriptors, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> BoECenters:
    """Lloyd's K-means from a seeded k-means++ start.

    Stops after ``max_iter`` iterations or when inertia changes by less than
    ``tol`` relative. An empty cluster takes the point farthest from its center.
    """
    x = np.asarray(descriptors, dtype=np.float64).reshape(-1, 32)
    if K < 1:
        raise ValueError("K must be positive")
    if len(x) < K:
        raise ValueError(f"{len(x)} descriptors cannot seed {K} centers")
    rng = np.random.default_rng(seed)
    c = _kmeanspp(x, K, rng)
    history = []
    prev = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(x)), assign].sum())
        history.append(inertia)
        new = c.copy()
        own = d2[np.arange(len(x)), assign]
        for k in range(K):
            members = assign == k
            if members.any():
                new[k] = x[members].mean(axis=0)
            else:
                far = int(own.argmax())
                new[k] = x[far]
                own[far] = -1.0
        c = new
        if prev is not None and abs(prev - inertia) <= tol * max(prev, 1e-300):
            break
        prev = inertia
    return BoECenters(c, history)


def select(b: int, desc, centers) -> int:
    """0 (base network) for b <= 6, else 1 + index of the nearest center."""
    if b <= BYPASS_MAX_LEVEL:
        return 0
    if desc is None:
        raise ValueError(f"level {b} needs an occupancy descriptor")
    mu = centers.centers if isinstance(centers, BoECenters) else np.asarray(centers)
    if len(mu) == 0:
        return 0
    d = np.sqrt(((np.asarray(desc, dtype=np.float64)[None, :] - mu.astype(np.float64)) ** 2).sum(axis=1))
    return 1 + int(np.argmin(d))
