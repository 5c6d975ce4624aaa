"""Non-neural reference context model: adaptive Laplace-smoothed counts.

One count table per (level, stage, context) cell, where the context is the
coded voxel's octant parity (stage 1) or parity and stage-1 symbol (stage 2).
Counts start empty at every level and update after each coded point.
"""
from __future__ import annotations

import hashlib

import numpy as np

from ..entropy import AdaptiveTable
from ..morton import LevelState
from .network import octant_index


def laplace_row(counts) -> np.ndarray:
    """p_i = (count_i + 1) / (total + 16)."""
    c = np.asarray(counts, dtype=np.float64)
    return (c + 1) / (c.sum() + 16)


class BaselineModel:
    kind = "baseline"
    dim = 0
    K = 0
    centers = None

    def new_session(self, tape=None, dtype=None) -> "BaselineSession":
        return BaselineSession()

    def digest(self) -> bytes:
        return hashlib.sha256(b"lidarcodec-baseline-v1").digest()[:8]


class BaselineSession:
    def __init__(self):
        self.parity = None
        self.q1 = None

    def begin_level(self, b: int, level: LevelState, net_index: int = 0, kmap=None):
        self.parity = octant_index(level.coords)
        self.q1 = None

    def predict_stage(self, s: int) -> AdaptiveTable:
        if s == 1:
            return AdaptiveTable(self.parity, 8)
        if self.q1 is None:
            raise RuntimeError("stage 2 predicted before stage 1 was absorbed")
        return AdaptiveTable(self.parity * 16 + self.q1, 128)

    def absorb_stage(self, s: int, symbols):
        if s == 1:
            self.q1 = np.asarray(symbols, dtype=np.int64)

    def end_level(self, last: bool = False):
        return None
