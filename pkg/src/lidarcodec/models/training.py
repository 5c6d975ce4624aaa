"""Training of the network pool by minimizing the estimated bitrate."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .. import boe
from ..morton import build_hierarchy, neighbor_index
from . import autodiff as ad
from .network import NeuralPool

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 3e-3
    decay_points: tuple = (0.6, 0.85)  # fractions of `steps`
    decay: float = 0.5
    warmup: int = 100  # linear ramp; features compound over levels, so early steps must be small
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    clip: float = 1.0  # global gradient-norm limit in bits per point; 0 disables
    log_every: int = 100
    cache: int = 64  # prepared frames kept in memory; larger corpora are re-prepared on each visit

    def lr_at(self, step: int) -> float:
        drops = sum(step >= int(f * self.steps) for f in self.decay_points)
        ramp = min(1.0, (step + 1) / self.warmup) if self.warmup else 1.0
        return self.lr * ramp * self.decay ** drops


@dataclass
class _Frame:
    levels: dict
    labels: dict
    picks: dict
    kmaps: dict
    points: int
    bit_depth: int


def descriptors(clouds, first_level: int = boe.BYPASS_MAX_LEVEL + 1) -> np.ndarray:
    """Occupancy descriptors of levels first_level .. B-1 of every cloud."""
    out = []
    for c in clouds:
        _, labels = build_hierarchy(c.level())
        for b in range(first_level, c.bit_depth):
            out.append(boe.descriptor(labels[b].stage1, labels[b].stage2))
    return np.array(out).reshape(-1, 32)


def _prepare(cloud, pool) -> _Frame:
    levels, labels = build_hierarchy(cloud.level())
    picks = {}
    for b in range(2, cloud.bit_depth):
        picks[b] = (boe.select(b, boe.descriptor(labels[b].stage1, labels[b].stage2), pool.centers)
                    if pool.K and b > boe.BYPASS_MAX_LEVEL else 0)
    kmaps = {b: ad.KernelMap(neighbor_index(levels[b])) for b in range(2, cloud.bit_depth)}
    return _Frame(levels, labels, picks, kmaps, cloud.count, cloud.bit_depth)


def frame_loss(pool: NeuralPool, frame: _Frame, tape=None, dtype=np.float32):
    """Total bits over every level and stage; returns (loss Var, session)."""
    session = pool.new_session(tape, dtype)
    B = frame.bit_depth
    for b in range(2, B):
        lab = frame.labels[b]
        session.begin_level(b, frame.levels[b], frame.picks[b], frame.kmaps[b])
        session.stage_loss(1, lab.stage1)
        session.absorb_stage(1, lab.stage1)
        session.stage_loss(2, lab.stage2)
        session.absorb_stage(2, lab.stage2)
        session.end_level(last=b == B - 1)
    return ad.total(session.losses, tape), session


class Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {}
        self.v = {}
        self.t = {}

    def update(self, key, param: np.ndarray, grad: np.ndarray, lr: float):
        c = self.cfg
        g = grad.astype(np.float64)
        m = self.m.get(key, 0.0) * c.beta1 + (1 - c.beta1) * g
        v = self.v.get(key, 0.0) * c.beta2 + (1 - c.beta2) * g * g
        t = self.t.get(key, 0) + 1
        self.m[key], self.v[key], self.t[key] = m, v, t
        mh = m / (1 - c.beta1 ** t)
        vh = v / (1 - c.beta2 ** t)
        param -= (lr * mh / (np.sqrt(vh) + c.eps)).astype(param.dtype)


def train(pool: NeuralPool, dataset, config: TrainConfig | None = None, callback=None):
    """Adam on the pool, one cloud per step; returns (pool, losses in bits per point).

    Only the network picked at a level receives that level's direct gradient;
    earlier levels still get gradient through the propagated features.
    """
    cfg = config or TrainConfig()
    if not dataset:
        raise TrainingError("empty training set")
    cache = {}
    order = np.random.default_rng(cfg.seed)
    opt = Adam(cfg)
    losses = []
    for step in range(cfg.steps):
        i = int(order.integers(len(dataset)))
        frame = cache.get(i)
        if frame is None:
            frame = _prepare(dataset[i], pool)
            if len(cache) < cfg.cache:
                cache[i] = frame
        tape = ad.Tape()
        loss, session = frame_loss(pool, frame, tape)
        value = float(loss.value)
        if not np.isfinite(value):
            per_level = [float(l.value) for l in session.losses]
            raise TrainingError(f"non-finite loss at step {step}; per-stage bits: {per_level}")
        tape.backward(loss)
        lr = cfg.lr_at(step)
        grads = {(k, name): var.grad / frame.points
                 for k, net in session._nets.items() for name, var in net.v.items() if var.grad is not None}
        norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        scale = cfg.clip / norm if cfg.clip and norm > cfg.clip else 1.0
        for (k, name), g in grads.items():
            opt.update((k, name), pool.networks[k][name], g * scale, lr)
        bpp = value / frame.points
        losses.append(bpp)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d  %.4f bpp  lr %.2e", step, bpp, lr)
        if callback is not None:
            callback(step, bpp)
    return pool, losses


def evaluate(pool, clouds) -> float:
    """Mean estimated bits per point over clouds (no gradients)."""
    vals = []
    for c in clouds:
        frame = _prepare(c, pool)
        loss, _ = frame_loss(pool, frame)
        vals.append(float(loss.value) / frame.points)
    return float(np.mean(vals))
