"""Minimal reverse-mode differentiation over numpy arrays.

Operations take :class:`Var` inputs and an optional :class:`Tape`. With no
tape they just compute (the inference path); with a tape each op records a
closure that pushes its output gradient back to its inputs.
"""
from __future__ import annotations

import numpy as np

LN2 = np.log(2.0)


class Var:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = value
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    @property
    def shape(self):
        return self.value.shape


class Tape:
    def __init__(self):
        self._ops = []

    def record(self, fn):
        self._ops.append(fn)

    def backward(self, out: Var, seed=1.0):
        out.accumulate(np.asarray(seed, dtype=out.value.dtype))
        for fn in reversed(self._ops):
            fn()
        self._ops.clear()


def _rec(tape, fn):
    if tape is not None:
        tape.record(fn)


def embed(table: Var, index, tape=None) -> Var:
    idx = np.asarray(index, dtype=np.int64)
    out = Var(table.value[idx])

    def back():
        if out.grad is not None:
            g = np.zeros_like(table.value)
            np.add.at(g, idx, out.grad)
            table.accumulate(g)
    _rec(tape, back)
    return out


def add(a: Var, b: Var, tape=None) -> Var:
    out = Var(a.value + b.value)

    def back():
        if out.grad is not None:
            a.accumulate(out.grad)
            b.accumulate(out.grad)
    _rec(tape, back)
    return out


def relu(x: Var, tape=None) -> Var:
    pos = x.value > 0
    out = Var(np.where(pos, x.value, 0).astype(x.value.dtype))

    def back():
        if out.grad is not None:
            x.accumulate(out.grad * pos)
    _rec(tape, back)
    return out


def linear(x: Var, weight: Var, bias: Var, tape=None) -> Var:
    out = Var(x.value @ weight.value + bias.value)

    def back():
        g = out.grad
        if g is not None:
            x.accumulate(g @ weight.value.T)
            weight.accumulate(x.value.T @ g)
            bias.accumulate(g.sum(axis=0))
    _rec(tape, back)
    return out


def gated_fuse(a: Var, b: Var, gate: Var, tape=None) -> Var:
    """Per-channel softmax over the two gate rows, then w0*a + w1*b."""
    g = gate.value
    e = np.exp(g - g.max(axis=0, keepdims=True))
    w = e / e.sum(axis=0, keepdims=True)
    out = Var(w[0] * a.value + w[1] * b.value)

    def back():
        go = out.grad
        if go is not None:
            a.accumulate(go * w[0])
            b.accumulate(go * w[1])
            dw = np.stack([(go * a.value).sum(axis=0), (go * b.value).sum(axis=0)])
            gate.accumulate(w * (dw - (w * dw).sum(axis=0, keepdims=True)))
    _rec(tape, back)
    return out


class KernelMap:
    """Occupied (output row, input row) pairs per kernel offset."""

    def __init__(self, nbr: np.ndarray):
        self.n = nbr.shape[0]
        self.k = nbr.shape[1]
        self.pairs = []
        for o in range(self.k):
            rows = np.flatnonzero(nbr[:, o] >= 0)
            if len(rows):
                self.pairs.append((o, rows, nbr[rows, o]))


def sparse_conv(x: Var, kmap: KernelMap, weight: Var, bias: Var, tape=None) -> Var:
    """Submanifold convolution: out[n] = bias + sum_o x[nbr(n, o)] @ weight[o].

    ``weight`` is (K, Din, Dout) in kernel-offset order; empty neighbors
    contribute nothing. Offsets are accumulated in ascending order.
    """
    xv, w = x.value, weight.value
    out = np.empty((kmap.n, w.shape[2]), dtype=np.result_type(xv, w))
    out[:] = bias.value
    for o, rows, cols in kmap.pairs:
        out[rows] += xv[cols] @ w[o]
    res = Var(out)

    def back():
        go = res.grad
        if go is None:
            return
        dw = np.zeros_like(w)
        dx = np.zeros_like(xv)
        for o, rows, cols in kmap.pairs:
            g = go[rows]
            dw[o] = xv[cols].T @ g
            # cols are distinct within one offset, so plain fancy-index add is exact
            dx[cols] += g @ w[o].T
        weight.accumulate(dw)
        bias.accumulate(go.sum(axis=0))
        x.accumulate(dx)
    _rec(tape, back)
    return res


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def nll_bits(logits: Var, targets, tape=None) -> Var:
    """Sum over rows of -log2 softmax(logits)[target]."""
    t = np.asarray(targets, dtype=np.int64)
    rows = np.arange(len(t))
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    out = Var(np.asarray(((lse - z[rows, t]) / LN2).sum(), dtype=logits.value.dtype))

    def back():
        if out.grad is not None:
            p = softmax(logits.value)
            p[rows, t] -= 1
            logits.accumulate(p * (out.grad / LN2))
    _rec(tape, back)
    return out


def total(parts, tape=None) -> Var:
    parts = list(parts)
    out = Var(np.asarray(sum(p.value for p in parts)))

    def back():
        if out.grad is not None:
            for p in parts:
                p.accumulate(out.grad)
    _rec(tape, back)
    return out


def replicate(x: Var, counts, tape=None) -> Var:
    """Repeat row n counts[n] times; gradients sum back over each contiguous run."""
    counts = np.asarray(counts, dtype=np.int64)
    out = Var(np.repeat(x.value, counts, axis=0))

    def back():
        if out.grad is not None and len(counts):
            starts = np.r_[0, np.cumsum(counts)[:-1]]
            x.accumulate(np.add.reduceat(out.grad, starts, axis=0))
    _rec(tape, back)
    return out
