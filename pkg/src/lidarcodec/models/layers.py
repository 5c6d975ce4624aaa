"""Array-level entry points to the coding network's building blocks.

These run the same code as the network session (without recording
gradients) and exist so each block can be used and checked on its own.
"""
from __future__ import annotations

import numpy as np

from ..morton import LevelState, neighbor_index
from . import autodiff as ad
from .network import N_BLOCKS, octant_index


def octant_embed(coords, table) -> np.ndarray:
    """Row n = table[x%2 + 2*(y%2) + 4*(z%2)] of coordinate n."""
    return np.asarray(table)[octant_index(np.asarray(coords).reshape(-1, 3))]


def gated_fuse(f_oct, f_prop, gate) -> np.ndarray:
    f_oct, f_prop, gate = (np.asarray(a) for a in (f_oct, f_prop, gate))
    if f_oct.shape != f_prop.shape or gate.shape != (2, f_oct.shape[1]):
        raise ValueError("gated_fuse shape mismatch")
    return ad.gated_fuse(ad.Var(f_oct), ad.Var(f_prop), ad.Var(gate)).value


def sparse_conv(features, level: LevelState, weight, bias, nbr=None) -> np.ndarray:
    """out[n] = bias + sum over occupied offsets o of feat[n + o] @ weight[o]."""
    if nbr is None:
        nbr = neighbor_index(level)
    return ad.sparse_conv(ad.Var(np.asarray(features)), ad.KernelMap(nbr), ad.Var(np.asarray(weight)),
                          ad.Var(np.asarray(bias))).value


def refine(features, level: LevelState, stack, nbr=None) -> np.ndarray:
    """Two residual blocks; ``stack`` is a list of N_BLOCKS (w0, b0, w1, b1) tuples."""
    if nbr is None:
        nbr = neighbor_index(level)
    kmap = ad.KernelMap(nbr)
    x = ad.Var(np.asarray(features))
    for blk in range(N_BLOCKS):
        w0, b0, w1, b1 = (ad.Var(np.asarray(a)) for a in stack[blk])
        h = ad.relu(ad.sparse_conv(x, kmap, w0, b0))
        x = ad.add(x, ad.sparse_conv(h, kmap, w1, b1))
    return x.value


def predict_head(features, w1, b1, w2, b2) -> np.ndarray:
    """Linear -> ReLU -> Linear -> softmax, one 16-way row per point."""
    h = ad.relu(ad.linear(ad.Var(np.asarray(features)), ad.Var(np.asarray(w1)), ad.Var(np.asarray(b1))))
    return ad.softmax(ad.linear(h, ad.Var(np.asarray(w2)), ad.Var(np.asarray(b2))).value)


def absorb_context(features, symbols, table) -> np.ndarray:
    """Row n += table[symbols[n]]."""
    return np.asarray(features) + np.asarray(table)[np.asarray(symbols, dtype=np.int64)]
