"""Arithmetic coding of 16-way symbols under per-symbol probability rows.

A chunk is ``u32 symbol_count | payload``; the payload ends with the coder's
4-byte flush and is self-delimiting (the decoder consumes exactly the bytes
the encoder wrote).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _rangecoder as rc

TOTAL = rc.TOTAL
SPREAD = rc.SPREAD


class StreamError(ValueError):
    """Chunk exhausted early or failed its consumption check."""


def quantize_probs(rows) -> np.ndarray:
    """Real rows -> integer rows summing to 2^16, every entry >= 1.

    Largest-remainder rounding of (2^16 - 16) * p on top of a floor of one,
    ties to the lower symbol index.
    """
    p = np.asarray(rows, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[-1] != 16:
        raise ValueError("probability rows must have 16 entries")
    if not np.all(np.isfinite(p)):
        raise ValueError("probability rows contain NaN or inf")
    if np.any(p < 0):
        raise ValueError("probability rows must be non-negative")
    s = p.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("probability row sums must be positive")
    x = p / s * SPREAD
    base = np.floor(x)
    frac = x - base
    left = np.clip(SPREAD - base.sum(axis=1).astype(np.int64), 0, 16)
    order = np.argsort(-frac, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(16)[None, :].repeat(len(p), 0), axis=1)
    q = base.astype(np.int64) + 1 + (rank < left[:, None])
    # float slack can leave the row a unit off; settle it on the largest entry
    diff = TOTAL - q.sum(axis=1)
    if np.any(diff):
        q[np.arange(len(q)), q.argmax(axis=1)] += diff
    return q


def quantize_weights(weights) -> np.ndarray:
    """Integer-weight version of :func:`quantize_probs` (exact arithmetic)."""
    w = np.asarray(weights, dtype=np.int64)
    if w.ndim == 1:
        w = w[None, :]
    if np.any(w < 0) or np.any(w.sum(axis=1) <= 0):
        raise ValueError("weights must be non-negative with a positive sum")
    out = np.empty_like(w)
    for i in range(len(w)):
        rc.quantize_counts_row(w[i], out[i])
    return out


@dataclass(eq=False)
class ProbabilityTable:
    """Per-symbol distributions: real rows (optional) and their coded integer form."""

    freqs: np.ndarray  # (N, 16) int64, rows sum to 2^16
    probs: np.ndarray | None = None  # (N, 16) reals the freqs came from

    @classmethod
    def from_probs(cls, rows) -> "ProbabilityTable":
        rows = np.asarray(rows)
        return cls(quantize_probs(rows), rows)

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityTable":
        return cls(np.full((n, 16), TOTAL // 16, dtype=np.int64))

    def __len__(self):
        return len(self.freqs)

    def bits(self, symbols) -> np.ndarray:
        """Ideal code length of each symbol under the quantized rows."""
        s = np.asarray(symbols, dtype=np.int64)
        return -np.log2(self.freqs[np.arange(len(s)), s] / TOTAL)

    def materialize(self, symbols=None) -> "ProbabilityTable":
        return self


@dataclass(eq=False)
class AdaptiveTable:
    """Rows produced by adaptive per-context counts that update after every symbol.

    Row i depends on the symbols before i, so the encoder materializes it from
    the known symbols and the decoder rebuilds it while decoding.
    """

    contexts: np.ndarray  # (N,) int64
    n_contexts: int

    def __len__(self):
        return len(self.contexts)

    def materialize(self, symbols) -> ProbabilityTable:
        s = _check_symbols(symbols)
        if len(s) != len(self.contexts):
            raise ValueError("symbol count does not match the table")
        out = np.empty((len(s), 16), dtype=np.int64)
        rc.adaptive_rows_kernel(self.contexts, s, self.n_contexts, out)
        return ProbabilityTable(out)

    def bits(self, symbols) -> np.ndarray:
        return self.materialize(symbols).bits(symbols)


@dataclass(frozen=True)
class CodedChunk:
    payload: bytes
    symbol_count: int

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.symbol_count) + self.payload

    def __len__(self):
        return 4 + len(self.payload)

    @property
    def payload_bits(self) -> int:
        return 8 * len(self.payload)


def _check_symbols(symbols) -> np.ndarray:
    s = np.ascontiguousarray(np.asarray(symbols, dtype=np.int64).reshape(-1))
    if s.size and (s.min() < 0 or s.max() > 15):
        raise ValueError("symbols must lie in [0, 15]")
    return s


def encode_symbols(symbols, table) -> CodedChunk:
    s = _check_symbols(symbols)
    if len(table) != len(s):
        raise ValueError(f"{len(s)} symbols but {len(table)} table rows")
    freqs = np.ascontiguousarray(table.materialize(s).freqs, dtype=np.int64)
    out = np.empty(2 * len(s) + 16, dtype=np.uint8)
    n = rc.encode_kernel(s, freqs, out)
    return CodedChunk(out[:n].tobytes(), len(s))


def decode_payload(data, start: int, n: int, table, strict: bool = True):
    """Decode n symbols from ``data[start:]``; returns (symbols, end offset)."""
    buf = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    out = np.empty(n, dtype=np.int64)
    if isinstance(table, AdaptiveTable):
        end, status, _ = rc.adaptive_decode_kernel(buf, start, table.contexts, table.n_contexts, out)
    else:
        if len(table) != n:
            raise ValueError(f"{n} symbols requested but {len(table)} table rows")
        end, status = rc.decode_kernel(buf, start, np.ascontiguousarray(table.freqs, dtype=np.int64), out)
    if strict and status & rc.EXHAUSTED:
        raise StreamError("chunk exhausted before all symbols were decoded")
    if strict and status & rc.CORRUPT:
        raise StreamError("stream corruption: decoder state left the valid interval")
    return out, int(end)


def decode_symbols(chunk, table, strict: bool = True) -> np.ndarray:
    """Exact inverse of :func:`encode_symbols` given the identical table.

    ``chunk`` is a :class:`CodedChunk` or its serialized bytes. With
    ``strict=False`` damaged or mismatched input still yields ``symbol_count``
    symbols in [0, 15] instead of raising.
    """
    if isinstance(chunk, CodedChunk):
        payload, n = chunk.payload, chunk.symbol_count
    else:
        raw = bytes(chunk)
        if len(raw) < 4:
            raise StreamError("chunk shorter than its 4-byte count")
        n, = struct.unpack_from("<I", raw)
        payload = raw[4:]
    symbols, end = decode_payload(payload, 0, n, table, strict)
    if strict and end != len(payload):
        raise StreamError(f"terminator mismatch: consumed {end} of {len(payload)} payload bytes")
    return symbols
