"""Coding 16-way symbols: uniform, skewed and adaptive tables."""
import numpy as np

from lidarcodec.entropy import AdaptiveTable, ProbabilityTable, decode_symbols, encode_symbols

rng = np.random.default_rng(1)
n = 1000

# A uniform table costs 4 bits per symbol; the coder adds a few bytes of flush.
sym = rng.integers(0, 16, size=n)
chunk = encode_symbols(sym, ProbabilityTable.uniform(n))
print(f"uniform: {len(chunk.payload)} payload bytes for {n} symbols (ideal {n // 2})")

# A skewed table that matches the data costs far less.
p = np.full(16, 0.01)
p[3] = 1 - 15 * 0.01
table = ProbabilityTable.from_probs(np.tile(p, (n, 1)))
sym = rng.choice(16, size=n, p=p)
chunk = encode_symbols(sym, table)
print(f"skewed: {chunk.payload_bits} bits, ideal {table.bits(sym).sum():.1f}")
print("decodes:", np.array_equal(decode_symbols(chunk, table), sym))

# Adaptive counts learn the skew as they go; the decoder rebuilds the same counts.
ctx = np.zeros(n, dtype=np.int64)
adaptive = AdaptiveTable(ctx, 1)
chunk = encode_symbols(sym, adaptive)
print(f"adaptive: {chunk.payload_bits} bits; decodes:", np.array_equal(decode_symbols(chunk, adaptive), sym))

# The frequency rows the coder actually uses.
print(table.freqs[0])
