"""Integer range coder kernels.

32-bit range, byte-wise renormalization once the range drops below 2^24,
carry propagation through a cached byte (LZMA style). Frequencies are 16-bit
(each row totals 2^16). The first output byte of this construction is always
zero and is never written; the decoder preloads four bytes instead of five.
Encoder output and decoder input are exactly the same length, which makes a
chunk self-delimiting.
"""
import numpy as np
from numba import njit

PROB_BITS = 16
TOTAL = 1 << PROB_BITS
SPREAD = TOTAL - 16  # mass left after the floor of 1 per symbol
TOP = 1 << 24
MASK32 = 0xFFFFFFFF

OK = 0
EXHAUSTED = 1
CORRUPT = 2


@njit(cache=True, nogil=True)
def _shift_low(low, cache, cache_size, out, pos, skip):
    if low < 0xFF000000 or low > MASK32:
        carry = low >> 32
        temp = cache
        while True:
            if skip:
                skip = False
            else:
                out[pos] = (temp + carry) & 0xFF
                pos += 1
            temp = 0xFF
            cache_size -= 1
            if cache_size == 0:
                break
        cache = (low >> 24) & 0xFF
    cache_size += 1
    low = (low & 0x00FFFFFF) << 8
    return low, cache, cache_size, pos, skip


@njit(cache=True, nogil=True)
def encode_kernel(symbols, freqs, out):
    """Encode symbols[i] under integer row freqs[i] (sums to 2^16). Returns byte count."""
    low = np.int64(0)
    rng = np.int64(MASK32)
    cache = np.int64(0)
    cache_size = np.int64(1)
    pos = 0
    skip = True
    n = symbols.shape[0]
    for i in range(n):
        s = symbols[i]
        cum = 0
        for j in range(s):
            cum += freqs[i, j]
        r = rng >> PROB_BITS
        low += r * cum
        rng = r * freqs[i, s]
        while rng < TOP:
            rng <<= 8
            low, cache, cache_size, pos, skip = _shift_low(low, cache, cache_size, out, pos, skip)
    for _ in range(5):
        low, cache, cache_size, pos, skip = _shift_low(low, cache, cache_size, out, pos, skip)
    return pos


@njit(cache=True, nogil=True)
def _next_byte(data, pos, status):
    if pos < data.shape[0]:
        return np.int64(data[pos]), pos + 1, status
    return np.int64(0), pos + 1, status | EXHAUSTED


@njit(cache=True, nogil=True)
def _decode_one(data, pos, status, code, rng, row):
    r = rng >> PROB_BITS
    v = code // r
    if v >= TOTAL:
        status |= CORRUPT
        v = TOTAL - 1
    s = 15
    cum = 0
    for j in range(16):
        if cum + row[j] > v:
            s = j
            break
        cum += row[j]
    code -= r * cum
    rng = r * row[s]
    if code >= rng:
        status |= CORRUPT
        code = code % rng
    while rng < TOP:
        b, pos, status = _next_byte(data, pos, status)
        code = (code << 8) | b
        rng <<= 8
    return s, pos, status, code, rng


@njit(cache=True, nogil=True)
def decode_kernel(data, start, freqs, out):
    """Decode len(out) symbols starting at data[start]. Returns (end, status)."""
    pos = start
    status = OK
    code = np.int64(0)
    rng = np.int64(MASK32)
    for _ in range(4):
        b, pos, status = _next_byte(data, pos, status)
        code = (code << 8) | b
    for i in range(out.shape[0]):
        s, pos, status, code, rng = _decode_one(data, pos, status, code, rng, freqs[i])
        out[i] = s
    return pos, status


@njit(cache=True, nogil=True)
def quantize_counts_row(weights, out):
    """Integer largest-remainder split of 2^16 - 16 over weights, +1 floor each.

    Ties in the remainder go to the lower symbol index.
    """
    total = 0
    for j in range(16):
        total += weights[j]
    used = 0
    rem = np.empty(16, dtype=np.int64)
    for j in range(16):
        num = weights[j] * SPREAD
        out[j] = num // total + 1
        rem[j] = num % total
        used += num // total
    left = SPREAD - used
    taken = np.zeros(16, dtype=np.bool_)
    for _ in range(left):
        best = -1
        for j in range(16):
            if not taken[j] and (best < 0 or rem[j] > rem[best]):
                best = j
        taken[best] = True
        out[best] += 1


@njit(cache=True, nogil=True)
def adaptive_rows_kernel(contexts, symbols, n_contexts, out):
    """Laplace-smoothed per-context rows seen by each point, in coding order."""
    counts = np.zeros((n_contexts, 16), dtype=np.int64)
    w = np.empty(16, dtype=np.int64)
    for i in range(contexts.shape[0]):
        c = contexts[i]
        for j in range(16):
            w[j] = counts[c, j] + 1
        quantize_counts_row(w, out[i])
        counts[c, symbols[i]] += 1
    return counts


@njit(cache=True, nogil=True)
def adaptive_decode_kernel(data, start, contexts, n_contexts, out):
    """Decode while updating the same per-context counts as the encoder."""
    counts = np.zeros((n_contexts, 16), dtype=np.int64)
    w = np.empty(16, dtype=np.int64)
    row = np.empty(16, dtype=np.int64)
    pos = start
    status = OK
    code = np.int64(0)
    rng = np.int64(MASK32)
    for _ in range(4):
        b, pos, status = _next_byte(data, pos, status)
        code = (code << 8) | b
    for i in range(contexts.shape[0]):
        c = contexts[i]
        for j in range(16):
            w[j] = counts[c, j] + 1
        quantize_counts_row(w, row)
        s, pos, status, code, rng = _decode_one(data, pos, status, code, rng, row)
        out[i] = s
        counts[c, s] += 1
    return pos, status, counts
