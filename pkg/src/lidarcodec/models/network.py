"""The neural coding network, the network pool and its per-frame session."""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from ..entropy import ProbabilityTable
from ..morton import POPCOUNT, LevelState, neighbor_index
from . import autodiff as ad

N_STACKS = 3
N_BLOCKS = 2
KERNEL = 27
MAGIC = b"LDRM"
VERSION = 1


def param_layout(dim: int) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in serialization order."""
    d = dim
    layout = [("oct_embed", (8, d)), ("gate", (2, d))]
    for s in range(N_STACKS):
        for blk in range(N_BLOCKS):
            for c in range(2):
                p = f"refine{s}.block{blk}.conv{c}"
                layout += [(p + ".weight", (KERNEL, d, d)), (p + ".bias", (d,))]
    for s in (1, 2):
        layout += [(f"head{s}.fc1.weight", (d, d)), (f"head{s}.fc1.bias", (d,)),
                   (f"head{s}.fc2.weight", (d, 16)), (f"head{s}.fc2.bias", (16,))]
    layout += [("context1", (16, d)), ("context2", (16, d))]
    return layout


def param_count(dim: int) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(dim))


def init_params(dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_layout(dim):
        if name in ("oct_embed", "context1", "context2"):
            v = rng.normal(0.0, 0.02, size=shape)
        elif name == "gate" or name.endswith(".bias") or name.endswith("conv1.weight"):
            # the second conv of each residual block starts at zero: every block is the identity
            v = np.zeros(shape)
        else:
            fan_in = shape[0] * shape[1] if len(shape) == 3 else shape[0]
            fan_out = shape[-1] * (shape[0] if len(shape) == 3 else 1)
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            v = rng.uniform(-lim, lim, size=shape)
        params[name] = v.astype(np.float32)
    return params


def octant_index(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64)
    return (c[:, 0] & 1) + 2 * (c[:, 1] & 1) + 4 * (c[:, 2] & 1)


@dataclass
class NeuralPool:
    """Base network (index 0) plus K networks chosen by nearest BoE center."""

    dim: int
    centers: np.ndarray  # (K, 32) float32
    networks: list[dict[str, np.ndarray]] = field(default_factory=list)

    kind = "neural"

    @classmethod
    def create(cls, dim: int, centers, seed: int = 0) -> "NeuralPool":
        centers = np.asarray(centers, dtype=np.float32).reshape(-1, 32)
        rng = np.random.default_rng(seed)
        nets = [init_params(dim, rng) for _ in range(len(centers) + 1)]
        return cls(dim, centers, nets)

    @property
    def K(self) -> int:
        return len(self.centers)

    def new_session(self, tape=None, dtype=np.float32) -> "NeuralSession":
        return NeuralSession(self, tape, dtype)

    def to_bytes(self) -> bytes:
        """magic | u16 version | u32 D | u32 K | u64 len + centers | per net: u64 len + blob."""
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<HII", VERSION, self.dim, self.K))
        c = self.centers.astype("<f4").tobytes()
        buf.write(struct.pack("<Q", len(c)) + c)
        for net in self.networks:
            blob = b"".join(net[name].astype("<f4").tobytes() for name, _ in param_layout(self.dim))
            buf.write(struct.pack("<Q", len(blob)) + blob)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "NeuralPool":
        try:
            return cls._parse(data)
        except struct.error:
            raise ValueError("model file truncated") from None

    @classmethod
    def _parse(cls, data: bytes) -> "NeuralPool":
        if data[:4] != MAGIC:
            raise ValueError("not a model file (bad magic)")
        version, dim, k = struct.unpack_from("<HII", data, 4)
        if version != VERSION:
            raise ValueError(f"unsupported model file version {version}")
        off = 14
        (n,) = struct.unpack_from("<Q", data, off)
        off += 8
        if n != 4 * 32 * k:
            raise ValueError("model file: center block has the wrong length")
        centers = np.frombuffer(data, "<f4", 32 * k, off).reshape(k, 32).copy()
        off += n
        layout = param_layout(dim)
        want = 4 * param_count(dim)
        nets = []
        for _ in range(k + 1):
            if off + 8 > len(data):
                raise ValueError("model file truncated")
            (n,) = struct.unpack_from("<Q", data, off)
            off += 8
            if n != want or off + n > len(data):
                raise ValueError("model file: parameter blob has the wrong length")
            flat = np.frombuffer(data, "<f4", n // 4, off)
            off += n
            net, pos = {}, 0
            for name, shape in layout:
                size = int(np.prod(shape))
                net[name] = flat[pos:pos + size].reshape(shape).astype(np.float32)
                pos += size
            nets.append(net)
        if off != len(data):
            raise ValueError("model file has trailing bytes")
        return cls(dim, centers, nets)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NeuralPool":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()[:8]


class _Net:
    """Parameters of one network wrapped as autodiff variables."""

    def __init__(self, params, dtype):
        self.v = {k: ad.Var(p.astype(dtype, copy=False)) for k, p in params.items()}

    def __getitem__(self, k):
        return self.v[k]


def refine_stack(x, nbr, net, stack: int, tape=None):
    """Two residual blocks, each x + conv(relu(conv(x)))."""
    for blk in range(N_BLOCKS):
        p = f"refine{stack}.block{blk}"
        h = ad.sparse_conv(x, nbr, net[p + ".conv0.weight"], net[p + ".conv0.bias"], tape)
        h = ad.relu(h, tape)
        h = ad.sparse_conv(h, nbr, net[p + ".conv1.weight"], net[p + ".conv1.bias"], tape)
        x = ad.add(x, h, tape)
    return x


def head_logits(x, net, stage: int, tape=None):
    p = f"head{stage}"
    h = ad.relu(ad.linear(x, net[p + ".fc1.weight"], net[p + ".fc1.bias"], tape), tape)
    return ad.linear(h, net[p + ".fc2.weight"], net[p + ".fc2.bias"], tape)


class NeuralSession:
    """Context-model state for one coding pass over one frame.

    Per level: begin_level -> predict_stage(1) -> absorb_stage(1) ->
    predict_stage(2) -> absorb_stage(2) -> end_level. Predictions depend only
    on coordinates, propagated features and absorbed symbols, so the decoder
    reproduces them exactly.
    """

    def __init__(self, pool: NeuralPool, tape=None, dtype=np.float32):
        self.pool = pool
        self.tape = tape
        self.dtype = dtype
        self._nets = {}
        self.prop = None  # propagated features for the next level
        self.level = None
        self.losses = []

    def net(self, k: int) -> _Net:
        if k not in self._nets:
            self._nets[k] = _Net(self.pool.networks[k], self.dtype)
        return self._nets[k]

    def begin_level(self, b: int, level: LevelState, net_index: int = 0, kmap=None):
        if self.prop is not None and self.prop.shape[0] != level.count:
            raise ValueError("propagated features do not match the level size")
        t = self.tape
        self.level = level
        self.k = net_index
        n = self.net(net_index)
        self.nbr = kmap if kmap is not None else ad.KernelMap(neighbor_index(level))
        f = ad.embed(n["oct_embed"], octant_index(level.coords), t)
        if b > 2 and self.prop is not None:
            f = ad.gated_fuse(f, self.prop, n["gate"], t)
        self.feat = refine_stack(f, self.nbr, n, 0, t)
        self._logits = {1: head_logits(self.feat, n, 1, t)}
        self.symbols = {}

    def logits(self, s: int):
        return self._logits[s]

    def predict_stage(self, s: int) -> ProbabilityTable:
        probs = ad.softmax(self._logits[s].value)
        return ProbabilityTable.from_probs(probs)

    def stage_loss(self, s: int, symbols):
        loss = ad.nll_bits(self._logits[s], symbols, self.tape)
        self.losses.append(loss)
        return loss

    def absorb_stage(self, s: int, symbols):
        t, n = self.tape, self.net(self.k)
        sym = np.asarray(symbols, dtype=np.int64)
        self.symbols[s] = sym
        if s == 1:
            f = ad.add(self.feat, ad.embed(n["context1"], sym, t), t)
            self.feat = refine_stack(f, self.nbr, n, 1, t)
            self._logits[2] = head_logits(self.feat, n, 2, t)

    def end_level(self, last: bool = False):
        """Fold in the stage-2 context, refine, and replicate to the children."""
        if last:
            self.prop = None
            return None
        t, n = self.tape, self.net(self.k)
        f = ad.add(self.feat, ad.embed(n["context2"], self.symbols[2], t), t)
        f = refine_stack(f, self.nbr, n, 2, t)
        octant = 16 * self.symbols[2] + self.symbols[1]
        self.prop = ad.replicate(f, POPCOUNT[octant], t)
        return self.prop
