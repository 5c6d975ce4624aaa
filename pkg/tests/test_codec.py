from __future__ import annotations

import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lidarcodec import codec
from lidarcodec.morton import build_hierarchy, count_sorts
from lidarcodec.models.baseline import BaselineModel
from lidarcodec.models.network import NeuralPool
from lidarcodec.pointcloud import QuantizedCloud, from_coords
from conftest import random_coords

BASE = BaselineModel()


def pool(K=2, dim=4, seed=0, zero_heads=False):
    p = NeuralPool.create(dim, np.random.default_rng(seed).dirichlet(np.ones(32), size=K), seed=seed)
    if zero_heads:
        for net in p.networks:
            for s in (1, 2):
                net[f"head{s}.fc2.weight"][:] = 0
                net[f"head{s}.fc2.bias"][:] = 0
    return p


def same(a: QuantizedCloud, b: QuantizedCloud):
    return (a.bit_depth == b.bit_depth and np.array_equal(a.coords, b.coords)
            and np.allclose(a.origin, b.origin) and a.step == b.step)


def test_single_voxel():
    c = from_coords([[5, 1, 6]], 3)
    res = codec.encode(c, BASE)
    assert [r.parents for r in res.levels] == [1]
    assert same(codec.decode(res.data, BASE), c)


def test_full_block_octant():
    c = from_coords(np.array(np.meshgrid(*[[6, 7]] * 3)).reshape(3, -1).T, 4)
    levels, labels = build_hierarchy(c.level())
    assert labels[3].octant.tolist() == [255]
    assert same(codec.decode(codec.encode(c, BASE).data, BASE), c)


def test_baseline_beats_uniform_bound(rng):
    c = from_coords(random_coords(rng, 5000, 12, clustered=True), 12)
    res = codec.encode(c, BASE)
    assert res.payload_bits < codec.uniform_bound_bits(c)


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 5, 8, 10]), st.integers(1, 600), st.booleans())
def test_round_trip_property(seed, b, n, clustered):
    rng = np.random.default_rng(seed)
    c = from_coords(random_coords(rng, n, b, clustered), b, origin=rng.normal(size=3), step=0.1)
    for models in (BASE, pool(K=1)):
        sync = codec.encode(c, models)
        assert codec.encode(c, models, "pipelined").data == sync.data
        assert same(codec.decode(sync.data, models), c)


def test_neural_deep_round_trip_and_indices(rng):
    c = from_coords(random_coords(rng, 3000, 12, clustered=True), 12)
    p = pool(K=3)
    res = codec.encode(c, p)
    assert same(codec.decode(res.data, p), c)
    assert all(r.network == 0 for r in res.levels if r.level <= 6)
    assert all(1 <= r.network <= 3 and r.index_bytes == 1 for r in res.levels if r.level > 6)


def test_accounting(rng):
    c = from_coords(random_coords(rng, 2000, 11), 11, origin=[1.0, 2.0, 3.0], step=0.5)
    for models in (BASE, pool()):
        res = codec.encode(c, models)
        total = res.header_bytes + sum(r.index_bytes + r.chunk_bytes for r in res.levels) + 4
        assert total == len(res.data)
        assert res.bpp == 8 * len(res.data) / c.count


def test_ordering_modes_agree_and_count_sorts(rng):
    c = from_coords(random_coords(rng, 1500, 10), 10)
    with count_sorts() as sorts:
        a = codec.encode(c, BASE)
        codec.decode(a.data, BASE)
        assert sorts() == 0  # the one sort happened when the cloud was built
    with count_sorts() as sorts:
        b = codec.encode(c, BASE, ordering="explicit")
        assert sorts() == 2 * (10 - 1)
    assert a.data == b.data
    assert same(codec.decode(b.data, BASE, ordering="explicit"), c)


def test_corruption_is_detected(rng):
    c = from_coords(random_coords(rng, 800, 9), 9)
    data = bytearray(codec.encode(c, BASE).data)
    data[len(data) // 2] ^= 0x10
    with pytest.raises(codec.CRCError):
        codec.decode(bytes(data), BASE)
    with pytest.raises(codec.CodecError):
        codec.decode(bytes(data[:6]), BASE)
    with pytest.raises(codec.CodecError, match="magic"):
        codec.decode(b"PLY!" + bytes(data[4:]), BASE)


def _recrc(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def test_unknown_version_and_structural_damage(rng):
    c = from_coords(random_coords(rng, 300, 8), 8)
    data = codec.encode(c, BASE).data
    body = bytearray(data[:-4])
    body[4] = 9
    with pytest.raises(codec.CodecError, match="version"):
        codec.decode(_recrc(bytes(body)), BASE)
    # valid CRC but a dropped payload byte: coding checks still catch it
    with pytest.raises(codec.CodecError):
        codec.decode(_recrc(data[:-5]), BASE)
    with pytest.raises(codec.CodecError):
        codec.decode(_recrc(data[:-4] + b"\0"), BASE)


def test_model_mismatch_fails_before_coding(rng):
    c = from_coords(random_coords(rng, 500, 9), 9)
    data = codec.encode(c, pool(K=2)).data
    with pytest.raises(codec.ModelMismatchError, match="K=2"):
        codec.decode(data, pool(K=3))
    with pytest.raises(codec.ModelMismatchError):
        codec.decode(data, pool(K=2, seed=1))
    with pytest.raises(codec.ModelMismatchError):
        codec.decode(data, BASE)


def test_empty_cloud_rejected():
    with pytest.raises(codec.CodecError):
        codec.encode(QuantizedCloud(np.zeros((0, 3), dtype=np.int64), 5), BASE)


def test_pipeline_failure_propagates(rng, monkeypatch):
    c = from_coords(random_coords(rng, 300, 8), 8)
    calls = []

    def broken(sym, table):
        calls.append(1)
        raise RuntimeError("coder exploded")
    monkeypatch.setattr(codec, "encode_symbols", broken)
    with pytest.raises(codec.CodecError, match="coder exploded"):
        codec.encode(c, BASE, "pipelined")
    assert len(calls) == 1


def test_unknown_mode(rng):
    with pytest.raises(ValueError):
        codec.encode(from_coords([[0, 0, 0]], 3), BASE, "turbo")


@pytest.mark.parametrize("seed", range(6))
def test_per_point_bits_match_chunks(seed):
    rng = np.random.default_rng(seed)
    c = from_coords(random_coords(rng, 2000, 10, clustered=True), 10)
    for models in (BASE, pool(K=2)):
        for level in (2, 6, 9):
            pb = codec.per_point_bits(c, models, level)
            assert pb.stage_bits.shape == (2, pb.coords.shape[0])
            for s in (0, 1):
                assert abs(pb.stage_bits[s].sum() - pb.chunk_bits[s]) < 64


def test_per_point_bits_uniform_model(rng):
    c = from_coords(random_coords(rng, 400, 8), 8)
    pb = codec.per_point_bits(c, pool(zero_heads=True), 5)
    assert np.allclose(pb.bits, 8.0)
    with pytest.raises(ValueError):
        codec.per_point_bits(c, BASE, 8)
