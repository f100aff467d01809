import json
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridscreen.dataset import (DatasetError, Dataset, features, generate_dataset, label_mismatch,
                                read_dataset, sample_injections, write_dataset)
from gridscreen.grid import bus_partition
from gridscreen.topology import REFERENCE, Topology, enumerate_contingencies


def test_sampled_load_in_range(case14):
    b = int(np.flatnonzero(case14.Pd > 0)[0])
    nominal = case14.Pd[b]
    rng = np.random.default_rng(0)
    vals = np.array([sample_injections(case14, rng).Pd[b] for _ in range(2000)])
    assert vals.min() >= 0.6 * nominal and vals.max() <= nominal
    # nominal 0.5 -> [0.3, 0.5]
    case_vals = 0.5 * rng.uniform(0.6, 1.0, 5000)
    assert case_vals.min() >= 0.3 and case_vals.max() <= 0.5


def test_zero_load_stays_zero(case14):
    zero = case14.Pd == 0
    assert zero.any()
    for s in range(20):
        inj = sample_injections(case14, np.random.default_rng(s))
        assert np.all(inj.Pd[zero] == 0)


def test_slack_generator_input_is_nominal(case14):
    slack = bus_partition(case14)[0][0]
    inj = sample_injections(case14, np.random.default_rng(5))
    sg = case14.gen_bus == slack
    np.testing.assert_array_equal(inj.Pg[sg], case14.Pg[sg])
    x = features(case14, inj)
    assert x.shape == (14, 3)
    assert x[slack, 2] == case14.Pg[sg].sum()


def test_generation_byte_identical(tmp_path, case14):
    topos = [REFERENCE, Topology((0,))]
    for i in range(2):
        ds, _ = generate_dataset(case14, topos, 15, seed=42)
        write_dataset(tmp_path / f"d{i}.tgnn", ds)
    assert (tmp_path / "d0.tgnn").read_bytes() == (tmp_path / "d1.tgnn").read_bytes()


def test_workers_do_not_change_output(case14):
    topos = [REFERENCE, Topology((0,)), Topology((5,))]
    a, _ = generate_dataset(case14, topos, 6, seed=3)
    b, _ = generate_dataset(case14, topos, 6, seed=3, workers=2)
    assert a == b


def test_zero_samples_gives_empty_dataset(case14):
    ds, skipped = generate_dataset(case14, [REFERENCE], 0, seed=0)
    assert len(ds) == 0 and skipped == 0
    assert ds.x.shape == (0, 14, 3)


def test_split_and_counts(small14):
    assert len(small14) == 80
    assert small14.train.sum() == 48
    for topo, rows in small14.blocks():
        tr = small14.train[rows]
        assert tr.sum() == 12 and tr[:12].all()


def test_k2_blocks_are_test_only(case14):
    t2 = enumerate_contingencies(case14, 2)[0]
    ds, _ = generate_dataset(case14, [REFERENCE, t2], 5, seed=0)
    assert ds.train[ds.topo_index == 1].sum() == 0
    assert ds.train[ds.topo_index == 0].sum() == 3


def test_labels_recheck_below_tolerance(case14, small14):
    assert label_mismatch(case14, small14).max() <= 1e-8


def test_roundtrip_equal(tmp_path, small14):
    p = tmp_path / "d.tgnn"
    write_dataset(p, small14)
    back = read_dataset(p)
    assert back == small14
    assert back.x.tobytes() == small14.x.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=4), st.integers(0, 2**31))
def test_roundtrip_property(tmp_path_factory, sizes, seed):
    rng = np.random.default_rng(seed)
    topos = [Topology((i,)) for i in range(len(sizes))]
    idx = np.repeat(np.arange(len(sizes)), sizes)
    train = np.concatenate([np.arange(n) < rng.integers(0, n + 1) for n in sizes]) if idx.size else np.zeros(0, bool)
    ds = Dataset("toy", topos, rng.normal(size=(idx.size, 4, 3)), rng.normal(size=(idx.size, 4, 3)),
                 idx.astype(np.int64), train.astype(bool),
                 {"topologies": [{"id": t.id, "k": 1} for t in topos], "note": "x"})
    p = tmp_path_factory.mktemp("rt") / "d.tgnn"
    write_dataset(p, ds)
    back = read_dataset(p)
    assert back.x.tobytes() == ds.x.tobytes() and back.y.tobytes() == ds.y.tobytes()
    assert np.array_equal(back.train, ds.train) and np.array_equal(back.topo_index, ds.topo_index)


def test_corrupted_byte_detected(tmp_path, small14):
    p = tmp_path / "d.tgnn"
    write_dataset(p, small14)
    raw = bytearray(p.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    p.write_bytes(bytes(raw))
    with pytest.raises(DatasetError, match="checksum"):
        read_dataset(p)


def _rewrite_header(path, edit):
    raw = path.read_bytes()
    hlen = struct.unpack("<I", raw[6:10])[0]
    header = json.loads(raw[10:10 + hlen])
    edit(header)
    hb = json.dumps(header, sort_keys=True).encode()
    body = raw[:4] + struct.pack("<HI", 1, len(hb)) + hb + raw[10 + hlen:-4]
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def test_manifest_count_mismatch_names_block(tmp_path, small14):
    p = tmp_path / "d.tgnn"
    write_dataset(p, small14)
    bad_id = small14.topologies[1].id

    def edit(h):
        h["manifest"]["topologies"][1]["count"] += 1
    _rewrite_header(p, edit)
    with pytest.raises(DatasetError, match=bad_id):
        read_dataset(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.tgnn"
    p.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(DatasetError, match="magic"):
        read_dataset(p)
