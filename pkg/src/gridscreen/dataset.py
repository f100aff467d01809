"""Operating-point sampling, NR labelling, and the binary dataset file."""
from __future__ import annotations

import json
import logging
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import GridCase, build_ybus, bus_partition
from .powerflow import Injections, mismatch, solve_nr
from .topology import Topology

log = logging.getLogger(__name__)

MAGIC = b"TGNN"
VERSION = 1
X_CHANNELS = ("P_l", "Q_l", "P_g")
Y_CHANNELS = ("Vm", "Va", "Q_g")
SLACK_PG_NOTE = "slack-bus P_g input channel holds the nominal case value"


class DatasetError(ValueError):
    pass


def sample_injections(case: GridCase, rng, low=0.6, high=1.0) -> Injections:
    """Scale each nominal Pd, Qd and non-slack Pg by an independent U[low, high]."""
    slack = bus_partition(case)[0][0]
    Pd = case.Pd * rng.uniform(low, high, case.n_bus)
    Qd = case.Qd * rng.uniform(low, high, case.n_bus)
    scale = rng.uniform(low, high, case.n_gen)
    scale[case.gen_bus == slack] = 1.0
    return Injections(Pd, Qd, case.Pg * scale)


def features(case: GridCase, inj: Injections) -> np.ndarray:
    """Node features ``[P_l, Q_l, P_g]`` of shape (n_bus, 3)."""
    pg = np.bincount(case.gen_bus, weights=inj.Pg, minlength=case.n_bus)
    return np.stack([inj.Pd, inj.Qd, pg], axis=1)


def targets(case: GridCase, sol) -> np.ndarray:
    """Node targets ``[Vm, Va, Q_g]`` of shape (n_bus, 3); Q_g is zero off generator buses."""
    return np.stack([sol.Vm, sol.Va, sol.bus_Qg(case)], axis=1)


def _sample_rng(seed, topo_id, index, attempt):
    ss = np.random.SeedSequence([int(seed), zlib.crc32(topo_id.encode()), int(index), int(attempt)])
    return np.random.default_rng(ss)


@dataclass
class Dataset:
    """Samples grouped in contiguous per-topology blocks.

    ``x`` and ``y`` have shape (N, n_bus, 3); ``topo_index[i]`` points into
    ``topologies``; ``train`` flags the training split.
    """

    case_name: str
    topologies: list
    x: np.ndarray
    y: np.ndarray
    topo_index: np.ndarray
    train: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.x)

    @property
    def n_bus(self):
        return self.x.shape[1]

    def counts(self):
        return np.bincount(self.topo_index, minlength=len(self.topologies))

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.case_name, self.topologies, self.x[mask], self.y[mask],
                       self.topo_index[mask], self.train[mask], self.manifest)

    def train_split(self) -> "Dataset":
        return self.subset(self.train)

    def test_split(self) -> "Dataset":
        return self.subset(~self.train)

    def sample_topologies(self) -> list:
        return [self.topologies[i] for i in self.topo_index]

    def blocks(self):
        """Yield ``(topology, row indices)`` for each topology with samples."""
        for i, topo in enumerate(self.topologies):
            rows = np.flatnonzero(self.topo_index == i)
            if rows.size:
                yield topo, rows

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.case_name == other.case_name
            and [t.id for t in self.topologies] == [t.id for t in other.topologies]
            and all(a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)
                    for a, b in ((self.x, other.x), (self.y, other.y),
                                 (self.topo_index, other.topo_index), (self.train, other.train)))
            and self.manifest == other.manifest
        )

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        topos, index = [], []
        for p in parts:
            index.append(p.topo_index + len(topos))
            topos.extend(p.topologies)
        manifest = {"parts": [{k: v for k, v in p.manifest.items() if k != "topologies"} for p in parts],
                    "topologies": [b for p in parts for b in p.manifest.get("topologies", [])]}
        return cls(parts[0].case_name, topos,
                   np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]),
                   np.concatenate(index), np.concatenate([p.train for p in parts]), manifest)


def _generate_block(case, topo, n, seed, low, high, tol, retry_cap):
    ybus = build_ybus(case, topo)
    xs, ys, skipped, attempts = [], [], 0, 0
    for i in range(n):
        for attempt in range(retry_cap + 1):
            attempts += 1
            inj = sample_injections(case, _sample_rng(seed, topo.id, i, attempt), low, high)
            sol = solve_nr(case, ybus, inj, tol=tol)
            if sol.converged:
                xs.append(features(case, inj))
                ys.append(targets(case, sol))
                break
        else:
            skipped += 1
    shape = (0, case.n_bus, 3)
    x = np.array(xs) if xs else np.zeros(shape)
    y = np.array(ys) if ys else np.zeros(shape)
    return x, y, skipped, attempts


def generate_dataset(case: GridCase, topologies, n_per_topo: int, seed: int, *,
                     train_fraction: float = 0.6, low: float = 0.6, high: float = 1.0,
                     tol: float = 1e-8, retry_cap: int = 10, workers: int = 1,
                     strict: bool = False, test_only_k: int | None = 2):
    """Sample and label ``n_per_topo`` operating points for every topology.

    Each sample draws from its own RNG stream keyed on (seed, topology id,
    sample index, attempt), so output does not depend on ``workers``.
    Non-converged draws are re-sampled up to ``retry_cap`` times and then
    counted as skipped. The first ``round(train_fraction * n)`` samples of
    each block form the training split, except for topologies with
    ``k >= test_only_k`` whose samples are all test data.

    Returns ``(dataset, skipped_count)``. Topologies converging on fewer than
    half of their draws are listed in ``manifest["defective"]``; with
    ``strict=True`` they raise :class:`DatasetError` instead.
    """
    topologies = [t if isinstance(t, Topology) else Topology(t) for t in topologies]
    args = [(case, t, n_per_topo, seed, low, high, tol, retry_cap) for t in topologies]
    if workers > 1 and len(topologies) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_generate_block, *zip(*args)))
    else:
        results = [_generate_block(*a) for a in args]

    xs, ys, idx, train, blocks, defective = [], [], [], [], [], []
    skipped_total = 0
    for ti, (topo, (x, y, skipped, attempts)) in enumerate(zip(topologies, results)):
        n = len(x)
        test_only = test_only_k is not None and topo.k >= test_only_k
        n_train = 0 if test_only else int(round(train_fraction * n))
        xs.append(x)
        ys.append(y)
        idx.append(np.full(n, ti, dtype=np.int64))
        train.append(np.arange(n) < n_train)
        skipped_total += skipped
        rate = n / attempts if attempts else 1.0
        if rate < 0.5:
            defective.append(topo.id)
        blocks.append({"id": topo.id, "k": topo.k, "count": n, "n_train": n_train,
                       "skipped": skipped, "attempts": attempts})
    if defective:
        msg = f"topologies converging on < 50% of draws: {defective}"
        if strict:
            raise DatasetError(msg)
        log.warning(msg)
    manifest = {
        "case": case.name,
        "n_bus": case.n_bus,
        "seed": int(seed),
        "sampling_range": [low, high],
        "n_per_topology": int(n_per_topo),
        "train_fraction": train_fraction,
        "test_only_k": test_only_k,
        "solver_tol": tol,
        "retry_cap": retry_cap,
        "x_channels": list(X_CHANNELS),
        "y_channels": list(Y_CHANNELS),
        "slack_pg": SLACK_PG_NOTE,
        "skipped": skipped_total,
        "defective": defective,
        "topologies": blocks,
    }
    shape = (0, case.n_bus, 3)
    ds = Dataset(
        case.name, topologies,
        np.concatenate(xs) if xs else np.zeros(shape),
        np.concatenate(ys) if ys else np.zeros(shape),
        np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64),
        np.concatenate(train) if train else np.zeros(0, dtype=bool),
        manifest,
    )
    return ds, skipped_total


def label_mismatch(case: GridCase, ds: Dataset) -> np.ndarray:
    """Max |dP|, |dQ| per sample recomputed from stored x and y.

    P is checked at non-slack buses and Q everywhere (stored Q_g closes the
    balance at generator buses).
    """
    slack = bus_partition(case)[0]
    nonslack = np.ones(case.n_bus, dtype=bool)
    nonslack[slack] = False
    out = np.zeros(len(ds))
    for topo, rows in ds.blocks():
        ybus = build_ybus(case, topo)
        x, y = ds.x[rows], ds.y[rows]
        S = x[:, :, 2] - x[:, :, 0] + 1j * (y[:, :, 2] - x[:, :, 1])
        dP, dQ = mismatch(case, ybus, y[:, :, 0], y[:, :, 1], S)
        out[rows] = np.maximum(np.abs(dP[:, nonslack]).max(axis=1), np.abs(dQ).max(axis=1))
    return out


# -- binary file -----------------------------------------------------------

def write_dataset(path, ds: Dataset) -> None:
    """Write ``ds`` as: magic, u16 version, u32 header length, JSON header,
    little-endian float64 payload, CRC32 of everything before it."""
    blocks, payload, offset = [], [], 0
    base = {b["id"]: b for b in ds.manifest.get("topologies", [])}
    for ti, topo in enumerate(ds.topologies):
        rows = np.flatnonzero(ds.topo_index == ti)
        n_train = int(ds.train[rows].sum())
        if not np.all(ds.train[rows][:n_train]) or np.any(ds.train[rows][n_train:]):
            raise DatasetError(f"block {topo.id}: training rows must precede test rows")
        block = dict(base.get(topo.id, {"id": topo.id, "k": topo.k}))
        block.update(count=int(rows.size), n_train=n_train, offset=offset)
        blocks.append(block)
        for arr in (ds.x[rows], ds.y[rows]):
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            payload.append(data)
            offset += len(data)
    if np.any(np.diff(ds.topo_index) < 0):
        raise DatasetError("samples must be grouped by topology in topology order")
    header = {"case_name": ds.case_name, "n_bus": ds.n_bus,
              "manifest": {**ds.manifest, "topologies": blocks}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + b"".join(payload)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 14:
        raise DatasetError("truncated file")
    if raw[:4] != MAGIC:
        raise DatasetError(f"bad magic {raw[:4]!r}")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != VERSION:
        raise DatasetError(f"unsupported version {version}")
    if len(raw) < 10 + hlen + 4:
        raise DatasetError("truncated header")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise DatasetError("checksum mismatch")
    header = json.loads(body[10:10 + hlen].decode("utf-8"))
    payload = body[10 + hlen:]
    manifest, V = header["manifest"], header["n_bus"]
    blocks = manifest["topologies"]
    per = V * 3 * 8
    xs, ys, idx, train, topologies = [], [], [], [], []
    expected = 0
    ends = [b["offset"] for b in blocks[1:]] + [len(payload)]
    for ti, b in enumerate(blocks):
        n = b["count"]
        # each block spans from its offset to the next one
        if b["offset"] != expected or ends[ti] - b["offset"] != 2 * n * per:
            raise DatasetError(f"block {b['id']}: manifest count {n} does not match payload")
        x = np.frombuffer(payload, "<f8", n * V * 3, b["offset"]).reshape(n, V, 3)
        y = np.frombuffer(payload, "<f8", n * V * 3, b["offset"] + n * per).reshape(n, V, 3)
        expected = b["offset"] + 2 * n * per
        xs.append(x.astype(np.float64))
        ys.append(y.astype(np.float64))
        idx.append(np.full(n, ti, dtype=np.int64))
        train.append(np.arange(n) < b["n_train"])
        topologies.append(Topology.from_id(b["id"]))
    if expected != len(payload):
        name = blocks[-1]["id"] if blocks else "<none>"
        raise DatasetError(f"block {name}: payload has {len(payload) - expected} unaccounted bytes")
    for b in blocks:
        b.pop("offset")
    shape = (0, V, 3)
    return Dataset(
        header["case_name"], topologies,
        np.concatenate(xs) if xs else np.zeros(shape),
        np.concatenate(ys) if ys else np.zeros(shape),
        np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64),
        np.concatenate(train) if train else np.zeros(0, dtype=bool),
        manifest,
    )
