"""Checkpoint file: magic, version, JSON header, float64 parameter blob, CRC32."""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..grid import GridCase
from .training import build_model

MAGIC = b"TGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, extra: dict | None = None) -> None:
    names = sorted(model.params)
    blobs = [model.params[k].data.astype("<f8").tobytes() for k in names]
    blobs.append(np.asarray(model.x_mean, "<f8").tobytes())
    blobs.append(np.asarray(model.x_std, "<f8").tobytes())
    header = {
        "kind": model.kind,
        "case": model.case_name,
        "n_bus": model.n_bus,
        "n_branch": model.n_branch,
        "seed": model.seed,
        "hyper": model.hyper,
        "params": [[k, list(model.params[k].shape)] for k in names],
        "num_parameters": model.num_parameters(),
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<HI", VERSION, len(hb)) + hb + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_header(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < 14:
        raise CheckpointError(f"{path}: truncated")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    header = json.loads(raw[10:10 + hlen])
    return header, raw[10 + hlen:-4]


def load_checkpoint(path, case: GridCase):
    """Rebuild the model stored in ``path`` for ``case``."""
    header, blob = read_header(path)
    if header["n_bus"] != case.n_bus or header["n_branch"] != case.n_branch:
        raise CheckpointError(
            f"checkpoint is for {header['n_bus']} buses / {header['n_branch']} branches, "
            f"case {case.name} has {case.n_bus} / {case.n_branch}")
    hyper = dict(header["hyper"])
    hyper.pop("width", None)  # derived
    model = build_model(header["kind"], case, header["seed"], **hyper)
    arr = np.frombuffer(blob, dtype="<f8")
    pos = 0
    for name, shape in header["params"]:
        n = int(np.prod(shape))
        model.params[name].data = arr[pos:pos + n].reshape(shape).astype(np.float64)
        pos += n
    model.x_mean = arr[pos:pos + 3].copy()
    model.x_std = arr[pos + 3:pos + 6].copy()
    if pos + 6 != len(arr):
        raise CheckpointError(f"{path}: parameter blob size does not match header")
    return model, header
