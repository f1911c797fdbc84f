"""Binary checkpoint format.

Layout (little-endian)::

    b"SEIK" | u32 format version | u64 header length | JSON header | tensor payload

The JSON header holds the configs, the rng and optimizer bookkeeping, and a tensor
directory (name, dtype, shape, byte offset into the payload, byte count).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import NetworkConfig

MAGIC = b"SEIK"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    network: NetworkConfig
    params: dict[str, np.ndarray]
    optimizer: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    epoch: int = 0
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _tensors(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    items = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    for slot in ("m", "v"):
        for k, v in ckpt.optimizer.get(slot, {}).items():
            items.append((f"{slot}/{k}", v))
    return items


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory, chunks, offset = [], [], 0
    for name, arr in _tensors(ckpt):
        arr = np.ascontiguousarray(arr)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        directory.append({"name": name, "dtype": arr.dtype.newbyteorder("<").str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    optimizer = {k: v for k, v in ckpt.optimizer.items() if k not in ("m", "v")}
    header = {
        "network": ckpt.network.to_dict(),
        "epoch": ckpt.epoch,
        "optimizer": optimizer,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", ckpt.version, len(blob)) + blob + b"".join(chunks)


def from_bytes(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(data[start : start + hlen])
    payload = memoryview(data)[start + hlen :]
    params, m, v = {}, {}, {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
        slot, _, name = entry["name"].partition("/")
        {"param": params, "m": m, "v": v}[slot][name] = arr
    optimizer = dict(header["optimizer"])
    if m or v:
        optimizer["m"], optimizer["v"] = m, v
    return Checkpoint(
        network=NetworkConfig.from_dict(header["network"]),
        params=params,
        optimizer=optimizer,
        rng_state=header["rng_state"],
        epoch=header["epoch"],
        meta=header["meta"],
        version=version,
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
