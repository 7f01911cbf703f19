"""RCNN checkpoint files.

    b"RCNN" | version u32 LE | header_len u32 LE | header (key=value lines)
    | tensors f32 LE row-major, in the order listed by the ``tensors`` key
"""

from __future__ import annotations

import os
import struct
from dataclasses import asdict, fields

import numpy as np

from ..patching import decode_header, encode_header
from .net import DenoiserNet, NetConfig
from .train import AdamState

MAGIC = b"RCNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _netcfg_from(header: dict) -> NetConfig:
    kw = {}
    for f in fields(NetConfig):
        key = f"net.{f.name}"
        if key not in header:
            raise CheckpointError(f"header lacks {key}")
        raw = header[key]
        if f.type in (bool, "bool"):
            kw[f.name] = raw == "True"
        elif f.type in (str, "str"):
            kw[f.name] = raw
        else:
            kw[f.name] = int(raw)
    try:
        return NetConfig(**kw)
    except ValueError as exc:
        raise CheckpointError(f"invalid network description: {exc}") from exc


def save_checkpoint(path, net: DenoiserNet, epoch: int = 0, lr: float = 0.0, seed: int = 0,
                    adam: AdamState | None = None, extra: dict | None = None) -> None:
    names, arrays = [], []
    for name, layer, kind, key in net.named_tensors():
        names.append(f"{name}:{'x'.join(map(str, getattr(layer, kind)[key].shape))}")
        arrays.append(getattr(layer, kind)[key])
    if adam is not None:
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            names.append(f"adam.m.{i}:{'x'.join(map(str, m.shape))}")
            arrays.append(m)
            names.append(f"adam.v.{i}:{'x'.join(map(str, v.shape))}")
            arrays.append(v)
    header = {f"net.{k}": v for k, v in asdict(net.cfg).items()}
    header.update(epoch=epoch, lr=repr(float(lr)), seed=seed,
                  adam_step=-1 if adam is None else adam.step, tensors=";".join(names))
    header.update(extra or {})
    head = encode_header(header)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(head)) + head + payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[DenoiserNet, dict, AdamState | None]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    version, head_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = decode_header(raw[12:12 + head_len])
    net = DenoiserNet(_netcfg_from(header))
    specs = [s.rsplit(":", 1) for s in header["tensors"].split(";")]
    offset = 12 + head_len
    tensors = {}
    for name, shape_s in specs:
        shape = tuple(int(t) for t in shape_s.split("x")) if shape_s else ()
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"checkpoint truncated at tensor {name}")
        tensors[name] = np.frombuffer(raw, "<f4", count, offset).reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(raw):
        raise CheckpointError("trailing bytes after last tensor")
    for name, layer, kind, key in net.named_tensors():
        store = getattr(layer, kind)
        if name not in tensors or tensors[name].shape != store[key].shape:
            raise CheckpointError(f"tensor {name} missing or mis-shaped")
        store[key] = tensors[name].copy()
    adam = None
    step = int(header["adam_step"])
    if step >= 0:
        n = len(net.parameters())
        adam = AdamState(step, [tensors[f"adam.m.{i}"].copy() for i in range(n)],
                         [tensors[f"adam.v.{i}"].copy() for i in range(n)])
    return net, header, adam
