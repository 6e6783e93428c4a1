"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"DSPARSE\\0"
    version      u32
    header_len   u32       then header_len bytes of UTF-8 ``key = value`` lines,
                           values JSON-encoded, keys sorted
    n_arrays     u32
    per array:
      name_len   u16, name (UTF-8)
      dtype_len  u8,  numpy dtype string (e.g. "<f8")
      ndim       u8,  shape as ndim x u64
      nbytes     u64, raw C-order payload
    sha256       32 bytes over everything above

Array names are prefixed ``param/``, ``mask/``, ``bn/``, ``adam.m/`` and
``adam.v/``. No timestamps are stored, so identical training runs produce
identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .model import DSparsEModel, ModelConfig
from .train import Adam, TrainConfig, TrainResult

MAGIC = b"DSPARSE\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def encode_header(items: dict) -> bytes:
    lines = [f"{k} = {json.dumps(items[k], sort_keys=True)}" for k in sorted(items)]
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_header(raw: bytes) -> dict:
    out = {}
    for line in raw.decode("utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        out[key] = json.loads(value)
    return out


def write_container(path: str | os.PathLike, header: dict, arrays: dict[str, np.ndarray]) -> None:
    body = bytearray(MAGIC)
    body += struct.pack("<I", VERSION)
    h = encode_header(header)
    body += struct.pack("<I", len(h)) + h
    body += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        n = name.encode("utf-8")
        dt = arr.dtype.str.encode("ascii")
        body += struct.pack("<H", len(n)) + n
        body += struct.pack("<B", len(dt)) + dt
        body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        payload = arr.tobytes(order="C")
        body += struct.pack("<Q", len(payload)) + payload
    body += hashlib.sha256(body).digest()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body)
    os.replace(tmp, path)


def read_container(path: str | os.PathLike) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 4 + 32 or data[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic or truncated)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch (file truncated or corrupted)")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(body):
            raise IntegrityError(f"{path}: unexpected end of data")
        vals = struct.unpack_from(fmt, body, pos)
        pos += size
        return vals

    def take_bytes(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise IntegrityError(f"{path}: unexpected end of data")
        out = body[pos : pos + n]
        pos += n
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    (hlen,) = take("<I")
    header = decode_header(take_bytes(hlen))
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = take_bytes(nlen).decode("utf-8")
        (dlen,) = take("<B")
        dtype = np.dtype(take_bytes(dlen).decode("ascii"))
        (ndim,) = take("<B")
        shape = take(f"<{ndim}Q") if ndim else ()
        (nbytes,) = take("<Q")
        arr = np.frombuffer(take_bytes(nbytes), dtype=dtype)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"{path}: array {name!r} payload does not match shape {shape}")
        arrays[name] = arr.reshape(shape).copy()
    if pos != len(body):
        raise IntegrityError(f"{path}: trailing bytes after last array")
    return header, arrays


@dataclass
class Checkpoint:
    model: DSparsEModel
    train_config: TrainConfig
    optimizer: Adam
    rng: np.random.Generator
    epoch: int
    meta: dict

    def as_result(self) -> TrainResult:
        return TrainResult(self.model, self.optimizer, self.rng, self.train_config, [], self.epoch)


def save_checkpoint(result: TrainResult, path: str | os.PathLike, meta: dict | None = None) -> None:
    model, opt = result.model, result.optimizer
    header = {f"model.{k}": v for k, v in model.config.to_dict().items()}
    header.update({f"train.{k}": v for k, v in result.train_config.to_dict().items()})
    header["state.epoch"] = result.epoch
    header["state.adam_t"] = opt.t
    header["state.rng"] = result.rng.bit_generator.state
    for k, v in (meta or {}).items():
        header[f"meta.{k}"] = v
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[f"param/{name}"] = p.values
    for name, mask in model.masks().items():
        arrays[f"mask/{name}"] = mask.astype(np.uint8)
    for name, bn in model.bn_states().items():
        arrays[f"bn/{name}.running_mean"] = bn.running_mean
        arrays[f"bn/{name}.running_var"] = bn.running_var
    for name in opt.params:
        arrays[f"adam.m/{name}"] = opt.m[name]
        arrays[f"adam.v/{name}"] = opt.v[name]
    write_container(path, header, arrays)


def _section(header: dict, prefix: str) -> dict:
    return {k[len(prefix) :]: v for k, v in header.items() if k.startswith(prefix)}


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    header, arrays = read_container(path)
    mcfg = ModelConfig.from_dict(_section(header, "model."))
    tcfg = TrainConfig.from_dict(_section(header, "train."))
    model = DSparsEModel(mcfg)
    params = model.parameters()
    missing = [n for n in params if f"param/{n}" not in arrays]
    if missing:
        raise IntegrityError(f"{path}: missing parameters {missing[:3]}...")
    for name, p in params.items():
        arr = arrays[f"param/{name}"]
        if arr.shape != p.shape:
            raise IntegrityError(f"{path}: parameter {name} has shape {arr.shape}, config implies {p.shape}")
        p.values = arr.astype(arr.dtype.newbyteorder("="))
    for name, layer in model.sparse_layers().items():
        layer.mask = arrays[f"mask/{name}"].astype(layer.weight.values.dtype)
    for name, bn in model.bn_states().items():
        bn.running_mean = arrays[f"bn/{name}.running_mean"]
        bn.running_var = arrays[f"bn/{name}.running_var"]
    opt = Adam(params, model.masks(), lr=tcfg.lr, weight_decay=tcfg.weight_decay)
    opt.t = header["state.adam_t"]
    for name in params:
        opt.m[name] = arrays[f"adam.m/{name}"]
        opt.v[name] = arrays[f"adam.v/{name}"]
    rng = np.random.default_rng()
    rng.bit_generator.state = header["state.rng"]
    return Checkpoint(model, tcfg, opt, rng, header["state.epoch"], _section(header, "meta."))
