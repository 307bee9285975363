"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"SVEHDR01"  u32 version  u32 len  config text (key=value lines)
    u32 n_entries, then per entry:
        u32 name_len  name (UTF-8)  u8 dtype  u8 rank  u64 extents[rank]  payload

Entries are written in insertion order and carry no timestamps, so equal
state always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Adam, Tensor
from .errors import ConfigError, FormatError
from .imageio import format_kv
from .network import ModelConfig, ModelWeights

MAGIC = b"SVEHDR01"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2, np.dtype(np.uint8): 3}


@dataclass
class Checkpoint:
    config: dict[str, str]
    entries: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_kv(self.config)

    @property
    def iteration(self) -> int:
        return int(self.config.get("iteration", "0"))

    def weights(self) -> ModelWeights:
        cfg = self.model_config
        params = OrderedDict((k, Tensor(v.copy(), requires_grad=True)) for k, v in self.entries.items()
                             if not k.startswith(("opt.", "rng.")))
        return ModelWeights(cfg, params)

    def optimizer(self, weights: ModelWeights, **kw) -> Adam | None:
        if "opt.step" not in self.entries:
            return None
        m = {k: self.entries[f"opt.m.{k}"].copy() for k in weights.params}
        v = {k: self.entries[f"opt.v.{k}"].copy() for k in weights.params}
        return Adam(dict(weights.params), step_count=int(self.entries["opt.step"][()]), m=m, v=v, **kw)

    def rng_state(self) -> dict | None:
        if "rng.state" not in self.entries:
            return None
        return json.loads(self.entries["rng.state"].tobytes().decode("utf-8"))


def make_checkpoint(weights: ModelWeights, optimizer: Adam | None = None, rng: np.random.Generator | None = None,
                    iteration: int = 0, extra: dict[str, str] | None = None) -> Checkpoint:
    config = dict(weights.config.to_kv())
    config["iteration"] = str(iteration)
    config.update(extra or {})
    entries = OrderedDict((k, np.array(v, copy=True)) for k, v in weights.state().items())
    if optimizer is not None:
        for k in weights.params:
            entries[f"opt.m.{k}"] = optimizer.m[k].copy()
        for k in weights.params:
            entries[f"opt.v.{k}"] = optimizer.v[k].copy()
        entries["opt.step"] = np.array(optimizer.step_count, dtype=np.int64)
    if rng is not None:
        state = json.dumps(rng.bit_generator.state, sort_keys=True).encode("utf-8")
        entries["rng.state"] = np.frombuffer(state, dtype=np.uint8).copy()
    return Checkpoint(config, entries)


def dumps(ckpt: Checkpoint) -> bytes:
    text = format_kv(ckpt.config).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(text)), text, struct.pack("<I", len(ckpt.entries))]
    for name, arr in ckpt.entries.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise FormatError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def loads(data: bytes, expected: ModelConfig | None = None) -> Checkpoint:
    if data[:8] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    try:
        version, n = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 16
        text = data[pos : pos + n].decode("utf-8")
        pos += n
        config = {}
        for line in text.splitlines():
            k, _, v = line.partition("=")
            config[k] = v
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        entries = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(data):
                raise FormatError(f"entry {name!r} truncated")
            entries[name] = np.frombuffer(data, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint entries")
    ckpt = Checkpoint(config, entries)
    if expected is not None and ckpt.model_config != expected:
        raise ConfigError(f"checkpoint model config {ckpt.model_config} does not match {expected}")
    return ckpt


def save(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load(path, expected: ModelConfig | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found")
    return loads(path.read_bytes(), expected)
