"""Binary checkpoint format.

All integers little-endian::

    b"PNETCKPT"                      magic, 8 bytes
    u32 version                      currently 1
    u32 len + utf-8 JSON             ModelConfig
    u32 len + utf-8 JSON             free-form metadata (dataset, size, seed, ...)
    tensor section                   parameters, canonical order
    tensor section                   batchnorm running statistics
    u8 has_adam
      [u64 t, f64 beta1, f64 beta2, f64 eps, tensor section m, tensor section v]
    u32 epoch                        completed epochs
    u32 len + utf-8 JSON             rng state

A tensor section is ``u32 count`` followed by ``count`` records of::

    u16 len + utf-8 name, u8 ndim, ndim * u32 dims, u64 numel, numel * f32
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pnet.arch.config import ModelConfig
from pnet.arch.model import PNet, build_plan
from pnet.core.optim import AdamState
from pnet.errors import CheckpointError, ConfigError

MAGIC = b"PNETCKPT"
VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam: AdamState | None = None
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: PNet, adam: AdamState | None = None, epoch: int = 0, rng_state=None, meta=None):
        return cls(
            model.config,
            {k: v.copy() for k, v in model.params.items()},
            {k: v.copy() for k, v in model.buffers.items()},
            adam,
            epoch,
            dict(rng_state or {}),
            dict(meta or {}),
        )

    def to_model(self) -> PNet:
        return PNet(
            self.config,
            {k: v.astype(np.float32, copy=True) for k, v in self.params.items()},
            {k: v.astype(np.float32, copy=True) for k, v in self.buffers.items()},
        )

    def require_resumable(self) -> AdamState:
        if self.adam is None:
            raise CheckpointError("checkpoint has no optimizer state; it can be evaluated but not resumed")
        return self.adam


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values):
        self.parts.append(struct.pack("<" + fmt, *values))

    def blob(self, data: bytes):
        self.pack("I", len(data))
        self.parts.append(data)

    def json(self, obj):
        self.blob(json.dumps(obj, sort_keys=True).encode("utf-8"))

    def tensors(self, named: dict[str, np.ndarray]):
        self.pack("I", len(named))
        for name, arr in named.items():
            raw = name.encode("utf-8")
            self.pack("H", len(raw))
            self.parts.append(raw)
            self.pack("B", arr.ndim)
            self.pack(f"{arr.ndim}I", *arr.shape)
            self.pack("Q", arr.size)
            self.parts.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("I")
        return self.take(n)

    def json(self):
        try:
            return json.loads(self.blob().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"malformed JSON block in checkpoint: {exc}") from exc

    def tensors(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("I")
        out = {}
        for _ in range(count):
            (name_len,) = self.unpack("H")
            name = self.take(name_len).decode("utf-8")
            (ndim,) = self.unpack("B")
            shape = self.unpack(f"{ndim}I")
            (numel,) = self.unpack("Q")
            if numel != int(np.prod(shape, dtype=np.int64)):
                raise CheckpointError(f"tensor {name}: element count {numel} does not match shape {shape}")
            arr = np.frombuffer(self.take(4 * numel), dtype=_F32).astype(np.float32).reshape(shape)
            out[name] = arr
        return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.parts.append(MAGIC)
    w.pack("I", VERSION)
    w.json(ckpt.config.to_dict())
    w.json(ckpt.meta)
    w.tensors(ckpt.params)
    w.tensors(ckpt.buffers)
    if ckpt.adam is None:
        w.pack("B", 0)
    else:
        a = ckpt.adam
        w.pack("B", 1)
        w.pack("Qddd", a.t, a.beta1, a.beta2, a.eps)
        w.tensors({k: a.m[k] for k in ckpt.params})
        w.tensors({k: a.v[k] for k in ckpt.params})
    w.pack("I", ckpt.epoch)
    w.json(ckpt.rng_state)
    return b"".join(w.parts)


def _check_names(kind: str, got: dict, expected: list[str]):
    if list(got) != expected:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        raise CheckpointError(
            f"{kind} names do not match the configuration (missing {missing[:3]}, unexpected {extra[:3]})"
        )


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a PNet checkpoint (bad magic)")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this build reads version {VERSION})")
    try:
        config = ModelConfig.from_dict(r.json())
    except (ConfigError, TypeError) as exc:
        raise CheckpointError(f"invalid model config in checkpoint: {exc}") from exc
    meta = r.json()
    units = build_plan(config)
    params = r.tensors()
    _check_names("parameter", params, [n for u in units for n in u.param_names()])
    buffers = r.tensors()
    _check_names("buffer", buffers, [n for u in units for n in u.buffer_names()])
    (has_adam,) = r.unpack("B")
    adam = None
    if has_adam:
        t, b1, b2, eps = r.unpack("Qddd")
        m = r.tensors()
        v = r.tensors()
        _check_names("adam first-moment", m, list(params))
        _check_names("adam second-moment", v, list(params))
        adam = AdamState(m, v, t, b1, b2, eps)
    (epoch,) = r.unpack("I")
    rng_state = r.json()
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(config, params, buffers, adam, epoch, rng_state, meta)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(data)
