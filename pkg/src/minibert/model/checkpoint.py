"""Self-describing checkpoint container.

Layout (all integers little-endian)::

    b"MBCK" | version:u8 | header_len:u32 | header JSON (UTF-8)
    | tensor_count:u32 | tensor records

    record = name_len:u16 | name (UTF-8) | ndim:u8 | dims:u32*ndim | float32 data

The header holds the step, model config, RNG state, optimizer scalars and
free-form metadata. Parameters are stored as ``param/<name>``; Adam moments
as ``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from .config import ModelConfig
from .network import Parameters

MAGIC = b"MBCK"
VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    step: int
    config: ModelConfig
    params: Parameters
    optimizer_state: dict | None = None  # {"t": int, "m": {name: array}, "v": {name: array}}
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        tensors: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in self.params.items()]
        opt_meta = None
        if self.optimizer_state is not None:
            opt_meta = {k: v for k, v in self.optimizer_state.items() if k not in ("m", "v")}
            for moment in ("m", "v"):
                tensors += [(f"adam.{moment}/{k}", v) for k, v in self.optimizer_state[moment].items()]
        header = {
            "step": self.step,
            "config": self.config.to_dict(),
            "rng_state": self.rng_state,
            "optimizer": opt_meta,
            "extra": self.extra,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<BI", VERSION, len(header_bytes)))
        buf.write(header_bytes)
        buf.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=_F32).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        if bytes(view[:4]) != MAGIC:
            raise DataError("not a checkpoint file (bad magic)")
        version, header_len = struct.unpack_from("<BI", view, 4)
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        off = 9
        header = json.loads(bytes(view[off : off + header_len]).decode("utf-8"))
        off += header_len
        (count,) = struct.unpack_from("<I", view, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, off)
            off += 2
            name = bytes(view[off : off + name_len]).decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", view, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", view, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(view, dtype=_F32, count=size, offset=off).reshape(shape)
            off += 4 * size
            tensors[name] = arr.astype(np.float32)
        if off != len(data):
            raise DataError(f"trailing bytes in checkpoint ({len(data) - off})")

        params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
        opt = None
        if header["optimizer"] is not None:
            opt = dict(header["optimizer"])
            for moment in ("m", "v"):
                prefix = f"adam.{moment}/"
                opt[moment] = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        return cls(
            step=int(header["step"]),
            config=ModelConfig.from_dict(header["config"]),
            params=params,
            optimizer_state=opt,
            rng_state=header["rng_state"],
            extra=header["extra"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def copy(self) -> "Checkpoint":
        opt = None
        if self.optimizer_state is not None:
            opt = dict(self.optimizer_state)
            opt["m"] = {k: v.copy() for k, v in self.optimizer_state["m"].items()}
            opt["v"] = {k: v.copy() for k, v in self.optimizer_state["v"].items()}
        return Checkpoint(
            self.step,
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            opt,
            json.loads(json.dumps(self.rng_state)),
            json.loads(json.dumps(self.extra)),
        )
