"""Named trainable tensors and their on-disk archive.

Archive layout (all integers little-endian)::

    magic   8 bytes  b"CVECPRM\\0"
    version u32
    count   u32
    count x entry:
        name_len u32, name utf-8, ndim u32, shape ndim x u64, values <f8 row-major
    crc32   u32 over everything before it

Entries are written in sorted name order so the bytes depend only on content.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Iterator

import numpy as np

from .numerics import Tensor

MAGIC = b"CVECPRM\0"
FORMAT_VERSION = 1


class ParamFormatError(ValueError):
    """Raised when a parameter archive is truncated, corrupted or of an unknown version."""


class ParamStore:
    """Ordered mapping from parameter name to a ``requires_grad`` tensor."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def get_or_create(self, name: str, init) -> Tensor:
        """Return ``name``, creating it from ``init()`` on first use."""
        if name not in self._params:
            return self.add(name, init())
        return self._params[name]

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_values(self, prefix: str = "") -> int:
        return int(sum(t.data.size for n, t in self._params.items() if n.startswith(prefix)))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def update(self, other: "ParamStore") -> None:
        for name, t in other.items():
            if name in self._params:
                raise KeyError(f"parameter {name!r} already exists")
            self._params[name] = t

    # serialization

    def to_bytes(self) -> bytes:
        chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(self._params))]
        for name in sorted(self._params):
            data = self._params[name].data
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<I", data.ndim))
            chunks.append(struct.pack(f"<{data.ndim}Q", *data.shape))
            chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
        body = b"".join(chunks)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        if len(blob) < len(MAGIC) + 12 or blob[: len(MAGIC)] != MAGIC:
            raise ParamFormatError("not a parameter archive (bad magic)")
        body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise ParamFormatError("parameter archive checksum mismatch")
        pos = len(MAGIC)
        version, count = struct.unpack_from("<II", body, pos)
        pos += 8
        if version != FORMAT_VERSION:
            raise ParamFormatError(f"unsupported archive version {version}")
        store = cls()
        try:
            for _ in range(count):
                (n,) = struct.unpack_from("<I", body, pos)
                pos += 4
                name = body[pos : pos + n].decode("utf-8")
                pos += n
                (ndim,) = struct.unpack_from("<I", body, pos)
                pos += 4
                shape = struct.unpack_from(f"<{ndim}Q", body, pos)
                pos += 8 * ndim
                size = int(np.prod(shape, dtype=np.int64))
                values = np.frombuffer(body, dtype="<f8", count=size, offset=pos)
                pos += 8 * size
                store.add(name, values.reshape(shape).astype(np.float64))
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise ParamFormatError(f"truncated parameter archive: {exc}") from exc
        if pos != len(body):
            raise ParamFormatError("trailing bytes in parameter archive")
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())
