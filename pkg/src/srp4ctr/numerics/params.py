"""Named parameter collections and the binary checkpoint format.

Checkpoint layout (all integers little-endian u32)::

    b"SRPC"  version  count
    count x [ name_len  name(utf-8)  rank  extent_0 .. extent_{rank-1}  float32 data ]

Float data is raw little-endian IEEE-754 single precision in row-major order.
"""

from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor

MAGIC = b"SRPC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to two standard deviations by redrawing."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


class ParameterStore:
    """Ordered name -> Tensor mapping.

    Several names may point to the same Tensor object; that is how parameter
    sharing is expressed.
    """

    def __init__(self, dtype=np.float32) -> None:
        self._tensors: dict[str, Tensor] = {}
        self.dtype = np.dtype(dtype)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def alias(self, name: str, tensor: Tensor) -> Tensor:
        """Register an existing tensor under another name (shared storage)."""
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        self._tensors[name] = tensor
        return tensor

    def unique(self) -> list[tuple[str, Tensor]]:
        """First name of every distinct tensor, in insertion order."""
        seen: set[int] = set()
        out = []
        for name, t in self._tensors.items():
            if id(t) not in seen:
                seen.add(id(t))
                out.append((name, t))
        return out

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def digest(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for name, t in self._tensors.items():
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.unique()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, t in self.unique():
            if name not in state:
                if strict:
                    raise CheckpointError(f"checkpoint has no tensor {name!r}")
                continue
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise CheckpointError(f"shape mismatch for {name!r}: checkpoint {arr.shape}, model {t.shape}")
            t.data = arr.astype(t.dtype).copy()


def write_checkpoint(tensors: Mapping[str, np.ndarray], path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an SRPC checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return out
