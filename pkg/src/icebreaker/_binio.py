"""Little-endian binary read/write helpers used by the feature and model formats."""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError, IoError, NumericalError


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def raw(self, b: bytes) -> None:
        self._parts.append(b)

    def u8(self, x: int) -> None:
        self._parts.append(struct.pack("<B", x))

    def u16(self, x: int) -> None:
        self._parts.append(struct.pack("<H", x))

    def u32(self, x: int) -> None:
        self._parts.append(struct.pack("<I", x))

    def u64(self, x: int) -> None:
        self._parts.append(struct.pack("<Q", x))

    def f32(self, x: float) -> None:
        self._parts.append(struct.pack("<f", x))

    def f64(self, x: float) -> None:
        self._parts.append(struct.pack("<d", x))

    def text(self, s: str) -> None:
        b = s.encode("utf-8")
        self.u32(len(b))
        self._parts.append(b)

    def json(self, obj) -> None:
        self.text(json.dumps(obj, sort_keys=True, separators=(",", ":")))

    def f32_array(self, a: np.ndarray) -> None:
        a = np.asarray(a)
        with np.errstate(over="ignore"):
            b = np.ascontiguousarray(a, dtype="<f4")
        if not np.array_equal(np.isfinite(a), np.isfinite(b)):
            raise NumericalError("value outside the float32 range cannot be stored")
        self._parts.append(b.tobytes())

    def tensor(self, a: np.ndarray) -> None:
        """Shape header (u32 ndim, u32 per dim) followed by the f32 payload."""
        a = np.asarray(a)
        self.u32(a.ndim)
        for d in a.shape:
            self.u32(d)
        self.f32_array(a)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(data)
        self._pos = 0

    def _take(self, n: int) -> memoryview:
        if self._pos + n > len(self._data):
            raise FormatError(f"truncated input at byte {self._pos} (wanted {n} more)")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def raw(self, n: int) -> bytes:
        return bytes(self._take(n))

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return bytes(self._take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 text block: {exc}") from None

    def json(self):
        try:
            return json.loads(self.text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON block: {exc}") from None

    def f32_array(self, count: int) -> np.ndarray:
        buf = self._take(4 * count)
        return np.frombuffer(buf, dtype="<f4").astype(np.float32)

    def tensor(self) -> np.ndarray:
        ndim = self.u32()
        if ndim > 8:
            raise FormatError(f"implausible tensor rank {ndim}")
        shape = tuple(self.u32() for _ in range(ndim))
        return self.f32_array(int(np.prod(shape, dtype=np.int64))).reshape(shape)

    def expect_magic(self, magic: bytes) -> None:
        got = self.raw(len(magic)) if len(self._data) >= len(magic) else bytes(self._data)
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise FormatError(f"{len(self._data) - self._pos} trailing bytes")


def read_file(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise IoError(f"no such file: {path}") from None
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None


def write_file(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
