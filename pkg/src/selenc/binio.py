"""Little-endian binary helpers shared by all file formats."""

import struct

import numpy as np

from .errors import FormatError


class Writer:
    def __init__(self):
        self._parts = []

    def raw(self, b):
        self._parts.append(bytes(b))

    def u8(self, v):
        self._parts.append(struct.pack("<B", v))

    def u16(self, v):
        self._parts.append(struct.pack("<H", v))

    def u32(self, v):
        self._parts.append(struct.pack("<I", v))

    def f64(self, v):
        self._parts.append(struct.pack("<d", v))

    def f64s(self, arr):
        self._parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def u32s(self, arr):
        self._parts.append(np.ascontiguousarray(arr, dtype="<u4").tobytes())

    def getvalue(self):
        return b"".join(self._parts)


class Reader:
    """Sequential reader; every failure reports the byte offset it happened at."""

    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0
        self.tier = None

    def _take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.pos, tier=self.tier)
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def magic(self, expected):
        got = self._take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", offset=0)

    def version(self, supported):
        at = self.pos
        v = self.u8("version")
        if v != supported:
            raise FormatError(f"unsupported version {v} (this build reads version {supported})", offset=at)
        return v

    def raw(self, n, what="bytes"):
        return self._take(n, what)

    def u8(self, what="u8"):
        return self._take(1, what)[0]

    def u16(self, what="u16"):
        return struct.unpack("<H", self._take(2, what))[0]

    def u32(self, what="u32"):
        return struct.unpack("<I", self._take(4, what))[0]

    def f64(self, what="f64"):
        return struct.unpack("<d", self._take(8, what))[0]

    def f64s(self, n, what="f64 array"):
        return np.frombuffer(self._take(8 * n, what), dtype="<f8").astype(np.float64)

    def u32s(self, n, what="u32 array"):
        return np.frombuffer(self._take(4 * n, what), dtype="<u4").astype(np.int64)

    def end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", offset=self.pos)
