"""Time-tag streams and the ``TTAG`` binary file format.

Layout (little-endian)::

    header  16 bytes   b"TTAG" | u16 version=1 | u16 reserved | u64 record count
    record  16 bytes   u64 timestamp_ps | u8 channel | 7 reserved zero bytes
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

import numpy as np

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct("<4sHHQ")
RECORD_DTYPE = np.dtype([("timestamp", "<u8"), ("channel", "u1"), ("reserved", "u1", (7,))])
RECORD_SIZE = RECORD_DTYPE.itemsize
assert HEADER.size == 16 and RECORD_SIZE == 16


class TagFormatError(ValueError):
    """Malformed or inconsistent time-tag data."""


@dataclass
class TimeTagStream:
    """Detector clicks ordered by timestamp (ps)."""

    timestamps: np.ndarray
    channels: np.ndarray
    header: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.uint64)
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        if self.timestamps.shape != self.channels.shape or self.timestamps.ndim != 1:
            raise ValueError("timestamps and channels must be 1-d arrays of equal length")
        if len(self.channels) and self.channels.max() > 1:
            raise TagFormatError(f"channel {int(self.channels.max())} outside {{0, 1}}")
        self.header.setdefault("format_version", VERSION)

    def __len__(self):
        return len(self.timestamps)

    def check_sorted(self, offset: int = 0):
        bad = np.flatnonzero(np.diff(self.timestamps.view(np.int64)) < 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise TagFormatError(f"timestamps decrease at record {offset + i}")

    def select(self, start_ps: int, stop_ps: int) -> "TimeTagStream":
        """Tags with ``start_ps <= t < stop_ps``."""
        lo, hi = np.searchsorted(self.timestamps, [start_ps, stop_ps], side="left")
        return TimeTagStream(self.timestamps[lo:hi], self.channels[lo:hi], dict(self.header))

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]

    @classmethod
    def merge(cls, *streams: "TimeTagStream", header: dict | None = None) -> "TimeTagStream":
        if not streams:
            return cls(np.empty(0, np.uint64), np.empty(0, np.uint8), header or {})
        t = np.concatenate([s.timestamps for s in streams])
        ch = np.concatenate([s.channels for s in streams])
        order = np.lexsort((ch, t))
        hdr = dict(streams[0].header) if header is None else header
        return cls(t[order], ch[order], hdr)


def _pack(stream: TimeTagStream) -> bytes:
    rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
    rec["timestamp"] = stream.timestamps
    rec["channel"] = stream.channels
    return rec.tobytes()


def write_tags(stream: TimeTagStream, sink) -> None:
    """Write ``stream`` to a path or binary file object."""
    stream.check_sorted()
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            write_tags(stream, fh)
        return
    sink.write(HEADER.pack(MAGIC, VERSION, 0, len(stream)))
    chunk = 1 << 20
    for i in range(0, len(stream), chunk):
        part = TimeTagStream(stream.timestamps[i:i + chunk], stream.channels[i:i + chunk])
        sink.write(_pack(part))


class TagWriter:
    """Incremental writer; the record count is patched on close (seekable sinks)."""

    def __init__(self, path):
        self._fh = open(path, "wb")
        self._fh.write(HEADER.pack(MAGIC, VERSION, 0, 0))
        self._count = 0
        self._last = 0

    def write(self, stream: TimeTagStream):
        stream.check_sorted(self._count)
        if len(stream) and int(stream.timestamps[0]) < self._last:
            raise TagFormatError(f"timestamps decrease at record {self._count}")
        self._fh.write(_pack(stream))
        self._count += len(stream)
        if len(stream):
            self._last = int(stream.timestamps[-1])

    def close(self):
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, 0, self._count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _read_header(fh: BinaryIO) -> int:
    raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise TagFormatError(f"truncated header: {len(raw)} of {HEADER.size} bytes")
    magic, version, _, count = HEADER.unpack(raw)
    if magic != MAGIC:
        raise TagFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TagFormatError(f"unsupported format version {version}")
    return count


def iter_tags(source, chunk_records: int = 1 << 20) -> Iterator[TimeTagStream]:
    """Yield the records of a tag file in chunks of bounded size.

    Monotonicity is checked across chunk boundaries; a short final record
    raises :class:`TagFormatError` naming its byte offset.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from iter_tags(fh, chunk_records)
        return
    count = _read_header(source)
    done = 0
    last = 0
    while done < count:
        want = min(chunk_records, count - done)
        raw = source.read(want * RECORD_SIZE)
        whole = len(raw) // RECORD_SIZE
        if whole < want:
            offset = HEADER.size + (done + whole) * RECORD_SIZE
            raise TagFormatError(
                f"truncated record {done + whole} at byte offset {offset} "
                f"(header declares {count} records)")
        rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
        chunk = TimeTagStream(rec["timestamp"].copy(), rec["channel"].copy())
        if len(chunk) and int(chunk.timestamps[0]) < last:
            raise TagFormatError(f"timestamps decrease at record {done}")
        chunk.check_sorted(done)
        last = int(chunk.timestamps[-1])
        done += whole
        yield chunk
    trailing = source.read(1)
    if trailing:
        raise TagFormatError(
            f"unexpected data at byte offset {HEADER.size + count * RECORD_SIZE} "
            f"after {count} declared records")


def read_tags(source) -> TimeTagStream:
    """Read a whole tag file (path, bytes or binary file object)."""
    chunks = list(iter_tags(source))
    if not chunks:
        return TimeTagStream(np.empty(0, np.uint64), np.empty(0, np.uint8))
    return TimeTagStream(np.concatenate([c.timestamps for c in chunks]),
                         np.concatenate([c.channels for c in chunks]))
