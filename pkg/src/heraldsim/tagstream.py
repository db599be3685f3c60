"""
Binary time-tag stream format.

Layout (little-endian): a 24-byte header ``b"PTAG"``, version u16 = 1,
reserved u16 = 0, record_count u64, rep_period_ps u64; then 16-byte records
of timestamp_ps u64, channel u16, flags u16, pulse_index u32.

Streams are handled as sequences of numpy structured-array chunks so that
files far larger than memory can be written and analysed in one pass.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import BadMagic, IoFailure, TruncatedRecord, VersionUnsupported

MAGIC = b"PTAG"
VERSION = 1
HEADER = struct.Struct("<4sHHQQ")
HEADER_SIZE = HEADER.size  # 24
RECORD_DTYPE = np.dtype(
    [("timestamp", "<u8"), ("channel", "<u2"), ("flags", "<u2"), ("pulse_index", "<u4")]
)
RECORD_SIZE = RECORD_DTYPE.itemsize  # 16
DEFAULT_CHUNK = 1 << 20

CH_HERALD, CH_OUT1, CH_OUT2, CH_LASER = 0, 1, 2, 3
FLAG_DARK = 1


@dataclass(frozen=True)
class TimeTag:
    timestamp_ps: int
    channel: int
    flags: int = 0
    pulse_index: int = 0

    @property
    def is_dark(self) -> bool:
        return bool(self.flags & FLAG_DARK)


def tags_to_array(tags: Iterable[TimeTag]) -> np.ndarray:
    tags = list(tags)
    out = np.empty(len(tags), dtype=RECORD_DTYPE)
    for i, t in enumerate(tags):
        out[i] = (t.timestamp_ps, t.channel, t.flags, t.pulse_index)
    return out


def array_to_tags(records: np.ndarray) -> list[TimeTag]:
    return [
        TimeTag(int(r["timestamp"]), int(r["channel"]), int(r["flags"]), int(r["pulse_index"]))
        for r in records
    ]


class TagStream:
    """A re-iterable sequence of record chunks plus the laser repetition period.

    ``chunks()`` starts a fresh pass each time it is called, so the same
    stream can be analysed several times without holding it in memory.
    """

    def __init__(
        self,
        chunk_source: Callable[[], Iterator[np.ndarray]],
        rep_period_ps: int = 0,
        record_count: int | None = None,
    ):
        self._source = chunk_source
        self.rep_period_ps = int(rep_period_ps)
        self.record_count = record_count

    @classmethod
    def from_array(cls, records, rep_period_ps: int = 0, chunk_size: int = DEFAULT_CHUNK) -> "TagStream":
        if not isinstance(records, np.ndarray):
            records = tags_to_array(records)
        records = np.ascontiguousarray(records, dtype=RECORD_DTYPE)

        def source():
            for start in range(0, len(records), chunk_size):
                yield records[start:start + chunk_size]

        return cls(source, rep_period_ps, len(records))

    def chunks(self) -> Iterator[np.ndarray]:
        return iter(self._source())

    def __iter__(self) -> Iterator[TimeTag]:
        for chunk in self.chunks():
            yield from array_to_tags(chunk)

    def to_array(self) -> np.ndarray:
        parts = list(self.chunks())
        if not parts:
            return np.empty(0, dtype=RECORD_DTYPE)
        return np.concatenate(parts)

    def __len__(self) -> int:
        if self.record_count is None:
            self.record_count = sum(len(c) for c in self.chunks())
        return self.record_count


def _as_chunks(stream) -> tuple[Iterable[np.ndarray], int]:
    if isinstance(stream, TagStream):
        return stream.chunks(), stream.rep_period_ps
    if isinstance(stream, np.ndarray):
        return [stream], 0
    stream = list(stream)
    if stream and isinstance(stream[0], TimeTag):
        return [tags_to_array(stream)], 0
    return stream, 0


def write_tagstream(path, stream, rep_period_ps: int | None = None) -> int:
    """Write a stream (TagStream, record array, chunk iterable, or TimeTags) to ``path``.

    The header's record count is patched in after the last chunk, so the
    writer never needs the whole stream in memory. Returns the record count.
    """
    chunks, period = _as_chunks(stream)
    if rep_period_ps is not None:
        period = int(rep_period_ps)
    count = 0
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, VERSION, 0, 0, period))
            for chunk in chunks:
                chunk = np.ascontiguousarray(chunk, dtype=RECORD_DTYPE)
                fh.write(chunk.tobytes())
                count += len(chunk)
            fh.seek(0)
            fh.write(HEADER.pack(MAGIC, VERSION, 0, count, period))
    except OSError as exc:
        raise IoFailure(f"cannot write tag stream {path}: {exc}") from exc
    return count


def read_header(path) -> tuple[int, int]:
    """Validate the header and size of a stream file; return (record_count, rep_period_ps)."""
    try:
        size = os.path.getsize(path)
        with open(path, "rb") as fh:
            head = fh.read(HEADER_SIZE)
    except OSError as exc:
        raise IoFailure(f"cannot read tag stream {path}: {exc}") from exc
    if head[:4] != MAGIC:
        raise BadMagic(f"{path}: not a tag stream (magic {head[:4]!r})")
    if len(head) < HEADER_SIZE:
        raise TruncatedRecord(len(head), f"{path}: header truncated at byte {len(head)}")
    _, version, _, count, period = HEADER.unpack(head)
    if version != VERSION:
        raise VersionUnsupported(f"{path}: format version {version} (supported: {VERSION})")
    available = (size - HEADER_SIZE) // RECORD_SIZE
    if available < count:
        offset = HEADER_SIZE + available * RECORD_SIZE
        raise TruncatedRecord(offset, f"{path}: truncated record at byte offset {offset}")
    return count, period


def read_tagstream(path, chunk_records: int = DEFAULT_CHUNK) -> TagStream:
    """Open a stream file for chunked, bounded-memory reading."""
    count, period = read_header(path)

    def source():
        with open(path, "rb") as fh:
            fh.seek(HEADER_SIZE)
            remaining = count
            while remaining > 0:
                n = min(chunk_records, remaining)
                buf = fh.read(n * RECORD_SIZE)
                if len(buf) < n * RECORD_SIZE:
                    offset = fh.tell() - len(buf) + (len(buf) // RECORD_SIZE) * RECORD_SIZE
                    raise TruncatedRecord(offset)
                remaining -= n
                yield np.frombuffer(buf, dtype=RECORD_DTYPE)

    return TagStream(source, period, count)


def read_tags(path) -> Iterator[TimeTag]:
    """Iterate TimeTag objects from a file (convenient, not fast)."""
    yield from read_tagstream(path)
