"""Time-tag streams: the TTG1 binary format, CSV interchange and merging.

TTG1 layout, all little-endian::

    b"TTG1" | u16 version (=1) | u64 resolution_ps | u64 count | count * u64 word

Each word holds the channel in its top 4 bits and the tick count in the low
60 bits. The header is 22 bytes.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

MAGIC = b"TTG1"
VERSION = 1
HEADER = struct.Struct("<4sHQQ")
HEADER_SIZE = HEADER.size  # 22
TICK_BITS = 60
TICK_MASK = (1 << TICK_BITS) - 1
MAX_CHANNEL = 15
CSV_HEADER = ("channel", "time_ps")


class TimeTagFormatError(ValueError):
    """Malformed file: bad magic, version, length or row."""


class TimeTagValidationError(ValueError):
    """Stream violates its invariants (order, channel range, tick range)."""


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Ordered ``(channel, ticks)`` records at ``resolution_ps`` per tick."""

    resolution_ps: int
    channels: np.ndarray
    ticks: np.ndarray

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.uint8)
        tk = np.ascontiguousarray(self.ticks, dtype=np.uint64)
        if ch.shape != tk.shape or ch.ndim != 1:
            raise TimeTagValidationError("channels and ticks must be equal-length 1-D arrays")
        if int(self.resolution_ps) <= 0:
            raise TimeTagValidationError("resolution_ps must be a positive integer")
        object.__setattr__(self, "resolution_ps", int(self.resolution_ps))
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "ticks", tk)

    def __len__(self) -> int:
        return int(self.ticks.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return (self.resolution_ps == other.resolution_ps
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.ticks, other.ticks))

    @classmethod
    def empty(cls, resolution_ps: int = 4) -> "TimeTagStream":
        return cls(resolution_ps, np.zeros(0, np.uint8), np.zeros(0, np.uint64))

    @classmethod
    def from_times(cls, channels, times_s, resolution_ps: int = 4) -> "TimeTagStream":
        """Build a sorted stream from float times in seconds (floored to ticks)."""
        t = np.asarray(times_s, dtype=float)
        ticks = np.floor(t / (resolution_ps * 1e-12)).astype(np.uint64)
        ch = np.asarray(channels, dtype=np.uint8)
        order = np.argsort(ticks, kind="stable")
        return cls(resolution_ps, ch[order], ticks[order])

    @property
    def times(self) -> np.ndarray:
        """Timestamps in seconds."""
        return self.ticks.astype(np.float64) * (self.resolution_ps * 1e-12)

    @property
    def duration(self) -> float:
        """Span from zero to the last tag in seconds."""
        return float(self.ticks[-1]) * self.resolution_ps * 1e-12 if len(self) else 0.0

    def channel_ticks(self, channel: int) -> np.ndarray:
        return self.ticks[self.channels == channel]

    def count(self, channel: int) -> int:
        return int(np.count_nonzero(self.channels == channel))

    def first_disorder(self) -> int | None:
        """Index of the first record whose ticks decrease, or None."""
        if len(self) < 2:
            return None
        bad = np.nonzero(self.ticks[1:] < self.ticks[:-1])[0]
        return int(bad[0]) + 1 if bad.size else None

    def validate(self, strict: bool = True) -> "TimeTagStream":
        """Check channel/tick ranges and ordering.

        In lenient mode disorder only warns and the records are stably sorted.
        """
        if self.channels.size and int(self.channels.max()) > MAX_CHANNEL:
            raise TimeTagValidationError("channel exceeds 15")
        if self.ticks.size and int(self.ticks.max()) > TICK_MASK:
            raise TimeTagValidationError("ticks exceed 60 bits")
        i = self.first_disorder()
        if i is None:
            return self
        msg = f"ticks decrease at record {i} ({int(self.ticks[i - 1])} -> {int(self.ticks[i])})"
        if strict:
            raise TimeTagValidationError(msg)
        warnings.warn(msg + "; records sorted", stacklevel=2)
        order = np.argsort(self.ticks, kind="stable")
        return TimeTagStream(self.resolution_ps, self.channels[order], self.ticks[order])


def encode_words(stream: TimeTagStream) -> np.ndarray:
    return (stream.channels.astype(np.uint64) << np.uint64(TICK_BITS)) | stream.ticks


def decode_words(words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    words = np.asarray(words, dtype=np.uint64)
    ch = (words >> np.uint64(TICK_BITS)).astype(np.uint8)
    return ch, words & np.uint64(TICK_MASK)


def to_bytes(stream: TimeTagStream, strict: bool = True) -> bytes:
    stream = stream.validate(strict)
    head = HEADER.pack(MAGIC, VERSION, stream.resolution_ps, len(stream))
    return head + encode_words(stream).astype("<u8").tobytes()


def from_bytes(data: bytes, strict: bool = True) -> TimeTagStream:
    if len(data) < HEADER_SIZE:
        raise TimeTagFormatError(f"file shorter than the {HEADER_SIZE}-byte header")
    magic, version, res, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TimeTagFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TimeTagFormatError(f"unsupported version {version}")
    payload = len(data) - HEADER_SIZE
    if payload != 8 * count:
        raise TimeTagFormatError(
            f"declared {count} records but payload holds {payload / 8:g}")
    words = np.frombuffer(data, dtype="<u8", offset=HEADER_SIZE, count=count)
    ch, ticks = decode_words(words)
    if res == 0:
        raise TimeTagFormatError("resolution_ps is zero")
    return TimeTagStream(res, ch, ticks).validate(strict)


def write_ttag(stream: TimeTagStream, destination, strict: bool = True) -> None:
    """Write a TTG1 file to a path or binary file object."""
    data = to_bytes(stream, strict)
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as fh:
            fh.write(data)
    else:
        destination.write(data)


def read_ttag(source, strict: bool = True) -> TimeTagStream:
    """Read a TTG1 file from a path or binary file object."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
    return from_bytes(data, strict)


def _open_text(source, mode):
    if isinstance(source, (str, os.PathLike)):
        return open(source, mode, newline=""), True
    return source, False


def read_csv(source, resolution_ps: int = 1, strict: bool = True) -> TimeTagStream:
    """Parse ``channel,time_ps`` rows; times must be multiples of the resolution."""
    fh, owned = _open_text(source, "r")
    try:
        rows = csv.reader(fh)
        try:
            head = next(rows)
        except StopIteration:
            raise TimeTagFormatError("line 1: missing header 'channel,time_ps'") from None
        if tuple(h.strip() for h in head) != CSV_HEADER:
            raise TimeTagFormatError(f"line 1: expected header 'channel,time_ps', got {head!r}")
        ch, tk = [], []
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TimeTagFormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
            try:
                c, t = int(row[0]), int(row[1])
            except ValueError:
                raise TimeTagFormatError(f"line {lineno}: non-integer field in {row!r}") from None
            if not 0 <= c <= MAX_CHANNEL:
                raise TimeTagFormatError(f"line {lineno}: channel {c} outside 0..15")
            if t < 0 or t % resolution_ps:
                raise TimeTagFormatError(
                    f"line {lineno}: time {t} ps is not a non-negative multiple of {resolution_ps} ps")
            if t // resolution_ps > TICK_MASK:
                raise TimeTagFormatError(f"line {lineno}: time exceeds 60-bit tick range")
            ch.append(c)
            tk.append(t // resolution_ps)
    finally:
        if owned:
            fh.close()
    stream = TimeTagStream(resolution_ps, np.array(ch, np.uint8), np.array(tk, np.uint64))
    i = stream.first_disorder()
    if i is not None and strict:
        # data rows start on line 2
        raise TimeTagValidationError(
            f"line {i + 2}: time {int(stream.ticks[i]) * resolution_ps} ps precedes previous row")
    return stream.validate(strict=False) if i is not None else stream


def write_csv(stream: TimeTagStream, destination) -> None:
    fh, owned = _open_text(destination, "w")
    try:
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        t = stream.ticks * np.uint64(stream.resolution_ps)
        for c, v in zip(stream.channels.tolist(), t.tolist()):
            buf.write(f"{c},{v}\n")
        fh.write(buf.getvalue())
    finally:
        if owned:
            fh.close()


def merge_streams(a: TimeTagStream, b: TimeTagStream) -> TimeTagStream:
    """Timestamp-ordered merge; ties keep records of ``a`` before ``b``."""
    if a.resolution_ps != b.resolution_ps:
        raise ValueError(f"resolution mismatch: {a.resolution_ps} ps vs {b.resolution_ps} ps")
    ticks = np.concatenate([a.ticks, b.ticks])
    ch = np.concatenate([a.channels, b.channels])
    order = np.argsort(ticks, kind="stable")
    return TimeTagStream(a.resolution_ps, ch[order], ticks[order])
