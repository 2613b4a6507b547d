"""Event records and the `.evb` stream container.

Layout (little-endian):
  header  16 bytes  magic "EVB1", width uint32, height uint32, count uint32
  record  13 bytes  t uint64 (µs), x uint16, y uint16, p int8 (-1 or +1)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"EVB1"
HEADER = struct.Struct("<4sIII")
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class EventFormatError(ValueError):
    """Malformed `.evb` content; `offset` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class StreamOrderError(ValueError):
    """Timestamps decrease within a stream or an insertion goes back in time."""


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Sensor geometry must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """An ordered, immutable sequence of events on one sensor."""

    geometry: SensorGeometry
    events: np.ndarray

    def __post_init__(self) -> None:
        events = np.ascontiguousarray(self.events, dtype=EVENT_DTYPE)
        events.setflags(write=False)
        object.__setattr__(self, "events", events)

    @classmethod
    def from_events(cls, geometry: SensorGeometry, events: list[Event]) -> EventStream:
        arr = np.zeros(len(events), dtype=EVENT_DTYPE)
        for i, ev in enumerate(events):
            arr[i] = (ev.t, ev.x, ev.y, ev.p)
        return cls(geometry, arr)

    @classmethod
    def from_arrays(
        cls, geometry: SensorGeometry, x: np.ndarray, y: np.ndarray, t: np.ndarray, p: np.ndarray
    ) -> EventStream:
        arr = np.zeros(len(t), dtype=EVENT_DTYPE)
        arr["x"], arr["y"], arr["t"], arr["p"] = x, y, t, p
        return cls(geometry, arr)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, index: int) -> Event:
        rec = self.events[index]
        return Event(x=int(rec["x"]), y=int(rec["y"]), t=int(rec["t"]), p=int(rec["p"]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.events)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.events, other.events)

    def slice(self, start: int, stop: int | None = None) -> EventStream:
        return EventStream(self.geometry, self.events[start:stop])

    def head(self, n: int) -> EventStream:
        return self.slice(0, n)

    def validate(self) -> None:
        """Raise if the stream breaks ordering, range or polarity rules.

        Offsets in the raised EventFormatError are those the record would have in a file.
        """
        ev = self.events
        if not len(ev):
            return
        bad_x = np.flatnonzero(ev["x"] >= self.geometry.width)
        bad_y = np.flatnonzero(ev["y"] >= self.geometry.height)
        bad_p = np.flatnonzero((ev["p"] != 1) & (ev["p"] != -1))
        back = np.flatnonzero(np.diff(ev["t"].astype(np.int64)) < 0) + 1
        problems = []
        if bad_x.size:
            problems.append((int(bad_x[0]), "x coordinate out of range"))
        if bad_y.size:
            problems.append((int(bad_y[0]), "y coordinate out of range"))
        if bad_p.size:
            problems.append((int(bad_p[0]), "polarity must be -1 or +1"))
        if back.size:
            problems.append((int(back[0]), "decreasing timestamp"))
        if problems:
            index, message = min(problems)
            raise EventFormatError(
                f"{message} at event {index}", HEADER.size + index * EVENT_DTYPE.itemsize
            )


def read_stream(path: Path) -> EventStream:
    """Read a `.evb` file, validating the header and every record."""
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise EventFormatError("Truncated header", len(data))
    magic, width, height, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise EventFormatError(f"Bad magic {magic!r}", 0)
    if width == 0 or height == 0:
        raise EventFormatError("Zero sensor dimension", 4)
    expected = HEADER.size + count * EVENT_DTYPE.itemsize
    if len(data) != expected:
        raise EventFormatError(
            f"Header declares {count} events but payload holds {len(data) - HEADER.size} bytes",
            min(len(data), expected),
        )
    events = np.frombuffer(data, dtype=EVENT_DTYPE, count=count, offset=HEADER.size)
    stream = EventStream(SensorGeometry(width, height), events.copy())
    stream.validate()
    return stream


def write_stream(stream: EventStream, path: Path) -> None:
    """Write a stream; invalid streams are rejected before the file is touched."""
    stream.validate()
    geo = stream.geometry
    payload = HEADER.pack(MAGIC, geo.width, geo.height, len(stream)) + stream.events.tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
