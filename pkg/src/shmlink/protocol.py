"""Bit-exact telemetry framing for the emulated low-energy radio link.

Frame layout, little-endian throughout:

    offset  size  field
    0       4     magic, ASCII "SHM1"
    4       1     version, 0x01
    5       2     node_id, u16
    7       4     counter, u32
    11      1     channel_count, u8 (1..8)
    12      8*n   resistances, f64 each
    12+8n   4     CRC-32 (IEEE reflected, init/xorout 0xFFFFFFFF) over all
                  preceding bytes

In live mode frames travel over TCP, one frame per length-prefixed message
(u32 LE length); in simulation they cross in-process queues.  The decoder is
total: any byte sequence yields a frame or a :class:`FrameError`, never a
crash.

Example:
    >>> from shmlink.protocol import TelemetryFrame, encode, decode
    >>> frame = TelemetryFrame(counter=0, node_id=0, resistances=(0.0,))
    >>> encode(frame).hex(" ")
    '53 48 4d 31 01 00 00 00 00 00 00 01 00 00 00 00 00 00 00 00 44 76 8a 7f'
    >>> decode(encode(frame)) == frame
    True
"""

from __future__ import annotations

import math
import random
import socket
import struct
import zlib
from dataclasses import dataclass, field

MAGIC = b"SHM1"
VERSION = 1
MAX_CHANNELS = 8
_HEADER = struct.Struct("<4sBHIB")  # magic, version, node_id, counter, channel_count
_CRC = struct.Struct("<I")


class FrameError(Exception):
    """Base class for encode/decode failures."""


class InvalidFrame(FrameError):
    """Frame invariants violated (channel count, non-finite or negative R)."""


class BadMagic(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


class Truncated(FrameError):
    pass


class CrcMismatch(FrameError):
    pass


@dataclass(frozen=True)
class TelemetryFrame:
    """One telemetry message: node counter plus per-channel resistances (ohm)."""

    counter: int
    resistances: tuple[float, ...]
    node_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resistances", tuple(float(r) for r in self.resistances))

    @property
    def channel_count(self) -> int:
        return len(self.resistances)


def _validate(frame: TelemetryFrame) -> None:
    if not 1 <= frame.channel_count <= MAX_CHANNELS:
        raise InvalidFrame(f"channel_count {frame.channel_count} outside 1..{MAX_CHANNELS}")
    if not 0 <= frame.counter <= 0xFFFFFFFF:
        raise InvalidFrame(f"counter {frame.counter} does not fit u32")
    if not 0 <= frame.node_id <= 0xFFFF:
        raise InvalidFrame(f"node_id {frame.node_id} does not fit u16")
    for r in frame.resistances:
        if not math.isfinite(r) or r < 0:
            raise InvalidFrame(f"resistance {r!r} not finite and >= 0")


def encode(frame: TelemetryFrame) -> bytes:
    """Serialize a frame; raises InvalidFrame if its invariants do not hold."""
    _validate(frame)
    body = _HEADER.pack(MAGIC, VERSION, frame.node_id, frame.counter, frame.channel_count)
    body += struct.pack(f"<{frame.channel_count}d", *frame.resistances)
    return body + _CRC.pack(zlib.crc32(body))


def decode(data: bytes) -> TelemetryFrame:
    """Parse one frame from ``data``; total over arbitrary byte sequences.

    Checks run magic -> version -> structure -> CRC -> value invariants, so a
    corrupted payload always surfaces as CrcMismatch rather than a value error.
    """
    if len(data) < 4:
        raise Truncated(f"{len(data)} bytes, need at least 4 for magic")
    if data[:4] != MAGIC:
        raise BadMagic(data[:4].hex())
    if len(data) < 5:
        raise Truncated("missing version byte")
    if data[4] != VERSION:
        raise UnsupportedVersion(f"version {data[4]}")
    if len(data) < _HEADER.size:
        raise Truncated(f"{len(data)} bytes, header needs {_HEADER.size}")
    _, _, node_id, counter, channel_count = _HEADER.unpack_from(data)
    total = _HEADER.size + 8 * channel_count + _CRC.size
    if len(data) < total:
        raise Truncated(f"{len(data)} bytes, frame needs {total}")
    if len(data) > total:
        raise InvalidFrame(f"{len(data) - total} trailing bytes")
    body = data[: total - _CRC.size]
    (stored,) = _CRC.unpack_from(data, total - _CRC.size)
    if zlib.crc32(body) != stored:
        raise CrcMismatch(f"stored 0x{stored:08X}")
    if not 1 <= channel_count <= MAX_CHANNELS:
        raise InvalidFrame(f"channel_count {channel_count} outside 1..{MAX_CHANNELS}")
    resistances = struct.unpack_from(f"<{channel_count}d", data, _HEADER.size)
    frame = TelemetryFrame(counter=counter, node_id=node_id, resistances=resistances)
    _validate(frame)
    return frame


# -- link simulation -----------------------------------------------------------


@dataclass
class LinkConfig:
    """Radio link budget: throughput cap (bit/s), drop probability, latency (s)."""

    throughput: float = 2_000_000.0
    loss: float = 0.0
    latency: float = 0.0

    def __post_init__(self):
        if self.throughput <= 0:
            raise ValueError("throughput must be > 0")
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss must be within [0, 1]")


@dataclass(frozen=True)
class Delivery:
    """A frame that survived the link, due at ``time`` (seconds)."""

    time: float
    data: bytes


def link_send(frame: TelemetryFrame, config: LinkConfig, now: float,
              rng=None) -> Delivery | None:
    """Push one frame onto the simulated link.

    Returns the delivery event at ``now + latency + bits/throughput``, or
    None when the link dropped the frame (probability ``config.loss``).
    """
    data = encode(frame)
    if config.loss > 0.0:
        draw = rng.random() if rng is not None else random.random()
        if draw < config.loss:
            return None
    return Delivery(time=now + config.latency + len(data) * 8 / config.throughput, data=data)


@dataclass
class LinkSimulator:
    """Single-owner virtual link preserving per-node frame order."""

    config: LinkConfig = field(default_factory=LinkConfig)
    seed: int | None = None

    def __post_init__(self):
        self._rng = random.Random(self.seed)

    def send(self, frame: TelemetryFrame, now: float) -> Delivery | None:
        return link_send(frame, self.config, now, rng=self._rng)


# -- length-prefixed TCP transport ----------------------------------------------

MAX_MESSAGE_SIZE = 64 * 1024 * 1024


class ConnectionClosed(Exception):
    pass


def send_message(sock: socket.socket, payload: bytes) -> None:
    """Write one u32-LE length-prefixed message."""
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def recv_message(sock: socket.socket) -> bytes:
    """Read one u32-LE length-prefixed message; raises ConnectionClosed on EOF."""
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack("<I", header)
    if length > MAX_MESSAGE_SIZE:
        raise ValueError(f"message length {length} exceeds cap {MAX_MESSAGE_SIZE}")
    return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionClosed(f"peer closed with {remaining} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
