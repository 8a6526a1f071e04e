"""Pose-stream record/replay (little-endian binary format).

Layout::

    header   b"PNAV" | u16 version (=1) | u16 body_count
             body_count x ( u16 body_id | u8 name_len | name (UTF-8) )
    record   u32 payload_len (=70) | payload
    payload  u32 seq | u64 timestamp_us | u16 body_id | f64 qw qx qy qz | f64 x y z

``seq`` must increase strictly per body and timestamps must not decrease.
Replay paces frames by their timestamps divided by a speed factor and
delivers them through a single-producer, single-consumer loopback channel.
"""

from __future__ import annotations

import math
import queue
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFile, PnavError
from .geom import UnitQuaternion, rotvec_to_matrix

MAGIC = b"PNAV"
VERSION = 1
_HEAD = struct.Struct("<4sHH")
_BODY = struct.Struct("<HB")
_LEN = struct.Struct("<I")
_PAYLOAD = struct.Struct("<IQH7d")
PAYLOAD_SIZE = _PAYLOAD.size  # 70
DEFAULT_RATE_HZ = 20.0


@dataclass(frozen=True)
class PoseFrame:
    seq: int
    timestamp_us: int
    body_id: int
    quaternion: UnitQuaternion
    position: tuple  # mm

    def __post_init__(self):
        if not 0 <= self.seq < 2**32:
            raise PnavError("seq must fit in u32")
        if not 0 <= self.timestamp_us < 2**64:
            raise PnavError("timestamp_us must fit in u64")
        if not 0 <= self.body_id < 2**16:
            raise PnavError("body_id must fit in u16")
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise PnavError("position must be 3 finite numbers")
        object.__setattr__(self, "position", pos)

    def pack(self) -> bytes:
        return _PAYLOAD.pack(self.seq, self.timestamp_us, self.body_id, *self.quaternion.as_tuple(), *self.position)


@dataclass(frozen=True)
class StreamHeader:
    bodies: tuple  # ((body_id, name), ...)
    version: int = VERSION

    def __post_init__(self):
        bodies = tuple((int(i), str(n)) for i, n in self.bodies)
        ids = [i for i, _ in bodies]
        if len(set(ids)) != len(ids):
            raise PnavError("body ids must be unique")
        for i, n in bodies:
            if not 0 <= i < 2**16:
                raise PnavError("body id must fit in u16")
            if len(n.encode("utf-8")) > 255:
                raise PnavError(f"body name {n!r} longer than 255 bytes")
        if len(bodies) >= 2**16:
            raise PnavError("too many bodies")
        object.__setattr__(self, "bodies", bodies)

    def pack(self) -> bytes:
        out = [_HEAD.pack(MAGIC, self.version, len(self.bodies))]
        for i, n in self.bodies:
            raw = n.encode("utf-8")
            out.append(_BODY.pack(i, len(raw)) + raw)
        return b"".join(out)


class _OrderCheck:
    def __init__(self, header: StreamHeader):
        self.known = {i for i, _ in header.bodies}
        self.last_seq: dict[int, int] = {}
        self.last_ts = -1

    def check(self, f: PoseFrame):
        """Return an error message, or None when ``f`` may follow."""
        if f.body_id not in self.known:
            return f"frame for unknown body {f.body_id}"
        prev = self.last_seq.get(f.body_id)
        if prev is not None and f.seq <= prev:
            return f"non-monotonic seq {f.seq} after {prev} for body {f.body_id}"
        if f.timestamp_us < self.last_ts:
            return f"timestamp {f.timestamp_us} before {self.last_ts}"
        self.last_seq[f.body_id] = f.seq
        self.last_ts = f.timestamp_us
        return None


def encode_stream(header: StreamHeader, frames) -> bytes:
    """Serialize; raises PnavError on ordering violations."""
    chk = _OrderCheck(header)
    out = [header.pack()]
    for f in frames:
        err = chk.check(f)
        if err:
            raise PnavError(err)
        out.append(_LEN.pack(PAYLOAD_SIZE) + f.pack())
    return b"".join(out)


def stream_record(path, header: StreamHeader, frames) -> int:
    """Write a stream file; returns the number of bytes written."""
    data = encode_stream(header, frames)
    Path(path).write_bytes(data)
    return len(data)


def _need(buf: bytes, off: int, n: int, what: str):
    if off + n > len(buf):
        raise CorruptFile(f"truncated {what}", offset=off)


def decode_header(buf: bytes) -> tuple[StreamHeader, int]:
    _need(buf, 0, _HEAD.size, "header")
    magic, version, count = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CorruptFile(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise CorruptFile(f"unsupported version {version}", offset=4)
    off = _HEAD.size
    bodies = []
    for _ in range(count):
        _need(buf, off, _BODY.size, "body table")
        bid, n = _BODY.unpack_from(buf, off)
        off += _BODY.size
        _need(buf, off, n, "body name")
        try:
            name = buf[off : off + n].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptFile("body name is not UTF-8", offset=off) from exc
        bodies.append((bid, name))
        off += n
    try:
        return StreamHeader(tuple(bodies), version), off
    except PnavError as exc:
        raise CorruptFile(str(exc), offset=_HEAD.size) from exc


def iter_frames(buf: bytes, header: StreamHeader, off: int):
    """Decode records starting at ``off``, validating order as they come."""
    chk = _OrderCheck(header)
    while off < len(buf):
        start = off
        _need(buf, off, _LEN.size, "record length")
        (n,) = _LEN.unpack_from(buf, off)
        if n != PAYLOAD_SIZE:
            raise CorruptFile(f"record length {n}, expected {PAYLOAD_SIZE}", offset=start)
        off += _LEN.size
        if off + n > len(buf):
            raise CorruptFile("truncated record", offset=start)
        seq, ts, bid, qw, qx, qy, qz, x, y, z = _PAYLOAD.unpack_from(buf, off)
        off += n
        try:
            frame = PoseFrame(seq, ts, bid, UnitQuaternion(qw, qx, qy, qz), (x, y, z))
        except ValueError as exc:
            raise CorruptFile(f"invalid record: {exc}", offset=start) from exc
        err = chk.check(frame)
        if err:
            raise CorruptFile(err, offset=start)
        yield frame


def decode_stream(buf: bytes) -> tuple[StreamHeader, list[PoseFrame]]:
    header, off = decode_header(buf)
    return header, list(iter_frames(buf, header, off))


def read_stream(path) -> tuple[StreamHeader, list[PoseFrame]]:
    return decode_stream(Path(path).read_bytes())


_CLOSED = object()


class ChannelClosed(Exception):
    """The consumer went away; the producer should stop."""


class LoopbackChannel:
    """In-order, lossless hand-off from one producer thread to one consumer."""

    def __init__(self, maxsize: int = 256):
        self._q: queue.Queue = queue.Queue(maxsize)
        self._error: BaseException | None = None
        self._cancelled = threading.Event()

    def send(self, item) -> None:
        while True:
            if self._cancelled.is_set():
                raise ChannelClosed()
            try:
                self._q.put(item, timeout=0.05)
                return
            except queue.Full:
                continue

    def close(self, error: BaseException | None = None) -> None:
        self._error = error
        try:
            self.send(_CLOSED)
        except ChannelClosed:
            pass

    def cancel(self) -> None:
        self._cancelled.set()

    def __iter__(self):
        while True:
            item = self._q.get()
            if item is _CLOSED:
                if self._error is not None:
                    raise self._error
                return
            yield item


def stream_replay(source, rate: float = 1.0, *, clock=time.monotonic, sleep=time.sleep):
    """Yield frames from ``source`` (path or bytes) paced by their timestamps.

    ``rate`` is a speed factor: 1 replays in real time, 2 twice as fast,
    ``math.inf`` without waiting. A producer thread decodes and paces the
    frames; the caller consumes them through a :class:`LoopbackChannel`.
    Decoding errors surface in the consumer as :class:`CorruptFile`.
    """
    if not rate > 0:
        raise PnavError("replay rate must be > 0")
    buf = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    header, off = decode_header(bytes(buf))
    chan = LoopbackChannel()

    def produce():
        try:
            t0 = None
            for f in iter_frames(bytes(buf), header, off):
                if math.isfinite(rate):
                    if t0 is None:
                        t0 = (clock(), f.timestamp_us)
                    due = t0[0] + (f.timestamp_us - t0[1]) * 1e-6 / rate
                    wait = due - clock()
                    if wait > 0:
                        sleep(wait)
                chan.send(f)
            chan.close()
        except ChannelClosed:
            pass
        except BaseException as exc:  # forwarded to the consumer
            chan.close(exc)

    th = threading.Thread(target=produce, name="pnav-replay", daemon=True)
    th.start()
    try:
        yield from chan
    finally:
        chan.cancel()
        th.join()


def synthesize_frames(n: int, bodies=((1, "probe"), (2, "ref")), rate_hz: float = DEFAULT_RATE_HZ, seed: int = 0,
                      t0_us: int = 0) -> tuple[StreamHeader, list[PoseFrame]]:
    """Smooth random tracker motion for every body at ``rate_hz``."""
    header = StreamHeader(tuple(bodies))
    rng = np.random.default_rng([int(seed), 2])
    period = int(round(1e6 / rate_hz))
    state = {bid: (rng.normal(0.0, 0.5, 3), rng.uniform(-200.0, 200.0, 3)) for bid, _ in header.bodies}
    frames = []
    for k in range(n):
        ts = t0_us + k * period
        for bid, _ in header.bodies:
            rv, p = state[bid]
            rv = rv + rng.normal(0.0, 0.01, 3)
            p = p + rng.normal(0.0, 0.5, 3)
            state[bid] = (rv, p)
            q = UnitQuaternion.from_matrix(rotvec_to_matrix(rv))
            frames.append(PoseFrame(k, ts, bid, q, tuple(p)))
    return header, frames
