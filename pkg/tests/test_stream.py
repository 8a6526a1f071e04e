import math
import threading
from pathlib import Path

import pytest

from pnav.errors import CorruptFile, PnavError
from pnav.geom import UnitQuaternion
from pnav.stream import (
    PAYLOAD_SIZE,
    LoopbackChannel,
    PoseFrame,
    StreamHeader,
    decode_stream,
    encode_stream,
    read_stream,
    stream_record,
    stream_replay,
    synthesize_frames,
)

GOLDEN_HEADER = (Path(__file__).parent / "data" / "golden" / "stream_header.hex").read_text().strip()


def test_golden_header():
    assert StreamHeader(((1, "probe"), (2, "ref"))).pack().hex() == GOLDEN_HEADER


def test_golden_record_is_little_endian():
    f = PoseFrame(1, 2, 3, UnitQuaternion(1.0, 0.0, 0.0, 0.0), (1.0, 0.0, -2.0))
    raw = encode_stream(StreamHeader(((3, "a"),)), [f])
    rec = raw[len(StreamHeader(((3, "a"),)).pack()):]
    assert rec[:4] == PAYLOAD_SIZE.to_bytes(4, "little")
    assert rec[4:8] == (1).to_bytes(4, "little")
    assert rec[8:16] == (2).to_bytes(8, "little")
    assert rec[16:18] == (3).to_bytes(2, "little")
    assert rec[18:26].hex() == "000000000000f03f"  # qw = 1.0


def test_empty_stream(tmp_path):
    h = StreamHeader(((1, "probe"),))
    n = stream_record(tmp_path / "e.pnav", h, [])
    assert n == len(h.pack())
    assert list(stream_replay(tmp_path / "e.pnav", math.inf)) == []


def test_roundtrip_byte_identical(tmp_path):
    h, frames = synthesize_frames(50)
    assert len(frames) == 100
    path = tmp_path / "s.pnav"
    stream_record(path, h, frames)
    h2, back = read_stream(path)
    assert h2 == h and back == frames
    assert encode_stream(h2, back) == path.read_bytes()
    replayed = list(stream_replay(path, math.inf))
    assert [f.pack() for f in replayed] == [f.pack() for f in frames]


def test_truncation_names_offset():
    h, frames = synthesize_frames(5)
    raw = encode_stream(h, frames)
    cut = raw[:-10]
    start = len(raw) - (4 + PAYLOAD_SIZE)
    with pytest.raises(CorruptFile) as exc:
        decode_stream(cut)
    assert exc.value.offset == start and str(start) in str(exc.value)
    with pytest.raises(CorruptFile):
        list(stream_replay(cut, math.inf))


def test_bad_magic_and_order():
    h, frames = synthesize_frames(3)
    raw = encode_stream(h, frames)
    with pytest.raises(CorruptFile):
        decode_stream(b"XNAV" + raw[4:])
    with pytest.raises(PnavError):
        encode_stream(h, [frames[2], frames[0]])
    # swap two records of the same body in the byte stream
    hl = len(h.pack())
    rec = 4 + PAYLOAD_SIZE
    recs = [raw[hl + i * rec: hl + (i + 1) * rec] for i in range(len(frames))]
    recs[0], recs[2] = recs[2], recs[0]
    with pytest.raises(CorruptFile):
        decode_stream(raw[:hl] + b"".join(recs))


def test_replay_pacing_uses_rate():
    h, frames = synthesize_frames(5, rate_hz=20)
    raw = encode_stream(h, frames)
    now = [0.0]
    waits = []

    def clock():
        return now[0]

    def sleep(dt):
        waits.append(dt)
        now[0] += dt

    got = list(stream_replay(raw, 2.0, clock=clock, sleep=sleep))
    assert got == frames
    # 4 frame periods of 50 ms at double speed
    assert sum(waits) == pytest.approx(4 * 0.05 / 2.0)
    with pytest.raises(PnavError):
        list(stream_replay(raw, 0.0))


def test_consumer_can_stop_early():
    h, frames = synthesize_frames(2000)
    gen = stream_replay(encode_stream(h, frames), math.inf)
    first = [next(gen) for _ in range(3)]
    gen.close()
    assert first == frames[:3]
    assert not any(t.name == "pnav-replay" for t in threading.enumerate())


def test_loopback_in_order_lossless():
    chan = LoopbackChannel(maxsize=4)

    def produce():
        for i in range(500):
            chan.send(i)
        chan.close()

    t = threading.Thread(target=produce)
    t.start()
    assert list(chan) == list(range(500))
    t.join()


def test_frame_validation():
    q = UnitQuaternion(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(PnavError):
        PoseFrame(-1, 0, 1, q, (0, 0, 0))
    with pytest.raises(PnavError):
        PoseFrame(0, 0, 2**16, q, (0, 0, 0))
    with pytest.raises(PnavError):
        StreamHeader(((1, "a"), (1, "b")))
