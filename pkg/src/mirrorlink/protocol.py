"""Binary wire protocol for the teleoperation loop.

Every message starts with the 18-byte header
    magic "RMTP" | version u8 = 1 | msgType u8 | seq u32 LE | timestampMicros u64 LE
followed by a type-specific body. Transport is message-framed (one message
per WebSocket binary frame), so no length prefix is needed.

Message types:
    0x01 TeleopFrame   header + 2 x 53-byte hand block = 124 bytes total
    0x02 StateFrame    header + echoSeq + joints + EE poses + object poses
    0x03 LatencyEcho   header only; the server reflects it back verbatim
    0x04 ControlMsg    header + UTF-8 JSON payload

Hand block: 3xf32 position | 4xf32 quaternion (w,x,y,z) | 6xf32 fingers |
flags u8 (bit0 clutch engaged, bit1 episode start, bit2 episode end).

All fields little-endian. Floats cross the wire as f32; frame objects store
the f32-quantized values so encode/decode round trips are bit-exact.
Quaternions are only guaranteed normalized to within 1e-3 on the wire and
are re-normalized when converted to poses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

from .geometry import PoseSE3, Quaternion

MAGIC = b"RMTP"
VERSION = 1

MSG_TELEOP = 0x01
MSG_STATE = 0x02
MSG_LATENCY_ECHO = 0x03
MSG_CONTROL = 0x04

HEADER_SIZE = 18
HAND_BLOCK_SIZE = 53
TELEOP_FRAME_SIZE = HEADER_SIZE + 2 * HAND_BLOCK_SIZE  # 124

FLAG_CLUTCH = 0x01
FLAG_EPISODE_START = 0x02
FLAG_EPISODE_END = 0x04

_HEADER = struct.Struct("<4sBBIQ")
_HAND = struct.Struct("<3f4f6fB")
_F32 = struct.Struct("<f")


class ProtocolError(Exception):
    """Base for all frame decode errors."""


class BadMagic(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class WrongType(ProtocolError):
    pass


def f32(x: float) -> float:
    """Round a float to the nearest value representable in binary32."""
    return _F32.unpack(_F32.pack(x))[0]


def _f32_tuple(values, n: int) -> tuple[float, ...]:
    t = tuple(f32(float(v)) for v in values)
    if len(t) != n:
        raise ValueError(f"expected {n} values, got {len(t)}")
    return t


@dataclass(frozen=True)
class HandState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    orientation_wxyz: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    fingers: tuple[float, ...] = (0.0,) * 6
    flags: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", _f32_tuple(self.position, 3))
        object.__setattr__(self, "orientation_wxyz", _f32_tuple(self.orientation_wxyz, 4))
        object.__setattr__(self, "fingers", _f32_tuple(self.fingers, 6))
        if not 0 <= self.flags <= 0xFF:
            raise ValueError("flags must fit in one byte")

    @property
    def clutch_engaged(self) -> bool:
        return bool(self.flags & FLAG_CLUTCH)

    def pose(self) -> PoseSE3:
        # Quaternion construction re-normalizes wire values on ingest.
        return PoseSE3(list(self.position), Quaternion(*self.orientation_wxyz))


@dataclass(frozen=True)
class TeleopFrame:
    seq: int
    timestamp_micros: int
    left: HandState = field(default_factory=HandState)
    right: HandState = field(default_factory=HandState)


@dataclass(frozen=True)
class ObjectPose:
    object_id: int
    pose: tuple[float, ...]  # x, y, z, qw, qx, qy, qz

    def __post_init__(self):
        object.__setattr__(self, "pose", _f32_tuple(self.pose, 7))


@dataclass(frozen=True)
class StateFrame:
    seq: int
    timestamp_micros: int
    echo_seq: int
    joint_state: tuple[float, ...]  # 26
    ee_poses: tuple[float, ...]  # 2 x 7, left then right
    object_poses: tuple[ObjectPose, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "joint_state", _f32_tuple(self.joint_state, 26))
        object.__setattr__(self, "ee_poses", _f32_tuple(self.ee_poses, 14))
        object.__setattr__(self, "object_poses", tuple(self.object_poses))


def _encode_header(msg_type: int, seq: int, timestamp_micros: int) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, msg_type, seq & 0xFFFFFFFF, timestamp_micros)


def _decode_header(data: bytes, expected_type: int | None) -> tuple[int, int, int]:
    if len(data) < 4:
        raise TruncatedFrame(f"frame of {len(data)} bytes is shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise TruncatedFrame(f"header needs {HEADER_SIZE} bytes, got {len(data)}")
    _, version, msg_type, seq, ts = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    if expected_type is not None and msg_type != expected_type:
        raise WrongType(f"expected msgType 0x{expected_type:02x}, got 0x{msg_type:02x}")
    return msg_type, seq, ts


def peek_type(data: bytes) -> int:
    return _decode_header(data, None)[0]


def _encode_hand(h: HandState) -> bytes:
    return _HAND.pack(*h.position, *h.orientation_wxyz, *h.fingers, h.flags)


def _decode_hand(data: bytes) -> HandState:
    vals = _HAND.unpack(data)
    return HandState(
        position=vals[0:3],
        orientation_wxyz=vals[3:7],
        fingers=vals[7:13],
        flags=vals[13],
    )


def encode_teleop_frame(frame: TeleopFrame) -> bytes:
    return (
        _encode_header(MSG_TELEOP, frame.seq, frame.timestamp_micros)
        + _encode_hand(frame.left)
        + _encode_hand(frame.right)
    )


def decode_teleop_frame(data: bytes) -> TeleopFrame:
    _, seq, ts = _decode_header(data, MSG_TELEOP)
    if len(data) != TELEOP_FRAME_SIZE:
        raise TruncatedFrame(
            f"teleop frame must be {TELEOP_FRAME_SIZE} bytes, got {len(data)}"
        )
    left = _decode_hand(data[HEADER_SIZE : HEADER_SIZE + HAND_BLOCK_SIZE])
    right = _decode_hand(data[HEADER_SIZE + HAND_BLOCK_SIZE :])
    return TeleopFrame(seq, ts, left, right)


def encode_state_frame(frame: StateFrame) -> bytes:
    parts = [
        _encode_header(MSG_STATE, frame.seq, frame.timestamp_micros),
        struct.pack("<I", frame.echo_seq & 0xFFFFFFFF),
        struct.pack("<26f", *frame.joint_state),
        struct.pack("<14f", *frame.ee_poses),
        struct.pack("<H", len(frame.object_poses)),
    ]
    for op in frame.object_poses:
        parts.append(struct.pack("<H7f", op.object_id, *op.pose))
    return b"".join(parts)


def decode_state_frame(data: bytes) -> StateFrame:
    _, seq, ts = _decode_header(data, MSG_STATE)
    fixed = HEADER_SIZE + 4 + 26 * 4 + 14 * 4 + 2
    if len(data) < fixed:
        raise TruncatedFrame(f"state frame needs at least {fixed} bytes, got {len(data)}")
    off = HEADER_SIZE
    (echo_seq,) = struct.unpack_from("<I", data, off)
    off += 4
    joints = struct.unpack_from("<26f", data, off)
    off += 26 * 4
    ee = struct.unpack_from("<14f", data, off)
    off += 14 * 4
    (count,) = struct.unpack_from("<H", data, off)
    off += 2
    if len(data) != off + count * 30:
        raise TruncatedFrame(
            f"state frame with {count} objects must be {off + count * 30} bytes"
        )
    objects = []
    for _ in range(count):
        vals = struct.unpack_from("<H7f", data, off)
        objects.append(ObjectPose(vals[0], vals[1:]))
        off += 30
    return StateFrame(seq, ts, echo_seq, joints, ee, tuple(objects))


def encode_latency_echo(seq: int, timestamp_micros: int) -> bytes:
    return _encode_header(MSG_LATENCY_ECHO, seq, timestamp_micros)


def decode_latency_echo(data: bytes) -> tuple[int, int]:
    _, seq, ts = _decode_header(data, MSG_LATENCY_ECHO)
    if len(data) != HEADER_SIZE:
        raise TruncatedFrame(f"latency echo must be {HEADER_SIZE} bytes, got {len(data)}")
    return seq, ts


def encode_control(seq: int, timestamp_micros: int, payload: dict) -> bytes:
    body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    return _encode_header(MSG_CONTROL, seq, timestamp_micros) + body


def decode_control(data: bytes) -> tuple[int, int, dict]:
    _, seq, ts = _decode_header(data, MSG_CONTROL)
    try:
        payload = json.loads(data[HEADER_SIZE:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedFrame(f"control payload is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise TruncatedFrame("control payload must be a JSON object")
    return seq, ts, payload
