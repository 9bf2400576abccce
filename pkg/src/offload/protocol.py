"""Binary wire protocol between the client runtime and the application server.

Frame layout (all integers big-endian)::

    u32  length      bytes that follow this field (10 + payload)
    u8   version     0x01
    u8   type        MsgType
    u64  seq         per-connection, per-direction, strictly increasing
    ...  payload     type-specific, fields in the order documented below

Byte strings and text are length-prefixed with a u32; text is UTF-8.
Optional groups are introduced by a u8 presence flag (0 or 1). Replies
carry ``reply_to``, the seq of the request they answer.

    RegisterApp        str app_id, u32 n, n x (str task_id, u32 version)
    NeedTask           u64 reply_to, u32 n, n x (str task_id, u32 version)
    TaskBundleTransfer str task_id, u32 version, bytes digest
    Ping               (empty)
    Pong               u64 reply_to
    Execute            str task_id, u32 version, u32 input_bucket,
                       bytes state, bytes args, u8 has_power,
                       [str config_name, u32 n_vms]
    Result             u64 reply_to, u8 outcome,
                       outcome 0 (Ok): bytes result, bytes state_delta, ServerProfile
                       outcome 1 (RemoteException): str kind, str message
    Error              u64 reply_to, u16 code, str message

    ServerProfile      f64 wall_time, f64 thread_cpu_time, u64 work_units,
                       u64 alloc_bytes, u32 gc_count, f64 compute_ms,
                       str vm_config, u32 n_vms, u32 escalations,
                       u32 k, k x f64 vm_overhead_ms
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

VERSION = 0x01
HEADER = struct.Struct(">IBBQ")
HEADER_SIZE = HEADER.size  # 14
DEFAULT_MAX_FRAME = 64 * 1024 * 1024


class ProtocolError(Exception):
    """Base class for decode failures."""


class MalformedFrame(ProtocolError):
    pass


class VersionError(ProtocolError):
    pass


class MsgType(IntEnum):
    REGISTER_APP = 1
    NEED_TASK = 2
    TASK_BUNDLE_TRANSFER = 3
    PING = 4
    PONG = 5
    EXECUTE = 6
    RESULT = 7
    ERROR = 8


class ErrorCode(IntEnum):
    TASK_UNKNOWN = 1
    BUNDLE_REJECTED = 2
    OUT_OF_MEMORY = 3
    POOL_EXHAUSTED = 4
    BAD_REQUEST = 5
    INTERNAL = 6


# -- payloads -----------------------------------------------------------------

@dataclass(frozen=True)
class RegisterApp:
    app_id: str
    tasks: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class NeedTask:
    reply_to: int
    tasks: tuple[tuple[str, int], ...] = ()


@dataclass(frozen=True)
class TaskBundleTransfer:
    task_id: str
    version: int
    digest: bytes


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Pong:
    reply_to: int


@dataclass(frozen=True)
class PowerRequest:
    config_name: str
    n_vms: int = 1

    def __post_init__(self):
        if self.n_vms < 1:
            raise ValueError("n_vms must be >= 1")


@dataclass(frozen=True)
class Execute:
    task_id: str
    task_version: int
    input_bucket: int
    serialized_state: bytes = b""
    serialized_args: bytes = b""
    power_request: PowerRequest | None = None


@dataclass(frozen=True)
class ServerProfile:
    wall_time: float = 0.0
    thread_cpu_time: float = 0.0
    work_units: int = 0
    alloc_bytes: int = 0
    gc_count: int = 0
    compute_ms: float = 0.0
    vm_config: str = "main"
    n_vms: int = 1
    escalations: int = 0
    vm_overhead_ms: tuple[float, ...] = ()

    @property
    def overhead_ms(self) -> float:
        return sum(self.vm_overhead_ms)


@dataclass(frozen=True)
class Ok:
    result_bytes: bytes
    state_delta_bytes: bytes = b""


@dataclass(frozen=True)
class RemoteException:
    kind: str
    message: str


@dataclass(frozen=True)
class Result:
    reply_to: int
    outcome: Union[Ok, RemoteException]
    profile: ServerProfile | None = None

    def __post_init__(self):
        if isinstance(self.outcome, Ok) and self.profile is None:
            raise ValueError("Ok results carry a profile")


@dataclass(frozen=True)
class Error:
    reply_to: int
    code: ErrorCode
    message: str = ""


Payload = Union[RegisterApp, NeedTask, TaskBundleTransfer, Ping, Pong, Execute, Result, Error]

_TYPE_OF = {
    RegisterApp: MsgType.REGISTER_APP,
    NeedTask: MsgType.NEED_TASK,
    TaskBundleTransfer: MsgType.TASK_BUNDLE_TRANSFER,
    Ping: MsgType.PING,
    Pong: MsgType.PONG,
    Execute: MsgType.EXECUTE,
    Result: MsgType.RESULT,
    Error: MsgType.ERROR,
}


@dataclass(frozen=True)
class Message:
    seq: int
    payload: Payload
    type: MsgType = field(default=None)  # derived from payload when omitted

    def __post_init__(self):
        expected = _TYPE_OF[type(self.payload)]
        if self.type is None:
            object.__setattr__(self, "type", expected)
        elif self.type != expected:
            raise ValueError(f"type {self.type!r} does not match payload {type(self.payload).__name__}")
        if not 0 <= self.seq < 2 ** 64:
            raise ValueError("seq out of u64 range")


# -- primitive writers / readers ----------------------------------------------

class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v):
        self.parts.append(struct.pack(">B", v))

    def u16(self, v):
        self.parts.append(struct.pack(">H", v))

    def u32(self, v):
        self.parts.append(struct.pack(">I", v))

    def u64(self, v):
        self.parts.append(struct.pack(">Q", v))

    def f64(self, v):
        self.parts.append(struct.pack(">d", v))

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(bytes(b))

    def text(self, s: str):
        self.blob(s.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def _take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise MalformedFrame(f"truncated payload: need {n} bytes at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def _unpack(self, fmt: str, n: int):
        return struct.unpack(fmt, self._take(n))[0]

    def u8(self):
        return self._unpack(">B", 1)

    def u16(self):
        return self._unpack(">H", 2)

    def u32(self):
        return self._unpack(">I", 4)

    def u64(self):
        return self._unpack(">Q", 8)

    def f64(self):
        return self._unpack(">d", 8)

    def flag(self) -> bool:
        v = self.u8()
        if v > 1:
            raise MalformedFrame(f"invalid flag byte {v}")
        return bool(v)

    def blob(self) -> bytes:
        return bytes(self._take(self.u32()))

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedFrame(f"invalid utf-8: {exc}") from None

    def done(self):
        if self.pos != len(self.data):
            raise MalformedFrame(f"{len(self.data) - self.pos} trailing bytes")


# -- payload codecs -----------------------------------------------------------

def _write_tasks(w, tasks):
    w.u32(len(tasks))
    for task_id, version in tasks:
        w.text(task_id)
        w.u32(version)


def _read_tasks(r):
    n = r.u32()
    if n > len(r.data):
        raise MalformedFrame("task count exceeds frame")
    return tuple((r.text(), r.u32()) for _ in range(n))


def _write_profile(w, p: ServerProfile):
    w.f64(p.wall_time)
    w.f64(p.thread_cpu_time)
    w.u64(p.work_units)
    w.u64(p.alloc_bytes)
    w.u32(p.gc_count)
    w.f64(p.compute_ms)
    w.text(p.vm_config)
    w.u32(p.n_vms)
    w.u32(p.escalations)
    w.u32(len(p.vm_overhead_ms))
    for v in p.vm_overhead_ms:
        w.f64(v)


def _read_profile(r) -> ServerProfile:
    wall, cpu, units, alloc, gcs, compute = r.f64(), r.f64(), r.u64(), r.u64(), r.u32(), r.f64()
    cfg, n_vms, esc = r.text(), r.u32(), r.u32()
    k = r.u32()
    if k * 8 > len(r.data):
        raise MalformedFrame("overhead list exceeds frame")
    overheads = tuple(r.f64() for _ in range(k))
    return ServerProfile(wall, cpu, units, alloc, gcs, compute, cfg, n_vms, esc, overheads)


def _encode_payload(p: Payload) -> bytes:
    w = _Writer()
    if isinstance(p, RegisterApp):
        w.text(p.app_id)
        _write_tasks(w, p.tasks)
    elif isinstance(p, NeedTask):
        w.u64(p.reply_to)
        _write_tasks(w, p.tasks)
    elif isinstance(p, TaskBundleTransfer):
        w.text(p.task_id)
        w.u32(p.version)
        w.blob(p.digest)
    elif isinstance(p, Ping):
        pass
    elif isinstance(p, Pong):
        w.u64(p.reply_to)
    elif isinstance(p, Execute):
        w.text(p.task_id)
        w.u32(p.task_version)
        w.u32(p.input_bucket)
        w.blob(p.serialized_state)
        w.blob(p.serialized_args)
        w.u8(p.power_request is not None)
        if p.power_request is not None:
            w.text(p.power_request.config_name)
            w.u32(p.power_request.n_vms)
    elif isinstance(p, Result):
        w.u64(p.reply_to)
        if isinstance(p.outcome, Ok):
            w.u8(0)
            w.blob(p.outcome.result_bytes)
            w.blob(p.outcome.state_delta_bytes)
            _write_profile(w, p.profile)
        else:
            w.u8(1)
            w.text(p.outcome.kind)
            w.text(p.outcome.message)
    elif isinstance(p, Error):
        w.u64(p.reply_to)
        w.u16(int(p.code))
        w.text(p.message)
    else:
        raise TypeError(f"not a payload: {p!r}")
    return w.getvalue()


def _decode_payload(t: MsgType, r: _Reader) -> Payload:
    if t is MsgType.REGISTER_APP:
        return RegisterApp(r.text(), _read_tasks(r))
    if t is MsgType.NEED_TASK:
        return NeedTask(r.u64(), _read_tasks(r))
    if t is MsgType.TASK_BUNDLE_TRANSFER:
        return TaskBundleTransfer(r.text(), r.u32(), r.blob())
    if t is MsgType.PING:
        return Ping()
    if t is MsgType.PONG:
        return Pong(r.u64())
    if t is MsgType.EXECUTE:
        task_id, version, bucket = r.text(), r.u32(), r.u32()
        state, args = r.blob(), r.blob()
        power = None
        if r.flag():
            name, n = r.text(), r.u32()
            if n < 1:
                raise MalformedFrame("n_vms must be >= 1")
            power = PowerRequest(name, n)
        return Execute(task_id, version, bucket, state, args, power)
    if t is MsgType.RESULT:
        reply_to = r.u64()
        kind = r.u8()
        if kind == 0:
            outcome = Ok(r.blob(), r.blob())
            return Result(reply_to, outcome, _read_profile(r))
        if kind == 1:
            return Result(reply_to, RemoteException(r.text(), r.text()))
        raise MalformedFrame(f"unknown result outcome {kind}")
    if t is MsgType.ERROR:
        reply_to, code = r.u64(), r.u16()
        try:
            code = ErrorCode(code)
        except ValueError:
            raise MalformedFrame(f"unknown error code {code}") from None
        return Error(reply_to, code, r.text())
    raise MalformedFrame(f"unknown message type {t}")


def encode(msg: Message) -> bytes:
    body = _encode_payload(msg.payload)
    return HEADER.pack(10 + len(body), VERSION, int(msg.type), msg.seq) + body


def frame_length(prefix: bytes, max_frame: int = DEFAULT_MAX_FRAME) -> int:
    """Total frame size announced by a 4-byte length prefix."""
    if len(prefix) < 4:
        raise MalformedFrame("short length prefix")
    (length,) = struct.unpack(">I", prefix[:4])
    if length > max_frame:
        raise MalformedFrame(f"frame of {length} bytes exceeds limit {max_frame}")
    if length < 10:
        raise MalformedFrame(f"frame length {length} below header size")
    return 4 + length


def decode(data: bytes, max_frame: int = DEFAULT_MAX_FRAME) -> Message:
    """Decode exactly one frame; raises ProtocolError on any defect."""
    try:
        total = frame_length(data, max_frame)
        if len(data) != total:
            raise MalformedFrame(f"frame announces {total} bytes, got {len(data)}")
        _, version, mtype, seq = HEADER.unpack_from(data)
        if version != VERSION:
            raise VersionError(f"unsupported protocol version {version:#04x}")
        try:
            t = MsgType(mtype)
        except ValueError:
            raise MalformedFrame(f"unknown message type {mtype}") from None
        r = _Reader(bytes(data[HEADER_SIZE:]))
        payload = _decode_payload(t, r)
        r.done()
        return Message(seq, payload, t)
    except ProtocolError:
        raise
    except (struct.error, ValueError, OverflowError, TypeError, IndexError) as exc:
        raise MalformedFrame(str(exc)) from None
