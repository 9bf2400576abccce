"""Frame transports and the multiplexed client connection."""

from __future__ import annotations

import collections
import itertools
import logging
import queue
import socket
import threading
import time
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass

from . import protocol
from .protocol import DEFAULT_MAX_FRAME, Message, Ping, Pong

log = logging.getLogger(__name__)


class ConnectionLost(ConnectionError):
    """The link went away; callers fall back to local execution."""


class PipeTransport:
    """One end of an in-process duplex frame pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = threading.Event()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def send(self, frame: bytes) -> None:
        if self.closed:
            raise ConnectionLost("pipe closed")
        self._outbox.put(bytes(frame))

    def recv(self) -> bytes:
        if self.closed and self._inbox.empty():
            raise ConnectionLost("pipe closed")
        item = self._inbox.get()
        if item is None:
            self._closed.set()
            raise ConnectionLost("peer closed")
        return item

    def close(self) -> None:
        if not self._closed.is_set():
            self._closed.set()
            self._inbox.put(None)
            self._outbox.put(None)

    def latency_ms(self, nbytes: int, direction: str) -> float:
        return 0.0


def pipe_pair() -> tuple[PipeTransport, PipeTransport]:
    a, b = queue.Queue(), queue.Queue()
    return PipeTransport(a, b), PipeTransport(b, a)


class SocketTransport:
    def __init__(self, sock: socket.socket, max_frame: int = DEFAULT_MAX_FRAME):
        self.sock = sock
        self.max_frame = max_frame
        self._closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = 5.0, **kw) -> "SocketTransport":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock, **kw)

    @property
    def closed(self) -> bool:
        return self._closed

    def _recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not chunk:
                raise ConnectionLost("socket closed by peer")
            buf += chunk
        return bytes(buf)

    def send(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc

    def recv(self) -> bytes:
        prefix = self._recv_exact(4)
        total = protocol.frame_length(prefix, self.max_frame)
        return prefix + self._recv_exact(total - 4)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()

    def latency_ms(self, nbytes: int, direction: str) -> float:
        return 0.0


@dataclass
class Exchange:
    """One request/reply round trip as seen by the client."""

    reply: Message
    tx_bytes: int
    rx_bytes: int
    up_ms: float        # modelled one-way latency of the request frame
    down_ms: float      # modelled one-way latency of the reply frame
    elapsed_ms: float   # measured wall time


class Connection:
    """Client end of a protocol connection, multiplexed by seq.

    Safe for concurrent ``request`` calls from several threads: writes are
    serialized, and a reader thread routes each reply to its waiter by
    ``reply_to``.
    """

    def __init__(self, transport, profiler=None, max_frame: int = DEFAULT_MAX_FRAME):
        self.transport = transport
        self.profiler = profiler
        self.max_frame = max_frame
        self._seq = itertools.count(1)
        self._send_lock = threading.Lock()
        self._pending: dict[int, Future] = {}
        self._pending_lock = threading.Lock()
        self._lost = threading.Event()
        self.sent_counts: collections.Counter = collections.Counter()  # MsgType -> frames sent
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="offload-conn-reader")
        self._reader.start()

    @property
    def lost(self) -> bool:
        return self._lost.is_set()

    def _fail_pending(self, exc: Exception) -> None:
        self._lost.set()
        with self._pending_lock:
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc)

    def _read_loop(self) -> None:
        while True:
            try:
                frame = self.transport.recv()
                msg = protocol.decode(frame, self.max_frame)
            except (ConnectionLost, protocol.ProtocolError, OSError) as exc:
                self._fail_pending(ConnectionLost(str(exc)))
                return
            if self.profiler is not None:
                self.profiler.on_recv(len(frame))
            reply_to = getattr(msg.payload, "reply_to", None)
            with self._pending_lock:
                fut = self._pending.pop(reply_to, None)
            if fut is None:
                log.warning("unsolicited frame %s reply_to=%s", msg.type.name, reply_to)
                continue
            fut.set_result((msg, len(frame), self.transport.latency_ms(len(frame), "down")))

    def request(self, payload, timeout: float | None = None) -> Exchange:
        if self.lost:
            raise ConnectionLost("connection lost")
        fut: Future = Future()
        t0 = time.perf_counter()
        with self._send_lock:
            seq = next(self._seq)
            msg = Message(seq, payload)
            frame = protocol.encode(msg)
            with self._pending_lock:
                self._pending[seq] = fut
            up_ms = self.transport.latency_ms(len(frame), "up")
            try:
                self.transport.send(frame)
            except (ConnectionLost, OSError) as exc:
                with self._pending_lock:
                    self._pending.pop(seq, None)
                self.close()
                raise ConnectionLost(str(exc)) from exc
            self.sent_counts[msg.type] += 1
            if self.profiler is not None:
                self.profiler.on_send(len(frame))
        try:
            reply, nbytes, down_ms = fut.result(timeout)
        except FutureTimeout:
            with self._pending_lock:
                self._pending.pop(seq, None)
            raise
        return Exchange(reply, len(frame), nbytes, up_ms, down_ms,
                        (time.perf_counter() - t0) * 1e3)

    def ping(self, measured: bool = False) -> float:
        """One application-level ping; returns the round trip in ms.

        Uses the modelled link latency unless ``measured`` is set.
        """
        ex = self.request(Ping())
        if not isinstance(ex.reply.payload, Pong):
            raise protocol.MalformedFrame(f"expected Pong, got {ex.reply.type.name}")
        return ex.elapsed_ms if measured else ex.up_ms + ex.down_ms

    def close(self) -> None:
        self.transport.close()
        self._fail_pending(ConnectionLost("closed"))
