"""Server-side client handler.

Each connected client gets a session that negotiates task bundles, answers
pings and executes requests. Execution runs on the primary clone unless the
request asks for a particular configuration or for several clones. When a
task's declared peak memory does not fit the clone's heap, the handler
resumes the next more powerful clone and retries there instead of returning
the failure.
"""

from __future__ import annotations

import itertools
import json
import logging
import pickle
import socketserver
import threading
import time
from concurrent.futures import ThreadPoolExecutor

from . import protocol
from .errors import OutOfMemoryError, exception_kind, exception_message
from .profiling import ProgramProfiler
from .protocol import (Error, ErrorCode, Execute, Message, NeedTask, Ok, Ping, Pong, RegisterApp,
                       RemoteException, Result, ServerProfile, TaskBundleTransfer)
from .transport import ConnectionLost, SocketTransport
from .vmpool import (NoLargerConfig, PoolExhausted, VmInstance, VmPool, escalate, get_config)
from .workloads import MB, TaskBundle

log = logging.getLogger(__name__)


class TaskRegistry:
    """Catalogue of task implementations keyed exactly by (id, version)."""

    def __init__(self, bundles=()):
        self._tasks: dict[tuple[str, int], TaskBundle] = {}
        for b in bundles:
            self.register(b)

    def register(self, bundle: TaskBundle) -> None:
        self._tasks[bundle.key] = bundle

    def lookup(self, task_id: str, version: int) -> TaskBundle:
        return self._tasks[(task_id, version)]

    def __contains__(self, key) -> bool:
        return key in self._tasks

    def keys(self):
        return list(self._tasks)


def memory_guard(task: TaskBundle, input, vm: VmInstance) -> bool:
    """True when the task may proceed on ``vm`` (peak equal to heap fits)."""
    return task.peak_memory(input) <= vm.heap_limit_mb


class AppServer:
    def __init__(self, catalog: TaskRegistry, pool: VmPool | None = None,
                 restricted: bool = False, installed=None, max_frame: int = protocol.DEFAULT_MAX_FRAME):
        self.catalog = catalog
        self.pool = pool or VmPool()
        self.restricted = restricted
        self.max_frame = max_frame
        self.installed: set[tuple[str, int]] = set(installed or ())
        self._lock = threading.Lock()
        self.sessions: list[ClientSession] = []

    @property
    def deterministic(self) -> bool:
        return self.pool.deterministic

    def knows(self, key) -> bool:
        with self._lock:
            return key in self.installed

    def install(self, transfer: TaskBundleTransfer) -> str | None:
        """Install a transferred bundle; returns a rejection reason or None."""
        key = (transfer.task_id, transfer.version)
        if self.restricted:
            return "server runs in restricted mode"
        if key not in self.catalog:
            return f"unsupported task/version {key}"
        if self.catalog.lookup(*key).digest() != transfer.digest:
            return "bundle integrity check failed"
        with self._lock:
            self.installed.add(key)
        return None

    def attach(self, transport, start: bool = True) -> "ClientSession":
        session = ClientSession(self, transport)
        with self._lock:
            self.sessions.append(session)
        if start:
            session.start()
        return session

    # -- execution ------------------------------------------------------------

    def handle_execute(self, payload: Execute, reply_to: int = 0):
        """Run one request; returns a Result or Error payload."""
        key = (payload.task_id, payload.task_version)
        if not self.knows(key):
            return Error(reply_to, ErrorCode.TASK_UNKNOWN, f"task {key} not installed")
        task = self.catalog.lookup(*key)
        try:
            input = pickle.loads(payload.serialized_args)
            state = pickle.loads(payload.serialized_state) if payload.serialized_state else None
        except Exception as exc:
            return Error(reply_to, ErrorCode.BAD_REQUEST, f"cannot deserialize request: {exc}")
        req = payload.power_request
        try:
            if req is not None and req.n_vms > 1 and task.splittable:
                return self._run_parallel(task, input, req, reply_to)
            return self._run_single(task, input, state, req, reply_to)
        except PoolExhausted as exc:
            return Error(reply_to, ErrorCode.POOL_EXHAUSTED, str(exc))
        except KeyError as exc:
            return Error(reply_to, ErrorCode.BAD_REQUEST, str(exc))

    def _compute_ms(self, task, input, vm: VmInstance, measured_ms: float) -> float:
        if self.deterministic:
            return self.pool.compute_ms(task.cost_ms(input), vm.config)
        return measured_ms

    def _run_single(self, task: TaskBundle, input, state, req, reply_to):
        pool = self.pool
        overheads: list[float] = []
        held: list[VmInstance] = []
        if req is not None and req.config_name != "main":
            acq = pool.acquire(get_config(req.config_name, pool.configs), 1)
            held, vm = acq.instances, acq.instances[0]
            overheads.append(acq.overhead_ms)
        else:
            vm = pool.primary
        escalations = 0
        try:
            while not memory_guard(task, input, vm):
                try:
                    bigger = escalate(vm.config, pool.configs)
                except NoLargerConfig:
                    exc = OutOfMemoryError(
                        f"{task.task_id} needs {task.peak_memory(input):.1f} MB, "
                        f"largest clone offers {vm.heap_limit_mb} MB")
                    return Result(reply_to, RemoteException(exception_kind(exc), exception_message(exc)))
                log.info(json.dumps({"event": "escalate", "task": task.task_id, "from": vm.config.name,
                                     "to": bigger.name, "peak_mb": task.peak_memory(input)}))
                if held:
                    pool.release(held)
                acq = pool.acquire(bigger, 1, large_heap=True)
                held, vm = acq.instances, acq.instances[0]
                overheads.append(acq.overhead_ms)
                escalations += 1

            def body():
                with ProgramProfiler(task.work_units(input), int(task.peak_memory(input) * MB)) as prof:
                    out = task.run(input, state) if task.stateful else task.run(input)
                return out, prof.profile
            try:
                out, prof = (pool.run_on(vm, body) if not vm.primary else body())
            except Exception as exc:
                return Result(reply_to, RemoteException(exception_kind(exc), exception_message(exc)))
        finally:
            if held:
                pool.release(held)
        profile = ServerProfile(
            wall_time=prof.wall_time, thread_cpu_time=prof.thread_cpu_time,
            work_units=prof.work_units, alloc_bytes=prof.alloc_bytes,
            gc_count=prof.gc_or_reclaim_count,
            compute_ms=self._compute_ms(task, input, vm, prof.wall_time),
            vm_config=vm.config.name, n_vms=1, escalations=escalations,
            vm_overhead_ms=tuple(overheads))
        delta = pickle.dumps(state) if task.stateful else b""
        return Result(reply_to, Ok(pickle.dumps(out), delta), profile)

    def _run_parallel(self, task: TaskBundle, input, req, reply_to):
        pool = self.pool
        cfg = get_config(req.config_name, pool.configs)
        if cfg.name == "main":
            # the primary works alongside n-1 secondaries
            acq = pool.acquire(cfg, req.n_vms - 1)
            instances = [pool.primary] + acq.instances
        else:
            acq = pool.acquire(cfg, req.n_vms)
            instances = acq.instances
        t0 = time.perf_counter()
        t_cpu = time.thread_time()
        try:
            split = pool.split_and_distribute(task, input, instances)
        except Exception as exc:
            return Result(reply_to, RemoteException(exception_kind(exc), exception_message(exc)))
        finally:
            pool.release(acq.instances)
        wall = (time.perf_counter() - t0) * 1e3
        profile = ServerProfile(
            wall_time=wall, thread_cpu_time=min(wall, (time.thread_time() - t_cpu) * 1e3),
            work_units=sum(p.work_units for p in split.parts),
            alloc_bytes=int(task.peak_memory(input) * MB), gc_count=0,
            compute_ms=split.makespan_ms, vm_config=cfg.name, n_vms=len(instances),
            escalations=0, vm_overhead_ms=(acq.overhead_ms,))
        return Result(reply_to, Ok(pickle.dumps(split.result), b""), profile)

    # -- tcp ------------------------------------------------------------------

    def serve_tcp(self, host: str = "127.0.0.1", port: int = 0) -> "TcpServer":
        server = TcpServer((host, port), _TcpHandler)
        server.app = self
        threading.Thread(target=server.serve_forever, daemon=True, name="offload-tcp").start()
        return server


class ClientSession:
    """One client connection; requests are handled concurrently and each
    reply carries the seq of the request it answers."""

    def __init__(self, server: AppServer, transport):
        self.server = server
        self.transport = transport
        self._seq = itertools.count(1)
        self._write_lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=8, thread_name_prefix="offload-exec")
        self._thread: threading.Thread | None = None
        self.closed = threading.Event()

    def start(self) -> None:
        self._thread = threading.Thread(target=self.run, daemon=True, name="offload-session")
        self._thread.start()

    def _send(self, payload) -> None:
        with self._write_lock:
            if self.closed.is_set():
                return
            try:
                self.transport.send(protocol.encode(Message(next(self._seq), payload)))
            except (ConnectionLost, OSError):
                self.close()

    def _execute(self, seq: int, payload: Execute) -> None:
        t0 = time.perf_counter()
        try:
            reply = self.server.handle_execute(payload, seq)
        except Exception as exc:  # never leave a request unanswered
            log.exception("execute failed")
            reply = Error(seq, ErrorCode.INTERNAL, repr(exc))
        log.info(json.dumps({
            "event": "execute", "task": payload.task_id, "seq": seq,
            "bytes_in": len(payload.serialized_args) + len(payload.serialized_state),
            "outcome": type(reply).__name__, "ms": round((time.perf_counter() - t0) * 1e3, 3)}))
        self._send(reply)

    def run(self) -> None:
        srv = self.server
        try:
            while not self.closed.is_set():
                try:
                    msg = protocol.decode(self.transport.recv(), srv.max_frame)
                except protocol.ProtocolError as exc:
                    log.warning("dropping client after bad frame: %s", exc)
                    break
                p = msg.payload
                if isinstance(p, Execute):
                    try:
                        self._executor.submit(self._execute, msg.seq, p)
                    except RuntimeError:
                        break
                elif isinstance(p, Ping):
                    self._send(Pong(msg.seq))
                elif isinstance(p, RegisterApp):
                    unknown = tuple(t for t in p.tasks if not srv.knows(tuple(t)))
                    self._send(NeedTask(msg.seq, unknown))
                elif isinstance(p, TaskBundleTransfer):
                    reason = srv.install(p)
                    if reason is None:
                        self._send(NeedTask(msg.seq, ()))
                    else:
                        self._send(Error(msg.seq, ErrorCode.BUNDLE_REJECTED, reason))
                else:
                    self._send(Error(msg.seq, ErrorCode.BAD_REQUEST, f"unexpected {msg.type.name}"))
        except (ConnectionLost, OSError):
            pass
        finally:
            self.close()

    def close(self) -> None:
        if not self.closed.is_set():
            self.closed.set()
            self._executor.shutdown(wait=False, cancel_futures=True)
            self.transport.close()


class TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    app: AppServer

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


class _TcpHandler(socketserver.BaseRequestHandler):
    def handle(self):
        app = self.server.app
        session = app.attach(SocketTransport(self.request, app.max_frame), start=False)
        session.run()
