"""Client-side execution controller.

For every call the controller profiles the task, decides where to run it
under the active policy, executes locally or remotely, and records the
outcome in the history store. A connection failure during a remote call
falls back to local execution, discards the failed attempt's profile and
starts reconnecting in the background.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import pickle
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

from .clock import VirtualClock, WallClock
from .energy import EnergyBreakdown, PowerCoefficients, integrate_energy
from .errors import rebuild_exception
from .netem import SCENARIOS, LinkScenario, shape
from .profiling import (DeviceSettings, ExecutionRecord, HistoryStore, LinkType, Location,
                        NetworkProfile, NetworkProfiler, RadioState, RecordLog, input_bucket,
                        local_trace, measure_rtt, project_remote_energy, remote_trace)
from .protocol import (Error, ErrorCode, Execute, NeedTask, Ok, PowerRequest, RegisterApp, Result,
                       ServerProfile, TaskBundleTransfer)
from .transport import Connection, ConnectionLost
from .workloads import TaskBundle

log = logging.getLogger(__name__)


class Policy(Enum):
    NONE = "None"
    EXECUTION_TIME = "ExecutionTime"
    ENERGY = "Energy"
    EXECUTION_TIME_AND_ENERGY = "ExecutionTimeAndEnergy"


@dataclass(frozen=True)
class EnvContext:
    link_type: LinkType
    rtt_ms: float
    bw_up: float
    bw_down: float
    battery_percent: float = 100.0
    good_rtt_threshold_ms: float = 100.0
    connected: bool = True


@dataclass(frozen=True)
class OffloadDecision:
    location: Location
    requested_config: str | None = None
    requested_vms: int = 1

    def __post_init__(self):
        if self.requested_vms < 1:
            raise ValueError("requested_vms must be >= 1")

    @property
    def remote(self) -> bool:
        return self.location is Location.REMOTE


LOCAL = OffloadDecision(Location.LOCAL)


@dataclass(frozen=True)
class Estimates:
    local_time_ms: float
    local_energy_mj: float
    remote_time_ms: float
    remote_energy_mj: float


def estimate_remote(summary, env: EnvContext, settings: DeviceSettings = DeviceSettings(),
                    coeffs: PowerCoefficients | None = None) -> tuple[float, float]:
    """Projected (time ms, energy mJ) of offloading given a remote summary.

    Time is server time plus transfer time plus two round trips.
    """
    up_ms = env.rtt_ms + summary.ewma_tx / env.bw_up * 1e3
    down_ms = env.rtt_ms + summary.ewma_rx / env.bw_down * 1e3
    energy = project_remote_energy(env.link_type, up_ms, summary.ewma_server_ms, down_ms,
                                   round(summary.ewma_tx), round(summary.ewma_rx), settings, coeffs)
    return up_ms + summary.ewma_server_ms + down_ms, energy.total


def decide(task_id: str, bucket: int, policy: Policy, env: EnvContext, history: HistoryStore, *,
           splittable: bool = False, servers: int = 1, server_config: str | None = None,
           settings: DeviceSettings = DeviceSettings(), coeffs: PowerCoefficients | None = None,
           trace: list | None = None) -> OffloadDecision:
    """Where to run the next call of ``task_id``. Ties go local."""
    if policy is Policy.NONE or not env.connected or env.link_type is LinkType.NONE:
        return LOCAL
    vms = servers if splittable else 1
    if server_config and server_config != "main":
        cfg = server_config
    else:
        cfg = "main" if vms > 1 else None
    remote = OffloadDecision(Location.REMOTE, cfg, vms)
    local = history.get(task_id, bucket, Location.LOCAL)
    rem = history.get(task_id, bucket, Location.REMOTE)
    if local is None or rem is None:
        good = env.link_type.is_wifi and env.rtt_ms <= env.good_rtt_threshold_ms
        return remote if good else LOCAL
    r_time, r_energy = estimate_remote(rem, env, settings, coeffs)
    est = Estimates(local.ewma_time_ms, local.ewma_energy_mj, r_time, r_energy)
    if trace is not None:
        trace.append(est)
    faster = r_time < local.ewma_time_ms
    cheaper = r_energy < local.ewma_energy_mj
    go = {
        Policy.EXECUTION_TIME: faster,
        Policy.ENERGY: cheaper,
        Policy.EXECUTION_TIME_AND_ENERGY: faster and cheaper,
    }[policy]
    return remote if go else LOCAL


@dataclass
class ExecutionReport:
    task_id: str
    decision: OffloadDecision
    location: Location
    wall_time_ms: float
    energy: EnergyBreakdown
    tx_bytes: int = 0
    rx_bytes: int = 0
    overhead_ms: float = 0.0
    server_ms: float = 0.0
    fell_back: bool = False
    compute_ms: float = 0.0
    estimates: Estimates | None = None
    profile: ServerProfile | None = None


class ConnState(Enum):
    DISCONNECTED = "Disconnected"
    CONNECTED = "Connected"
    SHUTDOWN = "Shutdown"


@dataclass
class ReconnectPolicy:
    initial_s: float = 0.5
    factor: float = 2.0
    cap_s: float = 30.0

    def delays(self):
        d = self.initial_s
        while True:
            yield d
            d = min(d * self.factor, self.cap_s)


class ClientRuntime:
    """Connection, history and device model shared by the controllers of
    one application."""

    def __init__(self, tasks, scenario: LinkScenario | str = "WifiLocal",
                 connect: Callable[[], Any] | None = None, *, history: HistoryStore | None = None,
                 record_log: RecordLog | None = None, deterministic: bool = True,
                 local_slowdown: float = 10.0, alpha: float = 0.5,
                 good_rtt_threshold_ms: float = 100.0, servers: int = 1,
                 server_config: str = "main", settings: DeviceSettings = DeviceSettings(),
                 coeffs: PowerCoefficients | None = None, app_id: str = "app",
                 reconnect: ReconnectPolicy | None = None,
                 sleep: Callable[[float], Any] | None = None, jitter_seed: int = 0):
        self.tasks: dict[str, TaskBundle] = {t.task_id: t for t in tasks}
        self.scenario = SCENARIOS[scenario] if isinstance(scenario, str) else scenario
        self.connect_fn = connect
        self.history = history if history is not None else HistoryStore(alpha)
        self.record_log = record_log
        self.deterministic = deterministic
        self.clock = VirtualClock() if deterministic else WallClock()
        self.local_slowdown = local_slowdown
        self.good_rtt_threshold_ms = good_rtt_threshold_ms
        self.servers = servers
        self.server_config = server_config
        self.settings = settings
        self.coeffs = coeffs or PowerCoefficients()
        self.app_id = app_id
        self.reconnect_policy = reconnect or ReconnectPolicy()
        self.jitter_seed = jitter_seed
        self.radio = RadioState()
        self.local_only: set[str] = set()
        self.net = NetworkProfiler(NetworkProfile(self.scenario.link_type), alpha)
        self.conn: Connection | None = None
        self.state = ConnState.DISCONNECTED
        self._stop = threading.Event()
        self._sleep = sleep or self._stop.wait
        self._reconnector: threading.Thread | None = None
        self._lock = threading.RLock()

    # -- connection management -----------------------------------------------

    @property
    def connected(self) -> bool:
        return self.state is ConnState.CONNECTED and self.conn is not None and not self.conn.lost

    def connect(self) -> bool:
        """Open, shape and register a connection. PhoneOnly never connects."""
        if not self.scenario.has_transport or self.connect_fn is None:
            return False
        raw = self.connect_fn()
        shaped = shape(raw, self.scenario, self.deterministic, self.jitter_seed)
        conn = Connection(shaped, self.net)
        try:
            self._register(conn)
            rtt = measure_rtt(lambda: conn.ping(measured=not self.deterministic), 3, None)
        except (ConnectionLost, OSError):
            conn.close()
            raise ConnectionLost("connection failed during setup")
        with self._lock:
            self.conn = conn
            self.net.profile.rtt_ms = rtt
            self.net.profile.bw_up = self.scenario.bw_up
            self.net.profile.bw_down = self.scenario.bw_down
            self.state = ConnState.CONNECTED
        log.info(json.dumps({"event": "connected", "scenario": self.scenario.name, "rtt_ms": rtt}))
        return True

    def _register(self, conn: Connection) -> None:
        manifest = tuple(sorted(t.key for t in self.tasks.values()))
        reply = conn.request(RegisterApp(self.app_id, manifest)).reply.payload
        if not isinstance(reply, NeedTask):
            raise ConnectionLost(f"unexpected registration reply {reply!r}")
        for task_id, version in reply.tasks:
            bundle = self.tasks[task_id]
            ack = conn.request(TaskBundleTransfer(task_id, version, bundle.digest())).reply.payload
            if isinstance(ack, Error):
                log.info(json.dumps({"event": "bundle_rejected", "task": task_id,
                                     "reason": ack.message}))
                self.local_only.add(task_id)

    def mark_lost(self) -> None:
        with self._lock:
            if self.conn is not None:
                self.conn.close()
            self.conn = None
            if self.state is not ConnState.SHUTDOWN:
                self.state = ConnState.DISCONNECTED

    def reconnect_async(self) -> threading.Thread | None:
        """Retry ``connect`` with bounded exponential backoff in the background."""
        with self._lock:
            if self.state is ConnState.SHUTDOWN or self.connect_fn is None:
                return None
            if self._reconnector is not None and self._reconnector.is_alive():
                return self._reconnector
            self._reconnector = threading.Thread(target=self._reconnect_loop, daemon=True,
                                                 name="offload-reconnect")
            self._reconnector.start()
            return self._reconnector

    def _reconnect_loop(self) -> None:
        for delay in self.reconnect_policy.delays():
            if self._stop.is_set():
                return
            try:
                if self.connect():
                    return
            except (ConnectionLost, OSError) as exc:
                log.info(json.dumps({"event": "reconnect_failed", "error": str(exc),
                                     "retry_in_s": delay}))
            if self._stop.is_set():
                return
            self._sleep(delay)

    def shutdown(self) -> None:
        self._stop.set()
        with self._lock:
            self.state = ConnState.SHUTDOWN
            if self.conn is not None:
                self.conn.close()
                self.conn = None

    # -- environment ----------------------------------------------------------

    def env(self) -> EnvContext:
        p = self.net.profile
        return EnvContext(self.scenario.link_type, p.rtt_ms or self.scenario.rtt_ms,
                          p.bw_up or self.scenario.bw_up or 1.0,
                          p.bw_down or self.scenario.bw_down or 1.0,
                          self.settings.battery_percent, self.good_rtt_threshold_ms,
                          self.connected)

    def task(self, task_id: str) -> TaskBundle:
        return self.tasks[task_id]

    def record(self, rec: ExecutionRecord) -> None:
        self.history.record(rec)
        if self.record_log is not None:
            self.record_log.append(rec)


class ExecutionController:
    """Runs calls for one thread of execution."""

    def __init__(self, runtime: ClientRuntime, policy: Policy = Policy.EXECUTION_TIME):
        self.runtime = runtime
        self.policy = policy
        self.last: ExecutionReport | None = None

    def execute(self, task: TaskBundle | str, input, policy: Policy | None = None,
                state: dict | None = None, force: OffloadDecision | None = None):
        rt = self.runtime
        task = rt.task(task) if isinstance(task, str) else task
        policy = policy or self.policy
        bucket = input_bucket(task.input_size_proxy(input))
        estimates: list = []
        if force is not None:
            decision = force
        elif task.task_id in rt.local_only:
            decision = LOCAL
        else:
            decision = decide(task.task_id, bucket, policy, rt.env(), rt.history,
                              splittable=task.splittable, servers=rt.servers,
                              server_config=rt.server_config, settings=rt.settings,
                              coeffs=rt.coeffs, trace=estimates)
        est = estimates[0] if estimates else None
        log.info(json.dumps({"event": "decision", "task": task.task_id, "bucket": bucket,
                             "policy": policy.value, "location": decision.location.value,
                             "vms": decision.requested_vms,
                             "estimates": dataclasses.asdict(est) if est else None}))
        if decision.remote and rt.connected:
            try:
                out, report = self._run_remote(task, input, state, bucket, decision)
            except ConnectionLost:
                log.info(json.dumps({"event": "fallback", "task": task.task_id}))
                rt.mark_lost()
                rt.reconnect_async()
                out, report = self._run_local(task, input, state, bucket, decision, record=False)
                report.fell_back = True
            except _Rejected as rej:
                if rej.code in (ErrorCode.TASK_UNKNOWN, ErrorCode.BUNDLE_REJECTED):
                    rt.local_only.add(task.task_id)
                log.info(json.dumps({"event": "rejected", "task": task.task_id,
                                     "code": rej.code.name, "reason": rej.message}))
                out, report = self._run_local(task, input, state, bucket, decision)
        else:
            out, report = self._run_local(task, input, state, bucket,
                                          decision if not decision.remote else LOCAL)
        report.estimates = est
        self.last = report
        log.info(json.dumps({"event": "actual", "task": task.task_id,
                             "location": report.location.value,
                             "wall_time_ms": report.wall_time_ms,
                             "energy_mj": report.energy.total, "tx": report.tx_bytes,
                             "rx": report.rx_bytes, "fell_back": report.fell_back}))
        return out

    def _run_local(self, task, input, state, bucket, decision, record: bool = True):
        rt = self.runtime
        t0 = time.perf_counter()
        out = task.run(input, state) if task.stateful else task.run(input)
        measured = (time.perf_counter() - t0) * 1e3
        wall = task.cost_ms(input) * rt.local_slowdown if rt.deterministic else measured
        energy = integrate_energy(local_trace(wall, rt.scenario.link_type, rt.settings), rt.coeffs)
        if record:
            rt.record(ExecutionRecord(task.task_id, bucket, Location.LOCAL, wall, energy,
                                      timestamp=rt.clock.now()))
        if rt.deterministic:
            rt.clock.advance(wall / 1e3)
        return out, ExecutionReport(task.task_id, decision, Location.LOCAL, wall, energy)

    def _run_remote(self, task, input, state, bucket, decision):
        rt = self.runtime
        conn = rt.conn
        if conn is None:
            raise ConnectionLost("not connected")
        power = None
        if decision.requested_config or decision.requested_vms > 1:
            power = PowerRequest(decision.requested_config or "main", decision.requested_vms)
        payload = Execute(task.task_id, task.version, bucket,
                          pickle.dumps(state) if task.stateful else b"",
                          pickle.dumps(input), power)
        ex = conn.request(payload)
        reply = ex.reply.payload
        if isinstance(reply, Error):
            raise _Rejected(reply.code, reply.message)
        if not isinstance(reply, Result):
            raise ConnectionLost(f"unexpected reply {ex.reply.type.name}")
        if not isinstance(reply.outcome, Ok):
            raise rebuild_exception(reply.outcome.kind, reply.outcome.message)
        out = pickle.loads(reply.outcome.result_bytes)
        if task.stateful and state is not None and reply.outcome.state_delta_bytes:
            new_state = pickle.loads(reply.outcome.state_delta_bytes)
            state.clear()
            state.update(new_state)
        prof = reply.profile
        if rt.deterministic:
            server_ms = prof.compute_ms + prof.overhead_ms
            up_ms, down_ms = ex.up_ms, ex.down_ms
            wall = up_ms + server_ms + down_ms
        else:
            wall = ex.elapsed_ms
            server_ms = min(wall, prof.compute_ms + prof.overhead_ms)
            up_ms = down_ms = (wall - server_ms) / 2
        overhead = wall - prof.compute_ms
        trace = remote_trace(rt.scenario.link_type, up_ms, server_ms, down_ms, ex.tx_bytes,
                             ex.rx_bytes, rt.settings, rt.radio)
        energy = integrate_energy(trace, rt.coeffs)
        rt.record(ExecutionRecord(task.task_id, bucket, Location.REMOTE, wall, energy,
                                  ex.tx_bytes, ex.rx_bytes, overhead, server_ms,
                                  prof.vm_config, prof.n_vms, rt.clock.now()))
        if rt.deterministic:
            rt.clock.advance(wall / 1e3)
        return out, ExecutionReport(task.task_id, decision, Location.REMOTE, wall, energy,
                                    ex.tx_bytes, ex.rx_bytes, overhead, server_ms,
                                    compute_ms=prof.compute_ms, profile=prof)


class _Rejected(Exception):
    """The server answered with an Error frame; the call runs locally."""

    def __init__(self, code: ErrorCode, message: str):
        super().__init__(f"{code.name}: {message}")
        self.code = code
        self.message = message
