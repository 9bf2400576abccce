"""Device, program and network profilers plus the execution history store."""

from __future__ import annotations

import gc
import json
import math
import statistics
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .energy import (CellFsm, CellState, CpuFreq, DeviceState, EnergyBreakdown, WifiFsm,
                     WifiState, PowerCoefficients, integrate_energy, step_cell_fsm,
                     step_wifi_fsm)

MTU_PAYLOAD = 1460


class LinkType(Enum):
    NONE = "None"
    WIFI_LOCAL = "WifiLocal"
    WIFI_INTERNET = "WifiInternet"
    CELLULAR_3G = "Cellular3G"

    @property
    def is_wifi(self) -> bool:
        return self in (LinkType.WIFI_LOCAL, LinkType.WIFI_INTERNET)


class Location(Enum):
    LOCAL = "local"
    REMOTE = "remote"


def update_ewma(old: float | None, new_sample: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if old is None:
        return new_sample
    return alpha * new_sample + (1.0 - alpha) * old


def input_bucket(size_proxy: float) -> int:
    """floor(log2(size_proxy + 1)), exact for integers."""
    if size_proxy < 0:
        raise ValueError("size proxy must be >= 0")
    if float(size_proxy).is_integer():
        return (int(size_proxy) + 1).bit_length() - 1
    return math.floor(math.log2(size_proxy + 1))


# -- profiles -----------------------------------------------------------------

@dataclass
class ProgramProfile:
    wall_time: float = 0.0        # ms
    thread_cpu_time: float = 0.0  # ms
    work_units: int = 0
    alloc_bytes: int = 0
    gc_or_reclaim_count: int = 0


class ProgramProfiler:
    """Context manager measuring one task run on the current thread."""

    def __init__(self, work_units: int = 0, alloc_bytes: int = 0):
        self.profile = ProgramProfile(work_units=work_units, alloc_bytes=alloc_bytes)

    def __enter__(self):
        self._t0 = time.perf_counter()
        self._c0 = time.thread_time()
        self._gc0 = sum(s["collections"] for s in gc.get_stats())
        return self

    def __exit__(self, *exc):
        self.profile.wall_time = (time.perf_counter() - self._t0) * 1e3
        self.profile.thread_cpu_time = min((time.thread_time() - self._c0) * 1e3,
                                           self.profile.wall_time)
        self.profile.gc_or_reclaim_count = sum(s["collections"] for s in gc.get_stats()) - self._gc0
        return False


@dataclass
class NetworkProfile:
    link_type: LinkType = LinkType.NONE
    rtt_ms: float = 0.0
    bw_up: float = 0.0
    bw_down: float = 0.0
    pkts_tx_per_s: float = 0.0
    pkts_rx_per_s: float = 0.0


class NetworkProfiler:
    """Counts frames and bytes as they cross the transport."""

    def __init__(self, profile: NetworkProfile | None = None, alpha: float = 0.5):
        self.profile = profile or NetworkProfile()
        self.alpha = alpha
        self.bytes_tx = 0
        self.bytes_rx = 0
        self.frames_tx = 0
        self.frames_rx = 0
        self._lock = threading.Lock()

    def on_send(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_tx += nbytes
            self.frames_tx += 1

    def on_recv(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_rx += nbytes
            self.frames_rx += 1

    def observe_rtt(self, rtt_ms: float) -> None:
        with self._lock:
            old = self.profile.rtt_ms if self.profile.rtt_ms > 0 else None
            self.profile.rtt_ms = update_ewma(old, rtt_ms, self.alpha)


def measure_rtt(ping: Callable[[], float], k: int = 3,
                profiler: NetworkProfiler | None = None) -> float:
    """Median of ``k`` application-level ping round trips, in ms.

    ``ping`` performs one round trip and returns its duration; transport
    failures propagate to the caller.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rtt = statistics.median(ping() for _ in range(k))
    if profiler is not None:
        profiler.observe_rtt(rtt)
    return rtt


# -- device / energy projection ----------------------------------------------

@dataclass(frozen=True)
class DeviceSettings:
    brightness: int = 128
    wait_util: float = 5.0
    wait_freq: CpuFreq = CpuFreq.LOW
    busy_util: float = 100.0
    busy_freq: CpuFreq = CpuFreq.HIGH
    battery_percent: float = 100.0  # collected, unused by policies


def _radios(link: LinkType) -> tuple[WifiState, CellState]:
    if link.is_wifi:
        return WifiState.LOW_POWER, CellState.OFF
    if link is LinkType.CELLULAR_3G:
        return WifiState.OFF, CellState.IDLE
    return WifiState.OFF, CellState.OFF


def local_trace(local_ms: float, link: LinkType,
                settings: DeviceSettings = DeviceSettings()) -> list[tuple[DeviceState, float]]:
    if local_ms <= 0:
        return []
    wifi, cell = _radios(link)
    state = DeviceState(cpu_util=settings.busy_util, cpu_freq=settings.busy_freq, cpu_on=True,
                        brightness=settings.brightness, wifi=wifi, cell=cell)
    return [(state, local_ms / 1e3)]


def _cell_segments(fsm: CellFsm, tx: int, rx: int, seconds: float):
    """Step the RRC machine across ``seconds``, splitting at demotion points."""
    if seconds <= 0:
        return fsm, []
    if tx or rx:
        fsm = step_cell_fsm(fsm, tx, rx, seconds)
        return fsm, [(fsm.state, seconds)]
    out = []
    remaining = seconds
    while remaining > 1e-12:
        if fsm.state is CellState.DCH:
            piece = min(remaining, fsm.dch_timeout - fsm.dch_inactivity)
        elif fsm.state is CellState.FACH:
            piece = min(remaining, fsm.fach_timeout - fsm.fach_inactivity)
        else:
            piece = remaining
        out.append((fsm.state, piece))
        fsm = step_cell_fsm(fsm, 0, 0, piece)
        remaining -= piece
    return fsm, out


@dataclass
class RadioState:
    """Radio machines carried across calls by one client runtime."""

    cell: CellFsm = field(default_factory=CellFsm)
    wifi: WifiFsm = field(default_factory=WifiFsm)


def remote_trace(link: LinkType, up_ms: float, server_ms: float, down_ms: float,
                 tx_bytes: int, rx_bytes: int, settings: DeviceSettings = DeviceSettings(),
                 radio: RadioState | None = None) -> list[tuple[DeviceState, float]]:
    """Device trace while a call is offloaded: send, wait, receive.

    The CPU sits near idle, the screen stays on and the active radio follows
    its power-state machine driven by the call's traffic. ``radio`` is
    updated in place when given.
    """
    radio = radio if radio is not None else RadioState()
    phases = [(up_ms / 1e3, tx_bytes, 0), (server_ms / 1e3, 0, 0), (down_ms / 1e3, 0, rx_bytes)]
    base = dict(cpu_util=settings.wait_util, cpu_freq=settings.wait_freq, cpu_on=True,
                brightness=settings.brightness)
    trace: list[tuple[DeviceState, float]] = []
    for seconds, tx, rx in phases:
        if seconds <= 0:
            continue
        if link.is_wifi:
            packets = math.ceil((tx + rx) / MTU_PAYLOAD)
            radio.wifi, segs = step_wifi_fsm(radio.wifi, packets / seconds, tx > 0, seconds)
            trace += [(DeviceState(wifi=w, cell=CellState.OFF, **base), d) for w, d in segs if d > 0]
        elif link is LinkType.CELLULAR_3G:
            radio.cell, segs = _cell_segments(radio.cell, tx, rx, seconds)
            trace += [(DeviceState(wifi=WifiState.OFF, cell=c, **base), d) for c, d in segs if d > 0]
        else:
            trace.append((DeviceState(**base), seconds))
    return trace


def project_remote_energy(link: LinkType, up_ms: float, server_ms: float, down_ms: float,
                          tx_bytes: int, rx_bytes: int, settings: DeviceSettings = DeviceSettings(),
                          coeffs: PowerCoefficients | None = None,
                          radio: RadioState | None = None) -> EnergyBreakdown:
    # projection must not disturb the caller's radio machines
    probe = RadioState(radio.cell, radio.wifi) if radio is not None else None
    trace = remote_trace(link, up_ms, server_ms, down_ms, tx_bytes, rx_bytes, settings, probe)
    return integrate_energy(trace, coeffs)


# -- history ------------------------------------------------------------------

RECORD_FIELDS = ("task_id", "input_bucket", "location", "vm_config", "n_vms", "wall_time_ms",
                 "energy", "tx_bytes", "rx_bytes", "overhead_ms", "server_ms", "timestamp")


@dataclass(frozen=True)
class ExecutionRecord:
    task_id: str
    input_bucket: int
    location: Location
    wall_time_ms: float
    energy: EnergyBreakdown = EnergyBreakdown()
    tx_bytes: int = 0
    rx_bytes: int = 0
    overhead_ms: float = 0.0
    server_ms: float = 0.0  # remote compute + VM overhead as reported by the server
    vm_config: str | None = None
    n_vms: int = 1
    timestamp: float = 0.0

    def __post_init__(self):
        if self.location is Location.LOCAL and (self.tx_bytes or self.rx_bytes):
            raise ValueError("local records carry no traffic")
        if self.location is Location.REMOTE and self.overhead_ms > self.wall_time_ms + 1e-9:
            raise ValueError("overhead exceeds wall time")

    def to_json(self) -> str:
        d = {
            "task_id": self.task_id,
            "input_bucket": self.input_bucket,
            "location": self.location.value,
            "vm_config": self.vm_config,
            "n_vms": self.n_vms,
            "wall_time_ms": self.wall_time_ms,
            "energy": self.energy.to_dict(),
            "tx_bytes": self.tx_bytes,
            "rx_bytes": self.rx_bytes,
            "overhead_ms": self.overhead_ms,
            "server_ms": self.server_ms,
            "timestamp": self.timestamp,
        }
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "ExecutionRecord":
        d = json.loads(line)
        return cls(task_id=d["task_id"], input_bucket=d["input_bucket"],
                   location=Location(d["location"]), wall_time_ms=d["wall_time_ms"],
                   energy=EnergyBreakdown.from_dict(d["energy"]), tx_bytes=d["tx_bytes"],
                   rx_bytes=d["rx_bytes"], overhead_ms=d["overhead_ms"], server_ms=d["server_ms"],
                   vm_config=d["vm_config"], n_vms=d["n_vms"], timestamp=d["timestamp"])


@dataclass(frozen=True)
class Summary:
    ewma_time_ms: float
    ewma_energy_mj: float
    sample_count: int
    ewma_tx: float = 0.0
    ewma_rx: float = 0.0
    ewma_server_ms: float = 0.0


class HistoryStore:
    """Per (task, input bucket, location) EWMA summaries.

    One writer, many readers; readers take consistent snapshots.
    """

    def __init__(self, alpha: float = 0.5):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        self.alpha = alpha
        self._data: dict[tuple[str, int, Location], Summary] = {}
        self._lock = threading.Lock()

    def record(self, rec: ExecutionRecord) -> None:
        key = (rec.task_id, rec.input_bucket, rec.location)
        a = self.alpha
        with self._lock:
            old = self._data.get(key)
            if old is None:
                new = Summary(rec.wall_time_ms, rec.energy.total, 1, rec.tx_bytes, rec.rx_bytes,
                              rec.server_ms)
            else:
                new = Summary(
                    update_ewma(old.ewma_time_ms, rec.wall_time_ms, a),
                    update_ewma(old.ewma_energy_mj, rec.energy.total, a),
                    old.sample_count + 1,
                    update_ewma(old.ewma_tx, rec.tx_bytes, a),
                    update_ewma(old.ewma_rx, rec.rx_bytes, a),
                    update_ewma(old.ewma_server_ms, rec.server_ms, a),
                )
            self._data[key] = new

    def get(self, task_id: str, bucket: int, location: Location) -> Summary | None:
        with self._lock:
            return self._data.get((task_id, bucket, location))

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self._data)

    def __len__(self):
        with self._lock:
            return len(self._data)

    def dumps(self) -> bytes:
        """Canonical serialization, stable across runs for equal contents."""
        rows = []
        for (task, bucket, loc), s in sorted(self.snapshot().items(),
                                             key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)):
            rows.append(json.dumps([task, bucket, loc.value, s.ewma_time_ms, s.ewma_energy_mj,
                                    s.sample_count, s.ewma_tx, s.ewma_rx, s.ewma_server_ms]))
        return ("\n".join(rows) + "\n").encode() if rows else b""


class RecordLog:
    """Line-delimited ExecutionRecord file; one JSON object per line with
    keys in ``RECORD_FIELDS`` order."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, rec: ExecutionRecord) -> None:
        with self._lock, self.path.open("a") as fh:
            fh.write(rec.to_json() + "\n")

    def records(self) -> Iterable[ExecutionRecord]:
        if not self.path.exists():
            return []
        with self.path.open() as fh:
            return [ExecutionRecord.from_json(line) for line in fh if line.strip()]

    def load_store(self, alpha: float = 0.5) -> HistoryStore:
        store = HistoryStore(alpha)
        for rec in self.records():
            store.record(rec)
        return store
