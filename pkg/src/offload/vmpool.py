"""Simulated elastic pool of server clones.

Six clone configurations are available, ordered by power. Secondary clones
move between powered-off, paused and running. Resuming a paused clone costs
``resume_ms_base`` and degrades linearly with the number resumed at once;
booting a powered-off clone costs ``coldstart_ms``.
"""

from __future__ import annotations

import configparser
import dataclasses
import itertools
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

from .clock import VirtualClock, make_clock


class PoolExhausted(RuntimeError):
    pass


class NoLargerConfig(LookupError):
    pass


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class VmConfig:
    name: str
    cpus: int
    memory_mb: int
    heap_mb: int
    speed_factor: float = 1.0  # per-CPU throughput relative to "main"

    @property
    def throughput(self) -> float:
        return self.speed_factor * self.cpus


TABLE1: tuple[VmConfig, ...] = (
    VmConfig("basic", 1, 200, 32),
    VmConfig("main", 1, 512, 100),
    VmConfig("large", 1, 1024, 100),
    VmConfig("x2large", 2, 1024, 100),
    VmConfig("x4large", 4, 1024, 100),
    VmConfig("x8large", 8, 1024, 100),
)
CONFIG_NAMES = tuple(c.name for c in TABLE1)


def get_config(name: str, configs: Sequence[VmConfig] = TABLE1) -> VmConfig:
    for c in configs:
        if c.name == name:
            return c
    raise KeyError(f"unknown VM config {name!r}")


def escalate(config: VmConfig, configs: Sequence[VmConfig] = TABLE1) -> VmConfig:
    """Next more powerful configuration."""
    names = [c.name for c in configs]
    i = names.index(config.name)
    if i + 1 >= len(configs):
        raise NoLargerConfig(f"{config.name} is the largest configuration")
    return configs[i + 1]


class VmState(Enum):
    POWERED_OFF = "PoweredOff"
    PAUSED = "Paused"
    RUNNING = "Running"


@dataclass
class VmInstance:
    id: int
    config: VmConfig
    state: VmState = VmState.PAUSED
    busy: bool = False
    idle_since: float = 0.0
    primary: bool = False
    large_heap: bool = False  # clone started with the high-heap option

    @property
    def heap_limit_mb(self) -> int:
        return self.config.memory_mb if self.large_heap else self.config.heap_mb


@dataclass(frozen=True)
class PoolPolicy:
    resume_ms_base: float = 300.0
    resume_contention_coeff: float = 3.44
    coldstart_ms: float = 32000.0
    pause_after_idle_s: float = 300.0
    max_running: int = 32

    def __post_init__(self):
        if self.resume_ms_base <= 0 or self.coldstart_ms <= 0 or self.pause_after_idle_s <= 0:
            raise ValueError("latencies must be > 0")

    def resume_ms(self, simultaneous: int) -> float:
        return self.resume_ms_base * (1.0 + self.resume_contention_coeff * (simultaneous - 1))


DEFAULT_COUNTS = {"basic": 1, "main": 7, "large": 1, "x2large": 1, "x4large": 1, "x8large": 1}


@dataclass
class Acquisition:
    instances: list[VmInstance]
    per_vm_ms: list[float]

    @property
    def overhead_ms(self) -> float:
        # clones start in parallel; the request waits for the slowest
        return max(self.per_vm_ms, default=0.0)

    @property
    def resumed(self) -> int:
        return sum(1 for ms in self.per_vm_ms if ms > 0)


@dataclass
class PartProfile:
    vm_id: int
    vm_config: str
    work_units: int
    compute_ms: float


@dataclass
class SplitResult:
    result: Any
    parts: list[PartProfile]

    @property
    def makespan_ms(self) -> float:
        return max((p.compute_ms for p in self.parts), default=0.0)


class VmPool:
    """Thread-safe pool of simulated clones plus the always-on primary."""

    def __init__(self, policy: PoolPolicy | None = None, counts: dict[str, int] | None = None,
                 configs: Sequence[VmConfig] = TABLE1, clock=None, latency_scale: float = 1.0):
        self.policy = policy or PoolPolicy()
        self.configs = tuple(configs)
        self.clock = clock or VirtualClock()
        self.latency_scale = latency_scale
        self._ids = itertools.count(1)
        self._lock = threading.RLock()
        self.instances: list[VmInstance] = []
        self.primary = VmInstance(0, get_config("main", self.configs), VmState.RUNNING, primary=True)
        for name, n in (DEFAULT_COUNTS if counts is None else counts).items():
            cfg = get_config(name, self.configs)
            for _ in range(n):
                self.instances.append(VmInstance(next(self._ids), cfg, VmState.PAUSED,
                                                 idle_since=self.clock.now()))

    @property
    def deterministic(self) -> bool:
        return getattr(self.clock, "deterministic", True)

    def count(self, state: VmState, config: str | None = None) -> int:
        with self._lock:
            return sum(1 for i in self.instances
                       if i.state is state and (config is None or i.config.name == config))

    def running(self) -> int:
        return self.count(VmState.RUNNING) + 1

    def acquire(self, config: VmConfig | str, n: int = 1, large_heap: bool = False) -> Acquisition:
        """Bring ``n`` clones of ``config`` to Running, paused ones first."""
        if n < 1:
            raise ValueError("n must be >= 1")
        cfg = get_config(config, self.configs) if isinstance(config, str) else config
        with self._lock:
            if self.running() + n > self.policy.max_running:
                raise PoolExhausted(f"{n} more running clones would exceed {self.policy.max_running}")
            paused = [i for i in self.instances
                      if i.config.name == cfg.name and i.state is VmState.PAUSED]
            off = [i for i in self.instances
                   if i.config.name == cfg.name and i.state is VmState.POWERED_OFF]
            chosen = paused[:n]
            resumed = len(chosen)
            chosen += off[:n - len(chosen)]
            while len(chosen) < n:
                inst = VmInstance(next(self._ids), cfg, VmState.POWERED_OFF)
                self.instances.append(inst)
                chosen.append(inst)
            per_vm = []
            resume_ms = self.policy.resume_ms(resumed) if resumed else 0.0
            for inst in chosen:
                per_vm.append(resume_ms if inst.state is VmState.PAUSED else self.policy.coldstart_ms)
                inst.state = VmState.RUNNING
                inst.busy = False
                inst.large_heap = large_heap
        acq = Acquisition(chosen, per_vm)
        if not self.deterministic:
            time.sleep(acq.overhead_ms * self.latency_scale / 1e3)
        return acq

    def release(self, instances: Sequence[VmInstance]) -> None:
        with self._lock:
            for inst in instances:
                if inst.primary:
                    raise ContractViolation("the primary clone is never released")
                if inst.busy:
                    raise ContractViolation(f"vm {inst.id} is busy")
                if inst.state is not VmState.RUNNING:
                    raise ContractViolation(f"vm {inst.id} is {inst.state.value}, not Running")
            now = self.clock.now()
            for inst in instances:
                inst.state = VmState.PAUSED
                inst.large_heap = False
                inst.idle_since = now

    def tick(self) -> list[VmInstance]:
        """Power off clones paused for longer than the idle threshold."""
        now = self.clock.now()
        off = []
        with self._lock:
            for inst in self.instances:
                if inst.state is VmState.PAUSED and now - inst.idle_since >= self.policy.pause_after_idle_s:
                    inst.state = VmState.POWERED_OFF
                    off.append(inst)
        return off

    def compute_ms(self, work_ms: float, config: VmConfig) -> float:
        return work_ms / config.throughput

    def run_on(self, inst: VmInstance, fn: Callable[[], Any]) -> Any:
        with self._lock:
            if inst.state is not VmState.RUNNING:
                raise ContractViolation(f"vm {inst.id} is not running")
            inst.busy = True
        try:
            return fn()
        finally:
            with self._lock:
                inst.busy = False

    def split_and_distribute(self, task, input, instances: Sequence[VmInstance],
                             merge: Callable | None = None) -> SplitResult:
        """Partition ``input`` across ``instances``, run the parts concurrently
        and merge. Simulated part time is ``work / throughput``; in wall-clock
        mode the measured time is used instead."""
        if not instances:
            raise ValueError("need at least one instance")
        if not task.splittable:
            raise ValueError(f"task {task.task_id} is not splittable")
        parts = task.split(input, len(instances))
        merge = merge or task.merge

        def run_part(inst, part):
            def body():
                t0 = time.perf_counter()
                out = task.run(part)
                wall = (time.perf_counter() - t0) * 1e3
                units = task.work_units(part)
                ms = (self.compute_ms(units * task.ms_per_unit, inst.config)
                      if self.deterministic else wall)
                return out, PartProfile(inst.id, inst.config.name, units, ms)
            return self.run_on(inst, body)

        with ThreadPoolExecutor(max_workers=len(instances)) as ex:
            futures = [ex.submit(run_part, inst, part) for inst, part in zip(instances, parts)]
        outcomes = []
        for fut in futures:
            exc = fut.exception()
            if exc is not None:
                raise exc
            outcomes.append(fut.result())
        return SplitResult(merge([o for o, _ in outcomes]), [p for _, p in outcomes])

    def dump_state(self) -> str:
        """One JSON object per instance, primary first."""
        with self._lock:
            rows = [self.primary] + list(self.instances)
            return "".join(json.dumps({
                "id": i.id, "config": i.config.name, "state": i.state.value, "busy": i.busy,
                "idle_since": i.idle_since, "primary": i.primary}) + "\n" for i in rows)


def load_pool(path) -> VmPool:
    """Build a pool from an INI file with optional [pool], [counts] and
    [speed] sections. ``[pool] clock`` is ``deterministic`` or ``wall``."""
    parser = configparser.ConfigParser()
    parser.read_string(Path(path).read_text())
    sec = parser["pool"] if parser.has_section("pool") else {}
    defaults = PoolPolicy()
    policy = PoolPolicy(**{
        f.name: type(getattr(defaults, f.name))(sec[f.name])
        for f in dataclasses.fields(PoolPolicy) if f.name in sec
    })
    configs = list(TABLE1)
    if parser.has_section("speed"):
        configs = [dataclasses.replace(c, speed_factor=parser["speed"].getfloat(c.name, c.speed_factor))
                   for c in configs]
    counts = None
    if parser.has_section("counts"):
        counts = {k: int(v) for k, v in parser["counts"].items()}
    clock = make_clock(sec.get("clock", "deterministic") if sec else "deterministic")
    scale = float(sec.get("latency_scale", 1.0)) if sec else 1.0
    return VmPool(policy, counts, configs, clock, scale)
