"""Evaluation harness: testbeds, boundary-input search and scenario matrices."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .appserver import AppServer, TaskRegistry
from .clock import make_clock
from .controller import ClientRuntime, ExecutionController, OffloadDecision, Policy
from .energy import EnergyBreakdown
from .netem import SCENARIOS, LinkScenario, get_scenario
from .profiling import Location
from .transport import pipe_pair
from .vmpool import VmPool
from .workloads import WORKLOADS, InputError, TaskBundle, generate_virus_corpus

log = logging.getLogger(__name__)

POLICIES = tuple(Policy)
SERVER_COUNTS = (1, 2, 4, 8)


@dataclass
class Testbed:
    """An application server and a client runtime joined by in-process pipes."""

    server: AppServer
    runtime: ClientRuntime
    controller: ExecutionController

    def close(self):
        self.runtime.shutdown()
        for s in list(self.server.sessions):
            s.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_testbed(scenario: LinkScenario | str = "WifiLocal", *, tasks: Iterable[TaskBundle] | None = None,
                 deterministic: bool = True, pool: VmPool | None = None, restricted: bool = False,
                 installed=None, policy: Policy = Policy.EXECUTION_TIME, connect: bool = True,
                 **runtime_kw) -> Testbed:
    tasks = list(tasks if tasks is not None else WORKLOADS.values())
    scenario = get_scenario(scenario) if isinstance(scenario, str) else scenario
    pool = pool or VmPool(clock=make_clock("deterministic" if deterministic else "wall"))
    server = AppServer(TaskRegistry(tasks), pool, restricted=restricted, installed=installed)

    def dial():
        client_end, server_end = pipe_pair()
        server.attach(server_end)
        return client_end

    runtime = ClientRuntime(tasks, scenario, dial, deterministic=deterministic, **runtime_kw)
    if deterministic and pool.deterministic:
        # one simulated timeline for both ends
        runtime.clock = pool.clock
    if connect and scenario.has_transport:
        runtime.connect()
    return Testbed(server, runtime, ExecutionController(runtime, policy))


# -- boundary input value -----------------------------------------------------

@dataclass
class BivResult:
    workload: str
    scenario: str
    biv: Any | None
    rows: list[tuple[Any, float, float]] = field(default_factory=list)  # (input, local, remote)


def find_biv(task: TaskBundle | str, scenario: LinkScenario | str, inputs: Sequence,
             policy: Policy = Policy.EXECUTION_TIME, *, stop_at_first: bool = False,
             **testbed_kw) -> BivResult:
    """Smallest input whose offloaded run beats local execution.

    Both placements are forced for every input so the comparison does not
    depend on the decision engine; results are checked against each other.
    """
    if policy is not Policy.EXECUTION_TIME:
        raise ValueError("boundary search compares execution time only")
    if len(inputs) == 0:
        raise InputError("empty input range")
    task = WORKLOADS[task] if isinstance(task, str) else task
    scen = get_scenario(scenario) if isinstance(scenario, str) else scenario
    tasks = testbed_kw.pop("tasks", None) or [task]
    res = BivResult(task.task_id, scen.name, None)
    with make_testbed(scen, tasks=tasks, **testbed_kw) as tb:
        ctl = tb.controller
        remote = OffloadDecision(Location.REMOTE, tb.runtime.server_config
                                 if tb.runtime.server_config != "main" else None)
        for x in inputs:
            local_out = ctl.execute(task, x, force=OffloadDecision(Location.LOCAL))
            local_ms = ctl.last.wall_time_ms
            remote_out = ctl.execute(task, x, force=remote)
            if ctl.last.location is not Location.REMOTE:
                raise RuntimeError(f"remote run of {task.task_id}({x!r}) did not offload")
            if remote_out != local_out:
                raise AssertionError(f"{task.task_id}({x!r}): remote {remote_out!r} != local {local_out!r}")
            remote_ms = ctl.last.wall_time_ms
            res.rows.append((x, local_ms, remote_ms))
            if res.biv is None and remote_ms < local_ms:
                res.biv = x
                if stop_at_first:
                    break
    return res


# -- matrix -------------------------------------------------------------------

@dataclass
class WorkloadSpec:
    label: str
    task_id: str
    input: Any
    input_label: str | None = None

    def describe_input(self) -> str:
        if self.input_label is not None:
            return self.input_label
        return str(self.input) if isinstance(self.input, (int, str)) else repr(self.input)


@dataclass
class BenchReport:
    workload: str
    input: str
    scenario: str
    policy: str
    servers: int
    runs: int = 0
    wall_time_ms: float = 0.0
    makespan_ms: float = 0.0
    energy: EnergyBreakdown = EnergyBreakdown()
    tx_bytes: float = 0.0
    rx_bytes: float = 0.0
    overhead_ms: float = 0.0
    remote_runs: int = 0
    decision_trace: str = ""
    oracle_ok: bool = True
    error: str = ""

    def row(self) -> dict:
        e = self.energy
        return {
            "workload": self.workload, "input": self.input, "scenario": self.scenario,
            "policy": self.policy, "servers": self.servers, "runs": self.runs,
            "wall_time_ms": repr(self.wall_time_ms), "makespan_ms": repr(self.makespan_ms),
            "energy_cpu_mj": repr(e.cpu), "energy_screen_mj": repr(e.screen),
            "energy_wifi_mj": repr(e.wifi), "energy_cellular_mj": repr(e.cellular),
            "energy_total_mj": repr(e.total), "tx_bytes": repr(self.tx_bytes),
            "rx_bytes": repr(self.rx_bytes), "overhead_ms": repr(self.overhead_ms),
            "remote_runs": self.remote_runs, "decision_trace": self.decision_trace,
            "oracle_ok": int(self.oracle_ok), "error": self.error,
        }


CSV_COLUMNS = tuple(BenchReport("", "", "", "", 1).row())


def run_cell(spec: WorkloadSpec, scenario: str, policy: Policy, servers: int, runs: int = 20,
             gap_s: float = 30.0, oracle=None, deterministic: bool = True,
             **testbed_kw) -> BenchReport:
    """Run one matrix cell ``runs`` times on a fresh testbed and average."""
    task = WORKLOADS[spec.task_id] if spec.task_id in WORKLOADS else testbed_kw["tasks"][0]
    rep = BenchReport(spec.label, spec.describe_input(), scenario, policy.value, servers)
    if oracle is None:
        oracle = task.run(spec.input)
    totals = dict(wall=0.0, span=0.0, tx=0.0, rx=0.0, over=0.0)
    energy = EnergyBreakdown()
    trace = []
    try:
        with make_testbed(scenario, deterministic=deterministic, servers=servers,
                          policy=policy, **testbed_kw) as tb:
            ctl = tb.controller
            for i in range(runs):
                if i:
                    tb.runtime.clock.advance(gap_s)
                    tb.server.pool.tick()
                out = ctl.execute(task, spec.input)
                r = ctl.last
                if out != oracle:
                    rep.oracle_ok = False
                remote = r.location is Location.REMOTE
                trace.append("R" if remote else ("F" if r.fell_back else "L"))
                totals["wall"] += r.wall_time_ms
                totals["span"] += r.compute_ms if remote else r.wall_time_ms
                totals["tx"] += r.tx_bytes
                totals["rx"] += r.rx_bytes
                totals["over"] += r.overhead_ms
                energy = energy + r.energy
                rep.remote_runs += remote
                rep.runs += 1
    except Exception as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %s/%s/%s/%d failed: %s", spec.label, scenario, policy.value, servers, exc)
    n = max(rep.runs, 1)
    rep.wall_time_ms = totals["wall"] / n
    rep.makespan_ms = totals["span"] / n
    rep.tx_bytes = totals["tx"] / n
    rep.rx_bytes = totals["rx"] / n
    rep.overhead_ms = totals["over"] / n
    rep.energy = EnergyBreakdown(energy.cpu / n, energy.screen / n, energy.wifi / n,
                                 energy.cellular / n)
    rep.decision_trace = "".join(trace)
    return rep


def run_matrix(workloads: Sequence[WorkloadSpec], scenarios: Sequence[str] = tuple(SCENARIOS),
               policies: Sequence[Policy] = POLICIES, servers: Sequence[int] = SERVER_COUNTS,
               runs: int = 20, gap_s: float = 30.0, deterministic: bool = True) -> list[BenchReport]:
    """Every (workload, scenario, policy, server count) cell, sequentially."""
    reports = []
    for spec in workloads:
        oracle = WORKLOADS[spec.task_id].run(spec.input)
        for scen in scenarios:
            for pol in policies:
                for n in servers:
                    reports.append(run_cell(spec, scen, pol, n, runs, gap_s, oracle, deterministic))
    return reports


def write_csv(reports: Sequence[BenchReport], out) -> None:
    own = isinstance(out, (str, Path))
    fh = open(out, "w", newline="") if own else out
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())
    finally:
        if own:
            fh.close()


def csv_bytes(reports: Sequence[BenchReport]) -> bytes:
    buf = io.StringIO()
    write_csv(reports, buf)
    return buf.getvalue().encode()


def write_jsonl(reports: Sequence[BenchReport], path) -> None:
    with open(path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.row()) + "\n")


def write_plot_data(reports: Sequence[BenchReport], path) -> None:
    """Whitespace-separated columns for gnuplot, one block per workload."""
    with open(path, "w") as fh:
        fh.write("# scenario policy servers wall_time_ms energy_total_mj "
                 "energy_cpu_mj energy_screen_mj energy_radio_mj\n")
        current = None
        for r in reports:
            if r.workload != current:
                if current is not None:
                    fh.write("\n\n")
                fh.write(f"# workload {r.workload} input {r.input}\n")
                current = r.workload
            e = r.energy
            fh.write(f"{r.scenario} {r.policy} {r.servers} {r.wall_time_ms!r} {e.total!r} "
                     f"{e.cpu!r} {e.screen!r} {e.wifi + e.cellular!r}\n")


def oracle_mismatches(reports: Sequence[BenchReport]) -> list[BenchReport]:
    return [r for r in reports if not r.oracle_ok]


def build_fixtures(out_dir, n_files: int = 3500, total_bytes: int = 10 * 1024 * 1024,
                   n_signatures: int = 1000, planted: int = 7, seed: int = 0) -> dict:
    """Virus-scan corpus plus the image-combiner input definitions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    job = generate_virus_corpus(out / "virus", n_files, total_bytes, n_signatures, planted, seed=seed)
    images = {"small": [640, 480, 640, 480], "oom_main": [4096, 3840, 4096, 3840]}
    (out / "images.json").write_text(json.dumps(images, indent=2) + "\n")
    manifest = {"virus": {"corpus_dir": job.corpus_dir, "signature_db": job.signature_db,
                          "files": n_files, "planted": planted}, "images": images}
    (out / "fixtures.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
