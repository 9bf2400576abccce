import dataclasses
import json

import pytest

from offload.bench import (CSV_COLUMNS, WorkloadSpec, build_fixtures, csv_bytes, find_biv,
                           make_testbed, oracle_mismatches, run_cell, run_matrix, write_jsonl,
                           write_plot_data)
from offload.controller import OffloadDecision, Policy
from offload.netem import LinkScenario
from offload.profiling import LinkType, Location
from offload.vmpool import TABLE1, VmPool
from offload.workloads import FIBONACCI, InputError, TaskBundle


def test_find_biv_contract():
    with pytest.raises(InputError):
        find_biv("fibonacci", "WifiLocal", [])
    with pytest.raises(ValueError):
        find_biv("fibonacci", "WifiLocal", [10], policy=Policy.ENERGY)
    res = find_biv("fibonacci", "WifiLocal", range(10, 25))
    assert res.biv is not None
    first = [x for x, lo, re in res.rows if re < lo][0]
    assert res.biv == first
    # local cost grows exponentially, so once offloading wins it keeps winning
    assert all(re < lo for x, lo, re in res.rows if x >= res.biv)


def test_zero_cost_workload_never_pays_off():
    free = TaskBundle("free", 1, lambda n: n, lambda n: 0, lambda n: n)
    res = find_biv(free, "WifiLocal", range(1, 6))
    assert res.biv is None and len(res.rows) == 5


def test_biv_closed_form_on_ideal_link():
    """Unit local slowdown, no latency, main clone 4x faster: offloading wins
    exactly when compute saved exceeds the transfer time."""
    speedy = [dataclasses.replace(c, speed_factor=4.0) if c.name == "main" else c for c in TABLE1]
    link = LinkScenario("Ideal", LinkType.WIFI_LOCAL, 0.0, 1e6, 1e6)
    kw = dict(local_slowdown=1.0)
    res = find_biv(FIBONACCI, link, range(0, 25), pool=VmPool(configs=speedy), **kw)

    expected = None
    with make_testbed(link, tasks=[FIBONACCI], pool=VmPool(configs=speedy), **kw) as tb:
        for n in range(0, 25):
            tb.controller.execute(FIBONACCI, n, force=OffloadDecision(Location.REMOTE))
            r = tb.controller.last
            cost = FIBONACCI.cost_ms(n)
            transfer = (r.tx_bytes / 1e6 + r.rx_bytes / 1e6) * 1e3
            if cost * (1 - 1 / 4) > transfer:
                expected = n
                break
    assert expected is not None and res.biv == expected


def test_nqueens_cells_non_increasing_makespan():
    spec = WorkloadSpec("nq8", "nqueens", 8)
    spans = [run_cell(spec, "WifiLocal", Policy.EXECUTION_TIME, n, runs=2).makespan_ms
             for n in (1, 2, 4, 8)]
    assert spans == sorted(spans, reverse=True)
    # hand check of the single-server cell: 8 * 8^7 units at 1e-4 ms per unit
    assert spans[0] == pytest.approx(8 ** 8 * 1e-4)


def test_phone_only_cell_has_no_traffic():
    rep = run_cell(WorkloadSpec("fib", "fibonacci", 18), "PhoneOnly", Policy.EXECUTION_TIME, 1, runs=3)
    assert rep.tx_bytes == rep.rx_bytes == 0 and rep.decision_trace == "LLL"
    assert rep.energy.wifi == rep.energy.cellular == 0


def test_failing_cell_is_recorded_and_matrix_continues():
    reports = run_matrix([WorkloadSpec("fib", "fibonacci", 12)], ["Moon", "WifiLocal"],
                         [Policy.EXECUTION_TIME], [1], runs=2)
    assert len(reports) == 2
    assert "Moon" in reports[0].error and reports[0].runs == 0
    assert reports[1].error == "" and reports[1].runs == 2
    assert not oracle_mismatches(reports)


def test_matrix_is_byte_identical_across_runs(tmp_path):
    specs = [WorkloadSpec("fib", "fibonacci", 18), WorkloadSpec("nq", "nqueens", 6)]
    args = (specs, ["WifiLocal", "ThreeG", "PhoneOnly"], list(Policy), [1, 2])
    a = csv_bytes(run_matrix(*args, runs=3))
    b = csv_bytes(run_matrix(*args, runs=3))
    assert a == b
    header, *rows = a.decode().splitlines()
    assert header.split(",") == list(CSV_COLUMNS)
    assert len(rows) == 2 * 3 * 4 * 2


def test_policy_none_cells_stay_local():
    rep = run_cell(WorkloadSpec("fib", "fibonacci", 20), "WifiLocal", Policy.NONE, 1, runs=4)
    assert rep.decision_trace == "LLLL" and rep.remote_runs == 0


def test_writers(tmp_path):
    reports = run_matrix([WorkloadSpec("fib", "fibonacci", 15)], ["WifiLocal"],
                         [Policy.EXECUTION_TIME, Policy.NONE], [1], runs=2)
    write_jsonl(reports, tmp_path / "r.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "r.jsonl").read_text().splitlines()]
    assert [r["policy"] for r in rows] == ["ExecutionTime", "None"]
    write_plot_data(reports, tmp_path / "r.dat")
    lines = (tmp_path / "r.dat").read_text().splitlines()
    assert lines[0].startswith("#") and lines[1] == "# workload fib input 15"
    assert len(lines[2].split()) == 8


def test_fixtures(tmp_path):
    m = build_fixtures(tmp_path, n_files=70, total_bytes=7000, n_signatures=10)
    assert m["virus"]["files"] == 70
    assert len(list((tmp_path / "virus" / "corpus").iterdir())) == 70
    assert json.loads((tmp_path / "images.json").read_text())["oom_main"] == [4096, 3840, 4096, 3840]
