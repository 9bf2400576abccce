import csv
import socket
import subprocess
import sys
import time

import pytest

from offload.cli import main, parse_input, parse_range
from offload.workloads import ImagePair, InputError, ScanJob


def test_parse_helpers(tmp_path):
    assert parse_input("nqueens", "8") == 8
    assert parse_input("imagecombine", "4x3,5x6") == ImagePair(4, 3, 5, 6)
    with pytest.raises(InputError):
        parse_input("imagecombine", "4x3")
    with pytest.raises(InputError):
        parse_input("virusscan", str(tmp_path))
    assert parse_range("3:5") == range(3, 6)
    with pytest.raises(InputError):
        parse_range("7")


def test_bench_run_writes_csv(tmp_path):
    out = tmp_path / "run.csv"
    rc = main(["bench", "run", "--workload", "nqueens", "--input", "6", "--runs", "2",
               "--scenario", "ThreeG", "--out", str(out), "--jsonl", "--plot"])
    assert rc == 0
    row, = csv.DictReader(out.open())
    assert row["workload"] == "nqueens" and row["scenario"] == "ThreeG" and row["oracle_ok"] == "1"
    assert (tmp_path / "run.jsonl").exists() and (tmp_path / "run.dat").exists()


def test_bench_run_history_file_accumulates(tmp_path):
    hist = tmp_path / "h.jsonl"
    for _ in range(2):
        assert main(["bench", "run", "--workload", "fibonacci", "--input", "12", "--runs", "2",
                     "--history", str(hist), "--out", str(tmp_path / "o.csv")]) == 0
    assert len(hist.read_text().splitlines()) == 4


def test_bench_biv_and_bad_range(tmp_path, capsys):
    assert main(["bench", "biv", "--workload", "fibonacci", "--range", "14:20"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("input,local_ms,remote_ms") and "# biv" in out
    assert main(["bench", "biv", "--workload", "fibonacci", "--range", "20"]) == 2


def test_bench_matrix_and_fixtures(tmp_path):
    fx = tmp_path / "fx"
    assert main(["bench", "fixtures", "--out", str(fx), "--files", "35"]) == 0
    assert isinstance(parse_input("virusscan", str(fx)), ScanJob)
    out = tmp_path / "m.csv"
    rc = main(["bench", "matrix", "--workloads", f"fibonacci:14;virusscan:{fx}",
               "--scenarios", "WifiLocal,PhoneOnly", "--policies", "ExecutionTime",
               "--servers", "1,2", "--runs", "2", "--out", str(out)])
    assert rc == 0
    assert len(list(csv.DictReader(out.open()))) == 2 * 2 * 2


def test_config_file_supplies_scenario_and_policy(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[client]\npolicy = None\nscenario = Lab\n\n"
                   "[Lab]\nlink_type = WifiLocal\nrtt_ms = 1\nbw_up = 1000000\nbw_down = 1000000\n")
    out = tmp_path / "o.csv"
    assert main(["bench", "run", "--workload", "fibonacci", "--input", "20", "--runs", "2",
                 "--config", str(cfg), "--out", str(out)]) == 0
    row, = csv.DictReader(out.open())
    assert (row["scenario"], row["policy"], row["decision_trace"]) == ("Lab", "None", "LL")


def test_oracle_mismatch_gives_nonzero_exit(monkeypatch, tmp_path):
    from offload import bench
    real = bench.run_cell

    def broken(*a, **kw):
        rep = real(*a, **kw)
        rep.oracle_ok = False
        return rep
    monkeypatch.setattr(bench, "run_cell", broken)
    assert main(["bench", "run", "--workload", "fibonacci", "--input", "5", "--runs", "1",
                 "--out", str(tmp_path / "o.csv")]) == 1


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_subprocess(tmp_path):
    from offload.controller import ClientRuntime, ExecutionController, OffloadDecision
    from offload.profiling import Location
    from offload.transport import SocketTransport
    from offload.workloads import NQUEENS
    port = free_port()
    reg = tmp_path / "reg"
    reg.mkdir()
    (reg / "nqueens@1").touch()
    proc = subprocess.Popen([sys.executable, "-m", "offload", "serve", "--listen",
                             f"127.0.0.1:{port}", "--restricted", "--registry-dir", str(reg)],
                            stdout=subprocess.PIPE, text=True)
    try:
        assert proc.stdout.readline().startswith("listening on")
        rt = ClientRuntime([NQUEENS], "WifiLocal", lambda: SocketTransport.connect("127.0.0.1", port))
        deadline = time.time() + 10
        while True:
            try:
                rt.connect()
                break
            except OSError:
                if time.time() > deadline:
                    raise
                time.sleep(0.05)
        ctl = ExecutionController(rt)
        assert ctl.execute("nqueens", 6, force=OffloadDecision(Location.REMOTE)) == 4
        assert ctl.last.location is Location.REMOTE
        rt.shutdown()
    finally:
        proc.terminate()
        proc.wait(5)
