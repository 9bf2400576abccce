"""Command line entry point: ``offload bench ...`` and ``offload serve``."""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from pathlib import Path

from . import bench
from .appserver import AppServer, TaskRegistry
from .clock import make_clock
from .controller import Policy
from .netem import SCENARIOS, load_scenarios
from .profiling import HistoryStore, RecordLog
from .vmpool import VmPool, load_pool
from .workloads import WORKLOADS, ImagePair, InputError, ScanJob

log = logging.getLogger("offload")

CLIENT_KEYS = {"alpha": float, "good_rtt_threshold_ms": float, "local_slowdown": float}


def parse_input(task_id: str, text: str):
    """Turn a command-line input spec into a workload argument.

    ``imagecombine`` takes ``W1xH1,W2xH2``; ``virusscan`` takes a fixture
    directory produced by ``bench fixtures``; the rest take an integer.
    """
    if task_id == "imagecombine":
        try:
            a, b = (tuple(int(v) for v in part.lower().split("x")) for part in text.split(","))
            return ImagePair(*a, *b)
        except ValueError:
            raise InputError(f"image input must look like 640x480,640x480, got {text!r}")
    if task_id == "virusscan":
        root = Path(text)
        if (root / "virus").is_dir():
            root = root / "virus"
        sigs = root / "signatures.txt"
        if not sigs.exists():
            raise InputError(f"no signature database under {text}")
        return ScanJob(str(root / "corpus"), str(sigs))
    return int(text)


def parse_range(text: str) -> range:
    lo, _, hi = text.partition(":")
    if not hi:
        raise InputError("range must be LO:HI (inclusive)")
    return range(int(lo), int(hi) + 1)


def _policies(text: str) -> list[Policy]:
    return [Policy(p) for p in text.split(",")] if text else list(Policy)


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _client_config(path: str | None) -> dict:
    """Client keys from the [client] section; custom scenarios register globally."""
    if not path:
        return {}
    parser = configparser.ConfigParser()
    parser.read(path)
    SCENARIOS.update(load_scenarios(path))
    out = {}
    if parser.has_section("client"):
        sec = parser["client"]
        for key, conv in CLIENT_KEYS.items():
            if key in sec:
                out[key] = conv(sec[key])
        for key in ("scenario", "policy"):
            if key in sec:
                out[key] = sec[key]
    return out


def _emit(reports, args) -> None:
    if args.out:
        bench.write_csv(reports, args.out)
        if args.jsonl:
            bench.write_jsonl(reports, Path(args.out).with_suffix(".jsonl"))
        if args.plot:
            bench.write_plot_data(reports, Path(args.out).with_suffix(".dat"))
    else:
        bench.write_csv(reports, sys.stdout)


def cmd_run(args, cfg) -> int:
    spec = bench.WorkloadSpec(args.workload, args.workload, parse_input(args.workload, args.input),
                              args.input)
    kw = {k: cfg[k] for k in CLIENT_KEYS if k in cfg}
    if args.history:
        log_file = RecordLog(args.history)
        kw["history"] = log_file.load_store(kw.get("alpha", 0.5)) if Path(args.history).exists() \
            else HistoryStore(kw.get("alpha", 0.5))
        kw["record_log"] = log_file
    policy = Policy(args.policy or cfg.get("policy", Policy.EXECUTION_TIME.value))
    scenario = args.scenario or cfg.get("scenario", "WifiLocal")
    rep = bench.run_cell(spec, scenario, policy, args.servers, args.runs, args.gap,
                         deterministic=args.clock == "deterministic", **kw)
    _emit([rep], args)
    if rep.error:
        print(f"error: {rep.error}", file=sys.stderr)
        return 2
    return 0 if rep.oracle_ok else 1


def cmd_biv(args, cfg) -> int:
    res = bench.find_biv(args.workload, args.scenario or cfg.get("scenario", "WifiLocal"),
                         parse_range(args.range), deterministic=args.clock == "deterministic",
                         **{k: cfg[k] for k in CLIENT_KEYS if k in cfg})
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("input,local_ms,remote_ms\n")
        for x, lo, re in res.rows:
            out.write(f"{x},{lo!r},{re!r}\n")
        out.write(f"# biv {res.biv if res.biv is not None else 'none'}\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_matrix(args, cfg) -> int:
    specs = []
    for item in args.workloads.split(";"):
        task_id, _, text = item.partition(":")
        if task_id not in WORKLOADS:
            raise InputError(f"unknown workload {task_id!r}")
        specs.append(bench.WorkloadSpec(f"{task_id}:{text}", task_id, parse_input(task_id, text), text))
    scenarios = args.scenarios.split(",") if args.scenarios else list(SCENARIOS)
    reports = bench.run_matrix(specs, scenarios, _policies(args.policies), _ints(args.servers),
                               args.runs, args.gap, args.clock == "deterministic")
    _emit(reports, args)
    bad = bench.oracle_mismatches(reports)
    for r in bad:
        print(f"oracle mismatch: {r.workload} {r.scenario} {r.policy} {r.servers}", file=sys.stderr)
    return 1 if bad else 0


def cmd_fixtures(args, cfg) -> int:
    manifest = bench.build_fixtures(args.out or "fixtures", args.files, seed=args.seed)
    print(json.dumps(manifest, indent=2))
    return 0


def cmd_serve(args, cfg) -> int:
    pool = load_pool(args.pool_config) if args.pool_config else VmPool(clock=make_clock(args.clock))
    installed = set()
    if args.registry_dir:
        # one file per trusted bundle, named task_id@version
        for p in Path(args.registry_dir).iterdir():
            task_id, _, version = p.name.partition("@")
            if version.isdigit():
                installed.add((task_id, int(version)))
    app = AppServer(TaskRegistry(WORKLOADS.values()), pool, restricted=args.restricted,
                    installed=installed)
    host, _, port = args.listen.rpartition(":")
    server = app.serve_tcp(host or "127.0.0.1", int(port))
    print(f"listening on {server.address[0]}:{server.address[1]}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="offload")
    ap.add_argument("-v", "--verbose", action="store_true", help="structured logs on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file: [client] keys plus one section per custom scenario")
    common.add_argument("--scenario")
    common.add_argument("--clock", choices=("deterministic", "wall"), default="deterministic")
    common.add_argument("--out", help="output path (stdout when omitted)")
    common.add_argument("--jsonl", action="store_true", help="also write JSON lines next to --out")
    common.add_argument("--plot", action="store_true", help="also write plot data next to --out")

    b = sub.add_parser("bench").add_subparsers(dest="verb", required=True)
    run = b.add_parser("run", parents=[common])
    run.add_argument("--workload", required=True, choices=sorted(WORKLOADS))
    run.add_argument("--input", required=True)
    run.add_argument("--policy", choices=[p.value for p in Policy])
    run.add_argument("--servers", type=int, default=1)
    run.add_argument("--runs", type=int, default=20)
    run.add_argument("--gap", type=float, default=30.0, help="simulated seconds between runs")
    run.add_argument("--history", help="line-delimited execution record file")
    run.set_defaults(fn=cmd_run)

    biv = b.add_parser("biv", parents=[common])
    biv.add_argument("--workload", required=True, choices=sorted(WORKLOADS))
    biv.add_argument("--range", required=True, help="inclusive LO:HI")
    biv.set_defaults(fn=cmd_biv)

    mx = b.add_parser("matrix", parents=[common])
    mx.add_argument("--workloads", required=True, help="task:input pairs separated by ';'")
    mx.add_argument("--scenarios", default="")
    mx.add_argument("--policies", default="")
    mx.add_argument("--servers", default="1,2,4,8")
    mx.add_argument("--runs", type=int, default=20)
    mx.add_argument("--gap", type=float, default=30.0)
    mx.set_defaults(fn=cmd_matrix)

    fx = b.add_parser("fixtures", parents=[common])
    fx.add_argument("--files", type=int, default=3500)
    fx.add_argument("--seed", type=int, default=0)
    fx.set_defaults(fn=cmd_fixtures)

    srv = sub.add_parser("serve")
    srv.add_argument("--listen", default="127.0.0.1:5000")
    srv.add_argument("--registry-dir", help="directory of pre-installed task_id@version entries")
    srv.add_argument("--restricted", action="store_true", help="refuse transferred bundles")
    srv.add_argument("--pool-config", help="INI file with [pool], [counts], [speed]")
    srv.add_argument("--clock", choices=("deterministic", "wall"), default="wall")
    srv.set_defaults(fn=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        cfg = _client_config(getattr(args, "config", None))
        return args.fn(args, cfg)
    except (InputError, ValueError, KeyError) as exc:
        print(f"offload: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
