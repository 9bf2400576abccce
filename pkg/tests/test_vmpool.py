import json

import pytest
from hypothesis import given, settings, strategies as st

from offload.clock import VirtualClock
from offload.vmpool import (CONFIG_NAMES, DEFAULT_COUNTS, TABLE1, ContractViolation, NoLargerConfig,
                            PoolExhausted, PoolPolicy, VmPool, VmState, escalate, get_config,
                            load_pool)
from offload.workloads import NQUEENS, VIRUS_SCAN, generate_virus_corpus, virus_split


def test_table_of_configs():
    rows = [(c.name, c.cpus, c.memory_mb, c.heap_mb) for c in TABLE1]
    assert rows == [("basic", 1, 200, 32), ("main", 1, 512, 100), ("large", 1, 1024, 100),
                    ("x2large", 2, 1024, 100), ("x4large", 4, 1024, 100),
                    ("x8large", 8, 1024, 100)]
    assert get_config("x4large").throughput == 4


def test_escalation_order():
    assert escalate(get_config("main")).name == "large"
    assert escalate(get_config("basic")).name == "main"
    with pytest.raises(NoLargerConfig):
        escalate(get_config("x8large"))
    with pytest.raises(KeyError):
        get_config("huge")


def test_resume_latency_model():
    p = PoolPolicy()
    assert p.resume_ms(1) == 300
    assert 6000 <= p.resume_ms(7) <= 7000
    with pytest.raises(ValueError):
        PoolPolicy(coldstart_ms=0)


def test_single_resume_and_cold_start():
    pool = VmPool()
    acq = pool.acquire("main", 1)
    assert acq.overhead_ms == 300 and acq.instances[0].state is VmState.RUNNING
    pool = VmPool(counts={"main": 0})
    acq = pool.acquire("main", 1)
    assert acq.overhead_ms == 32000


def test_seven_simultaneous_resumes():
    pool = VmPool()
    acq = pool.acquire("main", 7)
    assert len(acq.per_vm_ms) == 7
    assert 6000 <= max(acq.per_vm_ms) <= 7000
    assert pool.count(VmState.RUNNING, "main") == 7


def test_mixed_paused_and_cold():
    pool = VmPool(counts={"main": 2})
    acq = pool.acquire("main", 3)
    assert sorted(acq.per_vm_ms) == [pool.policy.resume_ms(2)] * 2 + [32000]
    assert acq.resumed == 3


def test_release_tick_and_contract_errors():
    clock = VirtualClock()
    pool = VmPool(clock=clock)
    acq = pool.acquire("large", 1)
    vm = acq.instances[0]
    pool.release(acq.instances)
    assert vm.state is VmState.PAUSED
    with pytest.raises(ContractViolation):
        pool.release([vm])
    with pytest.raises(ContractViolation):
        pool.release([pool.primary])
    clock.advance(299)
    assert pool.tick() == []
    clock.advance(1)
    off = pool.tick()
    assert vm in off and vm.state is VmState.POWERED_OFF
    assert pool.count(VmState.PAUSED) == 0  # the initial paused clones age out too
    # a powered-off clone costs a cold start next time
    assert pool.acquire("large", 1).overhead_ms == 32000


def test_busy_release_rejected():
    pool = VmPool()
    acq = pool.acquire("main", 1)
    vm = acq.instances[0]

    def body():
        with pytest.raises(ContractViolation):
            pool.release([vm])
        return "ok"
    assert pool.run_on(vm, body) == "ok"
    pool.release([vm])
    with pytest.raises(ContractViolation):
        pool.run_on(vm, lambda: None)


def test_pool_cap():
    pool = VmPool(policy=PoolPolicy(max_running=4))
    pool.acquire("main", 3)
    with pytest.raises(PoolExhausted):
        pool.acquire("main", 1)
    with pytest.raises(ValueError):
        pool.acquire("main", 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(CONFIG_NAMES), st.integers(1, 3)), max_size=6),
       st.floats(0, 600))
def test_running_count_never_exceeds_cap(requests, gap):
    clock = VirtualClock()
    pool = VmPool(policy=PoolPolicy(max_running=6), clock=clock)
    held = []
    for name, n in requests:
        try:
            held.append(pool.acquire(name, n).instances)
        except PoolExhausted:
            pool.release(held.pop(0)) if held else None
        assert pool.running() <= 6
        clock.advance(gap)
        pool.tick()
        assert all(i.state is VmState.RUNNING for h in held for i in h)


@pytest.mark.parametrize("k", [1, 2, 4, 8])
def test_nqueens_split_merge(k):
    pool = VmPool()
    insts = [pool.primary] + pool.acquire("main", k - 1).instances if k > 1 else [pool.primary]
    res = pool.split_and_distribute(NQUEENS, 8, insts)
    assert res.result == 92
    assert len(res.parts) == k
    assert sum(p.work_units for p in res.parts) == NQUEENS.work_units(8)


def test_makespan_halves_with_even_split():
    pool = VmPool()
    one = pool.split_and_distribute(NQUEENS, 8, [pool.primary]).makespan_ms
    two = pool.split_and_distribute(NQUEENS, 8, [pool.primary] + pool.acquire("main", 1).instances)
    assert two.makespan_ms == pytest.approx(one / 2)


def test_split_errors():
    from offload.workloads import FIBONACCI
    pool = VmPool()
    with pytest.raises(ValueError):
        pool.split_and_distribute(NQUEENS, 8, [])
    with pytest.raises(ValueError):
        pool.split_and_distribute(FIBONACCI, 8, [pool.primary])


def test_first_part_error_wins(tmp_path):
    pool = VmPool()
    job = generate_virus_corpus(tmp_path / "c", n_files=20, total_bytes=2000, n_signatures=5,
                                planted=1)
    job = job._replace(files=tuple(sorted(p.name for p in (tmp_path / "c" / "corpus").iterdir())))
    (tmp_path / "c" / "corpus" / "f00000.bin").unlink()
    insts = [pool.primary] + pool.acquire("main", 3).instances
    with pytest.raises(FileNotFoundError):
        pool.split_and_distribute(VIRUS_SCAN, job, insts)
    assert all(not i.busy for i in insts)


def test_virus_scan_over_seven(tmp_path):
    job = generate_virus_corpus(tmp_path / "c", n_files=3500, total_bytes=350_000, n_signatures=50,
                                planted=7)
    parts = virus_split(job, 7)
    assert [len(p.files) for p in parts] == [500] * 7
    pool = VmPool()
    insts = [pool.primary] + pool.acquire("main", 6).instances
    res = pool.split_and_distribute(VIRUS_SCAN, job, insts)
    assert res.result == VIRUS_SCAN.run(job) == 7


def test_dump_state_and_config_file(tmp_path):
    pool = VmPool()
    rows = [json.loads(line) for line in pool.dump_state().splitlines()]
    assert rows[0]["primary"] and rows[0]["state"] == "Running"
    assert len(rows) == 1 + sum(DEFAULT_COUNTS.values())
    ini = tmp_path / "pool.ini"
    ini.write_text("[pool]\nresume_ms_base = 100\nclock = deterministic\n"
                   "[counts]\nmain = 2\n[speed]\nlarge = 2.0\n")
    p = load_pool(ini)
    assert p.policy.resume_ms(1) == 100 and p.count(VmState.PAUSED) == 2
    assert get_config("large", p.configs).throughput == 2.0
