"""Watch the controller learn where a task should run.

The first call has no history, so a good link means "try remote".  After one
local and one remote sample per input size the controller compares the
projections and picks the faster side."""

from offload.bench import make_testbed
from offload.controller import LOCAL, OffloadDecision
from offload.profiling import Location
from offload.workloads import FIBONACCI

REMOTE = OffloadDecision(Location.REMOTE)

for scenario in ("WifiLocal", "ThreeG"):
    print(f"== {scenario}")
    with make_testbed(scenario, tasks=[FIBONACCI]) as tb:
        ctl = tb.controller
        for n in (8, 16, 20, 24, 26):
            ctl.execute(FIBONACCI, n, force=LOCAL)
            ctl.execute(FIBONACCI, n, force=REMOTE)
            ctl.execute(FIBONACCI, n)
            r = ctl.last
            e = r.estimates
            print(f"fib({n:2}) -> {r.location.value:6} local {e.local_time_ms:9.1f} ms"
                  f"  remote {e.remote_time_ms:9.1f} ms")
