"""Split n-queens across more clones and compare compute time against the
cost of waking the extra clones up."""

from offload.bench import make_testbed
from offload.controller import OffloadDecision
from offload.profiling import Location
from offload.workloads import NQUEENS

print("servers  compute_ms  clone_wakeup_ms  solutions")
for n in (1, 2, 4, 8):
    with make_testbed("WifiLocal", tasks=[NQUEENS]) as tb:
        out = tb.controller.execute(NQUEENS, 8, force=OffloadDecision(Location.REMOTE, "main", n))
        prof = tb.controller.last.profile
        print(f"{n:7}  {prof.compute_ms:10.1f}  {max(prof.vm_overhead_ms, default=0):15.1f}  {out:9}")
