"""A job that does not fit in the primary clone's heap is re-run on a larger
clone; the caller only sees a normal result and a little extra latency."""

from offload.bench import make_testbed
from offload.controller import OffloadDecision
from offload.profiling import Location
from offload.workloads import IMAGE_COMBINE, ImagePair

for pair in (ImagePair(1024, 768, 1024, 768), ImagePair(4096, 3840, 4096, 3840)):
    with make_testbed("WifiLocal", tasks=[IMAGE_COMBINE]) as tb:
        tb.controller.execute(IMAGE_COMBINE, pair, force=OffloadDecision(Location.REMOTE))
        r = tb.controller.last
        print(f"{pair.w1}x{pair.h1} + {pair.w2}x{pair.h2}: peak {IMAGE_COMBINE.peak_memory(pair):6.1f} MB"
              f" -> ran on {r.profile.vm_config:5} after {r.profile.escalations} escalation(s),"
              f" overhead {r.overhead_ms:.1f} ms")
