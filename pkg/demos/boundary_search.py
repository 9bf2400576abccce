"""Find the smallest Fibonacci input for which offloading is faster, per link."""

from offload.bench import find_biv
from offload.workloads import FIBONACCI

for scenario in ("WifiLocal", "WifiInternetGood", "WifiInternetHotspot", "ThreeG"):
    res = find_biv(FIBONACCI, scenario, range(10, 30), stop_at_first=True)
    x, local, remote = res.rows[-1]
    print(f"{scenario:20} boundary n={res.biv}  (local {local:.1f} ms vs remote {remote:.1f} ms)")
