"""Walk through the phone power model: component powers, a composite state,
and what a short 3G upload costs once the radio tail is included."""

from offload.energy import (CellState, CpuFreq, DeviceState, WifiState, instantaneous_power,
                            integrate_energy)
from offload.profiling import DeviceSettings, LinkType, RadioState, local_trace, remote_trace

busy = DeviceState(100, CpuFreq.HIGH, True, 255, WifiState.LOW_POWER, CellState.OFF)
p = instantaneous_power(busy)
print(f"full CPU, full screen, wifi idle: {p.total:.2f} mW")
print(f"  cpu {p.cpu:.2f}  screen {p.screen:.2f}  wifi {p.wifi:.2f}  cell {p.cellular:.2f}")
print(f"held for 2 s: {integrate_energy([(busy, 2.0)]).total:.2f} mJ")

settings = DeviceSettings()
local = integrate_energy(local_trace(800.0, LinkType.CELLULAR_3G, settings))
remote = integrate_energy(remote_trace(LinkType.CELLULAR_3G, 60.0, 200.0, 55.0, 4000, 500,
                                       settings, RadioState()))
print(f"\n800 ms computed on the phone over 3G: {local.total:8.1f} mJ")
print(f"same job offloaded (200 ms server):   {remote.total:8.1f} mJ  (radio {remote.cellular:.1f})")
