"""Computation offloading runtime with an energy model and a simulated VM pool."""

from .appserver import AppServer, TaskRegistry
from .bench import find_biv, make_testbed, run_matrix
from .controller import ClientRuntime, ExecutionController, OffloadDecision, Policy
from .energy import DeviceState, PowerCoefficients, instantaneous_power, integrate_energy
from .netem import SCENARIOS, LinkScenario
from .profiling import HistoryStore, Location
from .vmpool import TABLE1, VmPool
from .workloads import WORKLOADS, TaskBundle

__all__ = [
    "AppServer", "TaskRegistry", "find_biv", "make_testbed", "run_matrix", "ClientRuntime",
    "ExecutionController", "OffloadDecision", "Policy", "DeviceState", "PowerCoefficients",
    "instantaneous_power", "integrate_energy", "SCENARIOS", "LinkScenario", "HistoryStore",
    "Location", "TABLE1", "VmPool", "WORKLOADS", "TaskBundle",
]
