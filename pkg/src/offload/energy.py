"""Device power model and radio power-state machines.

Power is the sum of independent per-component estimates (CPU, LCD, WiFi,
cellular). Coefficients are in mW; integrating over seconds yields mJ.

    P_cpu    = beta_freq * util + beta_cpu_on * cpu_on
    P_screen = beta_brightness * brightness
    P_wifi   = 0 | 20 | 710 | 1000          (off / low / high / transmit)
    P_cell   = 0 | 10 | 401 | 570           (off / idle / FACH / DCH)

The cellular interface follows an RRC-style machine: a queue exceeding its
threshold promotes the radio to DCH, inactivity demotes DCH -> FACH -> Idle.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence, TextIO


class CpuFreq(Enum):
    LOW = "Low246MHz"
    HIGH = "High385MHz"


class WifiState(Enum):
    OFF = "Off"
    LOW_POWER = "LowPower"
    HIGH_POWER = "HighPower"
    TRANSMIT_FROM_LOW = "TransmitFromLow"
    TRANSMIT_FROM_HIGH = "TransmitFromHigh"


class CellState(Enum):
    OFF = "Off"
    IDLE = "Idle"
    FACH = "Fach"
    DCH = "Dch"


@dataclass(frozen=True)
class PowerCoefficients:
    """Per-component power coefficients (mW, or mW per unit)."""

    beta_uh: float = 4.32
    beta_ul: float = 3.42
    beta_cpu_on: float = 121.46
    beta_wifi_low: float = 20.0
    beta_wifi_high: float = 710.0
    wifi_transmit: float = 1000.0
    beta_3g_idle: float = 10.0
    beta_3g_fach: float = 401.0
    beta_3g_dch: float = 570.0
    beta_brightness: float = 2.40
    # Channel-rate coefficient has no published value; ignored while None.
    beta_cr: float | None = None

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is not None and v < 0:
                raise ValueError(f"{f.name} must be >= 0, got {v}")

    @classmethod
    def from_mapping(cls, values) -> "PowerCoefficients":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise KeyError(f"unknown coefficient keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})

    @classmethod
    def load(cls, path) -> "PowerCoefficients":
        """Read ``key = value`` lines (keys named like the fields)."""
        parser = configparser.ConfigParser()
        parser.optionxform = str
        text = Path(path).read_text()
        parser.read_string("[coefficients]\n" + text)
        return cls.from_mapping(dict(parser["coefficients"]))

    def dump(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)!r}"
                 for f in dataclasses.fields(self) if getattr(self, f.name) is not None]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class DeviceState:
    """Instantaneous hardware state feeding the power model."""

    cpu_util: float = 0.0
    cpu_freq: CpuFreq = CpuFreq.HIGH
    cpu_on: bool = False
    brightness: int = 0
    wifi: WifiState = WifiState.OFF
    cell: CellState = CellState.OFF
    channel_rate: float = 0.0  # Mbps, only used when beta_cr is configured

    def __post_init__(self):
        if not 0 <= self.cpu_util <= 100:
            raise ValueError(f"cpu_util out of range: {self.cpu_util}")
        if self.cpu_util > 0 and not self.cpu_on:
            raise ValueError("cpu_util > 0 requires cpu_on")
        if not 0 <= self.brightness <= 255:
            raise ValueError(f"brightness out of range: {self.brightness}")


@dataclass(frozen=True)
class PowerBreakdown:
    """Power per component, mW."""

    cpu: float = 0.0
    screen: float = 0.0
    wifi: float = 0.0
    cellular: float = 0.0

    @property
    def total(self) -> float:
        return self.cpu + self.screen + self.wifi + self.cellular


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy per component, mJ."""

    cpu: float = 0.0
    screen: float = 0.0
    wifi: float = 0.0
    cellular: float = 0.0

    @property
    def total(self) -> float:
        return self.cpu + self.screen + self.wifi + self.cellular

    def __add__(self, other: "EnergyBreakdown") -> "EnergyBreakdown":
        return EnergyBreakdown(self.cpu + other.cpu, self.screen + other.screen,
                               self.wifi + other.wifi, self.cellular + other.cellular)

    def to_dict(self) -> dict:
        return {"cpu": self.cpu, "screen": self.screen, "wifi": self.wifi,
                "cellular": self.cellular, "total": self.total}

    @classmethod
    def from_dict(cls, d) -> "EnergyBreakdown":
        return cls(d["cpu"], d["screen"], d["wifi"], d["cellular"])


def _wifi_power(state: DeviceState, c: PowerCoefficients) -> float:
    w = state.wifi
    if w is WifiState.OFF:
        return 0.0
    if w is WifiState.LOW_POWER:
        return c.beta_wifi_low
    if w is WifiState.HIGH_POWER:
        extra = c.beta_cr * state.channel_rate if c.beta_cr is not None else 0.0
        return c.beta_wifi_high + extra
    return c.wifi_transmit


def _cell_power(state: CellState, c: PowerCoefficients) -> float:
    return {
        CellState.OFF: 0.0,
        CellState.IDLE: c.beta_3g_idle,
        CellState.FACH: c.beta_3g_fach,
        CellState.DCH: c.beta_3g_dch,
    }[state]


def instantaneous_power(state: DeviceState, coeffs: PowerCoefficients | None = None) -> PowerBreakdown:
    c = coeffs or PowerCoefficients()
    freq_coeff = c.beta_uh if state.cpu_freq is CpuFreq.HIGH else c.beta_ul
    cpu = freq_coeff * state.cpu_util + (c.beta_cpu_on if state.cpu_on else 0.0)
    return PowerBreakdown(
        cpu=cpu,
        screen=c.beta_brightness * state.brightness,
        wifi=_wifi_power(state, c),
        cellular=_cell_power(state.cell, c),
    )


def integrate_energy(trace: Iterable[tuple[DeviceState, float]],
                     coeffs: PowerCoefficients | None = None) -> EnergyBreakdown:
    """Rectangular-rule integral of a piecewise-constant state trace.

    Durations are seconds; the result is in mJ. An empty trace yields zeros.
    """
    c = coeffs or PowerCoefficients()
    parts: dict[str, list[float]] = {"cpu": [], "screen": [], "wifi": [], "cellular": []}
    for state, duration in trace:
        if not duration > 0:
            raise ValueError(f"segment duration must be > 0, got {duration}")
        p = instantaneous_power(state, c)
        parts["cpu"].append(p.cpu * duration)
        parts["screen"].append(p.screen * duration)
        parts["wifi"].append(p.wifi * duration)
        parts["cellular"].append(p.cellular * duration)
    return EnergyBreakdown(**{k: math.fsum(v) for k, v in parts.items()})


# -- cellular -----------------------------------------------------------------

@dataclass(frozen=True)
class CellFsm:
    state: CellState = CellState.IDLE
    uplink_queue: int = 0
    downlink_queue: int = 0
    uplink_threshold: int = 151
    downlink_threshold: int = 119
    dch_inactivity: float = 0.0
    fach_inactivity: float = 0.0
    dch_timeout: float = 5.0
    fach_timeout: float = 12.0

    def __post_init__(self):
        if self.uplink_threshold <= 0 or self.downlink_threshold <= 0:
            raise ValueError("queue thresholds must be > 0")
        if self.state is CellState.OFF:
            raise ValueError("CellFsm models a powered radio; use CellState.OFF on DeviceState instead")


def step_cell_fsm(fsm: CellFsm, tx_bytes: int, rx_bytes: int, dt: float) -> CellFsm:
    """Advance the RRC machine by one interval of ``dt`` seconds.

    Promotion is checked against the queues after this step's bytes are
    enqueued (strictly greater than threshold); the queues then drain fully.
    Sub-threshold traffic wakes an idle radio into FACH.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    up = fsm.uplink_queue + tx_bytes
    down = fsm.downlink_queue + rx_bytes
    traffic = tx_bytes > 0 or rx_bytes > 0
    state = fsm.state
    dch_idle, fach_idle = fsm.dch_inactivity, fsm.fach_inactivity

    if up > fsm.uplink_threshold or down > fsm.downlink_threshold:
        state, dch_idle, fach_idle = CellState.DCH, 0.0, 0.0
    elif traffic:
        if state is CellState.IDLE:
            state = CellState.FACH
        dch_idle, fach_idle = 0.0, 0.0
    elif state is CellState.DCH:
        dch_idle += dt
        if dch_idle >= fsm.dch_timeout:
            state, dch_idle, fach_idle = CellState.FACH, 0.0, 0.0
    elif state is CellState.FACH:
        fach_idle += dt
        if fach_idle >= fsm.fach_timeout:
            state, fach_idle = CellState.IDLE, 0.0

    return dataclasses.replace(fsm, state=state, uplink_queue=0, downlink_queue=0,
                               dch_inactivity=dch_idle, fach_inactivity=fach_idle)


# -- wifi ---------------------------------------------------------------------

TRANSMIT_DUTY = 0.015  # seconds in transmit state per second of transmission


@dataclass(frozen=True)
class WifiFsm:
    state: WifiState = WifiState.LOW_POWER
    packets_per_second: float = 0.0
    channel_rate: float = 54.0
    data_rate: float = 0.0
    high_threshold: float = 15.0

    def __post_init__(self):
        if not 1 <= self.channel_rate <= 54:
            raise ValueError(f"channel_rate must be within 1-54 Mbps, got {self.channel_rate}")
        if self.state not in (WifiState.LOW_POWER, WifiState.HIGH_POWER):
            raise ValueError("WifiFsm base state is LowPower or HighPower")


def step_wifi_fsm(fsm: WifiFsm, packets_per_second: float, transmitting: bool, dt: float,
                  data_rate: float | None = None) -> tuple[WifiFsm, list[tuple[WifiState, float]]]:
    """Advance the WiFi machine; returns the new machine and the power-state
    segments (state, seconds) covering ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    base = WifiState.HIGH_POWER if packets_per_second >= fsm.high_threshold else WifiState.LOW_POWER
    new = dataclasses.replace(fsm, state=base, packets_per_second=packets_per_second,
                              data_rate=fsm.data_rate if data_rate is None else data_rate)
    if not transmitting:
        return new, [(base, dt)]
    tx_state = (WifiState.TRANSMIT_FROM_HIGH if base is WifiState.HIGH_POWER
                else WifiState.TRANSMIT_FROM_LOW)
    tx_time = TRANSMIT_DUTY * dt
    return new, [(tx_state, tx_time), (base, dt - tx_time)]


# -- trace CSV ----------------------------------------------------------------

TRACE_COLUMNS = ("t_start_s", "duration_s", "cpu_util", "cpu_freq", "cpu_on",
                 "brightness", "wifi_state", "cell_state")


def write_trace_csv(trace: Sequence[tuple[DeviceState, float]], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    t = 0.0
    for state, duration in trace:
        writer.writerow([repr(t), repr(float(duration)), repr(float(state.cpu_util)),
                         state.cpu_freq.value, int(state.cpu_on), state.brightness,
                         state.wifi.value, state.cell.value])
        t += duration


def read_trace_csv(src: TextIO) -> list[tuple[DeviceState, float]]:
    reader = csv.DictReader(src)
    if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
        raise ValueError(f"unexpected trace columns: {reader.fieldnames}")
    trace = []
    for row in reader:
        state = DeviceState(
            cpu_util=float(row["cpu_util"]),
            cpu_freq=CpuFreq(row["cpu_freq"]),
            cpu_on=bool(int(row["cpu_on"])),
            brightness=int(row["brightness"]),
            wifi=WifiState(row["wifi_state"]),
            cell=CellState(row["cell_state"]),
        )
        trace.append((state, float(row["duration_s"])))
    return trace
