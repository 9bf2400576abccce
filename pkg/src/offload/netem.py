"""Network emulation layered over a frame transport.

Each frame is delayed by ``rtt/2 + size/bandwidth`` in its direction. In
deterministic mode nothing sleeps: the delay is only reported, so identical
message sequences yield identical latencies. Wall-clock mode sleeps the
delay (plus optional uniform jitter). A failure trigger, by cumulative bytes
or elapsed time, cuts the link mid-stream.
"""

from __future__ import annotations

import configparser
import dataclasses
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .profiling import LinkType
from .transport import ConnectionLost


@dataclass(frozen=True)
class LinkScenario:
    name: str
    link_type: LinkType
    rtt_ms: float = 0.0
    bw_up: float = 0.0     # bytes/s
    bw_down: float = 0.0   # bytes/s
    jitter_ms: float = 0.0
    fail_at_bytes: int | None = None
    fail_at_ms: float | None = None

    def __post_init__(self):
        if self.link_type is LinkType.NONE:
            return
        if self.rtt_ms < 0 or self.bw_up <= 0 or self.bw_down <= 0:
            raise ValueError(f"scenario {self.name}: rtt must be >= 0 and bandwidths > 0")
        if self.fail_at_bytes is not None and self.fail_at_bytes < 1:
            raise ValueError("fail_at_bytes must be >= 1")

    @property
    def has_transport(self) -> bool:
        return self.link_type is not LinkType.NONE

    def one_way_ms(self, nbytes: int, direction: str) -> float:
        bw = self.bw_up if direction == "up" else self.bw_down
        return self.rtt_ms / 2 + nbytes / bw * 1e3

    def with_failure(self, *, fail_at_bytes=None, fail_at_ms=None) -> "LinkScenario":
        return dataclasses.replace(self, fail_at_bytes=fail_at_bytes, fail_at_ms=fail_at_ms)


SCENARIOS: dict[str, LinkScenario] = {
    s.name: s for s in (
        LinkScenario("PhoneOnly", LinkType.NONE),
        LinkScenario("WifiLocal", LinkType.WIFI_LOCAL, 5.0, 2_500_000, 2_500_000),
        LinkScenario("WifiInternetGood", LinkType.WIFI_INTERNET, 50.0, 1_000_000, 1_000_000),
        LinkScenario("WifiInternetHotspot", LinkType.WIFI_INTERNET, 200.0, 1_000_000, 1_000_000),
        LinkScenario("ThreeG", LinkType.CELLULAR_3G, 100.0, 250_000, 250_000),
    )
}


def get_scenario(name: str, custom: dict[str, LinkScenario] | None = None) -> LinkScenario:
    table = {**SCENARIOS, **(custom or {})}
    try:
        return table[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(table)}") from None


def load_scenarios(path) -> dict[str, LinkScenario]:
    """Custom scenarios from an INI file, one section per scenario (sections
    without ``rtt_ms`` are ignored)::

        [Lab]
        link_type = WifiLocal
        rtt_ms = 2
        bw_up = 5000000
        bw_down = 5000000
    """
    parser = configparser.ConfigParser()
    parser.read_string(Path(path).read_text())
    out = {}
    for name in parser.sections():
        sec = parser[name]
        if "rtt_ms" not in sec:
            continue
        fab = sec.get("fail_at_bytes")
        fam = sec.get("fail_at_ms")
        out[name] = LinkScenario(
            name=name,
            link_type=LinkType(sec.get("link_type", "WifiLocal")),
            rtt_ms=sec.getfloat("rtt_ms", 0.0),
            bw_up=sec.getfloat("bw_up", 1_000_000),
            bw_down=sec.getfloat("bw_down", 1_000_000),
            jitter_ms=sec.getfloat("jitter_ms", 0.0),
            fail_at_bytes=int(fab) if fab else None,
            fail_at_ms=float(fam) if fam else None,
        )
    return out


class ShapedTransport:
    """Wraps a transport, delaying frames per the scenario and counting bytes."""

    def __init__(self, inner, scenario: LinkScenario, deterministic: bool = True,
                 seed: int | None = 0):
        if not scenario.has_transport:
            raise ValueError(f"scenario {scenario.name} has no network link")
        self.inner = inner
        self.scenario = scenario
        self.deterministic = deterministic
        self._rng = random.Random(seed)
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent = 0
        self.frames_received = 0
        self.latency_log: list[tuple[str, int, float]] = []
        self._virtual_ms = 0.0
        self._t0 = time.monotonic()
        self._failed = threading.Event()
        self._lock = threading.Lock()

    @property
    def closed(self) -> bool:
        return self._failed.is_set() or self.inner.closed

    @property
    def failed(self) -> bool:
        return self._failed.is_set()

    def latency_ms(self, nbytes: int, direction: str) -> float:
        return self.scenario.one_way_ms(nbytes, direction)

    def _elapsed_ms(self) -> float:
        if self.deterministic:
            return self._virtual_ms
        return (time.monotonic() - self._t0) * 1e3

    def _cross(self, nbytes: int, direction: str) -> float:
        """Account one frame crossing the link; trips the failure trigger."""
        s = self.scenario
        with self._lock:
            if self._failed.is_set():
                raise ConnectionLost("link down")
            crossed = self.bytes_sent + self.bytes_received + nbytes
            if (s.fail_at_bytes is not None and crossed >= s.fail_at_bytes) or \
                    (s.fail_at_ms is not None and self._elapsed_ms() >= s.fail_at_ms):
                self._failed.set()
                self.inner.close()
                raise ConnectionLost(f"link failure injected on {direction} frame")
            delay = s.one_way_ms(nbytes, direction)
            if not self.deterministic and s.jitter_ms > 0:
                delay += self._rng.uniform(0.0, s.jitter_ms)
            if direction == "up":
                self.bytes_sent += nbytes
                self.frames_sent += 1
            else:
                self.bytes_received += nbytes
                self.frames_received += 1
            self._virtual_ms += delay
            self.latency_log.append((direction, nbytes, delay))
            return delay

    def send(self, frame: bytes) -> None:
        delay = self._cross(len(frame), "up")
        if not self.deterministic:
            time.sleep(delay / 1e3)
        self.inner.send(frame)

    def recv(self) -> bytes:
        try:
            frame = self.inner.recv()
        except ConnectionLost:
            self._failed.set()
            raise
        delay = self._cross(len(frame), "down")
        if not self.deterministic:
            time.sleep(delay / 1e3)
        return frame

    def close(self) -> None:
        self.inner.close()


def shape(transport, scenario: LinkScenario, deterministic: bool = True, seed: int | None = 0):
    return ShapedTransport(transport, scenario, deterministic, seed)
