"""Sensor isolation and source selection over the per-state availability lattice."""
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

from .config import DEFAULT_PRIORITIES, RecoveryConfig
from .detect import DetectionReport

logger = logging.getLogger(__name__)

SE = "se"

# state kind -> sensor types able to provide it
PROVIDERS: Dict[str, Tuple[str, ...]] = {
    "altitude": ("gps", "baro"),
    "angular_velocity": ("imu",),
    "acceleration": ("imu",),
    "position": ("gps",),
    "velocity": ("gps",),
    "attitude": ("mag",),
}


@dataclass(frozen=True)
class SensorHealth:
    """Which instances are still validated; `units` maps instance name to (type, id)."""
    units: Tuple[Tuple[str, str, int], ...]
    flags: Tuple[Tuple[str, float], ...] = ()

    @classmethod
    def from_units(cls, unit_kinds: Dict[str, str]) -> "SensorHealth":
        rows = []
        for unit, kind in unit_kinds.items():
            index = int(unit[len(kind):]) if unit[len(kind):].isdigit() else 0
            rows.append((unit, kind, index))
        return cls(tuple(sorted(rows, key=lambda r: (r[1], r[2]))))

    @property
    def flagged(self) -> FrozenSet[str]:
        return frozenset(u for u, _ in self.flags)

    def flag_time(self, unit: str) -> Optional[float]:
        return dict(self.flags).get(unit)

    def validated(self, kind: str) -> List[str]:
        """Healthy instances of a sensor type, lowest id first."""
        bad = self.flagged
        return [u for u, k, _ in self.units if k == kind and u not in bad]

    def knows(self, unit: str) -> bool:
        return any(u == unit for u, _, _ in self.units)


def isolate(health: SensorHealth, report: DetectionReport) -> SensorHealth:
    if not health.knows(report.unit):
        raise KeyError(f"unknown sensor instance: {report.unit}")
    if not report.alarm or report.unit in health.flagged:
        return health
    t = report.t_alarm if report.t_alarm is not None else float("nan")
    return SensorHealth(health.units, health.flags + ((report.unit, t),))


@dataclass(frozen=True)
class Source:
    kind: str
    unit: str

    @property
    def is_se(self) -> bool:
        return self.kind == SE


SE_SOURCE = Source(SE, SE)


@dataclass(frozen=True)
class SourcePriority:
    """Per state kind, source types from lowest (always SE) to highest priority."""
    orders: Dict[str, Tuple[str, ...]] = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_PRIORITIES.items()})

    @classmethod
    def from_config(cls, cfg: RecoveryConfig) -> "SourcePriority":
        return cls({k: tuple(v) for k, v in cfg.priorities.items()})

    def order(self, state_kind: str) -> Tuple[str, ...]:
        if state_kind not in self.orders:
            raise KeyError(f"no source priority for state kind {state_kind!r}")
        return self.orders[state_kind]


def select_source(state_kind: str, health: SensorHealth, priority: SourcePriority) -> Source:
    """Leftmost (highest) type with a validated instance; lowest id within it; SE otherwise."""
    for kind in reversed(priority.order(state_kind)):
        if kind == SE:
            return SE_SOURCE
        healthy = health.validated(kind)
        if healthy:
            return Source(kind, healthy[0])
    return SE_SOURCE


@dataclass(frozen=True)
class LatticeStatus:
    """Availability set per source type, highest priority first, SE last."""
    kinds: Tuple[str, ...]
    sets: Tuple[FrozenSet[str], ...]

    @classmethod
    def top(cls, state_kind: str, health: SensorHealth, priority: SourcePriority) -> "LatticeStatus":
        return _availability(state_kind, health, priority)

    def meet(self, other: "LatticeStatus") -> "LatticeStatus":
        if self.kinds != other.kinds:
            raise ValueError("statuses of different state kinds")
        return LatticeStatus(self.kinds, tuple(a & b for a, b in zip(self.sets, other.sets)))

    def __le__(self, other: "LatticeStatus") -> bool:
        return self.kinds == other.kinds and all(a <= b for a, b in zip(self.sets, other.sets))

    def label(self) -> str:
        parts = []
        for s in self.sets:
            if not s:
                parts.append("⊥")
            else:
                parts.append("{" + ",".join(sorted(u.upper() if u == SE else u for u in s)) + "}")
        return "(" + ",".join(parts) + ")"


def _availability(state_kind: str, health: SensorHealth, priority: SourcePriority) -> LatticeStatus:
    kinds = tuple(reversed(priority.order(state_kind)))
    sets = tuple(frozenset([SE]) if k == SE else frozenset(health.validated(k)) for k in kinds)
    return LatticeStatus(kinds, sets)


def lattice_step(status: LatticeStatus, state_kind: str, health: SensorHealth,
                 priority: SourcePriority) -> LatticeStatus:
    """Recompute availability and meet it with the previous status, so a flight only descends."""
    return status.meet(_availability(state_kind, health, priority))


class RecoveryMonitor:
    """Owns sensor health for one flight and decides which source feeds each state kind."""

    def __init__(self, unit_kinds: Dict[str, str], cfg: Optional[RecoveryConfig] = None):
        cfg = cfg or RecoveryConfig()
        self.enabled = cfg.enabled
        self.priority = SourcePriority.from_config(cfg)
        self.health = SensorHealth.from_units(unit_kinds)
        self.status: Dict[str, LatticeStatus] = {
            k: LatticeStatus.top(k, self.health, self.priority) for k in self.priority.orders
        }
        self.selected: Dict[str, Source] = {
            k: select_source(k, self.health, self.priority) for k in self.priority.orders
        }
        self.switches: List[Tuple[float, str, str]] = []

    @property
    def flagged(self) -> FrozenSet[str]:
        return self.health.flagged

    def process(self, reports: Iterable[DetectionReport], t: float) -> bool:
        """Apply this tick's alarms; returns whether any selection changed."""
        if not self.enabled:
            return False
        before = self.health
        for report in reports:
            self.health = isolate(self.health, report)
        if self.health is before:
            return False
        changed = False
        for kind in self.priority.orders:
            self.status[kind] = lattice_step(self.status[kind], kind, self.health, self.priority)
            choice = select_source(kind, self.health, self.priority)
            if choice != self.selected[kind]:
                logger.info("%s source %s -> %s at %.3f s (status %s)", kind, self.selected[kind].unit,
                            choice.unit, t, self.status[kind].label())
                self.switches.append((t, kind, choice.unit))
                self.selected[kind] = choice
                changed = True
        return changed

    def source(self, state_kind: str) -> Source:
        return self.selected[state_kind]

    def controller_source(self) -> str:
        """The controller leaves the vanilla estimate once no IMU is left."""
        return SE if self.selected["angular_velocity"].is_se else "vanilla"
