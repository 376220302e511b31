"""Mission definitions and the waypoint tracker that feeds the controller."""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

logger = logging.getLogger(__name__)

MISSION_KINDS = ("hovering", "moving", "maneuver", "sysid")

HOVER_ALTITUDE = 15.0
MOVING_ALTITUDE = 50.0
HOME_WAYPOINT = (10.0, 10.0)
MOVING_LEG = 1000.0
TRIANGLE_EDGE = 2.5


@dataclass
class Mission:
    kind: str
    waypoints: List[np.ndarray]
    hold: List[float]
    yaw: List[float]
    attack_waypoint: int
    takeoff_altitude: float
    max_speed: float = 5.0

    @property
    def hover_time(self) -> float:
        return max(self.hold) if self.hold else 0.0

    def expected_duration(self, margin: float = 60.0) -> float:
        """Rough flight time used as the default time limit."""
        path = np.linalg.norm(self.waypoints[0])
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            path += np.linalg.norm(b - a)
        return float(path / (0.5 * self.max_speed) + sum(self.hold) + margin)


def _wp(n: float, e: float, alt: float) -> np.ndarray:
    return np.array([n, e, -alt], dtype=float)


def mission_waypoints(kind: str, hover_time: float = 300.0, laps: int = 10,
                      rng: Optional[np.random.Generator] = None) -> Mission:
    """Build one of the shipped missions."""
    kind = kind.lower()
    n0, e0 = HOME_WAYPOINT
    if kind == "hovering":
        alt = HOVER_ALTITUDE
        return Mission(kind, [_wp(0, 0, alt), _wp(n0, e0, alt), _wp(0, 0, alt)],
                       [0.0, hover_time, 0.0], [0.0] * 3, attack_waypoint=1, takeoff_altitude=alt)
    if kind == "moving":
        alt = MOVING_ALTITUDE
        leg = MOVING_LEG / math.sqrt(2.0)
        return Mission(kind, [_wp(0, 0, alt), _wp(n0, e0, alt), _wp(n0 + leg, e0 + leg, alt), _wp(0, 0, alt)],
                       [0.0, 0.0, 0.0, 0.0], [0.0] * 4, attack_waypoint=1, takeoff_altitude=alt,
                       max_speed=10.0)
    if kind == "maneuver":
        alt = HOVER_ALTITUDE
        corners = [(0.0, 0.0), (TRIANGLE_EDGE, 0.0), (0.5 * TRIANGLE_EDGE, 0.5 * math.sqrt(3.0) * TRIANGLE_EDGE)]
        route = [_wp(0, 0, alt)]
        forward = [corners[1], corners[2], corners[0]]
        backward = [corners[2], corners[1], corners[0]]
        for lap in range(laps):
            route.extend(_wp(n, e, alt) for n, e in (forward if lap % 2 == 0 else backward))
        rng = rng if rng is not None else np.random.default_rng(0)
        preset = int(rng.integers(1, len(route)))
        return Mission(kind, route, [0.0] * len(route), [0.0] * len(route),
                       attack_waypoint=preset, takeoff_altitude=alt, max_speed=3.0)
    if kind == "sysid":
        return sysid_mission()
    raise ValueError(f"Unknown mission kind: {kind}")


def sysid_mission() -> Mission:
    """Excitation flight: altitude steps, yaw doublets and fast horizontal legs."""
    alt = 10.0
    wps = [_wp(0, 0, alt)]
    hold = [1.0]
    yaw = [0.0]
    for step in (4.0, -4.0, 4.0, -4.0):
        wps.append(_wp(0, 0, alt + step))
        hold.append(1.0)
        yaw.append(0.0)
    for target in (1.2, -1.2, 1.2, -1.2, 0.0):
        wps.append(_wp(0, 0, alt))
        hold.append(1.5)
        yaw.append(target)
    for n, e in ((60, 0), (0, 0), (0, 60), (0, 0), (45, 45), (0, 0)):
        wps.append(_wp(n, e, alt))
        hold.append(0.5)
        yaw.append(0.0)
    return Mission("sysid", wps, hold, yaw, attack_waypoint=1, takeoff_altitude=alt, max_speed=12.0)


@dataclass
class MissionTracker:
    """Advances through waypoints once each is reached and its hold time has passed."""
    mission: Mission
    acceptance_radius: float = 0.5
    index: int = 0
    arrived_at: Optional[float] = None
    reached: List[float] = field(default_factory=list)
    complete: bool = False

    @property
    def target(self) -> np.ndarray:
        return self.mission.waypoints[self.index]

    @property
    def target_yaw(self) -> float:
        return self.mission.yaw[self.index]

    def passed_takeoff(self) -> bool:
        return bool(self.reached)

    def attack_waypoint_time(self) -> Optional[float]:
        k = self.mission.attack_waypoint
        return self.reached[k] if len(self.reached) > k else None

    def update(self, t: float, position: np.ndarray) -> np.ndarray:
        if self.complete:
            return self.target
        if self.arrived_at is None and np.linalg.norm(position - self.target) <= self.acceptance_radius:
            self.arrived_at = t
            self.reached.append(t)
            logger.debug("reached waypoint %d at %.2f s", self.index, t)
        if self.arrived_at is not None and t - self.arrived_at >= self.mission.hold[self.index]:
            if self.index + 1 < len(self.mission.waypoints):
                self.index += 1
                self.arrived_at = None
            else:
                self.complete = True
        return self.target
