"""Reference-state estimation: buffered front end for angular velocity, complementary back end for the rest.

The vanilla estimator the controller normally flies on shares the back end's
correction code but propagates with raw IMU readings instead of the model.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .config import CONTROL_RATE, EstimatorConfig, PhysicalParams
from .physmodel import (
    E3, RigidState, angular_acceleration, integrate_quaternion, quat_from_rotvec, quat_multiply,
    quat_normalize, rotation_matrix,
)

logger = logging.getLogger(__name__)


def buffer_size(hold_time: float, rate: float) -> int:
    if hold_time < 0 or rate <= 0:
        raise ValueError("buffer hold time must be >= 0 and rate > 0")
    return 1 + math.ceil(hold_time * rate - 1e-9)


class FifoBuffer:
    """Fixed-capacity queue of (t, value); a push into a full buffer hands back the oldest entry."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.entries: Deque[Tuple[float, np.ndarray]] = deque()

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, t: float, value: np.ndarray) -> Optional[Tuple[float, np.ndarray]]:
        if self.entries and t < self.entries[-1][0]:
            raise ValueError("entries must be pushed in time order")
        self.entries.append((t, np.array(value, dtype=float)))
        if len(self.entries) >= self.capacity:
            return self.entries.popleft()
        return None

    def pop_aligned(self, t: float, tolerance: float) -> Optional[Tuple[float, np.ndarray]]:
        """Drop entries older than t - tolerance, then pop the front if it lies within tolerance of t."""
        while self.entries and self.entries[0][0] < t - tolerance - 1e-12:
            self.entries.popleft()
        if self.entries and abs(self.entries[0][0] - t) <= tolerance + 1e-12:
            return self.entries.popleft()
        return None

    def shift(self, delta: np.ndarray):
        self.entries = deque((t, v + delta) for t, v in self.entries)

    def clear(self):
        self.entries.clear()


@dataclass
class ReferenceState:
    t: float
    state: RigidState
    provenance: Tuple[str, ...] = ()


# ---------------------------------------------------------------- front end

class FrontEnd:
    """Model-predicted angular velocity, corrected by IMU readings held back by the FIFO buffer."""

    def __init__(self, params: PhysicalParams, cfg: EstimatorConfig, imu_units: Iterable[str],
                 dt: float = 1.0 / CONTROL_RATE, imu_rate: float = CONTROL_RATE):
        self.params = params
        self.cfg = cfg
        self.dt = dt
        self.gain = cfg.frontend_gain
        self.tolerance = 0.5 / imu_rate
        hold = cfg.effective_buffer_time
        self.estimates = FifoBuffer(buffer_size(hold, 1.0 / dt))
        # one spare slot: the aligned sample is taken after this tick's push
        self.measurements: Dict[str, FifoBuffer] = {u: FifoBuffer(buffer_size(hold, imu_rate) + 1) for u in imu_units}
        self.w = np.zeros(3)
        self.w_cs = np.zeros(3)
        self.predicted = np.zeros(3)
        self.predicted_cs = np.zeros(3)
        self.purged: set = set()
        self.fused: List[Tuple[str, float]] = []

    def predict(self, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Euler step of the rotational dynamics for both the buffered and the newest-corrected estimate."""
        self.predicted = self.w + self.dt * angular_acceleration(self.w, tau, self.params)
        self.predicted_cs = self.w_cs + self.dt * angular_acceleration(self.w_cs, tau, self.params)
        return self.predicted, self.predicted_cs

    def purge(self, unit: str):
        if unit in self.measurements and unit not in self.purged:
            dropped = len(self.measurements[unit])
            self.measurements[unit].clear()
            self.purged.add(unit)
            logger.debug("purged %d buffered samples of %s", dropped, unit)

    def correct(self, t: float, readings: Dict[str, np.ndarray]) -> np.ndarray:
        """Fuse the oldest aligned validated sample; readings holds this tick's gyro values by unit."""
        self.fused = []
        for unit in sorted(readings):
            if unit in self.purged or unit not in self.measurements:
                continue
            self.measurements[unit].push(t, readings[unit])
        w = self.predicted
        popped = self.estimates.push(t, w)
        if popped is not None:
            t_est, w_old = popped
            for unit in sorted(self.measurements):
                if unit in self.purged:
                    continue
                sample = self.measurements[unit].pop_aligned(t_est, self.tolerance)
                if sample is None:
                    continue
                delta = self.gain * (sample[1] - w_old)
                w = w + delta
                self.estimates.shift(delta)
                self.fused.append((unit, sample[0]))
                break
        self.w = w

        w_cs = self.predicted_cs
        newest = [u for u in sorted(readings) if u not in self.purged and u in self.measurements]
        if newest:
            w_cs = w_cs + self.gain * (readings[newest[0]] - w_cs)
        self.w_cs = w_cs
        return self.w


def frontend_step(front: FrontEnd, tau: Optional[np.ndarray], readings: Dict[str, np.ndarray],
                  flagged: Iterable[str], t: float) -> np.ndarray:
    """Purge flagged instances, predict, then fuse; returns the corrected (or purely predicted) rate.

    `tau=None` fuses against the prediction already made this tick.
    """
    for unit in flagged:
        front.purge(unit)
    if tau is not None:
        front.predict(tau)
    return front.correct(t, {u: v for u, v in readings.items() if u not in front.purged})


# ---------------------------------------------------------------- complementary filters

class ComplementaryFilter:
    """Position, velocity and attitude with fixed-gain residual feedback."""

    def __init__(self, cfg: EstimatorConfig, field_ned: np.ndarray, dt: float = 1.0 / CONTROL_RATE,
                 gravity: float = 9.81, initial: Optional[RigidState] = None):
        self.cfg = cfg
        self.field_ned = np.asarray(field_ned, dtype=float)
        self.dt = dt
        self.gravity = gravity
        self.state = initial if initial is not None else RigidState()
        self.corrected_by: List[str] = []

    def propagate(self, specific_force: np.ndarray, w: np.ndarray) -> RigidState:
        s = self.state
        a = self.gravity * E3 + rotation_matrix(s.q) @ specific_force
        v = s.v + a * self.dt
        p = s.p + v * self.dt
        if p[2] > 0.0:
            # cannot be below the ground plane
            p = np.array([p[0], p[1], 0.0])
            v = np.array([v[0], v[1], min(v[2], 0.0)])
        self.state = RigidState(p=p, v=v, a=a, q=integrate_quaternion(s.q, w, self.dt), w=np.array(w, dtype=float))
        self.corrected_by = []
        return self.state

    def update_gps_position(self, position: np.ndarray, source: str = "gps"):
        s = self.state
        err = np.asarray(position, dtype=float) - s.p
        err[2] = 0.0
        self.state = s.copy(p=s.p + self.cfg.gps_position_gain * err,
                            v=s.v + self.cfg.gps_position_velocity_gain * err)
        self.corrected_by.append(source)

    def update_gps_velocity(self, velocity: np.ndarray, source: str = "gps"):
        s = self.state
        dv = np.asarray(velocity, dtype=float) - s.v
        self.state = s.copy(v=s.v + self.cfg.gps_velocity_gain * dv)
        self.tilt(dv)
        self.corrected_by.append(source)

    def tilt(self, dv: np.ndarray):
        """Level the attitude from a velocity innovation: thrust tilted the wrong way shows up as horizontal drift."""
        if self.cfg.tilt_gain == 0.0:
            return
        dtheta = self.cfg.tilt_gain * np.cross(dv, E3) / self.gravity
        s = self.state
        self.state = s.copy(q=quat_normalize(quat_multiply(quat_from_rotvec(dtheta), s.q)))

    def update_altitude(self, altitude: float, source: str = "baro"):
        s = self.state
        err = -float(altitude) - s.p[2]
        p = s.p.copy()
        v = s.v.copy()
        p[2] += self.cfg.baro_gain * err
        v[2] += self.cfg.baro_velocity_gain * err
        self.state = s.copy(p=p, v=v)
        self.corrected_by.append(source)

    def update_magnetometer(self, field_body: np.ndarray, source: str = "mag"):
        """Heading-only correction towards the measured body-frame field."""
        s = self.state
        r = rotation_matrix(s.q)
        measured = np.asarray(field_body, dtype=float)
        norm = np.linalg.norm(measured)
        if norm < 1e-9:
            return
        predicted = r.T @ self.field_ned
        err = np.cross(measured / norm, predicted / np.linalg.norm(predicted))
        down = r.T @ E3
        err = float(err @ down) * down
        self.state = s.copy(q=quat_normalize(quat_multiply(s.q, quat_from_rotvec(self.cfg.mag_gain * err))))
        self.corrected_by.append(source)

    def predicted_field(self) -> np.ndarray:
        return rotation_matrix(self.state.q).T @ self.field_ned


class BackEnd(ComplementaryFilter):
    """Propagates with the model wrench and the front-end rate."""

    def predict(self, a_ctrl: np.ndarray, a_drag: np.ndarray, w: np.ndarray) -> RigidState:
        return self.propagate(np.asarray(a_ctrl) + np.asarray(a_drag), w)

    def reference(self, t: float, front: Optional[FrontEnd] = None) -> ReferenceState:
        provenance = list(self.corrected_by)
        if front is not None:
            provenance = [u for u, _ in front.fused] + provenance
        return ReferenceState(t, self.state, tuple(provenance))


def apply_corrections(filt: ComplementaryFilter, gps: Optional[Tuple[str, Dict[str, np.ndarray]]] = None,
                      altitude: Optional[Tuple[str, float]] = None,
                      mag: Optional[Tuple[str, np.ndarray]] = None):
    """Feed whichever selected sources produced a sample this tick."""
    if gps is not None:
        unit, values = gps
        if "gps_position" in values:
            filt.update_gps_position(values["gps_position"], unit)
        if "gps_velocity" in values:
            filt.update_gps_velocity(values["gps_velocity"], unit)
    if altitude is not None:
        filt.update_altitude(altitude[1], altitude[0])
    if mag is not None:
        filt.update_magnetometer(mag[1], mag[0])


def backend_step(back: BackEnd, w: Optional[np.ndarray], a_ctrl: Optional[np.ndarray], a_drag: Optional[np.ndarray],
                 t: float, gps=None, altitude=None, mag=None, front: Optional[FrontEnd] = None) -> ReferenceState:
    """Predict (skipped when `w` is None), then correct with the selected sources."""
    if w is not None:
        back.predict(a_ctrl, a_drag, w)
    apply_corrections(back, gps, altitude, mag)
    return back.reference(t, front)


class VanillaEstimator(ComplementaryFilter):
    """Stand-in for the autopilot estimator: integrates whichever IMU the recovery policy selects."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.last_gyro = np.zeros(3)
        self.last_accel = -self.gravity * E3

    def step(self, gyro: Optional[np.ndarray], accel: Optional[np.ndarray]) -> RigidState:
        if gyro is not None:
            self.last_gyro = np.asarray(gyro, dtype=float)
        if accel is not None:
            self.last_accel = np.asarray(accel, dtype=float)
        return self.propagate(self.last_accel, self.last_gyro)
