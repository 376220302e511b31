"""Ground-truth plant: wind process, battery, air density and a fixed-step RK4 rigid body."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .config import CONTROL_RATE, BatteryConfig, PhysicalParams, WindConfig
from .physmodel import (
    E3, THRUST_AXIS, YAW_SIGNS, AirState, BatteryState, RigidState,
    allocation_matrix, drag_acceleration, inertia_terms, quat_multiply, quat_normalize,
    rotation_matrix,
)

logger = logging.getLogger(__name__)

SEA_LEVEL_DENSITY = 1.225


class WindModel:
    """Random-walk wind around a base vector, with optional mean reversion."""

    def __init__(self, cfg: WindConfig, rng: np.random.Generator, rate: float = CONTROL_RATE):
        self.mean = np.array(cfg.mean, dtype=float)
        self.sigma = np.array(cfg.sigma, dtype=float)
        self.step_std = self.sigma / math.sqrt(rate * cfg.scale)
        self.decay = 1.0 - (1.0 / (rate * cfg.reversion)) if cfg.reversion > 0 else 1.0
        self.state = np.zeros(3)
        self.rng = rng

    def step(self) -> np.ndarray:
        noise = self.rng.normal(0.0, 1.0, 3) * self.step_std
        self.state = self.decay * self.state + noise
        return self.mean + self.state


def step_wind(model: WindModel) -> np.ndarray:
    return model.step()


def air_density(altitude: float) -> float:
    """Standard-atmosphere troposphere density at an altitude above sea level (m)."""
    return SEA_LEVEL_DENSITY * (1.0 - 2.25577e-5 * max(altitude, 0.0)) ** 4.2559


class BatteryModel:
    """Open-circuit voltage falls linearly with drawn charge; load sags through R_int."""

    def __init__(self, params: PhysicalParams, cfg: BatteryConfig):
        self.params = params
        self.cfg = cfg
        self.drawn = 0.0  # Ah
        self.state = BatteryState(voltage=params.voltage_ref, current=0.0)

    @property
    def open_circuit(self) -> float:
        frac = min(self.drawn / self.cfg.capacity, 1.0)
        return self.params.voltage_ref - frac * (self.params.voltage_ref - self.cfg.voltage_empty)

    def draw(self, relative: np.ndarray, dt: float) -> float:
        """Account one step of load; returns the open-circuit voltage the rotors saw."""
        v_oc = self.open_circuit
        current = self.cfg.current_per_thrust * float(np.sum(relative))
        self.drawn += current * dt / 3600.0
        self.state = BatteryState(voltage=v_oc - self.params.resistance_internal * current, current=current)
        return v_oc


@dataclass
class PlantOutput:
    state: RigidState
    battery: BatteryState
    air: AirState
    thrust: np.ndarray


class QuadPlant:
    """Full-fidelity vehicle integrated with RK4; rotor lag is solved in closed form inside the step."""

    def __init__(self, params: PhysicalParams, battery: BatteryConfig,
                 initial: Optional[RigidState] = None, altitude_offset: float = 0.0):
        self.params = params
        self.battery = BatteryModel(params, battery)
        self.state = initial if initial is not None else RigidState()
        self.thrust = np.zeros(4)
        self.altitude_offset = altitude_offset
        self.air = AirState(np.zeros(3), air_density(altitude_offset))
        self.airborne = False
        self._j, self._j_inv = inertia_terms(params)
        self._alloc = allocation_matrix(params)

    # y = [p(3), v(3), q(4), w(3)]
    def _derivative(self, y: np.ndarray, thrust: np.ndarray, wind: np.ndarray, density: float) -> np.ndarray:
        p = self.params
        q = y[6:10]
        r = rotation_matrix(q)
        v_rel = r.T @ (y[3:6] - wind)
        a_ctrl = (p.thrust_coeff / p.mass) * float(thrust.sum()) * THRUST_AXIS
        a = p.gravity * E3 + r @ (a_ctrl + drag_acceleration(v_rel, density, p))
        w = y[10:13]
        tau = self._alloc[1:] @ thrust
        w_dot = self._j_inv @ (np.cross(self._j @ w, w) + tau)
        q_dot = 0.5 * quat_multiply(q, np.array([0.0, w[0], w[1], w[2]]))
        out = np.empty(13)
        out[0:3] = y[3:6]
        out[3:6] = a
        out[6:10] = q_dot
        out[10:13] = w_dot
        return out

    def _thrust_at(self, start: np.ndarray, command: np.ndarray, s: float) -> np.ndarray:
        if s <= 0:
            return start
        return command + (start - command) * math.exp(-s / self.params.time_constant)

    def step(self, setpoints: np.ndarray, wind: np.ndarray, dt: float) -> PlantOutput:
        p = self.params
        relative = np.clip((np.asarray(setpoints, dtype=float) - p.pwm_min) / p.pwm_range, 0.0, 1.0)
        v_oc = self.battery.draw(relative, dt)
        command = relative * (v_oc / p.voltage_ref)
        density = air_density(self.altitude_offset - self.state.p[2])

        s = self.state
        y = np.concatenate([s.p, s.v, s.q, s.w])
        t0 = self.thrust
        t_half = self._thrust_at(t0, command, 0.5 * dt)
        t_end = self._thrust_at(t0, command, dt)
        k1 = self._derivative(y, t0, wind, density)
        k2 = self._derivative(y + 0.5 * dt * k1, t_half, wind, density)
        k3 = self._derivative(y + 0.5 * dt * k2, t_half, wind, density)
        k4 = self._derivative(y + dt * k3, t_end, wind, density)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

        if p.rotor_gyro_coeff != 0.0:
            # rotor spin-up torque integrates exactly to the change in rotor speed
            impulse = p.rotor_gyro_coeff * float(YAW_SIGNS @ (np.sqrt(t_end) - np.sqrt(t0)))
            y[10:13] += self._j_inv @ np.array([0.0, 0.0, impulse])

        q = quat_normalize(y[6:10])
        pos, vel, w = y[0:3], y[3:6], y[10:13]
        if pos[2] < -1.0:
            self.airborne = True
        if pos[2] > 0.0 and not self.airborne:
            # resting on the ground before takeoff
            pos = np.array([pos[0], pos[1], 0.0])
            vel = np.zeros(3)
            w = np.zeros(3)
        self.thrust = t_end
        a = self._derivative(np.concatenate([pos, vel, q, w]), t_end, wind, density)[3:6]
        if pos[2] >= 0.0 and not self.airborne:
            a = np.zeros(3) if a[2] > 0 else a
        self.state = RigidState(p=pos, v=vel, a=a, q=q, w=w)
        self.air = AirState(np.array(wind, dtype=float), density)
        return PlantOutput(self.state, self.battery.state, self.air, t_end)

    def crashed(self) -> bool:
        r33 = rotation_matrix(self.state.q)[2, 2]
        return r33 < 0.0 or (self.airborne and self.state.p[2] >= 0.0)

    def specific_force(self) -> np.ndarray:
        """Body-frame specific force at the current state."""
        s = self.state
        return rotation_matrix(s.q).T @ (s.a - self.params.gravity * E3)
