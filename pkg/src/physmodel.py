"""Nonlinear quadcopter model: battery-adjusted thrust, rotor lag, control wrench, drag, rigid body.

Frames: positions and velocities are NED, body axes are FRD, the quaternion
[w, x, y, z] rotates body vectors into NED. Rotor layout (quad-X):
1 front-right, 2 rear-left, 3 front-left, 4 rear-right; rotors 1 and 2 spin
so that their reaction torque yaws the airframe positively.
"""
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .config import ConfigError, PhysicalParams

E3 = np.array([0.0, 0.0, 1.0])
THRUST_AXIS = np.array([0.0, 0.0, -1.0])

ROLL_SIGNS = np.array([-1.0, 1.0, 1.0, -1.0])
PITCH_SIGNS = np.array([1.0, -1.0, 1.0, -1.0])
YAW_SIGNS = np.array([1.0, 1.0, -1.0, -1.0])


@dataclass(frozen=True)
class RigidState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self, **changes) -> "RigidState":
        return replace(self, **changes)


@dataclass(frozen=True)
class ThrustState:
    """Per-rotor relative thrust; `prev` holds the values one step earlier."""
    thrust: np.ndarray
    prev: np.ndarray

    @classmethod
    def hover(cls, params: PhysicalParams) -> "ThrustState":
        t = np.full(4, hover_thrust(params))
        return cls(t, t.copy())


@dataclass(frozen=True)
class BatteryState:
    voltage: float
    current: float = 0.0


@dataclass(frozen=True)
class AirState:
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))
    density: float = 1.225


# ---------------------------------------------------------------- quaternions

def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    angle = math.sqrt(phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2])
    if angle < 1e-12:
        return np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
    s = math.sin(0.5 * angle) / angle
    return np.array([math.cos(0.5 * angle), phi[0] * s, phi[1] * s, phi[2] * s])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def rotation_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return quat_normalize(q if q[0] >= 0 else -q)


def euler_angles(q: np.ndarray) -> Tuple[float, float, float]:
    """Roll, pitch, yaw (rad) of a body-to-NED quaternion."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2 * (w * y - z * x))))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def integrate_quaternion(q: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
    """Rotate by body rate w over dt and renormalize."""
    return quat_normalize(quat_multiply(q, quat_from_rotvec(w * dt)))


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


# ---------------------------------------------------------------- model terms

@lru_cache(maxsize=64)
def inertia_terms(params: PhysicalParams) -> Tuple[np.ndarray, np.ndarray]:
    j = params.inertia
    try:
        return j, np.linalg.inv(j)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("inertia matrix is singular") from exc


@lru_cache(maxsize=64)
def allocation_matrix(params: PhysicalParams) -> np.ndarray:
    """Maps relative rotor thrust to [collective force, roll, pitch, yaw torque]."""
    ctl = params.thrust_coeff * params.arm_length
    return np.vstack([
        np.full(4, params.thrust_coeff),
        ctl * ROLL_SIGNS,
        ctl * PITCH_SIGNS,
        params.torque_coeff * YAW_SIGNS,
    ])


def hover_thrust(params: PhysicalParams) -> float:
    """Per-rotor relative thrust that balances gravity."""
    return params.mass * params.gravity / (4.0 * params.thrust_coeff)


def battery_factor(battery: BatteryState, params: PhysicalParams) -> float:
    if not params.battery_adjust:
        return 1.0
    if battery.voltage <= 0:
        raise ValueError("load voltage must be positive")
    return (battery.voltage + params.resistance_internal * battery.current) / params.voltage_ref


def normalized_thrust_setpoint(setpoint, battery: BatteryState, params: PhysicalParams):
    """Battery-adjusted relative thrust command for one or more actuator setpoints (us)."""
    if params.voltage_ref <= 0 or params.pwm_range <= 0:
        raise ConfigError("voltage_ref and pwm_range must be positive")
    rel = (np.asarray(setpoint, dtype=float) - params.pwm_min) / params.pwm_range
    return np.maximum(rel, 0.0) * battery_factor(battery, params)


def lag_factor(dt: float, params: PhysicalParams) -> float:
    if not params.rotor_delay:
        return 0.0
    return math.exp(-dt / params.time_constant)


def update_thrust_estimate(prev: Optional[ThrustState], command: np.ndarray, dt: float,
                           params: PhysicalParams) -> ThrustState:
    """First-order rotor lag; the first call starts at the command itself."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    command = np.maximum(np.asarray(command, dtype=float), 0.0)
    if prev is None:
        return ThrustState(command.copy(), command.copy())
    alpha = lag_factor(dt, params)
    return ThrustState(alpha * prev.thrust + (1.0 - alpha) * command, prev.thrust)


def control_wrench(thrust: ThrustState, dt: float, params: PhysicalParams) -> Tuple[np.ndarray, np.ndarray]:
    """Body-frame control acceleration and torque; rotor speed squared is taken as relative thrust."""
    t = thrust.thrust
    a_ctrl = (params.thrust_coeff / params.mass) * float(t.sum()) * THRUST_AXIS
    alloc = allocation_matrix(params)
    tau = alloc[1:] @ t
    if params.rotor_gyro and params.rotor_gyro_coeff != 0.0 and dt > 0:
        rotor_acc = (np.sqrt(t) - np.sqrt(thrust.prev)) / dt
        tau = tau + np.array([0.0, 0.0, params.rotor_gyro_coeff * float(YAW_SIGNS @ rotor_acc)])
    return a_ctrl, tau


def drag_acceleration(v_rel: np.ndarray, density: float, params: PhysicalParams) -> np.ndarray:
    """Momentum plus quadratic drag, opposing the body-frame airspeed."""
    if density <= 0:
        raise ValueError("air density must be positive")
    if not params.drag:
        return np.zeros(3)
    v_rel = np.asarray(v_rel, dtype=float)
    speed = math.sqrt(float(v_rel @ v_rel))
    return -(params.momentum_drag * v_rel + 0.5 * density * params.ballistic * speed * v_rel)


def angular_acceleration(w: np.ndarray, tau: np.ndarray, params: PhysicalParams) -> np.ndarray:
    j, j_inv = inertia_terms(params)
    return j_inv @ (np.cross(j @ w, w) + tau)


def propagate(state: RigidState, a_ctrl: np.ndarray, a_drag: np.ndarray, w_dot: np.ndarray,
              dt: float, params: PhysicalParams) -> RigidState:
    """Semi-implicit Euler step: rates and velocity first, then attitude and position."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = rotation_matrix(state.q)
    a = params.gravity * E3 + r @ (a_ctrl + a_drag)
    v = state.v + a * dt
    w = state.w + w_dot * dt
    return RigidState(
        p=state.p + v * dt,
        v=v,
        a=a,
        q=integrate_quaternion(state.q, w, dt),
        w=w,
    )


def specific_force(a_ctrl: np.ndarray, a_drag: np.ndarray) -> np.ndarray:
    """What an ideal accelerometer reads in the body frame."""
    return a_ctrl + a_drag


class ModelPredictor:
    """Defense-side model: turns the last actuator command and battery reading into a wrench."""

    def __init__(self, params: PhysicalParams, dt: float):
        self.params = params
        self.dt = dt
        self.thrust: Optional[ThrustState] = None

    def reset_hover(self):
        self.thrust = ThrustState.hover(self.params)

    def step(self, setpoints: np.ndarray, battery: BatteryState) -> Tuple[np.ndarray, np.ndarray]:
        command = normalized_thrust_setpoint(setpoints, battery, self.params)
        self.thrust = update_thrust_estimate(self.thrust, command, self.dt, self.params)
        return control_wrench(self.thrust, self.dt, self.params)

    def drag(self, q: np.ndarray, v: np.ndarray, wind: np.ndarray, density: float) -> np.ndarray:
        v_rel = rotation_matrix(q).T @ (v - wind)
        return drag_acceleration(v_rel, density, self.params)
