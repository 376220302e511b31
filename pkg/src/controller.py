"""Cascaded position -> velocity -> attitude -> rate controller with an inverse-allocation mixer."""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ControllerGains, PhysicalParams
from .physmodel import (
    BatteryState, RigidState, allocation_matrix, battery_factor, inertia_terms, rotation_matrix, E3,
)


@dataclass
class ControllerState:
    gains: ControllerGains
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    output: Optional[np.ndarray] = None


def mix(wrench: np.ndarray, params: PhysicalParams) -> np.ndarray:
    """Relative rotor thrust producing [collective force, roll, pitch, yaw torque]."""
    return np.linalg.solve(allocation_matrix(params), wrench)


def thrust_to_setpoints(thrust: np.ndarray, battery: BatteryState, params: PhysicalParams) -> np.ndarray:
    """Invert the battery-adjusted command normalization and clamp to the actuator range."""
    factor = battery_factor(battery, params)
    sp = params.pwm_min + params.pwm_range * np.asarray(thrust) / factor
    return np.clip(sp, params.pwm_min, params.pwm_min + params.pwm_range)


def desired_rotation(force_dir: np.ndarray, yaw: float) -> np.ndarray:
    """Body axes whose z (down) axis follows force_dir, with the requested heading."""
    z_b = force_dir
    x_c = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_b = np.cross(z_b, x_c)
    n = np.linalg.norm(y_b)
    y_b = y_b / n if n > 1e-9 else np.array([-math.sin(yaw), math.cos(yaw), 0.0])
    x_b = np.cross(y_b, z_b)
    return np.column_stack([x_b, y_b, z_b])


def _limit_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = np.linalg.norm(v)
    return v * (limit / n) if n > limit else v


def controller_step(estimate: RigidState, target: np.ndarray, ctl: ControllerState, dt: float,
                    params: PhysicalParams, battery: BatteryState, yaw: float = 0.0,
                    max_speed: Optional[float] = None) -> np.ndarray:
    """One control tick; returns the four actuator setpoints (us)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = ctl.gains
    grav = params.gravity

    v_cmd = g.position * (np.asarray(target) - estimate.p)
    v_cmd[:2] = _limit_norm(v_cmd[:2], max_speed or g.max_speed_xy)
    v_cmd[2] = float(np.clip(v_cmd[2], -g.max_speed_z, g.max_speed_z))

    v_err = v_cmd - estimate.v
    ctl.integral = np.clip(ctl.integral + v_err * dt, -g.integral_limit, g.integral_limit)
    a_cmd = g.velocity * v_err + g.velocity_integral * ctl.integral

    # force direction along body +z (down); tilt limited
    f = grav * E3 - a_cmd
    f[2] = max(f[2], 0.2 * grav)
    f[:2] = _limit_norm(f[:2], f[2] * math.tan(math.radians(g.max_tilt_deg)))
    f_norm = float(np.linalg.norm(f))
    r_d = desired_rotation(f / f_norm, yaw)

    r = rotation_matrix(estimate.q)
    e_r = 0.5 * (r_d.T @ r - r.T @ r_d)
    e_vec = np.array([e_r[2, 1], e_r[0, 2], e_r[1, 0]])
    w_cmd = np.clip(-g.attitude * e_vec, -g.max_rate, g.max_rate)

    j, _ = inertia_terms(params)
    w = estimate.w
    tau = j @ (g.rate * (w_cmd - w)) + np.cross(w, j @ w)
    force = params.mass * f_norm
    thrust = np.clip(mix(np.concatenate([[force], tau]), params), 0.0, 1.0)
    ctl.output = thrust_to_setpoints(thrust, battery, params)
    return ctl.output


def hover_setpoints(params: PhysicalParams, battery: BatteryState) -> np.ndarray:
    thrust = np.full(4, params.mass * params.gravity / (4.0 * params.thrust_coeff))
    return thrust_to_setpoints(thrust, battery, params)
