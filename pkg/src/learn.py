"""
Physical-parameter determination from an excitation flight.

Three least-squares fits run in a fixed order, each consuming the previous
results as fixed values: drag (m_c, b_x, b_y), then the rotor time constant
T_m, then the rotor gyroscopic coefficient k_r. Every fit is a Nelder-Mead
search in coordinates normalized to the plausible ranges in FIT_RANGES.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize, signal

from .config import FIT_RANGES, REALWORLD_BATTERY, BatteryConfig, PhysicalParams, WindConfig, write_ini
from .engine import fly
from .flightlog import FlightLog
from .physmodel import YAW_SIGNS, allocation_matrix, inertia_terms
from .scenario import ScenarioConfig, realworld_vehicle

logger = logging.getLogger(__name__)

LEARNED = ("momentum_drag", "ballistic_x", "ballistic_y", "time_constant", "rotor_gyro_coeff")
MIN_ALTITUDE = 1.0  # m, rows closer to the ground are left out of every fit
MIN_AIRSPEED = 0.5  # m/s
MIN_TIME_CONSTANT = 1e-9


class FitError(RuntimeError):
    """The objective could not be evaluated."""


class FitWarning(UserWarning):
    """The data cannot identify the parameter well."""


class SimplexConfig(BaseModel):
    """Nelder-Mead settings; `scale` is the initial simplex edge in normalized coordinates."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    scale: float = Field(default=0.25, gt=0)
    xatol: float = Field(default=1e-8, gt=0)
    fatol: float = Field(default=1e-14, gt=0)
    max_iter: int = Field(default=4000, gt=0)
    adaptive: bool = False


class SimplexResult(NamedTuple):
    x: np.ndarray
    value: float
    iterations: int
    converged: bool


def nelder_mead(objective: Callable[[np.ndarray], float], x0: Sequence[float],
                config: Optional[SimplexConfig] = None) -> SimplexResult:
    """Minimize `objective` from `x0`; a NaN or infinite value aborts the search."""
    config = config or SimplexConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def checked(x: np.ndarray) -> float:
        value = float(objective(x))
        if not math.isfinite(value):
            raise FitError(f"objective is {value} at {np.array2string(x, precision=6)}")
        return value

    checked(x0)
    simplex = np.vstack([x0, x0 + config.scale * np.eye(len(x0))])
    res = optimize.minimize(
        checked, x0, method="Nelder-Mead",
        options={"initial_simplex": simplex, "xatol": config.xatol, "fatol": config.fatol,
                 "maxiter": config.max_iter, "maxfev": 4 * config.max_iter, "adaptive": config.adaptive},
    )
    logger.debug("nelder-mead: %d iterations, value %.6g, %s", res.nit, res.fun, res.message)
    return SimplexResult(np.asarray(res.x, dtype=float), float(res.fun), int(res.nit), bool(res.success))


# ---------------------------------------------------------------- data

@dataclass
class FitData:
    """Time-aligned series taken from one flight log."""
    t: np.ndarray
    q: np.ndarray
    v: np.ndarray
    w: np.ndarray
    rho: np.ndarray
    wind: np.ndarray
    force: np.ndarray  # body-frame specific force
    cmd: np.ndarray
    voltage: np.ndarray
    current: np.ndarray
    airborne: np.ndarray

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    def __len__(self) -> int:
        return len(self.t)


def _rotations(q: np.ndarray) -> np.ndarray:
    """Stacked body-to-NED rotation matrices, shape (n, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((len(q), 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _to_body(q: np.ndarray, vec: np.ndarray) -> np.ndarray:
    return np.einsum("nji,nj->ni", _rotations(q), vec)


def _stack(log: FlightLog, names: Sequence[str]) -> np.ndarray:
    missing = [n for n in names if n not in log.frame.columns]
    if missing:
        raise FitError(f"flight log lacks columns {', '.join(missing)}")
    return log.frame[list(names)].ffill().bfill().to_numpy(dtype=float)


def fit_data(log: FlightLog, source: str = "measured", imu: str = "imu0", gravity: float = 9.81) -> FitData:
    """Series for the fits, from the true states or from the estimate plus raw IMU readings."""
    frame = log.frame
    t = log.column("t")
    if source == "true":
        q = _stack(log, ["true_qw", "true_qx", "true_qy", "true_qz"])
        v = _stack(log, ["true_vn", "true_ve", "true_vd"])
        w = _stack(log, ["true_wx", "true_wy", "true_wz"])
        a = _stack(log, ["true_an", "true_ae", "true_ad"])
        force = _to_body(q, a - gravity * np.array([0.0, 0.0, 1.0]))
        altitude = -_stack(log, ["true_pd"])[:, 0]
    elif source == "measured":
        q = _stack(log, ["ref_qw", "ref_qx", "ref_qy", "ref_qz"])
        v = _stack(log, ["ref_vn", "ref_ve", "ref_vd"])
        w = _stack(log, [f"meas_{imu}_gyro_{i}" for i in range(3)])
        force = _stack(log, [f"meas_{imu}_accel_{i}" for i in range(3)])
        altitude = -_stack(log, ["ref_pd"])[:, 0]
    else:
        raise ValueError(f"unknown fit source: {source}")
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    wind = _stack(log, ["wind_n", "wind_e", "wind_d"]) if "wind_n" in frame.columns else np.zeros((len(t), 3))
    return FitData(
        t=t, q=q, v=v, w=w,
        rho=_stack(log, ["rho"])[:, 0],
        wind=wind,
        force=force,
        cmd=_stack(log, [f"cmd_{i}" for i in range(1, 5)]),
        voltage=_stack(log, ["bat_v"])[:, 0],
        current=_stack(log, ["bat_i"])[:, 0],
        airborne=altitude > MIN_ALTITUDE,
    )


# ---------------------------------------------------------------- predictions

def drag_prediction(data: FitData, momentum_drag: float, ballistic_x: float, ballistic_y: float) -> np.ndarray:
    v_rel = _to_body(data.q, data.v - data.wind)
    speed = np.linalg.norm(v_rel, axis=1, keepdims=True)
    ballistic = np.array([ballistic_x, ballistic_y, 0.0])
    return -(momentum_drag * v_rel + 0.5 * data.rho[:, None] * ballistic * speed * v_rel)


def thrust_commands(data: FitData, params: PhysicalParams) -> np.ndarray:
    """Battery-adjusted relative thrust commanded on each tick."""
    rel = np.clip((data.cmd - params.pwm_min) / params.pwm_range, 0.0, 1.0)
    factor = (data.voltage + params.resistance_internal * data.current) / params.voltage_ref
    return rel * factor[:, None]


def _lag(time_constant: float, dt: float) -> float:
    return math.exp(-dt / max(time_constant, MIN_TIME_CONSTANT))


def rotor_thrust(u: np.ndarray, time_constant: float, dt: float) -> np.ndarray:
    """Lagged rotor thrust at each row; the command on row k acts from row k+1 on."""
    alpha = _lag(time_constant, dt)
    return signal.lfilter([0.0, 1.0 - alpha], [1.0, -alpha], u, axis=0)


def interval_thrust(u: np.ndarray, thrust: np.ndarray, time_constant: float, dt: float) -> np.ndarray:
    """Mean rotor thrust over each tick interval, exact for a command held over the interval."""
    tc = max(time_constant, MIN_TIME_CONSTANT)
    weight = (tc / dt) * (1.0 - _lag(tc, dt))
    return u[:-1] + (thrust[:-1] - u[:-1]) * weight


def control_prediction(data: FitData, params: PhysicalParams, time_constant: float) -> np.ndarray:
    thrust = rotor_thrust(thrust_commands(data, params), time_constant, data.dt)
    return -(params.thrust_coeff / params.mass) * thrust.sum(axis=1)


def rate_target(data: FitData) -> np.ndarray:
    """Angular acceleration by central differences, one-sided at both ends."""
    return np.gradient(data.w, data.t, axis=0, edge_order=1)


def rate_prediction(data: FitData, params: PhysicalParams, rotor_gyro_coeff: float) -> np.ndarray:
    """Predicted angular acceleration per row: each row averages the two intervals around it."""
    dt = data.dt
    u = thrust_commands(data, params)
    thrust = rotor_thrust(u, params.time_constant, dt)
    mean_thrust = interval_thrust(u, thrust, params.time_constant, dt)
    j, j_inv = inertia_terms(params)
    tau = mean_thrust @ allocation_matrix(params)[1:].T
    w_mid = 0.5 * (data.w[1:] + data.w[:-1])
    base = (np.cross(w_mid @ j.T, w_mid) + tau) @ j_inv.T
    spin = np.diff(np.sqrt(np.maximum(thrust, 0.0)), axis=0) @ YAW_SIGNS / dt
    gyro = np.outer(spin, j_inv[:, 2])
    interval = base + rotor_gyro_coeff * gyro
    rows = np.empty_like(data.w)
    rows[0] = interval[0]
    rows[-1] = interval[-1]
    rows[1:-1] = 0.5 * (interval[:-1] + interval[1:])
    return rows


# ---------------------------------------------------------------- objectives

def _mse(err: np.ndarray) -> float:
    return float(np.mean(err * err)) if err.size else float("nan")


def drag_cost(data: FitData, values: Dict[str, float]) -> float:
    pred = drag_prediction(data, values["momentum_drag"], values["ballistic_x"], values["ballistic_y"])
    mask = data.airborne
    return _mse(data.force[mask, :2] - pred[mask, :2])


def time_constant_cost(data: FitData, params: PhysicalParams, time_constant: float) -> float:
    drag = drag_prediction(data, params.momentum_drag, params.ballistic_x, params.ballistic_y)
    target = data.force[:, 2] - drag[:, 2]
    pred = control_prediction(data, params, time_constant)
    mask = data.airborne
    return _mse(target[mask] - pred[mask])


def rotor_gyro_cost(data: FitData, params: PhysicalParams, rotor_gyro_coeff: float) -> float:
    pred = rate_prediction(data, params, rotor_gyro_coeff)
    mask = data.airborne
    return _mse(rate_target(data)[mask] - pred[mask])


# ---------------------------------------------------------------- fits

@dataclass
class FitResult:
    name: str
    values: Dict[str, float]
    cost: float
    iterations: int
    converged: bool
    ill_conditioned: bool = False
    notes: List[str] = field(default_factory=list)


@dataclass
class FitProblem:
    """Free parameters, searched between their FIT_RANGES bounds, and the cost they minimize."""
    name: str
    free: Tuple[str, ...]
    cost: Callable[[Dict[str, float]], float]
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(FIT_RANGES))

    def denormalize(self, z: np.ndarray) -> Dict[str, float]:
        out = {}
        for name, zi in zip(self.free, z):
            lo, hi = self.ranges[name]
            out[name] = lo + float(zi) * (hi - lo)
        return out


def _flag(result: FitResult, message: str):
    result.ill_conditioned = True
    result.notes.append(message)
    logger.warning("%s fit: %s", result.name, message)
    warnings.warn(f"{result.name} fit: {message}", FitWarning, stacklevel=3)


def solve(problem: FitProblem, simplex: Optional[SimplexConfig] = None) -> FitResult:
    """Search from the middle of each parameter's range; results are clipped to the range floor."""
    z0 = np.full(len(problem.free), 0.5)
    res = nelder_mead(lambda z: problem.cost(problem.denormalize(z)), z0, simplex)
    values = problem.denormalize(res.x)
    for name in values:
        values[name] = max(values[name], problem.ranges[name][0])
    result = FitResult(problem.name, values, problem.cost(values), res.iterations, res.converged)
    if not res.converged:
        _flag(result, f"no convergence after {res.iterations} iterations")
    logger.info("%s fit: %s (cost %.4g, %d iterations)", problem.name,
                ", ".join(f"{k}={v:.6g}" for k, v in values.items()), result.cost, res.iterations)
    return result


def fit_drag_params(data: FitData, simplex: Optional[SimplexConfig] = None) -> FitResult:
    airspeed = np.linalg.norm(_to_body(data.q, data.v - data.wind)[data.airborne, :2], axis=1)
    degenerate = airspeed.size == 0 or float(airspeed.max()) < MIN_AIRSPEED
    problem = FitProblem("drag", ("momentum_drag", "ballistic_x", "ballistic_y"), lambda p: drag_cost(data, p))
    result = solve(problem, simplex)
    if degenerate:
        _flag(result, "no horizontal airspeed in the data")
    return result


def fit_time_constant(data: FitData, params: PhysicalParams, simplex: Optional[SimplexConfig] = None) -> FitResult:
    """`params` carries the fitted drag terms."""
    collective = thrust_commands(data, params).sum(axis=1)[data.airborne]
    degenerate = collective.size < 2 or float(np.ptp(collective)) < 1e-6
    problem = FitProblem("time_constant", ("time_constant",),
                         lambda p: time_constant_cost(data, params, p["time_constant"]))
    result = solve(problem, simplex)
    result.values["time_constant"] = max(result.values["time_constant"], MIN_TIME_CONSTANT)
    if degenerate:
        _flag(result, "thrust command never changes")
    return result


def fit_rotor_gyro(data: FitData, params: PhysicalParams, simplex: Optional[SimplexConfig] = None) -> FitResult:
    """`params` carries the fitted drag terms and time constant."""
    u = thrust_commands(data, params)
    thrust = rotor_thrust(u, params.time_constant, data.dt)
    spin = np.diff(np.sqrt(np.maximum(thrust, 0.0)), axis=0) @ YAW_SIGNS
    degenerate = spin.size == 0 or float(np.max(np.abs(spin[data.airborne[1:]]), initial=0.0)) < 1e-9
    problem = FitProblem("rotor_gyro", ("rotor_gyro_coeff",),
                         lambda p: rotor_gyro_cost(data, params, p["rotor_gyro_coeff"]))
    result = solve(problem, simplex)
    if degenerate:
        _flag(result, "no yaw excitation in the data")
    return result


@dataclass
class LearnResult:
    params: PhysicalParams
    fits: List[FitResult]

    @property
    def ill_conditioned(self) -> bool:
        return any(f.ill_conditioned for f in self.fits)

    def values(self) -> Dict[str, float]:
        return {name: getattr(self.params, name) for name in LEARNED}


def learn_parameters(log: FlightLog, base: PhysicalParams, source: str = "measured",
                     simplex: Optional[SimplexConfig] = None) -> LearnResult:
    """Drag, then time constant, then rotor gyro; bench-measured values come from `base`."""
    data = fit_data(log, source, gravity=base.gravity)
    if not data.airborne.any():
        raise FitError("the flight never leaves the ground")
    drag = fit_drag_params(data, simplex)
    params = base.model_copy(update=drag.values)
    lag = fit_time_constant(data, params, simplex)
    params = params.model_copy(update=lag.values)
    gyro = fit_rotor_gyro(data, params, simplex)
    params = params.model_copy(update=gyro.values)
    return LearnResult(params, [drag, lag, gyro])


def learn_from_logs(logs: Sequence[FlightLog], base: PhysicalParams, source: str = "measured",
                    simplex: Optional[SimplexConfig] = None) -> LearnResult:
    """Fit each log separately and average the learned values."""
    if not logs:
        raise FitError("no flight logs to learn from")
    results = [learn_parameters(log, base, source, simplex) for log in logs]
    if len(results) == 1:
        return results[0]
    mean = {name: float(np.mean([getattr(r.params, name) for r in results])) for name in LEARNED}
    fits = [f for r in results for f in r.fits]
    return LearnResult(base.model_copy(update=mean), fits)


def write_vehicle_fragment(path, result: LearnResult, battery: Optional[BatteryConfig] = None):
    """Vehicle file holding the bench values plus the learned ones; loadable with load_vehicle."""
    sections = {"vehicle": result.params.model_dump()}
    if battery is not None:
        sections["battery"] = battery.model_dump()
    lines = ["learned: " + ", ".join(f"{k}={v:.6g}" for k, v in result.values().items())]
    lines.extend(f"{f.name}: cost {f.cost:.4g}, {f.iterations} iterations"
                 + (" (ill-conditioned)" if f.ill_conditioned else "") for f in result.fits)
    return write_ini(path, sections, header="\n".join(lines))


def sysid_scenario(params: Optional[PhysicalParams] = None, seed: int = 0, noise: bool = True,
                   battery: Optional[BatteryConfig] = None) -> ScenarioConfig:
    """Calm-air excitation flight with no attack."""
    base = ScenarioConfig()
    return ScenarioConfig(
        name="sysid",
        mission="sysid",
        seed=seed,
        vehicle=params or realworld_vehicle(),
        battery=battery or BatteryConfig(**REALWORLD_BATTERY),
        sensors=base.sensors if noise else base.sensors.noiseless(),
        wind=WindConfig(mean=(0.0, 0.0, 0.0), sigma=(0.0, 0.0, 0.0)),
        log_residuals=True,
    )


def generate_sysid_log(params: Optional[PhysicalParams] = None, seed: int = 0, noise: bool = True,
                       battery: Optional[BatteryConfig] = None) -> FlightLog:
    result = fly(sysid_scenario(params, seed, noise, battery), record=True)
    logger.info("sysid flight seed %d: %s after %.1f s", seed, result.terminal, result.t_end)
    return result.log
