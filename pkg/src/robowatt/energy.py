"""
Electrical power models and trajectory energy.

The detailed motor path (current, voltage, p = iᵀv) is kept next to the lumped model
p = τᵀq̇ + r_kt2·τᵀτ + p_overhead that the estimators use. The lumped model holds when
every motor has kemf = kt and the same r/kt². Motor inductance is stored but never used.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

import robowatt.config as cfg
from robowatt.dynamics import JointState, rnea
from robowatt.errors import InputError
from robowatt.robot_model import RobotModel
from robowatt.trajio import Trajectory, TrajectoryPoint, time_scale

log = logging.getLogger("robowatt.energy")


def _vector(values, name: str) -> np.ndarray:
    array = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(array)):
        raise InputError(f"{name} has non-finite entries")
    return array


def _same_length(**vectors):
    lengths = {name: vector.shape[0] for name, vector in vectors.items()}
    if len(set(lengths.values())) > 1:
        raise InputError(
            "dimension mismatch: " + ", ".join(f"{name}={n}" for name, n in lengths.items())
        )


@dataclass(frozen=True)
class MotorConstants:
    """Per-motor constants: kt (N·m/A), kemf (V·s/rad), r (Ω), l (H, unused)."""

    kt: np.ndarray
    kemf: np.ndarray
    r: np.ndarray
    l: np.ndarray

    def __post_init__(self):
        arrays = {name: _vector(getattr(self, name), name) for name in ("kt", "kemf", "r", "l")}
        _same_length(**arrays)
        if np.any(arrays["kt"] <= 0):
            raise InputError(f"torque constants must be > 0, got {arrays['kt'].tolist()}")
        for name in ("r", "l"):
            if np.any(arrays[name] < 0):
                raise InputError(f"{name} must be >= 0, got {arrays[name].tolist()}")
        for name, array in arrays.items():
            array.flags.writeable = False
            object.__setattr__(self, name, array)

    @classmethod
    def uniform(cls, n: int, kt: float, r: float, kemf: Optional[float] = None, l: float = 0.0):
        """n identical motors; kemf defaults to kt (SI units)."""
        kemf = kt if kemf is None else kemf
        return cls(kt=[kt] * n, kemf=[kemf] * n, r=[r] * n, l=[l] * n)

    @property
    def n_motors(self) -> int:
        return self.kt.shape[0]


class ElectricalParams(BaseModel):
    """
    The lumped pair of the power model: r_kt2 in W/(N·m)² shared by all joints and the
    constant overhead p_overhead in W.
    """

    model_config = ConfigDict(frozen=True)

    r_kt2: float
    p_overhead: float

    @field_validator("r_kt2", "p_overhead")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    @model_validator(mode="after")
    def _warn_negative(self):
        # negative least-squares fits are carried as-is
        if self.r_kt2 < 0 or self.p_overhead < 0:
            log.warning(
                "electrical params outside the physical range: r_kt2=%g, p_overhead=%g",
                self.r_kt2,
                self.p_overhead,
            )
        return self

    @property
    def is_physical(self) -> bool:
        return self.r_kt2 >= 0 and self.p_overhead >= 0


@dataclass(frozen=True)
class PowerBreakdown:
    t: float
    mechanical: float
    joule: float
    overhead: float

    @property
    def total(self) -> float:
        return self.mechanical + self.joule + self.overhead


IntegrationRule = Literal["left_riemann", "trapezoid"]


class EnergyReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_energy: float
    mechanical_energy: float
    joule_energy: float
    overhead_energy: float
    duration: float
    overhead_fraction: Optional[float]
    integration_rule: IntegrationRule
    n_samples: int


def motor_current(tau, constants: MotorConstants) -> np.ndarray:
    tau = _vector(tau, "tau")
    _same_length(tau=tau, kt=constants.kt)
    return tau / constants.kt


def motor_voltage(tau, qd, constants: MotorConstants) -> np.ndarray:
    """Steady-state terminal voltage, inductance neglected."""
    tau = _vector(tau, "tau")
    qd = _vector(qd, "qd")
    _same_length(tau=tau, qd=qd, kt=constants.kt)
    return constants.kemf * qd + constants.r * tau / constants.kt


def electrical_power(current, voltage) -> float:
    current = _vector(current, "current")
    voltage = _vector(voltage, "voltage")
    _same_length(current=current, voltage=voltage)
    return float(current @ voltage)


def lumped_params(constants: MotorConstants, p_overhead: float) -> ElectricalParams:
    """
    Collapse per-motor constants into ElectricalParams. Only valid when kemf = kt for every
    motor and r/kt² is the same across motors.
    """
    if not np.allclose(constants.kemf, constants.kt, rtol=1e-12, atol=0.0):
        raise InputError("lumped model needs kemf == kt for every motor")
    ratios = constants.r / constants.kt**2
    if not np.allclose(ratios, ratios[0], rtol=1e-12, atol=0.0):
        raise InputError(f"lumped model needs a uniform r/kt^2, got {ratios.tolist()}")
    return ElectricalParams(r_kt2=float(ratios[0]), p_overhead=p_overhead)


def instantaneous_power(tau, qd, params: ElectricalParams, t: float = 0.0) -> PowerBreakdown:
    tau = _vector(tau, "tau")
    qd = _vector(qd, "qd")
    _same_length(tau=tau, qd=qd)
    return PowerBreakdown(
        t=t,
        mechanical=float(tau @ qd),
        joule=params.r_kt2 * float(tau @ tau),
        overhead=params.p_overhead,
    )


def _sample_power(
    model: RobotModel, params: ElectricalParams, point: TrajectoryPoint
) -> PowerBreakdown:
    tau = rnea(model, JointState(q=point.q, qd=point.qd, qdd=point.qdd))
    breakdown = instantaneous_power(tau, point.qd, params, t=point.t)
    if cfg.DEBUG_VERBOSE:
        log.debug(
            "t=%.6f mechanical=%.6g joule=%.6g overhead=%.6g",
            breakdown.t,
            breakdown.mechanical,
            breakdown.joule,
            breakdown.overhead,
        )
    return breakdown


def power_profile(
    traj: Trajectory, model: RobotModel, params: ElectricalParams
) -> List[PowerBreakdown]:
    """
    One PowerBreakdown per trajectory sample with τ from inverse dynamics. Samples are
    evaluated on PROFILE_POOL_SIZE threads; output order always follows the trajectory.
    """
    if len(traj) == 0:
        raise InputError("cannot compute a power profile of an empty trajectory")
    if traj.dof != model.dof:
        raise InputError(f"trajectory has {traj.dof} dof, model '{model.name}' has {model.dof}")
    if not traj.has_derivatives:
        raise InputError("trajectory is missing velocities or accelerations, derive them first")

    def evaluate(point):
        return _sample_power(model, params, point)

    if cfg.PROFILE_POOL_SIZE > 1:
        with ThreadPoolExecutor(max_workers=cfg.PROFILE_POOL_SIZE) as executor:
            profile = list(executor.map(evaluate, traj))
    else:
        profile = [evaluate(point) for point in traj]

    log.debug("computed power profile of %d samples for model '%s'", len(profile), model.name)
    return profile


def _weighted_terms(t: np.ndarray, values: np.ndarray, rule: str) -> List[float]:
    steps = np.diff(t)
    if rule == "left_riemann":
        return (values[:-1] * steps).tolist()
    return ((values[:-1] + values[1:]) * steps / 2.0).tolist()


def trajectory_energy(
    profile: Sequence[PowerBreakdown], rule: Optional[str] = None
) -> EnergyReport:
    """
    Integrate a power profile. left_riemann weights sample i by t[i+1] − t[i] and leaves the
    last sample unweighted; trapezoid averages neighbours. Sums use math.fsum so the result
    does not depend on evaluation order.
    """
    rule = cfg.get_integration_rule(rule)
    if len(profile) == 0:
        raise InputError("cannot integrate an empty power profile")

    t = np.array([sample.t for sample in profile], dtype=float)
    if np.any(np.diff(t) <= 0):
        index = int(np.argmax(np.diff(t) <= 0)) + 1
        raise InputError(f"power profile timestamps not strictly increasing at sample {index}")

    components = {}
    for name in ("mechanical", "joule", "overhead"):
        values = np.array([getattr(sample, name) for sample in profile], dtype=float)
        components[name] = _weighted_terms(t, values, rule)

    mechanical = math.fsum(components["mechanical"])
    joule = math.fsum(components["joule"])
    overhead = math.fsum(components["overhead"])
    total = math.fsum(components["mechanical"] + components["joule"] + components["overhead"])

    return EnergyReport(
        total_energy=total,
        mechanical_energy=mechanical,
        joule_energy=joule,
        overhead_energy=overhead,
        duration=float(t[-1] - t[0]),
        overhead_fraction=overhead / total if total > 0 else None,
        integration_rule=rule,
        n_samples=len(profile),
    )


def energy_of_trajectory(
    traj: Trajectory, model: RobotModel, params: ElectricalParams, rule: Optional[str] = None
) -> EnergyReport:
    return trajectory_energy(power_profile(traj, model, params), rule)


def _scaled_energy(traj, model, params, rule, scale: float) -> float:
    return energy_of_trajectory(time_scale(traj, scale), model, params, rule).total_energy


def sampling_gap_ratio(traj: Trajectory) -> float:
    """Largest sample spacing over the median spacing; 1.0 for uniform sampling."""
    if len(traj) < 2:
        return 1.0
    steps = np.diff(traj.t)
    return float(np.max(steps) / np.median(steps))


class GradientReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    scale: float
    step: float
    energy: float
    gradient: float
    gradient_half_step: float
    richardson: float
    relative_gap: float
    consistent: bool
    max_gap_ratio: float
    sampling_regular: bool
    warnings: List[str]

    @property
    def passed(self) -> bool:
        return self.consistent and self.sampling_regular


def energy_gradient_wrt_scale(
    traj: Trajectory,
    model: RobotModel,
    params: ElectricalParams,
    s: float,
    rule: Optional[str] = None,
) -> GradientReport:
    """
    dE/ds by central differences at h = FD_RELATIVE_STEP·s and h/2. The two must agree within
    RICHARDSON_TOLERANCE relative; otherwise a warning is attached.
    """
    if not s > 0:
        raise InputError(f"time scale must be > 0, got {s}")

    def central(h):
        upper = _scaled_energy(traj, model, params, rule, s + h)
        lower = _scaled_energy(traj, model, params, rule, s - h)
        return (upper - lower) / (2.0 * h)

    step = cfg.FD_RELATIVE_STEP * s
    gradient = central(step)
    gradient_half = central(step / 2.0)
    magnitude = max(abs(gradient), abs(gradient_half))
    relative_gap = abs(gradient - gradient_half) / magnitude if magnitude > 0 else 0.0
    consistent = relative_gap <= cfg.RICHARDSON_TOLERANCE

    gap_ratio = sampling_gap_ratio(traj)
    sampling_regular = gap_ratio <= cfg.GRADCHECK_MAX_GAP_RATIO

    warnings = []
    if not consistent:
        warnings.append(
            f"step sizes {step:.3g} and {step / 2:.3g} disagree by {relative_gap:.3g} relative "
            f"(tolerance {cfg.RICHARDSON_TOLERANCE:.3g})"
        )
    if not sampling_regular:
        warnings.append(
            f"largest sample gap is {gap_ratio:.3g}x the median, energy is not a smooth "
            f"function of the sampled motion"
        )
    for warning in warnings:
        log.warning("gradient check at s=%g: %s", s, warning)

    return GradientReport(
        scale=s,
        step=step,
        energy=_scaled_energy(traj, model, params, rule, s),
        gradient=gradient,
        gradient_half_step=gradient_half,
        richardson=(4.0 * gradient_half - gradient) / 3.0,
        relative_gap=relative_gap,
        consistent=consistent,
        max_gap_ratio=gap_ratio,
        sampling_regular=sampling_regular,
        warnings=warnings,
    )


_INVERSE_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def optimal_time_scale(
    traj: Trajectory,
    model: RobotModel,
    params: ElectricalParams,
    s_min: float,
    s_max: float,
    rule: Optional[str] = None,
) -> Tuple[float, EnergyReport]:
    """
    Golden-section search for the time scale minimizing trajectory energy on [s_min, s_max].
    The bracket shrinks to GOLDEN_RELATIVE_TOLERANCE·(s_max − s_min); the final candidate
    is compared against both endpoints so monotone objectives return an endpoint.
    """
    if not (0 < s_min < s_max) or not (math.isfinite(s_min) and math.isfinite(s_max)):
        raise InputError(f"invalid time scale interval [{s_min}, {s_max}]")

    reports = {}

    def energy(scale):
        if scale not in reports:
            reports[scale] = energy_of_trajectory(time_scale(traj, scale), model, params, rule)
        return reports[scale].total_energy

    tolerance = cfg.GOLDEN_RELATIVE_TOLERANCE * (s_max - s_min)
    low, high = s_min, s_max
    left = high - _INVERSE_GOLDEN * (high - low)
    right = low + _INVERSE_GOLDEN * (high - low)
    iterations = 0
    while high - low > tolerance:
        if energy(left) <= energy(right):
            high, right = right, left
            left = high - _INVERSE_GOLDEN * (high - low)
        else:
            low, left = left, right
            right = low + _INVERSE_GOLDEN * (high - low)
        iterations += 1

    candidates = [0.5 * (low + high), s_min, s_max]
    best = min(candidates, key=lambda scale: (energy(scale), candidates.index(scale)))
    log.debug(
        "golden-section search on [%g, %g] took %d iterations, s*=%.9g (E=%.9g J)",
        s_min,
        s_max,
        iterations,
        best,
        reports[best].total_energy,
    )
    return best, reports[best]


def deviation_percent(estimated: float, measured: float) -> float:
    """Signed deviation (estimated − measured)/measured in percent."""
    if not measured > 0:
        raise InputError(f"measured energy must be > 0, got {measured}")
    return (estimated - measured) / measured * 100.0


def mean_absolute_deviation(pairs: Iterable[Tuple[float, float]]) -> float:
    """Average |deviation %| over (estimated, measured) pairs."""
    deviations = [abs(deviation_percent(estimated, measured)) for estimated, measured in pairs]
    if not deviations:
        raise InputError("no (estimated, measured) pairs given")
    return math.fsum(deviations) / len(deviations)
