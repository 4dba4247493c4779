"""
Identification of ElectricalParams from powered static poses.

At rest the power model reduces to p = r_kt2·‖G(q)‖² + p_overhead, where G(q) is the
gravity torque vector (τᵀτ = ‖G(q)‖² when q̇ = q̈ = 0). Method 1 ignores the quadratic term
and takes the mean power as the overhead. Method 2 fits both terms by ordinary least squares
on the regressor ‖G(q)‖².
"""

import csv
import importlib.resources
import io
import json
import logging
import math
import re
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

import robowatt.config as cfg
from robowatt.dynamics import gravity_torque
from robowatt.energy import ElectricalParams
from robowatt.errors import DegenerateRegressionError, InputError, ParseError
from robowatt.robot_model import RobotModel
from robowatt.trajio import format_float

log = logging.getLogger("robowatt.identification")

Method = Literal["method1", "method2"]

_Q_COLUMN_REGEX = re.compile(r"^q_(\d+)$")


class StaticPoseMeasurement(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: tuple[float, ...]
    measured_power: float
    label: Optional[str] = None

    @field_validator("measured_power")
    @classmethod
    def _positive_power(cls, value: float) -> float:
        if not math.isfinite(value) or value <= 0:
            raise ValueError(f"measured power must be finite and > 0, got {value}")
        return value

    @field_validator("q")
    @classmethod
    def _finite_pose(cls, value: tuple) -> tuple:
        if not all(math.isfinite(v) for v in value):
            raise ValueError("pose has non-finite joint values")
        return value


class IdentificationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: ElectricalParams
    method: Method
    residuals: tuple[float, ...]
    rms_residual: float
    r_squared: Optional[float] = None
    n_poses: int
    # ‖G(q)‖² per pose, method2 only
    regressors: Optional[tuple[float, ...]] = None
    # max/min ‖G‖² over the poses, an advisory conditioning metric
    regressor_spread: Optional[float] = None
    diagnostics: tuple[str, ...] = ()


def _rms(values) -> float:
    values = list(values)
    return math.sqrt(math.fsum(v * v for v in values) / len(values)) if values else 0.0


def gravity_regressor(model: RobotModel, q) -> float:
    """‖G(q)‖², in (N·m)²."""
    torque = gravity_torque(model, q)
    return float(torque @ torque)


def identify_method1(measurements: Sequence[StaticPoseMeasurement]) -> IdentificationResult:
    if not measurements:
        raise InputError("method1 needs at least one measurement")

    powers = [m.measured_power for m in measurements]
    mean = math.fsum(powers) / len(powers)
    residuals = tuple(power - mean for power in powers)

    log.info("method1: p_overhead=%.6g W from %d poses", mean, len(powers))
    return IdentificationResult(
        params=ElectricalParams(r_kt2=0.0, p_overhead=mean),
        method="method1",
        residuals=residuals,
        rms_residual=_rms(residuals),
        n_poses=len(powers),
    )


def identify_method2(
    measurements: Sequence[StaticPoseMeasurement], model: RobotModel
) -> IdentificationResult:
    """
    Least-squares fit of measured power against [‖G(q)‖², 1]. Negative fits are returned
    unchanged with a warning diagnostic.
    """
    if len(measurements) < 2:
        raise DegenerateRegressionError(
            "|G(q)|^2", f"method2 needs at least 2 measurements, got {len(measurements)}"
        )

    regressors = np.array([gravity_regressor(model, m.q) for m in measurements])
    powers = np.array([m.measured_power for m in measurements])

    spread = float(np.max(regressors) - np.min(regressors))
    magnitude = float(np.max(np.abs(regressors)))
    if spread <= 1e-9 * max(magnitude, 1.0):
        raise DegenerateRegressionError(
            "|G(q)|^2",
            f"design matrix is rank deficient: regressor ‖G(q)‖² takes a single value "
            f"({magnitude:.6g}) over {len(measurements)} poses",
        )

    design = np.column_stack([regressors, np.ones_like(regressors)])
    (slope, intercept), _, rank, _ = np.linalg.lstsq(design, powers, rcond=None)
    if rank < 2:
        raise DegenerateRegressionError("|G(q)|^2", "design matrix is rank deficient")

    predicted = design @ np.array([slope, intercept])
    residuals = powers - predicted
    mean_power = math.fsum(powers) / len(powers)
    ss_tot = math.fsum((p - mean_power) ** 2 for p in powers)
    ss_res = math.fsum(r * r for r in residuals)
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0

    minimum = float(np.min(regressors))
    regressor_spread = float(np.max(regressors)) / minimum if minimum > 0 else None

    diagnostics = []
    if slope < 0:
        diagnostics.append(f"fitted r_kt2 is negative ({slope:.6g})")
    if intercept < 0:
        diagnostics.append(f"fitted p_overhead is negative ({intercept:.6g})")
    for diagnostic in diagnostics:
        log.warning("method2: %s", diagnostic)

    log.info(
        "method2: r_kt2=%.6g, p_overhead=%.6g W, r^2=%.4f from %d poses",
        slope,
        intercept,
        r_squared,
        len(measurements),
    )
    return IdentificationResult(
        params=ElectricalParams(r_kt2=float(slope), p_overhead=float(intercept)),
        method="method2",
        residuals=tuple(float(r) for r in residuals),
        rms_residual=_rms(residuals),
        r_squared=r_squared,
        n_poses=len(measurements),
        regressors=tuple(float(g) for g in regressors),
        regressor_spread=regressor_spread,
        diagnostics=tuple(diagnostics),
    )


def predict_static_power(q, model: RobotModel, params: ElectricalParams) -> float:
    return params.p_overhead + params.r_kt2 * gravity_regressor(model, q)


class RegressionRow(BaseModel):
    label: str
    g_norm_sq: float
    measured: float
    predicted: float
    residual: float


class RegressionTable(BaseModel):
    method: Method
    rows: List[RegressionRow]

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["label", "g_norm_sq", "measured_w", "predicted_w", "residual_w"])
        for row in self.rows:
            writer.writerow(
                [
                    row.label,
                    format_float(row.g_norm_sq),
                    format_float(row.measured),
                    format_float(row.predicted),
                    format_float(row.residual),
                ]
            )
        return buffer.getvalue()


def identification_report(
    result: IdentificationResult, measurements: Sequence[StaticPoseMeasurement], model: RobotModel
) -> RegressionTable:
    """Per-pose rows of the fit: the data behind a regression scatter with its fit line."""
    rows = []
    for index, (measurement, residual) in enumerate(zip(measurements, result.residuals)):
        rows.append(
            RegressionRow(
                label=measurement.label or f"pose_{index}",
                g_norm_sq=gravity_regressor(model, measurement.q),
                measured=measurement.measured_power,
                predicted=measurement.measured_power - residual,
                residual=residual,
            )
        )
    return RegressionTable(method=result.method, rows=rows)


def parse_measurements_csv(text: str, source: Optional[str] = None) -> List[StaticPoseMeasurement]:
    """Parse a ``label,q_1..q_n,power_w`` file. The label cell may be empty."""
    reader = csv.reader(io.StringIO(text))
    rows = [
        (number, row)
        for number, row in enumerate(reader, start=1)
        if any(cell.strip() for cell in row)
    ]
    if not rows:
        raise ParseError("measurement file is empty", source, 1)

    header_line, header = rows[0]
    header = [column.strip() for column in header]
    if len(header) < 3 or header[0] != "label" or header[-1] != "power_w":
        raise ParseError("header must be label,q_1,...,q_n,power_w", source, header_line)
    indices = []
    for column in header[1:-1]:
        match = _Q_COLUMN_REGEX.match(column)
        if not match:
            raise ParseError(f"unexpected column '{column}'", source, header_line)
        indices.append(int(match.group(1)))
    if indices != list(range(1, len(indices) + 1)):
        raise ParseError("joint columns must be q_1..q_n in order", source, header_line)

    measurements = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"row has {len(row)} fields, header has {len(header)}", source, line)
        try:
            values = [float(cell) for cell in row[1:]]
        except ValueError as err:
            raise ParseError(f"not a number: {err}", source, line) from None
        try:
            measurements.append(
                StaticPoseMeasurement(
                    q=tuple(values[:-1]), measured_power=values[-1], label=row[0].strip() or None
                )
            )
        except ValidationError as err:
            message = "; ".join(error["msg"] for error in err.errors())
            raise ParseError(message, source, line) from None

    log.debug("parsed %d static pose measurements from %s", len(measurements), source or "<text>")
    return measurements


class ParamsFile(BaseModel):
    """Parameter document as written by the identify command."""

    model_config = ConfigDict(extra="ignore")

    method: Optional[Method] = None
    r_kt2: float
    p_overhead: float
    rms_residual: Optional[float] = None
    r_squared: Optional[float] = None
    n_poses: Optional[int] = None

    @property
    def params(self) -> ElectricalParams:
        return ElectricalParams(r_kt2=self.r_kt2, p_overhead=self.p_overhead)


def params_document(result: IdentificationResult) -> Dict:
    return ParamsFile(
        method=result.method,
        r_kt2=result.params.r_kt2,
        p_overhead=result.params.p_overhead,
        rms_residual=result.rms_residual,
        r_squared=result.r_squared,
        n_poses=result.n_poses,
    ).model_dump()


class PublishedParams(BaseModel):
    method1: ParamsFile
    method2: ParamsFile


def published_params(method: str) -> ElectricalParams:
    """Published parameter values packaged with robowatt; method is 'method1' or 'method2'."""
    data = importlib.resources.files("robowatt").joinpath("data")
    text = data.joinpath(cfg.PUBLISHED_PARAMS_FILE).read_text()
    published = PublishedParams(**yaml.safe_load(text))
    if method not in ("method1", "method2"):
        raise InputError(f"unknown method '{method}', expected method1 or method2")
    return getattr(published, method).params


def load_params(path: str | Path) -> ElectricalParams:
    """
    Load ElectricalParams from a JSON or YAML file, or from the packaged published values
    with ``published:method1`` / ``published:method2``.
    """
    path = str(path)
    if path.startswith("published:"):
        return published_params(path.split(":", 1)[1])

    try:
        text = Path(path).read_text()
    except OSError as err:
        raise InputError(f"{path}: cannot read parameter file: {err}") from err
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ParseError(f"cannot parse parameter file: {err}", path) from err
    if not isinstance(data, dict):
        raise ParseError("parameter file must hold a mapping", path)
    try:
        return ParamsFile(**data).params
    except ValidationError as err:
        raise ParseError(f"invalid parameter file: {err}", path) from err
