"""
Joint trajectories: data model, CSV/JSON interchange, derivative completion, time scaling
and resampling.

Velocities and accelerations may be absent (None) rather than zero, so a positions-only
log is never mistaken for a static hold.
"""

import csv
import io
import logging
import re
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError
from scipy.interpolate import CubicHermiteSpline

from robowatt.errors import InputError, ParseError

log = logging.getLogger("robowatt.trajio")

_COLUMN_REGEX = re.compile(r"^(q|dq|ddq)_(\d+)$")


def format_float(value: float) -> str:
    """Float formatting shared by every writer: 17 significant digits round-trip a double."""
    return format(float(value), ".17g")


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    q: np.ndarray
    qd: Optional[np.ndarray] = None
    qdd: Optional[np.ndarray] = None


def _frozen_array(values, name: str, shape: tuple) -> Optional[np.ndarray]:
    if values is None:
        return None
    array = np.array(values, dtype=float)
    if array.shape != shape:
        raise InputError(f"trajectory {name} has shape {array.shape}, expected {shape}")
    if not np.all(np.isfinite(array)):
        raise InputError(f"trajectory {name} has non-finite entries")
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Trajectory:
    """Samples stored column-wise: t has shape (N,), q/qd/qdd have shape (N, dof)."""

    t: np.ndarray
    q: np.ndarray
    qd: Optional[np.ndarray] = None
    qdd: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        q = np.array(self.q, dtype=float)
        if q.ndim == 1:
            q = q.reshape(-1, 1) if t.shape[0] != 1 else q.reshape(1, -1)
        shape = (t.shape[0], q.shape[1] if q.ndim == 2 else 0)
        object.__setattr__(self, "t", _frozen_array(t, "t", (t.shape[0],)))
        object.__setattr__(self, "q", _frozen_array(q, "q", shape))
        object.__setattr__(self, "qd", _frozen_array(self.qd, "qd", shape))
        object.__setattr__(self, "qdd", _frozen_array(self.qdd, "qdd", shape))

        steps = np.diff(self.t)
        if np.any(steps <= 0):
            row = int(np.argmax(steps <= 0)) + 1
            raise InputError(
                f"timestamps must be strictly increasing, sample {row} has t={self.t[row]!r} "
                f"after t={self.t[row - 1]!r}"
            )

    @classmethod
    def from_points(cls, points: List[TrajectoryPoint]) -> "Trajectory":
        if not points:
            raise InputError("trajectory needs at least one point")
        has_qd = {point.qd is not None for point in points}
        has_qdd = {point.qdd is not None for point in points}
        if len(has_qd) > 1 or len(has_qdd) > 1:
            raise InputError("derivatives must be given for every point or for none")
        return cls(
            t=[point.t for point in points],
            q=[point.q for point in points],
            qd=[point.qd for point in points] if has_qd == {True} else None,
            qdd=[point.qdd for point in points] if has_qdd == {True} else None,
        )

    @property
    def dof(self) -> int:
        return self.q.shape[1]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    @property
    def has_derivatives(self) -> bool:
        return self.qd is not None and self.qdd is not None

    def __len__(self) -> int:
        return self.t.shape[0]

    def __getitem__(self, index: int) -> TrajectoryPoint:
        return TrajectoryPoint(
            t=float(self.t[index]),
            q=self.q[index],
            qd=None if self.qd is None else self.qd[index],
            qdd=None if self.qdd is None else self.qdd[index],
        )

    def __iter__(self) -> Iterator[TrajectoryPoint]:
        for index in range(len(self)):
            yield self[index]

    @property
    def points(self) -> List[TrajectoryPoint]:
        return list(self)

    def slice(self, start: int, stop: Optional[int] = None) -> "Trajectory":
        window = slice(start, stop)
        return Trajectory(
            t=self.t[window],
            q=self.q[window],
            qd=None if self.qd is None else self.qd[window],
            qdd=None if self.qdd is None else self.qdd[window],
        )


def _parse_header(header: List[str], source: Optional[str]) -> tuple[int, bool, bool]:
    header = [column.strip() for column in header]
    if not header or header[0] != "t":
        raise ParseError("header must start with a 't' column", source, 1)

    groups = {"q": [], "dq": [], "ddq": []}
    order = []
    for column in header[1:]:
        match = _COLUMN_REGEX.match(column)
        if not match:
            raise ParseError(f"unexpected column '{column}'", source, 1)
        prefix, index = match.group(1), int(match.group(2))
        groups[prefix].append(index)
        if not order or order[-1] != prefix:
            order.append(prefix)

    dof = len(groups["q"])
    if dof == 0:
        raise ParseError("header declares no q_i columns", source, 1)
    for prefix, indices in groups.items():
        if indices and indices != list(range(1, dof + 1)):
            raise ParseError(
                f"{prefix} columns must be {prefix}_1..{prefix}_{dof} in order", source, 1
            )
    if order not in (["q"], ["q", "dq"], ["q", "ddq"], ["q", "dq", "ddq"]):
        raise ParseError("columns must be ordered t, q_*, dq_*, ddq_*", source, 1)
    return dof, bool(groups["dq"]), bool(groups["ddq"])


def _parse_cell(cell: str, row: int, column: str, source: Optional[str]) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"column '{column}' value '{cell}' is not a number", source, row) from None
    if not np.isfinite(value):
        raise ParseError(f"column '{column}' value '{cell}' is not finite", source, row)
    return value


def parse_trajectory_csv(text: str, source: Optional[str] = None) -> Trajectory:
    """
    Parse ``t,q_1..q_n[,dq_1..dq_n][,ddq_1..ddq_n]`` CSV text.

    Derivative columns that are absent from the header, or empty on every row, are absent in
    the result.
    """
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ParseError("trajectory file is empty", source, 1)

    header = [column.strip() for column in rows[0]]
    dof, has_dq, has_ddq = _parse_header(header, source)

    columns = {name: position for position, name in enumerate(header)}
    times, positions = [], []
    derivatives = {"dq": [], "ddq": []}
    present = {"dq": set(), "ddq": set()}

    for line_number, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(
                f"row has {len(row)} fields, header has {len(header)}", source, line_number
            )
        times.append(_parse_cell(row[0], line_number, "t", source))
        positions.append(
            [
                _parse_cell(row[columns[f"q_{j}"]], line_number, f"q_{j}", source)
                for j in range(1, dof + 1)
            ]
        )
        for prefix, declared in (("dq", has_dq), ("ddq", has_ddq)):
            if not declared:
                continue
            cells = [row[columns[f"{prefix}_{j}"]].strip() for j in range(1, dof + 1)]
            filled = [bool(cell) for cell in cells]
            if any(filled) and not all(filled):
                raise ParseError(f"row has some {prefix} columns empty", source, line_number)
            present[prefix].add(all(filled))
            if all(filled):
                derivatives[prefix].append(
                    [
                        _parse_cell(cell, line_number, f"{prefix}_{j}", source)
                        for j, cell in enumerate(cells, 1)
                    ]
                )
            if len(present[prefix]) > 1:
                raise ParseError(
                    f"{prefix} values are given for some rows only", source, line_number
                )

    for row_index in range(1, len(times)):
        if times[row_index] <= times[row_index - 1]:
            raise ParseError(
                f"timestamps not strictly increasing "
                f"(t={times[row_index]!r} after {times[row_index - 1]!r})",
                source,
                row_index + 2,
            )
    if not times:
        raise ParseError("trajectory has no samples", source, 2)

    trajectory = Trajectory(
        t=times,
        q=positions,
        qd=derivatives["dq"] if derivatives["dq"] else None,
        qdd=derivatives["ddq"] if derivatives["ddq"] else None,
    )
    log.debug(
        "parsed trajectory %s: %d samples, %d dof, qd %s, qdd %s",
        source or "<text>",
        len(trajectory),
        dof,
        "present" if trajectory.qd is not None else "absent",
        "present" if trajectory.qdd is not None else "absent",
    )
    return trajectory


def trajectory_to_csv(trajectory: Trajectory) -> str:
    dof = trajectory.dof
    header = ["t"] + [f"q_{j}" for j in range(1, dof + 1)]
    blocks = [trajectory.q]
    if trajectory.qd is not None:
        header += [f"dq_{j}" for j in range(1, dof + 1)]
        blocks.append(trajectory.qd)
    if trajectory.qdd is not None:
        header += [f"ddq_{j}" for j in range(1, dof + 1)]
        blocks.append(trajectory.qdd)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for index in range(len(trajectory)):
        row = [format_float(trajectory.t[index])]
        for block in blocks:
            row.extend(format_float(value) for value in block[index])
        writer.writerow(row)
    return buffer.getvalue()


class TrajectoryPointDocument(BaseModel):
    t: float
    q: List[float]
    qd: Optional[List[float]] = None
    qdd: Optional[List[float]] = None


class TrajectoryDocument(BaseModel):
    dof: int
    points: List[TrajectoryPointDocument]


def parse_trajectory_json(text: str, source: Optional[str] = None) -> Trajectory:
    try:
        document = TrajectoryDocument.model_validate_json(text)
    except ValidationError as err:
        raise ParseError(f"invalid trajectory document: {err}", source) from err
    points = []
    for index, point in enumerate(document.points):
        for name in ("q", "qd", "qdd"):
            values = getattr(point, name)
            if values is not None and len(values) != document.dof:
                raise ParseError(
                    f"point {index} {name} has {len(values)} entries, dof is {document.dof}",
                    source,
                )
        points.append(TrajectoryPoint(t=point.t, q=point.q, qd=point.qd, qdd=point.qdd))
    return Trajectory.from_points(points)


def trajectory_to_json(trajectory: Trajectory) -> str:
    document = TrajectoryDocument(
        dof=trajectory.dof,
        points=[
            TrajectoryPointDocument(
                t=point.t,
                q=point.q.tolist(),
                qd=None if point.qd is None else point.qd.tolist(),
                qdd=None if point.qdd is None else point.qdd.tolist(),
            )
            for point in trajectory
        ],
    )
    return document.model_dump_json(indent=2)


def derive_missing(trajectory: Trajectory) -> Trajectory:
    """
    Fill absent qd/qdd with second-order finite differences on the (possibly non-uniform)
    time grid; one-sided second-order stencils at the ends. Present columns are kept.
    """
    if len(trajectory) < 3:
        raise InputError(f"need at least 3 samples to derive derivatives, got {len(trajectory)}")
    if trajectory.has_derivatives:
        return trajectory

    qd = trajectory.qd
    if qd is None:
        qd = np.gradient(trajectory.q, trajectory.t, axis=0, edge_order=2)
    qdd = trajectory.qdd
    if qdd is None:
        qdd = np.gradient(qd, trajectory.t, axis=0, edge_order=2)

    log.debug(
        "derived %s for %d samples",
        ", ".join(
            name
            for name, value in (("qd", trajectory.qd), ("qdd", trajectory.qdd))
            if value is None
        ),
        len(trajectory),
    )
    return Trajectory(t=trajectory.t, q=trajectory.q, qd=qd, qdd=qdd)


def time_scale(trajectory: Trajectory, factor: float) -> Trajectory:
    """Replay the same path factor times slower: t -> s·t, q̇ -> q̇/s, q̈ -> q̈/s²."""
    if not factor > 0:
        raise InputError(f"time scale factor must be > 0, got {factor}")
    if factor == 1.0:
        return trajectory
    return Trajectory(
        t=trajectory.t * factor,
        q=trajectory.q,
        qd=None if trajectory.qd is None else trajectory.qd / factor,
        qdd=None if trajectory.qdd is None else trajectory.qdd / factor**2,
    )


def resample(trajectory: Trajectory, dt: float) -> Trajectory:
    """
    Resample on a uniform grid of step dt with a cubic Hermite interpolant of q and q̇.

    The first and last timestamps are kept; q̇ and q̈ are taken from the interpolant.
    """
    if trajectory.qd is None:
        raise InputError("resampling needs velocities, call derive_missing first")
    if not dt > 0:
        raise InputError(f"resampling step must be > 0, got {dt}")
    if dt > trajectory.duration:
        raise InputError(
            f"resampling step {dt} s exceeds trajectory duration {trajectory.duration} s"
        )

    t0, t_end = float(trajectory.t[0]), float(trajectory.t[-1])
    count = int(np.floor((t_end - t0) / dt + 1e-9)) + 1
    grid = t0 + dt * np.arange(count)
    if t_end - grid[-1] > 1e-9 * dt:
        grid = np.append(grid, t_end)
    else:
        grid[-1] = t_end

    spline = CubicHermiteSpline(trajectory.t, trajectory.q, trajectory.qd, axis=0)
    q = spline(grid)
    q[0], q[-1] = trajectory.q[0], trajectory.q[-1]
    qd = spline.derivative(1)(grid)
    qdd = spline.derivative(2)(grid)
    log.debug("resampled %d samples to %d at dt=%g", len(trajectory), len(grid), dt)
    return Trajectory(t=grid, q=q, qd=qd, qdd=qdd)


def path_length(trajectory: Trajectory) -> float:
    """Length of the polyline through the joint-space samples."""
    if len(trajectory) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(trajectory.q, axis=0), axis=1)))


def minimum_jerk(q_start, q_goal, duration: float, dt: float) -> Trajectory:
    """
    Rest-to-rest quintic (minimum jerk) joint move sampled every dt seconds, endpoints
    included; used for synthetic stand-in motions.
    """
    if not duration > 0 or not dt > 0:
        raise InputError("duration and dt must be > 0")
    q_start = np.asarray(q_start, dtype=float).reshape(-1)
    delta = np.asarray(q_goal, dtype=float).reshape(-1) - q_start
    if delta.shape != q_start.shape:
        raise InputError("start and goal differ in length")

    count = int(round(duration / dt)) + 1
    t = np.linspace(0.0, duration, count)
    phase = t / duration
    p = 10 * phase**3 - 15 * phase**4 + 6 * phase**5
    pd = (30 * phase**2 - 60 * phase**3 + 30 * phase**4) / duration
    pdd = (60 * phase - 180 * phase**2 + 120 * phase**3) / duration**2

    return Trajectory(
        t=t,
        q=q_start[None, :] + delta[None, :] * p[:, None],
        qd=delta[None, :] * pd[:, None],
        qdd=delta[None, :] * pdd[:, None],
    )


def static_hold(q, duration: float, dt: float) -> Trajectory:
    """The robot held still at pose q for duration seconds."""
    q = np.asarray(q, dtype=float).reshape(-1)
    count = int(round(duration / dt)) + 1
    t = np.linspace(0.0, duration, count)
    zeros = np.zeros((count, q.shape[0]))
    return Trajectory(t=t, q=np.tile(q, (count, 1)), qd=zeros, qdd=zeros)
