"""
Report documents and their deterministic serialization.

JSON keys keep insertion order and floats are printed at 17 significant digits, so the same
inputs always give byte-identical files.
"""

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, List, Optional, Sequence

import jinja2
from pydantic import BaseModel

import robowatt.config as cfg
from robowatt import __version__
from robowatt.energy import ElectricalParams, EnergyReport, GradientReport, PowerBreakdown
from robowatt.errors import InputError
from robowatt.trajio import format_float


class InputFile(BaseModel):
    role: str
    path: str
    sha256: Optional[str] = None


class Comparison(BaseModel):
    measured_energy: float
    deviation_percent: float


class MethodRow(BaseModel):
    method: str
    params: ElectricalParams
    energy: EnergyReport
    comparison: Optional[Comparison] = None
    # p_overhead times (measured − trajectory duration); informational
    duration_overhead_energy: Optional[float] = None


class SweepRow(BaseModel):
    scale: float
    energy: EnergyReport


class RunReport(BaseModel):
    report_version: str = cfg.REPORT_VERSION
    command: str
    inputs: List[InputFile]
    scale: Optional[float] = None
    params: Optional[ElectricalParams] = None
    energy: Optional[EnergyReport] = None
    comparison: Optional[Comparison] = None
    methods: Optional[List[MethodRow]] = None
    measured_duration: Optional[float] = None
    duration_difference: Optional[float] = None
    sweep: Optional[List[SweepRow]] = None
    gradient: Optional[GradientReport] = None
    toolkit_version: str = __version__


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def input_file(role: str, path: str) -> InputFile:
    if path.startswith("published:"):
        return InputFile(role=role, path=path)
    return InputFile(role=role, path=path, sha256=file_sha256(path))


def _encode(value: Any, indent: int, level: int) -> str:
    if isinstance(value, BaseModel):
        value = value.model_dump()
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value) if math.isfinite(value) else "null"
    if isinstance(value, str):
        return _encode_string(value)

    pad = " " * (indent * (level + 1))
    closing = " " * (indent * level)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f"{pad}{_encode_string(str(key))}: {_encode(item, indent, level + 1)}"
            for key, item in value.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + closing + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}{_encode(item, indent, level + 1)}" for item in value]
        return "[\n" + ",\n".join(items) + "\n" + closing + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _encode_string(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def dump_json(value: Any, indent: int = 2) -> str:
    """Deterministic JSON text with a trailing newline."""
    return _encode(value, indent, 0) + "\n"


def _csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def power_profile_csv(profile: Sequence[PowerBreakdown]) -> str:
    """t, mechanical, joule, overhead, total per sample: a power-over-time plot's data."""
    return _csv(
        ["t", "mechanical", "joule", "overhead", "total"],
        [
            [format_float(value) for value in (b.t, b.mechanical, b.joule, b.overhead, b.total)]
            for b in profile
        ],
    )


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    def optional(value):
        return "" if value is None else format_float(value)

    return _csv(
        ["scale", "duration", "E_total", "E_mech", "E_joule", "E_overhead", "overhead_fraction"],
        [
            [
                format_float(row.scale),
                format_float(row.energy.duration),
                format_float(row.energy.total_energy),
                format_float(row.energy.mechanical_energy),
                format_float(row.energy.joule_energy),
                format_float(row.energy.overhead_energy),
                optional(row.energy.overhead_fraction),
            ]
            for row in sorted(rows, key=lambda row: row.scale)
        ],
    )


COMPARE_TABLE_TEMPLATE = jinja2.Template(
    "{% for row in rows %}{{ format_row(row, widths) }}\n{% endfor %}", autoescape=False
)


def format_table_row(cells: Sequence[str], widths: Optional[Sequence[int]] = None) -> str:
    """Cells joined by ' | ', each left-justified to its column width when widths are given."""
    if widths is not None:
        cells = [cell.ljust(width) for cell, width in zip(cells, widths)]
    return " | ".join(cells).rstrip()


def table_cells(
    label: str, method1: float, method2: float, measured: Optional[float], time: float
) -> List[str]:
    """Cells of 'label | Meth.1 | Meth.2 | Meas. | Time', two decimals."""
    return [
        label,
        f"{method1:.2f}",
        f"{method2:.2f}",
        "-" if measured is None else f"{measured:.2f}",
        f"{time:.2f}",
    ]


def compare_table(label: str, report: RunReport) -> str:
    """Aligned text table: header, the energy row and a signed deviation row."""
    if not report.methods or len(report.methods) != 2:
        raise InputError("comparison table needs exactly two method rows")
    first, second = report.methods
    measured = report.comparison.measured_energy if report.comparison else None
    if measured is None and first.comparison:
        measured = first.comparison.measured_energy

    rows = [
        ["Movement", "Meth.1", "Meth.2", "Meas.", "Time"],
        table_cells(
            label,
            first.energy.total_energy,
            second.energy.total_energy,
            measured,
            first.energy.duration,
        ),
    ]
    if first.comparison and second.comparison:
        rows.append(
            [
                "Deviation [%]",
                f"{first.comparison.deviation_percent:+.2f}",
                f"{second.comparison.deviation_percent:+.2f}",
                "",
                "",
            ]
        )

    widths = [max(len(row[column]) for row in rows) for column in range(len(rows[0]))]
    return COMPARE_TABLE_TEMPLATE.render(rows=rows, widths=widths, format_row=format_table_row)
