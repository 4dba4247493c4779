import logging
import sys
from concurrent import futures
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError

import robowatt.config as cfg
from robowatt import __version__, configure_logging
from robowatt.energy import (
    ElectricalParams,
    deviation_percent,
    energy_gradient_wrt_scale,
    energy_of_trajectory,
    power_profile,
    trajectory_energy,
)
from robowatt.errors import InputError, NumericalError
from robowatt.identification import (
    identification_report,
    identify_method1,
    identify_method2,
    load_params,
    params_document,
    parse_measurements_csv,
)
from robowatt.reports import (
    Comparison,
    MethodRow,
    RunReport,
    SweepRow,
    compare_table,
    dump_json,
    input_file,
    power_profile_csv,
    sweep_csv,
)
from robowatt.robot_model import RobotModel, load_urdf
from robowatt.trajio import (
    Trajectory,
    derive_missing,
    parse_trajectory_csv,
    parse_trajectory_json,
    time_scale,
)

log = logging.getLogger("robowatt.cli")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERICAL_ERROR = 2


class RobowattGroup(click.Group):
    """Maps library exceptions, and click usage errors, onto the documented exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as err:
            err.exit_code = EXIT_INPUT_ERROR
            raise
        except NumericalError as err:
            log.error("numerical error: %s", err)
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_NUMERICAL_ERROR)
        except (InputError, ValidationError, OSError) as err:
            log.error("input error: %s", err)
            click.echo(f"error: {err}", err=True)
            sys.exit(EXIT_INPUT_ERROR)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise InputError(f"{path}: cannot read file: {err}") from err


def _load_trajectory(path: str, model: RobotModel) -> Trajectory:
    text = _read_text(path)
    if path.endswith(".json"):
        trajectory = parse_trajectory_json(text, source=path)
    else:
        trajectory = parse_trajectory_csv(text, source=path)
    if trajectory.dof != model.dof:
        raise InputError(
            f"{path}: trajectory has {trajectory.dof} dof but robot '{model.name}' has {model.dof}"
        )
    if not trajectory.has_derivatives:
        log.info("%s: deriving missing velocities/accelerations by finite differences", path)
        trajectory = derive_missing(trajectory)
    return trajectory


def _write_outputs(out: Optional[str], files: dict):
    if not out:
        return
    directory = Path(out)
    directory.mkdir(parents=True, exist_ok=True)
    for name, content in files.items():
        (directory / name).write_text(content, encoding="utf-8")
        log.debug("wrote %s", directory / name)


def _parse_scales(text: str) -> List[float]:
    try:
        scales = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as err:
        raise InputError(f"invalid --scales list '{text}': {err}") from None
    if not scales:
        raise InputError("--scales is empty")
    bad = [scale for scale in scales if not scale > 0]
    if bad:
        raise InputError(f"time scales must be > 0, got {bad}")
    return scales


def _comparison(estimated: float, measured: Optional[float]) -> Optional[Comparison]:
    if measured is None:
        return None
    return Comparison(
        measured_energy=measured, deviation_percent=deviation_percent(estimated, measured)
    )


def _energy_summary(report: RunReport) -> str:
    energy = report.energy
    fraction = "n/a" if energy.overhead_fraction is None else f"{energy.overhead_fraction:.4f}"
    lines = [
        f"duration:          {energy.duration:.6g} s "
        f"({energy.n_samples} samples, {energy.integration_rule})",
        f"total energy:      {energy.total_energy:.6g} J",
        f"mechanical energy: {energy.mechanical_energy:.6g} J",
        f"joule energy:      {energy.joule_energy:.6g} J",
        f"overhead energy:   {energy.overhead_energy:.6g} J",
        f"overhead fraction: {fraction}",
    ]
    if report.comparison:
        lines.append(
            f"measured energy:   {report.comparison.measured_energy:.6g} J "
            f"(deviation {report.comparison.deviation_percent:+.2f}%)"
        )
    if report.duration_difference is not None:
        lines.append(
            f"measured duration: {report.measured_duration:.6g} s "
            f"({report.duration_difference:+.6g} s, not corrected)"
        )
    return "\n".join(lines)


urdf_option = click.option("--urdf", required=True, help="Robot description (URDF) file")
trajectory_option = click.option(
    "--trajectory", required=True, help="Trajectory file, CSV or .json"
)
rule_option = click.option(
    "--rule",
    type=click.Choice(["left-riemann", "trapezoid"]),
    default=None,
    help="Integration rule, default from DEFAULT_INTEGRATION_RULE (left-riemann)",
)
out_option = click.option("--out", default=None, help="Directory to write report files to")
json_option = click.option(
    "--json", "as_json", is_flag=True, help="Print the JSON report on stdout"
)
params_option = click.option(
    "--params",
    "params_path",
    default="published:method2",
    help="Parameter file or published:methodN",
)
measured_duration_option = click.option(
    "--measured-duration",
    type=float,
    default=None,
    help="Measured movement duration in s, reported next to the trajectory duration",
)


@click.group(cls=RobowattGroup)
@click.version_option(__version__)
def cli():
    """Estimate robot trajectory energy from inverse dynamics and an electrical power model."""
    configure_logging()


@cli.command("identify")
@urdf_option
@click.option("--measurements", required=True, help="Static pose CSV: label,q_1..q_n,power_w")
@click.option(
    "--method", type=click.Choice(["1", "2"]), default="2", help="1: mean, 2: least squares"
)
@out_option
def identify(urdf, measurements, method, out):
    """Identify electrical parameters from static pose power measurements, printed as JSON."""
    model = load_urdf(urdf)
    poses = parse_measurements_csv(_read_text(measurements), source=measurements)
    for index, pose in enumerate(poses):
        if len(pose.q) != model.dof:
            raise InputError(
                f"{measurements}: pose {index} has {len(pose.q)} joints but robot '{model.name}' "
                f"has {model.dof}"
            )

    log.info("identifying with method %s from %d poses", method, len(poses))
    if method == "1":
        result = identify_method1(poses)
    else:
        result = identify_method2(poses, model)

    document = dump_json(params_document(result))
    regression = identification_report(result, poses, model).to_csv()
    _write_outputs(out, {"params.json": document, "regression.csv": regression})
    click.echo(document, nl=False)
    for diagnostic in result.diagnostics:
        click.echo(f"warning: {diagnostic}", err=True)


def _estimate_report(
    urdf, trajectory, params_path, rule, scale, measured, measured_duration
) -> tuple[RunReport, list]:
    model = load_urdf(urdf)
    traj = time_scale(_load_trajectory(trajectory, model), scale)
    params = load_params(params_path)
    profile = power_profile(traj, model, params)
    energy = trajectory_energy(profile, rule)
    report = RunReport(
        command="estimate",
        inputs=[
            input_file("urdf", urdf),
            input_file("trajectory", trajectory),
            input_file("params", params_path),
        ],
        scale=scale,
        params=params,
        energy=energy,
        comparison=_comparison(energy.total_energy, measured),
    )
    if measured_duration is not None:
        # reported only, the estimate is never corrected
        difference = measured_duration - energy.duration
        report = report.model_copy(
            update={"measured_duration": measured_duration, "duration_difference": difference}
        )
        log.info(
            "measured duration differs from the trajectory by %.6g s; no correction applied",
            difference,
        )
    return report, profile


@cli.command("estimate")
@urdf_option
@trajectory_option
@params_option
@rule_option
@click.option("--scale", type=float, default=1.0, help="Time scale factor s (t -> s*t)")
@click.option("--measured", type=float, default=None, help="Measured energy in J")
@measured_duration_option
@out_option
@json_option
def estimate(
    urdf, trajectory, params_path, rule, scale, measured, measured_duration, out, as_json
):
    """Estimate the energy of one trajectory."""
    if not scale > 0:
        raise InputError(f"--scale must be > 0, got {scale}")
    report, profile = _estimate_report(
        urdf, trajectory, params_path, rule, scale, measured, measured_duration
    )
    document = dump_json(report)
    _write_outputs(out, {"report.json": document, "power_profile.csv": power_profile_csv(profile)})
    click.echo(document if as_json else _energy_summary(report), nl=not as_json)


@cli.command("compare")
@urdf_option
@trajectory_option
@click.option("--params1", default="published:method1", help="Method 1 parameters")
@click.option("--params2", default="published:method2", help="Method 2 parameters")
@click.option("--measured", type=float, default=None, help="Measured energy in J")
@measured_duration_option
@click.option("--label", default=None, help="Row label, defaults to the trajectory file name")
@rule_option
@out_option
@json_option
def compare(
    urdf, trajectory, params1, params2, measured, measured_duration, label, rule, out, as_json
):
    """Compare both parameter sets on one trajectory, optionally against a measured energy."""
    if measured is not None and not measured > 0:
        raise InputError(f"--measured must be > 0, got {measured}")
    model = load_urdf(urdf)
    traj = _load_trajectory(trajectory, model)

    rows = []
    duration_difference = None
    for method, params_path in (("method1", params1), ("method2", params2)):
        params = load_params(params_path)
        energy = energy_of_trajectory(traj, model, params, rule)
        row = MethodRow(
            method=method,
            params=params,
            energy=energy,
            comparison=_comparison(energy.total_energy, measured),
        )
        if measured_duration is not None:
            # reported only, the estimate is never corrected
            duration_difference = measured_duration - energy.duration
            extra = params.p_overhead * duration_difference
            row = row.model_copy(update={"duration_overhead_energy": extra})
        rows.append(row)

    report = RunReport(
        command="compare",
        inputs=[
            input_file("urdf", urdf),
            input_file("trajectory", trajectory),
            input_file("params1", params1),
            input_file("params2", params2),
        ],
        methods=rows,
        measured_duration=measured_duration,
        duration_difference=duration_difference,
    )
    if duration_difference is not None:
        log.info(
            "measured duration differs from the trajectory by %.6g s; no correction applied",
            duration_difference,
        )

    document = dump_json(report)
    table = compare_table(label or Path(trajectory).stem, report)
    _write_outputs(out, {"report.json": document, "compare.txt": table})
    click.echo(document if as_json else table, nl=False)


def _sweep_row(
    traj: Trajectory, model: RobotModel, params: ElectricalParams, rule, scale: float
) -> SweepRow:
    energy = energy_of_trajectory(time_scale(traj, scale), model, params, rule)
    return SweepRow(scale=scale, energy=energy)


@cli.command("speed-sweep")
@urdf_option
@trajectory_option
@params_option
@click.option("--scales", required=True, help="Comma separated time scale factors, e.g. 0.5,1,2")
@rule_option
@out_option
@json_option
def speed_sweep(urdf, trajectory, params_path, scales, rule, out, as_json):
    """Energy of the same path replayed at several speeds."""
    scales = _parse_scales(scales)
    model = load_urdf(urdf)
    traj = _load_trajectory(trajectory, model)
    params = load_params(params_path)
    cfg.get_integration_rule(rule)

    rows = []
    with ThreadPoolExecutor(max_workers=cfg.SWEEP_POOL_SIZE) as executor:
        scale_for_future = {
            executor.submit(_sweep_row, traj, model, params, rule, scale): scale for scale in scales
        }
        for future in futures.as_completed(scale_for_future):
            scale = scale_for_future[future]
            rows.append(future.result())
            log.debug("sweep at scale %g: done", scale)
    rows.sort(key=lambda row: row.scale)

    report = RunReport(
        command="speed-sweep",
        inputs=[
            input_file("urdf", urdf),
            input_file("trajectory", trajectory),
            input_file("params", params_path),
        ],
        params=params,
        sweep=rows,
    )
    document = dump_json(report)
    table = sweep_csv(rows)
    _write_outputs(out, {"report.json": document, "sweep.csv": table})
    click.echo(document if as_json else table, nl=False)


@cli.command("gradcheck")
@urdf_option
@trajectory_option
@params_option
@click.option(
    "--scale", type=float, default=1.0, help="Time scale factor s at which dE/ds is checked"
)
@rule_option
@out_option
@json_option
def gradcheck(urdf, trajectory, params_path, scale, rule, out, as_json):
    """Check dE/ds by central differences at two step sizes; exit 2 when they disagree."""
    model = load_urdf(urdf)
    traj = _load_trajectory(trajectory, model)
    params = load_params(params_path)
    gradient = energy_gradient_wrt_scale(traj, model, params, scale, rule)

    report = RunReport(
        command="gradcheck",
        inputs=[
            input_file("urdf", urdf),
            input_file("trajectory", trajectory),
            input_file("params", params_path),
        ],
        scale=scale,
        params=params,
        gradient=gradient,
    )
    document = dump_json(report)
    _write_outputs(out, {"report.json": document})
    if as_json:
        click.echo(document, nl=False)
    else:
        click.echo(
            f"dE/ds at s={scale:g}: {gradient.gradient:.12g} J (h={gradient.step:.3g}), "
            f"{gradient.gradient_half_step:.12g} J (h/2), relative gap {gradient.relative_gap:.3g}"
        )

    if not gradient.passed:
        raise NumericalError("gradient check failed: " + "; ".join(gradient.warnings))
