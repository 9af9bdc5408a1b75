"""Command-line interface: ``pptorus <verb> <scenario>``."""

from __future__ import annotations

import os
import sys

import click

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _cap_threads(threads: int) -> None:
    # only effective before numpy starts its pools, hence the lazy imports below
    for var in THREAD_VARS:
        os.environ[var] = str(threads)


def _execute(fn_name: str, scenario: str, threads: int, tol_scale: float, snapshot_dir, out_dir) -> None:
    _cap_threads(threads)
    from . import runner
    from .scenario import ScenarioError, load_scenario

    try:
        sc = load_scenario(scenario)
    except (ScenarioError, OSError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)
    ctx = runner.RunContext.from_scenario(sc, out_dir, snapshot_dir, tol_scale)
    report = getattr(runner, fn_name)(sc, ctx)
    report.settings["threads"] = threads
    path = report.write(ctx.out_dir / sc.outputs.report)
    for chk in report.checks:
        click.echo(f"{'PASS' if chk.passed else 'FAIL'}  {chk.name:<22} residual {chk.residual:.3e}  tol {chk.tolerance:.1e}")
    for err in report.errors:
        click.echo(f"ERROR [{err['stage']}] {err['type']}: {err['message']}", err=True)
    click.echo(f"report: {path}")
    sys.exit(0 if report.passed else 1)


def _common(fn):
    fn = click.option("--out-dir", type=click.Path(file_okay=False), default=None,
                      help="Output directory (default: the scenario's outputs.dir).")(fn)
    fn = click.option("--snapshot-dir", type=click.Path(file_okay=False), default=None,
                      help="Write field snapshots here (overrides PPWF_SNAPSHOT_DIR).")(fn)
    fn = click.option("--tol-scale", type=click.FloatRange(min=0, min_open=True), default=1.0,
                      show_default=True, help="Multiply every check tolerance.")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                      help="Cap on numerical worker threads.")(fn)
    return click.argument("scenario", type=click.Path(exists=True, dir_okay=False))(fn)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Construct and verify pp-wave metrics over flat tori."""


@main.command()
@_common
def run(scenario, threads, tol_scale, snapshot_dir, out_dir):
    """Gauge, scale, assemble and verify a scenario."""
    _execute("run", scenario, threads, tol_scale, snapshot_dir, out_dir)


@main.command("check-ode")
@_common
def check_ode(scenario, threads, tol_scale, snapshot_dir, out_dir):
    """Solve the scale ODE and check the zero-spacing bounds."""
    _execute("check_ode", scenario, threads, tol_scale, snapshot_dir, out_dir)


@main.command()
@_common
def spinor(scenario, threads, tol_scale, snapshot_dir, out_dir):
    """Transport a parallel spinor and verify it."""
    _execute("run_spinor", scenario, threads, tol_scale, snapshot_dir, out_dir)


@main.command()
@_common
def rigidity(scenario, threads, tol_scale, snapshot_dir, out_dir):
    """Rigidity verdict for a periodic curve."""
    _execute("run_rigidity", scenario, threads, tol_scale, snapshot_dir, out_dir)


@main.command("report-diff")
@click.argument("a", type=click.Path(exists=True, dir_okay=False))
@click.argument("b", type=click.Path(exists=True, dir_okay=False))
@click.option("--rtol", type=float, default=0.0, show_default=True, help="Relative residual tolerance.")
def report_diff_cmd(a, b, rtol):
    """Compare two JSON reports check by check; exit 1 if they differ."""
    from .report import load_report, report_diff

    try:
        diff = report_diff(load_report(a), load_report(b), rtol)
    except (ValueError, OSError) as exc:
        click.echo(str(exc), err=True)
        sys.exit(2)
    for row in diff["rows"]:
        click.echo(f"{row['status']:<17} {row['name']:<22} {row['a']!s:<24} {row['b']!s}")
    if diff["errors_a"] != diff["errors_b"]:
        click.echo("errors differ")
    click.echo("identical" if diff["same"] else "different")
    sys.exit(0 if diff["same"] else 1)


if __name__ == "__main__":  # pragma: no cover
    main()
