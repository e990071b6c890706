"""CLI entry point for msfilter.

Provides the fit, bound, filter and compare commands over scenario configs,
plus a listing of the bundled scenarios.
"""

from __future__ import annotations

import sys
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import click

from msfilter.core.config import (
    DEFAULT_CONFIG,
    OUT_DIR_ENV,
    ConfigError,
    ScenarioConfig,
    bundled_scenarios,
    load_scenario,
    resolve_output_dir,
)
from msfilter.core.output import ERROR_FILE, write_error_record
from msfilter.filtering.pipeline import EXIT_CONFIG, EXIT_OK, run_scenario_safe


@dataclass
class BatchResult:
    """Outcome of one scenario in an invocation.

    Attributes:
        name: Scenario name, or the config argument if it could not be loaded.
        success: Whether the run succeeded.
        exit_code: The run's exit code.
        out_dir: Directory the results or the error record went to.
        error_message: Error description if failed, None otherwise.
    """

    name: str
    success: bool
    exit_code: int
    out_dir: str | None
    error_message: str | None = None


@dataclass(frozen=True)
class Job:
    """One scenario to run; plain data so it can cross a process boundary."""

    config: str
    mode: str
    out: str | None
    oracle: bool
    plot_data: bool
    seed: int | None


def deduplicate(configs: tuple[str, ...]) -> list[str]:
    """Remove repeated config arguments, keeping first occurrence order."""
    return list(dict.fromkeys(configs))


def with_mode(config: ScenarioConfig, mode: str) -> ScenarioConfig:
    """The scenario run in the command's mode.

    Raises:
        ConfigError: If the scenario lacks what the mode needs.
    """
    if mode in {"fit", "bound"} and config.target is None:
        raise ConfigError(f"Command '{mode}' needs a scenario with a [target] record")
    if mode in {"filter", "compare"} and config.system is None:
        raise ConfigError(f"Command '{mode}' needs a scenario with a [system] table")
    return replace(config, mode=mode)


def run_job(job: Job, echo: Callable[[str], None] | None = None) -> BatchResult:
    """Load and run one scenario, never raising."""
    try:
        config = with_mode(load_scenario(job.config), job.mode)
    except ConfigError as e:
        click.echo(f"Error: {e}", err=True)
        error_dir = Path(job.out or DEFAULT_CONFIG["output"]["dir"]) / Path(job.config).stem
        try:
            write_error_record(error_dir / ERROR_FILE, e, EXIT_CONFIG)
        except OSError:
            return BatchResult(job.config, False, EXIT_CONFIG, None, str(e))
        return BatchResult(job.config, False, EXIT_CONFIG, str(error_dir), str(e))

    out_dir = resolve_output_dir(config, job.out) / config.name
    result, code = run_scenario_safe(
        config,
        out_dir,
        oracle=job.oracle,
        plot_data=job.plot_data,
        seed=job.seed,
        progress=echo,
    )
    if result is None:
        return BatchResult(config.name, False, code, str(out_dir), "see error.yaml")
    for path in result.files:
        if echo is not None:
            echo(f"  wrote {path}")
    _echo_headline(result.summary, echo)
    return BatchResult(config.name, True, code, str(out_dir))


def _echo_headline(summary: dict[str, Any], echo: Callable[[str], None] | None) -> None:
    if echo is None:
        return
    if "tv" in summary:
        line = f"  TV {summary['tv']:.4f}"
        if "reference_tv" in summary:
            line += f" (reference {summary['reference_tv']})"
        echo(line)
    reference_q = summary.get("reference_q")
    if reference_q:
        signs = "match" if reference_q["sign_pattern_matches"] else "differ"
        echo(
            f"  q vs reference: max relative deviation "
            f"{reference_q['max_relative_deviation']:.3g}, signs {signs}"
        )
    bound = summary.get("bound")
    if bound:
        echo(f"  entropy bound {bound['bound_value']:.4f}")
    oracle = summary.get("oracle")
    if oracle:
        echo(
            f"  oracle: max TV {oracle['max_tv']:.4f}, "
            f"max moment gap {oracle['max_moment_gap']:.2e}"
        )
    kalman = summary.get("kalman")
    if kalman:
        echo(f"  Kalman: max mean error {kalman['max_mean_error']:.2e}")


def process_batch(jobs: list[Job], workers: int) -> list[BatchResult]:
    """Run the jobs, sequentially or in a process pool.

    Failures do not stop the batch. Per-step progress is only shown when
    running sequentially.
    """
    total = len(jobs)
    click.echo(f"Running {total} scenario{'s' if total != 1 else ''}...")
    click.echo()

    results: list[BatchResult] = []
    if workers > 1 and total > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_job, jobs))
        for i, result in enumerate(outcomes, 1):
            _report(i, total, result)
            results.append(result)
        return results

    for i, job in enumerate(jobs, 1):
        click.echo(f"[{i}/{total}] {job.mode} {job.config}...")
        result = run_job(job, echo=click.echo)
        _report(i, total, result)
        results.append(result)
        click.echo()
    return results


def _report(i: int, total: int, result: BatchResult) -> None:
    if result.success:
        click.echo(f"✓ [{i}/{total}] {result.name}: {result.out_dir}")
    else:
        click.echo(f"✗ [{i}/{total}] {result.name} failed (exit {result.exit_code})", err=True)


def display_summary(results: list[BatchResult]) -> None:
    """Display counts of successful and failed scenarios."""
    if not results:
        click.echo("No scenarios were run.")
        return

    success_count = sum(1 for r in results if r.success)
    failure_count = len(results) - success_count

    click.echo()
    click.echo("Batch complete:")
    if success_count > 0:
        click.echo(f"  ✓ {success_count} successful")
    if failure_count > 0:
        click.echo(f"  ✗ {failure_count} failed")


def batch_exit_code(results: list[BatchResult]) -> int:
    """0 when everything succeeded, else the first failure's exit code."""
    for result in results:
        if not result.success:
            return result.exit_code
    return EXIT_OK


def _scenario_options(func: Callable[..., Any]) -> Callable[..., Any]:
    options = [
        click.option(
            "--config",
            "-c",
            "configs",
            multiple=True,
            required=True,
            help="Scenario file or bundled scenario name. Repeat for a batch.",
        ),
        click.option(
            "--out",
            "-o",
            envvar=OUT_DIR_ENV,
            default=None,
            help=f"Output directory; also read from {OUT_DIR_ENV}. Overrides [output].dir.",
        ),
        click.option("--plot-data", is_flag=True, help="Also write a long-format plot table."),
        click.option(
            "--jobs", "-j", default=1, type=click.IntRange(min=1), help="Worker processes."
        ),
        click.option(
            "--seed",
            default=None,
            type=click.IntRange(min=0, max=2**64 - 1),
            help="Override the scenario seed.",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _run_command(
    mode: str,
    configs: tuple[str, ...],
    out: str | None,
    oracle: bool,
    plot_data: bool,
    jobs: int,
    seed: int | None,
) -> None:
    batch = [Job(c, mode, out, oracle, plot_data, seed) for c in deduplicate(configs)]
    results = process_batch(batch, jobs)
    if len(results) > 1:
        display_summary(results)
    sys.exit(batch_exit_code(results))


@click.group()
@click.version_option(package_name="msfilter")
def cli() -> None:
    """msfilter - non-Gaussian Bayesian filtering with moment surrogates.

    Fits rational density surrogates theta/q to truncated power-moment
    sequences, runs the surrogate filter on scalar linear systems, and
    checks both against maximum-entropy bounds and a dense grid filter.
    """


@cli.command()
@_scenario_options
def fit(
    configs: tuple[str, ...], out: str | None, plot_data: bool, jobs: int, seed: int | None
) -> None:
    """Fit a surrogate to each scenario's target density or moments.

    Writes summary.yaml (coefficients, residuals, TV to an analytic target,
    entropy bound) and density.csv.
    """
    _run_command("fit", configs, out, False, plot_data, jobs, seed)


@cli.command()
@_scenario_options
def bound(
    configs: tuple[str, ...], out: str | None, plot_data: bool, jobs: int, seed: int | None
) -> None:
    """Report the entropy-based total variation bound for each scenario."""
    _run_command("bound", configs, out, False, plot_data, jobs, seed)


@cli.command(name="filter")
@_scenario_options
@click.option("--oracle", is_flag=True, help="Run the grid oracle alongside and compare.")
def filter_(
    configs: tuple[str, ...],
    out: str | None,
    plot_data: bool,
    jobs: int,
    seed: int | None,
    oracle: bool,
) -> None:
    """Run the surrogate filter over each scenario's observations.

    Writes steps.csv (t, y_t, predicted moments, and distances to the oracle
    when enabled) and summary.yaml.
    """
    _run_command("filter", configs, out, oracle, plot_data, jobs, seed)


@cli.command()
@_scenario_options
def compare(
    configs: tuple[str, ...], out: str | None, plot_data: bool, jobs: int, seed: int | None
) -> None:
    """Run the surrogate filter and the grid oracle side by side."""
    _run_command("compare", configs, out, True, plot_data, jobs, seed)


@cli.command()
def scenarios() -> None:
    """List the bundled scenarios."""
    for name in bundled_scenarios():
        try:
            config = load_scenario(name)
        except ConfigError as e:
            click.echo(f"{name}: invalid ({e})", err=True)
            continue
        line = f"{name} [{config.mode}, order {config.order}]"
        if config.description:
            line += f" - {config.description}"
        click.echo(line)


if __name__ == "__main__":
    cli()
