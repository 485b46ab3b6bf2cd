"""
Batch runs behind the command line: scans written as CSV, diagnostics printed as text.

Columns of the scan CSV (gnuplot: ``set datafile separator ','``, plot column 1 against 7):

    distance_km, mu_s, y11_lower, g11_lower, gain, error, rate, protocol, N
"""
import csv
import logging
import os
from itertools import product
from typing import Callable, List, Optional

import click
import numpy as np

from app.dependencies import get_settings
from app.models.protocol_model import BasisTag, ProtocolTag
from app.schemas.bound_schemas import TruncationPolicy
from app.schemas.keyrate_schemas import KeyRatePoint, ScanResult
from app.schemas.run_config_schema import RunConfig
from app.services.bounds_service import apply_finite_size, build_yield_lp, compute_bounds
from app.services.config_service import render_config
from app.services.keyrate_service import distance_scan, mdi_key_rate, optimize_signal, refine_secure_distance
from app.services.lp_service import to_lp_format
from app.services.optics_service import ALL_TAGS, build_fock_yield_table, mixture_tolerances, observed_statistics, poisson_mixture_residuals
from app.utils.exceptions import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("distance_km", "mu_s", "y11_lower", "g11_lower", "gain", "error", "rate", "protocol", "N")

EXIT_OK = 0
EXIT_COMPUTATION_ERROR = 1
EXIT_USAGE_ERROR = 2

Echo = Callable[..., None]


def _number(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.16e}"


def scan_rows(result: ScanResult) -> List[List[str]]:
    return [
        [
            _number(point.distance),
            _number(point.mu_s),
            _number(point.y11_lower),
            _number(point.g11_lower),
            _number(point.gain),
            _number(point.error),
            _number(point.rate),
            point.protocol.value,
            _number(point.pulses),
        ]
        for point in result.points
    ]


def write_scan_csv(result: ScanResult, path: str):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(scan_rows(result))
    logger.info(f"Wrote {len(result.points)} points to {path}")


def read_scan_csv(path: str) -> ScanResult:
    """
    Read a scan CSV back, re-validating every row as a KeyRatePoint.

    Raises:
        UsageError: If the header does not match the scan format.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise UsageError(f"{path} is not a scan CSV: header {reader.fieldnames}")

        def optional(text: str) -> Optional[float]:
            return float(text) if text else None

        points = tuple(
            KeyRatePoint(
                distance=float(row["distance_km"]),
                mu_s=float(row["mu_s"]),
                y11_lower=float(row["y11_lower"]),
                g11_lower=optional(row["g11_lower"]),
                gain=float(row["gain"]),
                error=float(row["error"]),
                rate=float(row["rate"]),
                protocol=ProtocolTag(row["protocol"]),
                pulses=optional(row["N"]),
            )
            for row in reader
        )
    return ScanResult(points=points)


def summary_text(result: ScanResult, config: RunConfig) -> str:
    secure = result.secure_distance
    peak = result.peak
    lines = [
        f"Secure distance : {'none' if secure is None else f'{secure:g} km'}",
        f"Peak rate       : {peak.rate:.6e} at {peak.distance:g} km (mu_s={peak.mu_s:g})" if peak else "Peak rate       : -",
        f"Points          : {len(result.points)}",
        f"LP fallbacks    : {result.lp_failures}",
        f"Output          : {config.out}",
        "Configuration:",
    ]
    lines += [f"  {line}" for line in render_config(config).splitlines()]
    lines.append("Metadata:")
    lines += [f"  {key}: {value}" for key, value in result.metadata.items()]
    return "\n".join(lines)


def _prepare_output_path(path: str):
    """Create the parent directory of the output file if needed."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as error:
        raise OSError(f"Output path {path} is not writable: {error}") from error
    if not os.access(directory, os.W_OK):
        raise OSError(f"Output path {path} is not writable")


def _report_fallbacks(count: int, where: str, echo: Echo) -> int:
    if not count:
        return EXIT_OK
    echo(f"Error: {count} decoy linear programs fell back to trivial bounds; {where} is not certified", err=True)
    return EXIT_COMPUTATION_ERROR


def _report_error(error: Exception, echo: Echo) -> int:
    if isinstance(error, (ConfigurationError, UsageError)):
        echo(f"Error: {error}", err=True)
        return EXIT_USAGE_ERROR
    logger.exception("Run failed")
    echo(f"Error: {error}", err=True)
    return EXIT_COMPUTATION_ERROR


def run_scan(config: RunConfig, refine: bool = False, echo: Echo = click.echo) -> int:
    """
    Optimized distance scan written to ``config.out`` plus a summary on standard output.

    Returns:
        int: 0 on success, 2 for configuration or usage errors, 1 for any other failure.
    """
    try:
        _prepare_output_path(config.out)
        protocol_config = config.protocol_config()
        policy = TruncationPolicy(cutoff=config.cutoff)
        grid = config.signal_values()
        protocol = config.protocol_tag()
        result = distance_scan(protocol_config, protocol, config.distance_values(), config.N, grid, policy)
        if refine:
            result = refine_secure_distance(result, protocol_config, protocol, config.N, grid, policy)
        write_scan_csv(result, config.out)
        echo(summary_text(result, config))
        return _report_fallbacks(result.lp_failures, f"the scan written to {config.out}", echo)
    except (ValueError, RuntimeError, OSError) as error:
        return _report_error(error, echo)


def _oracle_lines(table, report=None) -> List[str]:
    lines = ["Single-photon oracle:", f"  Y11^ZZ = {table.y11_zz:.10e}", f"  g11    = {table.g11:.10f}", f"  e11^XX = {table.e11_xx:.10f}"]
    if report is not None:
        y11_ok = report.y11_lower <= table.y11_zz + 1e-12
        g11_ok = report.g11_lower <= table.g11 + 1e-9
        lines.append(f"  Y11 bound {report.y11_lower:.10e} <= oracle: {'ok' if y11_ok else 'VIOLATED'}")
        lines.append(f"  g11 bound {report.g11_lower:.10f} <= oracle: {'ok' if g11_ok else 'VIOLATED'}")
    return lines


def _residual_lines(protocol_config) -> List[str]:
    cutoff = get_settings().mixture_cutoff
    residuals = poisson_mixture_residuals(protocol_config, cutoff)
    tolerance = mixture_tolerances(protocol_config, cutoff)
    lines = [f"Poisson-mixture residuals (M={cutoff}):"]
    for tag, residual in residuals.items():
        worst = residual.max(axis=(2, 3))
        within = bool(np.all(worst <= tolerance))
        lines.append(f"  {tag.value}: max {worst.max():.3e}, tolerance {tolerance.min():.3e}..{tolerance.max():.3e} {'ok' if within else 'EXCEEDED'}")
    return lines


def dump_diagnostics(dump_dir: str, observed, table, problem):
    """Observed statistics and Fock yields as CSV, the yield program in LP format."""
    os.makedirs(dump_dir, exist_ok=True)
    with open(os.path.join(dump_dir, "observed.csv"), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("tag", "mu", "nu", "i", "j", "q"))
        for tag, values in observed.bit_yields.items():
            for (k, mu), (l, nu), i, j in product(enumerate(observed.alice_intensities), enumerate(observed.bob_intensities), (0, 1), (0, 1)):
                writer.writerow((tag.value, repr(mu), repr(nu), i, j, f"{values[k, l, i, j]:.16e}"))
    with open(os.path.join(dump_dir, "fock_yields.csv"), "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("tag", "m", "n", "i", "j", "yield"))
        for tag, values in table.yields.items():
            for m, n, i, j in product(range(table.cutoff + 1), range(table.cutoff + 1), (0, 1), (0, 1)):
                writer.writerow((tag.value, m, n, i, j, f"{values[m, n, i, j]:.16e}"))
    if problem is not None:
        with open(os.path.join(dump_dir, "yield_lp.lp"), "w", encoding="utf-8") as handle:
            handle.write(to_lp_format(problem, "minimum single-photon yield Y11^ZZ"))
    logger.info(f"Diagnostics written to {dump_dir}")


def run_diagnostics(
    config: RunConfig,
    distance: float,
    signal: Optional[float] = None,
    dump_dir: Optional[str] = None,
    echo: Echo = click.echo,
) -> int:
    """
    Debugging view of one operating point: bound report, oracle truth, LP statuses and
    Poisson-mixture residuals. Without ``signal`` the optimized signal intensity is used.

    Returns:
        int: 0 on success, 2 for configuration or usage errors, 1 for any other failure.
    """
    try:
        if distance < 0.0:
            raise UsageError(f"Distance must be non-negative, got {distance}")
        policy = TruncationPolicy(cutoff=config.cutoff)
        protocol = config.protocol_tag()
        if signal is None:
            signal, _ = optimize_signal(config.protocol_config(), protocol, distance, config.N, config.signal_values(), policy)
        protocol_config = config.protocol_config(signal, distance)
        echo(f"Diagnostics for {protocol.value} at {distance:g} km, mu_s = nu_s = {signal:g}")
        table = build_fock_yield_table(protocol_config, policy.cutoff)

        if protocol.is_oracle:
            echo("\n".join(_oracle_lines(table)))
            observed, problem = observed_statistics(protocol_config, (BasisTag.ZZ,)), None
            failures = 0
        else:
            observed = observed_statistics(protocol_config, ALL_TAGS)
            source = apply_finite_size(observed, config.N) if config.N is not None else observed
            report = compute_bounds(source, policy)
            echo(report.diagnostic_text())
            failures = len(report.failed_lps)
            echo("\n".join(_oracle_lines(table, report)))
            if not protocol.is_chsh:
                intervals = source if config.N is not None else None
                estimate = mdi_key_rate(observed, policy, config.f, intervals)
                echo(f"MDI baseline: Y11 >= {estimate.y11_lower:.10e}, e11 <= {estimate.e11_upper:.10f}, R = {estimate.raw_rate:.6e}")
                failures += estimate.lp_failures
            problem = build_yield_lp(source, policy)
        echo("\n".join(_residual_lines(protocol_config)))
        if dump_dir:
            dump_diagnostics(dump_dir, observed, table, problem)
        return _report_fallbacks(failures, "this operating point", echo)
    except (ValueError, RuntimeError, OSError) as error:
        return _report_error(error, echo)
