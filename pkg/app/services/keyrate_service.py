"""
Secret key rates of decoy-state CHSH-MDI-QKD and of the decoy-state MDI-QKD baseline.

Rates are per pulse pair. ``raw_rate`` keeps the formula value; reported rates are clamped at 0.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from app.dependencies import get_settings
from app.models.protocol_model import BasisTag, LpStatus, ProtocolTag
from app.schemas.bound_schemas import IntervalObservation, TruncationPolicy
from app.schemas.keyrate_schemas import KeyRatePoint, MdiEstimate, ScanResult
from app.schemas.optics_schemas import ObservedStatistics
from app.schemas.protocol_schemas import IntensitySet, ProtocolConfig
from app.services.bounds_service import apply_finite_size, compute_bounds, estimate_e11_upper, estimate_y11
from app.services.optics_service import observed_statistics, oracle_table
from app.utils.exceptions import ConfigurationError, DomainError, UsageError
from app.utils.statistics import binary_entropy, poisson_pmf

logger = logging.getLogger(__name__)

CHSH_TAGS = BasisTag.chsh_terms() + (BasisTag.ZZ,)
MDI_TAGS = (BasisTag.ZZ, BasisTag.XX)

MDI_RATE_FORMULA = "R = P11*Y11^ZZ*(1 - h(e11^XX)) - Q^ZZ*f*h(E^ZZ)"
CHSH_RATE_FORMULA = "R = P11*Y11^ZZ*(1 - log2(1 + sqrt(2 - g11^2/4))) - Q^ZZ*f*h(E^ZZ)"


def _check_unit(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


def privacy_factor(g11: float) -> float:
    """1 - log2(1 + sqrt(2 - g^2/4)), with the root argument clamped at 0 beyond 2*sqrt(2)."""
    if not -4.0 <= g11 <= 4.0:
        raise DomainError(f"CHSH value must lie in [-4, 4], got {g11}")
    return 1.0 - math.log2(1.0 + math.sqrt(max(0.0, 2.0 - g11 * g11 / 4.0)))


def chsh_key_rate(p11: float, y11_lower: float, g11_lower: float, gain: float, error: float, f: float) -> float:
    """
    Raw CHSH-MDI-QKD key rate; callers clamp at 0 for reporting.

    Raises:
        DomainError: If a probability leaves [0, 1], g11 leaves [-4, 4] or f < 1.
    """
    for name, value in (("p11", p11), ("y11", y11_lower), ("gain", gain), ("error", error)):
        _check_unit(name, value)
    if f < 1.0:
        raise DomainError(f"Reconciliation efficiency must be at least 1, got {f}")
    return p11 * y11_lower * privacy_factor(g11_lower) - gain * f * binary_entropy(error)


def mdi_rate_formula(p11: float, y11_lower: float, e11_upper: float, gain: float, error: float, f: float) -> float:
    for name, value in (("p11", p11), ("y11", y11_lower), ("e11", e11_upper), ("gain", gain), ("error", error)):
        _check_unit(name, value)
    if f < 1.0:
        raise DomainError(f"Reconciliation efficiency must be at least 1, got {f}")
    return p11 * y11_lower * (1.0 - binary_entropy(min(e11_upper, 0.5))) - gain * f * binary_entropy(error)


def signal_p11(observed: ObservedStatistics) -> float:
    """P_1(mu_s) P_1(nu_s)."""
    return poisson_pmf(observed.alice_intensities[-1], 1) * poisson_pmf(observed.bob_intensities[-1], 1)


def _signal_gain_error(observed: ObservedStatistics) -> Tuple[float, float]:
    k, l = observed.signal_index
    return float(observed.gain_zz[k, l]), float(observed.error_zz[k, l])


def mdi_key_rate(
    observed: ObservedStatistics,
    policy: Optional[TruncationPolicy] = None,
    f: float = 1.16,
    intervals: Optional[IntervalObservation] = None,
) -> MdiEstimate:
    """
    Decoy-state MDI-QKD baseline rate from Z and X statistics.

    Y11^ZZ is bounded below and e11^XX above by decoy linear programs; ``intervals`` replaces the
    point observations in those programs for finite-size runs.

    Raises:
        ConfigurationError: If X-basis statistics are missing or either party has fewer than three intensities.
    """
    if BasisTag.XX not in observed.bit_yields:
        raise ConfigurationError("MDI baseline needs XX statistics")
    policy = policy or TruncationPolicy(cutoff=get_settings().default_cutoff)
    source = intervals if intervals is not None else observed
    diagnostics = []
    y11 = estimate_y11(source, policy, diagnostics, BasisTag.ZZ)
    e11 = estimate_e11_upper(source, policy, diagnostics, BasisTag.XX)
    gain, error = _signal_gain_error(observed)
    raw = mdi_rate_formula(signal_p11(observed), y11, e11, gain, error, f)
    failures = sum(1 for d in diagnostics if d.status is not LpStatus.OPTIMAL)
    return MdiEstimate(y11_lower=y11, e11_upper=e11, raw_rate=raw, lp_failures=failures)


def resolve_protocol(protocol: ProtocolTag, pulses: Optional[float]) -> ProtocolTag:
    """Finite-size variants are selected by the presence of a pulse count."""
    if pulses is None:
        return protocol
    if protocol.is_oracle:
        raise UsageError(f"{protocol.value} uses exact single-photon quantities and takes no pulse count")
    return ProtocolTag.CHSH_MDI_FINITE if protocol.is_chsh else ProtocolTag.MDI_FINITE


def _signal_only(config: ProtocolConfig) -> ProtocolConfig:
    return config.model_copy(update={"alice": IntensitySet(signal=config.alice.signal), "bob": IntensitySet(signal=config.bob.signal)})


def evaluate_point(
    config: ProtocolConfig,
    protocol: ProtocolTag,
    pulses: Optional[float] = None,
    policy: Optional[TruncationPolicy] = None,
) -> KeyRatePoint:
    """
    Full bound and rate pipeline at the configuration's distance and signal intensity.

    Raises:
        ConfigurationError: If a decoy protocol has fewer than three intensities per party.
    """
    protocol = resolve_protocol(protocol, pulses)
    policy = policy or TruncationPolicy(cutoff=get_settings().default_cutoff)
    f = config.system.recon_efficiency
    tags = CHSH_TAGS if protocol.is_chsh else MDI_TAGS
    failures = 0

    if protocol.is_oracle:
        observed = observed_statistics(_signal_only(config), (BasisTag.ZZ,))
        table = oracle_table(config)
        y11 = min(max(table.y11_zz, 0.0), 1.0)
        gain, error = _signal_gain_error(observed)
        if protocol.is_chsh:
            g11 = min(max(table.g11, -4.0), 4.0)
            raw = chsh_key_rate(signal_p11(observed), y11, g11, gain, error, f)
        else:
            g11 = None
            raw = mdi_rate_formula(signal_p11(observed), y11, min(table.e11_xx, 0.5), gain, error, f)
    else:
        observed = observed_statistics(config, tags)
        intervals = apply_finite_size(observed, pulses) if pulses is not None else None
        gain, error = _signal_gain_error(observed)
        if protocol.is_chsh:
            report = compute_bounds(intervals if intervals is not None else observed, policy)
            y11, g11 = report.y11_lower, report.g11_lower
            failures = len(report.failed_lps)
            raw = chsh_key_rate(signal_p11(observed), y11, g11, gain, error, f)
        else:
            estimate = mdi_key_rate(observed, policy, f, intervals)
            y11, g11, raw = estimate.y11_lower, None, estimate.raw_rate
            failures = estimate.lp_failures

    return KeyRatePoint(
        distance=config.system.distance,
        mu_s=config.alice.signal,
        y11_lower=y11,
        g11_lower=g11,
        gain=gain,
        error=error,
        rate=max(raw, 0.0),
        raw_rate=raw,
        protocol=protocol,
        pulses=pulses,
        lp_failures=failures,
    )


def signal_grid(minimum: float = 0.01, maximum: float = 1.0, step: float = 0.01) -> Tuple[float, ...]:
    """
    Inclusive grid of signal intensities.

    Raises:
        UsageError: If the range is empty, the step is not positive or the maximum exceeds the configured cap.
    """
    if step <= 0.0 or maximum < minimum or minimum <= 0.0:
        raise UsageError(f"Invalid signal grid {minimum}:{maximum}:{step}")
    cap = get_settings().signal_grid_cap
    if maximum > cap + 1e-12:
        raise UsageError(f"Signal grid maximum {maximum} exceeds the cap {cap}")
    count = int(math.floor((maximum - minimum) / step + 1e-9)) + 1
    return tuple(round(minimum + k * step, 12) for k in range(count))


def optimize_signal(
    config: ProtocolConfig,
    protocol: ProtocolTag,
    distance: float,
    pulses: Optional[float] = None,
    grid: Optional[Sequence[float]] = None,
    policy: Optional[TruncationPolicy] = None,
) -> Tuple[float, KeyRatePoint]:
    """
    Grid search of mu_s = nu_s maximizing the clamped rate, ties broken toward smaller intensities.

    Grid points not above the largest decoy are skipped. When no grid point yields a positive rate,
    the smallest admissible grid point is returned with rate 0.

    Raises:
        ConfigurationError: If no grid point lies above the decoy intensities.
    """
    grid = sorted(grid if grid is not None else signal_grid())
    floor = max(config.alice.decoys[-1:] + config.bob.decoys[-1:], default=-1.0)
    admissible = [mu for mu in grid if mu > floor]
    if not admissible:
        raise ConfigurationError(f"No signal grid point exceeds the largest decoy intensity {floor}", key="signal_grid")
    located = config.at_distance(distance)
    best: Optional[KeyRatePoint] = None
    failures = 0
    for mu in admissible:
        point = evaluate_point(located.with_signal(mu), protocol, pulses, policy)
        failures += point.lp_failures
        logger.debug(f"{distance} km mu={mu}: R={point.raw_rate:.6e}")
        if best is None or point.rate > best.rate:
            best = point
    if failures:
        logger.warning(f"{failures} decoy programs fell back to trivial bounds during the signal search at {distance:g} km")
    return best.mu_s, best.model_copy(update={"lp_failures": failures})


def _scan_point(distance, config, protocol, pulses, grid, policy) -> KeyRatePoint:
    _, point = optimize_signal(config, protocol, distance, pulses, grid, policy)
    logger.info(f"{point.protocol.value} at {distance:g} km: mu_s={point.mu_s:g} R={point.rate:.6e}")
    return point


def _evaluate_distances(distances, config, protocol, pulses, grid, policy, workers) -> Tuple[KeyRatePoint, ...]:
    task = partial(_scan_point, config=config, protocol=protocol, pulses=pulses, grid=grid, policy=policy)
    if workers <= 1 or len(distances) <= 1:
        return tuple(task(distance) for distance in distances)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return tuple(executor.map(task, distances))


def scan_metadata(config: ProtocolConfig, protocol: ProtocolTag, pulses, policy: TruncationPolicy) -> dict:
    return {
        "protocol": resolve_protocol(protocol, pulses).value,
        "alice_decoys": ",".join(f"{mu:g}" for mu in config.alice.decoys),
        "bob_decoys": ",".join(f"{nu:g}" for nu in config.bob.decoys),
        "cutoff": str(policy.cutoff),
        "phase_nodes": str(config.phase_nodes),
        "N": "asymptotic" if pulses is None else f"{pulses:g} pulse pairs per setting",
        "rate_formula": CHSH_RATE_FORMULA if protocol.is_chsh else MDI_RATE_FORMULA,
    }


def distance_scan(
    config: ProtocolConfig,
    protocol: ProtocolTag,
    distances: Iterable[float],
    pulses: Optional[float] = None,
    grid: Optional[Sequence[float]] = None,
    policy: Optional[TruncationPolicy] = None,
    workers: Optional[int] = None,
) -> ScanResult:
    """
    One optimized KeyRatePoint per distance, in distance order regardless of worker count.

    Raises:
        UsageError: If the distance list is empty or not strictly increasing.
    """
    distances = [float(d) for d in distances]
    if not distances:
        raise UsageError("Distance scan needs at least one distance")
    if any(after <= before for before, after in zip(distances, distances[1:])):
        raise UsageError(f"Distances must be strictly increasing, got {distances}")
    policy = policy or TruncationPolicy(cutoff=get_settings().default_cutoff)
    workers = workers or get_settings().workers
    points = _evaluate_distances(distances, config, protocol, pulses, grid, policy, workers)
    result = ScanResult(points=points, metadata=scan_metadata(config, protocol, pulses, policy))
    logger.info(f"Secure distance: {result.secure_distance} km")
    return result


def refine_secure_distance(
    result: ScanResult,
    config: ProtocolConfig,
    protocol: ProtocolTag,
    pulses: Optional[float] = None,
    grid: Optional[Sequence[float]] = None,
    policy: Optional[TruncationPolicy] = None,
    step: Optional[float] = None,
    workers: Optional[int] = None,
) -> ScanResult:
    """
    Rescan the gap between the last secure and the next insecure distance at a finer step.

    Scans whose last point is still secure, or with no secure point at all, are returned unchanged.
    """
    step = step or get_settings().refine_step_km
    points = result.points
    last_secure = max((k for k, point in enumerate(points) if point.secure), default=None)
    if last_secure is None or last_secure == len(points) - 1:
        return result
    start, stop = points[last_secure].distance, points[last_secure + 1].distance
    extra = [d for d in np.arange(start + step, stop, step) if d < stop - 1e-9]
    if not extra:
        return result
    logger.info(f"Refining secure distance between {start:g} and {stop:g} km at {step:g} km")
    policy = policy or TruncationPolicy(cutoff=get_settings().default_cutoff)
    workers = workers or get_settings().workers
    refined = _evaluate_distances([round(float(d), 9) for d in extra], config, protocol, pulses, grid, policy, workers)
    merged = result.merged(refined)
    metadata = {**merged.metadata, "refine_step_km": f"{step:g}"}
    return ScanResult(points=merged.points, metadata=metadata)
