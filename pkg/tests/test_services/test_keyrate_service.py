import math

import pytest
from pydantic import ValidationError

from app.models.protocol_model import LpStatus, ProtocolTag
from app.schemas.bound_schemas import TruncationPolicy
from app.schemas.keyrate_schemas import KeyRatePoint, ScanResult
from app.schemas.lp_schemas import LpSolution
from app.schemas.protocol_schemas import symmetric_config
from app.services.keyrate_service import (
    chsh_key_rate,
    distance_scan,
    evaluate_point,
    mdi_key_rate,
    mdi_rate_formula,
    optimize_signal,
    privacy_factor,
    refine_secure_distance,
    resolve_protocol,
    scan_metadata,
    signal_grid,
)
from app.utils.exceptions import ConfigurationError, DomainError, UsageError
from app.utils.statistics import binary_entropy
from tests.conftest import FIVE_DECOYS, SIGNAL
from tests.mocks.settings import get_mock_settings

POLICY = TruncationPolicy(cutoff=7)
COARSE_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)


def point(distance, rate, raw=None):
    return KeyRatePoint(distance=distance, mu_s=0.3, y11_lower=0.01, g11_lower=2.5, gain=0.01, error=0.01,
                        rate=rate, raw_rate=raw, protocol=ProtocolTag.CHSH_MDI)


def test_privacy_factor_anchors():
    assert privacy_factor(2.0 * math.sqrt(2.0)) == pytest.approx(1.0, abs=1e-12)
    assert privacy_factor(2.0) == pytest.approx(0.0, abs=1e-12)
    assert privacy_factor(3.0) == 1.0
    with pytest.raises(DomainError):
        privacy_factor(4.5)


def test_chsh_key_rate_example():
    rate = chsh_key_rate(0.1, 0.01, 2.0 * math.sqrt(2.0), 0.002, 0.01, 1.16)
    assert rate == pytest.approx(0.001 - 0.002 * 1.16 * binary_entropy(0.01), rel=1e-12)
    assert rate == pytest.approx(8.126e-4, rel=1e-3)


def test_chsh_key_rate_at_classical_bound_has_no_single_photon_term():
    assert chsh_key_rate(0.1, 0.01, 2.0, 0.002, 0.01, 1.16) == pytest.approx(-0.002 * 1.16 * binary_entropy(0.01))


@pytest.mark.parametrize(
    "arguments",
    [(1.1, 0.01, 2.5, 0.1, 0.01, 1.16), (0.1, 0.01, 2.5, 0.1, -0.01, 1.16), (0.1, 0.01, 2.5, 0.1, 0.01, 0.9)],
)
def test_chsh_key_rate_domain(arguments):
    with pytest.raises(DomainError):
        chsh_key_rate(*arguments)


def test_mdi_rate_with_maximal_phase_error():
    assert mdi_rate_formula(0.1, 0.01, 0.5, 0.002, 0.01, 1.16) <= 0.0


def test_signal_grid():
    grid = signal_grid()
    assert len(grid) == 100
    assert grid[0] == 0.01 and grid[-1] == 1.0 and grid[41] == 0.42
    with pytest.raises(UsageError):
        signal_grid(0.01, 1.5, 0.01)
    with pytest.raises(UsageError):
        signal_grid(0.5, 0.1, 0.01)


def test_signal_grid_cap_follows_settings(mocker):
    mocker.patch("app.services.keyrate_service.get_settings", return_value=get_mock_settings(signal_grid_cap=2.0))
    assert signal_grid(0.5, 1.5, 0.5) == (0.5, 1.0, 1.5)


def test_resolve_protocol():
    assert resolve_protocol(ProtocolTag.CHSH_MDI, None) is ProtocolTag.CHSH_MDI
    assert resolve_protocol(ProtocolTag.CHSH_MDI, 1e14) is ProtocolTag.CHSH_MDI_FINITE
    assert resolve_protocol(ProtocolTag.MDI, 1e14) is ProtocolTag.MDI_FINITE
    with pytest.raises(UsageError):
        resolve_protocol(ProtocolTag.CHSH_MDI_INFINITE, 1e14)


def test_key_rate_point_clamp_consistency():
    assert point(10.0, 0.0, -1e-5).rate == 0.0
    with pytest.raises(ValidationError):
        point(10.0, 1e-5, -1e-5)


def test_scan_result_properties():
    result = ScanResult(points=(point(0.0, 2e-6), point(5.0, 2e-6), point(10.0, 1e-6), point(15.0, 0.0)))
    assert result.secure_distance == 10.0
    assert result.peak.distance == 0.0
    with pytest.raises(ValidationError):
        ScanResult(points=(point(5.0, 0.0), point(5.0, 0.0)))


def test_oracle_mdi_rate_positive_at_zero_distance(reference_system):
    config = symmetric_config((), SIGNAL, reference_system)
    result = evaluate_point(config, ProtocolTag.MDI_INFINITE)
    assert result.rate > 0.0
    assert result.g11_lower is None


def test_mdi_key_rate_estimates_are_sound(observed_10km, oracle_10km):
    estimate = mdi_key_rate(observed_10km, POLICY, 1.16)
    assert 0.0 < estimate.y11_lower <= oracle_10km.y11_zz + 1e-9
    assert estimate.e11_upper >= oracle_10km.e11_xx - 1e-9


def test_mdi_key_rate_needs_x_statistics(observed_10km):
    observed = observed_10km.model_copy(update={"bit_yields": {tag: v for tag, v in observed_10km.bit_yields.items() if tag.value != "XX"}})
    with pytest.raises(ConfigurationError):
        mdi_key_rate(observed, POLICY)


# Test exact single-photon inputs dominate the decoy estimate at the same operating point
def test_oracle_rate_dominates_decoy_rate(five_intensity_config):
    decoy = evaluate_point(five_intensity_config, ProtocolTag.CHSH_MDI, policy=POLICY)
    oracle = evaluate_point(five_intensity_config, ProtocolTag.CHSH_MDI_INFINITE)
    assert decoy.rate == max(decoy.raw_rate, 0.0)
    assert oracle.raw_rate >= decoy.raw_rate - 1e-12
    assert decoy.gain == pytest.approx(oracle.gain, rel=1e-12)


def test_decoy_protocol_needs_three_intensities():
    config = symmetric_config((0.0,), SIGNAL).at_distance(10.0)
    with pytest.raises(ConfigurationError):
        evaluate_point(config, ProtocolTag.CHSH_MDI, policy=POLICY)


def test_optimize_signal_beyond_cutoff_returns_smallest_grid_point():
    config = symmetric_config((), SIGNAL)
    mu, best = optimize_signal(config, ProtocolTag.CHSH_MDI_INFINITE, 500.0)
    assert mu == 0.01
    assert best.rate == 0.0


def test_optimize_signal_is_exhaustive():
    config = symmetric_config((), SIGNAL)
    mu, best = optimize_signal(config, ProtocolTag.CHSH_MDI_INFINITE, 25.0, grid=COARSE_GRID)
    rates = [evaluate_point(config.at_distance(25.0).with_signal(m), ProtocolTag.CHSH_MDI_INFINITE).rate for m in COARSE_GRID]
    assert best.rate == max(rates)
    assert mu == COARSE_GRID[rates.index(max(rates))]


def test_optimize_signal_skips_grid_points_below_decoys():
    config = symmetric_config(FIVE_DECOYS, SIGNAL)
    with pytest.raises(ConfigurationError):
        optimize_signal(config, ProtocolTag.CHSH_MDI, 10.0, grid=(0.01, 0.02))


def test_distance_scan_validates_distances():
    config = symmetric_config((), SIGNAL)
    with pytest.raises(UsageError):
        distance_scan(config, ProtocolTag.CHSH_MDI_INFINITE, [])
    with pytest.raises(UsageError):
        distance_scan(config, ProtocolTag.CHSH_MDI_INFINITE, [10.0, 5.0])


def test_distance_scan_oracle_curve():
    config = symmetric_config((), SIGNAL)
    result = distance_scan(config, ProtocolTag.CHSH_MDI_INFINITE, [0.0, 50.0, 100.0, 400.0], grid=COARSE_GRID, workers=1)
    assert [p.distance for p in result.points] == [0.0, 50.0, 100.0, 400.0]
    assert all(p.rate >= 0.0 for p in result.points)
    assert result.points[0].rate > result.points[1].rate > 0.0
    assert result.points[-1].rate == 0.0
    secure = [p.secure for p in result.points]
    assert secure == sorted(secure, reverse=True)
    assert result.metadata["protocol"] == "CHSH-MDI-infinite"


# Test parallel evaluation assembles the same ordered result
def test_distance_scan_is_independent_of_workers():
    config = symmetric_config((), SIGNAL)
    distances = [0.0, 100.0, 200.0]
    serial = distance_scan(config, ProtocolTag.MDI_INFINITE, distances, grid=COARSE_GRID, workers=1)
    parallel = distance_scan(config, ProtocolTag.MDI_INFINITE, distances, grid=COARSE_GRID, workers=2)
    assert serial.points == parallel.points


def test_refine_secure_distance_fills_gap():
    config = symmetric_config((), SIGNAL)
    coarse = distance_scan(config, ProtocolTag.CHSH_MDI_INFINITE, [0.0, 100.0, 200.0, 300.0, 400.0], grid=COARSE_GRID)
    refined = refine_secure_distance(coarse, config, ProtocolTag.CHSH_MDI_INFINITE, grid=COARSE_GRID, step=50.0)
    assert len(refined.points) == len(coarse.points) + 1
    assert refined.secure_distance >= coarse.secure_distance
    assert refined.metadata["refine_step_km"] == "50"
    unchanged = refine_secure_distance(refined.model_copy(update={"points": refined.points[:1]}), config,
                                       ProtocolTag.CHSH_MDI_INFINITE, grid=COARSE_GRID, step=50.0)
    assert len(unchanged.points) == 1


def test_fallbacks_are_counted_on_points(five_intensity_config, mocker):
    mocker.patch("app.services.bounds_service.solve", return_value=LpSolution(status=LpStatus.INFEASIBLE))
    point = evaluate_point(five_intensity_config, ProtocolTag.CHSH_MDI, policy=POLICY)
    assert point.lp_failures == 17
    assert point.rate == 0.0
    assert evaluate_point(five_intensity_config, ProtocolTag.MDI, policy=POLICY).lp_failures == 3


def test_fallbacks_are_summed_over_the_signal_grid(mocker):
    mocker.patch("app.services.bounds_service.solve", return_value=LpSolution(status=LpStatus.INFEASIBLE))
    config = symmetric_config(FIVE_DECOYS, SIGNAL)
    _, best = optimize_signal(config, ProtocolTag.CHSH_MDI, 10.0, grid=(0.1, 0.2, 0.3), policy=POLICY)
    assert best.lp_failures == 3 * 17
    result = ScanResult(points=(best,))
    assert result.lp_failures == 51


def test_oracle_points_have_no_fallbacks():
    config = symmetric_config((), SIGNAL)
    assert evaluate_point(config.at_distance(10.0), ProtocolTag.CHSH_MDI_INFINITE).lp_failures == 0


def test_scan_metadata_names_decoys():
    metadata = scan_metadata(symmetric_config(FIVE_DECOYS, SIGNAL), ProtocolTag.CHSH_MDI, None, POLICY)
    assert metadata["alice_decoys"] == "0,0.01,0.02,0.03"
    assert metadata["bob_decoys"] == "0,0.01,0.02,0.03"
    assert metadata["N"] == "asymptotic"


@pytest.mark.slow
def test_finite_size_rates_are_ordered(five_intensity_config):
    rates = [evaluate_point(five_intensity_config, ProtocolTag.CHSH_MDI, pulses, POLICY).rate for pulses in (1e13, 1e14, 1e15)]
    asymptotic = evaluate_point(five_intensity_config, ProtocolTag.CHSH_MDI, None, POLICY).rate
    assert rates[0] <= rates[1] + 1e-15 <= rates[2] + 2e-15 <= asymptotic + 3e-15
