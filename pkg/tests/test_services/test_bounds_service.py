import math

import numpy as np
import pytest

from app.models.protocol_model import BasisTag, BoundSide, Direction, RatioTarget
from app.schemas.bound_schemas import TSIRELSON, ChshTermBound, TruncationPolicy
from app.schemas.protocol_schemas import symmetric_config
from app.services.bounds_service import (
    NEGLIGIBLE_WEIGHT,
    apply_finite_size,
    as_interval_observation,
    bound_chsh_term,
    build_chsh_lp,
    build_error_yield_lp,
    build_yield_lp,
    compute_bounds,
    lower_bound_g11,
)
from app.services.lp_service import check_feasible, solve
from app.services.optics_service import ALL_TAGS, build_fock_yield_table, observed_statistics
from app.utils.exceptions import BoundInconsistencyError, ConfigurationError, UsageError
from app.utils.statistics import CORRELATOR_SIGNS
from tests.conftest import FIVE_DECOYS, FOUR_DECOYS, SIGNAL

POLICY = TruncationPolicy(cutoff=7)


@pytest.fixture(scope="module")
def asymptotic_report(observed_10km):
    return compute_bounds(observed_10km, POLICY)


@pytest.fixture(scope="module")
def finite_report(observed_10km):
    return compute_bounds(apply_finite_size(observed_10km, 1e14), POLICY)


def term(tag, side, ratio):
    return ChshTermBound(tag=tag, side=side, numerator=(0.0, 0.0), denominator=(1.0, 1.0), ratio=ratio)


def test_bound_chsh_term_positive_numerator():
    bound = bound_chsh_term(BasisTag.QS, (0.5, 0.7), (0.8, 1.0), BoundSide.UPPER)
    assert bound.ratio == pytest.approx(0.875)
    assert not bound.trivial


def test_bound_chsh_term_negative_numerator():
    bound = bound_chsh_term(BasisTag.QT, (-0.7, -0.5), (0.8, 1.0), BoundSide.UPPER)
    assert bound.ratio == pytest.approx(-0.5)
    lower = bound_chsh_term(BasisTag.QT, (-0.7, -0.5), (0.8, 1.0), BoundSide.LOWER)
    assert lower.ratio == pytest.approx(-0.875)


# Test a vanishing denominator falls back to the trivial ratio
def test_bound_chsh_term_degenerate_denominator():
    bound = bound_chsh_term(BasisTag.RS, (-0.2, 0.4), (0.0, 0.3), BoundSide.LOWER)
    assert bound.ratio == -1.0
    assert bound.trivial
    assert bound_chsh_term(BasisTag.RS, (-0.2, 0.4), (0.0, 0.3), BoundSide.UPPER).ratio == 1.0


def test_bound_chsh_term_clamps():
    assert bound_chsh_term(BasisTag.QS, (0.5, 0.9), (0.6, 0.8), BoundSide.UPPER).ratio == 1.0


def test_bound_chsh_term_rejects_negative_denominator():
    with pytest.raises(BoundInconsistencyError):
        bound_chsh_term(BasisTag.QS, (0.1, 0.2), (-0.1, 0.3), BoundSide.LOWER)


def test_lower_bound_g11_ideal_and_trivial():
    ideal = {
        BasisTag.QS: term(BasisTag.QS, BoundSide.LOWER, 1 / math.sqrt(2)),
        BasisTag.RS: term(BasisTag.RS, BoundSide.LOWER, 1 / math.sqrt(2)),
        BasisTag.RT: term(BasisTag.RT, BoundSide.LOWER, 1 / math.sqrt(2)),
        BasisTag.QT: term(BasisTag.QT, BoundSide.UPPER, -1 / math.sqrt(2)),
    }
    assert lower_bound_g11(ideal) == pytest.approx(TSIRELSON, abs=1e-12)
    trivial = {
        BasisTag.QS: term(BasisTag.QS, BoundSide.LOWER, -1.0),
        BasisTag.RS: term(BasisTag.RS, BoundSide.LOWER, -1.0),
        BasisTag.RT: term(BasisTag.RT, BoundSide.LOWER, -1.0),
        BasisTag.QT: term(BasisTag.QT, BoundSide.UPPER, 1.0),
    }
    assert lower_bound_g11(trivial) == -4.0


def test_lower_bound_g11_rejects_wrong_sides():
    terms = {tag: term(tag, BoundSide.LOWER, 0.5) for tag in BasisTag.chsh_terms()}
    with pytest.raises(UsageError):
        lower_bound_g11(terms)
    del terms[BasisTag.QT]
    with pytest.raises(UsageError):
        lower_bound_g11(terms)


def test_apply_finite_size_formula(observed_10km):
    intervals = apply_finite_size(observed_10km, 1e10)
    q = observed_10km.bit_yields[BasisTag.ZZ]
    half_width = 5.0 * np.sqrt(q * (1.0 - q) / 1e10)
    assert np.allclose(intervals.low[BasisTag.ZZ], np.maximum(q - half_width, 0.0))
    assert np.allclose(intervals.high[BasisTag.ZZ], np.minimum(q + half_width, 1.0))
    assert intervals.pulses == 1e10
    assert intervals.contains(observed_10km)


def test_apply_finite_size_infinite_pulses_collapse(observed_10km):
    intervals = apply_finite_size(observed_10km, np.inf)
    for tag in observed_10km.bit_yields:
        assert np.array_equal(intervals.low[tag], observed_10km.bit_yields[tag])
        assert np.array_equal(intervals.high[tag], observed_10km.bit_yields[tag])


def test_apply_finite_size_flags_zero_probabilities(observed_10km):
    zz = observed_10km.bit_yields[BasisTag.ZZ].copy()
    zz[0, 0] = 0.0
    observed = observed_10km.model_copy(update={"bit_yields": {BasisTag.ZZ: zz}})
    intervals = apply_finite_size(observed, 1e12)
    assert intervals.zero_width_count == 4
    assert np.all(intervals.low[BasisTag.ZZ][0, 0] == 0.0)
    assert np.all(intervals.high[BasisTag.ZZ][0, 0] == 0.0)


def test_apply_finite_size_rejects_non_positive_pulses(observed_10km):
    with pytest.raises(UsageError):
        apply_finite_size(observed_10km, 0.0)


# Test the vacuum pair pins Y00 to the observed vacuum gain
def test_yield_lp_recovers_vacuum_yield(observed_10km):
    problem = build_yield_lp(observed_10km, POLICY, target=(0, 0))
    solution = solve(problem)
    assert solution.optimal
    assert solution.value * problem.variable_scale == pytest.approx(observed_10km.gain_zz[0, 0], rel=1e-9)


def test_negligible_weights_are_dropped(observed_10km):
    problem = build_yield_lp(observed_10km, POLICY)
    assert problem.matrix[problem.matrix != 0.0].min() >= NEGLIGIBLE_WEIGHT
    assert solve(problem).optimal


def test_yield_lp_needs_three_intensities():
    config = symmetric_config((0.0,), 0.3)
    observed = observed_statistics(config, (BasisTag.ZZ,))
    with pytest.raises(ConfigurationError):
        build_yield_lp(observed, POLICY)


def test_yield_lp_matches_highs(observed_10km):
    from scipy.optimize import linprog

    problem = build_yield_lp(observed_10km, POLICY)
    signs = np.array([1.0 if relation.value == "<=" else -1.0 for _, relation, _ in problem.constraints])
    reference = linprog(
        problem.objective,
        A_ub=problem.matrix * signs[:, None],
        b_ub=problem.rhs * signs,
        bounds=list(zip(problem.lower, problem.upper)),
        method="highs",
    )
    solution = solve(problem)
    assert solution.optimal
    # HiGHS stops at its default primal feasibility tolerance of 1e-7
    assert solution.value == pytest.approx(reference.fun, rel=1e-3)
    assert check_feasible(problem, solution.assignment, 1e-12).feasible


def test_chsh_lp_denominator_at_most_four(observed_10km):
    problem = build_chsh_lp(observed_10km, POLICY, BasisTag.QS, RatioTarget.DENOMINATOR, Direction.MAXIMIZE)
    solution = solve(problem)
    assert solution.optimal
    assert solution.value * problem.variable_scale <= 4.0 + 1e-9
    assert problem.num_vars == 4 * POLICY.size ** 2


def test_yield_lp_at_50km_is_optimal_and_sound():
    config = symmetric_config(FIVE_DECOYS, SIGNAL).at_distance(50.0)
    observed = observed_statistics(config, (BasisTag.ZZ,))
    truth = build_fock_yield_table(config, 1, (BasisTag.ZZ,)).y11_zz
    problem = build_yield_lp(observed, POLICY)
    solution = solve(problem)
    assert solution.optimal
    assert 0.9 * truth <= solution.value * problem.variable_scale <= truth + 1e-12


# Test every correlator program at 30 km is solved and brackets the single-photon truth
@pytest.mark.parametrize("tag", BasisTag.chsh_terms())
def test_chsh_lps_bracket_truth_at_30km(tag):
    config = symmetric_config(FIVE_DECOYS, SIGNAL).at_distance(30.0)
    observed = observed_statistics(config, (tag,))
    yields = build_fock_yield_table(config, 1, (tag,)).yields[tag][1, 1]
    truth = {RatioTarget.NUMERATOR: float((yields * CORRELATOR_SIGNS).sum()), RatioTarget.DENOMINATOR: float(yields.sum())}
    for target in RatioTarget:
        low, high = (solve(build_chsh_lp(observed, POLICY, tag, target, direction)) for direction in (Direction.MINIMIZE, Direction.MAXIMIZE))
        assert low.optimal and high.optimal
        scale = build_chsh_lp(observed, POLICY, tag, target, Direction.MINIMIZE).variable_scale
        assert low.value * scale <= truth[target] + 1e-12
        assert high.value * scale >= truth[target] - 1e-12


# Test dark-count-only data bounds the numerator symmetrically about zero
def test_dark_count_numerator_is_symmetric(reference_system):
    config = symmetric_config(FIVE_DECOYS, SIGNAL, reference_system).at_distance(2000.0)
    observed = observed_statistics(config, (BasisTag.QS,))
    values = []
    for direction in (Direction.MINIMIZE, Direction.MAXIMIZE):
        problem = build_chsh_lp(observed, POLICY, BasisTag.QS, RatioTarget.NUMERATOR, direction)
        solution = solve(problem)
        assert solution.optimal
        values.append(solution.value * problem.variable_scale)
    low, high = values
    assert high > 0.0
    assert low + high == pytest.approx(0.0, abs=1e-6 * high + 1e-15)


def test_chsh_lp_rejects_non_chsh_tag(observed_10km):
    with pytest.raises(UsageError):
        build_chsh_lp(observed_10km, POLICY, BasisTag.ZZ, RatioTarget.NUMERATOR, Direction.MINIMIZE)


def test_error_yield_lp_bounds_single_photon_errors(observed_10km, oracle_10km):
    problem = build_error_yield_lp(observed_10km, POLICY)
    solution = solve(problem)
    assert solution.optimal
    oracle_error_yield = oracle_10km.y11_xx * oracle_10km.e11_xx
    assert solution.value * problem.variable_scale >= oracle_error_yield - 1e-10


def test_as_interval_observation_is_point(observed_10km):
    intervals = as_interval_observation(observed_10km)
    assert intervals.contains(observed_10km, 0.0)
    assert intervals.pulses is None


# Test soundness: bounds never exceed the single-photon truth
def test_asymptotic_bounds_are_sound(asymptotic_report, oracle_10km):
    assert asymptotic_report.all_optimal
    assert len(asymptotic_report.diagnostics) == 17
    assert asymptotic_report.y11_lower <= oracle_10km.y11_zz + 1e-9
    assert asymptotic_report.g11_lower <= oracle_10km.g11 + 1e-7


def test_asymptotic_bounds_are_tight(asymptotic_report, oracle_10km):
    assert asymptotic_report.y11_lower >= 0.9 * oracle_10km.y11_zz
    assert asymptotic_report.g11_lower >= 2.0


def test_term_bounds_bracket_oracle_correlators(asymptotic_report, oracle_10km):
    for tag, bound in asymptotic_report.terms.items():
        truth = float(oracle_10km.correlator(tag)[1, 1])
        if bound.side is BoundSide.LOWER:
            assert bound.ratio <= truth + 1e-7
        else:
            assert bound.ratio >= truth - 1e-7


def test_finite_size_bounds_are_looser(asymptotic_report, finite_report):
    assert finite_report.pulses == 1e14
    assert finite_report.y11_lower <= asymptotic_report.y11_lower + 1e-10
    assert finite_report.g11_lower <= asymptotic_report.g11_lower + 1e-7


@pytest.mark.slow
def test_bounds_grow_with_pulse_count(observed_10km):
    low = compute_bounds(apply_finite_size(observed_10km, 1e13), POLICY)
    high = compute_bounds(apply_finite_size(observed_10km, 1e15), POLICY)
    assert low.y11_lower <= high.y11_lower + 1e-10
    assert low.g11_lower <= high.g11_lower + 1e-7


@pytest.mark.slow
def test_extra_intensity_never_loosens_bounds(asymptotic_report):
    config = symmetric_config(FOUR_DECOYS, SIGNAL).at_distance(10.0)
    fewer = compute_bounds(observed_statistics(config, ALL_TAGS), POLICY)
    assert fewer.y11_lower <= asymptotic_report.y11_lower + 1e-9
    assert fewer.g11_lower <= asymptotic_report.g11_lower + 1e-7


@pytest.mark.slow
def test_cutoff_stability(observed_10km, asymptotic_report):
    problem = build_yield_lp(observed_10km, TruncationPolicy(cutoff=9))
    solution = solve(problem)
    assert solution.value * problem.variable_scale == pytest.approx(asymptotic_report.y11_lower, abs=1e-8)
