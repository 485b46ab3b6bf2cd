"""
Decoy-state estimation of the single-photon yield Y11^ZZ and CHSH value g11.

The linear programs are built on a rescaled problem: every variable is divided by the largest
observed right-hand side (``LinearProgram.variable_scale``) so that probability-scale data far
below the solver tolerance stays resolvable. Values returned by this module are absolute.
Photon-pair weights below NEGLIGIBLE_WEIGHT are dropped from the rows and counted in the tail slack.
"""
import logging
from itertools import product
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from app.dependencies import get_settings
from app.models.protocol_model import BasisTag, BoundSide, Direction, LpStatus, RatioTarget, Relation
from app.schemas.bound_schemas import BoundReport, ChshTermBound, IntervalObservation, LpDiagnostic, TruncationPolicy
from app.schemas.lp_schemas import LinearProgram
from app.schemas.optics_schemas import ObservedStatistics
from app.services.lp_service import solve
from app.utils.exceptions import BoundInconsistencyError, ConfigurationError, UsageError
from app.utils.statistics import CORRELATOR_SIGNS, poisson_pmf_vector

logger = logging.getLogger(__name__)

MIN_INTENSITIES_PER_SIDE = 3

# Photon-pair weights below this are folded into the truncation tail.
NEGLIGIBLE_WEIGHT = 1e-20

# Trivial bounds used when a linear program is not solved to optimality.
TRIVIAL_NUMERATOR = (-2.0, 2.0)
TRIVIAL_DENOMINATOR = (0.0, 4.0)

Observation = Union[ObservedStatistics, IntervalObservation]


def as_interval_observation(observed: Observation) -> IntervalObservation:
    """Point observations as zero-width intervals; interval observations pass through."""
    if isinstance(observed, IntervalObservation):
        return observed
    return IntervalObservation(
        alice_intensities=observed.alice_intensities,
        bob_intensities=observed.bob_intensities,
        low={tag: values.copy() for tag, values in observed.bit_yields.items()},
        high={tag: values.copy() for tag, values in observed.bit_yields.items()},
    )


def apply_finite_size(observed: ObservedStatistics, pulses: float, sigmas: Optional[float] = None) -> IntervalObservation:
    """
    Widen every per-bit observed probability q to q -+ k*sqrt(q(1-q)/N), clipped to [0, 1].

    Args:
        observed: Point observations.
        pulses: Pulse pairs N per (intensity pair, basis combination) setting.
        sigmas: Number of standard deviations k; defaults to the configured value.

    Returns:
        IntervalObservation: Widened observations; correlator sums are formed from the
        widened components by the observation itself.
    """
    if pulses <= 0:
        raise UsageError(f"Pulse count N must be positive, got {pulses}")
    sigmas = sigmas if sigmas is not None else get_settings().fluctuation_sigmas
    low, high = {}, {}
    zero_width = 0
    for tag, q in observed.bit_yields.items():
        if np.isinf(pulses):
            half_width = np.zeros_like(q)
        else:
            half_width = sigmas * np.sqrt(q * (1.0 - q) / pulses)
        low[tag] = np.maximum(q - half_width, 0.0)
        high[tag] = np.minimum(q + half_width, 1.0)
        zero_width += int(np.count_nonzero(q == 0.0))
    if zero_width and not np.isinf(pulses):
        logger.warning(f"{zero_width} observed probabilities are exactly 0; their finite-size intervals have zero width")
    return IntervalObservation(
        alice_intensities=observed.alice_intensities,
        bob_intensities=observed.bob_intensities,
        low=low,
        high=high,
        pulses=float(pulses),
        zero_width_count=zero_width,
    )


def _require_intensities(observed: Observation):
    for party, intensities in (("Alice", observed.alice_intensities), ("Bob", observed.bob_intensities)):
        if len(set(intensities)) < MIN_INTENSITIES_PER_SIDE:
            raise ConfigurationError(
                f"{party} needs at least {MIN_INTENSITIES_PER_SIDE} distinct intensities for decoy estimation, got {list(intensities)}",
                key="decoys",
            )


def _photon_pair_weights(observed: Observation, policy: TruncationPolicy) -> np.ndarray:
    """P_m(mu_k) P_n(nu_l) with shape (K, L, M+1, M+1)."""
    alice = np.array([poisson_pmf_vector(mu, policy.cutoff) for mu in observed.alice_intensities])
    bob = np.array([poisson_pmf_vector(nu, policy.cutoff) for nu in observed.bob_intensities])
    return np.einsum("km,ln->klmn", alice, bob)


def _weights_and_tails(observed: Observation, policy: TruncationPolicy) -> Tuple[np.ndarray, np.ndarray]:
    """Photon-pair weights with negligible entries zeroed, and tails that absorb their mass."""
    weights = _photon_pair_weights(observed, policy)
    negligible = weights < NEGLIGIBLE_WEIGHT
    pruned = np.where(negligible, weights, 0.0).sum(axis=(2, 3))
    weights = np.where(negligible, 0.0, weights)
    return weights, policy.tails(observed.alice_intensities, observed.bob_intensities) + pruned


def _variable_scale(highs) -> float:
    scale = max(float(np.max(high)) for high in highs)
    return scale if scale > 0.0 else 1.0


def _implied_upper(matrix: np.ndarray, ceilings: np.ndarray, default: float) -> np.ndarray:
    """Upper bounds implied by rows with non-negative coefficients over non-negative variables."""
    upper = np.full(matrix.shape[1], default)
    for row, ceiling in zip(matrix, ceilings):
        positive = row > 0.0
        if np.any(row < 0.0) or not positive.any():
            continue
        upper[positive] = np.minimum(upper[positive], ceiling / row[positive])
    return upper


class _RowCollector:
    """Accumulates two-sided range rows lo <= row.x <= hi, dropping sides that are implied."""

    def __init__(self):
        self.rows: List[np.ndarray] = []
        self.relations: List[Relation] = []
        self.rhs: List[float] = []
        self.names: List[str] = []

    def add_range(self, name: str, row: np.ndarray, low: float, high: float, nonnegative_row: bool):
        self.rows.append(row)
        self.relations.append(Relation.LE)
        self.rhs.append(high)
        self.names.append(f"{name}_hi")
        if low > 0.0 or not nonnegative_row:
            self.rows.append(row)
            self.relations.append(Relation.GE)
            self.rhs.append(low)
            self.names.append(f"{name}_lo")

    def program(self, objective, upper, direction, scale, variable_names) -> LinearProgram:
        n = len(objective)
        return LinearProgram(
            num_vars=n,
            lower=np.zeros(n),
            upper=upper,
            matrix=np.array(self.rows) if self.rows else np.zeros((0, n)),
            relations=tuple(self.relations),
            rhs=np.array(self.rhs),
            objective=np.asarray(objective, dtype=float),
            direction=direction,
            variable_scale=scale,
            variable_names=tuple(variable_names),
            constraint_names=tuple(self.names),
        )


def _single_quantity_lp(
    observed: Observation,
    policy: TruncationPolicy,
    interval: Tuple[np.ndarray, np.ndarray],
    target: Tuple[int, int],
    direction: Direction,
    label: str,
) -> LinearProgram:
    """Gain-shaped program: q_kl - tail_kl <= sum_mn P_mn X_mn <= q_kl over X_mn in [0, 1]."""
    _require_intensities(observed)
    size = policy.size
    weights, tails = _weights_and_tails(observed, policy)
    low, high = interval
    scale = _variable_scale([high])
    rows = _RowCollector()
    for k, l in product(range(weights.shape[0]), range(weights.shape[1])):
        rows.add_range(f"{label}_{k}_{l}", weights[k, l].ravel(), (low[k, l] - tails[k, l]) / scale, high[k, l] / scale, True)
    objective = np.zeros(size * size)
    objective[target[0] * size + target[1]] = 1.0
    ceilings = np.array([value for value, relation in zip(rows.rhs, rows.relations) if relation is Relation.LE])
    upper_rows = np.array([row for row, relation in zip(rows.rows, rows.relations) if relation is Relation.LE])
    upper = _implied_upper(upper_rows, ceilings, 1.0 / scale)
    names = [f"{label}_{m}_{n}" for m, n in product(range(size), range(size))]
    return rows.program(objective, upper, direction, scale, names)


def build_yield_lp(
    observed: Observation,
    policy: TruncationPolicy,
    tag: BasisTag = BasisTag.ZZ,
    target: Tuple[int, int] = (1, 1),
    direction: Direction = Direction.MINIMIZE,
) -> LinearProgram:
    """
    Linear program bounding the yield Y_mn of a basis combination from its gains.

    Raises:
        ConfigurationError: If either party has fewer than three distinct intensities.
    """
    intervals = as_interval_observation(observed)
    return _single_quantity_lp(intervals, policy, intervals.gain_interval(tag), target, direction, f"Y{tag.value}")


def build_error_yield_lp(observed: Observation, policy: TruncationPolicy, tag: BasisTag = BasisTag.XX) -> LinearProgram:
    """Program maximizing the single-photon error yield Y11*e11 from the error-weighted gains."""
    intervals = as_interval_observation(observed)
    return _single_quantity_lp(intervals, policy, intervals.error_gain_interval(tag), (1, 1), Direction.MAXIMIZE, f"W{tag.value}")


def chsh_variable_index(policy: TruncationPolicy, m: int, n: int, i: int, j: int) -> int:
    return (m * policy.size + n) * 4 + 2 * i + j


def build_chsh_lp(
    observed: Observation,
    policy: TruncationPolicy,
    tag: BasisTag,
    target: RatioTarget,
    direction: Direction,
) -> LinearProgram:
    """
    Linear program bounding the numerator or denominator of C11^w.

    Variables are Y_mn^{ij,w} in [0, 1]. Per intensity pair the truncated yield-sum relation holds with
    slack in [0, 4*tail] and the truncated correlator relation with slack in [-2*tail, 2*tail].
    """
    if tag not in BasisTag.chsh_terms():
        raise UsageError(f"{tag.value} is not a CHSH basis combination")
    intervals = as_interval_observation(observed)
    _require_intensities(intervals)
    size = policy.size
    weights, tails = _weights_and_tails(intervals, policy)
    yield_low, yield_high = intervals.yield_sum_interval(tag)
    corr_low, corr_high = intervals.corr_sum_interval(tag)
    scale = _variable_scale([yield_high])

    signs = CORRELATOR_SIGNS.ravel()
    rows = _RowCollector()
    for k, l in product(range(weights.shape[0]), range(weights.shape[1])):
        pair = weights[k, l].ravel()
        total_row = np.repeat(pair, 4)
        corr_row = np.kron(pair, signs)
        tail = tails[k, l]
        rows.add_range(f"yield_{k}_{l}", total_row, (yield_low[k, l] - 4.0 * tail) / scale, yield_high[k, l] / scale, True)
        rows.add_range(f"corr_{k}_{l}", corr_row, (corr_low[k, l] - 2.0 * tail) / scale, (corr_high[k, l] + 2.0 * tail) / scale, False)

    objective = np.zeros(4 * size * size)
    for i, j in product((0, 1), (0, 1)):
        index = chsh_variable_index(policy, 1, 1, i, j)
        objective[index] = CORRELATOR_SIGNS[i, j] if target is RatioTarget.NUMERATOR else 1.0
    total_rows = np.array([row for row, relation, name in zip(rows.rows, rows.relations, rows.names) if name.startswith("yield") and relation is Relation.LE])
    ceilings = np.array([value for value, relation, name in zip(rows.rhs, rows.relations, rows.names) if name.startswith("yield") and relation is Relation.LE])
    upper = _implied_upper(total_rows, ceilings, 1.0 / scale)
    names = [f"Y{tag.value}_{m}_{n}_{i}{j}" for m, n, i, j in product(range(size), range(size), (0, 1), (0, 1))]
    return rows.program(objective, upper, direction, scale, names)


def _solve_scaled(problem: LinearProgram, name: str, diagnostics: List[LpDiagnostic]) -> Optional[float]:
    solution = solve(problem)
    value = solution.value * problem.variable_scale if solution.optimal else None
    diagnostics.append(LpDiagnostic(name=name, status=solution.status, value=value, iterations=solution.iterations))
    if not solution.optimal:
        logger.warning(f"LP '{name}' ended {solution.status.value}; using the trivial bound")
    return value


def bound_chsh_term(
    tag: BasisTag,
    numerator: Tuple[float, float],
    denominator: Tuple[float, float],
    side: BoundSide,
    epsilon: Optional[float] = None,
) -> ChshTermBound:
    """
    Sign-aware interval division bounding C11^w = numerator / denominator on one side.

    Raises:
        BoundInconsistencyError: If the denominator interval is negative or either interval is reversed.
    """
    epsilon = epsilon if epsilon is not None else get_settings().denominator_epsilon
    num_low, num_high = numerator
    den_low, den_high = denominator
    if den_low < 0.0:
        raise BoundInconsistencyError(f"Denominator bound of C11^{tag.value} is negative: {denominator}")
    if num_low > num_high or den_low > den_high:
        raise BoundInconsistencyError(f"Reversed interval for C11^{tag.value}: num {numerator}, den {denominator}")
    trivial = den_low <= epsilon
    if trivial:
        ratio = 1.0 if side is BoundSide.UPPER else -1.0
    elif side is BoundSide.UPPER:
        ratio = num_high / (den_low if num_high >= 0.0 else den_high)
    else:
        ratio = num_low / (den_high if num_low >= 0.0 else den_low)
    ratio = float(min(max(ratio, -1.0), 1.0))
    return ChshTermBound(tag=tag, side=side, numerator=(num_low, num_high), denominator=(den_low, den_high), ratio=ratio, trivial=trivial)


def required_side(tag: BasisTag) -> BoundSide:
    """C11^QT enters g11 with a minus sign and needs an upper bound; the others need lower bounds."""
    return BoundSide.UPPER if tag is BasisTag.QT else BoundSide.LOWER


def lower_bound_g11(terms: Mapping[BasisTag, ChshTermBound]) -> float:
    """
    g11 >= C^QS_low + C^RS_low + C^RT_low - C^QT_high.

    Raises:
        UsageError: If a term is missing or carries a bound on the wrong side.
    """
    for tag in BasisTag.chsh_terms():
        if tag not in terms:
            raise UsageError(f"Missing CHSH term {tag.value}")
        if terms[tag].side is not required_side(tag):
            raise UsageError(f"C11^{tag.value} needs a {required_side(tag).value} bound, got {terms[tag].side.value}")
    value = terms[BasisTag.QS].ratio + terms[BasisTag.RS].ratio + terms[BasisTag.RT].ratio - terms[BasisTag.QT].ratio
    return float(min(max(value, -4.0), 4.0))


def estimate_chsh_term(observed: Observation, policy: TruncationPolicy, tag: BasisTag, diagnostics: List[LpDiagnostic]) -> ChshTermBound:
    """Four programs (numerator and denominator, both directions) and the ratio bound they imply."""
    results: Dict[Tuple[RatioTarget, Direction], Optional[float]] = {}
    for target, direction in product(RatioTarget, Direction):
        problem = build_chsh_lp(observed, policy, tag, target, direction)
        results[target, direction] = _solve_scaled(problem, f"{tag.value}_{target.value}_{direction.value[:3]}", diagnostics)

    def interval(target: RatioTarget, trivial: Tuple[float, float]) -> Tuple[float, float]:
        low = results[target, Direction.MINIMIZE]
        high = results[target, Direction.MAXIMIZE]
        if low is None or high is None:
            return trivial
        return low, high

    numerator = interval(RatioTarget.NUMERATOR, TRIVIAL_NUMERATOR)
    den_low, den_high = interval(RatioTarget.DENOMINATOR, TRIVIAL_DENOMINATOR)
    # round-off below zero
    den_low = max(den_low, 0.0)
    den_high = max(den_high, den_low)
    num_low, num_high = numerator
    return bound_chsh_term(tag, (num_low, max(num_high, num_low)), (den_low, den_high), required_side(tag))


def estimate_y11(observed: Observation, policy: TruncationPolicy, diagnostics: List[LpDiagnostic], tag: BasisTag = BasisTag.ZZ) -> float:
    value = _solve_scaled(build_yield_lp(observed, policy, tag), f"Y11_{tag.value}_min", diagnostics)
    return 0.0 if value is None else float(min(max(value, 0.0), 1.0))


def estimate_e11_upper(observed: Observation, policy: TruncationPolicy, diagnostics: List[LpDiagnostic], tag: BasisTag = BasisTag.XX) -> float:
    """Upper bound on the single-photon error rate: max(Y11 e11) / min(Y11), capped at 0.5."""
    y11 = estimate_y11(observed, policy, diagnostics, tag)
    error_yield = _solve_scaled(build_error_yield_lp(observed, policy, tag), f"W11_{tag.value}_max", diagnostics)
    if error_yield is None or y11 <= get_settings().denominator_epsilon:
        return 0.5
    return float(min(max(error_yield / y11, 0.0), 0.5))


def compute_bounds(observed: Observation, policy: Optional[TruncationPolicy] = None) -> BoundReport:
    """
    Lower bounds on Y11^ZZ and g11 from point or interval observations.

    Raises:
        ConfigurationError: If either party has fewer than three distinct intensities.
    """
    policy = policy or TruncationPolicy(cutoff=get_settings().default_cutoff)
    _require_intensities(observed)
    diagnostics: List[LpDiagnostic] = []
    y11_lower = estimate_y11(observed, policy, diagnostics)
    terms = {tag: estimate_chsh_term(observed, policy, tag, diagnostics) for tag in BasisTag.chsh_terms()}
    g11_lower = lower_bound_g11(terms)
    failed = [d.name for d in diagnostics if d.status is not LpStatus.OPTIMAL]
    if failed:
        logger.warning(f"Bounds used trivial fallbacks for {failed}")
    pulses = observed.pulses if isinstance(observed, IntervalObservation) else None
    logger.debug(f"Bounds: Y11>={y11_lower:.6e} g11>={g11_lower:.6f}")
    return BoundReport(y11_lower=y11_lower, g11_lower=g11_lower, terms=terms, diagnostics=tuple(diagnostics), pulses=pulses)
