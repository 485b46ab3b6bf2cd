"""
Lossy channel plus untrusted psi-minus Bell-state measurement.

Mode order of the four threshold detectors is (D1H, D1V, D2H, D2V). Alice enters beam-splitter
port a, Bob port b, with a -> (c + d)/sqrt2 and b -> (c - d)/sqrt2; polarizing beam splitters
then separate H and V behind output ports c (detector 1) and d (detector 2).
"""
import logging
import math
from collections import defaultdict
from functools import lru_cache
from itertools import product
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.stats import binom

from app.models.protocol_model import BasisTag
from app.schemas.optics_schemas import (
    DetectionModel,
    FockYieldTable,
    ObservedStatistics,
    PolarizationAmplitude,
    SettingStatistics,
)
from app.schemas.protocol_schemas import BASIS_COMBINATIONS, BasisObservable, ProtocolConfig
from app.utils.exceptions import DomainError
from app.utils.statistics import poisson_pmf_vector, poisson_tail

logger = logging.getLogger(__name__)

D1H, D1V, D2H, D2V = range(4)
NUM_MODES = 4
NUM_MASKS = 1 << NUM_MODES

PSI_MINUS_PATTERNS = ((1 << D1H) | (1 << D2V), (1 << D1V) | (1 << D2H))
PSI_PLUS_PATTERNS = ((1 << D1H) | (1 << D1V), (1 << D2H) | (1 << D2V))

ALL_TAGS = (BasisTag.QS, BasisTag.RS, BasisTag.RT, BasisTag.QT, BasisTag.ZZ, BasisTag.XX)

_PHASE_TOLERANCE = 1e-12
_SQRT_HALF = math.sqrt(0.5)


def eigenstate_amplitudes(basis: BasisObservable, bit: int) -> PolarizationAmplitude:
    """
    Eigenvector of a real qubit observable, mapped |0> -> H and |1> -> V.

    Args:
        basis: Observable x*X + z*Z (y must vanish).
        bit: 0 selects the +1 eigenvector, 1 the -1 eigenvector.

    Returns:
        PolarizationAmplitude: Normalized vector whose first nonzero component is real-positive.

    Raises:
        DomainError: If the basis has a y component or the bit is not 0/1.
    """
    if bit not in (0, 1):
        raise DomainError(f"Bit must be 0 or 1, got {bit}")
    if abs(basis.bloch[1]) > _PHASE_TOLERANCE:
        raise DomainError(f"Basis must lie in the x-z plane, got {basis.bloch}")
    norm = math.sqrt(sum(c * c for c in basis.bloch))
    if abs(norm - 1.0) > 1e-12:
        raise DomainError(f"Basis must have unit norm, got {norm!r}")
    # eigh sorts eigenvalues ascending: column 1 is +1, column 0 is -1
    _, vectors = np.linalg.eigh(basis.matrix())
    vector = vectors[:, 1 - bit]
    for component in vector:
        if abs(component) > _PHASE_TOLERANCE:
            vector = vector * (abs(component) / component)
            break
    vector = vector / np.linalg.norm(vector)
    return PolarizationAmplitude(h=complex(vector[0]), v=complex(vector[1]))


def _click_weights(pattern: int, dark_count: float) -> np.ndarray:
    """
    Probability of exactly ``pattern`` clicking, for each set of occupied modes.

    Occupied modes click with certainty; empty modes click with the dark-count probability.
    """
    weights = np.zeros(NUM_MASKS)
    for mask in range(NUM_MASKS):
        if mask & ~pattern:
            continue
        weight = 1.0
        for mode in range(NUM_MODES):
            bit = 1 << mode
            if mask & bit:
                continue
            weight *= dark_count if pattern & bit else 1.0 - dark_count
        weights[mask] = weight
    return weights


def _pattern_probabilities(mask_probs: np.ndarray, dark_count: float) -> SettingStatistics:
    psi_minus = sum(float(mask_probs @ _click_weights(p, dark_count)) for p in PSI_MINUS_PATTERNS)
    psi_plus = sum(float(mask_probs @ _click_weights(p, dark_count)) for p in PSI_PLUS_PATTERNS)
    return SettingStatistics(psi_minus_prob=min(max(psi_minus, 0.0), 1.0), psi_plus_prob=min(max(psi_plus, 0.0), 1.0))


def _creation_forms(amps_a: PolarizationAmplitude, amps_b: PolarizationAmplitude):
    """Output-mode coefficients of Alice's and Bob's photon creation operators."""
    h_a, v_a = amps_a.h * _SQRT_HALF, amps_a.v * _SQRT_HALF
    h_b, v_b = amps_b.h * _SQRT_HALF, amps_b.v * _SQRT_HALF
    return (h_a, v_a, h_a, v_a), (h_b, v_b, -h_b, -v_b)


@lru_cache(maxsize=4096)
def _creation_power(form: Tuple[complex, ...], power: int) -> Dict[Tuple[int, ...], complex]:
    """Expansion of (sum_k form[k] c_k^dagger)^power as occupation -> coefficient."""
    if power == 0:
        return {(0,) * NUM_MODES: 1.0 + 0.0j}
    result: Dict[Tuple[int, ...], complex] = defaultdict(complex)
    for occupation, coefficient in _creation_power(form, power - 1).items():
        for mode, weight in enumerate(form):
            if weight == 0:
                continue
            raised = list(occupation)
            raised[mode] += 1
            result[tuple(raised)] += coefficient * weight
    return dict(result)


def lossless_occupation_distribution(
    m: int, n: int, amps_a: PolarizationAmplitude, amps_b: PolarizationAmplitude
) -> Dict[Tuple[int, int, int, int], float]:
    """
    Photon-number distribution over (n1H, n1V, n2H, n2V) for m and n photons entering losslessly.

    Expands (A^dagger)^m (B^dagger)^n / sqrt(m! n!) over the detector modes; the probability of an
    occupation k is |coefficient|^2 * prod(k!) / (m! n!).
    """
    if m < 0 or n < 0:
        raise DomainError(f"Photon numbers must be non-negative, got ({m}, {n})")
    form_a, form_b = _creation_forms(amps_a, amps_b)
    poly_a = _creation_power(form_a, m)
    poly_b = _creation_power(form_b, n)
    combined: Dict[Tuple[int, ...], complex] = defaultdict(complex)
    for occ_a, coef_a in poly_a.items():
        for occ_b, coef_b in poly_b.items():
            combined[tuple(x + y for x, y in zip(occ_a, occ_b))] += coef_a * coef_b
    norm = math.factorial(m) * math.factorial(n)
    distribution = {}
    for occupation, coefficient in combined.items():
        multiplicity = math.prod(math.factorial(k) for k in occupation)
        probability = abs(coefficient) ** 2 * multiplicity / norm
        if probability > 0.0:
            distribution[occupation] = probability
    return distribution


@lru_cache(maxsize=1024)
def _lossless_mask_array(key_a: Tuple[complex, complex], key_b: Tuple[complex, complex], max_m: int, max_n: int) -> np.ndarray:
    """Occupied-mode-set probabilities for every lossless (m', n') up to (max_m, max_n)."""
    amps_a = PolarizationAmplitude(h=key_a[0], v=key_a[1])
    amps_b = PolarizationAmplitude(h=key_b[0], v=key_b[1])
    masks = np.zeros((max_m + 1, max_n + 1, NUM_MASKS))
    for m, n in product(range(max_m + 1), range(max_n + 1)):
        for occupation, probability in lossless_occupation_distribution(m, n, amps_a, amps_b).items():
            mask = sum(1 << mode for mode, count in enumerate(occupation) if count)
            masks[m, n, mask] += probability
    return masks


def _thinning_matrix(max_photons: int, transmittance: float) -> np.ndarray:
    """B[m, m'] = probability that m' of m photons survive."""
    survivors = np.arange(max_photons + 1)
    return np.array([binom.pmf(survivors, m, transmittance) for m in range(max_photons + 1)])


def _lossy_mask_array(amps_a, amps_b, det: DetectionModel, max_m: int, max_n: int) -> np.ndarray:
    lossless = _lossless_mask_array(amps_a.key(), amps_b.key(), max_m, max_n)
    thin_a = _thinning_matrix(max_m, det.transmittance_alice)
    thin_b = _thinning_matrix(max_n, det.transmittance_bob)
    return np.einsum("ap,bq,pqk->abk", thin_a, thin_b, lossless)


def fock_setting_statistics(
    m: int, n: int, amps_a: PolarizationAmplitude, amps_b: PolarizationAmplitude, det: DetectionModel
) -> SettingStatistics:
    """
    Exact Bell-measurement statistics for Fock inputs of m and n photons.

    Loss thins each input binomially before interference; the surviving photons are propagated
    through the beam-splitter network and detected by threshold detectors with dark counts.
    """
    if m < 0 or n < 0:
        raise DomainError(f"Photon numbers must be non-negative, got ({m}, {n})")
    masks = _lossy_mask_array(amps_a, amps_b, det, m, n)[m, n]
    return _pattern_probabilities(masks, det.dark_count)


def _phase_nodes(quadrature_points: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(quadrature_points) / quadrature_points


def coherent_setting_statistics(
    amps_a: PolarizationAmplitude,
    amps_b: PolarizationAmplitude,
    mu: float,
    nu: float,
    det: DetectionModel,
    quadrature_points: int = 64,
) -> SettingStatistics:
    """
    Bell-measurement statistics for phase-randomized weak coherent inputs.

    Args:
        amps_a: Alice's polarization state.
        amps_b: Bob's polarization state.
        mu: Alice's intensity.
        nu: Bob's intensity.
        det: Dark counts and arm transmittances.
        quadrature_points: Nodes of the periodic trapezoid rule over the relative phase.

    Returns:
        SettingStatistics: psi-minus and psi-plus click-pattern probabilities.
    """
    if quadrature_points < 16 or quadrature_points % 2:
        raise DomainError(f"quadrature_points must be an even number >= 16, got {quadrature_points}")
    if mu < 0 or nu < 0:
        raise DomainError(f"Intensities must be non-negative, got ({mu}, {nu})")
    alpha = math.sqrt(mu * det.transmittance_alice) * amps_a.as_array()
    beta = math.sqrt(nu * det.transmittance_bob) * amps_b.as_array()
    rotated = np.exp(1j * _phase_nodes(quadrature_points))[:, None] * beta[None, :]
    # mean photon numbers per node: columns (1H, 1V, 2H, 2V)
    port_1 = np.abs(alpha[None, :] + rotated) ** 2 / 2.0
    port_2 = np.abs(alpha[None, :] - rotated) ** 2 / 2.0
    mean_photons = np.concatenate([port_1, port_2], axis=1)
    silent = (1.0 - det.dark_count) * np.exp(-mean_photons)
    click = 1.0 - silent

    def pattern(clicking) -> float:
        per_node = np.ones(quadrature_points)
        for mode in range(NUM_MODES):
            per_node = per_node * (click[:, mode] if mode in clicking else silent[:, mode])
        return float(per_node.mean())

    psi_minus = pattern((D1H, D2V)) + pattern((D1V, D2H))
    psi_plus = pattern((D1H, D1V)) + pattern((D2H, D2V))
    return SettingStatistics(psi_minus_prob=min(max(psi_minus, 0.0), 1.0), psi_plus_prob=min(max(psi_plus, 0.0), 1.0))


def setting_amplitudes(tag: BasisTag, i: int, j: int) -> Tuple[PolarizationAmplitude, PolarizationAmplitude]:
    combination = BASIS_COMBINATIONS[tag]
    return eigenstate_amplitudes(combination.alice_basis, i), eigenstate_amplitudes(combination.bob_basis, j)


def build_fock_yield_table(config: ProtocolConfig, cutoff: int, tags: Iterable[BasisTag] = ALL_TAGS) -> FockYieldTable:
    """
    Oracle yields Y_mn^{ij,w} for every m, n <= cutoff at the configuration's distance.

    Raises:
        DomainError: If cutoff < 1.
    """
    if cutoff < 1:
        raise DomainError(f"Fock table cutoff must be at least 1, got {cutoff}")
    det = DetectionModel.from_system(config.system)
    yields = {}
    for tag in tags:
        table = np.zeros((cutoff + 1, cutoff + 1, 2, 2))
        for i, j in product((0, 1), (0, 1)):
            amps_a, amps_b = setting_amplitudes(tag, i, j)
            masks = _lossy_mask_array(amps_a, amps_b, det, cutoff, cutoff)
            weights = sum(_click_weights(p, det.dark_count) for p in PSI_MINUS_PATTERNS)
            table[:, :, i, j] = np.clip(masks @ weights, 0.0, 1.0)
        yields[tag] = table
    fock_table = FockYieldTable(cutoff=cutoff, yields=yields)
    if BasisTag.ZZ in yields and all(tag in yields for tag in BasisTag.chsh_terms()):
        logger.debug(f"Fock table at {config.system.distance} km: Y11={fock_table.y11_zz:.6e} g11={fock_table.g11:.6f}")
    return fock_table


def observed_statistics(config: ProtocolConfig, tags: Iterable[BasisTag] = ALL_TAGS) -> ObservedStatistics:
    """
    Coherent-state psi-minus yields for every intensity pair, basis combination and bit pair.
    """
    det = DetectionModel.from_system(config.system)
    alice, bob = config.alice_intensities, config.bob_intensities
    bit_yields = {}
    for tag in tags:
        table = np.zeros((len(alice), len(bob), 2, 2))
        for i, j in product((0, 1), (0, 1)):
            amps_a, amps_b = setting_amplitudes(tag, i, j)
            for (k, mu), (l, nu) in product(enumerate(alice), enumerate(bob)):
                stats = coherent_setting_statistics(amps_a, amps_b, mu, nu, det, config.phase_nodes)
                table[k, l, i, j] = stats.psi_minus_prob
        bit_yields[tag] = table
    observed = ObservedStatistics(alice_intensities=alice, bob_intensities=bob, bit_yields=bit_yields)
    for tag in bit_yields:
        if observed.degenerate(tag).any():
            logger.warning(f"Degenerate statistics for {tag.value}: no coincidences at some intensity pairs, error set to 0.5")
    return observed


def poisson_mixture_residuals(config: ProtocolConfig, mixture_cutoff: int = 8, tags: Iterable[BasisTag] = ALL_TAGS) -> Dict[BasisTag, np.ndarray]:
    """
    |coherent - sum_{m,n <= M} P_m P_n Fock| per intensity pair, basis combination and bit pair.

    A correct channel model keeps every residual below poisson_tail(mu, nu, M) plus quadrature error.
    """
    det = DetectionModel.from_system(config.system)
    observed = observed_statistics(config, tags)
    alice, bob = config.alice_intensities, config.bob_intensities
    residuals = {}
    for tag in tags:
        residual = np.zeros((len(alice), len(bob), 2, 2))
        for i, j in product((0, 1), (0, 1)):
            amps_a, amps_b = setting_amplitudes(tag, i, j)
            masks = _lossy_mask_array(amps_a, amps_b, det, mixture_cutoff, mixture_cutoff)
            weights = sum(_click_weights(p, det.dark_count) for p in PSI_MINUS_PATTERNS)
            fock = masks @ weights
            for (k, mu), (l, nu) in product(enumerate(alice), enumerate(bob)):
                mixture = poisson_pmf_vector(mu, mixture_cutoff) @ fock @ poisson_pmf_vector(nu, mixture_cutoff)
                residual[k, l, i, j] = abs(observed.bit_yields[tag][k, l, i, j] - mixture)
        residuals[tag] = residual
    return residuals


def mixture_tolerances(config: ProtocolConfig, mixture_cutoff: int = 8, slack: float = 1e-8) -> np.ndarray:
    """poisson_tail(mu_k, nu_l, M) + slack for every intensity pair."""
    return np.array(
        [[poisson_tail(mu, nu, mixture_cutoff) + slack for nu in config.bob_intensities] for mu in config.alice_intensities]
    )


def dark_count_floor(det: DetectionModel) -> float:
    """psi-minus probability without photons: two disjoint patterns of two dark clicks."""
    p = det.dark_count
    return 2.0 * p * p * (1.0 - p) ** 2


def oracle_table(config: ProtocolConfig, cutoff: Optional[int] = None) -> FockYieldTable:
    """Single-photon oracle only, the cheapest table that answers Y11, g11 and e11."""
    return build_fock_yield_table(config, cutoff or 1)
