"""Photon-number statistics and information measures shared by every estimation step."""
import math
from typing import Tuple

import numpy as np
from scipy.special import gammainc, gammaln

from app.utils.exceptions import DomainError

# Photon numbers above this are evaluated in the log domain.
LOG_DOMAIN_THRESHOLD = 20

# a_ij of the CHSH correlator, indexed [i, j].
CORRELATOR_SIGNS = np.array([[1.0, -1.0], [-1.0, 1.0]])


def correlator_sign(i: int, j: int) -> int:
    """Return a_ij = (-1)^(i xor j) for bits i, j."""
    if i not in (0, 1) or j not in (0, 1):
        raise DomainError(f"Bits must be 0 or 1, got ({i}, {j})")
    return -1 if i ^ j else 1


def poisson_pmf(intensity: float, n: int) -> float:
    """
    Probability that a phase-randomized coherent pulse carries n photons.

    Args:
        intensity: Mean photon number of the pulse.
        n: Photon count.

    Returns:
        float: e^(-mu) mu^n / n!

    Raises:
        DomainError: If the intensity is negative or n is not a non-negative integer.
    """
    if intensity < 0:
        raise DomainError(f"Intensity must be non-negative, got {intensity}")
    if n < 0 or int(n) != n:
        raise DomainError(f"Photon count must be a non-negative integer, got {n}")
    n = int(n)
    if intensity == 0:
        return 1.0 if n == 0 else 0.0
    if n > LOG_DOMAIN_THRESHOLD:
        return float(np.exp(-intensity + n * np.log(intensity) - gammaln(n + 1)))
    return math.exp(-intensity) * intensity ** n / math.factorial(n)


def poisson_pmf_vector(intensity: float, cutoff: int) -> np.ndarray:
    """P_0(mu) .. P_cutoff(mu) as an array."""
    return np.array([poisson_pmf(intensity, n) for n in range(cutoff + 1)])


def poisson_sf(intensity: float, cutoff: int) -> float:
    """Probability of more than ``cutoff`` photons."""
    if intensity < 0:
        raise DomainError(f"Intensity must be non-negative, got {intensity}")
    if cutoff < 0:
        raise DomainError(f"Cutoff must be non-negative, got {cutoff}")
    if intensity == 0:
        return 0.0
    # P(X > M) equals the regularized lower incomplete gamma P(M + 1, mu).
    return float(gammainc(cutoff + 1, intensity))


def poisson_tail(intensity_a: float, intensity_b: float, cutoff: int) -> float:
    """
    Probability mass of photon-number pairs (m, n) with m > M or n > M.

    Args:
        intensity_a: Alice's mean photon number.
        intensity_b: Bob's mean photon number.
        cutoff: Largest photon number M kept per side.

    Returns:
        float: 1 - sum_{m,n <= M} P_m(mu_a) P_n(mu_b)
    """
    tail_a = poisson_sf(intensity_a, cutoff)
    tail_b = poisson_sf(intensity_b, cutoff)
    # 1 - (1 - a)(1 - b) without cancellation
    return tail_a + tail_b - tail_a * tail_b


def binary_entropy(x: float) -> float:
    """
    Shannon entropy of a binary variable in bits.

    Raises:
        DomainError: If x lies outside [0, 1].
    """
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"Binary entropy is defined on [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return float(-x * np.log2(x) - (1.0 - x) * np.log2(1.0 - x))


def fluctuation_interval(q: float, pulses: float, sigmas: float = 5.0) -> Tuple[float, float]:
    """
    Gaussian confidence interval of an observed probability.

    Args:
        q: Observed probability.
        pulses: Number of pulses N behind the observation.
        sigmas: Number of standard deviations.

    Returns:
        Tuple[float, float]: [max(0, q - k*sqrt(q(1-q)/N)), min(1, q + k*sqrt(q(1-q)/N))]
    """
    if pulses <= 0:
        raise DomainError(f"Pulse count must be positive, got {pulses}")
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"Observed probability must lie in [0, 1], got {q}")
    if math.isinf(pulses):
        return q, q
    half_width = sigmas * math.sqrt(q * (1.0 - q) / pulses)
    return max(0.0, q - half_width), min(1.0, q + half_width)
