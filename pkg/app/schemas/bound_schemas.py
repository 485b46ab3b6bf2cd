import math
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.protocol_model import BasisTag, BoundSide, LpStatus
from app.schemas.optics_schemas import ObservedStatistics
from app.utils.statistics import CORRELATOR_SIGNS, poisson_tail

TSIRELSON = 2.0 * math.sqrt(2.0)

_POSITIVE = CORRELATOR_SIGNS > 0


class TruncationPolicy(BaseModel):
    """Photon-number cutoff of the decoy linear programs and the slack it implies."""
    model_config = ConfigDict(frozen=True)

    cutoff: int = Field(default=7, ge=2, description="Largest photon number M kept per side")

    @property
    def size(self) -> int:
        return self.cutoff + 1

    def tails(self, alice: Tuple[float, ...], bob: Tuple[float, ...]) -> np.ndarray:
        """poisson_tail(mu_k, nu_l, M) per intensity pair."""
        return np.array([[poisson_tail(mu, nu, self.cutoff) for nu in bob] for mu in alice])


class IntervalObservation(BaseModel):
    """
    Observed per-bit psi-minus yields widened to intervals.

    Point observations are the special case ``low == high``.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alice_intensities: Tuple[float, ...]
    bob_intensities: Tuple[float, ...]
    low: Dict[BasisTag, np.ndarray]
    high: Dict[BasisTag, np.ndarray]
    pulses: Optional[float] = Field(default=None, description="Pulse pairs per setting; None for the asymptotic case")
    zero_width_count: int = Field(default=0, description="Observations at q = 0 whose interval has zero width")

    @property
    def tags(self) -> Tuple[BasisTag, ...]:
        return tuple(self.low)

    def yield_sum_interval(self, tag: BasisTag) -> Tuple[np.ndarray, np.ndarray]:
        return self.low[tag].sum(axis=(2, 3)), self.high[tag].sum(axis=(2, 3))

    def corr_sum_interval(self, tag: BasisTag) -> Tuple[np.ndarray, np.ndarray]:
        """Component-wise: positive terms at their extremes minus negative terms at the opposite extremes."""
        low, high = self.low[tag], self.high[tag]
        positive_low = (low * _POSITIVE).sum(axis=(2, 3))
        positive_high = (high * _POSITIVE).sum(axis=(2, 3))
        negative_low = (low * ~_POSITIVE).sum(axis=(2, 3))
        negative_high = (high * ~_POSITIVE).sum(axis=(2, 3))
        return positive_low - negative_high, positive_high - negative_low

    def gain_interval(self, tag: BasisTag) -> Tuple[np.ndarray, np.ndarray]:
        low, high = self.yield_sum_interval(tag)
        return low / 4.0, high / 4.0

    def error_gain_interval(self, tag: BasisTag) -> Tuple[np.ndarray, np.ndarray]:
        """Gain of events whose raw bits agree (errors after the bit flip)."""
        low, high = self.low[tag], self.high[tag]
        return (low[..., 0, 0] + low[..., 1, 1]) / 4.0, (high[..., 0, 0] + high[..., 1, 1]) / 4.0

    def contains(self, observed: ObservedStatistics, tolerance: float = 0.0) -> bool:
        return all(
            np.all(self.low[tag] <= observed.bit_yields[tag] + tolerance)
            and np.all(observed.bit_yields[tag] <= self.high[tag] + tolerance)
            for tag in self.low
        )


class ChshTermBound(BaseModel):
    model_config = ConfigDict(frozen=True)

    tag: BasisTag
    side: BoundSide
    numerator: Tuple[float, float] = Field(..., description="Bound on sum_ij a_ij Y11^{ij,w}")
    denominator: Tuple[float, float] = Field(..., description="Bound on sum_ij Y11^{ij,w}")
    ratio: float = Field(..., ge=-1.0, le=1.0, description="Bound on C11^w on the requested side")
    trivial: bool = Field(default=False, description="Denominator too small, ratio fell back to +-1")


class LpDiagnostic(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    status: LpStatus
    value: Optional[float] = None
    iterations: int = 0


class BoundReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    y11_lower: float = Field(..., ge=0.0, le=1.0)
    g11_lower: float = Field(..., ge=-4.0, le=4.0)
    terms: Dict[BasisTag, ChshTermBound]
    diagnostics: Tuple[LpDiagnostic, ...] = ()
    pulses: Optional[float] = None

    @property
    def all_optimal(self) -> bool:
        return all(d.status is LpStatus.OPTIMAL for d in self.diagnostics)

    @property
    def failed_lps(self) -> Tuple[str, ...]:
        """Names of the programs that fell back to a trivial bound."""
        return tuple(d.name for d in self.diagnostics if d.status is not LpStatus.OPTIMAL)

    @staticmethod
    def csv_header() -> str:
        return "y11_lower,g11_lower,c_qs_lower,c_rs_lower,c_rt_lower,c_qt_upper,N"

    def csv_row(self) -> str:
        ratios = [self.terms[tag].ratio for tag in BasisTag.chsh_terms()]
        values = [self.y11_lower, self.g11_lower, *ratios]
        pulses = "" if self.pulses is None else f"{self.pulses:.16e}"
        return ",".join(f"{value:.16e}" for value in values) + f",{pulses}"

    def diagnostic_text(self) -> str:
        lines = [f"Y11^ZZ lower bound : {self.y11_lower:.10e}", f"g11 lower bound    : {self.g11_lower:.10f}"]
        for tag in BasisTag.chsh_terms():
            term = self.terms[tag]
            lines.append(
                f"  C11^{tag.value} {term.side.value:<5} {term.ratio:+.8f}"
                f"  num [{term.numerator[0]:+.6e}, {term.numerator[1]:+.6e}]"
                f"  den [{term.denominator[0]:.6e}, {term.denominator[1]:.6e}]"
                + ("  (trivial)" if term.trivial else "")
            )
        lines.append("Linear programs:")
        for diagnostic in self.diagnostics:
            value = "-" if diagnostic.value is None else f"{diagnostic.value:.10e}"
            lines.append(f"  {diagnostic.name:<24} {diagnostic.status.value:<10} {value}  ({diagnostic.iterations} pivots)")
        return "\n".join(lines)
