from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.protocol_model import BasisTag
from app.schemas.protocol_schemas import SystemParams
from app.utils.statistics import CORRELATOR_SIGNS


class PolarizationAmplitude(BaseModel):
    """Single-photon polarization state h|H> + v|V>."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    h: complex
    v: complex

    @field_validator("h", "v", mode="before")
    @classmethod
    def to_complex(cls, value):
        return complex(value)

    @property
    def norm_squared(self) -> float:
        return abs(self.h) ** 2 + abs(self.v) ** 2

    def as_array(self) -> np.ndarray:
        return np.array([self.h, self.v], dtype=complex)

    def key(self) -> Tuple[complex, complex]:
        return (self.h, self.v)


class DetectionModel(BaseModel):
    """Dark counts and per-arm transmittance (detector efficiency included)."""
    model_config = ConfigDict(frozen=True)

    dark_count: float = Field(..., ge=0.0, le=1.0)
    transmittance_alice: float = Field(..., ge=0.0, le=1.0)
    transmittance_bob: float = Field(..., ge=0.0, le=1.0)

    @classmethod
    def from_system(cls, system: SystemParams) -> "DetectionModel":
        transmittance = system.arm_transmittance()
        return cls(dark_count=system.dark_count, transmittance_alice=transmittance, transmittance_bob=transmittance)


class SettingStatistics(BaseModel):
    model_config = ConfigDict(frozen=True)

    psi_minus_prob: float = Field(..., ge=0.0, le=1.0)
    psi_plus_prob: Optional[float] = Field(default=None, ge=0.0, le=1.0)


def _correlator(bit_yields: np.ndarray):
    """Sum and a_ij-weighted sum over the trailing (2, 2) bit axes."""
    total = bit_yields.sum(axis=(-2, -1))
    weighted = (bit_yields * CORRELATOR_SIGNS).sum(axis=(-2, -1))
    return weighted, total


class FockYieldTable(BaseModel):
    """
    Exact psi-minus yields for Fock-state inputs.

    ``yields[tag][m, n, i, j]`` is the yield of eigenstates (i, j) when Alice sends m
    and Bob sends n photons in the basis combination ``tag``.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    cutoff: int = Field(..., ge=1)
    yields: Dict[BasisTag, np.ndarray]

    def yield_zz(self) -> np.ndarray:
        """Y_mn^{ZZ} = 1/4 sum_ij Y_mn^{ij,ZZ}."""
        return self.yields[BasisTag.ZZ].sum(axis=(2, 3)) / 4.0

    def correlator_defined(self, tag: BasisTag) -> np.ndarray:
        return self.yields[tag].sum(axis=(2, 3)) > 0.0

    def correlator(self, tag: BasisTag) -> np.ndarray:
        """C_mn^w, stored as 0 where the denominator vanishes."""
        weighted, total = _correlator(self.yields[tag])
        safe = np.where(total > 0.0, total, 1.0)
        return np.where(total > 0.0, weighted / safe, 0.0)

    def error_rate(self, tag: BasisTag) -> np.ndarray:
        """Fraction of equal raw bits (errors after the bit flip), 0.5 where undefined."""
        bits = self.yields[tag]
        total = bits.sum(axis=(2, 3))
        equal = bits[..., 0, 0] + bits[..., 1, 1]
        safe = np.where(total > 0.0, total, 1.0)
        return np.where(total > 0.0, equal / safe, 0.5)

    @property
    def y11_zz(self) -> float:
        return float(self.yield_zz()[1, 1])

    @property
    def g11(self) -> float:
        c = {tag: float(self.correlator(tag)[1, 1]) for tag in BasisTag.chsh_terms()}
        return c[BasisTag.QS] + c[BasisTag.RS] + c[BasisTag.RT] - c[BasisTag.QT]

    @property
    def y11_xx(self) -> float:
        return float(self.yields[BasisTag.XX][1, 1].sum() / 4.0)

    @property
    def e11_xx(self) -> float:
        return float(self.error_rate(BasisTag.XX)[1, 1])


class ObservedStatistics(BaseModel):
    """
    psi-minus probabilities Alice and Bob would observe, per intensity pair and basis combination.

    ``bit_yields[tag][k, l, i, j]`` is the yield for Alice's intensity k, Bob's intensity l
    and eigenstates (i, j).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alice_intensities: Tuple[float, ...]
    bob_intensities: Tuple[float, ...]
    bit_yields: Dict[BasisTag, np.ndarray]

    def yield_sum(self, tag: BasisTag) -> np.ndarray:
        return self.bit_yields[tag].sum(axis=(2, 3))

    def corr_sum(self, tag: BasisTag) -> np.ndarray:
        return _correlator(self.bit_yields[tag])[0]

    def gain(self, tag: BasisTag) -> np.ndarray:
        return self.yield_sum(tag) / 4.0

    def degenerate(self, tag: BasisTag) -> np.ndarray:
        """Intensity pairs without any coincidence probability."""
        return self.yield_sum(tag) <= 0.0

    def error(self, tag: BasisTag) -> np.ndarray:
        """Error rate after the bit flip; 0.5 where the statistics are degenerate."""
        bits = self.bit_yields[tag]
        total = bits.sum(axis=(2, 3))
        equal = bits[..., 0, 0] + bits[..., 1, 1]
        safe = np.where(total > 0.0, total, 1.0)
        return np.where(total > 0.0, equal / safe, 0.5)

    @property
    def gain_zz(self) -> np.ndarray:
        return self.gain(BasisTag.ZZ)

    @property
    def error_zz(self) -> np.ndarray:
        return self.error(BasisTag.ZZ)

    @property
    def signal_index(self) -> Tuple[int, int]:
        """Index of the (mu_s, nu_s) pair."""
        return len(self.alice_intensities) - 1, len(self.bob_intensities) - 1
