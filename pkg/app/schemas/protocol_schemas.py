import math
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, field_validator, model_validator
from typing_extensions import Annotated

from app.models.protocol_model import BasisTag

# Mean photon number per pulse; 0 is the vacuum decoy.
Intensity = Annotated[float, Field(ge=0.0)]

BLOCH_NORM_TOLERANCE = 1e-12


class IntensitySet(BaseModel):
    """Decoy intensities of one party followed by its signal intensity."""
    model_config = ConfigDict(frozen=True)

    decoys: Tuple[Intensity, ...] = Field(default=(), description="Strictly increasing decoy intensities")
    signal: Intensity = Field(..., description="Signal intensity")

    @field_validator("decoys")
    @classmethod
    def check_increasing(cls, decoys):
        for low, high in zip(decoys, decoys[1:]):
            if not high > low:
                raise ValueError(f"decoy intensities must be strictly increasing, got {list(decoys)}")
        return decoys

    @model_validator(mode="after")
    def check_signal_above_decoys(self):
        if self.decoys and not self.signal > self.decoys[-1]:
            raise ValueError(f"signal intensity {self.signal} must exceed every decoy intensity")
        return self

    @property
    def values(self) -> Tuple[float, ...]:
        """All intensities, decoys first and the signal last."""
        return tuple(self.decoys) + (self.signal,)

    def __len__(self) -> int:
        return len(self.decoys) + 1

    def with_signal(self, signal: float) -> "IntensitySet":
        return IntensitySet(decoys=self.decoys, signal=signal)


class BasisObservable(BaseModel):
    """A qubit observable x*X + y*Y + z*Z given by its Bloch vector."""
    model_config = ConfigDict(frozen=True)

    bloch: Tuple[float, float, float]

    @field_validator("bloch")
    @classmethod
    def check_unit_norm(cls, bloch):
        norm = math.sqrt(sum(component * component for component in bloch))
        if abs(norm - 1.0) > BLOCH_NORM_TOLERANCE:
            raise ValueError(f"Bloch vector must have unit norm, got norm {norm!r}")
        return bloch

    def matrix(self) -> np.ndarray:
        x, y, z = self.bloch
        return np.array([[z, x - 1j * y], [x + 1j * y, -z]], dtype=complex)

    def dot(self, other: "BasisObservable") -> float:
        return float(np.dot(self.bloch, other.bloch))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)

PAULI_Z = BasisObservable(bloch=(0.0, 0.0, 1.0))
PAULI_X = BasisObservable(bloch=(1.0, 0.0, 0.0))
# Bob's CHSH bases (-Z - X)/sqrt2 and (Z - X)/sqrt2
BASIS_S = BasisObservable(bloch=(-_INV_SQRT2, 0.0, -_INV_SQRT2))
BASIS_T = BasisObservable(bloch=(-_INV_SQRT2, 0.0, _INV_SQRT2))


class BasisCombination(BaseModel):
    model_config = ConfigDict(frozen=True)

    tag: BasisTag
    alice_basis: BasisObservable
    bob_basis: BasisObservable


BASIS_COMBINATIONS: Dict[BasisTag, BasisCombination] = {
    BasisTag.QS: BasisCombination(tag=BasisTag.QS, alice_basis=PAULI_Z, bob_basis=BASIS_S),
    BasisTag.RS: BasisCombination(tag=BasisTag.RS, alice_basis=PAULI_X, bob_basis=BASIS_S),
    BasisTag.RT: BasisCombination(tag=BasisTag.RT, alice_basis=PAULI_X, bob_basis=BASIS_T),
    BasisTag.QT: BasisCombination(tag=BasisTag.QT, alice_basis=PAULI_Z, bob_basis=BASIS_T),
    BasisTag.ZZ: BasisCombination(tag=BasisTag.ZZ, alice_basis=PAULI_Z, bob_basis=PAULI_Z),
    BasisTag.XX: BasisCombination(tag=BasisTag.XX, alice_basis=PAULI_X, bob_basis=PAULI_X),
}


class SystemParams(BaseModel):
    """Detector, fiber and post-processing parameters of a link."""
    model_config = ConfigDict(frozen=True)

    dark_count: float = Field(..., ge=0.0, lt=1.0, description="Dark count probability per detector per gate")
    det_efficiency: float = Field(..., gt=0.0, le=1.0, description="Single photon detector efficiency")
    fiber_loss: NonNegativeFloat = Field(..., description="Fiber loss in dB/km")
    recon_efficiency: float = Field(..., ge=1.0, description="Key reconciliation efficiency f")
    distance: NonNegativeFloat = Field(default=0.0, description="Alice-to-Bob distance in km, relay at the midpoint")

    def arm_transmittance(self) -> float:
        """Transmittance of one arm, detector efficiency included."""
        return self.det_efficiency * 10.0 ** (-self.fiber_loss * (self.distance / 2.0) / 10.0)


REFERENCE_SYSTEM = SystemParams(dark_count=6e-6, det_efficiency=0.145, fiber_loss=0.2, recon_efficiency=1.16)


class ProtocolConfig(BaseModel):
    """Everything a single evaluation of the protocol depends on."""
    model_config = ConfigDict(frozen=True)

    alice: IntensitySet
    bob: IntensitySet
    system: SystemParams
    phase_nodes: int = Field(default=64, ge=16, description="Trapezoid nodes of the relative-phase average")

    @field_validator("phase_nodes")
    @classmethod
    def check_even(cls, nodes):
        if nodes % 2:
            raise ValueError(f"phase_nodes must be even, got {nodes}")
        return nodes

    @property
    def alice_intensities(self) -> Tuple[float, ...]:
        return self.alice.values

    @property
    def bob_intensities(self) -> Tuple[float, ...]:
        return self.bob.values

    def with_signal(self, signal: float) -> "ProtocolConfig":
        """Copy with mu_s = nu_s = signal."""
        return self.model_copy(update={"alice": self.alice.with_signal(signal), "bob": self.bob.with_signal(signal)})

    def at_distance(self, distance: float) -> "ProtocolConfig":
        system = SystemParams(**{**self.system.model_dump(), "distance": distance})
        return self.model_copy(update={"system": system})


def symmetric_config(decoys, signal: float, system: SystemParams = REFERENCE_SYSTEM, phase_nodes: int = 64) -> ProtocolConfig:
    """Configuration with identical intensity sets for Alice and Bob."""
    intensities = IntensitySet(decoys=tuple(decoys), signal=signal)
    return ProtocolConfig(alice=intensities, bob=intensities, system=system, phase_nodes=phase_nodes)
