from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.protocol_model import ProtocolTag


class KeyRatePoint(BaseModel):
    """One optimized point of a key-rate curve."""
    model_config = ConfigDict(frozen=True)

    distance: float = Field(..., ge=0.0, description="Alice-Bob distance in km")
    mu_s: float = Field(..., ge=0.0, description="Signal intensity, equal for both parties")
    y11_lower: float = Field(..., ge=0.0, le=1.0)
    g11_lower: Optional[float] = Field(default=None, ge=-4.0, le=4.0, description="None for the MDI baseline")
    gain: float = Field(..., ge=0.0, le=1.0, description="Q^ZZ at the signal pair")
    error: float = Field(..., ge=0.0, le=1.0, description="E^ZZ at the signal pair")
    rate: float = Field(..., ge=0.0, description="Secret bits per pulse pair, clamped at 0")
    raw_rate: Optional[float] = Field(default=None, description="Unclamped formula value")
    protocol: ProtocolTag
    pulses: Optional[float] = Field(default=None, gt=0.0, description="Pulse pairs per setting for finite-size runs")
    lp_failures: int = Field(default=0, ge=0, description="Decoy programs that fell back to a trivial bound, over the whole signal search")

    @model_validator(mode="after")
    def check_clamp(self):
        if self.raw_rate is not None and self.rate != max(self.raw_rate, 0.0):
            raise ValueError(f"rate {self.rate} must equal max(raw_rate, 0) = {max(self.raw_rate, 0.0)}")
        return self

    @property
    def secure(self) -> bool:
        return self.rate > 0.0


class ScanResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    points: Tuple[KeyRatePoint, ...]
    metadata: Dict[str, str] = Field(default_factory=dict)

    @field_validator("points")
    @classmethod
    def check_increasing(cls, points):
        for before, after in zip(points, points[1:]):
            if not after.distance > before.distance:
                raise ValueError(f"distances must be strictly increasing, got {before.distance} then {after.distance}")
        return points

    @property
    def secure_distance(self) -> Optional[float]:
        """Largest scanned distance with a positive rate."""
        secure = [point.distance for point in self.points if point.secure]
        return max(secure) if secure else None

    @property
    def peak(self) -> Optional[KeyRatePoint]:
        if not self.points:
            return None
        return max(self.points, key=lambda point: (point.rate, -point.distance))

    @property
    def lp_failures(self) -> int:
        return sum(point.lp_failures for point in self.points)

    def merged(self, extra: Tuple[KeyRatePoint, ...]) -> "ScanResult":
        """Add points at distances not yet present, keeping distance order."""
        known = {point.distance for point in self.points}
        points = sorted(list(self.points) + [p for p in extra if p.distance not in known], key=lambda p: p.distance)
        return ScanResult(points=tuple(points), metadata=self.metadata)


class MdiEstimate(BaseModel):
    """Single-photon estimates and rate of the decoy-state MDI baseline."""
    model_config = ConfigDict(frozen=True)

    y11_lower: float = Field(..., ge=0.0, le=1.0)
    e11_upper: float = Field(..., ge=0.0, le=0.5)
    raw_rate: float
    lp_failures: int = Field(default=0, ge=0)
