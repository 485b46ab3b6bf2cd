from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.dependencies import get_settings
from app.models.protocol_model import ProtocolTag
from app.schemas.protocol_schemas import IntensitySet, ProtocolConfig, SystemParams
from app.utils.exceptions import ConfigurationError

Range = Tuple[float, float, float]

PROTOCOLS = {
    "chsh-mdi": ProtocolTag.CHSH_MDI,
    "mdi": ProtocolTag.MDI,
    "chsh-mdi-infinite": ProtocolTag.CHSH_MDI_INFINITE,
    "mdi-infinite": ProtocolTag.MDI_INFINITE,
}

MANDATORY_KEYS = ("protocol", "decoys", "dark_count", "det_efficiency", "fiber_loss_db_km", "f", "distances", "out")
OPTIONAL_KEYS = ("signal_grid", "N", "cutoff", "phase_nodes")
RUN_KEYS = MANDATORY_KEYS + OPTIONAL_KEYS

# Decoys per party needed by the linear programs; the signal is the third intensity.
MIN_DECOYS = 2


class RunConfig(BaseModel):
    """One batch run: protocol, intensities, link parameters, scan range and output path."""
    model_config = ConfigDict(frozen=True)

    protocol: Literal["chsh-mdi", "mdi", "chsh-mdi-infinite", "mdi-infinite"]
    decoys: Tuple[float, ...] = Field(..., description="Decoy intensities shared by Alice and Bob")
    signal_grid: Range = Field(default=(0.01, 1.0, 0.01), description="min, max, step of the signal search")
    dark_count: float = Field(..., ge=0.0, lt=1.0)
    det_efficiency: float = Field(..., gt=0.0, le=1.0)
    fiber_loss_db_km: float = Field(..., ge=0.0)
    f: float
    distances: Range = Field(..., description="start, stop, step in km; stop inclusive")
    N: Optional[float] = Field(default=None, gt=0.0, description="Pulse pairs per setting; absent for asymptotic runs")
    cutoff: int = Field(default=7, ge=2)
    phase_nodes: int = Field(default=64, ge=16)
    out: str = Field(..., min_length=1)

    @field_validator("decoys")
    @classmethod
    def check_decoys(cls, decoys):
        if any(mu < 0.0 for mu in decoys):
            raise ValueError(f"intensities must be non-negative, got {list(decoys)}")
        for low, high in zip(decoys, decoys[1:]):
            if not high > low:
                raise ValueError(f"decoy intensities are not strictly increasing: {list(decoys)}")
        return decoys

    @field_validator("f")
    @classmethod
    def check_f(cls, f):
        if f < 1.0:
            raise ValueError(f"reconciliation efficiency must be at least 1, got {f}")
        return f

    @field_validator("phase_nodes")
    @classmethod
    def check_even(cls, nodes):
        if nodes % 2:
            raise ValueError(f"phase_nodes must be even, got {nodes}")
        return nodes

    @field_validator("distances")
    @classmethod
    def check_distances(cls, distances):
        start, stop, step = distances
        if start < 0.0 or step <= 0.0:
            raise ValueError(f"distances need start >= 0 and step > 0, got {start}:{stop}:{step}")
        if not stop > start:
            raise ValueError(f"empty distance range {start}:{stop}:{step}")
        return distances

    @field_validator("signal_grid")
    @classmethod
    def check_signal_grid(cls, grid):
        low, high, step = grid
        if low <= 0.0 or step <= 0.0 or high < low:
            raise ValueError(f"signal grid needs 0 < min <= max and step > 0, got {low}:{high}:{step}")
        cap = get_settings().signal_grid_cap
        if high > cap + 1e-12:
            raise ValueError(f"signal grid maximum {high} exceeds the cap {cap}")
        return grid

    @model_validator(mode="after")
    def check_protocol_requirements(self):
        tag = PROTOCOLS[self.protocol]
        if not tag.is_oracle and len(self.decoys) < MIN_DECOYS:
            raise ConfigurationError(
                f"protocol {self.protocol} needs at least {MIN_DECOYS} decoy intensities per party, got {list(self.decoys)}",
                key="decoys",
            )
        if tag.is_oracle and self.N is not None:
            raise ConfigurationError(f"protocol {self.protocol} takes no pulse count", key="N")
        if self.decoys and self.signal_grid[1] <= self.decoys[-1]:
            raise ConfigurationError(
                f"signal grid maximum {self.signal_grid[1]} does not exceed the largest decoy {self.decoys[-1]}",
                key="signal_grid",
            )
        return self

    def protocol_tag(self) -> ProtocolTag:
        return PROTOCOLS[self.protocol]

    def distance_values(self) -> Tuple[float, ...]:
        start, stop, step = self.distances
        count = int((stop - start) / step + 1e-9) + 1
        return tuple(round(start + k * step, 9) for k in range(count))

    def signal_values(self) -> Tuple[float, ...]:
        low, high, step = self.signal_grid
        count = int((high - low) / step + 1e-9) + 1
        return tuple(round(low + k * step, 12) for k in range(count))

    def system_params(self, distance: float = 0.0) -> SystemParams:
        return SystemParams(
            dark_count=self.dark_count,
            det_efficiency=self.det_efficiency,
            fiber_loss=self.fiber_loss_db_km,
            recon_efficiency=self.f,
            distance=distance,
        )

    def protocol_config(self, signal: Optional[float] = None, distance: float = 0.0) -> ProtocolConfig:
        """ProtocolConfig at a signal intensity; defaults to the largest grid point."""
        signal = signal if signal is not None else self.signal_values()[-1]
        intensities = IntensitySet(decoys=self.decoys if not self.protocol_tag().is_oracle else (), signal=signal)
        return ProtocolConfig(alice=intensities, bob=intensities, system=self.system_params(distance), phase_nodes=self.phase_nodes)
