from enum import Enum


class BasisTag(Enum):
    """Basis combinations of Alice (first letter) and Bob (second letter)."""
    QS = "QS"
    RS = "RS"
    RT = "RT"
    QT = "QT"
    ZZ = "ZZ"
    XX = "XX"

    @classmethod
    def chsh_terms(cls) -> tuple["BasisTag", ...]:
        """The four combinations whose correlators compose the CHSH value."""
        return (cls.QS, cls.RS, cls.RT, cls.QT)


class ProtocolTag(Enum):
    """Key-rate protocol variants reported in scan output."""
    CHSH_MDI = "CHSH-MDI"
    CHSH_MDI_FINITE = "CHSH-MDI-finite"
    CHSH_MDI_INFINITE = "CHSH-MDI-infinite"
    MDI = "MDI"
    MDI_FINITE = "MDI-finite"
    MDI_INFINITE = "MDI-infinite"

    @property
    def is_chsh(self) -> bool:
        return self in (ProtocolTag.CHSH_MDI, ProtocolTag.CHSH_MDI_FINITE, ProtocolTag.CHSH_MDI_INFINITE)

    @property
    def is_oracle(self) -> bool:
        return self in (ProtocolTag.CHSH_MDI_INFINITE, ProtocolTag.MDI_INFINITE)

    @property
    def is_finite(self) -> bool:
        return self in (ProtocolTag.CHSH_MDI_FINITE, ProtocolTag.MDI_FINITE)


class Relation(Enum):
    EQ = "="
    LE = "<="
    GE = ">="


class Direction(Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class BoundSide(Enum):
    """Which side of a correlator ratio is being bounded."""
    LOWER = "lower"
    UPPER = "upper"


class RatioTarget(Enum):
    """Objective of a CHSH-term linear program."""
    NUMERATOR = "numerator"
    DENOMINATOR = "denominator"
