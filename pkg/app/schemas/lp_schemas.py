from typing import Iterator, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.protocol_model import Direction, LpStatus, Relation


class LinearProgram(BaseModel):
    """
    Dense linear program with box-bounded variables.

    Row ``r`` of ``matrix`` together with ``relations[r]`` and ``rhs[r]`` is one constraint.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    num_vars: int = Field(..., ge=1)
    lower: np.ndarray
    upper: np.ndarray
    matrix: np.ndarray
    relations: Tuple[Relation, ...]
    rhs: np.ndarray
    objective: np.ndarray
    direction: Direction = Direction.MINIMIZE
    variable_scale: float = Field(default=1.0, gt=0.0, description="Absolute value represented by one unit of every variable")
    variable_names: Optional[Tuple[str, ...]] = None
    constraint_names: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def check_shapes(self):
        n = self.num_vars
        if self.lower.shape != (n,) or self.upper.shape != (n,) or self.objective.shape != (n,):
            raise ValueError(f"bounds and objective must have length {n}")
        if self.matrix.ndim != 2 or self.matrix.shape[1] != n:
            raise ValueError(f"every constraint row must have length {n}, got matrix shape {self.matrix.shape}")
        rows = self.matrix.shape[0]
        if self.rhs.shape != (rows,) or len(self.relations) != rows:
            raise ValueError(f"expected {rows} relations and right-hand sides")
        if np.any(self.lower > self.upper):
            bad = int(np.argmax(self.lower > self.upper))
            raise ValueError(f"variable {bad} has lower bound {self.lower[bad]} above upper bound {self.upper[bad]}")
        if np.any(np.isinf(self.lower) & np.isinf(self.upper)):
            raise ValueError("free variables (both bounds infinite) are not supported")
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.rhs)) and np.all(np.isfinite(self.objective))):
            raise ValueError("coefficients and right-hand sides must be finite")
        if self.variable_names is not None and len(self.variable_names) != n:
            raise ValueError(f"expected {n} variable names")
        if self.constraint_names is not None and len(self.constraint_names) != rows:
            raise ValueError(f"expected {rows} constraint names")
        return self

    @property
    def num_constraints(self) -> int:
        return self.matrix.shape[0]

    @property
    def constraints(self) -> Iterator[Tuple[np.ndarray, Relation, float]]:
        for row, relation, value in zip(self.matrix, self.relations, self.rhs):
            yield row, relation, float(value)


class LpSolution(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    status: LpStatus
    value: float = Field(default=float("nan"), description="Objective at the optimum")
    assignment: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class FeasibilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    feasible: bool
    max_violation: float
