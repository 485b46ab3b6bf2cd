"""
Bounded-variable primal simplex for small dense linear programs.

Every constraint gets a slack (``<=``: [0, inf), ``>=``: (-inf, 0], ``=``: [0, 0]). Rows whose
residual at the starting point is out of the slack range also get an artificial variable.
Phase 1 drives the artificials to zero, phase 2 optimizes the original objective. Nonbasic
variables always sit exactly on one of their bounds.

Rows, columns and the objective are equilibrated by powers of two before solving, so the
rounding of the input is untouched and tolerances act on coefficients of order one.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from app.dependencies import get_settings
from app.models.protocol_model import Direction, LpStatus, Relation
from app.schemas.lp_schemas import FeasibilityReport, LinearProgram, LpSolution
from app.utils.exceptions import LpSolverError

logger = logging.getLogger(__name__)

# Consecutive degenerate pivots after which the Dantzig rule hands over to Bland's rule.
DEGENERATE_STALL_LIMIT = 50
# Pivots between two reinversions of the basis.
REFACTOR_INTERVAL = 25


def build_problem(
    objective: Sequence[float],
    constraints: Sequence[Tuple[Sequence[float], Relation, float]],
    lower: Sequence[float],
    upper: Sequence[float],
    direction: Direction = Direction.MINIMIZE,
) -> LinearProgram:
    """Assemble a LinearProgram from plain rows."""
    objective = np.asarray(objective, dtype=float)
    n = objective.shape[0]
    if constraints:
        matrix = np.array([np.asarray(row, dtype=float) for row, _, _ in constraints])
    else:
        matrix = np.zeros((0, n))
    return LinearProgram(
        num_vars=n,
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
        matrix=matrix,
        relations=tuple(relation for _, relation, _ in constraints),
        rhs=np.array([float(value) for _, _, value in constraints]),
        objective=objective,
        direction=direction,
    )


def _power_of_two_scale(magnitudes: np.ndarray) -> np.ndarray:
    """Power of two nearest to 1/magnitude, 1 where the magnitude is zero."""
    factors = np.ones_like(magnitudes, dtype=float)
    positive = magnitudes > 0.0
    exponents = -np.round(np.log2(magnitudes[positive])).astype(int)
    factors[positive] = np.ldexp(1.0, exponents)
    return factors


def _equilibrate(problem: LinearProgram) -> Tuple[LinearProgram, np.ndarray]:
    """
    Scale columns, then rows, then the objective to a largest magnitude near one.

    Returns the scaled problem and the column factors ``c`` with ``x = c * y`` mapping a
    solution ``y`` of the scaled problem back to the original variables.
    """
    matrix = problem.matrix
    columns = _power_of_two_scale(np.abs(matrix).max(axis=0, initial=0.0))
    matrix = matrix * columns
    rows = _power_of_two_scale(np.abs(matrix).max(axis=1, initial=0.0))
    matrix = matrix * rows[:, None]
    objective = problem.objective * columns
    objective = objective * _power_of_two_scale(np.array([np.abs(objective).max(initial=0.0)]))[0]
    scaled = problem.model_copy(update={
        "matrix": matrix,
        "rhs": problem.rhs * rows,
        "lower": problem.lower / columns,
        "upper": problem.upper / columns,
        "objective": objective,
    })
    return scaled, columns


class _Tableau:
    """Dense tableau B^-1 [A | I | D] with the current point of every column."""

    def __init__(self, problem: LinearProgram, feasibility_tol: float):
        A = problem.matrix
        m, n = A.shape
        relations = np.array([relation.value for relation in problem.relations], dtype=object)
        slack_lower = np.where(relations == Relation.GE.value, -np.inf, 0.0).astype(float)
        slack_upper = np.where(relations == Relation.LE.value, np.inf, 0.0).astype(float)

        start = np.where(np.isfinite(problem.lower), problem.lower, problem.upper)
        residual = problem.rhs - A @ start
        in_range = (residual >= slack_lower - feasibility_tol) & (residual <= slack_upper + feasibility_tol)
        slack_start = np.where(in_range, residual, np.clip(residual, slack_lower, slack_upper))
        artificial = residual - slack_start
        artificial_sign = np.where(artificial >= 0.0, 1.0, -1.0)

        self.n, self.m = n, m
        self.columns = n + 2 * m
        self.lower = np.concatenate([problem.lower, slack_lower, np.zeros(m)])
        self.upper = np.concatenate([problem.upper, slack_upper, np.where(in_range, 0.0, np.inf)])
        self.x = np.concatenate([start, slack_start, np.where(in_range, 0.0, np.abs(artificial))])
        self.basis = np.where(in_range, n + np.arange(m), n + m + np.arange(m))
        self.artificial_needed = ~in_range
        self.rhs = problem.rhs

        self.full = np.hstack([A, np.eye(m), np.diag(artificial_sign)])
        # the starting basis matrix is diagonal with entries +-1, its own inverse
        basis_diag = np.where(in_range, 1.0, artificial_sign)
        self.table = self.full * basis_diag[:, None]

    def close_artificials(self):
        first = self.n + self.m
        self.upper[first:] = 0.0
        self.x[first:] = 0.0

    def pivot(self, row: int, column: int):
        table = self.table
        table[row] /= table[row, column]
        factors = table[:, column].copy()
        factors[row] = 0.0
        table -= np.outer(factors, table[row])
        self.basis[row] = column

    def refactor(self):
        """Recompute the tableau and the basic values from the original columns."""
        if self.m == 0:
            return
        basis_matrix = self.full[:, self.basis]
        nonbasic = np.ones(self.columns, dtype=bool)
        nonbasic[self.basis] = False
        try:
            table = np.linalg.solve(basis_matrix, self.full)
            basic_x = np.linalg.solve(basis_matrix, self.rhs - self.full[:, nonbasic] @ self.x[nonbasic])
        except np.linalg.LinAlgError:
            logger.debug("Basis matrix is singular, keeping the updated tableau")
            return
        self.table[:] = table
        self.x[self.basis] = basic_x


def _run_phase(
    tableau: _Tableau,
    cost: np.ndarray,
    pivot_rule: str,
    pivot_tol: float,
    optimality_tol: float,
    max_iterations: int,
    stop_at: Optional[float] = None,
) -> Tuple[LpStatus, int]:
    table, x, lower, upper = tableau.table, tableau.x, tableau.lower, tableau.upper
    rule = pivot_rule
    stall = 0
    since_refactor = 0
    for iteration in range(max_iterations):
        if since_refactor >= REFACTOR_INTERVAL:
            tableau.refactor()
            since_refactor = 0
        if stop_at is not None and float(cost @ x) <= stop_at:
            return LpStatus.OPTIMAL, iteration

        basis = tableau.basis
        is_basic = np.zeros(tableau.columns, dtype=bool)
        is_basic[basis] = True
        reduced = cost - cost[basis] @ table

        can_increase = ~is_basic & (x == lower) & (upper > lower)
        can_decrease = ~is_basic & (x == upper) & (upper > lower)
        increase = can_increase & (reduced < -optimality_tol)
        decrease = can_decrease & (reduced > optimality_tol)
        eligible = np.flatnonzero(increase | decrease)
        if eligible.size == 0:
            if since_refactor == 0:
                return LpStatus.OPTIMAL, iteration
            # confirm optimality on a freshly inverted basis
            tableau.refactor()
            since_refactor = 0
            continue

        if rule == "bland":
            entering = int(eligible[0])
        else:
            entering = int(eligible[np.argmax(np.abs(reduced[eligible]))])
        direction = 1.0 if increase[entering] else -1.0

        alpha = direction * table[:, entering]
        basic_x, basic_lower, basic_upper = x[basis], lower[basis], upper[basis]
        ratios = np.full(tableau.m, np.inf)
        falling = alpha > pivot_tol
        rising = alpha < -pivot_tol
        ratios[falling] = (basic_x[falling] - basic_lower[falling]) / alpha[falling]
        ratios[rising] = (basic_upper[rising] - basic_x[rising]) / -alpha[rising]
        ratios = np.maximum(ratios, 0.0)
        step = ratios.min() if tableau.m else np.inf
        flip = upper[entering] - lower[entering]

        if flip <= step:
            if np.isinf(flip):
                return LpStatus.UNBOUNDED, iteration
            x[entering] = upper[entering] if direction > 0 else lower[entering]
            x[basis] -= alpha * flip
            since_refactor += 1
            continue

        ties = np.flatnonzero(ratios <= step + 1e-15 * max(1.0, step))
        row = int(ties[np.argmin(basis[ties])])
        leaving = int(basis[row])

        x[basis] -= alpha * step
        x[entering] += direction * step
        x[leaving] = lower[leaving] if alpha[row] > 0 else upper[leaving]
        tableau.pivot(row, entering)
        since_refactor += 1

        stall = stall + 1 if step == 0.0 else 0
        if rule != "bland" and stall >= DEGENERATE_STALL_LIMIT:
            logger.debug(f"Degenerate stall after {iteration} pivots, switching to Bland's rule")
            rule = "bland"
    raise LpSolverError(f"Simplex did not converge within {max_iterations} pivots")


def solve(
    problem: LinearProgram,
    pivot_rule: Optional[str] = None,
    feasibility_tol: Optional[float] = None,
    pivot_tol: Optional[float] = None,
    max_iterations: Optional[int] = None,
    optimality_tol: Optional[float] = None,
) -> LpSolution:
    """
    Solve a linear program to global optimality.

    Args:
        problem: Validated LinearProgram.
        pivot_rule: "bland" (default) or "dantzig".
        feasibility_tol: Phase-1 residual accepted as feasible, relative to the largest
            equilibrated right-hand side.
        pivot_tol: Smallest tableau entry accepted as a pivot.
        max_iterations: Pivot limit per phase.
        optimality_tol: Reduced cost below which a column is not worth entering, in both phases.

    Returns:
        LpSolution: status, optimal value and assignment. Infeasible and unbounded problems are
        reported through the status.

    Raises:
        LpSolverError: If the pivot limit is exceeded or the pivot rule is unknown.
    """
    settings = get_settings()
    pivot_rule = pivot_rule or settings.lp_pivot_rule
    feasibility_tol = feasibility_tol if feasibility_tol is not None else settings.lp_feasibility_tol
    pivot_tol = pivot_tol if pivot_tol is not None else settings.lp_pivot_tol
    optimality_tol = optimality_tol if optimality_tol is not None else settings.lp_optimality_tol
    max_iterations = max_iterations or settings.lp_max_iterations
    if pivot_rule not in ("bland", "dantzig"):
        raise LpSolverError(f"Unknown pivot rule '{pivot_rule}'")

    scaled, columns = _equilibrate(problem)
    residual_scale = max(1.0, float(np.abs(scaled.rhs).max(initial=0.0)))
    tableau = _Tableau(scaled, feasibility_tol * residual_scale)
    n, m = tableau.n, tableau.m

    phase_one_cost = np.zeros(tableau.columns)
    phase_one_cost[n + m:] = tableau.artificial_needed.astype(float)
    iterations = 0
    if tableau.artificial_needed.any():
        _, iterations = _run_phase(
            tableau, phase_one_cost, pivot_rule, pivot_tol, optimality_tol, max_iterations,
            stop_at=1e-3 * feasibility_tol * residual_scale,
        )
        infeasibility = float(phase_one_cost @ tableau.x)
        if infeasibility > feasibility_tol * residual_scale:
            logger.debug(f"LP infeasible: phase-1 residual {infeasibility:.3e} (scale {residual_scale:.3e})")
            return LpSolution(status=LpStatus.INFEASIBLE, iterations=iterations)
    tableau.close_artificials()
    tableau.refactor()

    sign = 1.0 if scaled.direction is Direction.MINIMIZE else -1.0
    cost = np.concatenate([sign * scaled.objective, np.zeros(2 * m)])
    status, phase_two = _run_phase(tableau, cost, pivot_rule, pivot_tol, optimality_tol, max_iterations)
    iterations += phase_two
    if status is LpStatus.UNBOUNDED:
        return LpSolution(status=status, iterations=iterations)

    assignment = np.clip(tableau.x[:n] * columns, problem.lower, problem.upper)
    value = float(problem.objective @ assignment)
    report = check_feasible(problem, assignment, feasibility_tol * max(1.0, float(np.abs(problem.rhs).max(initial=0.0))))
    if not report.feasible:
        logger.warning(f"LP optimum violates a constraint by {report.max_violation:.3e}")
    logger.debug(f"LP optimal after {iterations} pivots: value={value:.12e}")
    return LpSolution(status=LpStatus.OPTIMAL, value=value, assignment=assignment, iterations=iterations)


def check_feasible(problem: LinearProgram, assignment: Sequence[float], tolerance: Optional[float] = None) -> FeasibilityReport:
    """
    Largest bound or constraint violation of an assignment, independent of the solver.

    The default tolerance is the configured feasibility tolerance times max(1, max |rhs|).

    Raises:
        LpSolverError: If the assignment length does not match the problem.
    """
    if tolerance is None:
        tolerance = get_settings().lp_feasibility_tol * max(1.0, float(np.abs(problem.rhs).max(initial=0.0)))
    x = np.asarray(assignment, dtype=float)
    if x.shape != (problem.num_vars,):
        raise LpSolverError(f"Assignment has {x.size} values, problem has {problem.num_vars} variables")
    violations = [np.maximum(problem.lower - x, 0.0), np.maximum(x - problem.upper, 0.0)]
    if problem.num_constraints:
        activity = problem.matrix @ x
        relations = np.array([relation.value for relation in problem.relations], dtype=object)
        gap = activity - problem.rhs
        row_violation = np.where(
            relations == Relation.LE.value,
            np.maximum(gap, 0.0),
            np.where(relations == Relation.GE.value, np.maximum(-gap, 0.0), np.abs(gap)),
        ).astype(float)
        violations.append(row_violation)
    worst = float(max(v.max(initial=0.0) for v in violations))
    return FeasibilityReport(feasible=worst <= tolerance, max_violation=worst)


def _format_terms(coefficients: np.ndarray, names: Sequence[str]) -> str:
    terms = [f"{'-' if c < 0 else '+'} {abs(c):.17g} {name}" for c, name in zip(coefficients, names) if c != 0.0]
    if not terms:
        return f"0 {names[0]}"
    text = " ".join(terms)
    return text[2:] if text.startswith("+ ") else text


def _format_bound(value: float) -> str:
    if np.isinf(value):
        return "-infinity" if value < 0 else "+infinity"
    return f"{value:.17g}"


def to_lp_format(problem: LinearProgram, title: str = "decoy bound") -> str:
    """Render a LinearProgram in CPLEX LP text format for cross-checking with external solvers."""
    names = problem.variable_names or tuple(f"x{k}" for k in range(problem.num_vars))
    row_names = problem.constraint_names or tuple(f"c{k}" for k in range(problem.num_constraints))
    lines = [f"\\ {title}", "Minimize" if problem.direction is Direction.MINIMIZE else "Maximize"]
    lines.append(f" obj: {_format_terms(problem.objective, names)}")
    lines.append("Subject To")
    for name, (row, relation, value) in zip(row_names, problem.constraints):
        lines.append(f" {name}: {_format_terms(row, names)} {relation.value} {value:.17g}")
    lines.append("Bounds")
    for name, low, high in zip(names, problem.lower, problem.upper):
        lines.append(f" {_format_bound(low)} <= {name} <= {_format_bound(high)}")
    lines.append("End")
    return "\n".join(lines) + "\n"
