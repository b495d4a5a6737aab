"""Outer/inner trust-region loop over binary cell controls.

Each outer iteration linearizes the smooth tracking term at the current
control while keeping the regularizer exact, then solves the budgeted
binary step problem globally.  The radius resets to its initial value on
every acceptance and halves exactly on rejection.  Runs end with a
certified nonpositive predicted reduction, with the radius contracted
below one cell, or at the iteration cap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .grid import ControlField, Grid
from .kernel import KernelTable, regularizer_Ralpha
from .pde import PoissonMesh, tracking_value_and_gradient
from .perimeter import limit_spec_for_dim, regularizer_R
from .subproblem import (
    SubproblemInstance,
    SubproblemSolution,
    predicted_reduction,
    solve_subproblem_exact,
)


@dataclass(frozen=True)
class TrustRegionParams:
    """Loop controls; volume units for the radii."""

    delta0: float = 0.25
    sigma: float = 1e-3
    min_radius: float | None = None  # None: one cell volume of the control grid
    max_outer: int = 200
    pred_tol: float = 0.0
    node_budget: int = 10**6
    time_budget: float | None = None

    def __post_init__(self) -> None:
        if not self.delta0 > 0:
            raise ValueError(f"delta0 must be positive, got {self.delta0}")
        if not 0 < self.sigma < 1:
            raise ValueError(f"sigma must lie in (0,1), got {self.sigma}")
        if self.min_radius is not None and not self.min_radius > 0:
            raise ValueError(f"min_radius must be positive, got {self.min_radius}")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.pred_tol < 0:
            raise ValueError("pred_tol must be nonnegative")


def accept_step(ared: float, pred: float, sigma: float) -> bool:
    """Sufficient decrease: the candidate passes iff ared >= sigma * pred.

    The inequality is non-strict; callers must route pred <= 0 into the
    termination branch before asking.
    """
    return ared >= sigma * pred


def actual_reduction(j_before: float, j_after: float) -> float:
    """Drop of the full objective F + eta * R between two controls."""
    return j_before - j_after


# ---------------------------------------------------------------------------
# objective adapters: anything with value_and_gradient(values) works


@dataclass(frozen=True)
class TrackingObjective:
    """Poisson tracking term of the application problem.

    value_and_gradient maps per-cell control values to (F, per-cell
    gradient in the L2 pairing): a perturbation dw changes F by
    sum_i grad_i * dw_i * cell_volume to first order.
    """

    mesh: PoissonMesh
    nu: float
    target: np.ndarray
    rtol: float = 1e-10

    def value_and_gradient(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        cells = np.asarray(values, dtype=float).reshape(
            self.mesh.n_cells, self.mesh.n_cells
        )
        value, grad = tracking_value_and_gradient(
            cells, self.target, self.nu, self.mesh
        )
        return value, grad.reshape(-1)


@dataclass(frozen=True)
class LinearCellObjective:
    """F(w) = sum_i slope_i * w_i * cell_volume; the model is exact for it."""

    grid: Grid
    slope: np.ndarray

    def value_and_gradient(self, values: np.ndarray) -> tuple[float, np.ndarray]:
        v = float(self.slope @ np.asarray(values, dtype=float)) * self.grid.cell_volume
        return v, np.asarray(self.slope, dtype=float)


# ---------------------------------------------------------------------------
# regularizer adapters: energy plus the matching step-penalty builder


@dataclass(frozen=True)
class NonlocalRegularizer:
    """Fractional-perimeter regularizer backed by a tabulated kernel."""

    table: KernelTable

    def energy(self, w: ControlField) -> float:
        return regularizer_Ralpha(w, self.table)

    def step_instance(self, linear_cost, eta, center, radius) -> SubproblemInstance:
        return SubproblemInstance.from_kernel_table(
            self.table, linear_cost, eta, center, radius
        )


@dataclass(frozen=True)
class LimitRegularizer:
    """Grid-edge perimeter regularizer (the alpha -> 1 limit model)."""

    grid: Grid

    def energy(self, w: ControlField) -> float:
        return regularizer_R(w)

    def step_instance(self, linear_cost, eta, center, radius) -> SubproblemInstance:
        return SubproblemInstance.from_grid_perimeter(
            self.grid, linear_cost, eta, center, radius,
            omega=limit_spec_for_dim(self.grid.d).omega,
        )


# ---------------------------------------------------------------------------
# iteration records


@dataclass(frozen=True)
class IterationRow:
    """One solved step problem: outer index n, inner index k, and outcome.

    F, R_alpha and J_alpha describe the evaluated candidate on ordinary
    rows and the current iterate on the terminating row.
    """

    n: int
    k: int
    delta: float
    pred: float
    ared: float
    f_value: float
    r_value: float
    j_value: float
    accepted: bool
    certificate: str
    gap: float
    seconds: float


@dataclass
class IterationLog:
    rows: list = field(default_factory=list)
    reason: str = "iteration_cap"

    @property
    def accepted_count(self) -> int:
        return sum(1 for r in self.rows if r.accepted)

    def accepted_rows(self) -> list:
        return [r for r in self.rows if r.accepted]


CSV_COLUMNS = "n,k,Delta,pred,ared,F,R_alpha,J_alpha,accepted,gap,seconds"


def iteration_csv_lines(log: IterationLog) -> list[str]:
    """Header plus one line per row; floats in full %.17g precision."""
    out = [CSV_COLUMNS]
    for r in log.rows:
        out.append(
            f"{r.n},{r.k},{r.delta:.17g},{r.pred:.17g},{r.ared:.17g},"
            f"{r.f_value:.17g},{r.r_value:.17g},{r.j_value:.17g},"
            f"{int(r.accepted)},{r.gap:.17g},{r.seconds:.17g}"
        )
    return out


def write_iteration_csv(log: IterationLog, path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(iteration_csv_lines(log)) + "\n")


def write_control_pgm(w: ControlField, path) -> None:
    """Plain P2 image, n x n, one pixel per cell in grid row order."""
    g = w.grid
    if g.d != 2:
        raise ValueError("control images are two-dimensional")
    vals = np.clip(np.rint(255 * w.values()), 0, 255).astype(int)
    lines = ["P2", f"{g.n} {g.n}", "255"]
    for iy in range(g.n):
        row = vals[iy * g.n:(iy + 1) * g.n]
        lines.append(" ".join(str(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# the loop


def run_trust_region(
    objective,
    regularizer,
    eta: float,
    params: TrustRegionParams,
    w0: ControlField,
    record_timings: bool = False,
) -> tuple[ControlField, IterationLog]:
    """Descend from w0 until stationarity, radius contraction, or the cap.

    Returns the last accepted control and the per-step log.  With
    record_timings=False (the default) the seconds column is zeroed so
    that identical runs produce identical logs.
    """
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    grid = w0.grid
    min_radius = params.min_radius
    if min_radius is None:
        min_radius = grid.cell_volume
    log = IterationLog()
    w = w0
    vals = w.values()
    f_val, grad = objective.value_and_gradient(vals)
    r_val = regularizer.energy(w)
    j_val = f_val + eta * r_val
    stopped = False
    for n in range(1, params.max_outer + 1):
        delta = params.delta0
        k = 0
        while True:
            if delta < min_radius:
                log.reason = "radius_contracted"
                stopped = True
                break
            t0 = time.monotonic()
            inst = regularizer.step_instance(
                grad * grid.cell_volume, eta, vals.astype(np.int8), delta
            )
            sol: SubproblemSolution = solve_subproblem_exact(
                inst, params.node_budget, params.time_budget
            )
            pred = predicted_reduction(sol)
            # an optimality gap could hide a better step, so termination
            # requires the certified upper bound to be nonpositive
            if pred + sol.gap <= params.pred_tol:
                secs = time.monotonic() - t0 if record_timings else 0.0
                log.rows.append(IterationRow(
                    n, k, delta, pred, 0.0, f_val, r_val, j_val,
                    False, sol.certificate, sol.gap, secs,
                ))
                log.reason = "pred_nonpositive"
                stopped = True
                break
            cand_vals = sol.minimizer.astype(np.float64)
            cand = ControlField.from_values(grid, w.labels, cand_vals)
            f_new, grad_new = objective.value_and_gradient(cand_vals)
            r_new = regularizer.energy(cand)
            j_new = f_new + eta * r_new
            ared = actual_reduction(j_val, j_new)
            ok = accept_step(ared, pred, params.sigma)
            secs = time.monotonic() - t0 if record_timings else 0.0
            log.rows.append(IterationRow(
                n, k, delta, pred, ared, f_new, r_new, j_new,
                ok, sol.certificate, sol.gap, secs,
            ))
            if ok:
                w, vals = cand, cand_vals
                f_val, grad, r_val, j_val = f_new, grad_new, r_new, j_new
                break
            delta = 0.5 * delta  # exact halving in binary floating point
            k += 1
        if stopped:
            break
    return w, log
