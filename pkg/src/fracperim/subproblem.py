"""Exact solver for the binary trust-region step: linear model plus a
pairwise nonlocal penalty under an L1 budget on flipped volume.

The step energy decomposes into per-cell linear costs, per-cell exterior
weights, and nonnegative pairwise weights on cell pairs — a submodular
binary energy.  The budget-free problem is solved exactly as an s-t
minimum cut; the budgeted problem by branch-and-bound with Lagrangian
min-cut bounds.  Two max-flow backends: exact rational arithmetic for
small instances, scaled integer capacities through scipy for large ones.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .grid import Grid
from .kernel import KernelTable

# instances at or below this many cells go through the rational backend;
# above it, rational max-flow probes cost seconds each, while the scaled
# integer backend stays certified (its rounding always favors the bound)
_EXACT_BACKEND_CELLS = 40
# capacity head-room for the scaled integer backend (int32 max-flow)
_INT_BUDGET = int(0.9 * 2**31)
# rational tie-break quantum: prefers the center's label on exact ties
_TIE_QUANTUM = Fraction(1, 2**80)


class UnsupportedLabelsError(ValueError):
    """The solver handles binary cell labels only."""


class OracleScaleExceeded(ValueError):
    """Brute-force enumeration refused: instance too large."""


@dataclass(frozen=True)
class SubproblemInstance:
    """One trust-region step problem over binary cell values.

    linear_cost[i] is the model cost of raising cell i from 0 to 1 (gradient
    times cell volume).  pair weights and exterior weights already include
    the regularization strength, so the step energy of an assignment b is

        sum_i linear_cost[i] * b[i] + sum_i unary_weight[i] * b[i]
          + sum_pairs pair_weight * |b_i - b_j|

    measured relative to zero; the reported objective subtracts the center's
    energy so the center always scores 0.
    """

    grid: Grid
    linear_cost: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_weight: np.ndarray
    unary_weight: np.ndarray
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        n2 = self.grid.ncells
        lc = np.ascontiguousarray(np.asarray(self.linear_cost, dtype=float))
        ctr = np.ascontiguousarray(np.asarray(self.center))
        if lc.shape != (n2,):
            raise ValueError(f"linear_cost shape {lc.shape} != ({n2},)")
        if not np.all(np.isfinite(lc)):
            raise ValueError("linear costs must be finite")
        if ctr.shape != (n2,):
            raise ValueError(f"center shape {ctr.shape} != ({n2},)")
        if not np.all((ctr == 0) | (ctr == 1)):
            raise UnsupportedLabelsError("center must be a 0/1 assignment")
        if self.radius < 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")
        if np.any(np.asarray(self.pair_weight) < 0):
            raise ValueError("pair weights must be nonnegative")
        object.__setattr__(self, "linear_cost", lc)
        object.__setattr__(self, "center", ctr.astype(np.int8))
        for name in ("pair_i", "pair_j", "pair_weight", "unary_weight"):
            a = np.ascontiguousarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        lc.setflags(write=False)
        self.center.setflags(write=False)

    @classmethod
    def from_kernel_table(
        cls,
        table: KernelTable,
        linear_cost: np.ndarray,
        eta: float,
        center: np.ndarray,
        radius: float,
    ) -> "SubproblemInstance":
        """Nonlocal-regularized step: weights 2*eta*(1-alpha)*kappa and
        2*eta*(1-alpha)*beta from a tabulated kernel."""
        scale = 2.0 * eta * (1.0 - table.alpha)
        return cls(
            grid=table.grid,
            linear_cost=linear_cost,
            pair_i=table.pair_i,
            pair_j=table.pair_j,
            pair_weight=scale * table.pair_kappa,
            unary_weight=scale * table.beta,
            center=center,
            radius=radius,
        )

    @classmethod
    def from_grid_perimeter(
        cls,
        grid: Grid,
        linear_cost: np.ndarray,
        eta: float,
        center: np.ndarray,
        radius: float,
        omega: float = 2.0,
    ) -> "SubproblemInstance":
        """Limit-mode step: 4-neighbour cut edges weighted eta*omega*h, with
        domain-boundary sides charged to the exterior weight."""
        if grid.d != 2:
            raise ValueError("grid perimeter instances are two-dimensional")
        n = grid.n
        w_edge = eta * omega * grid.h
        pi, pj = [], []
        for iy in range(n):
            for ix in range(n):
                i = iy * n + ix
                if ix + 1 < n:
                    pi.append(i)
                    pj.append(i + 1)
                if iy + 1 < n:
                    pi.append(i)
                    pj.append(i + n)
        pi = np.asarray(pi, dtype=np.int64)
        pj = np.asarray(pj, dtype=np.int64)
        order = np.lexsort((pj, pi))
        sides = np.zeros(n * n)
        for iy in range(n):
            for ix in range(n):
                sides[iy * n + ix] = (ix == 0) + (ix == n - 1) + (iy == 0) + (iy == n - 1)
        return cls(
            grid=grid,
            linear_cost=linear_cost,
            pair_i=pi[order],
            pair_j=pj[order],
            pair_weight=np.full(pi.shape[0], w_edge),
            unary_weight=w_edge * sides,
            center=center,
            radius=radius,
        )

    @property
    def max_flips(self) -> int:
        """The L1 budget in whole cells: radius / cell volume, rounded down."""
        return int(math.floor(self.radius / self.grid.cell_volume + 1e-9))

    def step_energy(self, assignment: np.ndarray) -> float:
        """Objective relative to the center (center scores exactly 0)."""
        b = np.asarray(assignment, dtype=float)
        c = self.center.astype(float)
        lin = float(self.linear_cost @ (b - c))
        reg_b = float(self.pair_weight @ np.abs(b[self.pair_i] - b[self.pair_j]))
        reg_b += float(self.unary_weight @ b)
        reg_c = float(self.pair_weight @ np.abs(c[self.pair_i] - c[self.pair_j]))
        reg_c += float(self.unary_weight @ c)
        return lin + reg_b - reg_c

    def flip_count(self, assignment: np.ndarray) -> int:
        return int(np.sum(np.asarray(assignment) != self.center))


@dataclass(frozen=True)
class SubproblemSolution:
    minimizer: np.ndarray
    objective: float
    certificate: str  # "exact" or "gap"
    gap: float = 0.0
    nodes: int = 0

    def __post_init__(self) -> None:
        m = np.ascontiguousarray(np.asarray(self.minimizer, dtype=np.int8))
        m.setflags(write=False)
        object.__setattr__(self, "minimizer", m)


def predicted_reduction(solution: SubproblemSolution) -> float:
    """Model decrease achieved by the step; nonnegative for exact solves."""
    return -solution.objective


# ---------------------------------------------------------------------------
# max-flow backends.  Both minimize sum theta_i b_i + sum w_ij |b_i - b_j|
# over binary b, where theta may carry a tiny tie-break increment toward the
# center's label.  They return the minimizing assignment; its true energy is
# always re-evaluated in floats by the caller.


def _mincut_exact(n2, theta_frac, pairs, weights_frac, tie_sign):
    """Edmonds-Karp on rational capacities; exact minimizer.

    tie_sign[i] = +1 makes b_i = 1 infinitesimally more expensive (center
    label 0), -1 the reverse.  Nodes: 0 = source, 1..n2 = cells, n2+1 = sink;
    b_i = 1 iff cell i ends on the source side.
    """
    q = _TIE_QUANTUM
    src, snk = 0, n2 + 1
    cap: list[dict[int, Fraction]] = [dict() for _ in range(n2 + 2)]

    def add_edge(a, b, c):
        if c <= 0:
            return
        cap[a][b] = cap[a].get(b, Fraction(0)) + c
        cap[b].setdefault(a, Fraction(0))

    for i in range(n2):
        th = theta_frac[i] + q * tie_sign[i]
        if th > 0:
            # charged when b_i = 1 (source side): arc cell -> sink
            add_edge(i + 1, snk, th)
        elif th < 0:
            # charged when b_i = 0: arc source -> cell
            add_edge(src, i + 1, -th)
    for (i, j), w in zip(pairs, weights_frac):
        if w > 0:
            add_edge(i + 1, j + 1, w)
            add_edge(j + 1, i + 1, w)

    # BFS augmenting paths until no path remains
    while True:
        parent = [-1] * (n2 + 2)
        parent[src] = src
        queue = [src]
        while queue and parent[snk] == -1:
            a = queue.pop(0)
            for b, c in cap[a].items():
                if c > 0 and parent[b] == -1:
                    parent[b] = a
                    queue.append(b)
        if parent[snk] == -1:
            break
        # bottleneck along the path
        bott = None
        b = snk
        while b != src:
            a = parent[b]
            c = cap[a][b]
            bott = c if bott is None or c < bott else bott
            b = a
        b = snk
        while b != src:
            a = parent[b]
            cap[a][b] -= bott
            cap[b][a] = cap[b].get(a, Fraction(0)) + bott
            b = a
    # source side of the cut = cells still reachable in the residual graph
    seen = [False] * (n2 + 2)
    seen[src] = True
    queue = [src]
    while queue:
        a = queue.pop(0)
        for b, c in cap[a].items():
            if c > 0 and not seen[b]:
                seen[b] = True
                queue.append(b)
    return np.array([1 if seen[i + 1] else 0 for i in range(n2)], dtype=np.int8)


def _mincut_scaled(n2, theta, pair_i, pair_j, weights, tie_sign):
    """scipy max-flow on scaled int32 capacities; deterministic minimizer.

    Returns (assignment, sound lower bound on min_b cutform(b)) where
    cutform(b) = sum theta_i b_i + sum w |b_i - b_j|.  Capacities are floored,
    which only shrinks cut values, so flow/scale - sum(max(-theta, 0)) is a
    valid lower bound; no tie perturbation is applied here (the minimal
    source side of the max-flow is already unique and deterministic).
    """
    total = float(np.abs(theta).sum() + 2.0 * weights.sum()) + 1.0
    scale = _INT_BUDGET / total
    negsum = float(np.maximum(-theta, 0.0).sum())
    src, snk = 0, n2 + 1
    th_int = np.floor(theta * scale).astype(np.int64)
    w_int = np.floor(weights * scale).astype(np.int64)
    pos = np.flatnonzero(th_int > 0)
    neg = np.flatnonzero(th_int < 0)
    wp = np.flatnonzero(w_int > 0)
    rows = np.concatenate([pos + 1, np.full(neg.size, src, dtype=np.int64),
                           pair_i[wp] + 1, pair_j[wp] + 1])
    cols = np.concatenate([np.full(pos.size, snk, dtype=np.int64), neg + 1,
                           pair_j[wp] + 1, pair_i[wp] + 1])
    caps = np.concatenate([th_int[pos], -th_int[neg], w_int[wp], w_int[wp]])
    if rows.size == 0:
        # pair terms are nonnegative, so -negsum bounds every assignment
        return (np.asarray(tie_sign) < 0).astype(np.int8), -negsum
    graph = sp.csr_matrix(
        (caps.astype(np.int32), (rows, cols)), shape=(n2 + 2, n2 + 2)
    )
    res = maximum_flow(graph, src, snk)
    # the flow matrix is antisymmetric, so cap - flow already includes the
    # reverse residual arcs (0 - (-f) = f)
    residual = (graph - res.flow) > 0
    reach = breadth_first_order(
        residual, src, directed=True, return_predecessors=False
    )
    out = np.zeros(n2, dtype=np.int8)
    cells = reach[(reach >= 1) & (reach <= n2)] - 1
    out[cells] = 1
    return out, float(res.flow_value) / scale - negsum


class _NodeCut:
    """Per-node min-cut machinery reused across penalty probes.

    The pin-folding and the flow-graph sparsity pattern do not depend on
    the penalty lam — only the capacities do — so both are built once per
    branch-and-bound node.  The penalized energy of any assignment b that
    respects the pins decomposes as cutform(b_free; lam) + K0 + lam * K1
    with node constants K0, K1, which keeps full energy evaluations out
    of the probe loop.
    """

    def __init__(self, inst: SubproblemInstance, forced: np.ndarray):
        n2 = inst.grid.ncells
        self.inst = inst
        self.hvol = inst.grid.cell_volume
        self.forced = forced
        c = inst.center.astype(float)
        self.pinned_flips = int(np.sum((forced >= 0) & (forced != inst.center)))
        free_idx = np.flatnonzero(forced < 0)
        self.free_idx = free_idx
        remap = -np.ones(n2, dtype=np.int64)
        remap[free_idx] = np.arange(free_idx.size)
        theta0 = inst.linear_cost + inst.unary_weight
        self.theta0_f = theta0[free_idx].copy()
        self.dtheta_f = self.hvol * (1.0 - 2.0 * c[free_idx])
        self.tie_f = np.where(inst.center[free_idx] == 0, 1, -1).astype(np.int64)
        pi, pj, w = inst.pair_i, inst.pair_j, inst.pair_weight
        active = w > 0
        fi = forced[pi]
        fj = forced[pj]
        both = active & (fi < 0) & (fj < 0)
        # pairs with one pinned endpoint fold into the free endpoint's
        # linear term: +w if the pinned label is 0, -w if it is 1
        pin_j = active & (fi < 0) & (fj >= 0)
        pin_i = active & (fi >= 0) & (fj < 0)
        np.add.at(self.theta0_f, remap[pi[pin_j]],
                  np.where(fj[pin_j] == 0, w[pin_j], -w[pin_j]))
        np.add.at(self.theta0_f, remap[pj[pin_i]],
                  np.where(fi[pin_i] == 0, w[pin_i], -w[pin_i]))
        self.fpi = remap[pi[both]]
        self.fpj = remap[pj[both]]
        self.fw = w[both]
        self.exact = n2 <= _EXACT_BACKEND_CELLS
        # node constants from a reference assignment (free part = center)
        self.c_f = c[free_idx]
        out0 = forced.astype(np.int8).copy()
        out0[free_idx] = inst.center[free_idx]
        cut0 = float(self.theta0_f @ self.c_f)
        if self.fw.size:
            cut0 += float(self.fw @ np.abs(self.c_f[self.fpi] - self.c_f[self.fpj]))
        self.K0 = inst.step_energy(out0) - cut0
        self.K1 = self.hvol * self.pinned_flips - float(self.dtheta_f @ self.c_f)
        if self.exact or not free_idx.size:
            return
        # fixed arc layout: per cell one arc to the sink and one from the
        # source (one of the two always carries capacity 0), plus both
        # directions of every free pair.  A csr built from slot ids maps
        # coo order to data positions, so later probes only rewrite data.
        nf = free_idx.size
        self._src, self._snk = 0, nf + 1
        cells = np.arange(1, nf + 1, dtype=np.int64)
        rows = np.concatenate([cells, np.full(nf, self._src, dtype=np.int64),
                               self.fpi + 1, self.fpj + 1])
        cols = np.concatenate([np.full(nf, self._snk, dtype=np.int64), cells,
                               self.fpj + 1, self.fpi + 1])
        nnz = rows.size
        probe = sp.csr_matrix(
            (np.arange(nnz, dtype=np.int64), (rows, cols)),
            shape=(nf + 2, nf + 2),
        )
        if probe.nnz != nnz:  # duplicate pairs supplied: no fixed layout
            self._graph = None
            return
        self._order = probe.data.copy()
        probe.data = np.zeros(nnz, dtype=np.int32)
        self._graph = probe

    def _caps(self, theta_f: np.ndarray):
        """Integer capacities in coo slot order plus the scale used."""
        total = float(np.abs(theta_f).sum() + 2.0 * self.fw.sum()) + 1.0
        scale = _INT_BUDGET / total
        th_int = np.floor(theta_f * scale).astype(np.int64)
        w_int = np.floor(self.fw * scale).astype(np.int64)
        caps = np.concatenate([np.maximum(th_int, 0), np.maximum(-th_int, 0),
                               w_int, w_int])
        return caps, scale, th_int

    def solve(self, lam: float):
        """Returns (assignment, penalized-minimum lower bound or None,
        flip count, step energy of the assignment)."""
        inst = self.inst
        out = self.forced.astype(np.int8).copy()
        nf = self.free_idx.size
        if not nf:
            return out, None, self.pinned_flips, inst.step_energy(out)
        theta_f = self.theta0_f + lam * self.dtheta_f
        if self.exact:
            th_frac = [Fraction(float(t)) for t in theta_f]
            w_frac = [Fraction(float(x)) for x in self.fw]
            b_f = _mincut_exact(nf, th_frac,
                                list(zip(self.fpi.tolist(), self.fpj.tolist())),
                                w_frac, self.tie_f)
            cut_lower = None
        elif self._graph is None:
            b_f, cut_lower = _mincut_scaled(nf, theta_f, self.fpi, self.fpj,
                                            self.fw, self.tie_f)
        else:
            caps, scale, _ = self._caps(theta_f)
            self._graph.data = caps[self._order].astype(np.int32)
            res = maximum_flow(self._graph, self._src, self._snk)
            residual = (self._graph - res.flow) > 0
            reach = breadth_first_order(residual, self._src, directed=True,
                                        return_predecessors=False)
            b_f = np.zeros(nf, dtype=np.int8)
            b_f[reach[(reach >= 1) & (reach <= nf)] - 1] = 1
            negsum = float(np.maximum(-theta_f, 0.0).sum())
            cut_lower = float(res.flow_value) / scale - negsum
        out[self.free_idx] = b_f
        bsub = b_f.astype(float)
        cutform = float(theta_f @ bsub)
        if self.fw.size:
            cutform += float(self.fw @ np.abs(bsub[self.fpi] - bsub[self.fpj]))
        e_pen = cutform + self.K0 + lam * self.K1
        flips = self.pinned_flips + int(np.sum(b_f != inst.center[self.free_idx]))
        energy = e_pen - lam * self.hvol * flips
        pen_lower = None if cut_lower is None else cut_lower + self.K0 + lam * self.K1
        return out, pen_lower, flips, energy


def _penalized_minimizer(inst: SubproblemInstance, lam: float,
                         forced: np.ndarray | None = None):
    """Exact-or-bounded minimizer of step energy + lam * (cell volume) * flips.

    forced[i] in {-1, 0, 1}: -1 leaves the cell free, otherwise pins it.
    Returns (assignment, lower bound on the penalized minimum); on the
    rational backend the assignment is an exact minimizer and the bound
    is None.
    """
    if forced is None:
        forced = np.full(inst.grid.ncells, -1, dtype=np.int8)
    out, pen_lower, _, _ = _NodeCut(inst, forced).solve(lam)
    return out, pen_lower


def solve_unconstrained_mincut(
    inst: SubproblemInstance, lam: float
) -> tuple[np.ndarray, float]:
    """Minimizer of the lam-penalized step energy (no budget).

    Returns (assignment, penalized energy relative to the center).  Exact on
    the rational backend; the scaled backend resolves the minimum to within
    its integer quantization.
    """
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    b, _ = _penalized_minimizer(inst, lam)
    energy = inst.step_energy(b) + lam * inst.grid.cell_volume * inst.flip_count(b)
    return b, energy


def lagrangian_lower_bound(inst: SubproblemInstance, lam: float) -> float:
    """L(lam) = min penalized energy - lam * radius <= budgeted optimum."""
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    b, pen_lower = _penalized_minimizer(inst, lam)
    if pen_lower is None:
        pen_lower = (inst.step_energy(b)
                     + lam * inst.grid.cell_volume * inst.flip_count(b))
    return pen_lower - lam * inst.radius


def best_lagrangian_bound(inst: SubproblemInstance) -> tuple[float, float]:
    """Golden-section maximization of the concave dual; fixed 40 steps.

    Returns (best bound, its lam).
    """
    hvol = inst.grid.cell_volume
    lam_hi = 2.0 * (np.abs(inst.linear_cost).max(initial=0.0)
                    + inst.unary_weight.max(initial=0.0)
                    + float(inst.pair_weight.sum())) / hvol + 1.0
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, lam_hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1 = lagrangian_lower_bound(inst, x1)
    f2 = lagrangian_lower_bound(inst, x2)
    best, best_lam = max((f1, x1), (f2, x2), (lagrangian_lower_bound(inst, 0.0), 0.0))
    for _ in range(40):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = lagrangian_lower_bound(inst, x2)
            if f2 > best:
                best, best_lam = f2, x2
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = lagrangian_lower_bound(inst, x1)
            if f1 > best:
                best, best_lam = f1, x1
    return best, best_lam


@dataclass
class _SearchState:
    incumbent: np.ndarray
    upper: float
    nodes: int = 0
    exhausted: bool = False
    open_bounds: list = field(default_factory=list)


def _node_dual(inst: SubproblemInstance, forced: np.ndarray, state: _SearchState,
               k_total: int, bisect_iters: int = 25):
    """Lagrangian bound for a partial assignment, harvesting primal candidates.

    Returns (lower bound, preferred branching candidate assignment) or
    (inf, None) when the pins alone overspend the budget.
    """
    hvol = inst.grid.cell_volume
    cut = _NodeCut(inst, forced)
    if cut.pinned_flips > k_total:
        return math.inf, None
    best_bound = -math.inf
    witness = None

    def probe(lam: float) -> tuple[int, float]:
        nonlocal best_bound, witness
        b, pen_lower, flips, energy = cut.solve(lam)
        if pen_lower is None:
            pen_lower = energy + lam * hvol * flips
        bound = pen_lower - lam * hvol * k_total
        if bound > best_bound:
            best_bound = bound
            witness = b
        if flips <= k_total and energy < state.upper:
            # re-evaluate on the canonical float path before recording
            exact_e = inst.step_energy(b)
            if exact_e < state.upper:
                state.upper = exact_e
                state.incumbent = b.copy()
        return flips, energy

    flips0, _ = probe(0.0)
    if flips0 <= k_total:
        # unconstrained minimizer already feasible: larger penalties can
        # only lower the node bound, so stop here
        return best_bound, witness
    lo = 0.0
    hi = 2.0 * (np.abs(inst.linear_cost).max(initial=0.0)
                + inst.unary_weight.max(initial=0.0)
                + float(inst.pair_weight.sum())) / hvol + 1.0
    flips_hi, _ = probe(hi)
    if flips_hi > k_total:
        # even a dominating penalty cannot reach the budget: in practice the
        # pins already overspend; treat as infeasible
        return math.inf, None
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        fl, _ = probe(mid)
        if fl > k_total:
            lo = mid
        else:
            hi = mid
    return best_bound, witness


def solve_subproblem_exact(
    inst: SubproblemInstance,
    node_budget: int = 10**6,
    time_budget: float | None = None,
) -> SubproblemSolution:
    """Global minimizer of the budgeted step energy, or incumbent + gap.

    Branch-and-bound: Lagrangian min-cut bounds, branching on the largest
    |linear cost| among free cells, depth first, children ordered by bound.
    """
    k_total = inst.max_flips
    center = inst.center.astype(np.int8)
    if k_total == 0:
        return SubproblemSolution(center, 0.0, "exact", 0.0, 0)
    state = _SearchState(incumbent=center.copy(), upper=0.0)
    t_start = time.monotonic()
    root_forced = np.full(inst.grid.ncells, -1, dtype=np.int8)
    root_bound, _ = _node_dual(inst, root_forced, state, k_total)
    state.nodes = 1
    if root_bound >= state.upper - 1e-12:
        return SubproblemSolution(
            state.incumbent, state.upper, "exact", 0.0, state.nodes
        )
    stack = [(root_bound, root_forced)]
    abs_cost = np.abs(inst.linear_cost)
    worst_open = root_bound
    while stack:
        if state.nodes >= node_budget or (
            time_budget is not None and time.monotonic() - t_start > time_budget
        ):
            state.exhausted = True
            break
        bound, forced = stack.pop()
        if bound >= state.upper - 1e-12:
            continue
        free = np.flatnonzero(forced < 0)
        if free.size == 0:
            continue
        pivot = free[np.argmax(abs_cost[free])]
        children = []
        for val in (0, 1):
            child = forced.copy()
            child[pivot] = val
            state.nodes += 1
            cb, _ = _node_dual(inst, child, state, k_total)
            if cb < state.upper - 1e-12:
                children.append((cb, child))
        # depth-first, better-bound child explored first
        children.sort(key=lambda t: -t[0])
        stack.extend(children)
    if state.exhausted:
        open_bounds = [b for b, _ in stack if b < state.upper - 1e-12]
        lower = min(open_bounds, default=state.upper)
        gap = max(state.upper - lower, 0.0)
        return SubproblemSolution(
            state.incumbent, state.upper, "gap", gap, state.nodes
        )
    return SubproblemSolution(state.incumbent, state.upper, "exact", 0.0, state.nodes)


def brute_force_subproblem(inst: SubproblemInstance) -> SubproblemSolution:
    """Exhaustive enumeration oracle for instances with at most 16 cells."""
    n2 = inst.grid.ncells
    if n2 > 16:
        raise OracleScaleExceeded(f"{n2} cells exceed the enumeration limit of 16")
    k_total = inst.max_flips
    masks = np.arange(1 << n2, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n2)) & 1).astype(np.float64)
    c = inst.center.astype(np.float64)
    lin = inst.linear_cost + inst.unary_weight
    energy = bits @ lin - float(lin @ c)
    if inst.pair_weight.size:
        energy += np.abs(bits[:, inst.pair_i] - bits[:, inst.pair_j]) @ inst.pair_weight
        energy -= float(inst.pair_weight @ np.abs(c[inst.pair_i] - c[inst.pair_j]))
    energy[np.abs(bits - c).sum(axis=1) > k_total] = np.inf
    best = int(np.argmin(energy))
    if energy[best] < 0.0:
        return SubproblemSolution(
            bits[best].astype(np.int8), float(energy[best]), "exact", 0.0, 1 << n2
        )
    return SubproblemSolution(inst.center, 0.0, "exact", 0.0, 1 << n2)


# ---------------------------------------------------------------------------
# instance files: plain text, exact round trip


def save_instance(path, inst: SubproblemInstance, table_ref: str, alpha: float,
                  eta: float) -> None:
    """Text format: header `n alpha eta Delta`, costs, center, table file."""
    lines = [
        f"{inst.grid.n} {alpha!r} {eta!r} {inst.radius!r}",
        " ".join(repr(float(v)) for v in inst.linear_cost),
        " ".join(str(int(v)) for v in inst.center),
        table_ref,
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(path) -> tuple[dict, np.ndarray, np.ndarray, str]:
    """Returns (header dict, linear costs, center, kernel-table reference)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if len(lines) < 4:
        raise ValueError(f"instance file {path} is truncated")
    n_s, alpha_s, eta_s, delta_s = lines[0].split()
    header = {
        "n": int(n_s),
        "alpha": float(alpha_s),
        "eta": float(eta_s),
        "radius": float(delta_s),
    }
    costs = np.array([float(v) for v in lines[1].split()])
    center = np.array([int(v) for v in lines[2].split()], dtype=np.int8)
    if costs.size != header["n"] ** 2 or center.size != header["n"] ** 2:
        raise ValueError("instance arrays do not match the header size")
    return header, costs, center, lines[3]
