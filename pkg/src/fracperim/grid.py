"""Uniform cell grids on the unit domain and integer-labelled control fields.

The computational domain is the open unit square (or unit interval in the
one-dimensional quadrature-oracle mode), decomposed into ``n**d`` congruent
cells of side ``h = 1/n``.  Controls are piecewise constant per cell, taking
values from a small set of distinct integers.  The level sets of a control
partition the cell index set, and the L1 distance between two controls is the
cell-volume-weighted sum of absolute value differences.

Cells are indexed row-major: for d = 2 the flat index is ``iy * n + ix`` with
``ix`` the x-column and ``iy`` the y-row, so the x coordinate varies fastest.
All types here are value-like; arrays are frozen after construction so fields
can be shared between solver components without defensive copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

__all__ = [
    "Grid",
    "LabelSet",
    "ControlField",
    "CellSet",
    "IncompatibleFieldsError",
    "build_grid",
    "l1_distance",
    "level_set",
    "sym_diff_volume",
]


class IncompatibleFieldsError(ValueError):
    """Raised when two fields do not share the same grid and label set."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform decomposition of (0,1)^d into n^d cells of side h = 1/n.

    ``exterior_band`` records how many layers of same-sized cells outside the
    domain are tracked when interactions across the domain boundary are
    tabulated (the control is extended by zero there).
    """

    n: int
    d: int = 2
    exterior_band: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise ValueError(f"invalid grid: need n >= 2, got n={self.n}")
        if self.d not in (1, 2):
            raise ValueError(f"invalid grid: d must be 1 or 2, got {self.d}")
        if self.exterior_band < 0:
            raise ValueError("invalid grid: exterior_band must be >= 0")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def ncells(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def centers(self) -> np.ndarray:
        """Cell centers, shape (ncells, d), row-major order."""
        h = self.h
        ax = (np.arange(self.n) + 0.5) * h
        if self.d == 1:
            return ax.reshape(-1, 1)
        xx, yy = np.meshgrid(ax, ax, indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def flat_index(self, coords: tuple[int, ...]) -> int:
        if self.d == 1:
            (ix,) = coords
            if not 0 <= ix < self.n:
                raise IndexError(coords)
            return ix
        ix, iy = coords
        if not (0 <= ix < self.n and 0 <= iy < self.n):
            raise IndexError(coords)
        return iy * self.n + ix

    def cell_coords(self, i: int) -> tuple[int, ...]:
        if not 0 <= i < self.ncells:
            raise IndexError(i)
        if self.d == 1:
            return (i,)
        return (i % self.n, i // self.n)


def build_grid(n: int, exterior_band: int = 0, d: int = 2) -> Grid:
    """Construct a grid; rejects n < 2 as an invalid-grid error."""
    return Grid(n=int(n), d=int(d), exterior_band=int(exterior_band))


@dataclass(frozen=True)
class LabelSet:
    """Distinct integer control values, e.g. (0, 1).  At least two."""

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        vals = tuple(int(v) for v in self.values)
        if len(vals) < 2:
            raise ValueError("label set needs at least two values")
        if len(set(vals)) != len(vals):
            raise ValueError(f"label values must be distinct, got {vals}")
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return len(self.values)

    def value_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


BINARY_LABELS = LabelSet((0, 1))


@dataclass(frozen=True)
class ControlField:
    """Piecewise-constant control: per-cell index into a label set."""

    grid: Grid
    labels: LabelSet
    assignment: np.ndarray  # int8, shape (ncells,), values in [0, m)

    def __post_init__(self) -> None:
        a = np.asarray(self.assignment, dtype=np.int8)
        if a.shape != (self.grid.ncells,):
            raise ValueError(
                f"assignment shape {a.shape} does not match grid with {self.grid.ncells} cells"
            )
        if a.size and (a.min() < 0 or a.max() >= self.labels.m):
            raise ValueError("invalid label index in assignment")
        object.__setattr__(self, "assignment", _frozen(a))

    def values(self) -> np.ndarray:
        """Per-cell control values (floats), shape (ncells,)."""
        return self.labels.value_array()[self.assignment]

    @staticmethod
    def constant(grid: Grid, labels: LabelSet, label_index: int) -> "ControlField":
        if not 0 <= label_index < labels.m:
            raise ValueError(f"invalid label index {label_index}")
        return ControlField(grid, labels, np.full(grid.ncells, label_index, dtype=np.int8))

    @staticmethod
    def from_values(grid: Grid, labels: LabelSet, values: Iterable[float]) -> "ControlField":
        vals = np.asarray(list(values), dtype=np.float64)
        table = {float(v): k for k, v in enumerate(labels.values)}
        try:
            idx = np.array([table[float(v)] for v in vals], dtype=np.int8)
        except KeyError as e:  # pragma: no cover - defensive
            raise ValueError(f"value {e} not in label set {labels.values}") from None
        return ControlField(grid, labels, idx)


@dataclass(frozen=True)
class CellSet:
    """Subset of the interior cells of a grid, as a boolean mask."""

    grid: Grid
    mask: np.ndarray  # bool, shape (ncells,)

    def __post_init__(self) -> None:
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != (self.grid.ncells,):
            raise ValueError(f"mask shape {m.shape} does not match grid")
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def volume(self) -> float:
        return self.count * self.grid.cell_volume

    @staticmethod
    def empty(grid: Grid) -> "CellSet":
        return CellSet(grid, np.zeros(grid.ncells, dtype=bool))

    @staticmethod
    def full(grid: Grid) -> "CellSet":
        return CellSet(grid, np.ones(grid.ncells, dtype=bool))

    @staticmethod
    def from_indices(grid: Grid, idx: Iterable[int]) -> "CellSet":
        m = np.zeros(grid.ncells, dtype=bool)
        m[np.fromiter(idx, dtype=np.int64)] = True
        return CellSet(grid, m)

    @staticmethod
    def from_indicator(grid: Grid, f) -> "CellSet":
        """Membership by evaluating a point indicator at cell centers."""
        c = grid.centers()
        vals = np.asarray([bool(f(p)) for p in c])
        return CellSet(grid, vals)


def _check_compatible(a: ControlField, b: ControlField) -> None:
    if a.grid != b.grid or a.labels != b.labels:
        raise IncompatibleFieldsError(
            "fields live on different grids or label sets and cannot be compared"
        )


def l1_distance(a: ControlField, b: ControlField) -> float:
    """L1(Omega) distance of two controls: sum_i |w_a(i) - w_b(i)| * h^d."""
    _check_compatible(a, b)
    diff = np.abs(a.values() - b.values())
    return float(diff.sum()) * a.grid.cell_volume


def level_set(w: ControlField, label_index: int) -> CellSet:
    """Cells where the control takes the label with the given index."""
    if not 0 <= label_index < w.labels.m:
        raise ValueError(f"invalid label index {label_index} for {w.labels.values}")
    return CellSet(w.grid, np.asarray(w.assignment) == label_index)


def sym_diff_volume(e: CellSet, f: CellSet) -> float:
    """Volume of the symmetric difference of two cell sets on one grid."""
    if e.grid != f.grid:
        raise IncompatibleFieldsError("cell sets live on different grids")
    return float(np.logical_xor(e.mask, f.mask).sum()) * e.grid.cell_volume
