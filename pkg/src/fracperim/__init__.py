"""Binary control fields regularized by a nonlocal interfacial energy.

Library layout:

- ``grid``         uniform cell grids, label sets, control fields
- ``kernel``       interaction-kernel quadrature, tabulation, nonlocal perimeter
- ``perimeter``    grid-edge (sharp-interface) perimeter and its regularizer
- ``pde``          Poisson state equation, tracking objective, adjoint gradient
- ``subproblem``   exact trust-region step via min-cut with budget constraint
- ``trust_region`` outer descent loop with radius halving
- ``variations``   deformation tests: first variations and symmetric differences
- ``cli``          command line front end over a structured config file
"""
from __future__ import annotations

from .grid import (
    BINARY_LABELS,
    CellSet,
    ControlField,
    Grid,
    IncompatibleFieldsError,
    LabelSet,
    build_grid,
    l1_distance,
    level_set,
    sym_diff_volume,
)

__version__ = "0.1.0"

__all__ = [
    "BINARY_LABELS",
    "CellSet",
    "ControlField",
    "Grid",
    "IncompatibleFieldsError",
    "LabelSet",
    "build_grid",
    "l1_distance",
    "level_set",
    "sym_diff_volume",
    "__version__",
]
