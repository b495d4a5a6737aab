"""Poisson state equation, tracking objective, and its adjoint cell gradient.

The control lives on an n-by-n cell grid; the state is solved on a finer
interior node lattice (``refine`` nodes per cell side) with homogeneous
Dirichlet conditions.  Cell values are injected onto nodes piecewise
constantly, with nodes on a cell interface taking the average of the two
neighbours; the transpose of that injection is exactly how the adjoint is
averaged back, so the returned gradient is the exact derivative of the
discrete objective with respect to the cell values.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverFailure(RuntimeError):
    """Conjugate gradients did not reach the requested residual."""


@dataclass(frozen=True)
class PoissonMesh:
    """Interior node lattice refining an n-by-n cell grid on the unit square."""

    n_cells: int
    refine: int = 4

    def __post_init__(self) -> None:
        if self.n_cells < 1:
            raise ValueError(f"n_cells must be positive, got {self.n_cells}")
        if self.refine < 2:
            raise ValueError(f"refine must be at least 2, got {self.refine}")

    @property
    def nodes_per_side(self) -> int:
        return self.refine * self.n_cells - 1

    @property
    def h(self) -> float:
        return 1.0 / (self.refine * self.n_cells)

    def node_coords(self) -> np.ndarray:
        """(nn, nn, 2) array of (x, y) node positions, row-major in (iy, ix)."""
        nn = self.nodes_per_side
        ax = (np.arange(1, nn + 1)) * self.h
        xg, yg = np.meshgrid(ax, ax, indexing="xy")
        return np.stack([xg, yg], axis=-1)


def injection_matrix_1d(mesh: PoissonMesh) -> np.ndarray:
    """(nodes, cells) map taking per-cell values to node values along one axis.

    Nodes strictly inside a cell copy its value; a node sitting on the
    interface between two cells averages them.  Boundary nodes of the square
    are not part of the lattice (Dirichlet zero).
    """
    nn, rho = mesh.nodes_per_side, mesh.refine
    w = np.zeros((nn, mesh.n_cells))
    for a in range(1, nn + 1):
        if a % rho == 0:
            w[a - 1, a // rho - 1] = 0.5
            w[a - 1, a // rho] = 0.5
        else:
            w[a - 1, a // rho] = 1.0
    return w


def inject_cell_field(cells: np.ndarray, mesh: PoissonMesh) -> np.ndarray:
    """Nodal samples of a piecewise-constant cell field ((iy, ix) layout)."""
    cells = np.asarray(cells, dtype=float)
    n = mesh.n_cells
    if cells.shape != (n, n):
        raise ValueError(f"cell field shape {cells.shape} != {(n, n)}")
    w1 = injection_matrix_1d(mesh)
    return w1 @ cells @ w1.T


def restrict_node_field(nodal: np.ndarray, mesh: PoissonMesh) -> np.ndarray:
    """Transpose of the injection, scaled to a per-cell weighted mean."""
    nn = mesh.nodes_per_side
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (nn, nn):
        raise ValueError(f"node field shape {nodal.shape} != {(nn, nn)}")
    w1 = injection_matrix_1d(mesh)
    return (w1.T @ nodal @ w1) / mesh.refine**2


@lru_cache(maxsize=8)
def _laplacian(n_cells: int, refine: int, nu: float) -> sp.csr_matrix:
    mesh = PoissonMesh(n_cells, refine)
    nn = mesh.nodes_per_side
    k1 = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(nn, nn))
    eye = sp.identity(nn)
    a = (nu / mesh.h**2) * (sp.kron(eye, k1) + sp.kron(k1, eye))
    return a.tocsr()


def laplacian_operator(mesh: PoissonMesh, nu: float) -> sp.csr_matrix:
    """Five-point operator for -nu * Laplacian with Dirichlet-zero boundary."""
    if nu <= 0:
        raise ValueError(f"diffusivity must be positive, got {nu}")
    return _laplacian(mesh.n_cells, mesh.refine, float(nu))


def _cg_solve(a: sp.csr_matrix, rhs: np.ndarray, rtol: float) -> np.ndarray:
    sol, info = spla.cg(a, rhs, rtol=rtol, atol=0.0, maxiter=20 * rhs.size)
    if info != 0:
        raise SolverFailure(f"conjugate gradients returned info={info}")
    return sol


def solve_state(cells: np.ndarray, nu: float, mesh: PoissonMesh,
                rtol: float = 1e-10) -> np.ndarray:
    """Nodal solution of -nu * Laplace(u) = cells (injected), u = 0 on the edge."""
    nn = mesh.nodes_per_side
    rhs = inject_cell_field(cells, mesh).reshape(-1)
    if not np.any(rhs):
        return np.zeros((nn, nn))
    a = laplacian_operator(mesh, nu)
    return _cg_solve(a, rhs, rtol).reshape(nn, nn)


def _solve_nodal(rhs_nodal: np.ndarray, nu: float, mesh: PoissonMesh,
                 rtol: float = 1e-10) -> np.ndarray:
    nn = mesh.nodes_per_side
    if not np.any(rhs_nodal):
        return np.zeros((nn, nn))
    a = laplacian_operator(mesh, nu)
    return _cg_solve(a, rhs_nodal.reshape(-1), rtol).reshape(nn, nn)


def disk_target(mesh: PoissonMesh, nu: float, center=(0.5, 0.5),
                radius: float = 0.3) -> np.ndarray:
    """Target state: solve the same equation for a disk indicator source.

    The disk is sampled at node positions, so the source is not representable
    on the cell grid and the target cannot be matched exactly by any control.
    """
    cx, cy = center
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    if radius > 0 and not (
        radius <= cx <= 1 - radius and radius <= cy <= 1 - radius
    ):
        raise ValueError(f"disk ({center}, {radius}) leaves the unit square")
    if radius == 0:
        nn = mesh.nodes_per_side
        return np.zeros((nn, nn))
    pts = mesh.node_coords()
    chi = ((pts[..., 0] - cx) ** 2 + (pts[..., 1] - cy) ** 2 < radius**2).astype(float)
    return _solve_nodal(chi, nu, mesh)


def tracking_value(cells: np.ndarray, target: np.ndarray, nu: float,
                   mesh: PoissonMesh) -> float:
    """F = half the squared nodal L2 distance between the state and the target."""
    u = solve_state(cells, nu, mesh)
    diff = u - np.asarray(target, dtype=float)
    return 0.5 * mesh.h**2 * float((diff * diff).sum())


def tracking_gradient(cells: np.ndarray, target: np.ndarray, nu: float,
                      mesh: PoissonMesh) -> np.ndarray:
    """Per-cell derivative of the tracking value (adjoint solve + cell mean)."""
    return tracking_value_and_gradient(cells, target, nu, mesh)[1]


def tracking_value_and_gradient(
    cells: np.ndarray, target: np.ndarray, nu: float, mesh: PoissonMesh
) -> tuple[float, np.ndarray]:
    """One state solve plus one adjoint solve; gradient in L2 pairing.

    The value of a perturbation dw is <grad, dw> integrated over the square,
    i.e. sum_i grad_i * dw_i * (cell volume).
    """
    u = solve_state(cells, nu, mesh)
    diff = u - np.asarray(target, dtype=float)
    value = 0.5 * mesh.h**2 * float((diff * diff).sum())
    p = _solve_nodal(diff, nu, mesh)
    # h_pde^2 * (weighted node sum of p) per cell == cell_volume * cell mean,
    # so the L2-paired gradient is just the weighted cell mean of the adjoint
    grad = restrict_node_field(p, mesh)
    return value, grad
