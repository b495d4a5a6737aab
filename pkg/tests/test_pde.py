"""Tests for the Poisson solver, tracking objective, and adjoint gradient."""

import numpy as np
import pytest

from fracperim.pde import (
    PoissonMesh,
    disk_target,
    inject_cell_field,
    injection_matrix_1d,
    laplacian_operator,
    restrict_node_field,
    solve_state,
    tracking_gradient,
    tracking_value,
    tracking_value_and_gradient,
)

NU = 1.0 / 25.0


def _series_unit_center(terms: int = 400) -> float:
    # separable sine series for -Lap(u) = 1 on the unit square, evaluated at
    # the center; odd modes only, alternating signs
    s = 0.0
    for j in range(1, terms, 2):
        for k in range(1, terms, 2):
            s += (
                16.0 / (j * k * np.pi**4 * (j * j + k * k))
                * (-1) ** ((j - 1) // 2)
                * (-1) ** ((k - 1) // 2)
            )
    return s


def test_mesh_validation():
    with pytest.raises(ValueError):
        PoissonMesh(0, 4)
    with pytest.raises(ValueError):
        PoissonMesh(16, 1)
    mesh = PoissonMesh(16, 4)
    assert mesh.nodes_per_side == 63
    assert mesh.h == 1.0 / 64.0


def test_node_coords_layout():
    mesh = PoissonMesh(2, 2)
    pts = mesh.node_coords()
    assert pts.shape == (3, 3, 2)
    assert np.allclose(pts[0, 0], (0.25, 0.25))
    assert np.allclose(pts[0, 2], (0.75, 0.25))  # x varies along the last axis


def test_injection_constant_field():
    mesh = PoissonMesh(4, 4)
    nodal = inject_cell_field(np.full((4, 4), 2.5), mesh)
    assert nodal.shape == (15, 15)
    assert np.allclose(nodal, 2.5)


def test_injection_interface_averaging():
    mesh = PoissonMesh(2, 4)
    cells = np.array([[1.0, 3.0], [1.0, 3.0]])
    nodal = inject_cell_field(cells, mesh)
    # node index 3 sits on the vertical interface: average of 1 and 3
    assert np.allclose(nodal[:, 3], 2.0)
    assert np.allclose(nodal[:, 0], 1.0)
    assert np.allclose(nodal[:, 6], 3.0)


def test_injection_shape_validated():
    mesh = PoissonMesh(4, 4)
    with pytest.raises(ValueError):
        inject_cell_field(np.ones((3, 3)), mesh)
    with pytest.raises(ValueError):
        restrict_node_field(np.ones((4, 4)), mesh)


def test_restriction_is_scaled_transpose():
    mesh = PoissonMesh(3, 4)
    rng = np.random.default_rng(1)
    cells = rng.standard_normal((3, 3))
    nodal = rng.standard_normal((11, 11))
    lhs = float((inject_cell_field(cells, mesh) * nodal).sum())
    rhs = float((cells * restrict_node_field(nodal, mesh)).sum()) * mesh.refine**2
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_solve_zero_source():
    mesh = PoissonMesh(8, 4)
    u = solve_state(np.zeros((8, 8)), NU, mesh)
    assert np.all(u == 0.0)


def test_solve_linearity():
    mesh = PoissonMesh(8, 4)
    rng = np.random.default_rng(2)
    w1 = rng.uniform(-1, 1, (8, 8))
    w2 = rng.uniform(-1, 1, (8, 8))
    u_sum = solve_state(w1 + w2, NU, mesh)
    u_sep = solve_state(w1, NU, mesh) + solve_state(w2, NU, mesh)
    scale = np.abs(u_sum).max()
    assert np.abs(u_sum - u_sep).max() <= 1e-9 * scale


def test_solve_matches_series_solution():
    # rho * n = 128 nodes per side; constant unit source
    mesh = PoissonMesh(16, 8)
    u = solve_state(np.ones((16, 16)), NU, mesh)
    nn = mesh.nodes_per_side
    center = u[(nn - 1) // 2, (nn - 1) // 2]
    exact = _series_unit_center() / NU
    assert abs(center - exact) / exact < 0.005


def test_solve_deterministic():
    mesh = PoissonMesh(8, 4)
    rng = np.random.default_rng(3)
    w = rng.uniform(0, 1, (8, 8))
    u1 = solve_state(w, NU, mesh)
    u2 = solve_state(w, NU, mesh)
    assert np.array_equal(u1, u2)


def test_maximum_principle():
    mesh = PoissonMesh(8, 4)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        w = rng.uniform(0, 1, (8, 8))
        u = solve_state(w, NU, mesh)
        assert u.min() >= -1e-12


def test_solution_operator_self_adjoint():
    mesh = PoissonMesh(8, 4)
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        d1 = rng.standard_normal((8, 8))
        d2 = rng.standard_normal((8, 8))
        s1 = solve_state(d1, NU, mesh)
        s2 = solve_state(d2, NU, mesh)
        lhs = float((s1 * inject_cell_field(d2, mesh)).sum()) * mesh.h**2
        rhs = float((inject_cell_field(d1, mesh) * s2).sum()) * mesh.h**2
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs), 1e-15)


def test_smoothing_ratio_bounded():
    # |<S d1, S d2>| relative to the product of L1 norms stays bounded
    mesh = PoissonMesh(16, 4)
    h2 = 1.0 / 16**2
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d1 = rng.standard_normal((16, 16))
        d2 = rng.standard_normal((16, 16))
        s1 = solve_state(d1, NU, mesh)
        s2 = solve_state(d2, NU, mesh)
        num = abs(float((s1 * s2).sum()) * mesh.h**2)
        den = (h2 * np.abs(d1).sum()) * (h2 * np.abs(d2).sum())
        worst = max(worst, num / den)
    assert worst <= 0.5  # measured max is about 0.055


def test_objective_trivial_cases():
    mesh = PoissonMesh(8, 4)
    nn = mesh.nodes_per_side
    zero_w = np.zeros((8, 8))
    assert tracking_value(zero_w, np.zeros((nn, nn)), NU, mesh) == 0.0
    target = disk_target(mesh, NU)
    want = 0.5 * mesh.h**2 * float((target**2).sum())
    got = tracking_value(zero_w, target, NU, mesh)
    assert abs(got - want) <= 1e-12 * want


def test_gradient_zero_for_realizable_target():
    mesh = PoissonMesh(8, 4)
    rng = np.random.default_rng(5)
    w = rng.uniform(0, 1, (8, 8))
    target = solve_state(w, NU, mesh)
    g = tracking_gradient(w, target, NU, mesh)
    assert np.abs(g).max() <= 1e-10


def test_gradient_matches_directional_derivatives():
    mesh = PoissonMesh(16, 4)
    rng = np.random.default_rng(6)
    w = rng.uniform(0, 1, (16, 16))
    target = disk_target(mesh, NU)
    f0, g = tracking_value_and_gradient(w, target, NU, mesh)
    assert f0 > 0
    eps = 1e-4
    cell_vol = 1.0 / 16**2
    for _ in range(5):
        d = rng.standard_normal((16, 16))
        fp = tracking_value(w + eps * d, target, NU, mesh)
        fm = tracking_value(w - eps * d, target, NU, mesh)
        fd = (fp - fm) / (2 * eps)
        inner = float((g * d).sum()) * cell_vol
        assert abs(fd - inner) <= 1e-5 * max(abs(fd), 1e-15)


def test_gradient_sign_for_dominated_state():
    # zero control, strictly positive target: raising any cell helps, so the
    # gradient is negative everywhere
    mesh = PoissonMesh(8, 4)
    target = disk_target(mesh, NU)
    assert target.min() > 0  # source is nonnegative, not identically zero
    g = tracking_gradient(np.zeros((8, 8)), target, NU, mesh)
    assert np.all(g < 0)


def test_disk_target_trivial_and_validation():
    mesh = PoissonMesh(8, 4)
    assert np.all(disk_target(mesh, NU, radius=0.0) == 0.0)
    with pytest.raises(ValueError):
        disk_target(mesh, NU, center=(0.9, 0.5), radius=0.3)
    with pytest.raises(ValueError):
        disk_target(mesh, NU, radius=-0.1)
    with pytest.raises(ValueError):
        laplacian_operator(mesh, 0.0)


def test_disk_target_symmetry():
    mesh = PoissonMesh(16, 4)
    ud = disk_target(mesh, NU)
    scale = np.abs(ud).max()
    for flipped in (ud[::-1], ud[:, ::-1], ud.T):
        assert np.abs(ud - flipped).max() <= 1e-9 * scale
