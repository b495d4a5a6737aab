"""Kernel quadrature against independent oracles.

The main reference is a reduction of the 4-D cell-pair integral to a 2-D
integral of the tent offset-densities, evaluated by adaptive quadrature; the
touching configurations get a polar patch with the radial singularity
substituted away.  In 1-D everything has closed forms.
"""
import math
import os

import numpy as np
import pytest
from scipy.integrate import dblquad

from fracperim.grid import CellSet, build_grid
from fracperim.kernel import (
    DEFAULT_QUAD,
    DegenerateTruncationError,
    QuadratureSpec,
    SelfPairError,
    UntruncatedGridKernel,
    box_pair_interaction,
    cell_pair_weight,
    frac_perimeter,
    frac_perimeter_1d_exact,
    kernel_cache_path,
    lattice_offset_interactions,
    load_kernel_table,
    save_kernel_table,
    tabulate_kernel,
    unit_cell_total_interaction,
)

QUAD_EPS = dict(epsabs=1e-11, epsrel=1e-11)


def _tent(t, k):
    return max(0.0, 1.0 - abs(t - k))


def _oracle_kappa_2d(a, b, alpha):
    """Unit-cell pair weight at integer offset (a, b) by 2-D quadrature.

    kappa = int int m_a(u) m_b(v) (u^2+v^2)^(-(2+alpha)/2) du dv with tent
    densities m_k(t) = (1-|t-k|)_+ .  Touching offsets are split into a polar
    patch around the origin (radial singularity removed by substitution) and
    smooth remainders.
    """
    a, b = sorted((abs(a), abs(b)), reverse=True)
    if a == 0:
        raise ValueError("zero offset")
    s = -(2.0 + alpha) / 2.0

    def smooth(u, v):
        return _tent(u, a) * _tent(v, b) * (u * u + v * v) ** s

    if (a, b) == (1, 0):
        # near the origin m_1(u) = u, m_0(v) = 1 - v; radial factor r^-alpha
        p = 1.0 / (1.0 - alpha)
        rmax = 0.5 ** (1.0 - alpha)
        pol = dblquad(
            lambda th, rho: p * math.cos(th) * (1.0 - rho**p * math.sin(th)),
            0.0, rmax, 0.0, math.pi / 2, **QUAD_EPS,
        )[0]
        rem1 = dblquad(
            lambda v, u: u * (1.0 - v) * (u * u + v * v) ** s,
            0.0, 0.5, lambda u: math.sqrt(0.25 - u * u), 1.0, **QUAD_EPS,
        )[0]
        rem2 = dblquad(lambda v, u: smooth(u, v), 0.5, 2.0, 0.0, 1.0, **QUAD_EPS)[0]
        return 2.0 * (pol + rem1 + rem2)  # fold of the even v-tent
    if (a, b) == (1, 1):
        q = 2.0 - alpha
        pol = dblquad(
            lambda th, rho: math.cos(th) * math.sin(th) / q,
            0.0, 0.5**q, 0.0, math.pi / 2, **QUAD_EPS,
        )[0]
        rem1 = dblquad(
            lambda v, u: u * _tent(v, 1) * (u * u + v * v) ** s,
            0.0, 0.5, lambda u: math.sqrt(0.25 - u * u), 2.0, **QUAD_EPS,
        )[0]
        rem2 = dblquad(lambda v, u: smooth(u, v), 0.5, 2.0, 0.0, 2.0, **QUAD_EPS)[0]
        return pol + rem1 + rem2
    if b == 0:
        return 2.0 * dblquad(lambda v, u: smooth(u, v), a - 1.0, a + 1.0, 0.0, 1.0, **QUAD_EPS)[0]
    return dblquad(lambda v, u: smooth(u, v), a - 1.0, a + 1.0, b - 1.0, b + 1.0, **QUAD_EPS)[0]


def _kappa_1d_exact(k, alpha, h=1.0):
    """Closed form for unit-width 1-D cells at offset k >= 1 (scaled by h)."""
    c = h ** (1.0 - alpha) / (alpha * (1.0 - alpha))
    km1 = 0.0 if k == 1 else float(k - 1) ** (1.0 - alpha)
    return c * (2.0 * float(k) ** (1.0 - alpha) - km1 - float(k + 1) ** (1.0 - alpha))


def _beta_1d_exact(i, n, alpha):
    """Exterior weight of cell [ih, (i+1)h] in [0,1] against all of R \\ [0,1]."""
    h = 1.0 / n
    a, b = i * h, (i + 1) * h
    c = 1.0 / (alpha * (1.0 - alpha))
    left = b ** (1.0 - alpha) - a ** (1.0 - alpha)
    right = (1.0 - a) ** (1.0 - alpha) - (1.0 - b) ** (1.0 - alpha)
    return c * (left + right)


# ---------------------------------------------------------------------------


def test_far_pair_reference_value():
    # unit cells ten widths apart: close to the point approximation 10^-2.5
    v = cell_pair_weight((0.5, 0.5), (10.5, 0.5), 1.0, 0.5)
    assert abs(v - 10.0**-2.5) / 10.0**-2.5 < 0.01
    assert v == pytest.approx(_oracle_kappa_2d(10, 0, 0.5), rel=1e-6)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.75])
@pytest.mark.parametrize("off", [(1, 0), (1, 1)])
def test_touching_pair_against_oracle(alpha, off):
    """The self-similar closure of the singular pairs must hit the oracle."""
    got = lattice_offset_interactions(1.0, np.array([off]), alpha)[0]
    want = _oracle_kappa_2d(*off, alpha)
    assert got == pytest.approx(want, rel=2e-3)


@pytest.mark.parametrize("off", [(2, 0), (2, 1), (2, 2), (3, 0), (5, 4)])
def test_near_and_far_offsets_against_oracle(off):
    alpha = 0.6
    got = lattice_offset_interactions(1.0, np.array([off]), alpha)[0]
    want = _oracle_kappa_2d(*off, alpha)
    assert got == pytest.approx(want, rel=2e-3)


def test_offsets_scale_like_h_to_d_minus_alpha():
    alpha = 0.45
    offs = np.array([(1, 0), (2, 1)])
    v1 = lattice_offset_interactions(1.0, offs, alpha)
    vh = lattice_offset_interactions(0.125, offs, alpha)
    np.testing.assert_allclose(vh, v1 * 0.125 ** (2.0 - alpha), rtol=1e-12)


def test_offset_symmetries_bit_exact():
    alpha = 0.5
    base = lattice_offset_interactions(0.25, np.array([(3, 1)]), alpha)[0]
    for off in [(-3, 1), (3, -1), (-3, -1), (1, 3), (-1, 3)]:
        v = lattice_offset_interactions(0.25, np.array([off]), alpha)[0]
        assert v == base  # canonical form shares one integral


def test_box_pair_argument_order_bit_exact():
    a = box_pair_interaction((0.0, 0.0), (0.1, 0.1), (0.1, 0.0), (0.1, 0.1), 0.3)
    b = box_pair_interaction((0.1, 0.0), (0.1, 0.1), (0.0, 0.0), (0.1, 0.1), 0.3)
    assert a == b


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8])
def test_1d_offsets_exact(alpha):
    h = 0.1
    offs = np.arange(1, 7).reshape(-1, 1)
    got = lattice_offset_interactions(h, offs, alpha, d=1)
    want = np.array([_kappa_1d_exact(k, alpha, h) for k in range(1, 7)])
    np.testing.assert_allclose(got, want, rtol=1e-4)


def test_1d_beta_untruncated_exact():
    n, alpha = 12, 0.4
    tab = tabulate_kernel(build_grid(n, d=1), alpha, None)
    want = np.array([_beta_1d_exact(i, n, alpha) for i in range(n)])
    np.testing.assert_allclose(tab.beta, want, rtol=5e-4)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.75])
def test_interval_perimeter_matches_closed_form(alpha):
    n = 16
    tab = tabulate_kernel(build_grid(n, d=1), alpha, None)
    g = tab.grid
    full = frac_perimeter(CellSet.full(g), tab)
    assert full == pytest.approx(frac_perimeter_1d_exact(1.0, alpha), rel=5e-4)
    half = frac_perimeter(CellSet.from_indices(g, np.arange(n // 2)), tab)
    assert half == pytest.approx(frac_perimeter_1d_exact(0.5, alpha), rel=5e-4)
    # the closed form itself: 4 L^(1-alpha) / (alpha (1-alpha))
    assert frac_perimeter_1d_exact(1.0, 0.5) == 16.0


def test_neighbor_counts_at_cell_width_truncation():
    # truncation at one cell width keeps only the 4 axis neighbors
    g = build_grid(6, exterior_band=1)
    tab = tabulate_kernel(g, 0.5, g.h)
    counts = tab.neighbor_counts()
    corner = g.flat_index((0, 0))
    edge = g.flat_index((3, 0))
    inner = g.flat_index((3, 3))
    assert counts[corner] == 2 and counts[edge] == 3 and counts[inner] == 4


def test_neighbor_counts_at_seven_cells():
    radius = 7
    expected = sum(
        1
        for a in range(-radius, radius + 1)
        for b in range(-radius, radius + 1)
        if 0 < a * a + b * b <= radius * radius
    )
    n = 2 * radius + 1
    g = build_grid(n, exterior_band=radius)
    tab = tabulate_kernel(g, 0.5, radius * g.h + 1e-12)
    center = g.flat_index((radius, radius))
    assert tab.neighbor_counts()[center] == expected


def test_degenerate_truncation_rejected():
    g = build_grid(8, exterior_band=1)
    with pytest.raises(DegenerateTruncationError):
        tabulate_kernel(g, 0.5, 0.5 * g.h)


def test_band_must_cover_truncation():
    g = build_grid(8, exterior_band=1)
    with pytest.raises(ValueError, match="exterior_band"):
        tabulate_kernel(g, 0.5, 3 * g.h)


def test_untruncated_2d_table_rejected():
    with pytest.raises(ValueError, match="1-D"):
        tabulate_kernel(build_grid(4), 0.5, None)


def test_submodularity_of_cut_form():
    """P(A u B) + P(A n B) <= P(A) + P(B): exact for nonnegative weights."""
    g = build_grid(6, exterior_band=2)
    tab = tabulate_kernel(g, 0.6, 2 * g.h)
    rng = np.random.default_rng(42)
    for _ in range(40):
        ma = rng.random(g.ncells) < rng.uniform(0.2, 0.8)
        mb = rng.random(g.ncells) < rng.uniform(0.2, 0.8)
        pa = frac_perimeter(CellSet(g, ma), tab)
        pb = frac_perimeter(CellSet(g, mb), tab)
        pu = frac_perimeter(CellSet(g, ma | mb), tab)
        pi = frac_perimeter(CellSet(g, ma & mb), tab)
        assert pu + pi <= pa + pb + 1e-10


def test_perimeter_monotone_in_truncation():
    g = build_grid(6, exterior_band=4)
    tabs = [tabulate_kernel(g, 0.5, r * g.h) for r in (1, 2, 4)]
    rng = np.random.default_rng(9)
    for _ in range(10):
        e = CellSet(g, rng.random(g.ncells) < 0.5)
        vals = [frac_perimeter(e, t) for t in tabs]
        assert vals[0] <= vals[1] <= vals[2] + 1e-12


@pytest.mark.parametrize("alpha", [0.35, 0.5, 0.8])
def test_scaling_law_on_squares(alpha):
    """P(rE) = r^(d-alpha) P(E) for concentric squares resolved exactly."""
    m = 64
    uk = UntruncatedGridKernel(m, alpha)

    def sq(side):
        msk = np.zeros((m, m), bool)
        lo = (m - side) // 2
        msk[lo : lo + side, lo : lo + side] = True
        return msk

    p8, p16, p32 = (uk.perimeter(sq(s)) for s in (8, 16, 32))
    assert p16 / p8 == pytest.approx(2.0 ** (2.0 - alpha), rel=2e-4)
    assert p32 / p16 == pytest.approx(2.0 ** (2.0 - alpha), rel=2e-4)


def test_fft_evaluator_matches_direct_sum():
    m, alpha = 8, 0.5
    uk = UntruncatedGridKernel(m, alpha)
    rng = np.random.default_rng(0)
    mask = rng.random((m, m)) < 0.4
    idx = np.argwhere(mask)
    pairs = 0.0
    for i in range(len(idx)):
        for j in range(len(idx)):
            if i != j:
                dy, dx = idx[i] - idx[j]
                pairs += uk._kimage[m - 1 + dy, m - 1 + dx]
    direct = 2.0 * (mask.sum() * uk.t_half - pairs)
    assert uk.perimeter(mask) == pytest.approx(direct, abs=1e-10)


def test_unit_cell_constant_consistent_with_offsets():
    """T_half must equal the sum of kappa over all lattice offsets."""
    alpha = 0.5
    t_half = unit_cell_total_interaction(alpha)
    radius = 30
    offs = [
        (a, b)
        for a in range(-radius, radius + 1)
        for b in range(-radius, radius + 1)
        if 0 < a * a + b * b <= radius * radius
    ]
    partial = lattice_offset_interactions(1.0, np.array(offs), alpha).sum()
    tail_hi = 2.0 * math.pi * (radius - 1.0) ** (-alpha) / alpha
    assert partial < t_half < partial + tail_hi


def test_empty_set_has_zero_perimeter():
    g = build_grid(5, exterior_band=1)
    tab = tabulate_kernel(g, 0.5, g.h)
    assert frac_perimeter(CellSet.empty(g), tab) == 0.0
    m = UntruncatedGridKernel(8, 0.5)
    assert m.perimeter(np.zeros((8, 8), bool)) == 0.0


def test_cache_round_trip_bit_exact(tmp_path):
    g = build_grid(6, exterior_band=2)
    tab = tabulate_kernel(g, 0.5, 2 * g.h)
    path = kernel_cache_path(str(tmp_path), g, 0.5, 2 * g.h, DEFAULT_QUAD)
    save_kernel_table(tab, path)
    back = load_kernel_table(path)
    assert back.grid == tab.grid
    assert back.alpha == tab.alpha and back.truncation_radius == tab.truncation_radius
    np.testing.assert_array_equal(back.pair_i, tab.pair_i)
    np.testing.assert_array_equal(back.pair_j, tab.pair_j)
    assert np.array_equal(back.pair_kappa, tab.pair_kappa)  # bit exact
    assert np.array_equal(back.beta, tab.beta)


def test_cache_rejects_malformed_header(tmp_path):
    p = os.path.join(tmp_path, "bad.txt")
    with open(p, "w") as f:
        f.write("2 6 0.5\n")
    with pytest.raises(ValueError, match="header"):
        load_kernel_table(p)


def test_centers_only_mode_is_a_far_field_approximation():
    spec = QuadratureSpec(centers_only=True)
    full = cell_pair_weight((0.5, 0.5), (10.5, 0.5), 1.0, 0.5)
    crude = cell_pair_weight((0.5, 0.5), (10.5, 0.5), 1.0, 0.5, spec)
    assert crude == pytest.approx(10.0**-2.5)
    assert abs(crude - full) / full < 0.01
    # adjacent cells: badly wrong, which is the point of the comparison mode
    adj_full = cell_pair_weight((0.5, 0.5), (1.5, 0.5), 1.0, 0.5)
    adj_crude = cell_pair_weight((0.5, 0.5), (1.5, 0.5), 1.0, 0.5, spec)
    assert abs(adj_crude - adj_full) / adj_full > 0.4


def test_midpoint_leaf_rule_is_biased_on_touching_pairs():
    # documents why the scaling closure is the default: the raw midpoint
    # leaves at the depth cap miss a few percent of the singular mass
    exact = _kappa_1d_exact(1, 0.5)
    mid = QuadratureSpec(leaf_rule="midpoint")
    got = lattice_offset_interactions(1.0, np.array([[1]]), 0.5, mid, d=1)[0]
    rel = abs(got - exact) / exact
    assert 0.005 < rel < 0.2
    closed = lattice_offset_interactions(1.0, np.array([[1]]), 0.5, d=1)[0]
    assert abs(closed - exact) / exact < 1e-4


def test_alpha_domain_errors():
    g = build_grid(4, d=1)
    for bad in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(ValueError, match="alpha"):
            tabulate_kernel(g, bad, None)
        with pytest.raises(ValueError, match="alpha"):
            frac_perimeter_1d_exact(1.0, bad)
    with pytest.raises(ValueError):
        frac_perimeter_1d_exact(0.0, 0.5)


def test_self_pair_rejected():
    with pytest.raises(SelfPairError):
        cell_pair_weight((0.5, 0.5), (0.5, 0.5), 1.0, 0.5)
    with pytest.raises(SelfPairError):
        lattice_offset_interactions(1.0, np.array([(0, 0)]), 0.5)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(gauss_order=0)
    with pytest.raises(ValueError):
        QuadratureSpec(near_field_levels=0)
    with pytest.raises(ValueError):
        QuadratureSpec(rel_tol=0.5)
    with pytest.raises(ValueError):
        QuadratureSpec(leaf_rule="trapezoid")


def test_grid_mismatch_rejected():
    g = build_grid(5, exterior_band=1)
    tab = tabulate_kernel(g, 0.5, g.h)
    other = build_grid(6)
    with pytest.raises(ValueError, match="grid"):
        frac_perimeter(CellSet.empty(other), tab)
