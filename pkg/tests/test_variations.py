"""Tests for local variations: deformation maps, first-variation sums, bounds."""

import numpy as np
import pytest

from fracperim.variations import (
    SampledKernel,
    SampledSet,
    StepTooLargeError,
    VelocityField,
    bump_field,
    deform_set,
    first_variation_L_alpha,
    linearized_objective_variation,
    sampled_interaction_energy,
    stationarity_residual,
    sym_diff_bound_ratio,
    variation_kernel_C,
)
from fracperim.kernel import UntruncatedGridKernel


def _smooth_halfplane(m: int, edge: float = 0.5, width: float = 0.08) -> SampledSet:
    def profile(x):
        z = np.clip((edge - x[..., 0]) / width + 0.5, 0.0, 1.0)
        return z * z * z * (z * (6.0 * z - 15.0) + 10.0)

    return SampledSet.from_profile(m, profile)


# ---------------------------------------------------------------------------
# deformation map


def test_deform_identity_at_t_zero():
    e = SampledSet.disk(64, radius=0.3, smoothing=0.05)
    phi = bump_field((0.6, 0.5), 0.2, (1.0, 0.5))
    out = deform_set(e, phi, 0.0)
    assert np.array_equal(out.occupancy, e.occupancy)


def test_deform_zero_amplitude_is_identity():
    e = SampledSet.disk(64, radius=0.25, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.3, (0.0, 0.0))
    for t in (-0.3, 1e-3, 0.2):
        out = deform_set(e, phi, t)
        assert np.array_equal(out.occupancy, e.occupancy)


def test_deform_halfplane_changes_confined_to_support():
    # the map is the identity outside supp phi, so membership flips only there
    m = 96
    e = SampledSet.from_indicator(m, lambda x: x[..., 0] < 0.5)
    phi = bump_field((0.5, 0.5), 0.2, (0.8, 0.0))
    out = deform_set(e, phi, 0.02)
    changed = out.membership() != e.membership()
    pts = e.centers()
    inside_supp = np.hypot(pts[..., 0] - 0.5, pts[..., 1] - 0.5) < 0.2
    assert changed.any()  # the push actually moves the interface
    assert not (changed & ~inside_supp).any()


def test_deform_step_too_large_raises():
    e = SampledSet.disk(32, radius=0.3, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.2, (1.0, 0.0))
    t_bad = 0.51 / phi.lipschitz
    with pytest.raises(StepTooLargeError):
        deform_set(e, phi, t_bad)
    # just under the guard is fine
    deform_set(e, phi, 0.49 / phi.lipschitz)


def test_deform_preserves_partitions():
    m = 64
    a = _smooth_halfplane(m)

    def complement(x):
        z = np.clip((0.5 - x[..., 0]) / 0.08 + 0.5, 0.0, 1.0)
        return 1.0 - z * z * z * (z * (6.0 * z - 15.0) + 10.0)

    b = SampledSet.from_profile(m, complement)
    phi = bump_field((0.5, 0.5), 0.25, (0.7, -0.4))
    for t in (0.01, -0.005):
        total = deform_set(a, phi, t).occupancy + deform_set(b, phi, t).occupancy
        assert np.abs(total - 1.0).max() < 1e-12


# ---------------------------------------------------------------------------
# velocity fields


def test_bump_divergence_is_jacobian_trace():
    rng = np.random.default_rng(11)
    phi = bump_field((0.55, 0.45), 0.3, (1.3, -0.7))
    pts = rng.uniform(0.2, 0.8, size=(500, 2))
    jac = phi.jacobian(pts)
    assert np.allclose(np.trace(jac, axis1=-2, axis2=-1), phi.divergence(pts), atol=1e-13)


def test_bump_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    phi = bump_field((0.5, 0.55), 0.25, (0.9, 0.4))
    pts = rng.uniform(0.3, 0.7, size=(200, 2))
    h = 1e-6
    jac = phi.jacobian(pts)
    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        fd = (phi.value(pts + step) - phi.value(pts - step)) / (2 * h)
        assert np.allclose(fd, jac[..., :, j], rtol=1e-5, atol=1e-7)


def test_bump_vanishes_outside_support():
    phi = bump_field((0.5, 0.5), 0.2, (2.0, 1.0))
    pts = np.array([[0.71, 0.5], [0.5, 0.72], [0.9, 0.9], [0.5, 0.7]])
    assert np.all(phi.value(pts) == 0.0)
    assert np.all(phi.jacobian(pts) == 0.0)
    assert np.all(phi.divergence(pts) == 0.0)


def test_bump_support_must_fit_in_domain():
    with pytest.raises(ValueError):
        bump_field((0.95, 0.5), 0.2, (1.0, 0.0))
    with pytest.raises(ValueError):
        bump_field((0.5, 0.5), 0.0, (1.0, 0.0))


def test_variation_kernel_C_symmetric_and_bounded():
    rng = np.random.default_rng(7)
    for seed in range(5):
        r = np.random.default_rng(seed)
        amp = tuple(r.uniform(-1.5, 1.5, size=2))
        phi = bump_field((0.55, 0.6), 0.25, amp)
        x = rng.uniform(0, 1, size=(2000, 2))
        y = rng.uniform(0, 1, size=(2000, 2))
        keep = np.linalg.norm(x - y, axis=1) > 1e-9
        x, y = x[keep], y[keep]
        c_xy = variation_kernel_C(x, y, phi, 0.5)
        c_yx = variation_kernel_C(y, x, phi, 0.5)
        assert np.allclose(c_xy, c_yx, atol=1e-12)
        # the uniform bound from the variation formula's proof
        grid = rng.uniform(0, 1, size=(50000, 2))
        bound = 2 * np.abs(phi.divergence(grid)).max() + 2.5 * phi.lipschitz
        assert np.abs(c_xy).max() <= bound


# ---------------------------------------------------------------------------
# first variation of the interaction energy


def test_first_variation_zero_field_is_zero():
    kern = SampledKernel(32, 0.5)
    e = SampledSet.disk(32, radius=0.3, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.3, (0.0, 0.0))
    assert first_variation_L_alpha(e, phi, kern) == 0.0


def test_first_variation_empty_set_is_zero():
    kern = SampledKernel(32, 0.5)
    e = SampledSet.from_profile(32, lambda x: np.zeros(x.shape[:-1]))
    phi = bump_field((0.5, 0.5), 0.3, (1.0, 0.0))
    assert first_variation_L_alpha(e, phi, kern) == 0.0


def test_first_variation_full_domain_nearly_zero():
    # phi is compactly supported, so deforming the full domain changes nothing;
    # the sampled value vanishes up to midpoint discretization error
    kern = SampledKernel(128, 0.5)
    e = SampledSet.from_profile(128, lambda x: np.ones(x.shape[:-1]))
    phi = bump_field((0.6, 0.45), 0.2, (1.5, -0.8))
    assert abs(first_variation_L_alpha(e, phi, kern)) < 1e-2


def test_first_variation_matches_central_difference_slope():
    # off-center bump so the variation does not vanish by symmetry
    m, alpha, t = 128, 0.5, 1e-3
    kern = SampledKernel(m, alpha)
    disk = SampledSet.disk(m, radius=0.3, smoothing=0.05)
    phi = bump_field((0.65, 0.5), 0.25, (2.0, 0.0))
    g_plus = sampled_interaction_energy(deform_set(disk, phi, t), kern)
    g_minus = sampled_interaction_energy(deform_set(disk, phi, -t), kern)
    slope = (g_plus - g_minus) / (2 * t)
    value = first_variation_L_alpha(disk, phi, kern)
    assert abs(slope - value) / abs(slope) < 0.05


def test_first_variation_quotient_decreases_along_t():
    # |G(t) - G(0) - t L| / t shrinks monotonically as the step vanishes
    m, alpha = 128, 0.75
    kern = SampledKernel(m, alpha)
    disk = SampledSet.disk(m, radius=0.3, smoothing=0.05)
    phi = bump_field((0.78, 0.5), 0.18, (3.0, 0.0))
    g0 = sampled_interaction_energy(disk, kern)
    value = first_variation_L_alpha(disk, phi, kern)
    quotients = []
    for t in (1e-2, 1e-3, 1e-4):
        gt = sampled_interaction_energy(deform_set(disk, phi, t), kern)
        quotients.append(abs(gt - g0 - t * value) / t)
    assert quotients[0] > quotients[1] > quotients[2]


def test_interaction_energy_consistent_with_grid_kernel():
    # on binary occupancies the sampled energy is half the doubled-form
    # perimeter computed by the grid kernel
    m = 32
    kern = SampledKernel(m, 0.5)
    e = SampledSet.disk(m, radius=0.3, smoothing=0.0)
    g = sampled_interaction_energy(e, kern)
    grid_kern = UntruncatedGridKernel(m, 0.5)
    p = grid_kern.perimeter(e.membership())
    assert abs(2 * g - p) < 1e-9 * p


# ---------------------------------------------------------------------------
# linearized objective variation


def test_linearized_zero_field_is_zero():
    e = SampledSet.disk(64, radius=0.3, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.3, (0.0, 0.0))
    assert linearized_objective_variation(np.ones((64, 64)), e, phi) == 0.0


def test_linearized_divergence_theorem():
    # E contains supp phi and g == 1: the integral of div phi vanishes
    e = SampledSet.disk(256, radius=0.45, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.2, (1.0, 0.7))
    val = linearized_objective_variation(np.ones((256, 256)), e, phi)
    assert abs(val) <= 1e-6


def test_linearized_matches_finite_difference_pairing():
    m = 128
    hp = _smooth_halfplane(m)
    pts = hp.centers()
    g = np.sin(np.pi * pts[..., 0]) * np.sin(np.pi * pts[..., 1])
    phi = bump_field((0.5, 0.5), 0.3, (0.9, 0.2))
    val = linearized_objective_variation(g, hp, phi)
    for t in (1e-2, 1e-3, 1e-4):
        moved = deform_set(hp, phi, t)
        pairing = float((g * (moved.occupancy - hp.occupancy)).sum()) / m**2
        assert abs(pairing / t - val) <= 0.01 * abs(val)
        # remainder is second order in t down to the sampling floor
        assert abs(pairing - t * val) <= 10.0 * t * t


def test_linearized_field_shape_validated():
    e = SampledSet.disk(32, radius=0.3, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.3, (1.0, 0.0))
    with pytest.raises(ValueError):
        linearized_objective_variation(np.ones((16, 16)), e, phi)


# ---------------------------------------------------------------------------
# stationarity residual


def test_stationarity_zero_weights_give_zero_residual():
    m = 64
    kern = SampledKernel(m, 0.5)
    a = _smooth_halfplane(m)
    b = SampledSet.from_profile(m, lambda x: 1.0 - a.occupancy.reshape(x.shape[:-1]))
    phis = [bump_field((0.5, 0.5), 0.25, (1.0, 0.0))]
    res = stationarity_residual([(0.0, a), (0.0, b)], np.ones((m, m)), phis, kern)
    assert np.all(res == 0.0)


def test_stationarity_zero_field_entry_is_zero():
    m = 64
    kern = SampledKernel(m, 0.5)
    full = SampledSet.from_profile(m, lambda x: np.ones(x.shape[:-1]))
    phis = [
        bump_field((0.5, 0.5), 0.25, (0.0, 0.0)),
        bump_field((0.6, 0.5), 0.2, (1.0, 0.0)),
    ]
    res = stationarity_residual([(1.0, full)], np.ones((m, m)), phis, kern)
    assert res[0] == 0.0
    assert res[1] != 0.0


def test_stationarity_single_level_reduces_to_first_variation():
    # with g == 1 the divergence integral drops out and the residual is L alone
    m = 96
    kern = SampledKernel(m, 0.5)
    full = SampledSet.from_profile(m, lambda x: np.ones(x.shape[:-1]))
    phi = bump_field((0.6, 0.45), 0.2, (1.5, -0.8))
    res = stationarity_residual([(1.0, full)], np.ones((m, m)), [phi], kern)
    want = first_variation_L_alpha(full, phi, kern)
    # the midpoint sum of div phi over the full domain vanishes only up to
    # O(h^2) quadrature error, which dominates the gap here
    assert abs(res[0] - want) < 1e-4


def test_stationarity_rejects_non_partition():
    m = 32
    kern = SampledKernel(m, 0.5)
    disk = SampledSet.disk(m, radius=0.3, smoothing=0.0)
    phis = [bump_field((0.5, 0.5), 0.25, (1.0, 0.0))]
    with pytest.raises(ValueError):
        stationarity_residual([(1.0, disk)], np.ones((m, m)), phis, kern)


# ---------------------------------------------------------------------------
# symmetric-difference bound


def test_sym_diff_zero_field_gives_zero_ratios():
    m = 64
    kern = SampledKernel(m, 0.75)
    disk = SampledSet.disk(m, radius=0.3, smoothing=0.05)
    phi = bump_field((0.5, 0.5), 0.25, (0.0, 0.0))
    mx, ratios = sym_diff_bound_ratio(disk, phi, kern, (1e-1, 1e-2))
    assert mx == 0.0
    assert ratios == [0.0, 0.0]


def test_sym_diff_ratios_stay_in_band():
    m = 128
    kern = SampledKernel(m, 0.75)
    disk = SampledSet.disk(m, radius=0.3, smoothing=0.05)
    phi = bump_field((0.78, 0.5), 0.18, (3.0, 0.0))
    mx, ratios = sym_diff_bound_ratio(disk, phi, kern, (1e-2, 1e-3, 1e-4))
    assert all(r > 0 for r in ratios)
    assert mx == max(ratios)
    assert max(ratios) / min(ratios) < 10.0


def test_sym_diff_validates_t_grid():
    m = 32
    kern = SampledKernel(m, 0.5)
    disk = SampledSet.disk(m, radius=0.3, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.25, (1.0, 0.0))
    with pytest.raises(ValueError):
        sym_diff_bound_ratio(disk, phi, kern, (1e-2, 1e-2))
    with pytest.raises(ValueError):
        sym_diff_bound_ratio(disk, phi, kern, (1e-3, 1e-2))
    with pytest.raises(ValueError):
        sym_diff_bound_ratio(disk, phi, kern, (0.0, -1e-3))


# ---------------------------------------------------------------------------
# sampled sets


def test_sampled_set_occupancy_range_validated():
    bad = np.full((16, 16), 1.5)
    with pytest.raises(ValueError):
        SampledSet(16, bad)
    bad2 = np.full((16, 16), -0.1)
    with pytest.raises(ValueError):
        SampledSet(16, bad2)


def test_disk_volume_and_membership():
    e = SampledSet.disk(128, radius=0.3, smoothing=0.0)
    assert abs(e.volume() - np.pi * 0.3**2) < 2e-3
    sm = SampledSet.disk(128, radius=0.3, smoothing=0.05)
    assert sm.occupancy.min() >= 0.0 and sm.occupancy.max() <= 1.0
    assert abs(sm.volume() - np.pi * 0.3**2) < 2e-3
    # membership thresholds the band at one half
    assert sm.membership().sum() < (sm.occupancy > 0).sum()


def test_kernel_resolution_mismatch_rejected():
    kern = SampledKernel(32, 0.5)
    e = SampledSet.disk(64, radius=0.3, smoothing=0.0)
    phi = bump_field((0.5, 0.5), 0.25, (1.0, 0.0))
    with pytest.raises(ValueError):
        first_variation_L_alpha(e, phi, kern)
    with pytest.raises(ValueError):
        sampled_interaction_energy(e, kern)
