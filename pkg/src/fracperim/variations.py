"""Local variations f_t = I + t*phi and first-variation formulas.

Verification surface for the stationarity theory.  Sets here live on a fine
midpoint sample lattice decoupled from the control grid, as occupancy values
in [0, 1]: analytic test sets carry their profile so a deformed set is the
exact composition u(g_t(x)) at the sample centers, which keeps every
quantity smooth in t (binary resampling would quantize displacements far
below the lattice spacing).  On indicator occupancies all formulas reduce to
the set versions.

The sampled interaction energy used throughout this module is the one-sided
form

    G(E) = int_E int_{E^c} |x - y|^(-(d+alpha)),

whose derivative along f_t is exactly the first-variation kernel sum
L(E, phi) below; the doubled convention used by the solver-side tables is
twice this.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .kernel import DEFAULT_QUAD, QuadratureSpec, UntruncatedGridKernel

__all__ = [
    "StepTooLargeError",
    "VelocityField",
    "bump_field",
    "SampledSet",
    "SampledKernel",
    "deform_set",
    "sampled_interaction_energy",
    "first_variation_L_alpha",
    "linearized_objective_variation",
    "stationarity_residual",
    "sym_diff_bound_ratio",
    "variation_kernel_C",
]


class StepTooLargeError(ValueError):
    """|t| * Lip(phi) >= 1/2: the variation may fail to be invertible."""


@dataclass(frozen=True)
class VelocityField:
    """Tensor-product bump a * exp(1 - 1/(1 - |x-c|^2 / rho^2)) inside B_rho(c).

    Value, Jacobian, and divergence are analytic; the Lipschitz constant is
    |a| * max|grad s| over the radial profile.
    """

    center: tuple[float, float]
    radius: float
    amplitude: tuple[float, float]
    _lip: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("bump radius must be positive")
        cx, cy = self.center
        r = self.radius
        if not (r <= cx <= 1 - r and r <= cy <= 1 - r):
            raise ValueError("bump support must sit strictly inside the unit domain")
        # |grad s| along a radius: s(q) * (1-q)^-2 * 2 sqrt(q) / rho, q = (r/rho)^2
        q = np.linspace(0.0, 1.0 - 1e-9, 20001)
        s = np.exp(1.0 - 1.0 / (1.0 - q))
        g = s * (1.0 - q) ** -2.0 * 2.0 * np.sqrt(q) / r
        amp = math.hypot(*self.amplitude)
        object.__setattr__(self, "_lip", amp * float(g.max()) * 1.0001)

    @property
    def lipschitz(self) -> float:
        return self._lip

    def _profile(self, x: np.ndarray):
        """Return (s, ds) with ds = grad s, broadcast over points x (..., 2)."""
        diff = x - np.asarray(self.center)
        q = (diff**2).sum(axis=-1) / self.radius**2
        inside = q < 1.0 - 1e-12  # strict margin keeps (1-q)^-2 finite
        qs = np.where(inside, q, 0.0)
        s = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - qs)), 0.0)
        coef = np.where(inside, -s * (1.0 - qs) ** -2.0 * 2.0 / self.radius**2, 0.0)
        ds = coef[..., None] * diff
        return s, ds

    def value(self, x: np.ndarray) -> np.ndarray:
        s, _ = self._profile(np.asarray(x, dtype=float))
        return s[..., None] * np.asarray(self.amplitude)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """J[i, j] = d phi_i / d x_j = a_i * (grad s)_j."""
        _, ds = self._profile(np.asarray(x, dtype=float))
        return np.asarray(self.amplitude)[..., :, None] * ds[..., None, :]

    def divergence(self, x: np.ndarray) -> np.ndarray:
        _, ds = self._profile(np.asarray(x, dtype=float))
        return ds @ np.asarray(self.amplitude)


def bump_field(center, radius, amplitude) -> VelocityField:
    return VelocityField(tuple(center), float(radius), tuple(amplitude))


def variation_kernel_C(x, y, phi: VelocityField, alpha: float) -> np.ndarray:
    """C(x,y) = div phi(x) + div phi(y) - (d+alpha)(x-y).(phi(x)-phi(y))/|x-y|^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    r2 = (diff**2).sum(axis=-1)
    dphi = phi.value(x) - phi.value(y)
    cross = (diff * dphi).sum(axis=-1)
    return phi.divergence(x) + phi.divergence(y) - (2.0 + alpha) * cross / r2


# ---------------------------------------------------------------------------
# sampled sets


@dataclass(frozen=True)
class SampledSet:
    """Occupancy on an m x m midpoint lattice over the unit square.

    occupancy[iy, ix] in [0, 1]; profile, when present, is the analytic
    occupancy function the samples came from (used for exact deformation).
    """

    m: int
    occupancy: np.ndarray
    profile: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        occ = np.ascontiguousarray(self.occupancy, dtype=np.float64)
        if occ.shape != (self.m, self.m):
            raise ValueError(f"occupancy shape {occ.shape} != {(self.m, self.m)}")
        if occ.min() < -1e-12 or occ.max() > 1.0 + 1e-12:
            raise ValueError("occupancy values must lie in [0, 1]")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @property
    def h(self) -> float:
        return 1.0 / self.m

    def centers(self) -> np.ndarray:
        ax = (np.arange(self.m) + 0.5) / self.m
        xx, yy = np.meshgrid(ax, ax, indexing="xy")
        return np.stack([xx, yy], axis=-1)  # (m, m, 2): [iy, ix] -> (x, y)

    def membership(self) -> np.ndarray:
        return self.occupancy >= 0.5

    def volume(self) -> float:
        return float(self.occupancy.sum()) / self.m**2

    @staticmethod
    def from_profile(m: int, profile: Callable[[np.ndarray], np.ndarray]) -> "SampledSet":
        ax = (np.arange(m) + 0.5) / m
        xx, yy = np.meshgrid(ax, ax, indexing="xy")
        pts = np.stack([xx, yy], axis=-1)
        occ = np.clip(np.asarray(profile(pts), dtype=float), 0.0, 1.0)
        return SampledSet(m, occ, profile)

    @staticmethod
    def from_indicator(m: int, indicator: Callable[[np.ndarray], np.ndarray]) -> "SampledSet":
        return SampledSet.from_profile(m, lambda x: np.asarray(indicator(x), dtype=float))

    @staticmethod
    def disk(m: int, center=(0.5, 0.5), radius=0.3, smoothing: float = 0.0) -> "SampledSet":
        """Disk indicator; smoothing > 0 mollifies the edge over that width."""
        cx, cy = center

        def profile(x):
            r = np.sqrt((x[..., 0] - cx) ** 2 + (x[..., 1] - cy) ** 2)
            if smoothing == 0.0:
                return (r < radius).astype(float)
            z = np.clip((radius - r) / smoothing + 0.5, 0.0, 1.0)
            # quintic smoothstep: C^2 at the band edges, so the sampled energy
            # stays twice differentiable along deformation paths
            return z * z * z * (z * (6.0 * z - 15.0) + 10.0)

        return SampledSet.from_profile(m, profile)


def _inverse_points(x: np.ndarray, phi: VelocityField, t: float) -> np.ndarray:
    """g_t(x) solving y + t phi(y) = x, by fixed-point iteration y <- x - t phi(y)."""
    y = x.copy()
    for _ in range(100):
        y_next = x - t * phi.value(y)
        delta = np.abs(y_next - y).max()
        y = y_next
        if delta < 1e-12:
            return y
    raise RuntimeError("inverse map iteration failed to converge")  # pragma: no cover


def deform_set(e: SampledSet, phi: VelocityField, t: float) -> SampledSet:
    """Push the set through f_t = I + t*phi, sampled at cell centers.

    With an analytic profile the result is the exact composition u(g_t(x));
    otherwise membership falls back to nearest-sample-cell lookup in e.
    """
    if abs(t) * phi.lipschitz >= 0.5:
        raise StepTooLargeError(
            f"|t|*Lip(phi) = {abs(t) * phi.lipschitz:.3g} >= 1/2; the map may fold"
        )
    if t == 0.0:
        return e
    pts = e.centers().reshape(-1, 2)
    src = _inverse_points(pts, phi, t)
    if e.profile is not None:
        old = e.profile

        def moved_profile(x):
            flat = np.asarray(x, dtype=float).reshape(-1, 2)
            return np.asarray(old(_inverse_points(flat, phi, t))).reshape(
                np.asarray(x).shape[:-1]
            )

        occ = np.clip(np.asarray(old(src), dtype=float), 0.0, 1.0).reshape(e.m, e.m)
        return SampledSet(e.m, occ, moved_profile)
    ij = np.clip(np.floor(src * e.m).astype(int), 0, e.m - 1)
    inside = (src >= 0.0).all(axis=1) & (src <= 1.0).all(axis=1)
    occ = np.where(inside, e.occupancy[ij[:, 1], ij[:, 0]], 0.0).reshape(e.m, e.m)
    return SampledSet(e.m, occ)


# ---------------------------------------------------------------------------
# sampled energies


class SampledKernel:
    """Pairwise lattice weights for the sample grid, with exterior closure.

    Wraps the untruncated kernel image: kappa for every lattice offset, the
    per-cell exterior weight beta (total interaction with the complement of
    the domain), and a centered-difference gradient of beta used for the
    exterior part of the first variation.
    """

    def __init__(self, m: int, alpha: float, quad: QuadratureSpec = DEFAULT_QUAD):
        self._uk = UntruncatedGridKernel(m, alpha, quad)
        self.m = m
        self.alpha = alpha
        ones = np.ones((m, m))
        row_sums = fftconvolve(ones, self._uk._kimage, mode="same")
        self.beta = self._uk.t_half - row_sums  # (m, m), exact by tiling identity
        gx = np.zeros((m, m))
        gy = np.zeros((m, m))
        gx[:, 1:-1] = (self.beta[:, 2:] - self.beta[:, :-2]) * 0.5 * m
        gy[1:-1, :] = (self.beta[2:, :] - self.beta[:-2, :]) * 0.5 * m
        self._grad_beta = np.stack([gx, gy], axis=-1)

    @property
    def kimage(self) -> np.ndarray:
        return self._uk._kimage

    def pair_window(self, iy: int, ix: int) -> np.ndarray:
        """kappa between cell (iy, ix) and every cell, as an (m, m) view."""
        m = self.m
        return self._uk._kimage[m - 1 - iy : 2 * m - 1 - iy, m - 1 - ix : 2 * m - 1 - ix]


def sampled_interaction_energy(e: SampledSet, kern: SampledKernel) -> float:
    """G(E) = int_E int_{E^c} k, extended to occupancies via |u(x) - u(y)| / 2.

    For binary occupancy this is exactly half the doubled-convention
    perimeter of the solver-side tables.
    """
    if e.m != kern.m:
        raise ValueError("sample resolutions differ")
    u = e.occupancy
    m = e.m
    kim = kern.kimage
    total = 0.0
    # unordered interior pairs, grouped by offset (half plane of offsets)
    for dy in range(0, m):
        for dx in range(-(m - 1), m):
            if dy == 0 and dx <= 0:
                continue
            k = kim[m - 1 + dy, m - 1 + dx]
            if dx >= 0:
                diff = np.abs(u[: m - dy, : m - dx or None] - u[dy:, dx:])
            else:
                diff = np.abs(u[: m - dy, -dx:] - u[dy:, :dx])
            total += k * float(diff.sum())
    total += float((np.abs(u) * kern.beta).sum())
    return total


def first_variation_L_alpha(
    e: SampledSet, phi: VelocityField, kern: SampledKernel
) -> float:
    """L(E, phi) = int_E int_{E^c} C(x,y) |x-y|^-(d+alpha), occupancy-weighted.

    Pair sums run only over pairs with an endpoint in supp phi (C vanishes
    elsewhere); interactions with the domain exterior contribute
    div phi(x) * beta(x) + phi(x) . grad_x beta(x) exactly, since the
    exterior sees phi = 0.
    """
    if e.m != kern.m:
        raise ValueError("sample resolutions differ")
    m = e.m
    alpha = kern.alpha
    u = e.occupancy
    pts = e.centers()
    phi_vals = phi.value(pts)
    divs = phi.divergence(pts)
    active = (phi_vals[..., 0] != 0) | (phi_vals[..., 1] != 0) | (divs != 0)
    act_idx = np.argwhere(active)  # rows (iy, ix)
    xs = pts[..., 0]
    ys = pts[..., 1]
    total = 0.0
    in_s = active
    for iy, ix in act_idx:
        k_row = kern.pair_window(iy, ix)
        du = np.abs(u - u[iy, ix])
        dx = xs[iy, ix] - xs
        dy = ys[iy, ix] - ys
        r2 = dx * dx + dy * dy
        r2[iy, ix] = 1.0  # self pair excluded via k_row center = 0
        dpx = phi_vals[iy, ix, 0] - phi_vals[..., 0]
        dpy = phi_vals[iy, ix, 1] - phi_vals[..., 1]
        c = divs[iy, ix] + divs - (2.0 + alpha) * (dx * dpx + dy * dpy) / r2
        contrib = du * c * k_row
        # summing over i in S and all j counts S-S pairs twice and S-other
        # pairs once, which after halving the S-S block equals the half-sum
        # over all ordered pairs (C vanishes outside S)
        total += float(contrib.sum()) - 0.5 * float(contrib[in_s].sum())
    # exterior: u = 0 and phi = 0 outside the domain, so
    # sum_ext C*kappa = div phi(x) * beta(x) + phi(x) . grad beta(x)
    ext = np.abs(u) * (divs * kern.beta + (phi_vals * kern._grad_beta).sum(axis=-1))
    total += float(ext.sum())
    return total


def linearized_objective_variation(
    g: np.ndarray, e: SampledSet, phi: VelocityField
) -> float:
    """Midpoint approximation of int_E div(g phi) = int_E (grad g . phi + g div phi).

    g is sampled at the cell centers of e's lattice; grad g by centered
    differences (one-sided at the domain edge).
    """
    g = np.asarray(g, dtype=float)
    m = e.m
    if g.shape != (m, m):
        raise ValueError(f"field shape {g.shape} != {(m, m)}")
    pts = e.centers()
    gx = np.gradient(g, 1.0 / m, axis=1)
    gy = np.gradient(g, 1.0 / m, axis=0)
    phi_vals = phi.value(pts)
    integrand = gx * phi_vals[..., 0] + gy * phi_vals[..., 1] + g * phi.divergence(pts)
    return float((e.occupancy * integrand).sum()) / m**2


def stationarity_residual(
    levels: Sequence[tuple[float, SampledSet]],
    g: np.ndarray,
    phis: Sequence[VelocityField],
    kern: SampledKernel,
) -> np.ndarray:
    """Per-phi residual sum_i w_i * (int_{E_i} div(g phi) + L(E_i, phi)).

    levels are (value, level set) pairs forming a partition; a stationary
    control makes every entry vanish.
    """
    occ_total = sum(e.occupancy for _, e in levels)
    if np.abs(occ_total - 1.0).max() > 1e-9:
        raise ValueError("level sets do not partition the domain")
    out = np.zeros(len(phis))
    for k, phi in enumerate(phis):
        acc = 0.0
        for w, e in levels:
            if w == 0.0:
                continue
            acc += w * (
                linearized_objective_variation(g, e, phi) + first_variation_L_alpha(e, phi, kern)
            )
        out[k] = acc
    return out


def sym_diff_bound_ratio(
    e: SampledSet,
    phi: VelocityField,
    kern: SampledKernel,
    t_values: Sequence[float],
) -> tuple[float, list[float]]:
    """Ratios lambda(f_t(E) sym-diff E) / (|t|^alpha * G(E)) over a t grid.

    Returns (max ratio, per-t list).  Finiteness of the max as t decreases is
    the testable content of the |t|^alpha bound.
    """
    ts = list(t_values)
    if any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
        raise ValueError("t values must be positive and strictly decreasing")
    base = sampled_interaction_energy(e, kern)
    ratios = []
    for t in ts:
        moved = deform_set(e, phi, t)
        lam = float(np.abs(moved.occupancy - e.occupancy).sum()) / e.m**2
        ratios.append(lam / (t**kern.alpha * base))
    return max(ratios), ratios
