"""Batch front end: solve runs, recovery sweeps, and diagnostics.

Subcommands: solve, gamma-sweep, grad-check, subproblem, variation-check,
kernel-table.  Exit codes: 0 success, 1 property-check failure, 2 usage
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

import numpy as np

from .config import ConfigError, RunConfig, load_run_config, save_run_config
from .grid import BINARY_LABELS, CellSet, ControlField, Grid, build_grid
from .kernel import (
    KernelTable,
    UntruncatedGridKernel,
    kernel_cache_path,
    load_kernel_table,
    regularizer_Ralpha,
    save_kernel_table,
    tabulate_kernel,
)
from .pde import PoissonMesh, disk_target, tracking_value_and_gradient
from .perimeter import grid_perimeter, limit_spec_for_dim
from .subproblem import (
    SubproblemInstance,
    load_instance,
    predicted_reduction,
    save_instance,
    solve_subproblem_exact,
)
from .trust_region import (
    LimitRegularizer,
    NonlocalRegularizer,
    TrackingObjective,
    TrustRegionParams,
    run_trust_region,
    write_control_pgm,
    write_iteration_csv,
)
from . import variations

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


class UsageError(ValueError):
    """Bad invocation or input file; maps to exit code 2."""


def _float_s(x: float) -> str:
    return format(float(x), ".17g")


def _load_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig().validate()
    try:
        return load_run_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except ConfigError as e:
        raise UsageError(f"config: {e}") from None


def _out_dir(args, config: RunConfig) -> str:
    out = args.out if args.out else config.output.directory
    os.makedirs(out, exist_ok=True)
    return out


def _problem_table(config: RunConfig) -> KernelTable:
    """Tabulated kernel for the configured grid, through the cache if set."""
    disc = config.discretization
    grid = build_grid(disc.n, exterior_band=config.band_cells())
    alpha = float(config.problem.alpha)
    trunc = config.kernel.truncation_multiplier * grid.h
    quad = config.kernel.quadrature()
    cache_dir = config.kernel.cache_dir
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = kernel_cache_path(cache_dir, grid, alpha, trunc, quad)
        if os.path.exists(path):
            return load_kernel_table(path)
        table = tabulate_kernel(grid, alpha, trunc, quad)
        save_kernel_table(table, path)
        return table
    return tabulate_kernel(grid, alpha, trunc, quad)


def _start_control(config: RunConfig, grid: Grid) -> ControlField:
    idx = 0 if config.trust_region.start == "empty" else 1
    return ControlField.constant(grid, BINARY_LABELS, idx)


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    disc = config.discretization
    mesh = PoissonMesh(disc.n, disc.rho)
    target = disk_target(mesh, config.problem.nu,
                         tuple(config.problem.target.center),
                         config.problem.target.radius)
    objective = TrackingObjective(mesh, config.problem.nu, target)
    if config.problem.limit_mode:
        grid = build_grid(disc.n, exterior_band=config.band_cells())
        regularizer = LimitRegularizer(grid)
    else:
        table = _problem_table(config)
        grid = table.grid
        regularizer = NonlocalRegularizer(table)
    tr_cfg = config.trust_region
    params = TrustRegionParams(
        delta0=tr_cfg.delta0, sigma=tr_cfg.sigma, min_radius=tr_cfg.min_radius,
        max_outer=tr_cfg.max_outer, pred_tol=tr_cfg.pred_tol,
        node_budget=tr_cfg.node_budget, time_budget=tr_cfg.time_budget,
    )
    w0 = _start_control(config, grid)
    w, log = run_trust_region(
        objective, regularizer, config.problem.eta, params, w0,
        record_timings=config.output.record_timings,
    )
    formats = config.output.formats
    if "csv" in formats:
        write_iteration_csv(log, os.path.join(out, "iterations.csv"))
    if "pgm" in formats:
        write_control_pgm(w, os.path.join(out, "control.pgm"))
    if "json" in formats:
        vals = w.values()
        f_val, _ = objective.value_and_gradient(vals)
        r_val = regularizer.energy(w)
        summary = {
            "termination_reason": log.reason,
            "accepted_steps": log.accepted_count,
            "solved_subproblems": len(log.rows),
            "final_F": f_val,
            "final_R": r_val,
            "final_J": f_val + config.problem.eta * r_val,
            "final_cells_set": int(vals.sum()),
            "mode": "limit" if config.problem.limit_mode else "fractional",
        }
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"{log.reason} after {log.accepted_count} accepted steps "
          f"({len(log.rows)} subproblems); outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gamma-sweep


def _square_masks(m: int, side: float):
    """Centered axis-aligned square of the given side on an m x m sample grid."""
    if not 0 < side <= 1:
        raise UsageError(f"square side {side} outside (0, 1]")
    cells = side * m
    if abs(cells - round(cells)) > 1e-9:
        raise UsageError(
            f"side {side} is not exactly representable with m={m} cells"
        )
    cells = int(round(cells))
    lo = (m - cells) // 2
    if 2 * lo + cells != m:
        raise UsageError(f"side {side} cannot be centered on an m={m} grid")
    mask = np.zeros((m, m), dtype=bool)
    mask[lo:lo + cells, lo:lo + cells] = True
    return mask


def cmd_gamma_sweep(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    alphas = sorted(float(a) for a in args.alphas)
    for a in alphas:
        if not 0 < a < 1:
            raise UsageError(f"alpha {a} outside (0,1)")
    m = args.m
    side = args.side
    mask = _square_masks(m, side)
    # classical reference: edge length of the square, doubled by the
    # one-dimensional angular constant
    sample = build_grid(m)
    per = grid_perimeter(CellSet(sample, mask.reshape(-1)))
    omega = limit_spec_for_dim(2).omega
    reference = omega * per
    quad = config.kernel.quadrature()
    lines = ["alpha,scaled_nonlocal,reference,deviation"]
    for a in alphas:
        kern = UntruncatedGridKernel(m, a, quad)
        value = (1.0 - a) * kern.perimeter(mask)
        dev = abs(value - reference) / reference if reference else abs(value)
        lines.append(f"{_float_s(a)},{_float_s(value)},{_float_s(reference)},"
                     f"{_float_s(dev)}")
    path = os.path.join(out, "gamma_sweep.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grad-check


def cmd_grad_check(args) -> int:
    config = _load_config(args)
    disc = config.discretization
    mesh = PoissonMesh(disc.n, disc.rho)
    nu = config.problem.nu
    target = disk_target(mesh, nu, tuple(config.problem.target.center),
                         config.problem.target.radius)
    rng = np.random.default_rng(args.seed)
    base = rng.random((disc.n, disc.n))
    _, grad = tracking_value_and_gradient(base, target, nu, mesh)
    cell_vol = 1.0 / disc.n**2
    eps = 1e-4
    worst = 0.0
    for _ in range(args.samples):
        d = rng.standard_normal((disc.n, disc.n))
        d /= np.abs(d).max()
        fp = tracking_value_and_gradient(base + eps * d, target, nu, mesh)[0]
        fm = tracking_value_and_gradient(base - eps * d, target, nu, mesh)[0]
        fd = (fp - fm) / (2 * eps)
        pairing = float((grad * d).sum()) * cell_vol
        denom = max(abs(fd), abs(pairing), 1e-300)
        worst = max(worst, abs(fd - pairing) / denom)
    print(f"max relative gradient error over {args.samples} directions: "
          f"{worst:.3e}")
    return EXIT_OK if worst <= 1e-4 else EXIT_PROPERTY


# ---------------------------------------------------------------------------
# subproblem


def cmd_subproblem(args) -> int:
    try:
        header, costs, center, table_ref = load_instance(args.instance)
    except FileNotFoundError:
        raise UsageError(f"instance file not found: {args.instance}") from None
    except (ValueError, IndexError) as e:
        raise UsageError(f"instance file: {e}") from None
    table_path = table_ref
    if not os.path.isabs(table_path):
        table_path = os.path.join(os.path.dirname(os.path.abspath(args.instance)),
                                  table_ref)
    try:
        table = load_kernel_table(table_path)
    except FileNotFoundError:
        raise UsageError(f"kernel table not found: {table_path}") from None
    except ValueError as e:
        raise UsageError(str(e)) from None
    if table.grid.n != header["n"]:
        raise UsageError(
            f"instance n={header['n']} does not match table n={table.grid.n}"
        )
    inst = SubproblemInstance.from_kernel_table(
        table, costs, header["eta"], center, header["radius"]
    )
    sol = solve_subproblem_exact(inst)
    out_path = args.solution or (args.instance + ".solution")
    lines = [
        f"objective {_float_s(sol.objective)}",
        f"pred {_float_s(predicted_reduction(sol))}",
        f"gap {_float_s(sol.gap)}",
        f"certificate {sol.certificate}",
        "assignment " + " ".join(str(int(v)) for v in sol.minimizer),
    ]
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {out_path} ({sol.certificate}, objective "
          f"{sol.objective:.6e})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# variation-check


def cmd_variation_check(args) -> int:
    config = _load_config(args)
    out = _out_dir(args, config)
    m = args.m
    alpha = args.alpha
    kern = variations.SampledKernel(m, alpha)
    disk = variations.SampledSet.disk(m, (0.5, 0.5), 0.3, smoothing=0.05)
    t_values = (1e-2, 1e-3, 1e-4)
    cases = [
        ("zero_amplitude", variations.bump_field((0.78, 0.5), 0.18, (0.0, 0.0))),
        ("off_axis_bump", variations.bump_field((0.78, 0.5), 0.18, (3.0, 0.0))),
    ]
    lines = ["case,t,first_variation_quotient,sym_diff_ratio"]
    failures = 0
    for name, phi in cases:
        base = variations.sampled_interaction_energy(disk, kern)
        l_val = variations.first_variation_L_alpha(disk, phi, kern)
        _, ratios = variations.sym_diff_bound_ratio(disk, phi, kern, t_values)
        quotients = []
        for t, ratio in zip(t_values, ratios):
            moved = variations.deform_set(disk, phi, t)
            g_t = variations.sampled_interaction_energy(moved, kern)
            # doubled convention on both the energy and its variation
            q = 2.0 * abs((g_t - base) - t * l_val) / abs(t)
            quotients.append(q)
            lines.append(f"{name},{_float_s(t)},{_float_s(q)},{_float_s(ratio)}")
        if name == "zero_amplitude":
            if any(q > 1e-12 for q in quotients):
                failures += 1
        else:
            if not all(b < a for a, b in zip(quotients, quotients[1:])):
                failures += 1
            finite = [r for r in ratios if r > 0]
            if finite and max(finite) / min(finite) > 10.0:
                failures += 1
    path = os.path.join(out, "variation_check.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {path}; {failures} failed checks")
    return EXIT_OK if failures == 0 else EXIT_PROPERTY


# ---------------------------------------------------------------------------
# kernel-table


def cmd_kernel_table(args) -> int:
    config = _load_config(args)
    if config.problem.limit_mode:
        raise UsageError("kernel tabulation needs a fractional alpha, not 'limit'")
    if not config.kernel.cache_dir:
        raise UsageError("kernel.cache_dir must be set to tabulate ahead of time")
    table = _problem_table(config)
    path = kernel_cache_path(
        config.kernel.cache_dir, table.grid, table.alpha,
        table.truncation_radius, table.quad,
    )
    print(f"tabulated {table.pair_i.size} pairs -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def _add_common(p, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="YAML configuration file")
    p.add_argument("--out", default=d, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                   help="seed for sampled checks")
    p.add_argument("--threads", type=int, default=d,
                   help="thread cap for numeric kernels (best effort)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fracperim",
        description="Binary control with nonlocal interfacial regularization",
    )
    _add_common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        # the shared flags are accepted before or after the subcommand;
        # SUPPRESS keeps an absent trailing flag from clobbering a leading one
        sp = sub.add_parser(name, **kw)
        _add_common(sp, suppress=True)
        return sp

    add("solve", help="run the trust-region descent").set_defaults(func=cmd_solve)

    g = add("gamma-sweep", help="limit recovery of the scaled energy")
    g.add_argument("--m", type=int, default=128, help="sample cells per side")
    g.add_argument("--side", type=float, default=0.5, help="square side length")
    g.add_argument("--alphas", nargs="+", type=float,
                   default=[0.5, 0.7, 0.9, 0.95])
    g.set_defaults(func=cmd_gamma_sweep)

    c = add("grad-check", help="finite-difference gradient audit")
    c.add_argument("--samples", type=int, default=20)
    c.set_defaults(func=cmd_grad_check)

    s = add("subproblem", help="solve one step instance file")
    s.add_argument("instance", help="instance file path")
    s.add_argument("--solution", help="solution output path")
    s.set_defaults(func=cmd_subproblem)

    v = add("variation-check", help="first-variation diagnostics")
    v.add_argument("--m", type=int, default=128)
    v.add_argument("--alpha", type=float, default=0.75)
    v.set_defaults(func=cmd_variation_check)

    k = add("kernel-table", help="tabulate and cache the kernel")
    k.set_defaults(func=cmd_kernel_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    if args.threads is not None:
        if args.threads < 1:
            print("--threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
