"""Command line entry point: ``coupledwave sweep|svd|fbi|weights``.

Exit codes: 0 on success, 2 when a precondition refuses the run, 1 on a
runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import carleman, fbi
from .config import DEFAULT_CONFIG, ExperimentConfig, parse_config, parse_config_text
from .errors import CoupledWaveError, PreconditionError
from .experiments import (audit, build_problem, emit_report, run_noise_sweep,
                          weight_bookkeeping)
from .grid import build_cutoff_chi
from .inversion import build_linearized_map, forward, observe_setup, stability_svd
from .solver import build_UV_fields, solve_coupled_wave

EXIT_OK, EXIT_RUNTIME, EXIT_REFUSED = 0, 1, 2
# largest time frequency times h treated as resolved by the grid
RESOLVED_KH = 0.5
# largest change of the kernel phase lam^2 s / 2 between neighbouring s nodes
RESIDUAL_DPHASE = 0.2


def _r(v) -> str:
    return repr(float(v))


def _write_lines(path, lines: List[str]) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _check_lines(checks) -> List[str]:
    out = ["preconditions checked (margin):"]
    for c in checks:
        out.append(f"  [{'ok' if c.ok else 'FAIL'}] {c.name}: margin {c.margin:.6g}"
                   + (f" ({c.detail})" if c.detail else ""))
    return out


def _echo_config(cfg: ExperimentConfig, out: str) -> None:
    with open(os.path.join(out, "config_resolved.ini"), "w") as fh:
        fh.write(cfg.resolved_text())


def _export_truth(problem, args, out: str) -> None:
    if not (args.export_trajectory or args.export_observations):
        return
    traj = forward(problem.setup, *problem.truth)
    if args.export_trajectory:
        traj.to_csv(os.path.join(out, "trajectory.csv"))
    if args.export_observations:
        observe_setup(problem.setup, traj).to_csv(os.path.join(out, "observations.csv"))


def residual_lattice(lam: float, h: float, b: float):
    """Fine symmetric ``s`` lattice for the residual of the transformed system.

    The kernel at height ``s`` probes time frequency ``lam^2 |s| / 2``, so the
    lattice stops where that frequency leaves the band the grid resolves, and
    its spacing keeps the phase step below :data:`RESIDUAL_DPHASE`.
    """
    s_max = min(b, 2.0 * RESOLVED_KH / (lam**2 * h))
    n = max(2, int(math.ceil(s_max * lam**2 * s_max / (2.0 * RESIDUAL_DPHASE))))
    return s_max, np.linspace(-s_max, s_max, 2 * n + 1)


# subcommands ---------------------------------------------------------------------

def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    problem = build_problem(cfg)
    checks = audit(problem, weights=True)
    _export_truth(problem, args, args.out)
    export_dir = None
    if args.export_fields:
        export_dir = os.path.join(args.out, "runs")
        os.makedirs(export_dir, exist_ok=True)
    rows = run_noise_sweep(problem, jobs=args.jobs, export_dir=export_dir)
    emit_report(rows, cfg, args.out, checks)


def cmd_svd(cfg: ExperimentConfig, args) -> None:
    problem = build_problem(cfg)
    checks = audit(problem, weights=False)
    _export_truth(problem, args, args.out)
    bg = problem.background
    rep = stability_svd(build_linearized_map(problem.setup, *bg, jobs=args.jobs))
    # single-component variant: y1 only, no coupling from y1 into y2
    decoupled = replace(problem.setup, coeffs=replace(problem.coeffs, c21=0.0), coupling_c0=None)
    decoupled = decoupled.with_observation(components=("y1",))
    lmap = build_linearized_map(decoupled, *bg, jobs=args.jobs)
    rep0 = stability_svd(lmap)
    col22 = float(np.max(np.linalg.norm(lmap.block_c22, axis=0))) if lmap.n_basis else 0.0
    with open(os.path.join(args.out, "svd.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "index", "singular_value"])
        for name, r in (("coupled", rep), ("y1_only_decoupled", rep0)):
            for k, s in enumerate(r.singular_values):
                w.writerow([name, k, _r(s)])
    lines = _check_lines(checks) + [
        "",
        f"coupled map ({problem.setup.observation.region}, components "
        f"{','.join(problem.setup.observation.components)}): "
        f"sigma_min = {rep.sigma_min:.6g}, sigma_max = {rep.sigma_max:.6g}, cond = {rep.condition:.6g}",
        f"y1-only map with c21 = 0: sigma_max = {rep0.sigma_max:.6g}, "
        f"max |dc22 column| / sigma_max = {col22 / rep0.sigma_max if rep0.sigma_max > 0 else 0.0:.6g}",
    ]
    _write_lines(os.path.join(args.out, "summary.txt"), lines)


def cmd_weights(cfg: ExperimentConfig, args) -> None:
    problem = build_problem(cfg)
    checks = audit(problem, weights=True)
    wb = weight_bookkeeping(cfg, problem.layout)
    f = cfg["fbi"]
    s = np.linspace(-f["b"], f["b"], f["s_nodes"])
    nodes = np.flatnonzero(problem.layout.mask("omega"))
    rows = []
    for lam in f["lambdas"]:
        tau, zeta, L = carleman.tau_zeta_L(wb.levels, f["mu"], lam, f["b"], f["A"])
        params = carleman.CarlemanParams(f["mu"], wb.M, f["b"], f["b0"], f["A"], lam, zeta, wb.norm)
        ev = carleman.weight_eval(wb.psi_hat, params, s, nodes)
        ev.to_csv(os.path.join(args.out, f"weights_lambda_{lam!r}.csv"), nodes)
        rows.append((lam, zeta, float(ev.ell.max())))
    lv = wb.levels
    defect = carleman.tau_identity_defect(lv, f["mu"], wb.tau)
    with open(os.path.join(args.out, "weights.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for name, v in (("psi_hat_norm", wb.norm), ("beta1", wb.beta1), ("beta2", wb.beta2),
                        ("M_lo", wb.M_interval[0]), ("M_hi", wb.M_interval[1]), ("M", wb.M),
                        ("psi1", lv.psi1), ("psi2", lv.psi2), ("psi3", lv.psi3), ("psi4", lv.psi4),
                        ("tau", wb.tau), ("tau_identity_defect", defect), ("L", wb.L)):
            w.writerow([name, _r(v)])
        for lam, zeta, ell in rows:
            w.writerow([f"zeta_lambda_{lam!r}", _r(zeta)])
            w.writerow([f"max_log_theta_lambda_{lam!r}", _r(ell)])
    lines = _check_lines(checks) + [""] + [
        f"lambda = {lam:g}: zeta = {zeta:.6g}, max log theta = {ell:.6g}"
        + (" (theta not representable as a double)" if ell > carleman.LOG_THETA_MAX else "")
        for lam, zeta, ell in rows]
    _write_lines(os.path.join(args.out, "summary.txt"), lines)


def cmd_fbi(cfg: ExperimentConfig, args) -> None:
    problem = build_problem(cfg)
    checks = audit(problem, weights=True)
    wb = weight_bookkeeping(cfg, problem.layout)
    f = cfg["fbi"]
    window = fbi.build_window(wb.L, f["slope_constant"])
    layout, grid, setup = problem.layout, problem.grid, problem.setup
    # the window needs the time axis to cover [-L/2, L/2]
    T = max(layout.T, wb.L / 2)
    truth = problem.coeffs.with_diagonal(*problem.truth)
    y = solve_coupled_wave(grid, truth, problem.init, T, setup.dt)
    y0 = solve_coupled_wave(grid, problem.coeffs, problem.init, T, setup.dt)
    if args.export_trajectory:
        y.to_csv(os.path.join(args.out, "trajectory.csv"))
    chi = build_cutoff_chi(layout)
    uv = build_UV_fields(y - y0, chi)
    nodes = np.flatnonzero(layout.mask("omega"))
    s = np.linspace(-f["b"], f["b"], f["s_nodes"])
    omega0 = layout.mask("omega0")[nodes]
    ix0 = int(np.argmin(np.abs(grid.nodes - layout.x0)))
    a = np.asarray(truth.a)
    rows = []
    for lam in f["lambdas"]:
        ctx = fbi.FbiContext(lam, window, f["l0"], f["refine"])
        UF = fbi.transform_components(uv, "U", ctx, s, nodes)
        G, H = fbi.compute_G_H(uv, a, chi, ctx, s, nodes)
        if args.export_fields:
            for j in range(2):
                UF.to_csv(os.path.join(args.out, f"fbi_U{j + 1}_lambda_{lam!r}.csv"), j)
        coef = (truth.c11, truth.c12, truth.c21, truth.c22)
        s_res, s_fine = residual_lattice(lam, grid.h, f["b"])
        UFr = fbi.transform_components(uv, "U", ctx, s_fine, nodes)
        Gr, Hr = fbi.compute_G_H(uv, a, chi, ctx, s_fine, nodes)
        res = fbi.elliptic_residual(UFr, grid, a, *coef, Gr, Hr)
        sig = uv.signal("U", 0).take([ix0])
        pv = fbi.parseval_defect(sig, ctx)
        mv = fbi.mean_value_defect(sig, ctx, ctx.l0 + 0j, f["rho"], f["angular_nodes"])
        tau, zeta, _ = carleman.tau_zeta_L(wb.levels, f["mu"], lam, f["b"], f["A"])
        params = carleman.CarlemanParams(f["mu"], wb.M, f["b"], f["b0"], f["A"], lam, zeta, wb.norm)
        ev = carleman.weight_eval(wb.psi_hat, params, s, nodes)
        ratio = carleman.carleman_ratio_diagnostic(UF.values, G.values, H.values, ev, params,
                                                   grid.h, omega0)
        rows.append((lam, s_res, res.row1, res.row2, res.relative, pv.defect, mv, ratio.log_ratio))
    with open(os.path.join(args.out, "fbi_diagnostics.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "residual_s_max", "residual_row1", "residual_row2", "relative_residual",
                    "parseval_defect",
                    "mean_value_defect", "log_carleman_ratio"])
        for r in rows:
            w.writerow([_r(v) for v in r])
    lines = _check_lines(checks) + ["", f"window length L = {wb.L:g}, time axis [-{T:g}, {T:g}], "
                                        f"point diagnostics at node {ix0} (x = {grid.nodes[ix0]:g})"]
    for lam, sr, r1, r2, rel, pd, mv, lr in rows:
        lines.append(f"lambda = {lam:g}: residual on |s| <= {sr:.3g}: {r1:.4g} / {r2:.4g} (relative {rel:.3g}), "
                     f"parseval defect {pd:.4g}, mean-value defect {mv:.3g}, log weighted ratio {lr:.4g}")
    _write_lines(os.path.join(args.out, "summary.txt"), lines)


COMMANDS = {"sweep": cmd_sweep, "svd": cmd_svd, "fbi": cmd_fbi, "weights": cmd_weights}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coupledwave",
                                description="Coefficient identification experiments for a coupled wave system.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="experiment file (default: the built-in configuration)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads")
        sp.add_argument("--seed", type=int, default=None, help="base noise seed (overrides the config)")
        sp.add_argument("--export-trajectory", action="store_true", help="write trajectory.csv")
        sp.add_argument("--export-observations", action="store_true", help="write observations.csv")
        sp.add_argument("--export-fields", action="store_true",
                        help="write per-run fields (sweep) or transformed fields (fbi)")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise PreconditionError("--jobs must be at least 1")
        cfg = parse_config(args.config) if args.config else parse_config_text(DEFAULT_CONFIG, "<default>")
        if args.seed is not None:
            cfg.override("noise", "base_seed", args.seed)
        os.makedirs(args.out, exist_ok=True)
        _echo_config(cfg, args.out)
        COMMANDS[args.command](cfg, args)
    except PreconditionError as exc:
        print(f"refused: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (CoupledWaveError, OSError) as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
