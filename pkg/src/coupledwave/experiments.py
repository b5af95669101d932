"""Experiment orchestration: problem assembly, precondition audit, noise sweeps,
rate fits and report files."""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import carleman
from .config import ExperimentConfig
from .errors import (BetaGapViolation, CoupledWaveError, CouplingViolation, InsufficientLevels,
                     PreconditionError)
from .grid import (Grid, Interval, SubdomainLayout, build_grid, check_geometric_time,
                   check_pseudoconvexity, define_subdomains)
from .inversion import (InverseProblemSetup, ObservationSpec, reconstruct, relative_error,
                        synthesize_data)
from .solver import CoefficientSet, InitialData, add_noise, stable_dt

INV_E = math.exp(-1.0)


def smooth_bump(center: float, radius: float, amplitude: float) -> Callable:
    """``amplitude exp(1 - 1/(1 - r^2))`` for ``r = |x - center| / radius < 1``, else 0."""
    def f(x):
        x = np.asarray(x, dtype=float)
        r2 = ((x - center) / radius) ** 2
        out = np.zeros_like(x)
        m = r2 < 1.0
        out[m] = amplitude * np.exp(1.0 - 1.0 / (1.0 - r2[m]))
        return out
    return f


@dataclass
class Check:
    name: str
    ok: bool
    margin: float
    detail: str = ""


@dataclass
class Problem:
    """Everything derived from a configuration before any solver run."""

    cfg: ExperimentConfig
    grid: Grid
    layout: SubdomainLayout
    coeffs: CoefficientSet
    init: InitialData
    init_fns: Tuple[Callable, ...]
    truth_fns: Tuple[Callable, Callable]
    setup: InverseProblemSetup

    @property
    def truth(self) -> Tuple[np.ndarray, np.ndarray]:
        x = self.grid.nodes
        return self.truth_fns[0](x), self.truth_fns[1](x)

    @property
    def background(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array(self.coeffs.c11), np.array(self.coeffs.c22)


def _cosine(offset, amplitude, mode, length):
    return lambda x: offset + amplitude * np.cos(mode * np.pi * np.asarray(x) / length)


def build_problem(cfg: ExperimentConfig) -> Problem:
    g = cfg["grid"]
    grid = build_grid(g["n_nodes"], g["length"])
    lay = cfg["layout"]
    x0 = lay["x0"]
    T = lay["T"] if lay["T"] is not None else 2.0 * max(abs(x0), abs(grid.length - x0))
    spec = {k: lay[k] for k in ("omega_tilde", "omega1", "omega", "O3", "O2", "O1", "omega0")}
    spec.update(x0=x0, T=T)
    layout = define_subdomains(grid, spec, dist_margin=g["dist_margin"])
    c = cfg["coefficients"]
    bg11, bg22 = c["background_c11"], c["background_c22"]
    t11 = smooth_bump(c["truth_c11_center"], c["truth_c11_radius"], c["truth_c11_amplitude"])
    t22 = smooth_bump(c["truth_c22_center"], c["truth_c22_radius"], c["truth_c22_amplitude"])
    truth = (lambda x: bg11 + t11(x), lambda x: bg22 + t22(x))
    coeffs = CoefficientSet(grid, c["a"], bg11, c["c12"], c["c21"], bg22, M1=c["M1"],
                            varpi1=np.full(grid.n_nodes, bg11), varpi2=np.full(grid.n_nodes, bg22))
    i = cfg["initial"]
    L = grid.length
    init_fns = (_cosine(i["y1_offset"], i["y1_amplitude"], i["y1_mode"], L), lambda x: 0.0 * x,
                _cosine(i["y2_offset"], i["y2_amplitude"], i["y2_mode"], L), lambda x: 0.0 * x)
    init = InitialData.from_functions(grid, *init_fns)
    o = cfg["observation"]
    obs = ObservationSpec(o["region"], tuple(o["orders"]), tuple(o["components"]))
    inv = cfg["inversion"]
    setup = InverseProblemSetup(grid, layout, coeffs, init, observation=obs, alpha=0.0,
                                M1=c["M1"], dt=stable_dt(grid, coeffs.a, g["cfl"]),
                                max_iter=inv["max_iter"], tol=inv["tol"],
                                coupling_c0=c["c0"] if c["check_coupling"] else None)
    return Problem(cfg, grid, layout, coeffs, init, init_fns, truth, setup)


# precondition audit ------------------------------------------------------------

@dataclass
class WeightBook:
    psi_hat: object
    omega0_tilde: Interval
    norm: float
    beta1: float
    beta2: float
    M_interval: Tuple[float, float]
    M: float
    levels: carleman.WeightLevels
    tau: float
    L: float


def omega0_tilde_of(cfg: ExperimentConfig, layout: SubdomainLayout) -> Interval:
    w0 = layout.omega0
    half = cfg["layout"]["omega0_tilde"]
    half = 0.25 * w0.width if half is None else half
    return Interval(w0.center - half, w0.center + half)


def weight_bookkeeping(cfg: ExperimentConfig, layout: SubdomainLayout) -> WeightBook:
    f = cfg["fbi"]
    w0t = omega0_tilde_of(cfg, layout)
    if not (layout.omega0.lo < w0t.lo and w0t.hi < layout.omega0.hi):
        raise PreconditionError("omega0_tilde must lie compactly inside omega0")
    psi = carleman.build_psi_hat(layout.grid, layout.omega, w0t)
    norm = float(np.max(psi.values))
    beta1, beta2 = carleman.compute_beta_constants(psi, layout.O2, layout.omega0, norm)
    lo, hi = carleman.admissible_M_interval(beta1, beta2, norm, f["b0"])
    M = 0.5 * (lo + hi) if f["M"] is None else f["M"]
    if not lo < M < hi:
        raise PreconditionError(f"M = {M:g} lies outside the admissible interval ({lo:.6g}, {hi:.6g})")
    levels = carleman.psi_levels(beta1, beta2, norm, M, f["b"], f["b0"], f["mu"])
    tau, _, L = carleman.tau_zeta_L(levels, f["mu"], 1.0, f["b"], f["A"])
    return WeightBook(psi, w0t, norm, beta1, beta2, (lo, hi), M, levels, tau, L)


def audit(problem: Problem, weights: bool = True) -> List[Check]:
    """Run every precondition check; raises on the first failure.

    Returns the passed checks with their margins (reported in the summary).
    """
    checks = []
    layout = problem.layout
    ok, margin = check_geometric_time(layout)
    checks.append(Check("observation time T > sup|x - x0|", ok, margin,
                        f"T = {layout.T:g}, sup|x - x0| = {layout.sup_distance():g}"))
    if not ok:
        raise CouplingViolation(f"observation time condition fails: T = {layout.T:g} <= "
                                f"sup|x - x0| = {layout.sup_distance():g}")
    c0 = problem.setup.coupling_c0
    if c0 is not None:
        v = np.asarray(problem.coeffs.c21)[layout.mask("omega0")]
        marg = max(float(v.min()), float(-v.max())) - c0
        checks.append(Check("coupling: c21 >= c0 or -c21 >= c0 on omega0", marg >= 0, marg,
                            f"c0 = {c0:g}"))
        if marg < 0:
            raise CouplingViolation(f"coupling condition fails on omega0 with c0 = {c0:g}")
    rep = check_pseudoconvexity(problem.coeffs.a, layout, 0.0, 0.0, math.inf)
    checks.append(Check("pseudoconvexity of a outside omega", rep.ok, 1.0 - rep.max_gradient_ratio))
    if not rep.ok:
        raise PreconditionError("pseudoconvexity check fails: " + "; ".join(rep.messages()[:3]))
    t11, t22 = problem.truth
    known = layout.known_mask()
    for name, t, bg in (("c11", t11, problem.coeffs.c11), ("c22", t22, problem.coeffs.c22)):
        dev = float(np.max(np.abs(t - bg)[known]))
        if dev > 0 or np.max(np.abs(t)) > problem.setup.M1:
            raise PreconditionError(f"truth {name} is not admissible (deviation {dev:.3g} on omega_tilde "
                                    f"or sup norm above M1)")
    checks.append(Check("truth admissible (known on omega_tilde, |c| <= M1)", True,
                        problem.setup.M1 - max(np.max(np.abs(t11)), np.max(np.abs(t22)))))
    if weights:
        wb = weight_bookkeeping(problem.cfg, layout)
        checks.append(Check("beta gap: beta2 > (beta1 + |psi_hat|)/2", True,
                            wb.beta2 - 0.5 * (wb.beta1 + wb.norm),
                            f"beta1 = {wb.beta1:.6g}, beta2 = {wb.beta2:.6g}, |psi_hat| = {wb.norm:.6g}"))
        lo, hi = wb.M_interval
        checks.append(Check("M inside admissible interval", True, min(wb.M - lo, hi - wb.M),
                            f"M = {wb.M:.6g} in ({lo:.6g}, {hi:.6g})"))
        lv = wb.levels
        checks.append(Check("level ordering psi1 < psi4 < psi3 < psi2", True,
                            min(lv.psi4 - lv.psi1, lv.psi3 - lv.psi4, lv.psi2 - lv.psi3),
                            f"levels {lv.psi1:.6g}, {lv.psi4:.6g}, {lv.psi3:.6g}, {lv.psi2:.6g}"))
        checks.append(Check("tau in (0, 1)", 0 < wb.tau < 1, min(wb.tau, 1 - wb.tau), f"tau = {wb.tau:.6g}"))
    return checks


# noise sweep ---------------------------------------------------------------------

@dataclass
class SweepRow:
    delta: float
    seed: int
    status: str
    rel_error: float
    data_distance: float
    misfit: float
    iterations: int
    converged: bool
    wall_time: float = 0.0


def default_alpha(clean_norm: float) -> float:
    return 1e-6 * clean_norm**2


def _run_one(problem: Problem, clean, delta: float, seed: int, alpha: float,
             export_dir: Optional[str]) -> SweepRow:
    t0 = time.perf_counter()
    try:
        data = add_noise(clean, delta, seed)
        setup = replace(problem.setup, alpha=alpha)
        res = reconstruct(setup, data, problem.background)
        err = relative_error(problem.grid, (res.c11, res.c22), problem.truth)
        if export_dir is not None:
            stem = os.path.join(export_dir, f"delta_{delta!r}_seed_{seed}")
            res.log_to_csv(stem + "_iterations.csv")
            res.fields_to_csv(stem + "_fields.csv", problem.truth)
        status = "ok" if res.converged else "budget"
        row = SweepRow(delta, seed, status, err, data.distance(clean), res.J, res.iterations, res.converged)
    except CoupledWaveError as exc:
        row = SweepRow(delta, seed, f"failed: {type(exc).__name__}", math.nan, math.nan, math.nan, 0, False)
    row.wall_time = time.perf_counter() - t0
    return row


def run_noise_sweep(problem: Problem, deltas: Optional[Sequence[float]] = None,
                    seeds: Optional[Sequence[int]] = None, jobs: int = 1,
                    export_dir: Optional[str] = None) -> List[SweepRow]:
    """One reconstruction per ``(delta, seed)``; rows in ``(delta, seed)`` order.

    Clean data come from a refined grid.  Noise for seed ``k`` is drawn from
    ``default_rng(k)``, so one seed gives the same noise pattern at every
    level.  Failing runs are recorded and the sweep continues.
    """
    cfg = problem.cfg
    deltas = cfg["noise"]["deltas"] if deltas is None else deltas
    if seeds is None:
        base = cfg["noise"]["base_seed"]
        seeds = [base + k for k in range(cfg["noise"]["seeds"])]
    clean = synthesize_data(problem.setup, *problem.truth_fns, refine=cfg["inversion"]["refine"],
                            init_fns=problem.init_fns)
    alpha = cfg["inversion"]["alpha"]
    alpha = default_alpha(clean.norm()) if alpha is None else alpha
    tasks = [(float(d), int(s)) for d in deltas for s in seeds]
    run = lambda task: _run_one(problem, clean, task[0], task[1], alpha, export_dir)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, tasks))
    return [run(t) for t in tasks]


def median_errors(rows: Sequence[SweepRow]) -> List[Tuple[float, float]]:
    """``(delta, median error)`` per level over successful rows, ascending in delta."""
    by: Dict[float, List[float]] = {}
    for r in rows:
        by.setdefault(r.delta, [])
        if not math.isnan(r.rel_error):
            by[r.delta].append(r.rel_error)
    return [(d, float(np.median(v)) if v else math.nan) for d, v in sorted(by.items())]


# rates ---------------------------------------------------------------------------

@dataclass
class RateFit:
    kind: str
    params: Tuple[float, float]
    deltas: np.ndarray
    errors: np.ndarray
    fitted: np.ndarray

    @property
    def residuals(self) -> np.ndarray:
        return self.fitted - self.errors

    def __call__(self, delta):
        d = np.asarray(delta, dtype=float)
        if self.kind == "log":
            return self.params[0] / np.abs(np.log(d)) + self.params[1] * d
        return self.params[0] * d ** self.params[1]


def _fit_levels(deltas, errors):
    d = np.asarray(deltas, dtype=float)
    e = np.asarray(errors, dtype=float)
    keep = (d > 0) & (d < INV_E) & np.isfinite(e)
    d, e = d[keep], e[keep]
    if len(np.unique(d)) < 3:
        raise InsufficientLevels(f"need at least 3 distinct levels below 1/e, got {len(np.unique(d))}")
    return d, e


def fit_log_rate(deltas, errors) -> Tuple[RateFit, RateFit]:
    """Envelope ``C3/|ln d| + C4 d`` above every error, and a power-law fit.

    The envelope minimizes the summed relative excess
    ``sum_i (e(d_i) - err_i) / err_i`` over ``C3, C4 >= 0`` subject to
    ``e(d_i) >= err_i``: a two-variable linear program solved by enumerating
    the vertices of the feasible set.  The power law ``a d^beta`` is a least
    squares fit in log-log coordinates.
    """
    d, e = _fit_levels(deltas, errors)
    p = 1.0 / np.abs(np.log(d))
    q = d
    wts = np.where(e > 0, 1.0 / np.where(e > 0, e, 1.0), 1.0)
    cost = np.array([np.sum(wts * p), np.sum(wts * q)])
    # constraints: G @ x >= h, with x = (C3, C4)
    G = np.vstack([np.column_stack([p, q]), [[1.0, 0.0], [0.0, 1.0]]])
    hvec = np.concatenate([e, [0.0, 0.0]])
    best = None
    tol = 1e-12
    for i in range(len(G)):
        for j in range(i + 1, len(G)):
            A = G[[i, j]]
            if abs(np.linalg.det(A)) < 1e-300:
                continue
            x = np.linalg.solve(A, hvec[[i, j]])
            if np.all(G @ x >= hvec - tol * np.maximum(1.0, np.abs(hvec))):
                val = float(cost @ x)
                if best is None or val < best[0] - 1e-15 * abs(val):
                    best = (val, x)
    C3, C4 = (max(0.0, float(v)) for v in best[1])
    # nudge up to absorb the solve's rounding so the envelope property is exact
    fitted = C3 * p + C4 * q
    short = np.max(np.where(e > 0, e / np.where(fitted > 0, fitted, 1.0), 0.0))
    if short > 1.0:
        C3, C4 = C3 * short, C4 * short
        fitted = C3 * p + C4 * q
    logfit = RateFit("log", (C3, C4), d, e, fitted)
    pos = e > 0
    if pos.sum() >= 2:
        beta, loga = np.polyfit(np.log(d[pos]), np.log(e[pos]), 1)
        a = float(np.exp(loga))
    else:
        a, beta = 0.0, 0.0
    powfit = RateFit("power", (a, float(beta)), d, e, a * d ** beta)
    return logfit, powfit


def theoretical_bound(delta: float, C3: float, C4: float, CM: float) -> Tuple[float, Optional[float]]:
    """Log-type stability bound and the transform parameter that realizes it.

    For ``delta < 1/e`` returns ``(C3 C4 CM / |ln delta| + delta, sqrt(|ln delta| / C4))``;
    otherwise ``(CM, None)``.
    """
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    if delta < INV_E:
        ln = abs(math.log(delta))
        return C3 * C4 * CM / ln + delta, math.sqrt(ln / C4)
    return CM, None


# reports -------------------------------------------------------------------------

def _r(v) -> str:
    return repr(float(v))


def write_results(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "seed", "status", "rel_error", "data_distance", "misfit", "iterations", "converged"])
        for r in rows:
            w.writerow([_r(r.delta), r.seed, r.status, _r(r.rel_error), _r(r.data_distance), _r(r.misfit),
                        r.iterations, int(r.converged)])


def write_timings(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "seed", "wall_time"])
        for r in rows:
            w.writerow([_r(r.delta), r.seed, f"{r.wall_time:.6f}"])


def emit_report(rows: Sequence[SweepRow], cfg: ExperimentConfig, out_dir,
                checks: Sequence[Check] = ()) -> Dict[str, object]:
    """Write ``results.csv``, ``timings.csv``, ``rates.csv``, ``summary.txt`` and the config echo.

    Wall times go to ``timings.csv`` only, so the other files are byte-identical
    across reruns of one configuration.
    """
    os.makedirs(out_dir, exist_ok=True)
    write_results(rows, os.path.join(out_dir, "results.csv"))
    write_timings(rows, os.path.join(out_dir, "timings.csv"))
    with open(os.path.join(out_dir, "config_resolved.ini"), "w") as fh:
        fh.write(cfg.resolved_text())
    med = median_errors(rows)
    fits = None
    fit_note = ""
    try:
        fits = fit_log_rate([d for d, _ in med], [e for _, e in med])
    except InsufficientLevels as exc:
        fit_note = str(exc)
    r = cfg["rates"]
    with open(os.path.join(out_dir, "rates.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "median_error", "log_envelope", "power_fit", "theoretical_bound"])
        for d, e in med:
            usable = fits is not None and 0 < d < INV_E
            le = float(fits[0](d)) if usable else math.nan
            pf = float(fits[1](d)) if usable else math.nan
            tb = theoretical_bound(d, r["C3"], r["C4"], r["CM"])[0] if d > 0 else math.nan
            w.writerow([_r(d), _r(e), _r(le), _r(pf), _r(tb)])
    lines = [f"runs: {len(rows)}", f"failed runs: {sum(r.status.startswith('failed') for r in rows)}"]
    if not rows:
        lines.append("no rows: the sweep produced zero runs")
    lines.append("")
    lines.append("preconditions checked (margin):")
    for c in checks:
        lines.append(f"  [{'ok' if c.ok else 'FAIL'}] {c.name}: margin {c.margin:.6g}" + (f" ({c.detail})" if c.detail else ""))
    lines.append("")
    lines.append("median relative error per noise level:")
    for d, e in med:
        lines.append(f"  delta = {d:.3g}: {e:.6g}")
    mono = all(b[1] >= a[1] for a, b in zip(med, med[1:]) if not (math.isnan(a[1]) or math.isnan(b[1])))
    lines.append(f"medians nondecreasing in delta: {'yes' if mono else 'no'}")
    if fits is not None:
        lf, pf = fits
        lines.append(f"log envelope: C3' = {lf.params[0]:.6g}, C4' = {lf.params[1]:.6g}")
        lines.append(f"power fit: a = {pf.params[0]:.6g}, beta = {pf.params[1]:.6g}")
    else:
        lines.append(f"rate fits skipped: {fit_note}")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"medians": med, "fits": fits}
