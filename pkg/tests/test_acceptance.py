"""Acceptance criteria, one PASS/FAIL line each.

Run with pytest (the lines are echoed in the terminal summary) or directly:
``python tests/test_acceptance.py``.
"""
import filecmp
import math
import os
import sys
import tempfile
import time
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from conftest import ACCEPTANCE_LINES, make_config  # noqa: E402
from coupledwave import carleman, fbi  # noqa: E402
from coupledwave.cli import main as cli_main  # noqa: E402
from coupledwave.experiments import (build_problem, fit_log_rate, median_errors,  # noqa: E402
                                     theoretical_bound)
from coupledwave.grid import build_grid  # noqa: E402
from coupledwave.inversion import (build_linearized_map, l2_inner, misfit,  # noqa: E402
                                   misfit_and_gradient, reconstruct, relative_error,
                                   stability_svd, synthesize_data)
from coupledwave.solver import (CoefficientSet, InitialData, energy_drift,  # noqa: E402
                                solve_coupled_wave)

_SWEEP_DIRS = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {number:2d} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _eigen(n):
    g = build_grid(n, 1.0)
    coeffs = CoefficientSet(g, 1.0, 0.0, 0.0, 0.0, 0.0)
    init = InitialData.from_functions(g, lambda x: np.cos(np.pi * x), 0.0, 0.0, 0.0)
    return g, coeffs, init


def criterion_1():
    t0 = time.perf_counter()
    errs = []
    for n in (101, 201, 401):
        g, coeffs, init = _eigen(n)
        traj = solve_coupled_wave(g, coeffs, init, 1.0, 0.5 * g.h)
        exact = np.cos(np.pi * traj.times)[:, None] * np.cos(np.pi * g.nodes)[None, :]
        errs.append(float(np.max(np.abs(traj.y1 - exact))))
    elapsed = time.perf_counter() - t0
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(3.5 <= r <= 4.5 for r in ratios) and elapsed < 10.0
    return record(1, "forward convergence", ok,
                  f"ratios {ratios[0]:.4f}, {ratios[1]:.4f} in [3.5, 4.5]; runtime {elapsed:.2f} s < 10 s")


def criterion_2():
    g, coeffs, init = _eigen(101)
    traj = solve_coupled_wave(g, coeffs, init, 4.0, 0.5 * g.h)
    drift = energy_drift(traj, coeffs.a)
    return record(2, "energy audit", drift <= 1e-6, f"relative drift {drift:.3e} <= 1e-6")


def criterion_3():
    g = build_grid(101, 1.0)
    x = g.nodes
    c_diag = 1.0 + 0.5 * np.cos(3 * x)
    c_off = 0.7 - x**2
    coeffs = CoefficientSet(g, 1.0 + 0.2 * x, c_diag, c_off, c_off, c_diag)
    f0 = lambda x: np.cos(np.pi * x) + 0.3 * np.cos(2 * np.pi * x)
    f1 = lambda x: 0.5 * np.cos(3 * np.pi * x)
    init = InitialData.from_functions(g, f0, f1, f0, f1)
    traj = solve_coupled_wave(g, coeffs, init, 2.0)
    gap = float(np.max(np.abs(traj.y1 - traj.y2)))
    return record(3, "symmetry", gap <= 1e-12, f"max_t sup_x |y1 - y2| = {gap:.3e} <= 1e-12")


def criterion_4():
    w = fbi.build_window(8.0)
    f = lambda t: np.cos(t) + 0.3 * t**2
    sig = fbi.TimeSignal.from_function(f, -4, 4, 4001)
    errs = [abs(fbi.fbi_transform(sig, fbi.FbiContext(lam, w, 0.3, refine=4), 0.0)[0] - f(0.3))
            for lam in (10.0, 20.0)]
    ratio = errs[1] / errs[0]
    return record(4, "approximate identity", 0.18 <= ratio <= 0.33,
                  f"error ratio lambda 20/10 = {ratio:.4f} in [0.18, 0.33]")


def criterion_5():
    ctx = fbi.FbiContext(10.0, fbi.build_window(8.0), refine=2)
    sig = fbi.TimeSignal.from_function(lambda t: np.cos(t) + 0.3 * np.sin(0.5 * t), -4, 4, 801)
    d = fbi.mean_value_defect(sig, ctx, 0.0, 0.5, 256)
    return record(5, "mean-value defect", d <= 1e-8, f"defect {d:.3e} <= 1e-8")


def criterion_6():
    rng = np.random.default_rng(2024)
    ctx = fbi.FbiContext(10.0, fbi.build_window(8.0), refine=2)
    worst = math.inf
    for _ in range(20):
        amp = rng.standard_normal(4)
        freq = rng.uniform(0.1, 3.0, 4)
        phase = rng.uniform(0, 2 * np.pi, 4)
        poly = rng.standard_normal(3) * (0.3, 0.1, 0.02)
        fn = lambda t: (np.sum(amp[:, None] * np.cos(freq[:, None] * t + phase[:, None]), axis=0)
                        + poly[0] + poly[1] * t + poly[2] * t**2)
        sig = fbi.TimeSignal.from_function(fn, -4, 4, 801)
        worst = min(worst, fbi.parseval_defect(sig, ctx).defect)
    return record(6, "Parseval defect", worst >= -1e-10,
                  f"min defect over 20 signals {worst:.3e} >= -1e-10")


def criterion_7():
    lo, hi = carleman.admissible_M_interval(0.2, 0.7, 1.0, 1.8)
    lv = carleman.psi_levels(0.2, 0.7, 1.0, 0.2, 2.0, 1.8)
    psi = lv.psi
    tau, _, _ = carleman.tau_zeta_L(lv, 1.0, 2.0, 2.0, 2.0)
    defect = carleman.tau_identity_defect(lv, 1.0, tau)
    phi3 = math.exp(psi[2])
    ok = (lo < hi and (round(lo, 5), round(hi, 5)) == (0.13393, 0.24691)
          and np.allclose(psi, (5.0, 9.0, 6.5, 5.76), rtol=1e-14, atol=0)
          and psi[0] < psi[3] < psi[2] < psi[1]
          and abs(tau - 0.52289) < 5e-6 and defect <= 1e-12 * phi3)
    return record(7, "weight bookkeeping", ok,
                  f"M in ({lo:.5f}, {hi:.5f}), levels {tuple(round(p, 10) for p in psi)}, "
                  f"tau {tau:.5f}, identity defect {defect:.1e}")


def criterion_8():
    cfg = make_config(grid__n_nodes=41, grid__dist_margin=0.0, observation__region="omega_minus_O2")
    p = build_problem(cfg)
    bg = (np.ones(p.grid.n_nodes), np.ones(p.grid.n_nodes))
    full = stability_svd(build_linearized_map(p.setup, *bg))
    setup1 = replace(p.setup, coeffs=replace(p.coeffs, c21=0.0), coupling_c0=None)
    setup1 = setup1.with_observation(components=("y1",))
    lmap = build_linearized_map(setup1, *bg)
    rep1 = stability_svd(lmap)
    c22 = float(np.max(np.linalg.norm(lmap.block_c22, axis=0)))
    ok = full.sigma_min > 0 and c22 <= 1e-10 * rep1.sigma_max
    return record(8, "linearized stability", ok,
                  f"sigma_min {full.sigma_min:.3e} > 0 (sigma_max {full.sigma_max:.3e}); "
                  f"y1-only c21=0: max |dc22 column| {c22:.1e} <= 1e-10 sigma_max")


def criterion_9():
    p = build_problem(make_config(inversion__alpha=0.0))
    data = synthesize_data(p.setup, *p.truth_fns, refine=2, init_fns=p.init_fns)
    res = reconstruct(p.setup, data, p.background, max_iter=200)
    err = relative_error(p.grid, (res.c11, res.c22), p.truth)
    return record(9, "noiseless reconstruction", err <= 0.05 and res.iterations <= 200,
                  f"relative L2 error {err:.4f} <= 0.05 after {res.iterations} iterations")


def criterion_10():
    p = build_problem(make_config())
    data = synthesize_data(p.setup, *p.truth_fns, refine=2, init_fns=p.init_fns)
    setup = replace(p.setup, alpha=1e-6 * data.norm() ** 2)
    rng = np.random.default_rng(7)
    c = tuple(np.asarray(v) + 0.1 * rng.standard_normal(p.grid.n_nodes) * setup.unknown
              for v in p.background)
    _, g11, g22 = misfit_and_gradient(c, setup, data)
    worst = 0.0
    for _ in range(10):
        d = [rng.standard_normal(p.grid.n_nodes) * setup.unknown for _ in range(2)]
        eps = 1e-5
        Jp = misfit((c[0] + eps * d[0], c[1] + eps * d[1]), setup, data)
        Jm = misfit((c[0] - eps * d[0], c[1] - eps * d[1]), setup, data)
        fd = (Jp - Jm) / (2 * eps)
        ad = l2_inner(p.grid, (g11, g22), d)
        worst = max(worst, abs(fd - ad) / abs(fd))
    return record(10, "gradient check", worst <= 1e-3, f"max relative error {worst:.3e} <= 1e-3")


def _sweep(jobs: int) -> str:
    if jobs not in _SWEEP_DIRS:
        out = tempfile.mkdtemp(prefix=f"coupledwave_sweep_j{jobs}_")
        code = cli_main(["sweep", "--out", out, "--jobs", str(jobs)])
        if code != 0:
            raise RuntimeError(f"sweep exited with {code}")
        _SWEEP_DIRS[jobs] = out
    return _SWEEP_DIRS[jobs]


def _read_rows(path):
    import csv
    with open(path) as fh:
        return list(csv.DictReader(fh))


def criterion_11():
    from coupledwave.experiments import SweepRow
    rows = [SweepRow(float(r["delta"]), int(r["seed"]), r["status"], float(r["rel_error"]),
                     float(r["data_distance"]), float(r["misfit"]), int(r["iterations"]),
                     bool(int(r["converged"])))
            for r in _read_rows(os.path.join(_sweep(1), "results.csv"))]
    med = median_errors(rows)
    d = [m[0] for m in med]
    e = [m[1] for m in med]
    mono = d == [1e-4, 1e-3, 1e-2, 1e-1] and all(a <= b for a, b in zip(e, e[1:]))
    logfit, _ = fit_log_rate(d, e)
    env = bool(np.all(logfit(np.asarray(d)) >= np.asarray(e)))
    tb = theoretical_bound(math.exp(-9), 1, 1, 1)[0]
    ok = mono and env and len(rows) == 12 and abs(tb - 0.111235) <= 1e-6
    return record(11, "noise sweep", ok,
                  "medians " + ", ".join(f"{v:.4g}" for v in e) + " nondecreasing; "
                  f"envelope C3={logfit.params[0]:.4g}, C4={logfit.params[1]:.4g} holds; "
                  f"bound {tb:.6f}")


def criterion_12():
    a, b = _sweep(1), _sweep(4)
    names = ["results.csv", "rates.csv", "summary.txt", "config_resolved.ini"]
    same = [filecmp.cmp(os.path.join(a, n), os.path.join(b, n), shallow=False) for n in names]
    return record(12, "determinism", all(same),
                  "jobs 1 vs jobs 4: " + ", ".join(f"{n} {'identical' if s else 'DIFFERS'}"
                                                   for n, s in zip(names, same)))


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 13)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
