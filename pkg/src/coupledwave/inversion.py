"""Identification of ``c11`` and ``c22`` from interior observations.

Output least squares with Tikhonov term, exact discrete adjoint gradient,
projected gradient descent, and an SVD probe of the linearized
coefficient-to-data map.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import (ConvergenceFailure, CouplingViolation, EmptySubdomain, GridMismatch,
                     LineSearchStall, NonFiniteState, PreconditionError, SolverFailure)
from .grid import Grid, Interval, SubdomainLayout, check_geometric_time
from .solver import (COMPONENTS, CoefficientSet, InitialData, ObservationRecord, Trajectory,
                     flux_bands, region_weights, solve_coupled_wave, stable_dt,
                     time_derivative_matrix, time_weights, transpose_bands)

OBSERVATION_REGIONS = ("omega", "omega_minus_O2", "omega0")


def check_coupling_condition(c21, omega0_mask, c0: float) -> bool:
    """True iff ``c21 >= c0`` on every node of ``omega0`` or ``-c21 >= c0`` on every node."""
    if not c0 > 0:
        raise PreconditionError(f"c0 must be positive, got {c0}")
    v = np.asarray(c21, dtype=float)[np.asarray(omega0_mask, dtype=bool)]
    if v.size == 0:
        raise EmptySubdomain("omega0 contains no grid nodes")
    return bool(np.all(v >= c0) or np.all(-v >= c0))


@dataclass(frozen=True)
class AdmissibleSetSpec:
    """Sup-norm bound ``M1`` and the known values ``varpi1``/``varpi2`` on ``known``."""

    M1: float
    varpi1: np.ndarray
    varpi2: np.ndarray
    known: np.ndarray

    def __post_init__(self):
        for name in ("varpi1", "varpi2"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.max(np.abs(v[np.asarray(self.known)]), initial=0.0) > self.M1:
                raise PreconditionError(f"{name} exceeds M1 = {self.M1} on omega_tilde")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "known", np.asarray(self.known, dtype=bool))


def project_admissible(c11, c22, spec: AdmissibleSetSpec) -> Tuple[np.ndarray, np.ndarray]:
    out = []
    for c, pi in ((c11, spec.varpi1), (c22, spec.varpi2)):
        c = np.clip(np.asarray(c, dtype=float), -spec.M1, spec.M1)
        c[spec.known] = pi[spec.known]
        out.append(c)
    return out[0], out[1]


@dataclass(frozen=True)
class ObservationSpec:
    region: str = "omega"
    orders: Tuple[int, ...] = (1, 2)
    components: Tuple[str, ...] = ("y1", "y2")

    def __post_init__(self):
        if self.region not in OBSERVATION_REGIONS:
            raise PreconditionError(f"observation region must be one of {OBSERVATION_REGIONS}")
        if not self.orders or any(o not in (0, 1, 2) for o in self.orders):
            raise PreconditionError(f"orders must be a nonempty subset of {{0, 1, 2}}: {self.orders}")
        if not self.components or any(c not in COMPONENTS for c in self.components):
            raise PreconditionError(f"components must be drawn from {tuple(COMPONENTS)}")
        object.__setattr__(self, "orders", tuple(sorted(set(int(o) for o in self.orders))))

    def mask(self, layout: SubdomainLayout) -> np.ndarray:
        if self.region == "omega_minus_O2":
            return layout.omega_minus_O2()
        return layout.mask(self.region)


@dataclass(frozen=True)
class InverseProblemSetup:
    """Everything the forward map and the misfit need besides ``(c11, c22)``.

    ``coeffs`` supplies ``a``, ``c12``, ``c21`` and the known values on
    ``omega_tilde``; its ``c11``/``c22`` serve as the Tikhonov reference
    unless ``c_ref`` is given.
    """

    grid: Grid
    layout: SubdomainLayout
    coeffs: CoefficientSet
    init: InitialData
    observation: ObservationSpec = ObservationSpec()
    alpha: float = 0.0
    M1: float = math.inf
    dt: Optional[float] = None
    c_ref: Optional[Tuple[np.ndarray, np.ndarray]] = None
    max_iter: int = 200
    tol: float = 1e-6
    coupling_c0: Optional[float] = None

    def __post_init__(self):
        if self.alpha < 0:
            raise PreconditionError("alpha must be nonnegative")
        if self.dt is None:
            object.__setattr__(self, "dt", stable_dt(self.grid, self.coeffs.a))
        nsteps = max(1, int(math.ceil(self.T / self.dt - 1e-9)))
        object.__setattr__(self, "dt", self.T / nsteps)
        if self.c_ref is None:
            object.__setattr__(self, "c_ref", (np.array(self.coeffs.c11), np.array(self.coeffs.c22)))
        if not self.obs_nodes.size:
            raise EmptySubdomain(f"observation region {self.observation.region} has no nodes")

    @property
    def T(self) -> float:
        return self.layout.T

    @property
    def obs_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.observation.mask(self.layout))

    @property
    def unknown(self) -> np.ndarray:
        return ~self.layout.known_mask()

    @property
    def admissible(self) -> AdmissibleSetSpec:
        c = self.coeffs
        v1 = c.varpi1 if c.varpi1 is not None else c.c11
        v2 = c.varpi2 if c.varpi2 is not None else c.c22
        return AdmissibleSetSpec(self.M1, v1, v2, self.layout.known_mask())

    def precondition_problems(self) -> List[str]:
        """Named failures of the coupling and observation-time conditions."""
        out = []
        ok, margin = check_geometric_time(self.layout)
        if not ok:
            out.append(f"observation time: T = {self.T:g} does not exceed sup|x - x0| "
                       f"= {self.layout.sup_distance():g}")
        if self.coupling_c0 is not None:
            if not check_coupling_condition(self.coeffs.c21, self.layout.mask("omega0"), self.coupling_c0):
                out.append(f"coupling condition: c21 is not bounded away from 0 by "
                           f"c0 = {self.coupling_c0:g} with one sign on omega0")
        return out

    def validate(self) -> None:
        problems = self.precondition_problems()
        if problems:
            raise CouplingViolation("; ".join(problems))

    def with_observation(self, **kw) -> "InverseProblemSetup":
        return replace(self, observation=replace(self.observation, **kw))


# forward map -----------------------------------------------------------------

def forward(setup: InverseProblemSetup, c11, c22) -> Trajectory:
    coeffs = setup.coeffs.with_diagonal(c11, c22)
    try:
        return solve_coupled_wave(setup.grid, coeffs, setup.init, setup.T, setup.dt)
    except NonFiniteState as exc:
        raise SolverFailure(f"forward solve blew up at step {exc.step}") from exc


def _derivative_ops(setup: InverseProblemSetup, nt: int):
    return {o: time_derivative_matrix(nt, setup.dt, o) for o in setup.observation.orders}


def observe_setup(setup: InverseProblemSetup, traj: Trajectory) -> ObservationRecord:
    idx = setup.obs_nodes
    ops = _derivative_ops(setup, traj.n_times)
    traces = {}
    for comp in setup.observation.components:
        raw = traj.data[:, COMPONENTS[comp], :][:, idx]
        for o, D in ops.items():
            tr = np.asarray(D @ raw)
            tr.setflags(write=False)
            traces[(comp, o)] = tr
    return ObservationRecord(nodes=idx, times=traj.times, traces=traces,
                             space_weights=region_weights(setup.grid, idx))


def synthesize_data(setup: InverseProblemSetup, c11_fn, c22_fn, refine: int = 2,
                    init_fns=None) -> ObservationRecord:
    """Observations of the truth computed on a grid refined ``refine`` times.

    ``c11_fn``/``c22_fn`` are callables of ``x`` (or arrays on the setup grid
    when ``refine == 1``).  The remaining coefficients and the initial data
    are lifted from ``setup`` by cubic splines (clamped for the initial data)
    unless ``init_fns`` (four callables) is given.  The fine trajectory is sampled back onto the
    coarse space-time lattice before differentiation, so the data share the
    misfit's stencil.
    """
    if refine == 1:
        c11 = c11_fn(setup.grid.nodes) if callable(c11_fn) else c11_fn
        c22 = c22_fn(setup.grid.nodes) if callable(c22_fn) else c22_fn
        return observe_setup(setup, forward(setup, c11, c22))
    fine = setup.grid.refine(refine)
    xf = np.asarray(fine.nodes)
    xc = np.asarray(setup.grid.nodes)

    def lift(v, bc="not-a-knot"):
        return CubicSpline(xc, np.asarray(v, dtype=float), bc_type=bc)(xf)

    c = setup.coeffs
    fcoef = CoefficientSet(fine, lift(c.a), np.asarray(c11_fn(xf)), lift(c.c12), lift(c.c21),
                           np.asarray(c22_fn(xf)))
    if init_fns is not None:
        finit = InitialData.from_functions(fine, *init_fns)
    else:
        # clamped splines keep the zero boundary slope of the Neumann data
        i = setup.init
        finit = InitialData(fine, *(lift(v, "clamped") for v in (i.y10, i.y11, i.y20, i.y21)),
                            neumann_tol=math.inf)
    try:
        traj = solve_coupled_wave(fine, fcoef, finit, setup.T, setup.dt / refine)
    except NonFiniteState as exc:
        raise SolverFailure(f"data solve blew up at step {exc.step}") from exc
    coarse = traj.subsample(setup.grid, refine, refine)
    return observe_setup(setup, coarse)


# misfit and gradient -------------------------------------------------------------

def _l2(grid: Grid, v) -> float:
    return float(np.sum(grid.weights * np.asarray(v) ** 2))


def _residuals(setup: InverseProblemSetup, traj: Trajectory, data: ObservationRecord):
    sim = observe_setup(setup, traj)
    if set(sim.keys) != set(data.keys) or sim.traces[sim.keys[0]].shape != data.traces[sim.keys[0]].shape:
        raise GridMismatch("data do not match the configured observation")
    return {k: sim.traces[k] - data.traces[k] for k in sim.keys}


def misfit(c_pair, setup: InverseProblemSetup, data: ObservationRecord) -> float:
    c11, c22 = c_pair
    traj = forward(setup, c11, c22)
    return _misfit_from(setup, traj, data, c11, c22)


def _misfit_from(setup, traj, data, c11, c22) -> float:
    res = _residuals(setup, traj, data)
    W = np.outer(time_weights(traj.n_times, traj.dt), data.space_weights)
    J = 0.5 * sum(float(np.sum(W * r * r)) for r in res.values())
    if setup.alpha:
        J += setup.alpha * (_l2(setup.grid, c11 - setup.c_ref[0]) + _l2(setup.grid, c22 - setup.c_ref[1]))
    return J


def misfit_and_gradient(c_pair, setup: InverseProblemSetup, data: ObservationRecord
                        ) -> Tuple[float, np.ndarray, np.ndarray]:
    """Misfit and its L2 gradient ``(g11, g22)``, zero on the known set.

    The gradient is the exact derivative of the discrete misfit: the leapfrog
    recursion is differentiated in reverse, and the Euclidean derivative is
    divided by the trapezoid weights to represent it in L2.
    """
    c11, c22 = (np.asarray(c, dtype=float) for c in c_pair)
    traj = forward(setup, c11, c22)
    res = _residuals(setup, traj, data)
    nt = traj.n_times
    W = np.outer(time_weights(nt, traj.dt), data.space_weights)
    J = 0.5 * sum(float(np.sum(W * r * r)) for r in res.values())
    G = np.zeros_like(traj.data)
    ops = _derivative_ops(setup, nt)
    idx = data.nodes
    for (comp, o), r in res.items():
        G[:, COMPONENTS[comp], idx] += ops[o].T @ (W * r)
    lower, diag, upper = flux_bands(setup.coeffs.a, setup.grid.h)
    lt, dg, ut = transpose_bands(lower, diag, upper)
    c = setup.coeffs
    e11, e22 = kernels.leapfrog_adjoint(
        lt, dg, ut, np.ascontiguousarray(c11), np.ascontiguousarray(c.c21),
        np.ascontiguousarray(c.c12), np.ascontiguousarray(c22),
        np.ascontiguousarray(traj.data), np.ascontiguousarray(G), float(traj.dt))
    w = setup.grid.weights
    g11 = np.asarray(e11) / w
    g22 = np.asarray(e22) / w
    if setup.alpha:
        J += setup.alpha * (_l2(setup.grid, c11 - setup.c_ref[0]) + _l2(setup.grid, c22 - setup.c_ref[1]))
        g11 = g11 + 2.0 * setup.alpha * (c11 - setup.c_ref[0])
        g22 = g22 + 2.0 * setup.alpha * (c22 - setup.c_ref[1])
    known = setup.layout.known_mask()
    g11[known] = 0.0
    g22[known] = 0.0
    return J, g11, g22


def gradient_adjoint(c_pair, setup: InverseProblemSetup, data: ObservationRecord
                     ) -> Tuple[np.ndarray, np.ndarray]:
    _, g11, g22 = misfit_and_gradient(c_pair, setup, data)
    return g11, g22


def l2_inner(grid: Grid, u_pair, v_pair) -> float:
    w = grid.weights
    return float(sum(np.sum(w * np.asarray(u) * np.asarray(v)) for u, v in zip(u_pair, v_pair)))


# reconstruction ------------------------------------------------------------------

@dataclass
class IterationRecord:
    it: int
    J: float
    grad_norm: float
    step: float


@dataclass
class ReconstructionResult:
    c11: np.ndarray
    c22: np.ndarray
    log: List[IterationRecord]
    converged: bool
    budget_exhausted: bool

    @property
    def iterations(self) -> int:
        return len(self.log) - 1

    @property
    def J(self) -> float:
        return self.log[-1].J

    def log_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "J", "grad_norm", "step"])
            for r in self.log:
                w.writerow([r.it, repr(r.J), repr(r.grad_norm), repr(r.step)])

    def fields_to_csv(self, path, truth: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> None:
        t11, t22 = truth if truth is not None else (np.full_like(self.c11, np.nan),) * 2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "c11", "c22", "truth_c11", "truth_c22"])
            for i in range(len(self.c11)):
                w.writerow([i, repr(float(self.c11[i])), repr(float(self.c22[i])),
                            repr(float(t11[i])), repr(float(t22[i]))])


def relative_error(grid: Grid, c_pair, truth_pair) -> float:
    """``||(c11, c22) - truth|| / ||truth||`` in L2 over the whole interval."""
    num = sum(_l2(grid, np.asarray(c) - np.asarray(t)) for c, t in zip(c_pair, truth_pair))
    den = sum(_l2(grid, t) for t in truth_pair)
    return math.sqrt(num / den) if den > 0 else math.sqrt(num)


def reconstruct(setup: InverseProblemSetup, data: ObservationRecord, init_guess,
                max_iter: Optional[int] = None, tol: Optional[float] = None,
                armijo: float = 1e-4, min_step: float = 1e-12) -> ReconstructionResult:
    """Projected gradient descent with Barzilai-Borwein trial steps and backtracking.

    Each trial ``P(c - t g)`` is accepted once
    ``J(new) <= J(c) + armijo <g, new - c>``; otherwise ``t`` is halved.  The
    iteration stops when the projected-gradient norm drops below ``tol``
    times its initial value, when ``J`` hits zero, or after ``max_iter``
    steps (then ``budget_exhausted`` is set and the best iterate returned).
    """
    max_iter = setup.max_iter if max_iter is None else max_iter
    tol = setup.tol if tol is None else tol
    spec = setup.admissible
    grid = setup.grid
    c = project_admissible(*init_guess, spec)
    J, g11, g22 = misfit_and_gradient(c, setup, data)

    def pg_norm(c, g):
        p = project_admissible(c[0] - g[0], c[1] - g[1], spec)
        return math.sqrt(l2_inner(grid, (p[0] - c[0], p[1] - c[1]), (p[0] - c[0], p[1] - c[1])))

    gnorm0 = pg_norm(c, (g11, g22))
    log = [IterationRecord(0, J, gnorm0, 0.0)]
    if gnorm0 == 0.0 or J == 0.0:
        return ReconstructionResult(c[0], c[1], log, True, False)
    gn = math.sqrt(l2_inner(grid, (g11, g22), (g11, g22)))
    step = 0.1 * max(1.0, math.sqrt(l2_inner(grid, c, c))) / gn
    prev = None
    for it in range(1, max_iter + 1):
        if prev is not None:
            s = (c[0] - prev[0][0], c[1] - prev[0][1])
            y = (g11 - prev[1][0], g22 - prev[1][1])
            sy = l2_inner(grid, s, y)
            if sy > 0:
                step = l2_inner(grid, s, s) / sy
        t = step
        while True:
            trial = project_admissible(c[0] - t * g11, c[1] - t * g22, spec)
            d = (trial[0] - c[0], trial[1] - c[1])
            slope = l2_inner(grid, (g11, g22), d)
            Jt, t11, t22 = misfit_and_gradient(trial, setup, data)
            if Jt <= J + armijo * slope:
                break
            t *= 0.5
            if t < min_step:
                raise LineSearchStall(f"step fell below {min_step:g} at iteration {it}")
        prev = (c, (g11, g22))
        c, J, g11, g22 = trial, Jt, t11, t22
        gnorm = pg_norm(c, (g11, g22))
        log.append(IterationRecord(it, J, gnorm, t))
        if gnorm < tol * gnorm0 or J == 0.0:
            return ReconstructionResult(c[0], c[1], log, True, False)
    return ReconstructionResult(c[0], c[1], log, False, True)


# linearized map ----------------------------------------------------------------

@dataclass(frozen=True)
class LinearizedMap:
    """Dense weighted Jacobian of the coefficient-to-data map.

    Columns are ordered ``[dc11 at basis nodes..., dc22 at basis nodes...]``;
    rows carry ``sqrt`` of the space-time quadrature weights and columns are
    divided by ``sqrt`` of the nodal weights, so the Euclidean operator norm is
    the L2-to-L2 norm.
    """

    matrix: np.ndarray
    basis_nodes: np.ndarray
    epsilon: float
    obs_size: int

    @property
    def n_basis(self) -> int:
        return len(self.basis_nodes)

    @property
    def block_c11(self) -> np.ndarray:
        return self.matrix[:, : self.n_basis]

    @property
    def block_c22(self) -> np.ndarray:
        return self.matrix[:, self.n_basis:]


def _stacked(setup: InverseProblemSetup, obs: ObservationRecord) -> np.ndarray:
    W = np.sqrt(np.outer(obs.time_weights, obs.space_weights))
    return np.concatenate([(W * obs.traces[k]).ravel() for k in obs.keys])


def build_linearized_map(setup: InverseProblemSetup, c11_bar, c22_bar,
                         basis_nodes: Optional[np.ndarray] = None,
                         epsilon: Optional[float] = None, jobs: int = 1) -> LinearizedMap:
    """Central-difference Jacobian with respect to nodal values off ``omega_tilde``.

    The step defaults to ``1e-5 max(1, ||c_bar||)`` (L2 norm of the pair).
    """
    c11_bar = np.asarray(c11_bar, dtype=float) * np.ones(setup.grid.n_nodes)
    c22_bar = np.asarray(c22_bar, dtype=float) * np.ones(setup.grid.n_nodes)
    if basis_nodes is None:
        basis_nodes = np.flatnonzero(setup.unknown)
    basis_nodes = np.asarray(basis_nodes, dtype=int)
    if np.any(setup.layout.known_mask()[basis_nodes]):
        raise PreconditionError("basis nodes must lie outside omega_tilde")
    if epsilon is None:
        norm = math.sqrt(_l2(setup.grid, c11_bar) + _l2(setup.grid, c22_bar))
        epsilon = 1e-5 * max(1.0, norm)
    w = setup.grid.weights

    def column(job):
        block, node = job
        out = []
        for sign in (1.0, -1.0):
            c = [c11_bar.copy(), c22_bar.copy()]
            c[block][node] += sign * epsilon
            out.append(_stacked(setup, observe_setup(setup, forward(setup, c[0], c[1]))))
        return (out[0] - out[1]) / (2.0 * epsilon) / math.sqrt(w[node])

    jobs_list = [(b, int(i)) for b in (0, 1) for i in basis_nodes]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cols = list(pool.map(column, jobs_list))
    else:
        cols = [column(j) for j in jobs_list]
    A = np.column_stack(cols)
    return LinearizedMap(A, basis_nodes, float(epsilon), A.shape[0])


@dataclass(frozen=True)
class SvdReport:
    sigma_min: float
    sigma_max: float
    condition: float
    singular_values: np.ndarray


def stability_svd(lmap) -> SvdReport:
    A = lmap.matrix if isinstance(lmap, LinearizedMap) else np.asarray(lmap, dtype=float)
    try:
        sv = np.linalg.svd(A, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"SVD did not converge: {exc}") from exc
    if sv.size == 0:
        raise ConvergenceFailure("empty matrix")
    smin, smax = float(sv[-1]) if A.shape[0] >= A.shape[1] else 0.0, float(sv[0])
    cond = smax / smin if smin > 0 else math.inf
    return SvdReport(smin, smax, cond, sv)
