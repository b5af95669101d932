"""Finite-difference solver for the coupled wave system with Neumann boundaries.

The system is

    y1'' - (a y1_x)_x + c11 y1 + c12 y2 = 0
    y2'' - (a y2_x)_x + c21 y1 + c22 y2 = 0

on ``[0, X]`` with homogeneous Neumann conditions.  Space is discretized with
the conservative flux stencil (``a`` averaged to half nodes, ghost-node
reflection at the boundary), time with explicit leapfrog.
"""
from __future__ import annotations

import csv
import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from . import kernels
from .errors import (CflViolation, EmptySubdomain, GridError, GridMismatch, NonFiniteState,
                     ZeroInitialData)
from .grid import Cutoff, Grid, Interval, ScalarField

DEFAULT_CFL = 0.5
CFL_LIMIT = 0.9


def _vec(f, grid: Grid, name: str) -> np.ndarray:
    v = np.array(np.asarray(f, dtype=float), dtype=float)
    if v.ndim == 0:
        v = np.full(grid.n_nodes, float(v))
    if v.shape != (grid.n_nodes,):
        raise GridMismatch(f"{name} has shape {v.shape}, expected ({grid.n_nodes},)")
    if not np.all(np.isfinite(v)):
        raise GridError(f"{name} has non-finite values")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class CoefficientSet:
    """Principal coefficient ``a`` and the zeroth-order coupling matrix.

    Scalars are broadcast to constant fields.  ``theta1`` and ``M1`` are
    checked on construction when given; ``varpi1``/``varpi2`` are the known
    values of ``c11``/``c22`` on ``omega_tilde`` (checked by
    :meth:`admissibility_problems`).
    """

    grid: Grid
    a: np.ndarray
    c11: np.ndarray
    c12: np.ndarray
    c21: np.ndarray
    c22: np.ndarray
    M0: float = math.inf
    M1: float = math.inf
    theta0: float = 0.0
    theta1: float = 0.0
    varpi1: Optional[np.ndarray] = None
    varpi2: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("a", "c11", "c12", "c21", "c22"):
            object.__setattr__(self, name, _vec(getattr(self, name), self.grid, name))
        for name in ("varpi1", "varpi2"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, _vec(getattr(self, name), self.grid, name))
        if not np.all(self.a > self.theta1):
            raise GridError(f"a must exceed theta1 = {self.theta1} everywhere")
        for name in ("c11", "c22"):
            if np.max(np.abs(getattr(self, name))) > self.M1:
                raise GridError(f"sup norm of {name} exceeds M1 = {self.M1}")

    def with_diagonal(self, c11, c22) -> "CoefficientSet":
        """Copy with ``c11``/``c22`` replaced (bounds are not re-checked)."""
        new = object.__new__(CoefficientSet)
        for f in self.__dataclass_fields__:
            object.__setattr__(new, f, getattr(self, f))
        object.__setattr__(new, "c11", _vec(c11, self.grid, "c11"))
        object.__setattr__(new, "c22", _vec(c22, self.grid, "c22"))
        return new

    def admissibility_problems(self, known_mask: np.ndarray, atol: float = 1e-12):
        out = []
        for name, pi in (("c11", self.varpi1), ("c22", self.varpi2)):
            c = getattr(self, name)
            if np.max(np.abs(c)) > self.M1:
                out.append(f"sup norm of {name} exceeds M1")
            if pi is not None and np.any(np.abs(c - pi)[known_mask] > atol):
                out.append(f"{name} differs from its known values on omega_tilde")
        return out

    def restricted_to(self, coarse: Grid, stride: int) -> "CoefficientSet":
        """Sample every ``stride``-th node (fine grid to coarse grid)."""
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw["grid"] = coarse
        for name in ("a", "c11", "c12", "c21", "c22", "varpi1", "varpi2"):
            if kw[name] is not None:
                kw[name] = np.asarray(kw[name])[::stride]
        return CoefficientSet(**kw)


@dataclass(frozen=True)
class InitialData:
    """Initial displacement and velocity of both components."""

    grid: Grid
    y10: np.ndarray
    y11: np.ndarray
    y20: np.ndarray
    y21: np.ndarray
    neumann_tol: Optional[float] = None

    def __post_init__(self):
        for name in ("y10", "y11", "y20", "y21"):
            object.__setattr__(self, name, _vec(getattr(self, name), self.grid, name))
        defect = self.neumann_defect()
        scale = max(1.0, max(np.max(np.abs(getattr(self, n))) for n in ("y10", "y11", "y20", "y21")))
        tol = self.neumann_tol if self.neumann_tol is not None else max(1e-8, 50.0 * self.grid.h**2)
        if defect > tol * scale:
            raise GridError(f"initial data violate the Neumann condition (boundary slope {defect:.3g})")

    def neumann_defect(self) -> float:
        """Largest one-sided second-order boundary slope over the four fields."""
        h = self.grid.h
        worst = 0.0
        for name in ("y10", "y11", "y20", "y21"):
            v = getattr(self, name)
            left = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
            right = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
            worst = max(worst, abs(left), abs(right))
        return worst

    def is_zero(self) -> bool:
        return all(not np.any(getattr(self, n)) for n in ("y10", "y11", "y20", "y21"))

    @classmethod
    def from_functions(cls, grid: Grid, y10=0.0, y11=0.0, y20=0.0, y21=0.0, **kw) -> "InitialData":
        x = np.asarray(grid.nodes)
        vals = [np.broadcast_to(f(x) if callable(f) else f, x.shape) for f in (y10, y11, y20, y21)]
        return cls(grid, *vals, **kw)

    def restricted_to(self, coarse: Grid, stride: int) -> "InitialData":
        return InitialData(coarse, self.y10[::stride], self.y11[::stride], self.y20[::stride],
                           self.y21[::stride], neumann_tol=self.neumann_tol)


@dataclass(frozen=True)
class Trajectory:
    """Snapshots ``data[k, j, i]`` of component ``j`` at time ``k * dt`` and node ``i``."""

    grid: Grid
    dt: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[1] != 2 or d.shape[2] != self.grid.n_nodes:
            raise GridMismatch(f"trajectory data has shape {d.shape}")
        d.setflags(write=False)

    @property
    def n_times(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> float:
        return (self.n_times - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_times) * self.dt

    @property
    def y1(self) -> np.ndarray:
        return self.data[:, 0, :]

    @property
    def y2(self) -> np.ndarray:
        return self.data[:, 1, :]

    def snapshots(self) -> Iterable[Tuple[np.ndarray, np.ndarray]]:
        for k in range(self.n_times):
            yield self.data[k, 0], self.data[k, 1]

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        return difference(self, other)

    def subsample(self, coarse: Grid, space_stride: int, time_stride: int) -> "Trajectory":
        return Trajectory(coarse, self.dt * time_stride,
                          np.ascontiguousarray(self.data[::time_stride, :, ::space_stride]))

    def to_csv(self, path) -> None:
        """Write ``node, time, y1, y2`` rows (node index, time-major order)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "time", "y1", "y2"])
            t = self.times
            for k in range(self.n_times):
                for i in range(self.grid.n_nodes):
                    w.writerow([i, repr(float(t[k])), repr(float(self.data[k, 0, i])),
                                repr(float(self.data[k, 1, i]))])


def difference(a: Trajectory, b: Trajectory) -> Trajectory:
    if a.data.shape != b.data.shape or a.dt != b.dt or a.grid.n_nodes != b.grid.n_nodes:
        raise GridMismatch("trajectories live on different grids or time axes")
    return Trajectory(a.grid, a.dt, a.data - b.data)


# spatial operator ------------------------------------------------------------

def flux_bands(a, h: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bands ``(lower, diag, upper)`` of the Neumann flux operator ``(a y_x)_x``."""
    a = np.asarray(a, dtype=float)
    ah = 0.5 * (a[:-1] + a[1:]) / h**2
    n = len(a)
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[1:] = ah
    upper[:-1] = ah
    upper[0] = 2.0 * ah[0]
    lower[-1] = 2.0 * ah[-1]
    diag = -(lower + upper)
    return lower, diag, upper


def apply_flux(a, h: float, y: np.ndarray) -> np.ndarray:
    """``(a y_x)_x`` along the last axis, Neumann ghost reflection at both ends."""
    lower, diag, upper = flux_bands(a, h)
    out = diag * y
    out[..., 1:] += lower[1:] * y[..., :-1]
    out[..., :-1] += upper[:-1] * y[..., 1:]
    return out


def transpose_bands(lower, diag, upper):
    lt = np.zeros_like(lower)
    ut = np.zeros_like(upper)
    lt[1:] = upper[:-1]
    ut[:-1] = lower[1:]
    return lt, diag, ut


def cfl_number(grid: Grid, a, dt: float) -> float:
    return float(np.sqrt(np.max(a)) * dt / grid.h)


def stable_dt(grid: Grid, a, cfl: float = DEFAULT_CFL) -> float:
    return cfl * grid.h / float(np.sqrt(np.max(a)))


def solve_coupled_wave(grid: Grid, coeffs: CoefficientSet, init: InitialData, T: float,
                       dt: Optional[float] = None, *, cfl_limit: float = CFL_LIMIT) -> Trajectory:
    """Leapfrog trajectory on ``[0, T]``.

    ``dt`` is shrunk, if needed, so that it divides ``T``; the default is the
    step at CFL number 0.5.  The first step is the Taylor start
    ``y0 + dt y1 + dt^2/2 (div(a grad y0) - C y0)``.
    """
    if coeffs.grid.n_nodes != grid.n_nodes or init.grid.n_nodes != grid.n_nodes:
        raise GridMismatch("coefficients, initial data and grid disagree")
    if not T > 0:
        raise GridError(f"final time must be positive, got {T}")
    if dt is None:
        dt = stable_dt(grid, coeffs.a)
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    cfl = cfl_number(grid, coeffs.a, dt)
    if cfl > cfl_limit:
        raise CflViolation(f"CFL number {cfl:.4g} exceeds {cfl_limit}")
    lower, diag, upper = flux_bands(coeffs.a, grid.h)
    out, failed = kernels.leapfrog(
        lower, diag, upper,
        np.ascontiguousarray(coeffs.c11), np.ascontiguousarray(coeffs.c12),
        np.ascontiguousarray(coeffs.c21), np.ascontiguousarray(coeffs.c22),
        np.ascontiguousarray(init.y10), np.ascontiguousarray(init.y20),
        np.ascontiguousarray(init.y11), np.ascontiguousarray(init.y21),
        float(dt), int(nsteps))
    if failed >= 0:
        raise NonFiniteState(int(failed))
    return Trajectory(grid, dt, out)


# diagnostics -----------------------------------------------------------------

def _bilinear_flux(a, h, y, z):
    """Sum over cells of ``a_{i+1/2} (y_{i+1} - y_i)(z_{i+1} - z_i) / h`` along the last axis."""
    ah = 0.5 * (np.asarray(a)[:-1] + np.asarray(a)[1:])
    return np.sum(ah * np.diff(y, axis=-1) * np.diff(z, axis=-1), axis=-1) / h


def energy(traj: Trajectory, a) -> Tuple[np.ndarray, np.ndarray]:
    """Discrete energy at the half steps ``t_{n+1/2}``.

    ``E = 1/2 sum_j ( ||(y_j^{n+1} - y_j^n)/dt||^2 + <a dx y_j^{n+1}, dx y_j^n> )``
    with trapezoid weights in space and cell differences for ``dx``.  For
    ``c = 0`` this is exactly the quantity leapfrog conserves.
    """
    a = np.asarray(a, dtype=float)
    w = traj.grid.weights
    Y = traj.data
    v = np.diff(Y, axis=0) / traj.dt
    kinetic = np.einsum("kji,i->k", v * v, w)
    potential = _bilinear_flux(a, traj.grid.h, Y[1:], Y[:-1]).sum(axis=1)
    t = (np.arange(traj.n_times - 1) + 0.5) * traj.dt
    return t, 0.5 * (kinetic + potential)


def energy_drift(traj: Trajectory, a) -> float:
    _, E = energy(traj, a)
    if E[0] == 0:
        return float(np.max(np.abs(E)))
    return float(np.max(np.abs(E - E[0])) / abs(E[0]))


def _h1_squared(grid: Grid, y: np.ndarray) -> np.ndarray:
    w = grid.weights
    return np.sum(y * y * w, axis=-1) + np.sum(np.diff(y, axis=-1) ** 2, axis=-1) / grid.h


def verify_wellposedness_bound(traj: Trajectory, init: InitialData) -> float:
    """``sup_t ||(y1, y2)(t)|| / ||initial data||`` in the discrete energy-H^1 norm.

    The state norm is ``sum_j ||y_j||_{H^1}^2 + ||d_t y_j||^2`` (centered time
    differences); the data norm uses the initial displacements and velocities.
    """
    if init.is_zero():
        raise ZeroInitialData("initial data vanish identically")
    g = traj.grid
    w = g.weights
    vel = np.gradient(traj.data, traj.dt, axis=0, edge_order=2)
    state = _h1_squared(g, traj.data).sum(axis=1) + np.sum(vel * vel * w, axis=2).sum(axis=1)
    data = (_h1_squared(g, init.y10) + _h1_squared(g, init.y20)
            + np.sum(init.y11**2 * w) + np.sum(init.y21**2 * w))
    return float(np.sqrt(np.max(state) / data))


# observations ----------------------------------------------------------------

@lru_cache(maxsize=64)
def _derivative_matrix(nt: int, dt: float, order: int) -> sparse.csr_matrix:
    if order == 0:
        return sparse.identity(nt, format="csr")
    if order == 1:
        if nt < 3:
            raise GridError("first time derivative needs at least 3 samples")
        m = sparse.diags([-0.5 * np.ones(nt - 1), 0.5 * np.ones(nt - 1)], [-1, 1], format="lil")
        m[0, 0:3] = [-1.5, 2.0, -0.5]
        m[nt - 1, nt - 3:nt] = [0.5, -2.0, 1.5]
        return (m / dt).tocsr()
    if order == 2:
        if nt < 4:
            raise GridError("second time derivative needs at least 4 samples")
        m = sparse.diags([np.ones(nt - 1), -2.0 * np.ones(nt), np.ones(nt - 1)], [-1, 0, 1], format="lil")
        m[0, 0:4] = [2.0, -5.0, 4.0, -1.0]
        m[nt - 1, nt - 4:nt] = [-1.0, 4.0, -5.0, 2.0]
        return (m / dt**2).tocsr()
    raise ValueError(f"derivative order must be 0, 1 or 2, got {order}")


def time_derivative_matrix(nt: int, dt: float, order: int) -> sparse.csr_matrix:
    """Second-order finite-difference matrix for ``d^order / dt^order``.

    Centered in the interior, one-sided (second order) at both ends.  The
    result is cached and shared; do not modify it in place.
    """
    return _derivative_matrix(int(nt), float(dt), int(order))


def time_weights(nt: int, dt: float) -> np.ndarray:
    w = np.full(nt, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def region_weights(grid: Grid, idx: np.ndarray) -> np.ndarray:
    """Trapezoid weights of a node set: half weight at the ends of each contiguous run."""
    idx = np.asarray(idx)
    w = np.full(len(idx), grid.h)
    if len(idx) > 1:
        gap = np.diff(idx) > 1
        starts = np.r_[True, gap]
        ends = np.r_[gap, True]
        w[starts | ends] = 0.5 * grid.h
    return w


def _region_indices(grid: Grid, subdomain) -> np.ndarray:
    if isinstance(subdomain, Interval):
        idx = subdomain.indices(grid)
    else:
        s = np.asarray(subdomain)
        idx = np.flatnonzero(s) if s.dtype == bool else s.astype(int)
    if idx.size == 0:
        raise EmptySubdomain("observation subdomain contains no grid nodes")
    return idx


COMPONENTS = {"y1": 0, "y2": 1}


@dataclass(frozen=True)
class ObservationRecord:
    """Time traces of derivatives of the observed components on a node set.

    ``traces[(component, order)]`` has shape ``(n_times, n_nodes_observed)``.
    """

    nodes: np.ndarray
    times: np.ndarray
    traces: Dict[Tuple[str, int], np.ndarray]
    space_weights: np.ndarray
    noise_level: float = 0.0
    seed: Optional[int] = None

    @property
    def keys(self):
        return sorted(self.traces)

    @property
    def time_weights(self) -> np.ndarray:
        return time_weights(len(self.times), self.times[1] - self.times[0])

    def norm(self, key=None) -> float:
        """Space-time L2 norm of one trace, or of all traces stacked."""
        W = np.outer(self.time_weights, self.space_weights)
        keys = [key] if key is not None else self.keys
        return float(np.sqrt(sum(np.sum(W * self.traces[k] ** 2) for k in keys)))

    def distance(self, other: "ObservationRecord") -> float:
        W = np.outer(self.time_weights, self.space_weights)
        return float(np.sqrt(sum(np.sum(W * (self.traces[k] - other.traces[k]) ** 2)
                                 for k in self.keys)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "node", "order", "component", "value"])
            for comp, order in self.keys:
                tr = self.traces[(comp, order)]
                for k, t in enumerate(self.times):
                    for m, i in enumerate(self.nodes):
                        w.writerow([repr(float(t)), int(i), order, comp, repr(float(tr[k, m]))])


def observe(traj: Trajectory, subdomain, orders: Sequence[int] = (0,),
            components: Sequence[str] = ("y1",)) -> ObservationRecord:
    """Restrict the trajectory (and its time derivatives) to a node set."""
    idx = _region_indices(traj.grid, subdomain)
    orders = sorted(set(int(o) for o in orders))
    if any(o not in (0, 1, 2) for o in orders):
        raise ValueError(f"orders must be a subset of {{0, 1, 2}}, got {orders}")
    traces = {}
    for comp in components:
        raw = traj.data[:, COMPONENTS[comp], :][:, idx]
        for o in orders:
            if o == 0:
                tr = np.array(raw)
            else:
                tr = time_derivative_matrix(traj.n_times, traj.dt, o) @ raw
            tr.setflags(write=False)
            traces[(comp, o)] = tr
    return ObservationRecord(nodes=idx, times=traj.times, traces=traces,
                             space_weights=region_weights(traj.grid, idx))


def add_noise(obs: ObservationRecord, delta: float, seed: Optional[int] = None) -> ObservationRecord:
    """Add Gaussian noise rescaled to relative size exactly ``delta`` per trace."""
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    if delta == 0:
        return replace(obs, noise_level=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    W = np.outer(obs.time_weights, obs.space_weights)
    traces = {}
    for key in obs.keys:
        clean = obs.traces[key]
        noise = rng.standard_normal(clean.shape)
        cn = np.sqrt(np.sum(W * clean**2))
        nn = np.sqrt(np.sum(W * noise**2))
        noisy = clean + (delta * cn / nn) * noise if cn > 0 else np.array(clean)
        noisy.setflags(write=False)
        traces[key] = noisy
    return replace(obs, traces=traces, noise_level=float(delta), seed=seed)


# fields for the transformed system --------------------------------------------

@dataclass(frozen=True)
class UVFields:
    """Time-differentiated difference fields on the symmetric axis ``(-T, T)``.

    ``u = d_t w`` (odd in time), ``U = chi u``, ``V = chi d_t^2 w`` (even in
    time); arrays have shape ``(n_times, 2, n_nodes)``.
    """

    grid: Grid
    dt: float
    times: np.ndarray
    u: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def signal(self, which: str, component: int):
        from .fbi import TimeSignal  # local import: fbi depends on this module
        arr = {"u": self.u, "U": self.U, "V": self.V}[which]
        return TimeSignal(self.times, arr[:, component, :], self.grid.weights)


def second_difference(y: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    y = np.moveaxis(np.asarray(y, dtype=float), axis, 0)
    out = np.empty_like(y)
    out[1:-1] = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / dt**2
    out[0] = (2 * y[0] - 5 * y[1] + 4 * y[2] - y[3]) / dt**2
    out[-1] = (2 * y[-1] - 5 * y[-2] + 4 * y[-3] - y[-4]) / dt**2
    return np.moveaxis(out, 0, axis)


def build_UV_fields(w_traj: Trajectory, chi) -> UVFields:
    """``U = chi d_t w`` and ``V = chi d_t^2 w`` on ``(-T, T)``.

    ``w`` is extended evenly in time, which matches the zero initial
    displacement and velocity of a difference of two solutions with equal data.
    """
    chi_v = np.asarray(chi, dtype=float)
    if chi_v.shape != (w_traj.grid.n_nodes,):
        raise GridMismatch("cutoff and trajectory live on different grids")
    w = w_traj.data
    sym = np.concatenate([w[:0:-1], w], axis=0)
    dt = w_traj.dt
    u = np.gradient(sym, dt, axis=0, edge_order=2)
    wtt = second_difference(sym, dt)
    nt = sym.shape[0]
    times = (np.arange(nt) - (w_traj.n_times - 1)) * dt
    return UVFields(w_traj.grid, dt, times, u, chi_v * u, chi_v * wtt)
