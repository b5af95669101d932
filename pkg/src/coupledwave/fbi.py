"""Gaussian F.B.I. transform in time, its window, source terms and diagnostics.

For a signal ``f(x, l)`` the transform is

    (F_lam f)(x, s) = int F_lam(l0 + i s - l) Phi(l) f(x, l) dl,

with the entire kernel ``F_lam(z) = lam F(lam z)`` and
``F(z) = sqrt(pi)/(2 pi) exp(-z^2/4)``.  Integrals over the window support
``[-L/2, L/2]`` use composite Simpson on a uniform grid whose spacing is the
signal's time step divided by ``ctx.refine``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .errors import GridMismatch, InfeasibleSlope, PreconditionError, WindowOutsideSignal
from .grid import Cutoff, Grid, nodal_derivatives, smoothstep, smoothstep_d1, smoothstep_d2
from .solver import UVFields, apply_flux

SQRT_PI_OVER_2PI = math.sqrt(math.pi) / (2.0 * math.pi)

#: slope constant sup|Phi'| * L of the plain quintic window
QUINTIC_SLOPE = 7.5


def kernel_F(z):
    """``sqrt(pi)/(2 pi) exp((Im z^2 - Re z^2)/4) exp(-i Im z Re z / 2)``."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    return SQRT_PI_OVER_2PI * np.exp(0.25 * (y * y - x * x)) * np.exp(-0.5j * y * x)


def kernel_F_lambda(lam: float, z):
    if lam < 1:
        raise PreconditionError(f"lambda must be >= 1, got {lam}")
    return lam * kernel_F(lam * np.asarray(z, dtype=complex))


def kernel_F_lambda_modulus(lam: float, z):
    z = np.asarray(z, dtype=complex)
    return SQRT_PI_OVER_2PI * lam * np.exp(0.25 * lam**2 * (z.imag**2 - z.real**2))


# window ----------------------------------------------------------------------

def _ramp_integral(t):
    # antiderivative of the quintic smooth step, I(1) = 1/2
    return t**4 * (t * (t - 3.0) + 2.5)


@dataclass(frozen=True)
class Window:
    """Plateau window: 1 on ``[-L/4, L/4]``, 0 outside ``[-L/2, L/2]``.

    The transition is a quintic smooth step (``eps is None``) or, for tighter
    slope constants, a linear ramp whose corners are blended by quintic steps
    over a fraction ``eps`` of the transition.  ``slope_constant`` and
    ``curvature_constant`` are the exact suprema of ``|Phi'| L`` and
    ``|Phi''| L^2``.
    """

    L: float
    eps: Optional[float] = None

    @property
    def plateau(self) -> Tuple[float, float]:
        return (-self.L / 4, self.L / 4)

    @property
    def support(self) -> Tuple[float, float]:
        return (-self.L / 2, self.L / 2)

    @property
    def _k(self) -> float:
        return 1.0 / (1.0 - self.eps)

    @property
    def slope_constant(self) -> float:
        if self.eps is None:
            return QUINTIC_SLOPE
        return 4.0 * self._k

    @property
    def curvature_constant(self) -> float:
        if self.eps is None:
            return 16.0 * 10.0 / math.sqrt(3.0)
        return 16.0 * self._k * 1.875 / self.eps

    @property
    def sup_d1(self) -> float:
        return self.slope_constant / self.L

    @property
    def sup_d2(self) -> float:
        return self.curvature_constant / self.L**2

    def _profile(self, u, order):
        """Transition ``T(u)`` rising from 0 to 1 on ``[0, 1]`` and its derivatives."""
        u = np.clip(u, 0.0, 1.0)
        if self.eps is None:
            return (smoothstep, smoothstep_d1, smoothstep_d2)[order](u)
        e, k = self.eps, self._k
        lo = u < e
        hi = u > 1.0 - e
        mid = ~(lo | hi)
        out = np.empty_like(u)
        if order == 0:
            out[lo] = k * e * _ramp_integral(u[lo] / e)
            out[mid] = k * (0.5 * e + (u[mid] - e))
            out[hi] = 1.0 - k * e * _ramp_integral((1.0 - u[hi]) / e)
        elif order == 1:
            out[lo] = k * smoothstep(u[lo] / e)
            out[mid] = k
            out[hi] = k * smoothstep((1.0 - u[hi]) / e)
        else:
            out[lo] = k * smoothstep_d1(u[lo] / e) / e
            out[mid] = 0.0
            out[hi] = -k * smoothstep_d1((1.0 - u[hi]) / e) / e
        return out

    def _eval(self, l, order):
        l = np.asarray(l, dtype=float)
        q = self.L / 4
        a = np.abs(l)
        u = (a - q) / q
        trans = (a > q) & (a < 2 * q)
        out = np.zeros_like(l)
        if order == 0:
            out[a <= q] = 1.0
            out[trans] = 1.0 - self._profile(u[trans], 0)
        elif order == 1:
            out[trans] = -np.sign(l[trans]) * self._profile(u[trans], 1) / q
        else:
            out[trans] = -self._profile(u[trans], 2) / q**2
        return out

    def __call__(self, l):
        return self._eval(l, 0)

    def d1(self, l):
        return self._eval(l, 1)

    def d2(self, l):
        return self._eval(l, 2)

    def table(self, n: int = 4001):
        """Dense samples ``(l, Phi, Phi', Phi'')`` over the support."""
        l = np.linspace(-self.L / 2, self.L / 2, n)
        return l, self(l), self.d1(l), self.d2(l)


def build_window(L: float, slope_constant: Optional[float] = None) -> Window:
    """Window with ``sup |Phi'| <= slope_constant / L``.

    Any constant is at least 4 (a unit drop over a width ``L/4``); exactly 4
    needs a kink, so the bound must be strict.  ``None`` selects the plain
    quintic step (constant 7.5).
    """
    if not L > 0:
        raise PreconditionError(f"window length must be positive, got {L}")
    if slope_constant is None or slope_constant >= QUINTIC_SLOPE:
        return Window(float(L))
    if slope_constant <= 4.0:
        raise InfeasibleSlope(
            f"sup|Phi'| <= {slope_constant}/L is infeasible for a smooth unit drop over width L/4")
    return Window(float(L), eps=1.0 - 4.0 / slope_constant)


# signals and context -----------------------------------------------------------

@dataclass(frozen=True)
class TimeSignal:
    """Real samples ``values[k, m]`` at uniform ``times[k]`` and spatial node ``m``."""

    times: np.ndarray
    values: np.ndarray
    space_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        if v.shape[0] != len(self.times):
            raise GridMismatch("signal values and time axis disagree")
        if self.space_weights is None:
            object.__setattr__(self, "space_weights", np.ones(v.shape[1]))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def take(self, idx) -> "TimeSignal":
        return TimeSignal(self.times, self.values[:, idx], np.asarray(self.space_weights)[idx])

    @classmethod
    def from_function(cls, fn, t0: float, t1: float, n: int, n_nodes: int = 1) -> "TimeSignal":
        t = np.linspace(t0, t1, n)
        vals = np.asarray(fn(t), dtype=float)
        if vals.ndim == 1:
            vals = np.repeat(vals[:, None], n_nodes, axis=1)
        return cls(t, vals)


@dataclass(frozen=True)
class FbiContext:
    lam: float
    window: Window
    l0: float = 0.0
    refine: int = 1

    def __post_init__(self):
        if self.lam < 1:
            raise PreconditionError(f"lambda must be >= 1, got {self.lam}")
        if abs(self.l0) > self.L / 8 + 1e-12:
            raise PreconditionError(f"l0 = {self.l0} lies outside K0 = [-L/8, L/8]")
        if self.refine < 1:
            raise PreconditionError("refine must be a positive integer")

    @property
    def L(self) -> float:
        return self.window.L

    @property
    def K0(self) -> Tuple[float, float]:
        return (-self.L / 8, self.L / 8)

    def with_lam(self, lam: float) -> "FbiContext":
        return FbiContext(lam, self.window, self.l0, self.refine)


@dataclass(frozen=True)
class FbiField:
    """Complex values on the ``(node, s)`` lattice, optionally with a leading component axis."""

    values: np.ndarray
    s: np.ndarray
    lam: float
    l0: float
    nodes: Optional[np.ndarray] = None

    def to_csv(self, path, component: Optional[int] = None) -> None:
        vals = self.values if component is None else self.values[component]
        nodes = self.nodes if self.nodes is not None else np.arange(vals.shape[-2])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "s", "re", "im"])
            for m, i in enumerate(nodes):
                for j, s in enumerate(self.s):
                    v = vals[m, j]
                    w.writerow([int(i), repr(float(s)), repr(float(v.real)), repr(float(v.imag))])


def _quadrature_grid(signal: TimeSignal, ctx: FbiContext):
    """Uniform nodes on ``[-L/2, L/2]`` (count divisible by 8) and signal values there."""
    half = ctx.L / 2
    t = signal.times
    tol = 1e-9 * max(1.0, ctx.L)
    if t[0] > -half + tol or t[-1] < half - tol:
        raise WindowOutsideSignal(
            f"signal covers [{t[0]:.4g}, {t[-1]:.4g}] but the window needs [{-half:.4g}, {half:.4g}]")
    dq = signal.dt / ctx.refine
    n_int = 8 * int(math.ceil(ctx.L / (8 * dq) - 1e-9))
    l = np.linspace(-half, half, n_int + 1)
    pos = (l - t[0]) / signal.dt
    k = np.rint(pos).astype(int)
    if np.all(np.abs(pos - k) < 1e-7):
        vals = signal.values[k]
    else:
        vals = CubicSpline(t, signal.values, axis=0)(l)
    return l, vals


def _simpson_weights(n: int, h: float) -> np.ndarray:
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _transform(l, vals, ctx: FbiContext, z, multiplier) -> np.ndarray:
    """``sum_q F_lam(z - l_q) w_q multiplier_q vals_q`` for each z; shape ``(len z, n_nodes)``."""
    w = _simpson_weights(len(l), l[1] - l[0]) * multiplier
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    K = kernel_F_lambda(ctx.lam, z[:, None] - l[None, :]) * w[None, :]
    return K @ vals


def fbi_at(signal: TimeSignal, ctx: FbiContext, z) -> np.ndarray:
    """Transform evaluated at complex points ``z = l0 + i s``; shape ``(len z, n_nodes)``."""
    l, vals = _quadrature_grid(signal, ctx)
    return _transform(l, vals, ctx, z, ctx.window(l))


def fbi_transform(signal: TimeSignal, ctx: FbiContext, s: float) -> np.ndarray:
    """Transform at one ``s`` for every node."""
    return fbi_at(signal, ctx, ctx.l0 + 1j * s)[0]


def fbi_field(signal: TimeSignal, ctx: FbiContext, s_values) -> FbiField:
    s_values = np.asarray(s_values, dtype=float)
    vals = fbi_at(signal, ctx, ctx.l0 + 1j * s_values).T
    return FbiField(vals, s_values, ctx.lam, ctx.l0)


# source terms ------------------------------------------------------------------

def commutator_source(u: np.ndarray, a, chi: Cutoff, h: float) -> np.ndarray:
    """``(a' chi') u + a (chi'' u + 2 chi' u_x)`` along the last axis."""
    a = np.asarray(a, dtype=float)
    da, _ = nodal_derivatives(a, h)
    ux = np.gradient(u, h, axis=-1, edge_order=2)
    return (da * chi.d1) * u + a * (chi.d2 * u + 2.0 * chi.d1 * ux)


def compute_G_H(uv: UVFields, a, chi: Cutoff, ctx: FbiContext, s_values,
                nodes: Optional[np.ndarray] = None) -> Tuple[FbiField, FbiField]:
    """Transformed commutator terms ``G_j`` and window-derivative terms ``H_j``.

    Returns two fields with values of shape ``(2, n_nodes, n_s)``; ``nodes``
    selects a subset of grid nodes (default: all).
    """
    if np.asarray(a).shape != (uv.grid.n_nodes,) or chi.values.shape != (uv.grid.n_nodes,):
        raise GridMismatch("coefficient, cutoff and fields live on different grids")
    nodes = np.arange(uv.grid.n_nodes) if nodes is None else np.asarray(nodes)
    s_values = np.asarray(s_values, dtype=float)
    z = ctx.l0 + 1j * s_values
    src = commutator_source(uv.u, a, chi, uv.grid.h)
    t = uv.times
    win = ctx.window
    Ul = np.gradient(uv.U, uv.dt, axis=0, edge_order=2)
    hsrc = win.d2(t)[:, None, None] * uv.U + 2.0 * win.d1(t)[:, None, None] * Ul
    G = np.empty((2, len(nodes), len(s_values)), dtype=complex)
    H = np.empty_like(G)
    for j in range(2):
        sig = TimeSignal(t, src[:, j, nodes])
        l, vals = _quadrature_grid(sig, ctx)
        G[j] = _transform(l, vals, ctx, z, win(l)).T
        sig = TimeSignal(t, hsrc[:, j, nodes])
        l, vals = _quadrature_grid(sig, ctx)
        H[j] = -_transform(l, vals, ctx, z, np.ones_like(l)).T
    return (FbiField(G, s_values, ctx.lam, ctx.l0, nodes),
            FbiField(H, s_values, ctx.lam, ctx.l0, nodes))


def transform_components(uv: UVFields, which: str, ctx: FbiContext, s_values,
                         nodes: Optional[np.ndarray] = None) -> FbiField:
    """Transform of ``U`` or ``V`` for both components; values ``(2, n_nodes, n_s)``."""
    nodes = np.arange(uv.grid.n_nodes) if nodes is None else np.asarray(nodes)
    s_values = np.asarray(s_values, dtype=float)
    arr = {"U": uv.U, "V": uv.V, "u": uv.u}[which]
    out = np.empty((2, len(nodes), len(s_values)), dtype=complex)
    for j in range(2):
        out[j] = fbi_field(TimeSignal(uv.times, arr[:, j, nodes]), ctx, s_values).values
    return FbiField(out, s_values, ctx.lam, ctx.l0, nodes)


# diagnostics -------------------------------------------------------------------

def scaled_l2(arr, weight: float = 1.0) -> float:
    """``sqrt(weight * sum |arr|^2)`` without overflow for huge entries."""
    a = np.abs(np.asarray(arr))
    m = float(a.max()) if a.size else 0.0
    if m == 0.0 or not math.isfinite(m):
        return m
    return m * math.sqrt(weight * float(np.sum((a / m) ** 2)))


@dataclass
class ResidualReport:
    row1: float
    row2: float
    n_points: int
    scale: float = 0.0

    @property
    def total(self) -> float:
        return math.hypot(self.row1, self.row2)

    @property
    def relative(self) -> float:
        """Total residual over the largest norm among the terms of the system."""
        return self.total / self.scale if self.scale > 0 else math.inf


def interior_nodes(grid: Grid, nodes: np.ndarray) -> np.ndarray:
    """Positions (into ``nodes``) whose stencil neighbours are also in ``nodes``.

    Physical boundary nodes count as interior (ghost reflection).
    """
    nodes = np.asarray(nodes)
    present = np.zeros(grid.n_nodes, dtype=bool)
    present[nodes] = True
    keep = []
    for m, i in enumerate(nodes):
        left = i == 0 or present[i - 1]
        right = i == grid.n_nodes - 1 or present[i + 1]
        if left and right:
            keep.append(m)
    return np.asarray(keep, dtype=int)


def elliptic_residual(UF: FbiField, grid: Grid, a, c11, c12, c21, c22,
                      G: Optional[FbiField] = None, H: Optional[FbiField] = None) -> ResidualReport:
    """Discrete residual of the transformed elliptic system.

    Row ``j``: ``d_s^2 U_j + (a U_j,x)_x - (C U)_j - G_j - H_j``, with centered
    differences in ``s`` (uniform lattice) and the conservative flux in ``x``;
    both rows use the second ``s`` derivative.  Norms are discrete L2 over
    interior lattice points.
    """
    vals = UF.values
    nodes = UF.nodes if UF.nodes is not None else np.arange(grid.n_nodes)
    s = UF.s
    ds = s[1] - s[0]
    full = np.zeros((2, grid.n_nodes, len(s)), dtype=complex)
    full[:, nodes, :] = vals
    # flux along the node axis: move it last
    div = np.moveaxis(apply_flux(a, grid.h, np.moveaxis(full, 1, -1)), -1, 1)[:, nodes, :]
    dss = np.zeros_like(vals)
    dss[:, :, 1:-1] = (vals[:, :, 2:] - 2.0 * vals[:, :, 1:-1] + vals[:, :, :-2]) / ds**2
    cs = [np.broadcast_to(np.asarray(c, dtype=float), (grid.n_nodes,))[nodes][:, None]
          for c in (c11, c12, c21, c22)]
    rhs = np.zeros_like(vals)
    if G is not None:
        rhs = rhs + G.values
    if H is not None:
        rhs = rhs + H.values
    r1 = dss[0] + div[0] - cs[0] * vals[0] - cs[1] * vals[1] - rhs[0]
    r2 = dss[1] + div[1] - cs[2] * vals[0] - cs[3] * vals[1] - rhs[1]
    keep = interior_nodes(grid, nodes)
    sl = (keep[:, None], np.arange(1, len(s) - 1)[None, :])
    w = grid.h * ds
    n1 = scaled_l2(r1[sl], w)
    n2 = scaled_l2(r2[sl], w)
    cu = np.stack([cs[0] * vals[0] + cs[1] * vals[1], cs[2] * vals[0] + cs[3] * vals[1]])
    scale = max(scaled_l2(t[:, keep][:, :, 1:-1], w) for t in (dss, div, cu, rhs))
    return ResidualReport(n1, n2, int(len(keep) * (len(s) - 2)), scale)


@dataclass
class ParsevalReport:
    lhs: float
    lambda_term: float
    fbi_term: float

    @property
    def rhs(self) -> float:
        return self.lambda_term + self.fbi_term

    @property
    def defect(self) -> float:
        return self.rhs - self.lhs


def parseval_defect(signal: TimeSignal, ctx: FbiContext, inner=None, outer=None,
                    s_nodes: int = 41) -> ParsevalReport:
    """Right minus left side of the windowed Parseval chain for one component.

    Left: ``||Phi U||^2`` over ``inner x (-L/2, L/2)``.  Right:

        8/lam^2 [ sup|Phi'|^2 int_K int_outer |U|^2 + int int_outer |U_l|^2 ]
        + 4/pi int_{-1}^{1} int_R int_inner |U^F(x, l0 + i s)|^2

    The first bracket bounds ``2 ||Phi U - F_lam * Phi U||^2`` (the kernel's
    Fourier symbol is ``exp(-t^2/lam^2)``), the second bounds
    ``2 ||F_lam * Phi U||^2`` through the sub-mean-value property of ``|U^F|^2``
    on unit discs.  ``inner``/``outer`` are boolean node masks (default all).
    """
    n = signal.n_nodes
    inner = np.ones(n, bool) if inner is None else np.asarray(inner, bool)
    outer = np.ones(n, bool) if outer is None else np.asarray(outer, bool)
    wx = np.asarray(signal.space_weights, dtype=float)
    l, vals = _quadrature_grid(signal, ctx)
    dq = l[1] - l[0]
    dl = np.gradient(vals, dq, axis=0, edge_order=2)
    wl = _simpson_weights(len(l), dq)
    phi = ctx.window(l)
    onK = (np.abs(l) >= ctx.L / 4 - 1e-12).astype(float)

    def integral(arr, wt, mask):
        return float(np.sum(wt[:, None] * arr * (wx * mask)[None, :]))

    lhs = integral((phi[:, None] * vals) ** 2, wl, inner)
    lam_term = 8.0 / ctx.lam**2 * (ctx.window.sup_d1**2 * integral(vals**2, wl * onK, outer)
                                    + integral(dl**2, wl, outer))
    # |F_lam(z)| <= lam e^{lam^2 (1 - dist^2)/4} off the support: truncate where it is < e^-40
    reach = math.sqrt(1.0 + 160.0 / ctx.lam**2)
    n_l = 2 * int(math.ceil((ctx.L / 2 + reach) / (0.1 / ctx.lam)))
    l0 = np.linspace(-ctx.L / 2 - reach, ctx.L / 2 + reach, n_l + 1)
    wl0 = _simpson_weights(len(l0), l0[1] - l0[0])
    s = np.linspace(-1.0, 1.0, s_nodes if s_nodes % 2 else s_nodes + 1)
    ws = _simpson_weights(len(s), s[1] - s[0])
    # F_lam(l0 + i s - l) splits into a real Gaussian in (l0 - l) times factors in s, l0 and l
    lam2 = ctx.lam**2
    gauss = np.exp(-0.25 * lam2 * (l0[:, None] - l[None, :]) ** 2)
    q = _simpson_weights(len(l), dq) * phi
    phase = np.exp(0.5j * lam2 * s[:, None] * l[None, :])  # (n_s, n_q)
    src = (phase[:, :, None] * (q[:, None] * vals)[None, :, :]).transpose(1, 0, 2).reshape(len(l), -1)
    mod2 = np.abs(gauss @ src).reshape(len(l0), len(s), n) ** 2
    mod2 *= (SQRT_PI_OVER_2PI * ctx.lam) ** 2 * np.exp(0.5 * lam2 * s**2)[None, :, None]
    fbi_energy = float(np.einsum("a,b,abm,m->", wl0, ws, mod2, wx * inner))
    return ParsevalReport(lhs, lam_term, 4.0 / math.pi * fbi_energy)


def mean_value_defect(signal: TimeSignal, ctx: FbiContext, kappa: float, rho: float,
                      angular_nodes: int = 256) -> float:
    """``max_x |U(x, kappa) - mean over the circle |z - kappa| = rho of U(x, z)|``.

    ``U(x, z)`` is the transform at the complex point ``z = l0 + i s``; it is
    entire in ``z``, so the defect measures the angular quadrature error.
    """
    if not 0 < rho < 1:
        raise PreconditionError("rho must lie in (0, 1)")
    l, vals = _quadrature_grid(signal, ctx)
    phi = ctx.window(l)
    ang = 2.0 * math.pi * np.arange(angular_nodes) / angular_nodes
    z = kappa + rho * np.exp(1j * ang)
    circle = _transform(l, vals, ctx, z, phi).mean(axis=0)
    center = _transform(l, vals, ctx, np.array([kappa + 0j]), phi)[0]
    return float(np.max(np.abs(center - circle)))
