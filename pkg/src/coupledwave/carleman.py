"""Carleman weight bookkeeping: the profile psi_hat, level constants and weights.

With ``psi = psi_hat(x) / (M |psi_hat|) + b^2 - s^2``, ``phi = exp(mu psi)``,
``ell = zeta phi`` and ``theta = exp(ell)``.  Because ``theta`` overflows for
any realistic ``zeta``, everything is carried as ``log theta = ell``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import (BetaGapViolation, EmptyInterval, MaximizerOutsideOmega0, NonPositiveTau,
                     OrderingViolation, PreconditionError, WeightOverflow)
from .grid import Grid, Interval, ScalarField

#: largest exponent materialized as a double
LOG_THETA_MAX = 700.0


def build_psi_hat(grid: Grid, omega: Interval, omega0_tilde: Interval) -> ScalarField:
    """Positive profile on ``omega`` vanishing at its ends, maximal inside ``omega0_tilde``.

    On ``omega = (p, q)`` with target maximizer ``m`` (the centre of
    ``omega0_tilde``) this is ``(x - p)(q - x) exp(k (x - m))`` with
    ``k = (2m - p - q) / ((m - p)(q - m))``.  For ``m`` at the centre it is the
    plain parabola.  The tilt keeps a single critical point, at ``m``, so the
    gradient is nonzero away from ``omega0_tilde``.  Outside ``omega`` the
    field is zero.
    """
    p, q = omega.lo, omega.hi
    m = omega0_tilde.center
    if not (p < omega0_tilde.lo and omega0_tilde.hi < q):
        raise MaximizerOutsideOmega0(
            f"omega0_tilde ({omega0_tilde.lo:g}, {omega0_tilde.hi:g}) is not inside omega ({p:g}, {q:g})")
    k = (2 * m - p - q) / ((m - p) * (q - m))
    x = np.asarray(grid.nodes)
    inside = (x > p) & (x < q)
    vals = np.zeros_like(x)
    xi = x[inside]
    vals[inside] = (xi - p) * (q - xi) * np.exp(k * (xi - m))
    field = ScalarField(grid, vals)
    problems = psi_hat_problems(field, omega, omega0_tilde, maximizer=m)
    if problems:
        raise MaximizerOutsideOmega0("; ".join(problems))
    return field


def psi_hat_argmax(omega: Interval, omega0_tilde: Interval) -> float:
    return omega0_tilde.center


def psi_hat_norm(omega: Interval, omega0_tilde: Interval) -> float:
    """Exact sup of :func:`build_psi_hat` (attained at the maximizer)."""
    m = omega0_tilde.center
    return (m - omega.lo) * (omega.hi - m)


def psi_hat_problems(psi_hat: ScalarField, omega: Interval, omega0_tilde: Interval,
                     maximizer: Optional[float] = None):
    """Node checks: positive inside, zero at the ends, no flat spot off ``omega0_tilde``."""
    grid = psi_hat.grid
    x = np.asarray(grid.nodes)
    v = np.asarray(psi_hat.values)
    tol = grid.tol()
    out = []
    inside = (x > omega.lo + tol) & (x < omega.hi - tol)
    if np.any(v[inside] <= 0):
        out.append("psi_hat is not positive at every interior node")
    ends = (np.abs(x - omega.lo) <= tol) | (np.abs(x - omega.hi) <= tol)
    if np.any(np.abs(v[ends]) > 1e-14):
        out.append("psi_hat does not vanish on the boundary of omega")
    idx = np.flatnonzero(inside)
    if idx.size >= 2:
        away = ~((x[idx] >= omega0_tilde.lo) & (x[idx] <= omega0_tilde.hi))
        slope = np.gradient(v[idx], grid.h)
        if np.any(np.abs(slope[away]) <= 0):
            out.append("psi_hat has a critical point outside omega0_tilde")
    if maximizer is not None and not (omega0_tilde.lo <= maximizer <= omega0_tilde.hi):
        out.append(f"maximizer {maximizer:g} lies outside omega0_tilde")
    return out


def compute_beta_constants(psi_hat: ScalarField, O2: Interval, omega0: Interval,
                           norm: Optional[float] = None) -> Tuple[float, float]:
    """``beta1 = max psi_hat`` over the closure of ``O2``, ``beta2 = min`` over ``omega0``.

    Raises :class:`BetaGapViolation` unless ``beta2 > (beta1 + |psi_hat|) / 2``.
    ``norm`` defaults to the largest nodal value.
    """
    grid = psi_hat.grid
    v = np.asarray(psi_hat.values)
    m2 = O2.mask(grid, closed=True)
    m0 = omega0.mask(grid, closed=True)
    if not m2.any() or not m0.any():
        raise BetaGapViolation("O2 or omega0 contains no grid node")
    norm = float(v.max()) if norm is None else float(norm)
    beta1 = float(v[m2].max())
    beta2 = float(v[m0].min())
    if not beta2 > 0.5 * (beta1 + norm):
        raise BetaGapViolation(
            f"beta2 = {beta2:.6g} must exceed (beta1 + |psi_hat|)/2 = {0.5 * (beta1 + norm):.6g}"
            " (move omega0 towards the maximizer or O2 away from it)")
    return beta1, beta2


def admissible_M_interval(beta1: float, beta2: float, norm: float, b0: float) -> Tuple[float, float]:
    if not b0 > 1:
        raise PreconditionError(f"b0 must exceed 1, got {b0}")
    if not (0 < beta1 < beta2 <= norm):
        raise PreconditionError("need 0 < beta1 < beta2 <= |psi_hat|")
    lo = (1.0 - beta2 / norm) / (b0**2 - 1.0)
    hi = (1.0 - beta1 / norm) / b0**2
    if not lo < hi:
        raise EmptyInterval(lo, hi)
    return lo, hi


@dataclass(frozen=True)
class CarlemanParams:
    mu: float
    M: float
    b: float
    b0: float
    A: float
    lam: float
    zeta: float
    norm: float

    def __post_init__(self):
        if self.mu < 1:
            raise PreconditionError(f"mu must be >= 1, got {self.mu}")
        if not (1 < self.b0 < self.b <= 2):
            raise PreconditionError(f"need 1 < b0 < b <= 2, got b0={self.b0}, b={self.b}")
        if not self.A > 1:
            raise PreconditionError(f"A must exceed 1, got {self.A}")
        if not self.norm > 0:
            raise PreconditionError("|psi_hat| must be positive")

    @property
    def L(self) -> float:
        return 8.0 * self.A * self.b


@dataclass(frozen=True)
class WeightEval:
    """Weights on the ``(node, s)`` lattice.  ``theta`` is None unless materialized."""

    x: np.ndarray
    s: np.ndarray
    psi: np.ndarray
    log_phi: np.ndarray
    ell: np.ndarray
    theta: Optional[np.ndarray] = None

    @property
    def phi(self) -> np.ndarray:
        return np.exp(self.log_phi)

    @property
    def log_theta(self) -> np.ndarray:
        return self.ell

    def to_csv(self, path, nodes: Optional[np.ndarray] = None) -> None:
        nodes = np.arange(len(self.x)) if nodes is None else nodes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "s", "psi", "log_phi", "log_theta"])
            for m, i in enumerate(nodes):
                for j, s in enumerate(self.s):
                    w.writerow([int(i), repr(float(s)), repr(float(self.psi[m, j])),
                                repr(float(self.log_phi[m, j])), repr(float(self.ell[m, j]))])


def weight_eval(psi_hat, params: CarlemanParams, s_values, nodes=None,
                materialize: bool = False) -> WeightEval:
    """Evaluate ``psi, log phi, ell = log theta`` on ``nodes x s_values``.

    With ``materialize=True`` the raw ``theta`` is also returned, which raises
    :class:`WeightOverflow` at the first lattice point where ``ell > 700``.
    """
    vals = np.asarray(psi_hat.values if isinstance(psi_hat, ScalarField) else psi_hat, dtype=float)
    xs = np.asarray(psi_hat.grid.nodes) if isinstance(psi_hat, ScalarField) else np.arange(len(vals), dtype=float)
    if nodes is not None:
        vals, xs = vals[nodes], xs[nodes]
    s = np.atleast_1d(np.asarray(s_values, dtype=float))
    if np.any(np.abs(s) > params.b * (1 + 1e-12)):
        raise PreconditionError("s must lie in [-b, b]")
    psi = vals[:, None] / (params.M * params.norm) + params.b**2 - s[None, :] ** 2
    log_phi = params.mu * psi
    ell = params.zeta * np.exp(log_phi)
    theta = None
    if materialize:
        bad = np.argwhere(ell > LOG_THETA_MAX)
        if bad.size:
            i, j = bad[0]
            raise WeightOverflow(float(xs[i]), float(s[j]), float(ell[i, j]))
        theta = np.exp(ell)
    return WeightEval(xs, s, psi, log_phi, ell, theta)


@dataclass(frozen=True)
class WeightLevels:
    beta1: float
    beta2: float
    psi1: float
    psi2: float
    psi3: float
    psi4: float
    mu: float = 1.0
    tau: Optional[float] = None

    @property
    def psi(self) -> Tuple[float, float, float, float]:
        return (self.psi1, self.psi2, self.psi3, self.psi4)

    @property
    def log_phi(self) -> Tuple[float, ...]:
        return tuple(self.mu * p for p in self.psi)

    @property
    def phi(self) -> Tuple[float, ...]:
        return tuple(math.exp(v) for v in self.log_phi)


def psi_levels(beta1: float, beta2: float, norm: float, M: float, b: float, b0: float,
               mu: float = 1.0) -> WeightLevels:
    """The four level values and the check ``psi1 < psi4 < psi3 < psi2``."""
    psi1 = beta1 / (M * norm) + b**2
    psi2 = 1.0 / M + b**2
    psi3 = beta2 / (M * norm) + b**2 - 1.0
    psi4 = 1.0 / M + b**2 - b0**2
    failed = [name for ok, name in ((psi1 < psi4, "psi1 < psi4"), (psi4 < psi3, "psi4 < psi3"),
                                    (psi3 < psi2, "psi3 < psi2")) if not ok]
    if failed:
        raise OrderingViolation(
            f"level ordering fails: {', '.join(failed)} "
            f"(psi1={psi1:.6g}, psi2={psi2:.6g}, psi3={psi3:.6g}, psi4={psi4:.6g})")
    return WeightLevels(beta1, beta2, psi1, psi2, psi3, psi4, mu)


def tau_zeta_L(levels: WeightLevels, mu: float, lam: float, b: float, A: float
               ) -> Tuple[float, float, float]:
    """``tau = 1 - exp(mu (psi4 - psi3))``, ``zeta = lam^2 b^2 / (4 tau phi3)``, ``L = 8 A b``."""
    gap = levels.psi4 - levels.psi3
    if not gap < 0:
        raise NonPositiveTau(f"psi4 = {levels.psi4:.6g} is not below psi3 = {levels.psi3:.6g}")
    tau = -math.expm1(mu * gap)
    phi3 = math.exp(mu * levels.psi3)
    zeta = lam**2 * b**2 / (4.0 * tau * phi3)
    return tau, zeta, 8.0 * A * b


def tau_identity_defect(levels: WeightLevels, mu: float, tau: float) -> float:
    """``|(phi3 - phi4) - tau phi3| / phi3``."""
    phi3 = math.exp(mu * levels.psi3)
    phi4 = math.exp(mu * levels.psi4)
    return abs((phi3 - phi4) - tau * phi3) / phi3


# ratio diagnostic ---------------------------------------------------------------

@dataclass
class RatioReport:
    """Both sides carry the common factor ``exp(log_scale)``; ``log_ratio`` never under- or overflows."""

    lhs: float
    rhs: float
    ratio: float
    degenerate: bool = False
    log_scale: float = 0.0
    log_ratio: float = 0.0


def _lattice_weights(h: float, s: np.ndarray, n_nodes: int) -> np.ndarray:
    ws = np.full(len(s), s[1] - s[0] if len(s) > 1 else 1.0)
    ws[[0, -1]] *= 0.5
    wx = np.full(n_nodes, h)
    return wx[:, None] * ws[None, :]


def _log_sum(log_w: np.ndarray, vals: np.ndarray) -> float:
    """``log sum exp(log_w) vals`` for nonnegative ``vals`` (``-inf`` if all vanish)."""
    pos = vals > 0
    if not pos.any():
        return -math.inf
    return float(logsumexp(log_w[pos] + np.log(vals[pos])))


def carleman_ratio_diagnostic(UF: np.ndarray, G: np.ndarray, H: np.ndarray, weights: WeightEval,
                              params: CarlemanParams, h: float, omega0_mask: np.ndarray,
                              s_window: Optional[float] = None) -> RatioReport:
    """Left over right side of the weighted estimate, without its constant.

    ``UF``, ``G``, ``H`` have shape ``(2, n_nodes, n_s)`` on the lattice of
    ``weights``.  Left: ``sum_j int_{|s| < b0} theta^2 (lam phi |grad U_j|^2
    + lam^3 phi^3 |U_j|^2)``, with ``lam = zeta`` as large parameter and the
    gradient over ``(x, s)``.  Right: ``sum_j int theta^2 (|G_j|^2 + |H_j|^2)``
    over the lattice plus ``lam^3 phi^3 theta^2 |U_j|^2`` over ``omega0``.
    The sums are formed in the log domain; ``lhs``/``rhs`` are reported
    divided by ``exp(log_scale)`` with ``log_scale = 2 max ell`` plus the log
    of the common field scale.
    """
    UF, G, H = np.asarray(UF), np.asarray(G), np.asarray(H)
    # the ratio is invariant under a common scaling of (U, G, H); normalize to avoid overflow
    big = max(float(np.max(np.abs(v), initial=0.0)) for v in (UF, G, H))
    if big > 0:
        UF, G, H = UF / big, G / big, H / big
    s = weights.s
    ell = weights.ell
    scale = 2.0 * float(ell.max())
    phi = weights.phi
    z = params.zeta
    w = _lattice_weights(h, s, ell.shape[0])
    b0 = params.b0 if s_window is None else s_window
    inner = np.broadcast_to((np.abs(s) < b0)[None, :], ell.shape)
    ux = np.gradient(UF, h, axis=1) if UF.shape[1] > 1 else np.zeros_like(UF)
    us = np.gradient(UF, s[1] - s[0], axis=2) if len(s) > 1 else np.zeros_like(UF)
    grad2 = np.sum(np.abs(ux) ** 2 + np.abs(us) ** 2, axis=0)
    val2 = np.sum(np.abs(UF) ** 2, axis=0)
    log_w = np.log(w) + 2.0 * ell
    left = np.where(inner, z * phi * grad2 + z**3 * phi**3 * val2, 0.0)
    src = np.sum(np.abs(G) ** 2 + np.abs(H) ** 2, axis=0)
    obs = np.asarray(omega0_mask, dtype=bool)[:, None]
    right = src + np.where(obs, z**3 * phi**3 * val2, 0.0)
    log_l, log_r = _log_sum(log_w, left), _log_sum(log_w, right)
    lhs = math.exp(log_l - scale) if log_l > -math.inf else 0.0
    rhs = math.exp(log_r - scale) if log_r > -math.inf else 0.0
    log_scale = scale + (2.0 * math.log(big) if big > 0 else 0.0)
    if log_r == -math.inf:
        if log_l == -math.inf:
            return RatioReport(0.0, 0.0, 0.0, True, log_scale, -math.inf)
        return RatioReport(lhs, 0.0, math.inf, True, log_scale, math.inf)
    log_ratio = log_l - log_r
    ratio = math.exp(log_ratio) if log_ratio < 709 else math.inf
    return RatioReport(lhs, rhs, ratio, False, log_scale, log_ratio)
