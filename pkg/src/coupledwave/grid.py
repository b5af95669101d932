"""One-dimensional domain, nested observation subdomains and cutoff functions.

The domain is the interval ``[0, X]``.  Subdomains are open intervals given by
their end coordinates; an end that coincides with the physical boundary is
treated as part of the subdomain (a relatively open set of the domain).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import GridError, NestingViolation, X0Violation

#: subdomain names, outermost first
SUBDOMAIN_NAMES = ("omega_tilde", "omega1", "omega", "O3", "O2", "O1", "omega0")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[0, length]``."""

    n_nodes: int
    length: float
    h: float
    nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_nodes < 3:
            raise GridError(f"a grid needs at least 3 nodes, got {self.n_nodes}")
        if len(self.nodes) != self.n_nodes or np.any(np.diff(self.nodes) <= 0):
            raise GridError("grid nodes must be strictly increasing")

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.n_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def refine(self, factor: int = 2) -> "Grid":
        """Grid whose every ``factor``-th node coincides with this one."""
        return build_grid(factor * (self.n_nodes - 1) + 1, self.length)

    def tol(self) -> float:
        return 1e-9 * self.h


def build_grid(n_nodes: int, domain_length: float) -> Grid:
    """Uniform partition of ``[0, domain_length]`` into ``n_nodes - 1`` cells."""
    n_nodes = int(n_nodes)
    if n_nodes < 3:
        raise GridError(f"a grid needs at least 3 nodes, got {n_nodes}")
    if not domain_length > 0:
        raise GridError(f"domain length must be positive, got {domain_length}")
    h = domain_length / (n_nodes - 1)
    nodes = np.arange(n_nodes) * h
    nodes[-1] = domain_length
    return Grid(n_nodes, float(domain_length), h, _frozen(nodes))


@dataclass(frozen=True)
class ScalarField:
    """Real nodal values on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (self.grid.n_nodes,):
            raise GridError(f"field has shape {v.shape}, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise GridError("field values must be finite")
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.n_nodes, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(np.asarray(grid.nodes)), grid.nodes.shape))


@dataclass(frozen=True)
class Interval:
    """Open interval ``(lo, hi)``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise GridError(f"empty interval ({self.lo}, {self.hi})")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def mask(self, grid: Grid, closed: bool = False) -> np.ndarray:
        """Nodes inside the interval.

        Ends on the physical boundary are always included; interior ends only
        when ``closed`` is true.
        """
        x = np.asarray(grid.nodes)
        tol = grid.tol()
        if closed:
            return (x >= self.lo - tol) & (x <= self.hi + tol)
        left = x > self.lo + tol
        right = x < self.hi - tol
        if abs(self.lo) <= tol:
            left = x >= -tol
        if abs(self.hi - grid.length) <= tol:
            right = x <= grid.length + tol
        return left & right

    def indices(self, grid: Grid, closed: bool = False) -> np.ndarray:
        return np.flatnonzero(self.mask(grid, closed))


def _on_boundary(x, length, tol):
    return abs(x) <= tol or abs(x - length) <= tol


def _nesting_problem(inner: Interval, outer: Interval, margin: float, length: float, tol: float):
    """Reason why ``inner`` is not compactly inside ``outer``, or None."""
    for end, a, b, sign in (("left", inner.lo, outer.lo, 1.0), ("right", inner.hi, outer.hi, -1.0)):
        gap = sign * (a - b)
        if _on_boundary(a, length, tol) and _on_boundary(b, length, tol) and abs(a - b) <= tol:
            continue
        if gap < margin - tol:
            return f"{end} ends {a:g} and {b:g} are separated by {gap:g} < {margin:g}"
    return None


@dataclass(frozen=True)
class SubdomainLayout:
    """Nested subdomains, observation point ``x0`` and final time ``T``.

    Construct through :func:`define_subdomains`, which validates the nesting.
    """

    grid: Grid
    omega_tilde: Interval
    omega1: Interval
    omega: Interval
    O3: Interval
    O2: Interval
    O1: Interval
    omega0: Interval
    x0: float
    T: float
    dist_margin: float

    def interval(self, name: str) -> Interval:
        return getattr(self, name)

    def mask(self, name: str, closed: bool = False) -> np.ndarray:
        return self.interval(name).mask(self.grid, closed)

    def known_mask(self) -> np.ndarray:
        """Nodes where the coefficients are known a priori (closure of omega_tilde)."""
        return self.omega_tilde.mask(self.grid, closed=True)

    def omega_minus_O2(self) -> np.ndarray:
        return self.mask("omega") & ~self.mask("O2", closed=True)

    def sup_distance(self) -> float:
        return max(abs(self.x0), abs(self.grid.length - self.x0))


def layout_problems(grid: Grid, intervals: Mapping[str, Interval], x0: float, margin: float
                    ) -> List[Tuple[str, str, str]]:
    """All violated nesting conditions as ``(inner, outer, detail)`` triples."""
    L = grid.length
    tol = grid.tol()
    out = []
    for name, iv in intervals.items():
        if iv.lo < -tol or iv.hi > L + tol:
            out.append((name, "Omega", f"({iv.lo:g}, {iv.hi:g}) leaves [0, {L:g}]"))
    chain = [("omega", "omega1"), ("omega1", "omega_tilde"),
             ("O1", "O2"), ("O2", "O3"), ("O3", "omega"), ("omega0", "omega")]
    for inner, outer in chain:
        why = _nesting_problem(intervals[inner], intervals[outer], margin, L, tol)
        if why:
            out.append((inner, outer, why))
    om, o3 = intervals["omega"], intervals["O3"]
    for end in (om.lo, om.hi):
        if _on_boundary(end, L, tol) and not (abs(o3.lo - end) <= tol or abs(o3.hi - end) <= tol):
            out.append(("omega", "O3", f"boundary point {end:g} of omega is not a boundary point of O3"))
    return out


def x0_in_exterior_closure(grid: Grid, omega: Interval, x0: float) -> bool:
    """True when ``x0`` lies in the closure of ``Omega minus omega``."""
    tol = grid.tol()
    L = grid.length
    in_left = -tol <= x0 <= omega.lo + tol and omega.lo > tol
    in_right = omega.hi - tol <= x0 <= L + tol and omega.hi < L - tol
    return bool(in_left or in_right)


def define_subdomains(grid: Grid, spec: Mapping, *, dist_margin: Optional[float] = None
                      ) -> SubdomainLayout:
    """Validate an interval table and build the layout.

    ``spec`` maps each name in :data:`SUBDOMAIN_NAMES` to a ``(lo, hi)`` pair
    and has entries ``x0`` and ``T``.  Compact inclusion is checked as a
    separation of at least ``dist_margin`` (default ``2 h``) between interior
    ends.
    """
    missing = [k for k in (*SUBDOMAIN_NAMES, "x0", "T") if k not in spec]
    if missing:
        raise GridError(f"interval table is missing {', '.join(missing)}")
    margin = 2.0 * grid.h if dist_margin is None else float(dist_margin)
    intervals: Dict[str, Interval] = {}
    for name in SUBDOMAIN_NAMES:
        iv = spec[name]
        intervals[name] = iv if isinstance(iv, Interval) else Interval(float(iv[0]), float(iv[1]))
    x0 = float(spec["x0"])
    T = float(spec["T"])
    if not T > 0:
        raise GridError(f"final time must be positive, got {T}")
    problems = layout_problems(grid, intervals, x0, margin)
    if problems:
        inner, outer, why = problems[0]
        err = NestingViolation(inner, outer, why)
        err.problems = problems
        raise err
    if x0_in_exterior_closure(grid, intervals["omega"], x0):
        raise X0Violation(f"x0 = {x0:g} lies in the closure of Omega \\ omega")
    return SubdomainLayout(grid=grid, x0=x0, T=T, dist_margin=margin, **intervals)


def check_geometric_time(layout: SubdomainLayout) -> Tuple[bool, float]:
    """Whether ``T`` exceeds the largest distance from ``x0``; also the margin."""
    margin = layout.T - layout.sup_distance()
    return bool(margin > 0), float(margin)


# smooth steps --------------------------------------------------------------

def smoothstep(t):
    """Quintic smooth step ``6t^5 - 15t^4 + 10t^3`` clamped to ``[0, 1]``."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def smoothstep_d1(t):
    t = np.clip(t, 0.0, 1.0)
    return 30.0 * t * t * (t - 1.0) ** 2


def smoothstep_d2(t):
    t = np.clip(t, 0.0, 1.0)
    return 60.0 * t * (t - 1.0) * (2.0 * t - 1.0)


@dataclass(frozen=True)
class Cutoff:
    """Cutoff values with exact first and second derivatives at the nodes."""

    field: ScalarField
    d1: np.ndarray
    d2: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.field.values, dtype=dtype)


def build_cutoff_chi(layout: SubdomainLayout) -> Cutoff:
    """Cutoff equal to 1 on omega minus O2, 0 on O1, zero outside omega.

    The two transitions inside ``O2 \\ O1`` are quintic smooth steps, so the
    profile is C^2 across the joins.
    """
    x = np.asarray(layout.grid.nodes)
    o1, o2 = layout.O1, layout.O2
    chi = np.ones_like(x)
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)

    left = (x > o2.lo) & (x < o1.lo)
    wl = o1.lo - o2.lo
    t = (x[left] - o2.lo) / wl
    chi[left] = 1.0 - smoothstep(t)
    d1[left] = -smoothstep_d1(t) / wl
    d2[left] = -smoothstep_d2(t) / wl**2

    right = (x > o1.hi) & (x < o2.hi)
    wr = o2.hi - o1.hi
    t = (x[right] - o1.hi) / wr
    chi[right] = smoothstep(t)
    d1[right] = smoothstep_d1(t) / wr
    d2[right] = smoothstep_d2(t) / wr**2

    inside_o1 = (x >= o1.lo) & (x <= o1.hi)
    chi[inside_o1] = 0.0
    d1[inside_o1] = 0.0
    d2[inside_o1] = 0.0

    outside = ~layout.mask("omega")
    chi[outside] = 0.0
    d1[outside] = 0.0
    d2[outside] = 0.0
    return Cutoff(ScalarField(layout.grid, chi), _frozen(d1), _frozen(d2))


# coefficient checks --------------------------------------------------------

def nodal_derivatives(values: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order first and second differences (one-sided at the ends)."""
    v = np.asarray(values, dtype=float)
    d1 = np.gradient(v, h, edge_order=2)
    d2 = np.empty_like(v)
    d2[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    if len(v) >= 4:
        d2[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
        d2[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    else:
        d2[0] = d2[-1] = d2[1]
    return d1, d2


@dataclass
class PseudoconvexityReport:
    positivity_ok: bool
    bound_ok: bool
    gradient_ok: bool
    sup_norms: Tuple[float, float, float]
    max_gradient_ratio: float
    positivity_violations: np.ndarray
    gradient_violations: np.ndarray

    @property
    def ok(self) -> bool:
        return self.positivity_ok and self.bound_ok and self.gradient_ok

    def messages(self) -> List[str]:
        out = []
        if not self.positivity_ok:
            out.append(f"a > theta1 fails at {len(self.positivity_violations)} nodes")
        if not self.bound_ok:
            out.append("sup norms of a, a', a'' = (%.4g, %.4g, %.4g) exceed M0" % self.sup_norms)
        if not self.gradient_ok:
            out.append(f"|a'(x)(x - x0)/(2a)| <= 1 - theta0 fails at {len(self.gradient_violations)} "
                       f"nodes (max ratio {self.max_gradient_ratio:.4g})")
        return out


def check_pseudoconvexity(a, layout: SubdomainLayout, theta0: float, theta1: float, M0: float
                          ) -> PseudoconvexityReport:
    """Check the positivity, smoothness bound and pseudoconvexity assumptions on ``a``.

    Derivative bounds are checked up to order two with centered differences.
    """
    grid = layout.grid
    a = np.asarray(a, dtype=float)
    x = np.asarray(grid.nodes)
    d1, d2 = nodal_derivatives(a, grid.h)
    pos_viol = np.flatnonzero(~(a > theta1))
    norms = (float(np.max(np.abs(a))), float(np.max(np.abs(d1))), float(np.max(np.abs(d2))))
    exterior = ~layout.mask("omega")
    ratio = np.abs(d1 * (x - layout.x0) / (2.0 * a))
    ratio = np.where(exterior, ratio, 0.0)
    grad_viol = np.flatnonzero(ratio > 1.0 - theta0 + 1e-14)
    return PseudoconvexityReport(
        positivity_ok=pos_viol.size == 0,
        bound_ok=max(norms) <= M0,
        gradient_ok=grad_viol.size == 0,
        sup_norms=norms,
        max_gradient_ratio=float(ratio.max()),
        positivity_violations=pos_viol,
        gradient_violations=grad_viol,
    )
