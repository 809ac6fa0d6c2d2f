"""Constrained generalized distance transforms on integer grids.

The 1-D problem solved here is

    gamma(x) = min_{lower(x) <= z <= upper(x)}  (x - h(z))**2 + g(z)

over x, z in {0, ..., n-1}, where h, lower and upper are non-decreasing.
``cgdt_1d`` solves it in O(n) with a truncated-parabola lower envelope;
``cgdt_brute_force_1d`` is the O(n^2) reference the property suite checks
against.  ``pairwise_min_2d`` applies the 1-D solver row-then-column to the
two-child composition used by the tree parser.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

INFEASIBLE = -1

_INF = math.inf


class OpCounter:
    """Tally of envelope insertions/evictions, exposed for the bench harness.

    ``worst_call_slack`` tracks max(pushes+pops - 2n) over all calls; the
    linear-time bound requires it to stay <= 0.
    """

    def __init__(self):
        self.reset()

    def reset(self):
        self.pushes = 0
        self.pops = 0
        self.calls = 0
        self.worst_call_slack = -math.inf

    @property
    def total(self) -> int:
        return self.pushes + self.pops

    def note_call(self, n: int, pushes: int, pops: int):
        self.pushes += pushes
        self.pops += pops
        self.calls += 1
        self.worst_call_slack = max(self.worst_call_slack, pushes + pops - 2 * n)


op_counter = OpCounter()


@dataclass(frozen=True)
class AffineBound:
    """Non-decreasing integer bound x -> a*x + b on grid positions."""

    a: int
    b: int

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("affine bound must be non-decreasing (a >= 0)")

    def __call__(self, x: int) -> int:
        return self.a * x + self.b

    def inv_max_leq(self, z: int) -> float:
        """Largest x with a*x + b <= z (used for lower bounds); +-inf if constant."""
        if self.a == 0:
            return _INF if self.b <= z else -_INF
        return (z - self.b) // self.a

    def inv_min_geq(self, z: int) -> float:
        """Smallest x with a*x + b >= z (used for upper bounds); +-inf if constant."""
        if self.a == 0:
            return -_INF if self.b >= z else _INF
        return -((self.b - z) // self.a)


@dataclass
class DtProblem1D:
    """One constrained transform instance.

    ``g`` may contain +inf for infeasible placements.  ``h`` defaults to
    z + h_shift; an explicit non-decreasing array may be supplied instead,
    which is what makes equal-root (h(z) == h(z')) degeneracies reachable.
    Bounds default to the unconstrained problem.
    """

    g: np.ndarray
    h_shift: float = 0.0
    lower: AffineBound | None = None
    upper: AffineBound | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        if self.g.ndim != 1 or self.g.size < 1:
            raise ValueError("g must be a non-empty 1-D array")
        if np.isnan(self.g).any() or (self.g == -_INF).any():
            raise ValueError("g must be free of NaN and -inf")
        if not math.isfinite(self.h_shift):
            raise ValueError("h_shift must be finite")
        if self.h is not None:
            self.h = np.asarray(self.h, dtype=float)
            if self.h.shape != self.g.shape:
                raise ValueError("h must match g in length")
            if not np.isfinite(self.h).all():
                raise ValueError("h must be finite")
            if (np.diff(self.h) < 0).any():
                raise ValueError("h must be non-decreasing")

    @property
    def n(self) -> int:
        return self.g.size

    def h_array(self) -> np.ndarray:
        if self.h is not None:
            return self.h
        return np.arange(self.n, dtype=float) + self.h_shift

    def bounds(self) -> tuple[AffineBound, AffineBound]:
        lower = self.lower if self.lower is not None else AffineBound(0, 0)
        upper = self.upper if self.upper is not None else AffineBound(0, self.n - 1)
        return lower, upper


@dataclass
class DtResult1D:
    """Transform values plus the minimizing z per position (-1 = infeasible)."""

    gamma: np.ndarray
    argmin: np.ndarray

    @property
    def feasible(self) -> np.ndarray:
        return self.argmin != INFEASIBLE


def cgdt_brute_force_1d(problem: DtProblem1D) -> DtResult1D:
    """Exhaustive O(n^2) reference scan; ties resolved to the smallest z."""
    g = problem.g
    n = problem.n
    h = problem.h_array()
    lower, upper = problem.bounds()
    gamma = np.full(n, _INF)
    arg = np.full(n, INFEASIBLE, dtype=np.int64)
    for x in range(n):
        zlo = max(0, lower(x))
        zhi = min(n - 1, upper(x))
        if zlo > zhi:
            continue
        vals = (x - h[zlo : zhi + 1]) ** 2 + g[zlo : zhi + 1]
        k = int(np.argmin(vals))
        if vals[k] < _INF:
            gamma[x] = vals[k]
            arg[x] = zlo + k
    return DtResult1D(gamma, arg)


def _validity_windows(n, lower, upper):
    """Per-parabola valid x windows.

    Returns (vlo, vhi, vlo_f, vhi_f) lists: integer window ends [vlo, vhi]
    (possibly +-inf) for feasibility checks, plus the real interval ends used
    by the envelope, with the left end widened by 0.5 so single-position
    windows survive, and both clamped to the grid.
    """
    z = np.arange(n, dtype=float)
    al, bl = lower.a, lower.b
    au, bu = upper.a, upper.b
    if au == 0:
        vlo = np.where(bu >= z, -_INF, _INF)
    else:
        vlo = np.ceil((z - bu) / au)
    if al == 0:
        vhi = np.where(bl <= z, _INF, -_INF)
    else:
        vhi = np.floor((z - bl) / al)
    vlo_f = np.maximum(vlo - 0.5, -0.5)
    vhi_f = np.minimum(vhi, n - 0.5)
    return vlo.tolist(), vhi.tolist(), vlo_f.tolist(), vhi_f.tolist()


_WINDOW_CACHE: dict[tuple, tuple] = {}


def _cgdt_core(g, h, n, windows, trace):
    """Envelope construction + fill on plain Python lists.

    Returns (gamma list, argmin list, pushes, pops).  Parabola z is valid on
    the integer positions [vlo[z], vhi[z]]; intervals are kept as real
    half-open ranges (lo, hi].
    """
    vlo, vhi, vlo_fs, vhi_fs = windows
    idxs: list[int] = []
    los: list[float] = []
    caps: list[float] = []
    pushes = 0
    pops = 0
    n1 = n - 1

    for z in range(n):
        gz = g[z]
        if gz == _INF:
            continue
        lo_valid = vlo[z]
        if lo_valid > n1 or vhi[z] < 0 or lo_valid > vhi[z]:
            continue
        vlo_f = vlo_fs[z]
        vhi_f = vhi_fs[z]
        hz = h[z]
        s = vlo_f
        while idxs:
            zt = idxs[-1]
            ht = h[zt]
            denom = hz - ht
            if denom == 0.0:
                # vertically stacked copies: crossover at +-inf by g order
                s = _INF if gz >= g[zt] else -_INF
            else:
                s = ((gz + hz * hz) - (g[zt] + ht * ht)) / (2.0 * denom)
            if s < vlo_f:
                s = vlo_f
                if trace is not None:
                    trace.append(("clamp-lo", z))
            elif s > vhi_f:
                s = vhi_f
                if trace is not None:
                    trace.append(("clamp-hi", z))
            if s <= los[-1]:
                idxs.pop()
                los.pop()
                caps.pop()
                pops += 1
                if trace is not None:
                    trace.append(("evict", z, zt))
                continue
            break
        if not idxs:
            lo_new = vlo_f
            if trace is not None:
                trace.append(("push-empty", z))
        else:
            cap_top = caps[-1]
            if s >= cap_top:
                # value discontinuity at the seam; fill re-checks feasibility
                lo_new = cap_top
                if trace is not None:
                    trace.append(("case1", z))
            else:
                lo_new = s
                if trace is not None:
                    trace.append(("case2", z))
        if vhi_f <= lo_new:
            continue
        idxs.append(z)
        los.append(lo_new)
        caps.append(vhi_f)
        pushes += 1

    gamma = [_INF] * n
    arg = [INFEASIBLE] * n
    if not idxs:
        return gamma, arg, pushes, pops

    k_total = len(idxs)
    bps = los + [caps[-1]]
    p = 0
    k_last = k_total - 1
    for x in range(n):
        while p < k_last and bps[p + 1] < x:
            p += 1
        best = _INF
        best_z = INFEASIBLE
        # the covering parabola, plus its right neighbor when x sits exactly
        # on the (possibly discontinuous) breakpoint
        if bps[p] <= x:
            z = idxs[p]
            if vlo[z] <= x <= vhi[z]:
                d = x - h[z]
                best = d * d + g[z]
                best_z = z
        if p < k_last and bps[p + 1] == x:
            z = idxs[p + 1]
            if vlo[z] <= x <= vhi[z]:
                d = x - h[z]
                v = d * d + g[z]
                if v < best:
                    best = v
                    best_z = z
        if best_z != INFEASIBLE:
            gamma[x] = best
            arg[x] = best_z
    return gamma, arg, pushes, pops


def cgdt_1d(problem: DtProblem1D, trace: list | None = None) -> DtResult1D:
    """Linear-time constrained transform with argmin recovery.

    ``trace``, when given, collects envelope events ("case1", "case2",
    "evict", "push-empty") so tests can assert which boundary situations an
    instance exercised.
    """
    lower, upper = problem.bounds()
    g = problem.g.tolist()
    h = problem.h_array().tolist()
    windows = _validity_windows(problem.n, lower, upper)
    gamma, arg, pushes, pops = _cgdt_core(g, h, problem.n, windows, trace)
    op_counter.note_call(problem.n, pushes, pops)
    return DtResult1D(np.array(gamma), np.array(arg, dtype=np.int64))


def _window_min(g, n, lower, upper):
    """Sliding min of g over [lower(x), upper(x)] for the zero-weight case.

    Bound endpoints are non-decreasing in x, so a monotone deque gives O(n).
    Ties keep the smallest z.
    """
    al, bl = lower.a, lower.b
    au, bu = upper.a, upper.b
    vals = [_INF] * n
    arg = [INFEASIBLE] * n
    dq = deque()  # indices with increasing g
    nxt = 0  # next z not yet offered to the deque
    for x in range(n):
        zhi = min(n - 1, au * x + bu)
        zlo = max(0, al * x + bl)
        while nxt <= zhi:
            gz = g[nxt]
            if gz < _INF:
                while dq and g[dq[-1]] > gz:
                    dq.pop()
                dq.append(nxt)
            nxt += 1
        while dq and dq[0] < zlo:
            dq.popleft()
        if dq and zlo <= zhi:
            z = dq[0]
            vals[x] = g[z]
            arg[x] = z
    return vals, arg


_MIRROR_UPPER = AffineBound(2, 0)
_MIRROR_CACHE: dict[int, tuple] = {}


def _mirror_setup(n: int):
    """Cached bounds and validity windows for the composition constraint
    z in [2x-(n-1), 2x] (0-based: the sibling 2x-z stays in-grid)."""
    cached = _MIRROR_CACHE.get(n)
    if cached is None:
        lower = AffineBound(2, -(n - 1))
        windows = _validity_windows(n, lower, _MIRROR_UPPER)
        cached = (lower, _MIRROR_UPPER, windows)
        _MIRROR_CACHE[n] = cached
    return cached


def _transform_line(g_arr: np.ndarray, weight: float, delta: float, setup=None, h=None):
    """1-D stage of the pairwise composition along one axis.

    Minimizes 4*weight*(x - z - delta/2)**2 + g(z) subject to 2x - z staying
    in-grid.  Returns (values, argmin) as lists; values are re-evaluated
    unscaled at the winning z, so they match a brute-force scan bitwise.
    """
    n = g_arr.size
    lower, upper, windows = setup if setup is not None else _mirror_setup(n)
    g = g_arr.tolist()
    if weight == 0.0:
        vals, arg = _window_min(g, n, lower, upper)
        op_counter.note_call(n, 0, 0)
        return vals, arg
    scale = 4.0 * weight
    shift = delta * 0.5
    g_scaled = (g_arr / scale).tolist()
    if h is None:
        h = [z + shift for z in range(n)]
    _, arg, pushes, pops = _cgdt_core(g_scaled, h, n, windows, None)
    op_counter.note_call(n, pushes, pops)
    vals = [_INF] * n
    for x in range(n):
        z = arg[x]
        if z != INFEASIBLE:
            d = x - z - shift
            vals[x] = scale * d * d + g[z]
    return vals, arg


def pairwise_min_2d(
    e1: np.ndarray,
    wx: float,
    wy: float,
    dx: float,
    dy: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First stage of the two-child composition over a 2-D grid.

    Computes, for every parent position S=(x, y),

        E(S)  = min_{S1}  4*wx*(x - x1 - dx/2)**2 + 4*wy*(y - y1 - dy/2)**2
                          + e1[y1, x1]

    subject to the mirrored sibling position 2S - S1 staying in-grid, by a
    row pass then a column pass of the 1-D transform.  Returns
    (values, arg_x, arg_y) where (arg_x, arg_y) is the minimizing S1
    (INFEASIBLE where no placement exists).
    """
    if wx < 0:
        raise ValueError(f"deformation weight wx must be non-negative, got {wx}")
    if wy < 0:
        raise ValueError(f"deformation weight wy must be non-negative, got {wy}")
    e1 = np.asarray(e1, dtype=float)
    if e1.ndim != 2:
        raise ValueError("e1 must be a 2-D grid")
    if np.isnan(e1).any() or (e1 == -_INF).any():
        raise ValueError("e1 must be free of NaN and -inf")
    h, w = e1.shape

    setup_row = _mirror_setup(w)
    h_row = [z + dx * 0.5 for z in range(w)]
    row_vals = np.empty((h, w))
    row_arg = np.empty((h, w), dtype=np.int64)
    for y1 in range(h):
        vals, arg = _transform_line(e1[y1], wx, dx, setup_row, h_row)
        row_vals[y1] = vals
        row_arg[y1] = arg

    setup_col = _mirror_setup(h)
    h_col = [z + dy * 0.5 for z in range(h)]
    out = np.empty((h, w))
    arg_y = np.empty((h, w), dtype=np.int64)
    row_vals_t = np.ascontiguousarray(row_vals.T)
    for x in range(w):
        vals, arg = _transform_line(row_vals_t[x], wy, dy, setup_col, h_col)
        out[:, x] = vals
        arg_y[:, x] = arg

    arg_x = np.where(arg_y != INFEASIBLE, row_arg[np.clip(arg_y, 0, h - 1), np.arange(w)], INFEASIBLE)
    # a feasible column stage can still land on an infeasible row entry
    bad = (arg_y != INFEASIBLE) & (arg_x == INFEASIBLE)
    if bad.any():
        out[bad] = _INF
        arg_y[bad] = INFEASIBLE
    arg_x[arg_y == INFEASIBLE] = INFEASIBLE
    return out, arg_x, arg_y
