"""Seed-reconstructible Brownian increments and space-time Levy areas.

Construction
------------
A :class:`BrownianPath` is a virtual tree over its clock span.  Every node
carries the pair ``(W, H)`` for its interval, where ``W`` is the Brownian
increment and ``H`` the rescaled space-time Levy area

    ``H_{s,t} = (1/h) * int_s^t (W_{s,u} - (u - s)/h * W_{s,t}) du``,  ``h = t - s``.

The root pair is drawn as ``W ~ N(0, h)`` and ``H ~ N(0, h/12)``
independently.  A node ``[l, r]`` split at ``m`` (lengths ``a = m - l`` and
``b = r - m``) obeys the exact linear relations

    ``W = W_1 + W_2``
    ``h H = a H_1 + b H_2 + (b/2) W_1 - (a/2) W_2``

with ``(W_1, W_2, H_1, H_2)`` a priori independent with variances
``(a, b, a/12, b/12)``.  Children are sampled from this Gaussian law
conditioned on the parent pair by Matheron's rule: draw an unconditioned
candidate, then add the kriging correction.  This is the exact conditional
for ``(W, H)`` jointly, for any split fraction.

Randomness for node ``k`` comes from a Philox counter-based generator keyed
by ``(seed, k)``, so nothing is stored and every node can be recomputed in
any order.

Registered grids
----------------
When a solver grid ``g_0 < ... < g_M`` is registered, the top of the tree
bisects grid *indices*, so every grid interval is a tree node and grid
queries are exact (no tolerance).  Inside a grid interval the tree continues
with midpoint bisection down to ``tol``.

Exact additivity
----------------
``W`` values are kept on a power-of-two lattice that only ever gets finer
down the tree, and ``W_2`` is formed as ``W - W_1``.  Both subtractions and
the check ``W_1 + W_2 == W`` are then exact in binary floating point.

Off-grid queries
----------------
An ad-hoc interval ``[s, t]`` is assembled from the largest tree nodes it
contains.  Endpoints falling inside a terminal node (length at most ``tol``)
snap to the nearer end of that node, so ``W`` is exact for the snapped
interval and off by at most one terminal-node increment for the requested
one (standard deviation ``sqrt(tol)``).  ``H`` is combined exactly from the
pieces with the relation above; snapping changes it by ``O(sqrt(tol))``.
"""

from __future__ import annotations

import csv
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, TextIO

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BrownianIncrement",
    "BrownianPath",
    "GridIncrements",
    "reversed_clock_adapter",
    "dump_increments_csv",
]

_SEED_LIMIT = 1 << 64
_ROOT_KEY = 0
_MAX_DEPTH = 62


@dataclass(frozen=True)
class BrownianIncrement:
    """The pair ``(W, H)`` over an interval of length ``h`` on some clock."""

    W: NDArray[np.float64]
    H: NDArray[np.float64]
    h: float

    def reversed(self) -> "BrownianIncrement":
        """Increment of the time-reversed path over the same interval.

        Reversal negates ``W``; the bridge of the reversed path is the
        original bridge read backwards, so ``H`` is unchanged.
        """
        return BrownianIncrement(-self.W, self.H, self.h)

    @staticmethod
    def zeros(dim: int) -> "BrownianIncrement":
        return BrownianIncrement(np.zeros(dim), np.zeros(dim), 0.0)

    @staticmethod
    def combine(left: "BrownianIncrement", right: "BrownianIncrement") -> "BrownianIncrement":
        """Concatenate two adjacent increments (``left`` first)."""
        a, b = left.h, right.h
        h = a + b
        if h == 0.0:
            return BrownianIncrement(left.W + right.W, np.zeros_like(left.H), 0.0)
        H = (a * left.H + b * right.H + 0.5 * b * left.W - 0.5 * a * right.W) / h
        return BrownianIncrement(left.W + right.W, H, h)


class _Node(NamedTuple):
    key: int
    lo: float
    hi: float
    i: int  # grid index range [i, j); i == j == -1 inside a grid interval
    j: int
    depth: int
    W: NDArray[np.float64]
    H: NDArray[np.float64]
    quantum: float


def _quantum(scale: float) -> float:
    """Power of two ``q`` with ``scale < 2**51 * q``."""
    if not scale > 0.0 or not math.isfinite(scale):
        raise FloatingPointError("Brownian node scale must be positive and finite")
    return math.ldexp(1.0, math.frexp(scale)[1] - 51)


class BrownianPath:
    """A virtual Brownian path with Levy areas over ``span``.

    Parameters
    ----------
    seed:
        Unsigned 64-bit seed.
    dim:
        Number of independent components.
    span:
        Clock interval ``(lo, hi)``.
    tol:
        Refinement limit for ad-hoc queries in clock units; defaults to
        ``2**-20`` of the span.
    grid:
        Optional solver grid points (any order, within the span) whose
        intervals become exact tree nodes.
    cache_size:
        Number of tree nodes memoised; only affects speed.
    """

    def __init__(
        self,
        seed: int,
        dim: int,
        span: tuple[float, float],
        tol: float | None = None,
        grid: ArrayLike | None = None,
        cache_size: int = 1 << 15,
    ) -> None:
        seed = int(seed)
        if not 0 <= seed < _SEED_LIMIT:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if dim < 1:
            raise ValueError("dim must be positive")
        lo, hi = float(span[0]), float(span[1])
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("span must be a finite interval with lo < hi")
        self.seed = seed
        self.dim = int(dim)
        self.span = (lo, hi)
        self.tol = float(tol) if tol is not None else math.ldexp(hi - lo, -20)
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        points = [lo, hi] if grid is None else list(np.asarray(grid, dtype=np.float64).ravel())
        pts = np.unique(np.concatenate([[lo, hi], points]))
        if pts[0] < lo or pts[-1] > hi:
            raise ValueError("grid points must lie inside the span")
        pts.setflags(write=False)
        self.grid = pts
        self._index = {float(p): k for k, p in enumerate(pts)}
        self._cache: OrderedDict[int, _Node] = OrderedDict()
        self._cache_size = int(cache_size)
        self._lock = threading.Lock()

    # ---------------------------------------------------------------- identity
    def with_grid(self, grid: ArrayLike) -> "BrownianPath":
        """Same seed/dim/span/tol with an additional registered grid."""
        return BrownianPath(self.seed, self.dim, self.span, self.tol, grid, self._cache_size)

    def __repr__(self) -> str:
        return (
            f"BrownianPath(seed={self.seed}, dim={self.dim}, span={self.span}, "
            f"tol={self.tol:.3g}, grid_points={self.grid.size})"
        )

    # ---------------------------------------------------------------- randomness
    def _normals(self, key: int, count: int) -> NDArray[np.float64]:
        bitgen = np.random.Philox(key=np.array([self.seed, key], dtype=np.uint64))
        return np.random.Generator(bitgen).standard_normal(count)

    def _root(self) -> _Node:
        lo, hi = self.span
        length = hi - lo
        z = self._normals(_ROOT_KEY, 2 * self.dim)
        W = math.sqrt(length) * z[: self.dim]
        H = math.sqrt(length / 12.0) * z[self.dim :]
        q = _quantum(2.0 * max(float(np.max(np.abs(W))), math.sqrt(length)))
        W = np.round(W / q) * q
        n_int = self.grid.size - 1
        i, j = (0, n_int) if n_int > 1 else (-1, -1)
        return _Node(1, lo, hi, i, j, 0, W, H, q)

    def _split_point(self, node: _Node) -> tuple[float, tuple[int, int], tuple[int, int]]:
        if node.i >= 0:
            m = (node.i + node.j) // 2
            left = (node.i, m) if m - node.i > 1 else (-1, -1)
            right = (m, node.j) if node.j - m > 1 else (-1, -1)
            return float(self.grid[m]), left, right
        return node.lo + 0.5 * (node.hi - node.lo), (-1, -1), (-1, -1)

    def _is_terminal(self, node: _Node) -> bool:
        if node.i >= 0:
            return False
        return (node.hi - node.lo) <= self.tol or node.depth >= _MAX_DEPTH

    def _split(self, node: _Node) -> tuple[_Node, _Node]:
        mid, lidx, ridx = self._split_point(node)
        a = mid - node.lo
        b = node.hi - mid
        h = a + b
        d = self.dim
        z = self._normals(node.key, 4 * d)
        w1 = math.sqrt(a) * z[:d]
        w2 = math.sqrt(b) * z[d : 2 * d]
        h1 = math.sqrt(a / 12.0) * z[2 * d : 3 * d]
        h2 = math.sqrt(b / 12.0) * z[3 * d :]
        res_w = node.W - (w1 + w2)
        res_h = node.H - (a * h1 + b * h2 + 0.5 * b * w1 - 0.5 * a * w2) / h
        cross = 6.0 * a * b / (h * h)
        W1 = w1 + (a / h) * res_w + cross * res_h
        H1 = h1 + (a * a / (h * h)) * res_h
        H2 = h2 + (b * b / (h * h)) * res_h
        scale = 2.0 * max(float(np.max(np.abs(node.W))), float(np.max(np.abs(W1))), math.sqrt(max(a, b)))
        q = min(node.quantum, _quantum(scale))
        W1 = np.round(W1 / q) * q
        W2 = node.W - W1
        depth = node.depth + 1
        left = _Node(2 * node.key, node.lo, mid, *lidx, depth, W1, H1, q)
        right = _Node(2 * node.key + 1, mid, node.hi, *ridx, depth, W2, H2, q)
        return left, right

    # ---------------------------------------------------------------- cache
    def _cached_children(self, node: _Node) -> tuple[_Node, _Node]:
        lkey = 2 * node.key
        with self._lock:
            left = self._cache.get(lkey)
            right = self._cache.get(lkey + 1)
            if left is not None and right is not None:
                self._cache.move_to_end(lkey)
                self._cache.move_to_end(lkey + 1)
                return left, right
        left, right = self._split(node)
        with self._lock:
            self._cache[lkey] = left
            self._cache[lkey + 1] = right
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return left, right

    def _root_cached(self) -> _Node:
        with self._lock:
            root = self._cache.get(1)
        if root is None:
            root = self._root()
            with self._lock:
                self._cache[1] = root
        return root

    # ---------------------------------------------------------------- queries
    def query(self, s: float, t: float) -> BrownianIncrement:
        """``(W, H)`` over ``[s, t]``.

        Exact for unions of tree nodes (registered grid intervals, dyadic
        sub-intervals); other endpoints snap to the terminal-node boundary
        nearest to them.
        """
        s, t = float(s), float(t)
        lo, hi = self.span
        if not (lo <= s < t <= hi):
            raise ValueError(f"query [{s}, {t}] must satisfy {lo} <= s < t <= {hi}")
        pieces: list[BrownianIncrement] = []
        stack = [self._root_cached()]
        while stack:
            node = stack.pop()
            if node.hi <= s or node.lo >= t:
                continue
            if s <= node.lo and node.hi <= t:
                pieces.append(BrownianIncrement(node.W, node.H, node.hi - node.lo))
                continue
            if self._is_terminal(node):
                mid = node.lo + 0.5 * (node.hi - node.lo)
                if s <= mid < t:
                    pieces.append(BrownianIncrement(node.W, node.H, node.hi - node.lo))
                continue
            left, right = self._cached_children(node)
            stack.append(right)
            stack.append(left)
        if not pieces:
            return BrownianIncrement.zeros(self.dim)
        out = pieces[0]
        for piece in pieces[1:]:
            out = BrownianIncrement.combine(out, piece)
        return BrownianIncrement(out.W.copy(), out.H.copy(), out.h)

    def grid_index(self, value: float) -> int | None:
        """Index of a registered grid point, or ``None``."""
        return self._index.get(float(value))

    def __call__(self, s: float, t: float) -> BrownianIncrement:
        return self.query(s, t)


class GridIncrements:
    """Increments keyed by solver step ``n`` (the reversed-clock adapter).

    ``points[n]`` is the Brownian-clock value of solver grid point ``n``;
    step ``n`` consumes the increment over the interval between
    ``points[n]`` and ``points[n + 1]``, whichever order they come in.
    Forward and backward passes therefore read bit-identical values.
    """

    def __init__(self, path: BrownianPath, points: ArrayLike) -> None:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("need at least two clock points")
        self.path = path
        self.points = pts
        self._memo: dict[int, BrownianIncrement] = {}
        self._lock = threading.Lock()

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    @property
    def dim(self) -> int:
        return self.path.dim

    def __call__(self, n: int) -> BrownianIncrement:
        if not 0 <= n < self.n_steps:
            raise IndexError(f"step {n} outside 0..{self.n_steps - 1}")
        with self._lock:
            hit = self._memo.get(n)
        if hit is not None:
            return hit
        a, b = float(self.points[n]), float(self.points[n + 1])
        inc = self.path.query(min(a, b), max(a, b))
        with self._lock:
            self._memo[n] = inc
        return inc

    def variance(self, n: int) -> float:
        """Theoretical variance of ``W`` for step ``n``."""
        return abs(float(self.points[n + 1]) - float(self.points[n]))

    @classmethod
    def for_clock_values(
        cls,
        seed: int,
        dim: int,
        clock_values: ArrayLike,
        chi_squared: bool,
        tol: float | None = None,
    ) -> "GridIncrements":
        """Build a path whose registered grid is the solver grid.

        ``clock_values`` are the solver grid in its own clock (``rho`` for
        data prediction, ``chi`` for noise prediction).  With ``chi_squared``
        the Brownian clock is ``chi**2``.
        """
        v = np.asarray(clock_values, dtype=np.float64)
        pts = v * v if chi_squared else v
        path = BrownianPath(seed, dim, (float(pts.min()), float(pts.max())), tol=tol, grid=pts)
        return cls(path, pts)


def reversed_clock_adapter(path: BrownianPath, clock_values: ArrayLike, chi_squared: bool) -> GridIncrements:
    """Step-keyed view of ``path`` for a solver grid.

    For data-prediction SDEs the Brownian clock is ``rho`` and ``clock_values``
    are used as is; for noise prediction they are ``chi`` values and the
    Brownian clock is ``chi**2``, so step ``n`` has variance
    ``chi_n**2 - chi_{n+1}**2``.  If ``path`` lacks the grid it is re-created
    with the grid registered (same seed, dim, span and tol).
    """
    v = np.asarray(clock_values, dtype=np.float64)
    pts = v * v if chi_squared else v
    if any(path.grid_index(p) is None for p in pts):
        path = path.with_grid(np.concatenate([path.grid, pts]))
    return GridIncrements(path, pts)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_increments_csv(increments: GridIncrements, out: str | Path | TextIO) -> None:
    """Write ``step, s, t, h, W_k..., H_k...`` rows for every solver step."""
    dim = increments.dim
    header = ["step", "s", "t", "h"] + [f"W{k}" for k in range(dim)] + [f"H{k}" for k in range(dim)]

    def rows() -> Iterable[Sequence[str]]:
        for n in range(increments.n_steps):
            inc = increments(n)
            a, b = increments.points[n], increments.points[n + 1]
            yield [str(n), _fmt(min(a, b)), _fmt(max(a, b)), _fmt(inc.h)] + [_fmt(w) for w in inc.W] + [
                _fmt(x) for x in inc.H
            ]

    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows())
    else:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows())
