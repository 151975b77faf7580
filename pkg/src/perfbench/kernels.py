"""Case-study computations, each as a naive and an optimized variant.

The pairs compute identical results and serve both as benchmark workloads
and as cross-checks for one another.  Loop-heavy variants are compiled with
numba so that the naive/fast gap reflects algorithmic class (O(n^2) versus
O(n log n), or growth versus preallocation) rather than interpreter
overhead.

Kernels are addressable by string id through :data:`REGISTRY`, e.g.
``"rank.fast"`` or ``"kde.naive"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from perfbench.rng import stream

TWO_PI = 2.0 * math.pi
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Beyond this many bandwidths a point's normal-kernel weight is below 1e-16.
KDE_CUTOFF = math.sqrt(-2.0 * math.log(1e-16 / INV_SQRT_2PI))


# -- squares: growing versus preallocated containers -------------------------

@numba.njit(cache=True)
def _squares_grow(n):
    buf = np.empty(0)
    size = 0
    for i in range(1, n + 1):
        if size == buf.shape[0]:
            bigger = np.empty(max(1, 2 * size))
            bigger[:size] = buf[:size]
            buf = bigger
        buf[size] = float(i) * float(i)
        size += 1
    return buf[:size].copy()


@numba.njit(cache=True)
def _squares_fill(n):
    out = np.empty(n)
    for i in range(1, n + 1):
        out[i - 1] = float(i) * float(i)
    return out


def squares_naive(n: int) -> np.ndarray:
    """[1, 4, ..., n^2], appending to a container that grows as it fills."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return _squares_grow(n)


def squares_prealloc(n: int) -> np.ndarray:
    """[1, 4, ..., n^2] written into an array allocated at its final size."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return _squares_fill(n)


# -- scaled sine: hoisting and removing the loop ------------------------------

def scaled_sine_naive(n: int) -> np.ndarray:
    out = np.empty(n)
    for i in range(1, n + 1):
        out[i - 1] = TWO_PI * math.sin(i)
    return out


def scaled_sine_vectorized(n: int) -> np.ndarray:
    return TWO_PI * np.sin(np.arange(1, n + 1, dtype=float))


# -- prefix rank counts -------------------------------------------------------

@numba.njit(cache=True)
def _rank_count_loop(y):
    n = y.shape[0]
    w = np.zeros(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for j in range(i):
            if y[j] < y[i]:
                c += 1
        w[i] = c
    return w


@numba.njit(cache=True)
def _bit_add(tree, pos):
    size = tree.shape[0] - 1
    while pos <= size:
        tree[pos] += 1
        pos += pos & -pos


@numba.njit(cache=True)
def _bit_prefix(tree, pos):
    total = 0
    while pos > 0:
        total += tree[pos]
        pos -= pos & -pos
    return total


@numba.njit(cache=True)
def _rank_count_bit(ranks, n_ranks):
    n = ranks.shape[0]
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    w = np.zeros(n, dtype=np.int64)
    for i in range(n):
        # ranks are 1-based dense, so rank - 1 counts strictly smaller values
        w[i] = _bit_prefix(tree, ranks[i] - 1)
        _bit_add(tree, ranks[i])
    return w


def _dense_ranks(values: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inverse = np.unique(values, return_inverse=True)
    return inverse.astype(np.int64) + 1, len(uniq)


def _as_finite(y) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("expected a 1-d vector")
    if not np.all(np.isfinite(y)):
        raise ValueError("vector entries must be finite")
    return y


def rank_count_naive(y) -> np.ndarray:
    """W[i] = #{j <= i : y[j] < y[i]} by direct double loop."""
    return _rank_count_loop(_as_finite(y))


def rank_count_fast(y) -> np.ndarray:
    """Same counts in O(n log n): dense ranks plus a binary indexed tree."""
    y = _as_finite(y)
    if len(y) == 0:
        return np.zeros(0, dtype=np.int64)
    ranks, n_ranks = _dense_ranks(y)
    return _rank_count_bit(ranks, n_ranks)


# -- kernel density estimation -----------------------------------------------

@dataclass
class KdeParams:
    data: np.ndarray
    xpts: np.ndarray
    h: float

    def __post_init__(self):
        self.data = _as_finite(self.data)
        self.xpts = _as_finite(self.xpts)
        if not self.h > 0:
            raise ValueError("bandwidth h must be > 0")
        if len(self.data) == 0:
            raise ValueError("KDE needs at least one observation")


@numba.njit(cache=True)
def _kde_loop(data, xpts, h):
    n = data.shape[0]
    dens = np.empty(xpts.shape[0])
    for i in range(xpts.shape[0]):
        ksum = 0.0
        for j in range(n):
            z = (xpts[i] - data[j]) / h
            ksum += INV_SQRT_2PI * math.exp(-0.5 * z * z)
        dens[i] = ksum / (n * h)
    return dens


@numba.njit(cache=True)
def _kde_window(sorted_data, xpts, h, radius):
    n = sorted_data.shape[0]
    dens = np.empty(xpts.shape[0])
    lo_all = np.searchsorted(sorted_data, xpts - radius * h, side="left")
    hi_all = np.searchsorted(sorted_data, xpts + radius * h, side="right")
    for i in range(xpts.shape[0]):
        ksum = 0.0
        for j in range(lo_all[i], hi_all[i]):
            z = (xpts[i] - sorted_data[j]) / h
            ksum += INV_SQRT_2PI * math.exp(-0.5 * z * z)
        dens[i] = ksum / (n * h)
    return dens


def kde_naive(p: KdeParams) -> np.ndarray:
    """Normal-kernel density at every grid point, summing over all data."""
    return _kde_loop(p.data, p.xpts, float(p.h))


def kde_fast(p: KdeParams) -> np.ndarray:
    """Density summing only data within ``KDE_CUTOFF`` bandwidths of each point.

    Each skipped observation would add less than ``1e-16 / (n h)``, so the
    total truncation error is below ``1e-16 / h``.
    """
    return _kde_window(np.sort(p.data), p.xpts, float(p.h), KDE_CUTOFF)


# -- pseudo-observations and the Kendall distribution function ---------------

@dataclass
class BivariateSample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = _as_finite(self.x)
        self.y = _as_finite(self.y)
        if len(self.x) != len(self.y):
            raise ValueError("coordinate vectors differ in length")
        if len(self.x) < 1:
            raise ValueError("bivariate sample needs n >= 1")

    @classmethod
    def from_points(cls, points) -> "BivariateSample":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(pts[:, 0], pts[:, 1])

    @property
    def n(self) -> int:
        return len(self.x)


@numba.njit(cache=True)
def _dominance_loop(x, y):
    n = x.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        s = 0
        for j in range(n):
            if x[j] < x[i] and y[j] < y[i]:
                s += 1
        out[i] = s
    return out


@numba.njit(cache=True)
def _dominance_bit(order, x, yrank, n_ranks):
    n = order.shape[0]
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    out = np.zeros(n, dtype=np.int64)
    start = 0
    while start < n:
        # Points tied on x cannot dominate each other: query the whole tie
        # group before inserting any of it.
        stop = start
        while stop < n and x[order[stop]] == x[order[start]]:
            stop += 1
        for k in range(start, stop):
            idx = order[k]
            out[idx] = _bit_prefix(tree, yrank[idx] - 1)
        for k in range(start, stop):
            _bit_add(tree, yrank[order[k]])
        start = stop
    return out


def dominance_counts_naive(s: BivariateSample) -> np.ndarray:
    return _dominance_loop(s.x, s.y)


def dominance_counts_fast(s: BivariateSample) -> np.ndarray:
    order = np.argsort(s.x, kind="stable").astype(np.int64)
    yrank, n_ranks = _dense_ranks(s.y)
    return _dominance_bit(order, s.x, yrank, n_ranks)


def pseudo_obs_naive(s: BivariateSample) -> np.ndarray:
    """w_j = #{k : x_k < x_j and y_k < y_j} / (n + 1), by double loop."""
    return dominance_counts_naive(s) / (s.n + 1)


def pseudo_obs_fast(s: BivariateSample) -> np.ndarray:
    """Same pseudo-observations via sort + binary indexed tree."""
    return dominance_counts_fast(s) / (s.n + 1)


def kendall_cdf(w, t: float) -> float:
    """Empirical distribution function of the pseudo-observations at ``t``."""
    w = np.asarray(w, dtype=float)
    if len(w) == 0:
        raise ValueError("need at least one pseudo-observation")
    return float(np.count_nonzero(w <= t)) / len(w)


def surrogate_sample(n: int, seed: int, kind: str = "independent") -> BivariateSample:
    """Seeded test input: independent uniforms or a comonotone pair."""
    g = stream(seed, 0)
    u = g.random(n)
    if kind == "independent":
        return BivariateSample(u, g.random(n))
    if kind == "comonotone":
        return BivariateSample(u, u ** 2)
    raise ValueError(f"unknown surrogate kind {kind!r}")


# -- Poisson sample means -----------------------------------------------------

@dataclass(frozen=True)
class CltConfig:
    n: int = 100_000
    reps: int = 9_000
    lam: float = 1.0
    seed: int = 1

    def __post_init__(self):
        if self.n < 1 or self.reps < 1:
            raise ValueError("n and reps must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")


def clt_replicate(index: int, n: int, lam: float, seed: int) -> float:
    """Mean of ``n`` Poisson(lam) draws from the stream of replicate ``index``."""
    return float(stream(seed, index).poisson(lam, n).mean())


def clt_chunk(first: int, last: int, n: int, lam: float, seed: int) -> np.ndarray:
    """Sample means for replicates ``first..last`` (1-based, inclusive)."""
    return np.array([clt_replicate(r, n, lam, seed) for r in range(first, last + 1)])


def clt_sample_means(c: CltConfig) -> np.ndarray:
    return clt_chunk(1, c.reps, c.n, c.lam, c.seed)


@dataclass
class HistogramBins:
    edges: np.ndarray
    counts: np.ndarray
    densities: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def to_csv(self) -> str:
        lines = ["edge,count,density"]
        for e, c, d in zip(self.edges[:-1], self.counts, self.densities):
            lines.append(f"{float(e):.17g},{int(c)},{float(d):.17g}")
        lines.append(f"{float(self.edges[-1]):.17g},,")
        return "\n".join(lines) + "\n"


def histogram(data, breaks: int = 100) -> HistogramBins:
    """Equal-width density histogram over [min, max].

    Bins are left-closed except the last, which also holds the maximum.
    When every value is equal there is one bin of width 1 centred on it.
    """
    data = _as_finite(data)
    if len(data) == 0:
        raise ValueError("histogram needs data")
    if breaks < 1:
        raise ValueError("breaks must be >= 1")
    lo, hi = float(data.min()), float(data.max())
    if lo == hi:
        edges = np.array([lo - 0.5, lo + 0.5])
        counts = np.array([len(data)])
    else:
        counts, edges = np.histogram(data, bins=breaks, range=(lo, hi))
    densities = counts / (len(data) * np.diff(edges))
    return HistogramBins(edges, counts, densities)


# -- foreach case-study body --------------------------------------------------

def foreach_body(i: int, seed: int = 1, draws: int = 10**6) -> float:
    """|1/sin(i)| minus a sum of ``draws`` normals from index ``i``'s stream."""
    return math.sqrt(1.0 / math.sin(i) ** 2) - float(stream(seed, i).standard_normal(draws).sum())


# -- registry -----------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """A kernel id bound to an input generator.

    ``prepare(n, seed)`` builds the input outside any timed region and
    returns the zero-argument callable to time.
    """

    id: str
    prepare: Callable[[int, int], Callable[[], object]]
    description: str


def _kde_input(n, seed):
    g = stream(seed, 0)
    return KdeParams(g.chisquare(3, size=max(n, 1)), np.linspace(0.0, 10.0, 10_000), 0.75)


REGISTRY: dict[str, Kernel] = {}


def _register(kid, prepare, description):
    REGISTRY[kid] = Kernel(kid, prepare, description)


_register("squares.naive", lambda n, s: (lambda: squares_naive(n)), "squares, growing container")
_register("squares.prealloc", lambda n, s: (lambda: squares_prealloc(n)), "squares, preallocated")
_register("sine.naive", lambda n, s: (lambda: scaled_sine_naive(n)), "2*pi*sin(i), loop")
_register("sine.vectorized", lambda n, s: (lambda: scaled_sine_vectorized(n)), "2*pi*sin(1:n)")


def _rank_prep(fn):
    def prepare(n, seed):
        y = stream(seed, 0).standard_normal(n)
        return lambda: fn(y)
    return prepare


def _pobs_prep(fn):
    def prepare(n, seed):
        s = surrogate_sample(max(n, 1), seed)
        return lambda: fn(s)
    return prepare


def _kde_prep(fn):
    def prepare(n, seed):
        p = _kde_input(n, seed)
        return lambda: fn(p)
    return prepare


def _clt_prep(n, seed):
    return lambda: clt_chunk(1, 1, n, 1.0, seed)


_register("rank.naive", _rank_prep(rank_count_naive), "prefix rank counts, double loop")
_register("rank.fast", _rank_prep(rank_count_fast), "prefix rank counts, BIT")
_register("kde.naive", _kde_prep(kde_naive), "normal KDE, full double loop (n data, 10000 grid)")
_register("kde.fast", _kde_prep(kde_fast), "normal KDE, sorted data + cutoff window")
_register("pseudo_obs.naive", _pobs_prep(pseudo_obs_naive), "pseudo-observations, double loop")
_register("pseudo_obs.fast", _pobs_prep(pseudo_obs_fast), "pseudo-observations, sort + BIT")
_register("clt", _clt_prep, "one Poisson(1) sample mean of size n")


def get_kernel(kid: str) -> Kernel:
    try:
        return REGISTRY[kid]
    except KeyError:
        raise KeyError(f"unknown kernel id {kid!r}; known: {', '.join(sorted(REGISTRY))}") from None


def format_values(values) -> str:
    """One value per line at 17 significant digits; integers stay integral."""
    arr = np.asarray(values)
    if arr.dtype.kind in "iu":
        return "".join(f"{int(v)}\n" for v in arr)
    return "".join(f"{float(v):.17g}\n" for v in arr)


def parse_values(text: str, source: str = "<input>") -> np.ndarray:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(float(line))
        except ValueError:
            raise ValueError(f"{source}:{lineno}: malformed value {line!r}") from None
    return np.array(out, dtype=float)
