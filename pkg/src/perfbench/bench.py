"""Repeated wall-clock timing and two-sample comparison of task variants.

Execution times are random: two variants of a computation are compared by
timing each of them several times and running a two-sample test on the
measured durations.

>>> a = TimingSamples("a", [1.0, 2.0, 3.0])
>>> b = TimingSamples("b", [4.0, 5.0, 6.0])
>>> v = compare(a, b, "welch_t")
>>> round(v.statistic, 3), v.df, v.faster
(-3.674, 4.0, 'A')
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

from perfbench._stats import midranks, norm_sf, t_two_sided_p, tie_groups

DEFAULT_REPS = 30
DEFAULT_WARMUP = 1
DEFAULT_ALPHA = 0.05
BYTES_PER_DOUBLE = 8

Method = Literal["welch_t", "mann_whitney"]
METHOD_ALIASES = {
    "welch_t": "welch_t",
    "welch": "welch_t",
    "t": "welch_t",
    "mann_whitney": "mann_whitney",
    "mw": "mann_whitney",
}


class MeasurementError(RuntimeError):
    """A timed task raised; ``completed`` counts the reps recorded before it."""

    def __init__(self, label: str, completed: int, cause: BaseException):
        super().__init__(
            f"task {label!r} failed after {completed} completed rep(s): {cause!r}"
        )
        self.label = label
        self.completed = completed


@dataclass
class TimingSamples:
    label: str
    seconds: list[float]
    reps: int = field(default=-1)

    def __post_init__(self):
        self.seconds = [float(s) for s in self.seconds]
        if self.reps == -1:
            self.reps = len(self.seconds)
        if not self.label:
            raise ValueError("label must be nonempty")
        if self.reps != len(self.seconds):
            raise ValueError(f"reps={self.reps} but {len(self.seconds)} samples")
        if any(s < 0 or math.isnan(s) for s in self.seconds):
            raise ValueError("durations must be nonnegative")

    @property
    def mean(self) -> float:
        return sum(self.seconds) / len(self.seconds)

    @property
    def median(self) -> float:
        s = sorted(self.seconds)
        mid = len(s) // 2
        return s[mid] if len(s) % 2 else 0.5 * (s[mid - 1] + s[mid])

    def scaled(self, factor: float) -> "TimingSamples":
        return TimingSamples(self.label, [factor * s for s in self.seconds])


@dataclass(frozen=True)
class ComparisonVerdict:
    method: str
    statistic: float
    p_value: float
    faster: Literal["A", "B", "inconclusive"]
    mean_a: float
    mean_b: float
    df: float | None = None
    alpha: float = DEFAULT_ALPHA


@dataclass(frozen=True)
class MemoryEstimate:
    element_count: int
    bytes: int

    @property
    def megabytes(self) -> float:
        return self.bytes / 1e6


def measure(
    task: Callable[[], object],
    reps: int = DEFAULT_REPS,
    warmup: int = DEFAULT_WARMUP,
    label: str = "task",
    clock: Callable[[], float] = time.perf_counter,
) -> TimingSamples:
    """Time ``reps`` calls of ``task`` after ``warmup`` untimed calls.

    Only the call itself sits between the two clock reads; any setup must
    happen before ``task`` is built.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    for _ in range(warmup):
        try:
            task()
        except Exception as exc:
            raise MeasurementError(label, 0, exc) from exc
    seconds = []
    for _ in range(reps):
        try:
            start = clock()
            task()
            stop = clock()
        except Exception as exc:
            raise MeasurementError(label, len(seconds), exc) from exc
        seconds.append(max(0.0, stop - start))
    return TimingSamples(label, seconds, reps)


def _variance(xs: Sequence[float], mean: float) -> float:
    return sum((x - mean) ** 2 for x in xs) / (len(xs) - 1)


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, float]:
    """Welch's unequal-variance t statistic, its degrees of freedom and p-value."""
    na, nb = len(a), len(b)
    ma, mb = sum(a) / na, sum(b) / nb
    va, vb = _variance(a, ma) / na, _variance(b, mb) / nb
    se2 = va + vb
    if se2 == 0.0:
        # Both samples constant: df falls back to the pooled value.
        df = float(na + nb - 2)
        if ma == mb:
            return 0.0, df, 1.0
        return math.copysign(math.inf, ma - mb), df, 0.0
    t = (ma - mb) / math.sqrt(se2)
    denom = 0.0
    if va > 0:
        denom += va * va / (na - 1)
    if vb > 0:
        denom += vb * vb / (nb - 1)
    df = se2 * se2 / denom
    return t, df, t_two_sided_p(t, df)


def mann_whitney(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """U statistic of ``a`` and its two-sided normal-approximation p-value.

    U counts pairs with a > b (ties count one half).  The variance carries
    the tie correction and the z score a 0.5 continuity correction.
    """
    na, nb = len(a), len(b)
    n = na + nb
    pooled = list(a) + list(b)
    ranks = midranks(pooled)
    u = sum(ranks[:na]) - na * (na + 1) / 2.0
    mu = na * nb / 2.0
    ties = sum(t ** 3 - t for t in tie_groups(pooled))
    var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1)))
    if var <= 0.0:
        return u, 1.0
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return u, min(1.0, 2.0 * norm_sf(z))


def compare(
    a: TimingSamples | Sequence[float],
    b: TimingSamples | Sequence[float],
    method: str = "welch_t",
    alpha: float = DEFAULT_ALPHA,
) -> ComparisonVerdict:
    """Decide which of two timing sample sets is faster.

    ``faster`` names the variant with the smaller mean duration, and only
    when the test rejects equality at level ``alpha``.
    """
    xs = a.seconds if isinstance(a, TimingSamples) else [float(v) for v in a]
    ys = b.seconds if isinstance(b, TimingSamples) else [float(v) for v in b]
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError("compare needs at least 2 samples in each set")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    try:
        method = METHOD_ALIASES[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None

    mean_a, mean_b = sum(xs) / len(xs), sum(ys) / len(ys)
    direction = mean_a - mean_b
    df = None
    if method == "welch_t":
        stat, df, p = welch_t(xs, ys)
    else:
        stat, p = mann_whitney(xs, ys)
        if direction == 0.0:
            direction = stat - len(xs) * len(ys) / 2.0
    faster = "inconclusive"
    if p <= alpha and direction != 0.0:
        faster = "A" if direction < 0 else "B"
    return ComparisonVerdict(method, stat, p, faster, mean_a, mean_b, df, alpha)


def estimate_vector_memory(element_count: int) -> MemoryEstimate:
    """Bytes held by a vector of ``element_count`` doubles."""
    if element_count < 0:
        raise ValueError("element_count must be >= 0")
    return MemoryEstimate(element_count, BYTES_PER_DOUBLE * element_count)
