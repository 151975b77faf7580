"""Span-based profiler with summaryRprof-shaped reports.

Code under study is instrumented with labeled spans::

    prof = Profiler()
    with prof.span("rnorm"):
        ...

The recorded enter/exit log is turned into a self/total time table.  Self
time of a label is time spent with that label on top of the stack; total
time is time with the label anywhere on the stack, counted once even when
the label recurses.  Before summarizing, every timestamp is snapped to the
nearest multiple of the sample interval, which gives the report the
granularity of a sampling profiler while keeping its arithmetic exact.
"""

from __future__ import annotations

import re
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Literal

DEFAULT_INTERVAL = 0.02
DEFAULT_MAX_EVENTS = 1_000_000
DEMO_SIZE = 1_000_000

Mode = Literal["by_self", "by_total", "by_line"]


class ProfileError(ValueError):
    pass


class ProfileOverflow(ProfileError):
    """The span log grew past its configured maximum size."""


@dataclass(frozen=True)
class SpanEvent:
    label: str
    enter_time: float
    exit_time: float
    depth: int

    @property
    def duration(self) -> float:
        return self.exit_time - self.enter_time


@dataclass
class SpanLog:
    """Ordered ENTER/EXIT records: ``(kind, label, t)`` tuples."""

    records: list[tuple[str, str, float]] = field(default_factory=list)
    sample_interval: float = DEFAULT_INTERVAL
    line_mode: bool = False

    def spans(self) -> list[SpanEvent]:
        """Closed spans in order of entry; raises on unbalanced logs."""
        _check_balanced(self.records)
        stack: list[tuple[str, float, int]] = []
        out: list[tuple[int, SpanEvent]] = []
        for seq, (kind, label, t) in enumerate(self.records):
            if kind == "ENTER":
                stack.append((label, t, seq))
            else:
                lab, t0, s0 = stack.pop()
                out.append((s0, SpanEvent(lab, t0, t, len(stack))))
        return [ev for _, ev in sorted(out, key=lambda p: p[0])]

    def to_text(self) -> str:
        return "".join(f"{kind} {label} {t!r}\n" for kind, label, t in self.records)

    @classmethod
    def from_text(
        cls, text: str, sample_interval: float = DEFAULT_INTERVAL, line_mode: bool = False
    ) -> "SpanLog":
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            kind, _, rest = line.partition(" ")
            label, _, t = rest.rpartition(" ")
            if kind not in ("ENTER", "EXIT") or not label:
                raise ProfileError(f"line {lineno}: malformed span record {line!r}")
            try:
                records.append((kind, label, float(t)))
            except ValueError:
                raise ProfileError(f"line {lineno}: bad timestamp {t!r}") from None
        return cls(records, sample_interval, line_mode)

    @classmethod
    def from_spans(
        cls,
        spans: Iterable[tuple[str, float, float]],
        sample_interval: float = DEFAULT_INTERVAL,
        line_mode: bool = False,
    ) -> "SpanLog":
        """Build a log from ``(label, enter, exit)`` triples of a well-nested tree.

        Spans sharing an endpoint nest with the longer one outside.
        """
        items = sorted(
            (float(t0), -float(t1), i, label) for i, (label, t0, t1) in enumerate(spans)
        )
        records = []
        stack: list[tuple[str, float, float]] = []
        for t0, neg_t1, _, label in items:
            t1 = -neg_t1
            if t1 < t0:
                raise ProfileError(f"span {label!r} exits before it enters")
            while stack and t1 > stack[-1][2]:
                top, top0, top1 = stack.pop()
                if t0 < top1:
                    raise ProfileError(f"spans {top!r} and {label!r} overlap without nesting")
                records.append(("EXIT", top, top1))
            records.append(("ENTER", label, t0))
            stack.append((label, t0, t1))
        while stack:
            top, _, top1 = stack.pop()
            records.append(("EXIT", top, top1))
        return cls(records, sample_interval, line_mode)


def _check_balanced(records):
    stack = []
    for kind, label, t in records:
        if kind == "ENTER":
            stack.append(label)
        elif not stack:
            raise ProfileError(f"EXIT {label!r} with no open span")
        elif stack[-1] != label:
            raise ProfileError(f"EXIT {label!r} while span {stack[-1]!r} is open")
        else:
            stack.pop()
    if stack:
        raise ProfileError(f"unbalanced spans: {stack[-1]!r} never closed")


class Profiler:
    """Records labeled spans against a monotonic clock."""

    def __init__(
        self,
        sample_interval: float = DEFAULT_INTERVAL,
        line_mode: bool = False,
        clock: Callable[[], float] = time.perf_counter,
        max_events: int = DEFAULT_MAX_EVENTS,
    ):
        if not sample_interval > 0:
            raise ProfileError("sample_interval must be > 0")
        self.sample_interval = sample_interval
        self.line_mode = line_mode
        self.max_events = max_events
        self._clock = clock
        self._t0 = clock()
        self._stack: list[str] = []
        self.log = SpanLog([], sample_interval, line_mode)

    def _record(self, kind, label):
        if len(self.log.records) >= self.max_events:
            raise ProfileOverflow(
                f"span log exceeded {self.max_events} events; raise the sample "
                "interval or max_events"
            )
        self.log.records.append((kind, label, self._clock() - self._t0))

    def enter(self, label: str):
        self._record("ENTER", label)
        self._stack.append(label)

    def exit(self, label: str):
        if not self._stack or self._stack[-1] != label:
            open_label = self._stack[-1] if self._stack else None
            raise ProfileError(f"exit of {label!r} while {open_label!r} is open")
        self._stack.pop()
        self._record("EXIT", label)

    @contextmanager
    def span(self, label: str):
        self.enter(label)
        try:
            yield
        finally:
            # An exception in the body still closes the span it opened.
            if self._stack and self._stack[-1] == label:
                self.exit(label)

    def line(self, n: int):
        """Span for source line ``n``, labeled ``#n`` as in line-mode reports."""
        return self.span(f"#{n}")

    def finish(self) -> SpanLog:
        if self._stack:
            raise ProfileError(f"unbalanced spans: {self._stack[-1]!r} still open")
        return self.log


def profile(
    task: Callable[[Profiler], object],
    sample_interval: float = DEFAULT_INTERVAL,
    line_mode: bool = False,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> SpanLog:
    """Run an instrumented ``task(profiler)`` and return its span log."""
    prof = Profiler(sample_interval, line_mode, max_events=max_events)
    task(prof)
    return prof.finish()


@dataclass(frozen=True)
class ProfileRow:
    label: str
    self_time: float
    self_pct: float
    total_time: float
    total_pct: float


@dataclass
class ProfileReport:
    rows: list[ProfileRow]
    sample_interval: float
    sampling_time: float
    mode: Mode = "by_self"

    def sorted_rows(self, mode: Mode) -> list[ProfileRow]:
        if mode == "by_self":
            return sorted(self.rows, key=lambda r: (-r.self_time, -r.total_time, _line_key(r.label)))
        if mode == "by_total":
            return sorted(self.rows, key=lambda r: (-r.total_time, -r.self_time, _line_key(r.label)))
        if mode == "by_line":
            return sorted(self.rows, key=lambda r: _line_key(r.label))
        raise ValueError(f"unknown report mode {mode!r}")

    @property
    def line_mode(self) -> bool:
        return self.mode == "by_line"


_LINE_RE = re.compile(r"^(.*)#(\d+)$")


def _line_key(label):
    m = _LINE_RE.match(label)
    if m is None:
        return (label, -1)
    return (m.group(1), int(m.group(2)))


def _accumulate(log: SpanLog, quantize: bool):
    """Self and total time per label, in ticks (quantized) or seconds."""
    _check_balanced(log.records)
    step = log.sample_interval
    stack: list[str] = []
    self_t: dict[str, float] = {}
    total_t: dict[str, float] = {}
    order: list[str] = []
    prev = None
    for kind, label, t in log.records:
        now = round(t / step) if quantize else t
        if stack and prev is not None:
            d = now - prev
            if d:
                top = stack[-1]
                self_t[top] = self_t.get(top, 0) + d
                for lab in set(stack):
                    total_t[lab] = total_t.get(lab, 0) + d
        prev = now
        if kind == "ENTER":
            if label not in self_t:
                self_t[label] = 0
                total_t[label] = 0
                order.append(label)
            stack.append(label)
        else:
            stack.pop()
    return order, self_t, total_t


def summarize(log: SpanLog, mode: Mode | None = None, quantize: bool = True) -> ProfileReport:
    """Self/total time table for a span log.

    ``mode`` only fixes the order of ``rows``; it defaults to ``by_line`` for
    line-mode logs and ``by_self`` otherwise.
    """
    if mode is None:
        mode = "by_line" if log.line_mode else "by_self"
    order, self_t, total_t = _accumulate(log, quantize)
    scale = log.sample_interval if quantize else 1.0
    sampling = sum(self_t.values())
    rows = []
    for label in order:
        s, tot = self_t[label], total_t[label]
        rows.append(ProfileRow(
            label,
            s * scale,
            round(100.0 * s / sampling, 2) if sampling else 0.0,
            tot * scale,
            round(100.0 * tot / sampling, 2) if sampling else 0.0,
        ))
    report = ProfileReport(rows, log.sample_interval, sampling * scale, mode)
    report.rows = report.sorted_rows(mode)
    return report


def report_from_rows(
    rows: Iterable[tuple[str, float, float]],
    sample_interval: float = DEFAULT_INTERVAL,
    mode: Mode = "by_self",
) -> ProfileReport:
    """Report from ``(label, self_time, total_time)`` rows, percentages derived."""
    rows = list(rows)
    sampling = round(sum(s for _, s, _ in rows), 10)
    out = [
        ProfileRow(
            label, s,
            round(100.0 * s / sampling, 2) if sampling else 0.0,
            tot,
            round(100.0 * tot / sampling, 2) if sampling else 0.0,
        )
        for label, s, tot in rows
    ]
    report = ProfileReport(out, sample_interval, sampling, mode)
    report.rows = report.sorted_rows(mode)
    return report


_HEADERS = {
    "by_self": ("self.time", "self.pct", "total.time", "total.pct"),
    "by_line": ("self.time", "self.pct", "total.time", "total.pct"),
    "by_total": ("total.time", "total.pct", "self.time", "self.pct"),
}


def _format_number(x: float) -> str:
    # R prints a length-one numeric with up to 7 significant digits.
    return f"{x:.7g}"


def _table(rows: list[ProfileRow], mode: Mode, quote: bool) -> list[str]:
    headers = _HEADERS[mode]
    names = [f'"{r.label}"' if quote else r.label for r in rows]
    cells = []
    for r in rows:
        vals = {
            "self.time": r.self_time, "self.pct": r.self_pct,
            "total.time": r.total_time, "total.pct": r.total_pct,
        }
        cells.append([f"{vals[h]:.2f}" for h in headers])
    name_w = max((len(n) for n in names), default=0)
    widths = [
        max([len(h)] + [len(c[i]) for c in cells]) for i, h in enumerate(headers)
    ]
    lines = [" " * name_w + "".join(" " + h.rjust(w) for h, w in zip(headers, widths))]
    for name, row in zip(names, cells):
        lines.append(name.ljust(name_w) + "".join(" " + c.rjust(w) for c, w in zip(row, widths)))
    return lines


def render_report(report: ProfileReport) -> str:
    """Fixed-width text laid out like R's ``summaryRprof`` printout."""
    line_mode = report.line_mode
    second = "by_line" if line_mode else "by_total"
    out = []
    for mode in ("by_self", second):
        rows = report.sorted_rows(mode)
        if mode == "by_self":
            # Labels that never sat on top of the stack only appear by total.
            rows = [r for r in rows if r.self_time > 0]
        out.append("$" + mode.replace("_", "."))
        out.extend(_table(rows, mode, quote=not line_mode))
        out.append("")
    out.append("$sample.interval")
    out.append(f"[1] {_format_number(report.sample_interval)}")
    out.append("")
    out.append("$sampling.time")
    out.append(f"[1] {_format_number(round(report.sampling_time, 10))}")
    return "\n".join(out) + "\n"


# -- instrumented workloads ------------------------------------------------------

def kernel_task(kernel, n: int, seed: int, line_mode: bool = False):
    """Profile a registry kernel: input preparation, then the kernel itself."""
    def task(prof: Profiler):
        with prof.span("#1" if line_mode else "prepare"):
            run = kernel.prepare(n, seed)
        with prof.span("#2" if line_mode else kernel.id):
            run()
    return task


def demo_task(n: int = DEMO_SIZE, seed: int = 1, line_mode: bool = False):
    """A small script with one slow loop among vectorized steps.

    Labels are function names, or ``#<line>`` in line mode, numbered as
    the statements of the script would be.
    """
    import numpy as np

    from perfbench.rng import stream

    def task(prof: Profiler):
        def sp(label, line):
            return prof.span(f"#{line}" if line_mode else label)

        g = stream(seed, 0)
        with sp("rnorm", 2):
            data1 = g.standard_normal(n)
        with sp("loop", 3):
            # Elementwise Python loop, deliberately slow.
            for i in range(min(n, 20_000) - 1):
                data1[i] = np.exp((data1[i] + data1[i + 1]) ** 2 / 100.0)
        with sp("rnorm", 8):
            data2 = g.standard_normal(n)
        with sp("*", 9):
            data1 = data2 * data1
        side = int(np.sqrt(n))
        with sp("matrix", 11):
            m1 = data1[: side * side].reshape(side, side).copy()
        with sp("matrix", 12):
            m2 = data2[: side * side].reshape(side, side).copy()
        with sp("%*%", 14):
            m = m1 @ m2
        with sp("solve", 16):
            if line_mode:
                np.linalg.solve(m + side * np.eye(side), np.ones(side))
            else:
                with prof.span("solve.default"):
                    np.linalg.solve(m + side * np.eye(side), np.ones(side))
    return task
