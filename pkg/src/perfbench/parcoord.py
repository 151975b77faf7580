"""Master/worker coordination over a shared directory, and a chunked foreach.

Cross-process protocol, one worker ``k`` per chunk ``k >= 2``:

1. the worker writes ``status<k>.txt`` containing ``running``;
2. it computes its chunk and writes ``xbar<k>.txt``, one value per line;
3. it replaces ``status<k>.txt`` with ``terminated``.

The master computes chunk 1 itself, then polls the status files, sleeping
``poll_interval`` seconds while any worker is missing or still running,
and finally concatenates the result files in worker order.  Every file is
written to a temporary name and renamed into place, so a reader only ever
sees a complete file.
"""

from __future__ import annotations

import logging
import os
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from perfbench import kernels

log = logging.getLogger(__name__)

RUNNING = "running"
TERMINATED = "terminated"
WAIT_MESSAGE = "Waiting for at least one worker"
DEFAULT_POLL = 10.0
# Worker start-up (interpreter + imports) alone can take a second or more.
MIN_TIMEOUT = 30.0


class CoordinationError(RuntimeError):
    pass


class CoordinationTimeout(CoordinationError):
    def __init__(self, unfinished: Sequence[int], waited: float):
        ids = ", ".join(str(k) for k in unfinished)
        super().__init__(f"timed out after {waited:.3g} s waiting for worker(s) {ids}")
        self.unfinished = list(unfinished)


class ForeachError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"foreach task failed at index {index}: {cause!r}")
        self.index = index


def recommended_workers() -> int:
    """Usable cores minus one, leaving a core free for everything else."""
    try:
        cores = len(os.sched_getaffinity(0))
    except AttributeError:
        cores = os.cpu_count() or 1
    return max(1, cores - 1)


@dataclass(frozen=True)
class Chunk:
    """Replicates ``first..last``, 1-based and inclusive like ``1:30000``."""

    first: int
    last: int

    @property
    def size(self) -> int:
        return self.last - self.first + 1

    def indices(self) -> range:
        return range(self.first, self.last + 1)

    def __str__(self):
        return f"{self.first}:{self.last}"

    @classmethod
    def parse(cls, text: str) -> "Chunk":
        a, sep, b = text.partition(":")
        try:
            first, last = int(a), int(b)
        except ValueError:
            raise ValueError(f"chunk must look like A:B, got {text!r}") from None
        if not sep or first < 1 or last < first:
            raise ValueError(f"invalid chunk {text!r}")
        return cls(first, last)


@dataclass(frozen=True)
class TaskPartition:
    total_reps: int
    num_workers: int
    chunks: tuple[Chunk, ...]


def partition(total_reps: int, num_workers: int) -> TaskPartition:
    """Split ``1..total_reps`` into ``num_workers`` contiguous chunks.

    Sizes differ by at most one, the first chunks taking the remainder.
    """
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    if num_workers > total_reps:
        raise ValueError(f"cannot split {total_reps} reps over {num_workers} workers")
    base, extra = divmod(total_reps, num_workers)
    chunks = []
    first = 1
    for k in range(num_workers):
        size = base + (1 if k < extra else 0)
        chunks.append(Chunk(first, first + size - 1))
        first += size
    return TaskPartition(total_reps, num_workers, tuple(chunks))


# -- replicate kernels usable by workers -------------------------------------

@dataclass(frozen=True)
class JobConfig:
    seed: int = 1
    n: int = 100_000
    lam: float = 1.0
    delay: float = 0.0


def _clt(chunk: Chunk, cfg: JobConfig) -> np.ndarray:
    return kernels.clt_chunk(chunk.first, chunk.last, cfg.n, cfg.lam, cfg.seed)


def _noop(chunk: Chunk, cfg: JobConfig) -> np.ndarray:
    return np.zeros(chunk.size)


def _index(chunk: Chunk, cfg: JobConfig) -> np.ndarray:
    return np.arange(chunk.first, chunk.last + 1, dtype=float)


REPLICATE_KERNELS: dict[str, Callable[[Chunk, JobConfig], np.ndarray]] = {
    "clt": _clt,
    "noop": _noop,
    "index": _index,
}


def compute_chunk(kernel_id: str, chunk: Chunk, cfg: JobConfig) -> np.ndarray:
    try:
        fn = REPLICATE_KERNELS[kernel_id]
    except KeyError:
        raise ValueError(
            f"unknown replicate kernel {kernel_id!r}; known: {', '.join(REPLICATE_KERNELS)}"
        ) from None
    return fn(chunk, cfg)


# -- files --------------------------------------------------------------------

def status_path(workdir: Path, worker_id: int) -> Path:
    return Path(workdir) / f"status{worker_id}.txt"


def result_path(workdir: Path, worker_id: int) -> Path:
    return Path(workdir) / f"xbar{worker_id}.txt"


def atomic_write(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_status(workdir: Path, worker_id: int, state: str):
    atomic_write(status_path(workdir, worker_id), state + "\n")


def read_status(workdir: Path, worker_id: int) -> str | None:
    try:
        return status_path(workdir, worker_id).read_text().strip()
    except FileNotFoundError:
        return None


def read_values(path: Path) -> np.ndarray:
    return kernels.parse_values(Path(path).read_text(), source=str(path))


@dataclass
class WorkerOutput:
    worker_id: int
    values: np.ndarray
    path: Path


def worker_run(
    worker_id: int, chunk: Chunk, kernel_id: str, config: JobConfig, workdir: Path
) -> WorkerOutput:
    """Compute one chunk and publish it through the status/result protocol."""
    workdir = Path(workdir)
    write_status(workdir, worker_id, RUNNING)
    if config.delay > 0:
        time.sleep(config.delay)
    values = compute_chunk(kernel_id, chunk, config)
    if len(values) != chunk.size:
        raise CoordinationError(f"kernel produced {len(values)} values for chunk {chunk}")
    out = result_path(workdir, worker_id)
    atomic_write(out, kernels.format_values(values))
    write_status(workdir, worker_id, TERMINATED)
    return WorkerOutput(worker_id, values, out)


def worker_command(
    worker_id: int, chunk: Chunk, kernel_id: str, config: JobConfig, workdir: Path
) -> list[str]:
    cmd = [
        sys.executable, "-m", "perfbench", "worker",
        "--id", str(worker_id), "--chunk", str(chunk), "--kernel", kernel_id,
        "--seed", str(config.seed), "--dir", str(workdir),
        "--n", str(config.n), "--lam", repr(config.lam),
    ]
    if config.delay > 0:
        cmd += ["--delay", repr(config.delay)]
    return cmd


def launch_workers(
    part: TaskPartition,
    kernel_id: str,
    config: JobConfig,
    workdir: Path,
    delays: dict[int, float] | None = None,
) -> list[subprocess.Popen]:
    """Start one worker process for each chunk after the first.

    Status and result files left over from an earlier run are removed first,
    so a stale ``terminated`` can never be mistaken for this run's.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    procs = []
    for k in range(2, part.num_workers + 1):
        for p in (status_path(workdir, k), result_path(workdir, k)):
            p.unlink(missing_ok=True)
    for k, chunk in enumerate(part.chunks[1:], start=2):
        cfg = config
        if delays and k in delays:
            cfg = JobConfig(config.seed, config.n, config.lam, delays[k])
        procs.append(subprocess.Popen(worker_command(k, chunk, kernel_id, cfg, workdir)))
    return procs


@dataclass
class MasterResult:
    values: np.ndarray
    waits: int
    own_seconds: float
    total_seconds: float
    messages: list[str] = field(default_factory=list)


def master_run(
    part: TaskPartition,
    kernel_id: str,
    config: JobConfig,
    workdir: Path,
    poll_interval: float = DEFAULT_POLL,
    timeout: float | None = None,
    sleep: Callable[[float], None] = time.sleep,
    on_wait: Callable[[str], None] | None = None,
) -> MasterResult:
    """Compute chunk 1, wait for every worker to terminate, then aggregate.

    ``timeout`` defaults to ten times the master's own chunk time, and never
    less than ten poll intervals or ``MIN_TIMEOUT``.
    """
    workdir = Path(workdir)
    t_start = time.perf_counter()
    own = compute_chunk(kernel_id, part.chunks[0], config)
    own_seconds = time.perf_counter() - t_start
    if timeout is None:
        timeout = max(10.0 * own_seconds, 10.0 * poll_interval, MIN_TIMEOUT)

    worker_ids = list(range(2, part.num_workers + 1))
    waits = 0
    messages = []
    wait_start = time.perf_counter()
    while True:
        pending = [k for k in worker_ids if read_status(workdir, k) != TERMINATED]
        if not pending:
            break
        waited = time.perf_counter() - wait_start
        if waited >= timeout:
            raise CoordinationTimeout(pending, waited)
        waits += 1
        messages.append(WAIT_MESSAGE)
        log.info("%s (pending: %s)", WAIT_MESSAGE, pending)
        if on_wait is not None:
            on_wait(WAIT_MESSAGE)
        sleep(poll_interval)

    parts = [own]
    for k, chunk in zip(worker_ids, part.chunks[1:]):
        values = read_values(result_path(workdir, k))
        if len(values) != chunk.size:
            raise CoordinationError(
                f"{result_path(workdir, k)} holds {len(values)} values, expected {chunk.size}"
            )
        parts.append(values)
    return MasterResult(
        np.concatenate(parts), waits, own_seconds, time.perf_counter() - t_start, messages
    )


def cleanup(workdir: Path, num_workers: int):
    for k in range(2, num_workers + 1):
        status_path(workdir, k).unlink(missing_ok=True)
        result_path(workdir, k).unlink(missing_ok=True)


def run_job(
    total_reps: int,
    num_workers: int,
    kernel_id: str,
    config: JobConfig,
    workdir: Path,
    poll_interval: float = DEFAULT_POLL,
    timeout: float | None = None,
    keep: bool = False,
) -> MasterResult:
    """Launch the workers, act as master, reap the workers and tidy up."""
    part = partition(total_reps, num_workers)
    procs = launch_workers(part, kernel_id, config, workdir)
    try:
        result = master_run(part, kernel_id, config, workdir, poll_interval, timeout)
    except BaseException:
        for p in procs:
            p.kill()
        raise
    finally:
        for p in procs:
            p.wait()
    if not keep:
        cleanup(workdir, num_workers)
    return result


# -- in-process foreach -------------------------------------------------------

def _run_chunk(task, indices):
    out = []
    for i in indices:
        try:
            out.append(task(i))
        except Exception as exc:
            return out, (i, exc)
    return out, None


def parallel_foreach(
    indices: Sequence[int],
    task: Callable[[int], float],
    num_workers: int | None = None,
    combine: str = "concat",
    backend: str = "thread",
) -> np.ndarray:
    """``[task(i) for i in indices]`` computed by a fixed pool of workers.

    The index range is cut into one contiguous chunk per worker.  Results
    land in index order whatever order the chunks finish in.  With the
    ``process`` backend ``task`` must be picklable.
    """
    if combine != "concat":
        raise ValueError(f"unsupported combine {combine!r}")
    indices = list(indices)
    if num_workers is None:
        num_workers = recommended_workers()
    if num_workers < 1:
        raise ValueError("num_workers must be >= 1")
    if not indices:
        return np.zeros(0)
    if num_workers == 1:
        results, failure = _run_chunk(task, indices)
        if failure:
            raise ForeachError(*failure) from failure[1]
        return np.asarray(results, dtype=float)

    workers = min(num_workers, len(indices))
    part = partition(len(indices), workers)
    pool_cls = {"thread": ThreadPoolExecutor, "process": ProcessPoolExecutor}[backend]
    slots: list = [None] * len(indices)
    with pool_cls(max_workers=workers) as pool:
        futures = [
            (c, pool.submit(_run_chunk, task, indices[c.first - 1:c.last]))
            for c in part.chunks
        ]
        failures = []
        for c, fut in futures:
            results, failure = fut.result()
            slots[c.first - 1:c.first - 1 + len(results)] = results
            if failure:
                failures.append(failure)
    if failures:
        i, exc = min(failures, key=lambda f: indices.index(f[0]))
        raise ForeachError(i, exc) from exc
    return np.asarray(slots, dtype=float)
