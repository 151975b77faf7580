import math
import os
import signal
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfbench import kernels, parcoord
from perfbench.rng import stream
from perfbench.parcoord import (
    Chunk,
    CoordinationError,
    CoordinationTimeout,
    ForeachError,
    JobConfig,
    master_run,
    partition,
    read_status,
    result_path,
    status_path,
    worker_run,
)

SMALL = JobConfig(seed=3, n=200)


# -- partition -----------------------------------------------------------------

def sizes(p):
    return [c.size for c in p.chunks]


def test_partition_examples():
    assert sizes(partition(90000, 3)) == [30000] * 3
    assert sizes(partition(10, 3)) == [4, 3, 3]
    assert partition(5, 1).chunks == (Chunk(1, 5),)
    with pytest.raises(ValueError):
        partition(2, 3)
    with pytest.raises(ValueError):
        partition(2, 0)


@given(total=st.integers(1, 10_000), k=st.integers(1, 64))
def test_partition_covers_range(total, k):
    if k > total:
        return
    p = partition(total, k)
    assert len(p.chunks) == k
    covered = [i for c in p.chunks for i in c.indices()]
    assert covered == list(range(1, total + 1))
    s = sizes(p)
    assert max(s) - min(s) <= 1 and s == sorted(s, reverse=True)


def test_chunk_text():
    assert Chunk.parse("3:7") == Chunk(3, 7) and str(Chunk(3, 7)) == "3:7"
    for bad in ("3", "0:2", "5:4", "a:b"):
        with pytest.raises(ValueError):
            Chunk.parse(bad)


def test_recommended_workers():
    assert parcoord.recommended_workers() == max(1, len(os.sched_getaffinity(0)) - 1)


# -- worker protocol -----------------------------------------------------------

def test_worker_files(tmp_path):
    out = worker_run(1, Chunk(1, 3), "noop", SMALL, tmp_path)
    assert status_path(tmp_path, 1).read_text() == "terminated\n"
    assert result_path(tmp_path, 1).read_text() == "0\n0\n0\n"
    assert len(out.values) == 3
    assert sorted(p.name for p in tmp_path.iterdir()) == ["status1.txt", "xbar1.txt"]


def test_worker_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    worker_run(2, Chunk(5, 9), "clt", SMALL, a)
    worker_run(2, Chunk(5, 9), "clt", SMALL, b)
    assert result_path(a, 2).read_bytes() == result_path(b, 2).read_bytes()
    vals = parcoord.read_values(result_path(a, 2))
    assert np.array_equal(vals, kernels.clt_chunk(5, 9, SMALL.n, SMALL.lam, SMALL.seed))


def test_worker_values_full_precision(tmp_path):
    worker_run(2, Chunk(1, 4), "clt", SMALL, tmp_path)
    for line in result_path(tmp_path, 2).read_text().splitlines():
        assert float(f"{float(line):.17g}") == float(line)


def test_worker_failure_leaves_running(tmp_path):
    with pytest.raises(ValueError):
        worker_run(2, Chunk(1, 3), "nope", SMALL, tmp_path)
    assert read_status(tmp_path, 2) == "running"
    assert not result_path(tmp_path, 2).exists()


def test_killed_worker_stays_running(tmp_path):
    cfg = JobConfig(seed=1, n=10, delay=30.0)
    (proc,) = parcoord.launch_workers(partition(4, 2), "noop", cfg, tmp_path)
    try:
        deadline = time.monotonic() + 30
        while read_status(tmp_path, 2) != "running":
            assert time.monotonic() < deadline, "worker never started"
            time.sleep(0.05)
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait()
    assert read_status(tmp_path, 2) == "running"
    assert not result_path(tmp_path, 2).exists()
    with pytest.raises(CoordinationTimeout) as info:
        master_run(partition(4, 2), "noop", cfg, tmp_path, poll_interval=0.01, timeout=0.1)
    assert info.value.unfinished == [2]
    assert "2" in str(info.value)


# -- master --------------------------------------------------------------------

def test_master_no_wait_when_done(tmp_path):
    p = partition(6, 3)
    for k, c in enumerate(p.chunks[1:], start=2):
        worker_run(k, c, "index", SMALL, tmp_path)
    slept = []
    res = master_run(p, "index", SMALL, tmp_path, poll_interval=5, sleep=slept.append)
    assert slept == [] and res.waits == 0
    assert res.values.tolist() == [1, 2, 3, 4, 5, 6]


def test_master_waits_then_aggregates(tmp_path):
    p = partition(6, 3)
    worker_run(3, p.chunks[2], "index", SMALL, tmp_path)
    parcoord.write_status(tmp_path, 2, "running")
    slept, seen = [], []

    def fake_sleep(dt):
        slept.append(dt)
        if len(slept) == 2:
            worker_run(2, p.chunks[1], "index", SMALL, tmp_path)

    res = master_run(p, "index", SMALL, tmp_path, poll_interval=0.25, timeout=60,
                     sleep=fake_sleep, on_wait=seen.append)
    assert slept == [0.25, 0.25]
    assert seen == [parcoord.WAIT_MESSAGE] * 2 == res.messages
    assert res.values.tolist() == [1, 2, 3, 4, 5, 6]


def test_master_never_reads_early(tmp_path, monkeypatch):
    p = partition(9, 3)
    real_read = parcoord.read_values

    def guarded(path):
        k = int(path.name[len("xbar"):-len(".txt")])
        assert read_status(tmp_path, k) == "terminated", f"read xbar{k} early"
        return real_read(path)

    monkeypatch.setattr(parcoord, "read_values", guarded)
    procs = parcoord.launch_workers(p, "index", SMALL, tmp_path, delays={3: 1.0})
    try:
        res = master_run(p, "index", SMALL, tmp_path, poll_interval=0.05, timeout=60)
    finally:
        for proc in procs:
            proc.wait()
    assert res.waits >= 1
    assert res.values.tolist() == list(range(1, 10))


def test_master_rejects_short_result(tmp_path):
    p = partition(4, 2)
    parcoord.atomic_write(result_path(tmp_path, 2), "1\n")
    parcoord.write_status(tmp_path, 2, "terminated")
    with pytest.raises(CoordinationError, match="expected 2"):
        master_run(p, "index", SMALL, tmp_path, poll_interval=0.01)


def test_master_malformed_line(tmp_path):
    p = partition(4, 2)
    parcoord.atomic_write(result_path(tmp_path, 2), "1\nx\n")
    parcoord.write_status(tmp_path, 2, "terminated")
    with pytest.raises(ValueError, match="xbar2.txt:2"):
        master_run(p, "index", SMALL, tmp_path, poll_interval=0.01)


def test_stale_files_removed_before_launch(tmp_path):
    parcoord.write_status(tmp_path, 2, "terminated")
    parcoord.atomic_write(result_path(tmp_path, 2), "99\n99\n")
    res = parcoord.run_job(4, 2, "index", SMALL, tmp_path, poll_interval=0.05, timeout=60)
    assert res.values.tolist() == [1, 2, 3, 4]
    assert list(tmp_path.iterdir()) == []


def test_run_job_matches_sequential(tmp_path):
    cfg = JobConfig(seed=7, n=300)
    res = parcoord.run_job(12, 3, "clt", cfg, tmp_path, poll_interval=0.05, timeout=120,
                           keep=True)
    seq = kernels.clt_sample_means(kernels.CltConfig(n=300, reps=12, seed=7))
    assert np.array_equal(res.values, seq)
    assert read_status(tmp_path, 3) == "terminated"


def test_atomic_write_leaves_no_temp(tmp_path):
    parcoord.atomic_write(tmp_path / "f.txt", "x\n")
    assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


# -- foreach -------------------------------------------------------------------

def square(i):
    return i * i


@pytest.mark.parametrize("backend", ["thread", "process"])
def test_foreach_squares(backend):
    out = parcoord.parallel_foreach(range(1, 7), square, num_workers=3, backend=backend)
    assert out.tolist() == [1, 4, 9, 16, 25, 36]


def test_foreach_single_worker_is_sequential():
    order = []

    def task(i):
        order.append(i)
        return i

    assert parcoord.parallel_foreach([5, 3, 9], task, num_workers=1).tolist() == [5, 3, 9]
    assert order == [5, 3, 9]


def test_foreach_orders_by_index_not_completion():
    def task(i):
        time.sleep(0.05 * (6 - i))
        return i

    assert parcoord.parallel_foreach(range(1, 7), task, num_workers=6).tolist() == [1, 2, 3, 4, 5, 6]


@pytest.mark.parametrize("workers", [1, 3])
def test_foreach_reports_failing_index(workers):
    def task(i):
        if i in (4, 9):
            raise ZeroDivisionError
        return i

    with pytest.raises(ForeachError) as info:
        parcoord.parallel_foreach(range(1, 11), task, num_workers=workers)
    assert info.value.index == 4


def test_foreach_body_many_workers_equals_one():
    def body(i):
        return kernels.foreach_body(i, seed=1, draws=10**4)

    idx = range(1, 201)
    one = parcoord.parallel_foreach(idx, body, num_workers=1)
    four = parcoord.parallel_foreach(idx, body, num_workers=4)
    assert np.array_equal(one, four)
    draws = stream(1, 1).standard_normal(10**4)
    assert one[0] == pytest.approx(1 / math.sin(1) - draws.sum(), rel=1e-12)


def test_foreach_paper_scale_body():
    # Full-size loop body: 10^6 normals per index.
    idx = range(1, 41)
    one = parcoord.parallel_foreach(idx, kernels.foreach_body, num_workers=1)
    four = parcoord.parallel_foreach(idx, kernels.foreach_body, num_workers=4)
    assert np.array_equal(one, four)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 60), k=st.integers(1, 8))
def test_foreach_matches_comprehension(n, k):
    out = parcoord.parallel_foreach(range(n), square, num_workers=k)
    assert out.tolist() == [i * i for i in range(n)]
