"""``perfbench`` command line.

Every subcommand prints a human-readable result to stdout and, with
``--out FILE``, writes a run record as ``key=value`` lines.  Exit codes:
0 success, 1 operational failure, 2 bad arguments or configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from perfbench import bench, cluster, kernels, parcoord, profiler
from perfbench.config import ConfigError, load_config

log = logging.getLogger("perfbench")

SUBCOMMANDS = ("bench", "profile", "kernel", "worker", "master", "jobscript", "clt")


class UsageError(Exception):
    """Bad arguments discovered after parsing; exits with status 2."""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value).replace("\\", "\\\\").replace("\n", "\\n")


class RunRecord:
    def __init__(self, subcommand: str, parameters: dict):
        self.subcommand = subcommand
        self.parameters = parameters
        self.config: dict = {}
        self.started_at = datetime.now(timezone.utc)
        self._t0 = time.perf_counter()
        self.duration = 0.0
        self.outcome = "ok"
        self.payload: dict = {}

    def finish(self, error: str | None = None):
        self.duration = time.perf_counter() - self._t0
        if error is not None:
            self.outcome = f"error({error})"

    def to_text(self) -> str:
        lines = [
            f"subcommand={self.subcommand}",
            f"started_at={self.started_at.isoformat()}",
            f"duration={_fmt(self.duration)}",
            f"outcome={_fmt(self.outcome)}",
        ]
        lines += [f"param.{k}={_fmt(v)}" for k, v in sorted(self.parameters.items())]
        lines += [f"config.{k}={_fmt(v)}" for k, v in sorted(self.config.items())]
        lines += [f"payload.{k}={_fmt(v)}" for k, v in self.payload.items()]
        return "\n".join(lines) + "\n"


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value defaults file (default ./perfbench.conf)")
    p.add_argument("--out", help="write the run record to this file")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perfbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("bench", help="time two kernels and test which is faster")
    p.add_argument("--variant-a", required=True, metavar="KERNEL")
    p.add_argument("--variant-b", required=True, metavar="KERNEL")
    p.add_argument("--n", type=int, help="problem size passed to both kernels")
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--method", choices=["welch", "mw"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    _common(p)

    p = sub.add_parser("profile", help="profile a kernel and print a summary report")
    p.add_argument("--kernel", required=True, help="kernel id, or 'demo'")
    p.add_argument("--interval", type=float)
    p.add_argument("--lines", action="store_true", help="line-mode report")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="also write the raw span log here")
    _common(p)

    p = sub.add_parser("kernel", help="run one kernel and print its output")
    p.add_argument("--id", required=True, dest="kernel_id", metavar="KERNEL")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    _common(p)

    p = sub.add_parser("worker", help="compute one chunk under the file protocol")
    p.add_argument("--id", required=True, type=int, dest="worker_id")
    p.add_argument("--chunk", required=True, help="replicates A:B, 1-based inclusive")
    p.add_argument("--kernel", required=True, choices=sorted(parcoord.REPLICATE_KERNELS))
    p.add_argument("--seed", type=int)
    p.add_argument("--dir", required=True)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--lam", type=float)
    p.add_argument("--delay", type=float, default=0.0, help=argparse.SUPPRESS)
    _common(p)

    p = sub.add_parser("master", help="launch workers, compute chunk 1, aggregate")
    p.add_argument("--workers", type=int, help="processes including the master")
    p.add_argument("--reps", required=True, type=int)
    p.add_argument("--kernel", required=True, choices=sorted(parcoord.REPLICATE_KERNELS))
    p.add_argument("--seed", type=int)
    p.add_argument("--dir", required=True)
    p.add_argument("--poll", type=float)
    p.add_argument("--timeout", type=float)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--lam", type=float)
    p.add_argument("--no-launch", action="store_true", help="workers are started elsewhere")
    p.add_argument("--keep", action="store_true", help="keep status/result files")
    p.add_argument("--values", help="write the aggregated values here")
    _common(p)

    p = sub.add_parser("jobscript", help="render a Slurm or SGE submission script")
    p.add_argument("flavor", choices=["slurm", "sge"])
    p.add_argument("--name", required=True)
    p.add_argument("--time", required=True)
    p.add_argument("--mem", required=True, help="slurm: MB or 512M/1G; sge: 512M/1G")
    p.add_argument("--cpus", required=True, type=int)
    p.add_argument("--command", required=True)
    p.add_argument("--mail")
    p.add_argument("--log", default="", help="slurm --output target")
    p.add_argument("-o", dest="output_file", help="write the script here instead of stdout")
    _common(p)

    p = sub.add_parser("clt", help="Poisson sample-mean experiment with histogram")
    p.add_argument("--n", type=int, default=100_000, help="sample size per replicate")
    p.add_argument("--reps", type=int, default=9000)
    p.add_argument("--lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--breaks", type=int)
    p.add_argument("--hist", help="histogram CSV path (default stdout)")
    p.add_argument("--dir", help="shared directory for worker files")
    p.add_argument("--poll", type=float)
    p.add_argument("--keep", action="store_true")
    _common(p)
    return parser


# -- subcommands ---------------------------------------------------------------

def cmd_bench(args, cfg, rec):
    ids = (args.variant_a, args.variant_b)
    try:
        ks = [kernels.get_kernel(k) for k in ids]
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    samples = []
    for k in ks:
        task = k.prepare(cfg["n"], cfg["seed"])
        samples.append(bench.measure(task, cfg["reps"], cfg["warmup"], label=k.id))
    verdict = bench.compare(samples[0], samples[1], cfg["method"], cfg["alpha"])
    print(f"{'variant':<20} {'reps':>5} {'mean (s)':>12} {'median (s)':>12}")
    for s in samples:
        print(f"{s.label:<20} {s.reps:>5} {s.mean:>12.6f} {s.median:>12.6f}")
    print(
        f"{verdict.method}: statistic={verdict.statistic:.4f} p_value={verdict.p_value:.4g} "
        f"faster={verdict.faster}"
    )
    rec.payload.update(
        method=verdict.method, statistic=verdict.statistic, p_value=verdict.p_value,
        faster=verdict.faster, mean_a=verdict.mean_a, mean_b=verdict.mean_b,
    )
    if verdict.df is not None:
        rec.payload["df"] = verdict.df
    return 0


def cmd_profile(args, cfg, rec):
    interval = cfg["interval"]
    if args.kernel == "demo":
        n = args.n if args.n is not None else profiler.DEMO_SIZE
        task = profiler.demo_task(n, cfg["seed"], args.lines)
    else:
        try:
            k = kernels.get_kernel(args.kernel)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
        task = profiler.kernel_task(k, cfg["n"], cfg["seed"], args.lines)
    span_log = profiler.profile(task, interval, args.lines)
    if args.log:
        Path(args.log).write_text(span_log.to_text())
    report = profiler.summarize(span_log)
    print(profiler.render_report(report), end="")
    rec.payload["sampling_time"] = report.sampling_time
    for r in report.rows:
        rec.payload[f"self_time.{r.label}"] = r.self_time
        rec.payload[f"self_pct.{r.label}"] = r.self_pct
    return 0


def cmd_kernel(args, cfg, rec):
    try:
        k = kernels.get_kernel(args.kernel_id)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    values = np.atleast_1d(np.asarray(k.prepare(cfg["n"], cfg["seed"])()))
    sys.stdout.write(kernels.format_values(values))
    rec.payload["count"] = len(values)
    return 0


def _job_config(args, cfg, delay=0.0):
    return parcoord.JobConfig(seed=cfg["seed"], n=cfg["n"], lam=cfg["lam"], delay=delay)


def cmd_worker(args, cfg, rec):
    try:
        chunk = parcoord.Chunk.parse(args.chunk)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = parcoord.worker_run(
        args.worker_id, chunk, args.kernel, _job_config(args, cfg, args.delay), Path(args.dir)
    )
    rec.payload.update(worker_id=out.worker_id, count=len(out.values), path=str(out.path))
    return 0


def cmd_master(args, cfg, rec):
    workers = cfg.get("workers") or parcoord.recommended_workers()
    try:
        part = parcoord.partition(args.reps, workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    jc = _job_config(args, cfg)
    workdir = Path(args.dir)
    workdir.mkdir(parents=True, exist_ok=True)
    procs = [] if args.no_launch else parcoord.launch_workers(part, args.kernel, jc, workdir)
    try:
        result = parcoord.master_run(
            part, args.kernel, jc, workdir, cfg["poll"], cfg.get("timeout"),
            on_wait=lambda msg: print(msg, flush=True),
        )
    except BaseException:
        for p in procs:
            p.kill()
        raise
    finally:
        for p in procs:
            p.wait()
    if not args.keep:
        parcoord.cleanup(workdir, workers)
    if args.values:
        Path(args.values).write_text(kernels.format_values(result.values))
    print(f"aggregated {len(result.values)} values from {workers} process(es) "
          f"in {result.total_seconds:.3f} s ({result.waits} wait(s))")
    rec.payload.update(
        count=len(result.values), waits=result.waits, seconds=result.total_seconds,
        mean=float(np.mean(result.values)),
    )
    return 0


def cmd_jobscript(args, cfg, rec):
    try:
        if args.flavor == "slurm":
            if args.mem.isdigit():
                mem_mb = int(args.mem)
            else:
                mem_mb = cluster.validate_mem(args.mem).megabytes
            spec = cluster.SlurmJobSpec(
                command=args.command, time=cluster.parse_time(args.time),
                job_name=args.name, mail_user=args.mail, output=args.log,
                cpus_per_task=args.cpus, mem_per_cpu_mb=mem_mb,
            )
            text = cluster.render_slurm(spec)
        else:
            spec = cluster.SgeJobSpec.for_cores(
                args.cpus, command=args.command, name=args.name,
                h_vmem=args.mem, mem_free=args.mem,
                h_rt_seconds=cluster.parse_sge_runtime(args.time), mail=args.mail,
            )
            text = cluster.render_sge(spec)
    except cluster.JobSpecError as exc:
        raise UsageError(str(exc)) from None
    if args.output_file:
        Path(args.output_file).write_text(text, newline="\n")
    else:
        sys.stdout.write(text)
    rec.payload["bytes"] = len(text)
    return 0


def cmd_clt(args, cfg, rec):
    c = kernels.CltConfig(n=cfg["n"], reps=args.reps, lam=cfg["lam"], seed=cfg["seed"])
    t0 = time.perf_counter()
    if args.workers <= 1:
        xbar = kernels.clt_sample_means(c)
    else:
        jc = parcoord.JobConfig(seed=c.seed, n=c.n, lam=c.lam)
        with tempfile.TemporaryDirectory(prefix="perfbench-clt-") as tmp:
            workdir = Path(args.dir) if args.dir else Path(tmp)
            result = parcoord.run_job(
                c.reps, args.workers, "clt", jc, workdir, cfg["poll"], cfg.get("timeout"),
                keep=args.keep,
            )
        xbar = result.values
    seconds = time.perf_counter() - t0
    hist = kernels.histogram(xbar, cfg["breaks"])
    csv = hist.to_csv()
    if args.hist:
        Path(args.hist).write_text(csv)
    else:
        sys.stdout.write(csv)
    mean, var = float(np.mean(xbar)), float(np.var(xbar, ddof=1)) if len(xbar) > 1 else 0.0
    summary = (
        f"reps={c.reps} n={c.n} lambda={c.lam}: mean={mean:.6g} (expect {c.lam:.6g}), "
        f"variance={var:.6g} (expect {c.lam / c.n:.6g}), {seconds:.2f} s"
    )
    print(summary, file=sys.stderr if not args.hist else sys.stdout)
    rec.payload.update(
        mean=mean, variance=var, expected_mean=c.lam, expected_variance=c.lam / c.n,
        seconds=seconds, bins=len(hist.counts),
    )
    return 0


HANDLERS = {
    "bench": cmd_bench,
    "profile": cmd_profile,
    "kernel": cmd_kernel,
    "worker": cmd_worker,
    "master": cmd_master,
    "jobscript": cmd_jobscript,
    "clt": cmd_clt,
}

# Flags that map onto configuration keys.
CONFIG_FLAGS = ("reps", "warmup", "alpha", "method", "poll", "interval", "seed", "n",
                "lam", "breaks", "timeout", "workers")


def _scan_out(argv):
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--out="):
            return a.split("=", 1)[1]
    return None


def _write_record(path, rec):
    if path:
        try:
            Path(path).write_text(rec.to_text())
        except OSError as exc:
            print(f"perfbench: cannot write record {path}: {exc}", file=sys.stderr)


def dispatch(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    sub = next((a for a in argv if a in SUBCOMMANDS), "unknown")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        if code != 0:
            rec = RunRecord(sub, {"argv": " ".join(argv)})
            rec.finish("bad arguments")
            _write_record(_scan_out(argv), rec)
        return code

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
    )
    params = {k: v for k, v in vars(args).items() if k not in ("config", "out", "verbose")}
    rec = RunRecord(args.subcommand, params)
    flags = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
    try:
        cfg = load_config(args.config, flags=flags)
        rec.config = dict(cfg)
        code = HANDLERS[args.subcommand](args, cfg, rec)
        rec.finish()
    except (ConfigError, UsageError) as exc:
        print(f"perfbench {args.subcommand}: {exc}", file=sys.stderr)
        rec.finish(str(exc))
        code = 2
    except Exception as exc:
        print(f"perfbench {args.subcommand}: error: {exc}", file=sys.stderr)
        rec.finish(str(exc))
        code = 1
    _write_record(args.out, rec)
    return code


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
