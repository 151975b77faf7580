"""Slurm and SGE submission-script generation.

Scripts are only rendered, never submitted.  Directive order and the
surrounding comments follow the reference job files line for line, so a
spec holding the reference values renders to exactly that file.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

SGE_MAX_RUNTIME = 432_000  # 5 days in seconds

TIME_FORMATS = (
    "minutes",
    "minutes:seconds",
    "hours:minutes:seconds",
    "days-hours",
    "days-hours:minutes",
    "days-hours:minutes:seconds",
)

_MEM_RE = re.compile(r"^([0-9]+)([MG])$")
_MEM_UNITS = {"M": 2**20, "G": 2**30}
_DIGITS = re.compile(r"^[0-9]+$")


class JobSpecError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSpec:
    seconds: int
    original: str


def _bad_time(text):
    return JobSpecError(
        f"invalid time {text!r}; expected one of: " + ", ".join(f'"{f}"' for f in TIME_FORMATS)
    )


def parse_time(text: str) -> TimeSpec:
    """Parse a Slurm ``--time`` value into seconds.

    A bare number is minutes; ``a:b`` is minutes:seconds; ``a:b:c`` is
    hours:minutes:seconds; a ``days-`` prefix allows hours, hours:minutes
    or hours:minutes:seconds after it.
    """
    days, dash, rest = text.partition("-")
    fields = rest.split(":") if dash else text.split(":")
    if dash:
        fields = [days] + fields
    if not all(_DIGITS.match(f) for f in fields):
        raise _bad_time(text)
    v = [int(f) for f in fields]
    if dash:
        if len(v) > 4:
            raise _bad_time(text)
        d, h, m, sec = v + [0] * (4 - len(v))
        seconds = d * 86400 + h * 3600 + m * 60 + sec
    elif len(v) == 1:
        seconds = v[0] * 60
    elif len(v) == 2:
        seconds = v[0] * 60 + v[1]
    elif len(v) == 3:
        seconds = v[0] * 3600 + v[1] * 60 + v[2]
    else:
        raise _bad_time(text)
    if seconds <= 0:
        raise JobSpecError(f"time {text!r} must be positive")
    return TimeSpec(seconds, text)


def parse_sge_runtime(text: str) -> int:
    """SGE ``h_rt``: plain seconds or ``hh:mm:ss``."""
    fields = text.split(":")
    if len(fields) not in (1, 3) or not all(_DIGITS.match(f) for f in fields):
        raise JobSpecError(f"invalid SGE runtime {text!r}; expected seconds or hh:mm:ss")
    if len(fields) == 1:
        return int(fields[0])
    h, m, s = (int(f) for f in fields)
    return h * 3600 + m * 60 + s


@dataclass(frozen=True)
class MemSpec:
    text: str
    bytes: int

    @property
    def megabytes(self) -> int:
        return self.bytes // 2**20


def validate_mem(text: str) -> MemSpec:
    """Accept ``<digits>M`` or ``<digits>G`` (binary units)."""
    m = _MEM_RE.match(text)
    if m is None:
        raise JobSpecError(f"invalid memory {text!r}; expected e.g. 512M or 2G")
    return MemSpec(text, int(m.group(1)) * _MEM_UNITS[m.group(2)])


# -- Slurm ---------------------------------------------------------------------

_SLURM_TIME_COMMENT = (
    '# Acceptable time formats include "minutes",',
    '# "minutes:seconds",',
    '# "hours:minutes:seconds", "days-hours", "days-hours:minutes"',
    '# and "days-hours:minutes:seconds"',
)


@dataclass(frozen=True)
class SlurmJobSpec:
    command: str
    time: TimeSpec
    job_name: str = ""
    mail_user: str | None = None
    mail_type: str = "ALL"
    output: str = ""
    ntasks: int = 1
    nodes: int = 1
    cpus_per_task: int = 1
    mem_per_cpu_mb: int = 1024

    def __post_init__(self):
        if isinstance(self.time, str):
            object.__setattr__(self, "time", parse_time(self.time))
        for name in ("ntasks", "nodes", "cpus_per_task", "mem_per_cpu_mb"):
            if getattr(self, name) < 1:
                raise JobSpecError(f"{name} must be a positive integer")
        if not self.command.strip():
            raise JobSpecError("command must be nonempty")
        if self.mail_user is not None and not self.mail_user:
            raise JobSpecError("mail_user must be nonempty when given")
        if not self.mail_type:
            raise JobSpecError("mail_type must be nonempty")
        for name in ("job_name", "output", "mail_type"):
            if "\n" in getattr(self, name):
                raise JobSpecError(f"{name} must be a single line")


def render_slurm(spec: SlurmJobSpec) -> str:
    lines = ["#!/bin/bash", f"#SBATCH --job-name={spec.job_name}"]
    if spec.mail_user is not None:
        lines.append(f"#SBATCH --mail-user={spec.mail_user}")
        lines.append(f"#SBATCH --mail-type={spec.mail_type}")
    lines.append(f"#SBATCH --output={spec.output}")
    lines.append(f"#SBATCH --time={spec.time.original}")
    lines.extend(_SLURM_TIME_COMMENT)
    lines += [
        f"#SBATCH --ntasks={spec.ntasks}",
        f"#SBATCH --nodes={spec.nodes}",
        f"#SBATCH --cpus-per-task={spec.cpus_per_task}",
        f"#SBATCH --mem-per-cpu={spec.mem_per_cpu_mb}",
    ]
    lines.extend(spec.command.splitlines())
    lines.append("# end of job")
    return _finish(lines)


def parse_slurm(text: str) -> SlurmJobSpec:
    """Recover the spec from a script produced by :func:`render_slurm`."""
    directives = {}
    command = []
    for line in text.splitlines():
        if line.startswith("#SBATCH "):
            key, _, value = line[len("#SBATCH "):].partition("=")
            directives[key.lstrip("-")] = value
        elif line and not line.startswith("#"):
            command.append(line)
    mail = directives.get("mail-user")
    return SlurmJobSpec(
        command="\n".join(command),
        time=parse_time(directives["time"]),
        job_name=directives.get("job-name", ""),
        mail_user=mail,
        mail_type=directives.get("mail-type", "ALL"),
        output=directives.get("output", ""),
        ntasks=int(directives["ntasks"]),
        nodes=int(directives["nodes"]),
        cpus_per_task=int(directives["cpus-per-task"]),
        mem_per_cpu_mb=int(directives["mem-per-cpu"]),
    )


# -- SGE -----------------------------------------------------------------------

PARALLEL_ENVS = {"mpich": 1, "snode": None, "snode8": 8}


@dataclass(frozen=True)
class SgeJobSpec:
    command: str
    name: str = "Name_of_the_job"
    parallel_env: tuple[str, int] = ("mpich", 1)
    h_vmem: str = "512M"
    mem_free: str = "512M"
    h_rt_seconds: int = 60
    mail: str | None = None
    workdir_current: bool = True
    join_output: bool = True

    def __post_init__(self):
        env, slots = self.parallel_env
        if env not in PARALLEL_ENVS:
            raise JobSpecError(f"unknown parallel environment {env!r}")
        fixed = PARALLEL_ENVS[env]
        if slots < 1 or (fixed is not None and slots != fixed):
            raise JobSpecError(f"parallel environment {env!r} cannot take {slots} slot(s)")
        validate_mem(self.h_vmem)
        validate_mem(self.mem_free)
        if not 0 < self.h_rt_seconds <= SGE_MAX_RUNTIME:
            raise JobSpecError(
                f"h_rt={self.h_rt_seconds} outside 1..{SGE_MAX_RUNTIME} seconds (5 days)"
            )
        if not self.name or not self.command.strip():
            raise JobSpecError("name and command must be nonempty")
        if self.mail is not None and not self.mail:
            raise JobSpecError("mail must be nonempty when given")

    @classmethod
    def for_cores(cls, cores: int, **kw) -> "SgeJobSpec":
        """Pick the parallel environment the way the reference cluster did."""
        env = {1: ("mpich", 1), 8: ("snode8", 8)}.get(cores, ("snode", cores))
        return cls(parallel_env=env, **kw)


def render_sge(spec: SgeJobSpec) -> str:
    env, slots = spec.parallel_env
    lines = [
        "#!/bin/sh",
        f"#$ -N {spec.name}",
        f"#$ -pe {env} {slots}",
        "# Advised: requested memory for each core",
        "# 1G, 2G, 256M, etc",
        f"#$ -l h_vmem={spec.h_vmem}",
        f"#$ -l mem_free={spec.mem_free}",
        "#",
        f"#$ -l h_rt={spec.h_rt_seconds}",
        "# (xxxx sec or hh:mm:ss (max 5 days=120:0:0)",
        "# SGE will kill your job after the requested period.",
        "#",
    ]
    if spec.mail is not None:
        lines += [
            "# Advised: your Email here, for job notification",
            f"#$ -M {spec.mail}",
            "#$ -m bes",
            "#",
        ]
    lines += [
        "# Optional: ask for specific resources (licence, etc.) with",
        "## -l resourcename = ...",
        "#",
        "#$ -l nb=false",
        "#",
        "# Optional: activate resources reservation",
        "# when you need a large number of cores",
        "## -R y",
        "#",
    ]
    if spec.workdir_current:
        lines += ["# Advised: output in the current working dir", "#$ -cwd"]
    if spec.join_output:
        lines += ["# Advised: combine output/error messages into one file", "#$ -j y"]
    lines += [
        "#",
        "# Launch job",
        'echo "Got $NSLOTS slots. Temp dir is $TMPDIR, Node file is:"',
        "cat $TMPDIR/machines",
        "echo Start at",
        "date",
    ]
    lines.extend(spec.command.splitlines())
    lines += ["echo End at", "date", "# end of job"]
    return _finish(lines)


_SGE_SCAFFOLD = {
    'echo "Got $NSLOTS slots. Temp dir is $TMPDIR, Node file is:"',
    "cat $TMPDIR/machines",
    "echo Start at",
    "echo End at",
    "date",
}


def parse_sge(text: str) -> SgeJobSpec:
    """Recover the spec from a script produced by :func:`render_sge`."""
    fields: dict = {"workdir_current": False, "join_output": False}
    command = []
    for line in text.splitlines():
        if line.startswith("#$ "):
            flag, _, value = line[3:].partition(" ")
            if flag == "-N":
                fields["name"] = value
            elif flag == "-pe":
                env, slots = value.split()
                fields["parallel_env"] = (env, int(slots))
            elif flag == "-l":
                key, _, val = value.partition("=")
                if key in ("h_vmem", "mem_free"):
                    fields[key] = val
                elif key == "h_rt":
                    fields["h_rt_seconds"] = parse_sge_runtime(val)
            elif flag == "-M":
                fields["mail"] = value
            elif flag == "-cwd":
                fields["workdir_current"] = True
            elif flag == "-j":
                fields["join_output"] = value == "y"
        elif line and not line.startswith("#") and line not in _SGE_SCAFFOLD:
            command.append(line)
    return SgeJobSpec(command="\n".join(command), **fields)


def _finish(lines: list[str]) -> str:
    text = "\n".join(line.rstrip() for line in lines) + "\n"
    if not text.isascii():
        raise JobSpecError("job scripts must be ASCII")
    return text
