import subprocess
import sys

import pytest

from perfbench import config
from perfbench.cli import dispatch


def record(path):
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition("=")
        out[k] = v
    return out


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    for key in list(__import__("os").environ):
        if key.startswith(config.ENV_PREFIX):
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)


def test_kernel_output(capsys, tmp_path):
    rec = tmp_path / "rec.txt"
    assert dispatch(["kernel", "--id", "squares.prealloc", "--n", "3", "--out", str(rec)]) == 0
    assert capsys.readouterr().out == "1\n4\n9\n"
    r = record(rec)
    assert r["subcommand"] == "kernel" and r["outcome"] == "ok"
    assert r["payload.count"] == "3" and r["config.n"] == "3"
    assert float(r["duration"]) >= 0 and "T" in r["started_at"]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "perfbench", "kernel", "--id", "sine.vectorized",
                          "--n", "1"], capture_output=True, text=True, check=True)
    assert out.stdout == "5.2871181281629118\n"


def test_help_for_every_subcommand(capsys):
    for sub in ("bench", "profile", "kernel", "worker", "master", "jobscript", "clt"):
        assert dispatch([sub, "--help"]) == 0
        assert "usage:" in capsys.readouterr().out


def test_bad_arguments_exit_2(capsys, tmp_path):
    rec = tmp_path / "rec.txt"
    assert dispatch(["jobscript", "slurm", "--name", "x", "--time", "1", "--mem", "1G",
                     "--cpus", "1", "--out", str(rec)]) == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--command" in err
    assert record(rec)["outcome"].startswith("error(")
    assert dispatch(["kernel", "--id", "x", "--bogus"]) == 2
    assert dispatch(["frobnicate"]) == 2
    assert dispatch(["kernel", "--id", "no.such"]) == 2


def test_invalid_spec_values_exit_2(capsys):
    assert dispatch(["jobscript", "sge", "--name", "x", "--time", "60", "--mem", "512K",
                     "--cpus", "1", "--command", "x"]) == 2
    assert "512K" in capsys.readouterr().err


def test_operational_failure_exit_1(tmp_path, capsys):
    rec = tmp_path / "rec.txt"
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = dispatch(["worker", "--id", "2", "--chunk", "1:2", "--kernel", "noop",
                     "--dir", str(blocker / "sub"), "--out", str(rec)])
    assert code == 1
    assert record(rec)["outcome"].startswith("error(")


def test_jobscript_slurm(capsys, fixtures, tmp_path):
    args = ["jobscript", "slurm", "--name", "", "--time", "02:00:00", "--mem", "1024",
            "--cpus", "1", "--command", "R CMD BATCH /home/ucl/isba/nuyttend/script.r",
            "--mail", "me@gmail.com"]
    assert dispatch(args) == 0
    assert capsys.readouterr().out == (fixtures / "slurm_paper.sh").read_text()
    out = tmp_path / "job.sh"
    assert dispatch(args + ["-o", str(out)]) == 0
    assert out.read_bytes() == (fixtures / "slurm_paper.sh").read_bytes()


def test_jobscript_sge(capsys, fixtures):
    assert dispatch(["jobscript", "sge", "--name", "Name_of_the_job", "--time", "60",
                     "--mem", "512M", "--cpus", "1", "--mail", "me@gmail.com",
                     "--command", "R CMD BATCH /home/smcs/nuyttend/script.r"]) == 0
    assert capsys.readouterr().out == (fixtures / "sge_paper.sh").read_text()


def test_config_builtins():
    cfg = config.load_config(env={})
    assert cfg["reps"] == 30 and cfg["alpha"] == 0.05 and cfg["poll"] == 10.0


def test_config_precedence(tmp_path):
    f = tmp_path / "p.conf"
    f.write_text("# defaults\npoll=0.05\nreps=7\n\nalpha = 0.01\n")
    assert config.load_config(f, env={}, flags={"poll": 1.0})["poll"] == 1.0
    cfg = config.load_config(f, env={"PERFBENCH_REPS": "9"}, flags={"poll": None})
    assert cfg["reps"] == 9 and cfg["poll"] == 0.05 and cfg["alpha"] == 0.01
    assert config.load_config(env={"PERFBENCH_CONFIG": str(f)})["reps"] == 7


def test_config_default_file(tmp_path):
    (tmp_path / "perfbench.conf").write_text("seed=42\n")
    assert config.load_config(env={})["seed"] == 42


def test_config_errors(tmp_path):
    with pytest.raises(config.ConfigError):
        config.load_config(tmp_path / "missing.conf", env={})
    bad = tmp_path / "bad.conf"
    bad.write_text("reps\n")
    with pytest.raises(config.ConfigError, match="bad.conf:1"):
        config.load_config(bad, env={})
    bad.write_text("reps=many\n")
    with pytest.raises(config.ConfigError, match="reps"):
        config.load_config(bad, env={})


def test_unreadable_config_exit_2(tmp_path, capsys):
    rec = tmp_path / "rec.txt"
    code = dispatch(["kernel", "--id", "squares.naive", "--n", "2", "--config",
                     str(tmp_path / "nope.conf"), "--out", str(rec)])
    assert code == 2
    assert record(rec)["outcome"].startswith("error(cannot read config file")


def test_config_echoed_into_record(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("PERFBENCH_SEED", "5")
    rec = tmp_path / "rec.txt"
    assert dispatch(["kernel", "--id", "rank.fast", "--n", "4", "--out", str(rec)]) == 0
    r = record(rec)
    assert r["config.seed"] == "5" and r["config.reps"] == "30"


def test_seeded_output_reproducible(capsys):
    outs = []
    for _ in range(2):
        assert dispatch(["kernel", "--id", "kde.fast", "--n", "50", "--seed", "9"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert len(outs[0].splitlines()) == 10_000


def test_bench_rank_verdict(tmp_path, capsys):
    rec = tmp_path / "rec.txt"
    assert dispatch(["bench", "--variant-a", "rank.naive", "--variant-b", "rank.fast",
                     "--n", "20000", "--reps", "10", "--out", str(rec)]) == 0
    r = record(rec)
    assert r["payload.faster"] == "B"
    assert 0 <= float(r["payload.p_value"]) <= 0.05
    assert "faster=B" in capsys.readouterr().out


def test_profile_demo(capsys):
    assert dispatch(["profile", "--kernel", "demo", "--n", "20000", "--interval", "0.001"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("$by.self\n") and "$by.total" in out and '"loop"' in out
    assert dispatch(["profile", "--kernel", "demo", "--n", "20000", "--interval", "0.001",
                     "--lines"]) == 0
    out = capsys.readouterr().out
    assert "$by.line" in out and "#3" in out


def test_profile_kernel_writes_log(tmp_path, capsys):
    log = tmp_path / "spans.txt"
    assert dispatch(["profile", "--kernel", "rank.fast", "--n", "1000", "--log", str(log)]) == 0
    assert log.read_text().startswith("ENTER prepare ")


def test_master_with_workers(tmp_path, capsys):
    vals = tmp_path / "vals.txt"
    rec = tmp_path / "rec.txt"
    assert dispatch(["master", "--workers", "3", "--reps", "7", "--kernel", "index",
                     "--dir", str(tmp_path / "w"), "--poll", "0.05", "--values", str(vals),
                     "--out", str(rec)]) == 0
    assert vals.read_text() == "".join(f"{i}\n" for i in range(1, 8))
    assert record(rec)["payload.count"] == "7"
    assert list((tmp_path / "w").iterdir()) == []


def test_master_timeout_exit_1(tmp_path, capsys):
    code = dispatch(["master", "--workers", "2", "--reps", "4", "--kernel", "noop",
                     "--dir", str(tmp_path), "--poll", "0.02", "--timeout", "0.1",
                     "--no-launch"])
    assert code == 1
    out, err = capsys.readouterr()
    assert "Waiting for at least one worker" in out
    assert "worker(s) 2" in err


def test_clt_histogram(tmp_path, capsys):
    hist = tmp_path / "h.csv"
    assert dispatch(["clt", "--n", "500", "--reps", "60", "--breaks", "10",
                     "--hist", str(hist)]) == 0
    lines = hist.read_text().splitlines()
    assert lines[0] == "edge,count,density" and len(lines) == 12
    assert sum(int(x.split(",")[1]) for x in lines[1:-1]) == 60


def test_clt_workers_match_single(tmp_path, capsys):
    assert dispatch(["clt", "--n", "300", "--reps", "9", "--breaks", "3"]) == 0
    single = capsys.readouterr().out
    assert dispatch(["clt", "--n", "300", "--reps", "9", "--breaks", "3", "--workers", "3",
                     "--poll", "0.05"]) == 0
    assert capsys.readouterr().out == single
