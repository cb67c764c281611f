import json
import math

import numpy as np
import pytest

from mclab import cli
from mclab.config import load
from mclab.experiments import _combine, emit_report, run_experiment, sub_seed

BASE = """
[kernel]
type = {kernel}
amplitude = -39.47841760435743
[initial]
spatial = one_mode
amplitude = 0.9
[simulation]
n = 16
replicas = 40
dt = 5e-3
t_end = 0.1
seed = 7
[pde]
nx = 16
nv = 48
dt = 5e-3
[bogolyubov]
nx = 8
nv = 16
dt = 5e-3
refine = false
[experiment]
type = {kind}
n_list = 8, 16, 32
n_list_m3 = 4, 8, 16
orders = 2
sample_times = 0.1
replicas = 60
cross_n = 16
cross_replicas = 60
fn_n = 16
fn_replicas = 60
"""


def _cfg(kind, kernel="bounded", **over):
    return load(text=BASE.format(kind=kind, kernel=kernel), overrides=over)


def _files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.name != "manifest.json"}


def test_sub_seed_is_stable_and_distinct():
    assert sub_seed(1, "a", 3) == sub_seed(1, "a", 3)
    assert len({sub_seed(1, "a"), sub_seed(1, "b"), sub_seed(2, "a")}) == 3


def test_combine_rule():
    assert _combine(["pass", "inconclusive"]) == "pass"
    assert _combine(["pass", "fail"]) == "fail"
    assert _combine(["inconclusive"]) == "inconclusive"
    assert _combine(["null", "null"]) == "null"
    assert _combine([]) == "inconclusive"


@pytest.mark.parametrize("kind", ["simulate", "scaling", "chaos", "meanfield", "hierarchy"])
def test_runs_and_manifest(kind, tmp_path):
    cfg = _cfg(kind)
    report = run_experiment(cfg)
    code = emit_report(report, cfg, tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["exit_code"] == code == (0 if report.ok else 1)
    assert man["config"]["experiment"]["type"] == kind
    assert set(man["files"]) <= {p.name for p in tmp_path.iterdir()}
    assert len(man["code_sha256"]) == 64


def test_zero_kernel_scaling_is_null(tmp_path):
    report = run_experiment(_cfg("scaling", "zero"))
    assert report.verdict("scaling_m2").verdict == "null"
    assert report.ok


def test_bogolyubov_and_clt_small(tmp_path):
    cfg = _cfg("bogolyubov")
    rep = run_experiment(cfg)
    emit_report(rep, cfg, tmp_path)
    assert (tmp_path / "bogolyubov_projections.csv").exists()
    assert {v.name for v in rep.verdicts} >= {"bogolyubov_cross"}
    cfg = _cfg("clt", experiment={"n_list": "8, 16", "replicas": "200"})
    rep = run_experiment(cfg)
    emit_report(rep, cfg, tmp_path / "clt")
    assert (tmp_path / "clt" / "clt_cumulants.csv").exists()


@pytest.mark.parametrize("kind", ["simulate", "scaling"])
def test_outputs_do_not_depend_on_threads(kind, tmp_path):
    out = {}
    for th in (1, 3):
        cfg = _cfg(kind, simulation={"threads": th})
        emit_report(run_experiment(cfg), cfg, tmp_path / str(th))
        out[th] = _files(tmp_path / str(th))
    assert out[1] == out[3]


def test_seed_changes_output(tmp_path):
    res = []
    for seed in (1, 2):
        cfg = _cfg("simulate", simulation={"seed": seed})
        emit_report(run_experiment(cfg), cfg, tmp_path / str(seed))
        res.append((tmp_path / str(seed) / "moments_cos.csv").read_bytes())
    assert res[0] != res[1]


def test_cli(tmp_path, capsys):
    ini = tmp_path / "s.ini"
    ini.write_text(BASE.format(kind="simulate", kernel="bounded"))
    assert cli.main(["simulate", "--config", str(ini), "--out", str(tmp_path / "o"),
                     "--seed", "3", "--threads", "2"]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["simulation"]["seed"] == 3
    bad = tmp_path / "bad.ini"
    bad.write_text("[kernel]\nnope = 1\n")
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err
    code = cli.main(["hierarchy", "--config", str(ini), "--out", str(tmp_path / "h"),
                     "--A", "0.5", "--nmax", "12", "--tend", "0.2"])
    man = json.loads((tmp_path / "h" / "manifest.json").read_text())
    assert man["config"]["hierarchy"]["A"] == 0.5 and man["config"]["hierarchy"]["nmax"] == 12
    assert code == man["exit_code"]
