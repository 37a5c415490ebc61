import json

import pytest

from nevlab import cli
from nevlab.output import read_csv
from nevlab.smt import FrozenConstants, catalog_key
from nevlab.stochastic import SimulationError


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_ode_check_ok(tmp_path, capsys):
    assert cli.main(["ode-check", "--out", str(tmp_path), "--reproducible"]) == 0
    (d,) = tmp_path.glob("ode-check-*")
    meta, rows = read_csv(d / "ode_bounds.csv")
    assert meta["subcommand"] == "ode-check" and len(meta["config_hash"]) == 12
    assert {str(r["kappa"]) for r in rows} == {"0.0", "-1.0", "-4.0", "-1/(1+t)**2"}
    assert (d / "config.txt").read_text().startswith("bm.bins = 64")


def test_env_var_overrides_out(tmp_path, monkeypatch):
    monkeypatch.setenv("NEVLAB_OUT", str(tmp_path / "env"))
    assert cli.main(["ode-check", "--out", str(tmp_path / "flag")]) == 0
    assert list((tmp_path / "env").glob("ode-check-*"))
    assert not (tmp_path / "flag").exists()


def test_fmt_quadrature(tmp_path):
    cfg = write_cfg(tmp_path, "experiment.map = poly:[0,0,1]\nexperiment.divisor = p1:points=[1]\ngrid.count = 8\n")
    assert cli.main(["fmt", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    (d,) = tmp_path.glob("fmt-*")
    assert (d / "fmt.svg").exists()
    _, rows = read_csv(d / "fmt.csv")
    assert len(rows) == 8 and "residual" in rows[0]


@pytest.mark.parametrize("text", [
    "experiment.divisor = p1:points=[0,\n",
    "experiment.map = sin\n",
    "grid.count = x\n",
    "experiment.divisor = p2:coord\n",          # dimension mismatch with flat:1
    "unknown.key = 1\n",
])
def test_config_errors_exit_2(tmp_path, text):
    cfg = write_cfg(tmp_path, text)
    assert cli.main(["fmt", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_missing_config_file_exit_2(tmp_path):
    assert cli.main(["fmt", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_unknown_subcommand_exit_2(tmp_path):
    assert cli.main(["serve"]) == 2


def test_mc_requires_seed(tmp_path):
    cfg = write_cfg(tmp_path, "experiment.method = mc\n")
    assert cli.main(["fmt", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert cli.main(["bm-check", "--out", str(tmp_path)]) == 2


def test_assertion_failure_exit_1(tmp_path, capsys):
    fc = FrozenConstants()
    fc.set(catalog_key("flat:1", "exp", "p1:points=[0,inf,-1]"), 0.0, -50.0)
    cpath = tmp_path / "constants.json"
    cpath.write_text(fc.dumps())
    cfg = write_cfg(tmp_path, f"experiment.map = exp\nexperiment.divisor = p1:points=[0,inf,-1]\nsmt.constants = {cpath}\n")
    assert cli.main(["smt", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "worst row" in err and "lhs" in err


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise SimulationError("step budget exhausted")

    monkeypatch.setattr(cli, "fmt_report", boom)
    assert cli.main(["fmt", "--out", str(tmp_path)]) == 3


def test_defect_exp(tmp_path):
    cfg = write_cfg(tmp_path, "experiment.map = exp\nexperiment.divisor = p1:points=[0,inf]\n")
    assert cli.main(["defect", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    (d,) = tmp_path.glob("defect-*")
    _, rows = read_csv(d / "defect.csv")
    by = {r["component"]: r for r in rows}
    assert by["sum"]["theta"] == 2.0 and by["sum"]["bound"] == 2.0


def test_smt_without_constants_fits_in_place(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "experiment.map = exp\nexperiment.divisor = p1:points=[0,inf,-1]\n")
    assert cli.main(["smt", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert "fitting" in capsys.readouterr().out
    (d,) = tmp_path.glob("smt-*")
    summary = json.loads((d / "smt_summary.json").read_text())
    assert summary["ok"] is True
    assert (d / "smt.svg").exists()


def test_bm_check_small(tmp_path):
    cfg = write_cfg(tmp_path, "mc.n_paths = 2000\nbm.radii = 1\nbm.hm_paths = 20000\nbm.bins = 16\n")
    assert cli.main(["bm-check", "--config", str(cfg), "--out", str(tmp_path), "--seed", "3"]) == 0
    (d,) = tmp_path.glob("bm-check-*")
    _, rows = read_csv(d / "harmonic_measure.csv")
    assert len(rows) == 16


def test_seed_flag_changes_hash(tmp_path):
    a = cli.load_config(None, [], 1)
    b = cli.load_config(None, [], 2)
    assert a.config_hash() != b.config_hash()
    assert cli.load_config(None, ["grid.count = 5"], None).r_count == 5
