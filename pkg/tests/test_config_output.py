import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nevlab.config import ConfigError, ExperimentConfig
from nevlab.output import emit_csv, emit_plot, read_csv


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert ExperimentConfig.loads(cfg.dumps()) == cfg


@settings(max_examples=60, deadline=None)
@given(
    r_min=st.floats(0.1, 10, allow_nan=False),
    width=st.floats(0.5, 100, allow_nan=False),
    count=st.integers(2, 50),
    seed=st.one_of(st.none(), st.integers(0, 2**64 - 1)),
    n_paths=st.integers(2, 10**6),
    method=st.sampled_from(["quadrature", "mc"]),
    tol=st.floats(1e-6, 10, allow_nan=False),
)
def test_round_trip_property(r_min, width, count, seed, n_paths, method, tol):
    cfg = ExperimentConfig(r_min=r_min, r_max=r_min + width, r_count=count, seed=seed, n_paths=n_paths,
                           method=method, fmt_tol=tol)
    back = ExperimentConfig.loads(cfg.dumps())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_hash_changes_iff_config_changes():
    a = ExperimentConfig()
    assert a.config_hash() == ExperimentConfig().config_hash()
    assert a.config_hash() != a.with_overrides(seed=1).config_hash()
    assert a.config_hash() != a.with_overrides(r_max=51.0).config_hash()
    # comments and whitespace are not part of the configuration
    text = "# note\n\n  experiment.map   =  exp  # trailing comment\n"
    assert ExperimentConfig.loads(text) == ExperimentConfig(map="exp")


@pytest.mark.parametrize("text", [
    "experiment.map",                 # missing '='
    "nope.key = 1",                   # unknown key
    "grid.count = ten",               # bad int
    "experiment.method = exact",      # bad enum
    "grid.r_min = 5\ngrid.r_max = 1",  # empty grid
    "mc.seed = -1",
])
def test_malformed_config(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text)


def test_derived_values():
    cfg = ExperimentConfig(r_min=2.0, r_max=50.0, r_count=20)
    g = cfg.r_grid()
    assert g[0] == 2.0 and g[-1] == pytest.approx(50.0) and len(g) == 20
    assert cfg.lambdas() == [0.5, 0.1, 0.02]
    kap = dict(cfg.kappas())
    assert kap["-1/(1+t)**2"](1.0) == -0.25
    assert kap["0"](3.0) == 0.0
    with pytest.raises(ConfigError):
        ExperimentConfig(ode_kappas="x + t").kappas()
    with pytest.raises(ConfigError):
        ExperimentConfig().require_seed()


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(finite, finite, st.integers(-10**12, 10**12)), min_size=1, max_size=20))
def test_csv_bit_exact(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    rows = [{"a": a, "b": b, "k": k} for a, b, k in data]
    emit_csv(rows, path, meta={"config_hash": "abc", "seed": 3}, reproducible=True)
    meta, back = read_csv(path)
    assert meta == {"config_hash": "abc", "seed": "3"}
    for r0, r1 in zip(rows, back):
        assert r1["a"] == r0["a"] and r1["b"] == r0["b"] and r1["k"] == r0["k"]


def test_csv_reproducible_flag(tmp_path):
    rows = [{"x": 0.1, "flag": True}]
    emit_csv(rows, tmp_path / "a.csv", reproducible=True)
    emit_csv(rows, tmp_path / "b.csv", reproducible=True)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    emit_csv(rows, tmp_path / "c.csv", reproducible=False)
    assert "# generated" in (tmp_path / "c.csv").read_text()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "x,flag"
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "d.csv")


def test_svg_well_formed_and_stable(tmp_path):
    x = np.linspace(1, 10, 12)
    series = {"T": np.log(x), "N": np.sqrt(x)}
    shade = np.zeros(12, dtype=bool)
    shade[[3, 11]] = True
    p1 = emit_plot(x, series, tmp_path / "a.svg", shade=shade, title="t")
    p2 = emit_plot(x, series, tmp_path / "b.svg", shade=shade, title="t")
    root = ET.parse(p1).getroot()
    assert root.tag.endswith("svg")
    assert p1.read_bytes() == p2.read_bytes()
