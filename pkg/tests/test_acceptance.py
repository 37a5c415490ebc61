"""End-to-end acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import dblquad

from nevlab import cli
from nevlab.comparison import check_G_bounds, green_euclidean, solve_G
from nevlab.config import ExperimentConfig
from nevlab.geometry import ManifoldModel, SmoothField
from nevlab.nevanlinna import Budget, characteristic_T, fmt_report, nevanlinna_series
from nevlab.output import read_csv
from nevlab.smt import (
    SMT_CATALOG, defect_estimate, det_trace_slack, lang_bound_probe, random_metric, random_psd, trace_form,
    wedge_trace_ratio,
)
from nevlab.stochastic import FunctionalSpec, StepPolicy, dynkin_residual, run_paths
from nevlab.target import LineBundleFS, parse_divisor, parse_map

FLAT1 = ManifoldModel.flat(1)


def test_01_ode_bounds(acceptance):
    t0 = time.perf_counter()
    worst_sinh, failures = 0.0, []
    for label, kappa in ExperimentConfig().kappas():
        sol = solve_G(kappa, 10.0, tol=1e-10)
        for m in (1, 2, 3):
            rep = check_G_bounds(sol, m=m)
            if not rep.ok:
                failures.append((label, m, rep.worst))
        if label == "-1":
            worst_sinh = float(np.max(np.abs(sol.G - np.sinh(sol.r_grid)) / np.maximum(1.0, np.sinh(sol.r_grid))))
    dt = time.perf_counter() - t0
    ok = not failures and worst_sinh <= 1e-8 and dt < 1.0
    assert acceptance(1, "ODE bounds", ok, f"sinh rel err {worst_sinh:.2e}, {dt:.2f}s, failures {failures}")


def test_02_exit_time(acceptance):
    t0 = time.perf_counter()
    rows = []
    ok = True
    for name, model in (("flat:1", ManifoldModel.flat(1)), ("flat:2", ManifoldModel.flat(2)),
                        ("poincare", ManifoldModel.poincare())):
        m = model.m
        for i, r in enumerate((1.0, 2.0, 4.0)):
            est = run_paths(model, r, 10_000, seed=100 + 10 * i + m + (5 if name == "poincare" else 0)).estimate("exit_time")
            se = est.std_error
            if name == "poincare":
                good = est.mean <= 2 * r * r + 3 * se
            else:
                good = abs(est.mean - r * r / (2 * m)) <= 3 * se and est.mean <= 2 * r * r / (2 * m - 1) + 3 * se
            rows.append(f"{name} r={r:g}: {est.mean:.4f}±{se:.4f}")
            ok &= good
    dt = time.perf_counter() - t0
    ok &= dt < 120
    assert acceptance(2, "exit time", ok, f"{dt:.1f}s; " + "; ".join(rows))


def test_03_harmonic_measure(acceptance):
    t0 = time.perf_counter()
    rows, failures = cli.harmonic_measure_check(FLAT1, 1.0, 100_000, seed=2024, bins=64, step=StepPolicy(), threads=1)
    dt = time.perf_counter() - t0
    pval = rows[0]["chi2_pvalue"]
    top = max(r["frequency"] / r["limit"] for r in rows)
    ok = not failures and pval > 1e-3 and dt < 120
    assert acceptance(3, "harmonic measure", ok, f"max freq/limit {top:.3f}, chi2 p {pval:.3g}, {dt:.1f}s")


def _disk_oracle(phi, r):
    def integrand(theta, s):
        z = np.array([[s * np.exp(1j * theta)]])
        return green_euclidean(1, r, s) * float(phi(z)[0]) * s if s > 0 else 0.0
    val, _ = dblquad(integrand, 0.0, r, 0.0, 2 * math.pi, epsabs=1e-10, epsrel=1e-9)
    return val


def test_04_coarea_dynkin(acceptance):
    t0 = time.perf_counter()
    r = 1.0
    integrands = {
        "one": lambda z: np.ones(len(z)),
        "norm2": lambda z: np.abs(z[:, 0]) ** 2,
        "re2": lambda z: z[:, 0].real ** 2,
        "exp_re": lambda z: np.exp(z[:, 0].real),
        "bump": lambda z: 1.0 / (1.0 + 4.0 * np.abs(z[:, 0] - 0.3) ** 2),
    }
    specs = [FunctionalSpec(k, v) for k, v in integrands.items()]
    batch = run_paths(FLAT1, r, 10_000, seed=404, specs=specs)
    zs, ok = [], True
    for k, phi in integrands.items():
        est = batch.estimate(k)
        z = (est.mean - _disk_oracle(phi, r)) / est.std_error
        zs.append(f"{k} z={z:+.2f}")
        ok &= abs(z) <= 3
    fields = {
        "norm2": lambda z: np.sum(np.abs(z) ** 2, axis=1),
        "norm4": lambda z: np.sum(np.abs(z) ** 2, axis=1) ** 2,
        "exp_re": lambda z: np.exp(z[:, 0].real),
    }
    for i, (k, u) in enumerate(fields.items()):
        res = dynkin_residual(FLAT1, SmoothField(u), r, 10_000, seed=500 + i)
        zs.append(f"dynkin {k} z={res.mean / res.std_error:+.2f}")
        ok &= abs(res.mean) <= 3 * res.std_error
    dt = time.perf_counter() - t0
    ok &= dt < 180
    assert acceptance(4, "co-area/Dynkin", ok, f"{dt:.1f}s; " + ", ".join(zs))


def test_05_fmt(acceptance):
    t0 = time.perf_counter()
    rg = np.geomspace(2.0, 50.0, 20)
    details, ok = [], True
    for mp, dv in (("id", "p1:points=[0.5+0.5j]"), ("poly:[0,0,1]", "p1:points=[1]")):
        f, D = parse_map(mp, FLAT1), parse_divisor(dv)
        rep = fmt_report(f, D, D.bundle(), rg, "quadrature", tol=0.1)
        res = rep.residual
        spread = float(res.max() - res.min())
        mc = nevanlinna_series(f, D, D.bundle(), rg, "mc", Budget(n_paths=4000, seed=55))
        q = rep.series
        z = np.concatenate([(mc.T - q.T) / mc.T_se, (mc.m - q.m) / mc.m_se])
        # 3 SE is the two-sided 0.27% level of one comparison; keep it family-wise over all radii
        z_crit = float(stats.norm.isf(stats.norm.sf(3.0) / len(z)))
        pooled = float(stats.chi2.sf(np.sum(z ** 2), len(z)))
        zmax = float(np.max(np.abs(z)))
        ok &= spread <= 0.1 and zmax <= z_crit and pooled > 1e-3
        details.append(f"{mp}: max-min {spread:.2e}, MC max|z| {zmax:.2f} (crit {z_crit:.2f}), pooled chi2 p {pooled:.2f}")
    dt = time.perf_counter() - t0
    ok &= dt < 180
    assert acceptance(5, "FMT", ok, f"{dt:.1f}s; " + "; ".join(details))


def test_06_exp_defect(acceptance):
    t0 = time.perf_counter()
    f = parse_map("exp", FLAT1)
    rep = defect_estimate(f, parse_divisor("p1:points=[0,inf]"), 30.0)
    T30 = characteristic_T(f, LineBundleFS(1), 30.0).value
    ratio = T30 * math.pi / 30.0
    dt = time.perf_counter() - t0
    ok = (rep.per_component == [1.0, 1.0] and 0.95 <= ratio <= 1.05 and rep.summed == 2.0
          and rep.summed_bound == 2.0 and dt < 60)
    assert acceptance(6, "exp defect", ok, f"Theta {rep.per_component}, T(30)pi/30 = {ratio:.4f}, sum {rep.summed}, {dt:.1f}s")


def test_07_algebraic_lemmas(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_rel, worst_slack = 0.0, np.inf
    for m in (1, 2, 3):
        phi = random_psd(rng, m, 10_000)
        g = random_metric(rng, m, 10_000)
        tr = trace_form(phi, g)
        rel = np.abs(wedge_trace_ratio(phi, g) - tr) / np.abs(tr)
        worst_rel = max(worst_rel, float(rel.max()))
        worst_slack = min(worst_slack, float(np.min(det_trace_slack(phi, g) / tr)))
    dt = time.perf_counter() - t0
    ok = worst_rel <= 1e-10 and worst_slack >= -1e-12 and dt < 10
    assert acceptance(7, "algebraic lemmas", ok, f"trace rel err {worst_rel:.1e}, min rel slack {worst_slack:.1e}, {dt:.2f}s")


def test_08_lang_stability(acceptance):
    t0 = time.perf_counter()
    spreads = {}
    for text in ("p1:points=[0,inf,1]", "p2:lines=[[1,1,1],[1,0,0],[0,1,0],[0,0,1]]", "p2:coord"):
        probe = lang_bound_probe(parse_divisor(text), lambda_grid=(0.5, 0.1, 0.02))
        spreads[text] = probe.spread
    dt = time.perf_counter() - t0
    ok = all(s < 10 for s in spreads.values()) and dt < 60
    detail = ", ".join(f"{k} spread {v:.1f}" for k, v in spreads.items())
    assert acceptance(8, "Lang stability", ok, f"{detail}, {dt:.1f}s")


def test_09_smt_harness(acceptance, tmp_path):
    t0 = time.perf_counter()
    assert cli.main(["calibrate", "--out", str(tmp_path), "--reproducible"]) in (0, 1)
    (cal,) = tmp_path.glob("calibrate-*")
    constants = cal / "constants.json"
    details, ok = [], True
    for model, mp, dv, method, r0, r1 in SMT_CATALOG:
        cfg = tmp_path / f"smt_{len(details)}.cfg"
        cfg.write_text("\n".join([
            f"experiment.model = {model}", f"experiment.map = {mp}", f"experiment.divisor = {dv}",
            f"experiment.method = {method}", f"grid.r_min = {r0}", f"grid.r_max = {r1}", "grid.count = 20",
            f"smt.constants = {constants}",
        ]) + "\n")
        code = cli.main(["smt", "--config", str(cfg), "--out", str(tmp_path)])
        (out,) = [d for d in tmp_path.glob("smt-*") if (d / "config.txt").read_text() == cli.load_config(cfg, [], None).dumps()]
        summary = json.loads((out / "smt_summary.json").read_text())
        sharp_ok = not (model == "flat:1" and summary["k"] == 1) or summary["sharpness"] <= 1.2
        ok &= code == 0 and sharp_ok
        details.append(f"{mp}/{dv}@{model}: exit {code}, exceptional {summary['violation_measure']:.2g}/"
                       f"{summary['span']:.3g}, slope {summary['sharpness']:.2f}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    assert acceptance(9, "SMT harness", ok, f"{dt:.1f}s; " + "; ".join(details))


def test_10_reproducibility(acceptance, tmp_path):
    cfg = tmp_path / "mc.cfg"
    cfg.write_text("experiment.method = mc\nmc.n_paths = 600\ngrid.count = 5\nbm.radii = 1, 2\n"
                   "bm.hm_paths = 5000\n")
    same = []
    for sub in ("fmt", "bm-check"):
        outs = []
        for run, threads in (("a", "1"), ("b", "2")):
            code = cli.main([sub, "--config", str(cfg), "--out", str(tmp_path / run), "--seed", "77",
                             "--threads", threads, "--reproducible"])
            assert code in (0, 1)
            outs.append(sorted((tmp_path / run).glob(f"{sub}-*/*.csv")))
        for pa, pb in zip(*outs):
            same.append((pa.name, pa.read_bytes() == pb.read_bytes()))
            read_csv(pa)
    ok = len(same) == 3 and all(s for _, s in same)
    assert acceptance(10, "reproducibility", ok, ", ".join(f"{n}: {'identical' if s else 'DIFFERENT'}" for n, s in same))
