"""Command-line front end: ``nevlab <subcommand> [--config PATH] [--out DIR] [--seed N] [--threads N] [--reproducible]``.

Exit codes: 0 all checks pass, 1 an asserted inequality failed, 2 bad
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats
from scipy.integrate import quad

from .comparison import ODEConvergenceError, check_G_bounds, green_radial, solve_G
from .config import ConfigError, ExperimentConfig
from .geometry import DomainError, ModelKind, parse_model, sphere_area
from .nevanlinna import Budget, ZeroFindingError, fmt_report
from .output import emit_csv, emit_plot
from .smt import (
    SMT_CATALOG,
    FrozenConstants,
    SmtConfig,
    catalog_key,
    catalog_triples,
    defect_estimate,
    growth_condition_check,
    lang_bound_probe,
    smt_report,
)
from .stochastic import SimulationError, StepPolicy, derive_seed, run_paths
from .target import IndeterminacyError, LineBundleFS, UnsupportedDivisor, parse_divisor, parse_map

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class CheckFailed(Exception):
    def __init__(self, message: str, worst: Optional[dict] = None):
        super().__init__(message)
        self.worst = worst


class Context:
    def __init__(self, sub: str, cfg: ExperimentConfig, out_base: Path, threads: int, reproducible: bool):
        self.sub = sub
        self.cfg = cfg
        self.threads = threads
        self.reproducible = reproducible
        self.dir = out_base / f"{sub}-{cfg.config_hash()}"
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / "config.txt").write_text(cfg.dumps())

    def meta(self) -> dict:
        return {"config_hash": self.cfg.config_hash(), "seed": self.cfg.seed if self.cfg.seed is not None else "none",
                "subcommand": self.sub}

    def csv(self, name: str, rows, columns=None) -> Path:
        return emit_csv(rows, self.dir / name, columns, self.meta(), self.reproducible)

    def budget(self, seed: Optional[int] = None) -> Budget:
        step = StepPolicy(dt0=self.cfg.dt0)
        return Budget(self.cfg.n_paths, self.cfg.seed if seed is None else seed, step, self.threads)


# --------------------------------------------------------------- commands


def cmd_ode_check(ctx: Context) -> None:
    cfg = ctx.cfg
    m = parse_model(cfg.model).m
    rows, failures = [], []
    for label, kappa in cfg.kappas():
        sol = solve_G(kappa, cfg.ode_r_max, tol=cfg.ode_tol, description=label)
        rep = check_G_bounds(sol, m=m)
        sinh_err = float("nan")
        if abs(kappa(0.0) + 1.0) < 1e-15 and all(abs(kappa(t) + 1.0) < 1e-15 for t in sol.r_grid):
            sinh_err = float(np.max(np.abs(sol.G - np.sinh(sol.r_grid)) / np.maximum(1.0, np.sinh(sol.r_grid))))
            if sinh_err > 1e-8:
                failures.append({"kappa": label, "check": "G = sinh (relative)", "error": sinh_err})
        for row in rep.rows():
            rows.append({"kappa": label, **row, "sinh_error": sinh_err})
        if not rep.ok:
            failures.append({"kappa": label, **rep.worst})
        print(f"ode-check kappa={label}: {'ok' if rep.ok else 'FAIL'}")
    ctx.csv("ode_bounds.csv", rows)
    if failures:
        raise CheckFailed("comparison bounds violated", failures[0])


def _exit_time_oracle(model, r: float) -> float:
    val, _ = quad(lambda t: green_radial(model, t, r) * float(sphere_area(model, t)), 0.0, r, limit=200)
    return val


def cmd_bm_check(ctx: Context) -> None:
    cfg = ctx.cfg
    seed = cfg.require_seed()
    model = parse_model(cfg.model)
    m = model.m
    step = StepPolicy(dt0=cfg.dt0)
    rows, failures = [], []
    for i, r in enumerate(cfg.radii()):
        batch = run_paths(model, r, cfg.n_paths, derive_seed(seed, i), [], step, ctx.threads)
        est = batch.estimate("exit_time")
        oracle = _exit_time_oracle(model, r)
        bound = 2 * r * r / (2 * m - 1)
        z = (est.mean - oracle) / est.std_error
        ok_bound = est.mean <= bound + 3 * est.std_error
        ok_oracle = abs(z) <= 3 if model.kind is ModelKind.FLAT else True
        row = {"r": r, "mean": est.mean, "se": est.std_error, "oracle": oracle, "z": z, "lemma_bound": bound,
               "ok": ok_bound and ok_oracle, "abandoned": batch.abandoned}
        rows.append(row)
        print(f"bm-check exit r={r}: mean={est.mean:.5g} se={est.std_error:.2g} oracle={oracle:.5g} "
              f"bound={bound:.5g} {'ok' if row['ok'] else 'FAIL'}")
        if not row["ok"]:
            failures.append(row)
    ctx.csv("exit_times.csv", rows)
    if m == 1:
        hm_rows, hm_fail = harmonic_measure_check(model, cfg.radii()[0], cfg.bm_hm_paths, derive_seed(seed, 10_000),
                                                  cfg.bm_bins, step, ctx.threads)
        ctx.csv("harmonic_measure.csv", hm_rows)
        failures += hm_fail
    if failures:
        raise CheckFailed("Brownian-motion checks failed", failures[0])


def harmonic_measure_check(model, r, n_paths, seed, bins, step, threads):
    """Exit-angle histogram against the uniform law with a Bonferroni Poisson 99% allowance."""
    batch = run_paths(model, r, n_paths, seed, [], step, threads)
    ang = np.angle(batch.exit_points[:, 0])
    counts, edges = np.histogram(ang, bins=bins, range=(-np.pi, np.pi))
    n = int(counts.sum())
    p = 1.0 / bins
    cap = stats.poisson.ppf(1.0 - 0.01 / bins, n * p)
    allowance = cap / (n * p) - 1.0
    pval = float(stats.chisquare(counts).pvalue)
    rows, failures = [], []
    for i in range(bins):
        freq = counts[i] / n
        limit = (edges[i + 1] - edges[i]) / (2 * np.pi) * (1 + allowance)
        rows.append({"bin": i, "theta_lo": edges[i], "theta_hi": edges[i + 1], "count": int(counts[i]),
                     "frequency": freq, "limit": limit, "chi2_pvalue": pval, "ok": bool(freq <= limit)})
        if freq > limit:
            failures.append(rows[-1])
    print(f"bm-check harmonic measure r={r}: max freq={counts.max() / n:.5g} limit={p * (1 + allowance):.5g} "
          f"chi2 p={pval:.3g}")
    if pval <= 1e-3:
        failures.append({"check": "chi2 uniformity", "pvalue": pval})
    return rows, failures


def _triple(cfg: ExperimentConfig):
    model = parse_model(cfg.model)
    f = parse_map(cfg.map, model)
    D = parse_divisor(cfg.divisor)
    if D.m != model.m:
        raise ConfigError(f"divisor lives in P^{D.m} but the model has dimension {model.m}")
    L = LineBundleFS(cfg.degree, D.scale) if cfg.degree is not None else D.bundle()
    return model, f, D, L


def cmd_fmt(ctx: Context) -> None:
    cfg = ctx.cfg
    if cfg.method == "mc":
        cfg.require_seed()
    _, f, D, L = _triple(cfg)
    rep = fmt_report(f, D, L, cfg.r_grid(), cfg.method, ctx.budget(cfg.seed or 0), tol=cfg.fmt_tol)
    ctx.csv("fmt.csv", list(rep.rows()))
    s = rep.series
    emit_plot(s.r_grid, {"T": s.T, "m": s.m, "N": s.N, "T-m-N": rep.residual}, ctx.dir / "fmt.svg",
              title=f"FMT {cfg.map} / {cfg.divisor}", logx=cfg.r_spacing == "log")
    print(f"fmt: residual variation {rep.variation:.3g} (tol {rep.tol} + band {rep.band:.3g}) "
          f"{'ok' if rep.ok else 'FAIL'}")
    if not rep.ok:
        raise CheckFailed("FMT residual not bounded within tolerance", rep.worst)


def _load_constants(path: str) -> Optional[FrozenConstants]:
    if path and Path(path).is_file():
        return FrozenConstants.loads(Path(path).read_text())
    return None


def cmd_smt(ctx: Context) -> None:
    cfg = ctx.cfg
    if cfg.method == "mc":
        cfg.require_seed()
    _, f, D, L = _triple(cfg)
    scfg = SmtConfig(tuple(cfg.r_grid().tolist()), tuple(cfg.lambdas()), cfg.smt_delta, cfg.smt_exceptional,
                     cfg.smt_safety, cfg.method, ctx.budget(cfg.seed or 0))
    frozen = _load_constants(cfg.smt_constants)
    key = catalog_key(cfg.model, cfg.map, cfg.divisor)
    consts = None
    if frozen is not None and frozen.get(key) is not None:
        e = frozen.get(key)
        consts = (e["C"], e["C0"])
    else:
        print("smt: no frozen constants for this triple; fitting on the calibration half")
    rep = smt_report(f, D, L, scfg, consts)
    ctx.csv("smt.csv", list(rep.rows()), rep.columns)
    (ctx.dir / "smt_summary.json").write_text(json.dumps(rep.summary(), sort_keys=True, indent=2))
    s = rep.series
    emit_plot(s.r_grid, {"LHS": s.lhs, "RHS": rep.rhs}, ctx.dir / "smt.svg", shade=rep.violations,
              title=f"SMT {cfg.map} / {cfg.divisor}", logx=cfg.r_spacing == "log")
    print(f"smt: C={rep.C:.4g} C0={rep.C0:.4g} exceptional measure {rep.violation_measure:.3g} "
          f"of span {rep.span:.3g} {'ok' if rep.ok else 'FAIL'}")
    if not rep.ok:
        worst = max((r for r in rep.rows() if r["violation"]), key=lambda r: r["lhs"] - r["rhs"])
        raise CheckFailed("SMT inequality violated beyond the exceptional allowance", worst)


def cmd_defect(ctx: Context) -> None:
    cfg = ctx.cfg
    if cfg.method == "mc":
        cfg.require_seed()
    model, f, D, L = _triple(cfg)
    budget = ctx.budget(cfg.seed or 0)
    rep = defect_estimate(f, D, cfg.defect_r_max, cfg.method, budget)
    growth = growth_condition_check(model, f, L, rep.r_top, cfg.method, budget)
    rows = [{"component": j, "theta": t, "theta_err": e, "bound": ""}
            for j, (t, e) in enumerate(zip(rep.per_component, rep.per_component_err))]
    rows.append({"component": "sum", "theta": rep.summed, "theta_err": float(np.sqrt(np.sum(np.square(rep.per_component_err)))),
                 "bound": rep.summed_bound if rep.summed_bound is not None else ""})
    rows.append({"component": "D", "theta": rep.total, "theta_err": rep.total_err, "bound": rep.total_bound})
    rows.append({"component": "growth_ratio", "theta": growth.ratio, "theta_err": 0.0, "bound": int(growth.applicable)})
    ctx.csv("defect.csv", rows, ["component", "theta", "theta_err", "bound"])
    print(f"defect: per component {np.round(rep.per_component, 6).tolist()} sum {rep.summed:.6g} "
          f"(bound {rep.summed_bound}); Theta(D) {rep.total:.6g} (bound {rep.total_bound:.6g}); "
          f"growth condition {'holds' if growth.applicable else 'fails'} (ratio {growth.ratio:.3g})")
    if growth.applicable:
        tol = 1e-9
        if rep.total > rep.total_bound + 3 * rep.total_err + tol:
            raise CheckFailed("defect exceeds the bound", rows[-2])
        if rep.summed_bound is not None and rep.summed > rep.summed_bound + 3 * rows[-3]["theta_err"] + tol:
            raise CheckFailed("summed defect exceeds the bound", rows[-3])


def calibrate_catalog(lambdas=(0.5, 0.1, 0.02), safety: float = 2.0, exceptional: float = 0.05,
                      entries=SMT_CATALOG, budget: Budget = Budget()):
    """Fit and freeze SMT constants for each catalog triple; returns ``(constants, rows, reports)``."""
    frozen = FrozenConstants()
    rows, reports = [], {}
    lang_cache = {}
    for key, f, D, L, method, rg in catalog_triples(entries):
        div = key.split("|")[2]
        if div not in lang_cache:
            lang_cache[div] = lang_bound_probe(D, L, lambdas)
        probe = lang_cache[div]
        rep = smt_report(f, D, L, SmtConfig(tuple(rg.tolist()), tuple(lambdas), 0.1, exceptional, safety, method, budget))
        frozen.set(key, rep.C, rep.C0, probe.b_hat)
        reports[key] = rep
        rows.append({"triple": key, "C": rep.C, "C0": rep.C0, "b_hat": probe.b_hat, "lang_spread": probe.spread,
                     "lang_stable": probe.stable, "validation_ok": rep.ok, "sharpness": rep.sharpness})
    return frozen, rows, reports


def cmd_calibrate(ctx: Context) -> None:
    cfg = ctx.cfg
    frozen, rows, reports = calibrate_catalog(tuple(cfg.lambdas()), cfg.smt_safety, cfg.smt_exceptional,
                                              budget=ctx.budget(cfg.seed or 0))
    (ctx.dir / "constants.json").write_text(frozen.dumps())
    ctx.csv("calibrate.csv", rows)
    for row in rows:
        print(f"calibrate {row['triple']}: C={row['C']:.4g} C0={row['C0']:.4g} b^={row['b_hat']:.4g} "
              f"(lang spread {row['lang_spread']:.3g}) validation {'ok' if row['validation_ok'] else 'FAIL'}")
    print(f"constants written to {ctx.dir / 'constants.json'}")
    bad = [r for r in rows if not r["validation_ok"]]
    if bad:
        raise CheckFailed("calibrated constants fail on the validation half", bad[0])


COMMANDS = {
    "ode-check": cmd_ode_check,
    "bm-check": cmd_bm_check,
    "fmt": cmd_fmt,
    "smt": cmd_smt,
    "defect": cmd_defect,
    "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value configuration file")
    common.add_argument("--out", type=Path, help="output directory (NEVLAB_OUT overrides)")
    common.add_argument("--seed", type=int, help="64-bit seed (overrides mc.seed)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for path simulation")
    common.add_argument("--reproducible", action="store_true", help="omit timestamps from outputs")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser = argparse.ArgumentParser(prog="nevlab", description=__doc__.splitlines()[0], parents=[common])
    subs = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        subs.add_parser(name, parents=[common])
    return parser


def load_config(path: Optional[Path], overrides: list[str], seed: Optional[int]) -> ExperimentConfig:
    text = path.read_text() if path is not None else ""
    if overrides:
        text += "\n" + "\n".join(overrides)
    cfg = ExperimentConfig.loads(text)
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
        cfg = ExperimentConfig.loads(cfg.dumps())  # re-validate
    return cfg


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.set, args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(os.environ.get("NEVLAB_OUT") or args.out or "nevlab_out")
        ctx = Context(args.command, cfg, out, args.threads, args.reproducible)
        COMMANDS[args.command](ctx)
    except (ConfigError, UnsupportedDivisor, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        print(f"FAILED: {exc}", file=sys.stderr)
        if exc.worst is not None:
            print(f"worst row: {exc.worst}", file=sys.stderr)
        return EXIT_ASSERT
    except (SimulationError, ZeroFindingError, ODEConvergenceError, IndeterminacyError, DomainError,
            FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # parse errors of model / map / divisor ids surface as ValueError
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"outputs in {ctx.dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
