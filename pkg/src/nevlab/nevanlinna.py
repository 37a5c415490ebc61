"""Nevanlinna functionals T_f, m_f, N_f, N^[1]_f, the Ricci term, and FMT reports.

Two routes are provided wherever the domain allows it:

* ``quadrature``: Green-weighted volume integrals in chart polar coordinates
  and chart-sphere averages (the shipped models are rotationally symmetric, so
  the Green function is radial and harmonic measure on S_o(r) is uniform);
* ``mc``: Brownian occupation / hitting estimators from :mod:`nevlab.stochastic`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import sympy as sp
from scipy.integrate import quad

from .comparison import green_radial
from .geometry import (
    ManifoldModel,
    ModelKind,
    chart_radius_of,
    distance_to_base,
    metric_at,
    radial_distance,
    kappa_profile,
    scalar_curvature,
    unit_sphere_volume,
)
from .stochastic import FunctionalSpec, McEstimate, StepPolicy, derive_seed, run_paths
from .target import (
    HoloMap,
    LineBundleFS,
    SncDivisor,
    pullback_chern_density,
    section_norm,
)

__all__ = [
    "Budget",
    "Estimate",
    "NevanlinnaSeries",
    "FmtReport",
    "sphere_average",
    "characteristic_T",
    "proximity_m",
    "counting_N",
    "find_zeros",
    "ricci_term_T",
    "fmt_report",
    "log_inv_section_norm",
]


@dataclass(frozen=True)
class Budget:
    n_paths: int = 10_000
    seed: int = 0
    step: StepPolicy = StepPolicy()
    threads: int = 1
    rtol: float = 1e-9


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    method: str
    n_paths: int = 0

    @classmethod
    def from_mc(cls, est: McEstimate) -> "Estimate":
        return cls(est.mean, est.std_error, "mc", est.n_paths)


# ------------------------------------------------------------ quadrature


def _sphere_nodes(m: int, s: float, n: int):
    """Nodes and weights (summing to 1) for the average over |z| = s in C^m."""
    if m == 1:
        th = 2.0 * np.pi * np.arange(n) / n
        return (s * np.exp(1j * th))[:, None], np.full(n, 1.0 / n)
    if m == 2:
        # Hopf coordinates: |z1| = s cos(eta), |z2| = s sin(eta); weight cos*sin
        x, w = np.polynomial.legendre.leggauss(max(8, n // 4))
        eta = 0.25 * np.pi * (x + 1.0)
        weta = 0.25 * np.pi * w * np.cos(eta) * np.sin(eta)
        nph = n
        ph = 2.0 * np.pi * np.arange(nph) / nph
        E, P1, P2 = np.meshgrid(eta, ph, ph, indexing="ij")
        W = np.broadcast_to(weta[:, None, None], E.shape) / nph ** 2
        z = np.stack([s * np.cos(E) * np.exp(1j * P1), s * np.sin(E) * np.exp(1j * P2)], axis=-1).reshape(-1, 2)
        W = W.reshape(-1)
        return z, W / W.sum()
    raise NotImplementedError("sphere quadrature is implemented for m <= 2")


def sphere_average(fn, m: int, s: float, n0: int = 128, rtol: float = 1e-10, n_max: int = 1 << 16) -> float:
    """Average of ``fn`` over the Euclidean sphere of radius s in C^m.

    The resolution doubles until successive values agree to ``rtol``.
    """
    if s == 0:
        return float(np.asarray(fn(np.zeros((1, m), dtype=complex)))[0])
    n = n0 if m == 1 else 16
    cap = n_max if m == 1 else 128
    z, w = _sphere_nodes(m, s, n)
    prev = float(np.dot(w, fn(z)))
    while n < cap:
        n *= 2
        z, w = _sphere_nodes(m, s, n)
        val = float(np.dot(w, fn(z)))
        if abs(val - prev) <= rtol * max(1.0, abs(val)):
            return val
        prev = val
    return prev


def _green_volume_integral(model: ManifoldModel, fn, r: float, rtol: float, points=None) -> float:
    """``int_{B_o(r)} g_r(o, x) fn(x) dV`` in chart polar coordinates.

    Every shipped model is rotationally symmetric about o, so geodesic spheres
    are chart spheres, ``g_r`` is radial and ``det G`` depends on |z| only.
    """
    m = model.m
    rho = chart_radius_of(model, r)
    omega = unit_sphere_volume(2 * m)

    def radial(s):
        if s <= 0:
            return 0.0
        e1 = np.zeros((1, m), dtype=complex)
        e1[0, 0] = s
        t = min(float(radial_distance(model, s)), r)
        if t >= r:
            return 0.0
        vol = float(np.real(np.linalg.det(metric_at(model, e1)[0])))
        g = green_radial(model, t, r)
        return g * vol * omega * s ** (2 * m - 1) * sphere_average(fn, m, s, rtol=rtol * 0.1)

    val, _ = quad(radial, 0.0, rho, epsrel=rtol, epsabs=0.0, limit=400, points=points)
    return val


# --------------------------------------------------------------- functionals


def characteristic_T(
    f: HoloMap,
    L: LineBundleFS,
    r: float,
    method: str = "quadrature",
    budget: Budget = Budget(),
) -> Estimate:
    """Characteristic function ``T_f(r, L) = (1/2) int g_r e_{f*c1(L)} dV``."""
    model = f.model
    if method == "quadrature":
        val = 0.5 * _green_volume_integral(model, lambda z: pullback_chern_density(f, L, z), r, budget.rtol)
        return Estimate(val, budget.rtol * max(1.0, abs(val)) * 10, "quadrature")
    if method == "mc":
        spec = FunctionalSpec("T", lambda z: 0.5 * pullback_chern_density(f, L, z))
        batch = run_paths(model, r, budget.n_paths, budget.seed, [spec], budget.step, budget.threads)
        return Estimate.from_mc(batch.estimate("T"))
    raise ValueError(f"unknown method {method!r}")


def log_inv_section_norm(f: HoloMap, D: SncDivisor, z: np.ndarray) -> np.ndarray:
    """``log 1 / ||s_D o f(z)||`` (sum over components)."""
    w = f(z)
    out = np.zeros(len(w))
    for j in range(D.q):
        out -= np.log(section_norm(D, j, w))
    return out


def _check_origin(f: HoloMap, D: SncDivisor) -> bool:
    w0 = f(np.zeros((1, f.m), dtype=complex))
    return all(section_norm(D, j, w0)[0] > 1e-12 for j in range(D.q))


def proximity_m(
    f: HoloMap,
    D: SncDivisor,
    r: float,
    method: str = "quadrature",
    budget: Budget = Budget(),
) -> Estimate:
    """Proximity function: harmonic-measure average of ``log 1/||s_D o f||`` on S_o(r)."""
    if not _check_origin(f, D):
        warnings.warn("f(o) lies on Supp D; FMT does not apply", stacklevel=2)
    model = f.model
    if method == "quadrature":
        rho = chart_radius_of(model, r)
        val = sphere_average(lambda z: log_inv_section_norm(f, D, z), f.m, rho, rtol=budget.rtol)
        return Estimate(val, budget.rtol * max(1.0, abs(val)) * 10, "quadrature")
    if method == "mc":
        spec = FunctionalSpec("m", lambda z: log_inv_section_norm(f, D, z), kind="hitting")
        batch = run_paths(model, r, budget.n_paths, budget.seed, [spec], budget.step, budget.threads)
        return Estimate.from_mc(batch.estimate("m"))
    raise ValueError(f"unknown method {method!r}")


# ----------------------------------------------------------- zero finding


class ZeroFindingError(RuntimeError):
    pass


def _section_pullback(f: HoloMap, D: SncDivisor, j: int):
    poly = D.components[j].poly

    def g(z):
        z = np.asarray(z, dtype=complex).reshape(-1, 1)
        return poly(f.F(z))

    def dg(z):
        z = np.asarray(z, dtype=complex).reshape(-1, 1)
        return np.sum(poly.grad(f.F(z)) * f.dF(z)[:, :, 0], axis=1)

    return g, dg


def _winding(g, a: complex, b: complex, n0: int = 64, n_max: int = 1 << 15) -> float:
    """Total change of arg g along the segment [a, b], in turns."""
    n = n0
    while True:
        t = np.linspace(0.0, 1.0, n + 1)
        with np.errstate(all="ignore"):
            vals = g(a + (b - a) * t)
        if np.any(np.abs(vals) < 1e-300) or not np.all(np.isfinite(vals)):
            raise ZeroFindingError("zero on contour")
        dphi = np.angle(vals[1:] / vals[:-1])
        if np.max(np.abs(dphi)) < 0.5 or n >= n_max:
            if n >= n_max and np.max(np.abs(dphi)) >= 0.5:
                raise ZeroFindingError("contour phase not resolved")
            return float(np.sum(dphi) / (2 * np.pi))
        n *= 2


def _box_count(g, x0, x1, y0, y1) -> int:
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]
    total = sum(_winding(g, corners[i], corners[(i + 1) % 4]) for i in range(4))
    return int(round(total))


def _newton(g, dg, z: complex, mult: int, box, iters: int = 60) -> Optional[complex]:
    x0, x1, y0, y1 = box
    pad = 0.1 * (x1 - x0)
    with np.errstate(all="ignore"):
        for _ in range(iters):
            gv, dv = g(np.array([z]))[0], dg(np.array([z]))[0]
            if not (np.isfinite(gv) and np.isfinite(dv)) or dv == 0:
                return None if gv != 0 else z
            dz = mult * gv / dv
            z = z - dz
            if not (x0 - pad <= z.real <= x1 + pad and y0 - pad <= z.imag <= y1 + pad):
                return None
            if abs(dz) <= 1e-14 * max(1.0, abs(z)):
                return complex(z)
    return complex(z)


_SPLITS = (0.5, 0.4637, 0.5391, 0.3819, 0.6181)


def find_zeros(g, dg, R: float, min_size: float = 1e-7) -> list[tuple[complex, int]]:
    """Zeros (with multiplicity) of a holomorphic ``g`` in a square containing |Re|, |Im| <= R.

    Argument-principle bisection: boxes are split (at a perturbed point when a
    zero sits on a cut) while they contain zeros; a single-zero box is finished
    by Newton iteration, and a multi-zero box below ``min_size`` is reported as
    one zero of that multiplicity.
    """
    scale = max(1.0, R)
    root = None
    for margin in (1.37e-6, 2.9e-5, 1.1e-3, 0.013, 0.057, 0.13, 0.29):
        Rk = R * (1.0 + margin) + 1e-9
        box = (-Rk, Rk * 1.000001, -Rk * 1.0000007, Rk)
        try:
            root = (box, _box_count(g, *box))
            break
        except ZeroFindingError:
            continue
    if root is None:
        raise ZeroFindingError("could not place the enclosing square")
    out: list[tuple[complex, int]] = []
    stack = [root] if root[1] > 0 else []
    while stack:
        box, n = stack.pop()
        x0, x1, y0, y1 = box
        size = x1 - x0
        centre = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
        if n == 1:
            z = _newton(g, dg, centre, 1, box)
            if z is not None and x0 <= z.real <= x1 and y0 <= z.imag <= y1:
                out.append((z, 1))
                continue
        if size < min_size * scale:
            z = _newton(g, dg, centre, n, box)
            out.append((centre if z is None else z, n))
            continue
        for frac in _SPLITS:
            xm, ym = x0 + frac * (x1 - x0), y0 + (1.0 - frac) * (y1 - y0) if frac != 0.5 else 0.5 * (y0 + y1)
            kids = [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]
            try:
                counts = [_box_count(g, *kb) for kb in kids]
            except ZeroFindingError:
                continue
            if sum(counts) == n and min(counts) >= 0:
                stack.extend((kb, c) for kb, c in zip(kids, counts) if c > 0)
                break
        else:
            raise ZeroFindingError(f"could not split box {box} holding {n} zeros")
    return out


def _sqf_lift_m2(f: HoloMap, D: SncDivisor, j: int, truncated: bool):
    poly = D.components[j].poly
    expr = sp.expand(poly.to_sympy(f.sym))
    if truncated:
        expr = sp.sqf_part(sp.Poly(expr, *f.symbols)).as_expr()
    fn = sp.lambdify([f.symbols], expr, "numpy")

    def h(z):
        return np.broadcast_to(np.asarray(fn([z[:, i] for i in range(z.shape[1])]), dtype=complex), z.shape[:1])

    return h


def counting_N(
    f: HoloMap,
    D: SncDivisor,
    r: float,
    truncation: Optional[int] = None,
    eps_grid: Sequence[float] = (1e-3, 1e-4, 1e-5),
    rtol: float = 1e-9,
) -> float:
    """Counting function N_f(r, D) or, with ``truncation=1``, N^[1]_f(r, D).

    m = 1: zeros of each ``s_j o F`` in B_o(r) by argument-principle bisection;
    ``N = sum mult * pi * g_r(o, z_i)`` (``= sum mult * log(r/|z_i|)`` on flat C)
    plus ``ord_o * log r`` for a zero at the origin.

    m >= 2: the smoothed Laplacian identity
    ``N = lim (1/4) int g_r Delta log(|h|^2 + eps^2) dV``, evaluated through
    the sphere mean, Richardson-extrapolated over ``eps_grid``. Truncation uses
    the square-free part of ``s_j o F``.
    """
    if truncation not in (None, 1):
        raise ValueError("truncation must be None or 1")
    model = f.model
    if f.m == 1:
        rho = chart_radius_of(model, r)
        total = 0.0
        for j in range(D.q):
            g, dg = _section_pullback(f, D, j)
            zeros = find_zeros(g, dg, rho)
            for z, mult in zeros:
                az = abs(z)
                if az >= rho:
                    continue
                if abs(az - rho) < 1e-9 * rho:
                    warnings.warn("zero on the boundary sphere; radius perturbed by 1e-9", stacklevel=2)
                    continue
                w = 1 if truncation == 1 else mult
                if az < 1e-10:
                    total += w * math.log(r)
                else:
                    total += w * math.pi * green_radial(model, float(distance_to_base(model, [z])), r)
        return total
    rho = chart_radius_of(model, r)
    origin = np.zeros((1, f.m), dtype=complex)
    total = 0.0
    for j in range(D.q):
        h = _sqf_lift_m2(f, D, j, truncation == 1)
        h0 = abs(h(origin)[0])
        if h0 < 1e-12:
            raise ValueError("f(o) lies on Supp D; m >= 2 counting needs f(o) outside D")
        vals = []
        for eps in eps_grid:
            avg = sphere_average(lambda z: np.log(np.abs(h(z)) ** 2 + eps ** 2), f.m, rho, rtol=rtol)
            vals.append(0.5 * (avg - math.log(h0 ** 2 + eps ** 2)))
        # error ~ eps^2: Richardson on the last two levels
        ratio = (eps_grid[-2] / eps_grid[-1]) ** 2
        total += vals[-1] + (vals[-1] - vals[-2]) / (ratio - 1.0)
    return total


def ricci_term_T(model: ManifoldModel, r: float, method: str = "mc", budget: Budget = Budget()):
    """``T(r, R_M) = E[int_0^tau_r s_M dt]`` with its lower bound ``2 m kappa(r) r^2``.

    Returns ``(estimate, bound, holds)`` where ``holds`` allows 3 standard errors.
    """
    bound = 2 * model.m * kappa_profile(model, r) * r * r
    s = scalar_curvature(model, np.zeros(model.m))
    if method == "mc":
        spec = FunctionalSpec("ricci", lambda z: np.full(len(z), s))
        batch = run_paths(model, r, budget.n_paths, budget.seed, [spec], budget.step, budget.threads)
        est = Estimate.from_mc(batch.estimate("ricci"))
    elif method == "quadrature":
        from .geometry import sphere_area

        if s == 0.0:
            est = Estimate(0.0, 0.0, "quadrature")
        else:
            et, _ = quad(lambda t: green_radial(model, t, r) * float(sphere_area(model, t)), 0.0, r, limit=200)
            est = Estimate(s * et, 1e-9 * abs(s * et), "quadrature")
    else:
        raise ValueError(f"unknown method {method!r}")
    return est, bound, est.value >= bound - 3.0 * est.error


# ------------------------------------------------------------------ reports


@dataclass
class NevanlinnaSeries:
    r_grid: np.ndarray
    T: np.ndarray
    T_se: np.ndarray
    m: np.ndarray
    m_se: np.ndarray
    N: np.ndarray
    N1: np.ndarray
    ricci: np.ndarray
    ricci_se: np.ndarray
    method: str

    columns = ("r", "T", "T_se", "m", "m_se", "N", "N1", "ricci", "ricci_se", "method")

    def rows(self):
        for i, r in enumerate(self.r_grid):
            yield {
                "r": r, "T": self.T[i], "T_se": self.T_se[i], "m": self.m[i], "m_se": self.m_se[i],
                "N": self.N[i], "N1": self.N1[i], "ricci": self.ricci[i], "ricci_se": self.ricci_se[i],
                "method": self.method,
            }


@dataclass
class FmtReport:
    series: NevanlinnaSeries
    residual: np.ndarray
    residual_err: np.ndarray
    variation: float
    band: float
    tol: float
    ok: bool
    worst: dict = field(default_factory=dict)

    def rows(self):
        for row, res, err in zip(self.series.rows(), self.residual, self.residual_err):
            yield {**row, "residual": res, "residual_err": err}


def nevanlinna_series(
    f: HoloMap,
    D: SncDivisor,
    L: LineBundleFS,
    r_grid: Sequence[float],
    method: str = "quadrature",
    budget: Budget = Budget(),
) -> NevanlinnaSeries:
    r_grid = np.asarray(r_grid, dtype=float)
    k = len(r_grid)
    cols = {name: np.zeros(k) for name in ("T", "T_se", "m", "m_se", "N", "N1", "ricci", "ricci_se")}
    model = f.model
    s_M = scalar_curvature(model, np.zeros(model.m))
    for i, r in enumerate(r_grid):
        cols["N"][i] = counting_N(f, D, r)
        cols["N1"][i] = counting_N(f, D, r, truncation=1)
        if method == "quadrature":
            T = characteristic_T(f, L, r, "quadrature", budget)
            mm = proximity_m(f, D, r, "quadrature", budget)
            ric, _, _ = ricci_term_T(model, r, "quadrature", budget)
            cols["T"][i], cols["T_se"][i] = T.value, T.error
            cols["m"][i], cols["m_se"][i] = mm.value, mm.error
            cols["ricci"][i], cols["ricci_se"][i] = ric.value, ric.error
        elif method == "mc":
            specs = [
                FunctionalSpec("T", lambda z: 0.5 * pullback_chern_density(f, L, z)),
                FunctionalSpec("ricci", lambda z: np.full(len(z), s_M)),
                FunctionalSpec("m", lambda z: log_inv_section_norm(f, D, z), kind="hitting"),
            ]
            seed = derive_seed(budget.seed, i)
            batch = run_paths(model, r, budget.n_paths, seed, specs, budget.step, budget.threads)
            for name in ("T", "m", "ricci"):
                e = batch.estimate(name)
                cols[name][i], cols[name + "_se"][i] = e.mean, e.std_error
        else:
            raise ValueError(f"unknown method {method!r}")
    return NevanlinnaSeries(r_grid, method=method, **cols)


def fmt_report(
    f: HoloMap,
    D: SncDivisor,
    L: LineBundleFS,
    r_grid: Sequence[float],
    method: str = "quadrature",
    budget: Budget = Budget(),
    tol: float = 0.1,
) -> FmtReport:
    """First Main Theorem check: ``T - m - N`` stays bounded over the grid.

    Passes when ``max - min`` of the residual is at most ``tol`` plus the
    combined 3-SE band of the two extreme residuals.
    """
    if not _check_origin(f, D):
        raise ValueError("FMT needs f(o) outside Supp D")
    series = nevanlinna_series(f, D, L, r_grid, method, budget)
    residual = series.T - series.m - series.N
    err = np.sqrt(series.T_se ** 2 + series.m_se ** 2)
    hi, lo = int(np.argmax(residual)), int(np.argmin(residual))
    variation = float(residual[hi] - residual[lo])
    band = float(3.0 * math.hypot(err[hi], err[lo]))
    ok = variation <= tol + band
    worst = {"r_max_residual": float(series.r_grid[hi]), "r_min_residual": float(series.r_grid[lo]), "variation": variation}
    return FmtReport(series, residual, err, variation, band, tol, ok, worst)
