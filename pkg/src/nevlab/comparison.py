"""Curvature comparison function G, Green functions and growth lemmas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad, solve_ivp

from .geometry import (
    ManifoldModel,
    ModelKind,
    distance_to_base,
    kappa_profile,
    sphere_area,
    unit_sphere_volume,
)

__all__ = [
    "ComparisonSolution",
    "GBoundsReport",
    "GrowthFunctionProbe",
    "CalculusF",
    "solve_G",
    "integral_G_power",
    "check_G_bounds",
    "green_euclidean",
    "green_radial",
    "harmonic_density_bound",
    "green_comparison_probe",
    "borel_check",
    "calculus_F",
    "log_plus",
]


def log_plus(x):
    """``max(log x, 0)``, with ``log_plus(0) = 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(x > 1.0, np.log(np.where(x > 1.0, x, 1.0)), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class ComparisonSolution:
    r_grid: np.ndarray
    G: np.ndarray
    G_prime: np.ndarray
    kappa_used: str
    kappa: Callable[[float], float] = field(repr=False)
    dense: Callable = field(repr=False)
    tol: float = 1e-10

    def __call__(self, t):
        return self.dense(np.asarray(t, dtype=float))[0]


class ODEConvergenceError(RuntimeError):
    pass


def solve_G(
    kappa: Callable[[float], float],
    r_max: float,
    tol: float = 1e-10,
    r_grid: Optional[Sequence[float]] = None,
    n_nodes: int = 201,
    description: str = "",
    max_steps: int = 1_000_000,
) -> ComparisonSolution:
    """Solve ``G'' + kappa(t) G = 0``, ``G(0) = 0``, ``G'(0) = 1`` on [0, r_max].

    Uses the embedded 8(5,3) Dormand-Prince pair with dense output; ``tol`` is
    both the relative and absolute local error target. Raises ``ValueError``
    if kappa is positive anywhere on the node grid.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    grid = np.linspace(0.0, r_max, n_nodes) if r_grid is None else np.asarray(r_grid, dtype=float)
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("r_grid must start at 0 and be strictly increasing")
    probe = np.linspace(0.0, r_max, 4 * len(grid) + 1)
    kv = np.array([kappa(t) for t in probe])
    if np.any(kv > 0):
        raise ValueError(f"kappa must be non-positive; kappa({probe[np.argmax(kv)]:.4g}) = {kv.max():.4g}")

    def rhs(t, y):
        return [y[1], -kappa(t) * y[0]]

    sol = solve_ivp(
        rhs,
        (0.0, float(grid[-1])),
        [0.0, 1.0],
        method="DOP853",
        rtol=tol,
        atol=tol,
        dense_output=True,
        t_eval=grid,
    )
    if not sol.success or sol.nfev > max_steps:
        raise ODEConvergenceError(sol.message)
    return ComparisonSolution(
        r_grid=grid,
        G=sol.y[0].copy(),
        G_prime=sol.y[1].copy(),
        kappa_used=description or getattr(kappa, "__name__", "kappa"),
        kappa=kappa,
        dense=sol.sol,
        tol=tol,
    )


def integral_G_power(sol: ComparisonSolution, a: float, b: float, m: int, n: int = 2048) -> tuple[float, float]:
    """``int_a^b G^{1-2m} dt`` by trapezoid on the dense output.

    Returns ``(value, error_estimate)``; the estimate is the Richardson
    difference between n and n/2 panels.
    """
    if a <= 0:
        raise ValueError("lower limit must be positive (G^{1-2m} has a pole at 0)")
    if b <= a:
        return 0.0, 0.0
    t = np.linspace(a, b, n + 1)
    y = sol(t) ** (1 - 2 * m)
    fine = np.trapezoid(y, t)
    coarse = np.trapezoid(y[::2], t[::2])
    err = abs(fine - coarse) / 3.0
    return float(fine + (fine - coarse) / 3.0), float(err)


def _cumulative_G_power(sol: ComparisonSolution, nodes: np.ndarray, m: int, per: int = 64):
    """``int_1^{node} G^{1-2m}`` at every node (nodes >= 1, increasing) in one sweep."""
    knots = np.concatenate([[1.0], nodes[nodes > 1.0]])
    if len(knots) == 1:
        return np.zeros(len(nodes)), np.zeros(len(nodes))
    t = np.concatenate([np.linspace(a, b, per + 1)[:-1] for a, b in zip(knots[:-1], knots[1:])] + [knots[-1:]])
    y = sol(t) ** (1 - 2 * m)
    fine = np.concatenate([[0.0], cumulative_trapezoid(y, t)])[::per]
    coarse = np.concatenate([[0.0], cumulative_trapezoid(y[::2], t[::2])])[:: per // 2]
    val = fine + (fine - coarse) / 3.0
    err = np.abs(fine - coarse) / 3.0
    out_v, out_e = np.zeros(len(nodes)), np.zeros(len(nodes))
    out_v[nodes > 1.0], out_e[nodes > 1.0] = val[1:], err[1:]
    return out_v, out_e


@dataclass
class GBoundsReport:
    ok: bool
    r: np.ndarray
    G: np.ndarray
    G_prime: np.ndarray
    slack_lower: np.ndarray       # G(r) - r
    slack_integral: np.ndarray    # log r - int_1^r G^{1-2m}   (nan for r < 1)
    slack_upper: np.ndarray       # r exp(r sqrt(-kappa(r))) - G(r)
    worst: Optional[dict] = None
    m: int = 1

    def rows(self):
        for i in range(len(self.r)):
            yield {
                "r": self.r[i],
                "G": self.G[i],
                "G_prime": self.G_prime[i],
                "slack_lower": self.slack_lower[i],
                "slack_integral": self.slack_integral[i],
                "slack_upper": self.slack_upper[i],
            }


def check_G_bounds(sol: ComparisonSolution, m: int = 1, rel_tol: Optional[float] = None) -> GBoundsReport:
    """Check ``G >= r``, ``int_1^r G^{1-2m} <= log r`` and ``G <= r exp(r sqrt(-kappa(r)))``."""
    tol = rel_tol if rel_tol is not None else max(100 * sol.tol, 1e-12)
    r = sol.r_grid
    G = sol.G
    slack_lower = G - r
    slack_upper = np.array([ri * math.exp(ri * math.sqrt(max(-sol.kappa(ri), 0.0))) for ri in r]) - G
    slack_int = np.full_like(r, np.nan)
    int_err = np.zeros_like(r)
    sel = r >= 1.0
    if sel.any():
        val, err = _cumulative_G_power(sol, r[sel], m)
        slack_int[sel] = np.log(r[sel]) - val
        int_err[sel] = err
    scale = tol * (1.0 + np.abs(G))
    checks = {
        "G >= r": slack_lower + scale,
        "int_1^r G^(1-2m) <= log r": np.where(np.isnan(slack_int), np.inf, slack_int + int_err + tol),
        "G <= r exp(r sqrt(-kappa))": slack_upper + scale,
    }
    worst = None
    ok = True
    for name, s in checks.items():
        i = int(np.argmin(s))
        if s[i] < 0:
            ok = False
            if worst is None or s[i] < worst["slack"]:
                worst = {"bound": name, "r": float(r[i]), "slack": float(s[i])}
    return GBoundsReport(ok, r, G, sol.G_prime, slack_lower, slack_int, slack_upper, worst, m)


def green_euclidean(m: int, r: float, s: float) -> float:
    """Dirichlet Green function of Delta/2 on the flat ball B_o(r), at |z| = s."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if s <= 0:
        raise ValueError("s = 0 is the pole of the Green function")
    if s > r:
        raise ValueError("s must not exceed r")
    if m == 1:
        return math.log(r / s) / math.pi
    omega = unit_sphere_volume(2 * m)
    return (s ** (2 - 2 * m) - r ** (2 - 2 * m)) / ((m - 1) * omega)


def green_radial(model: ManifoldModel, s: float, r: float) -> float:
    """Green function of Delta_M/2 on B_o(r) at geodesic distance s from o.

    All shipped models are rotationally symmetric about o, so
    ``g_r(o, x) = 2 int_s^r dt / A(t)`` with A the geodesic-sphere area.
    """
    if s <= 0:
        raise ValueError("s = 0 is the pole of the Green function")
    if s > r:
        raise ValueError("s must not exceed r")
    if model.kind is ModelKind.FLAT and model.curvature_scale == 1.0:
        return green_euclidean(model.m, r, s)
    val, _ = quad(lambda t: 2.0 / float(sphere_area(model, t)), s, r, epsabs=1e-13, epsrel=1e-11, limit=200)
    return val


def harmonic_density_bound(m: int, r: float) -> float:
    """Upper bound ``1 / (omega_{2m-1} r^{2m-1})`` on the harmonic-measure density."""
    if r <= 0:
        raise ValueError("r must be positive")
    return 1.0 / (unit_sphere_volume(2 * m) * r ** (2 * m - 1))


def green_comparison_probe(
    model: ManifoldModel,
    eta: float,
    r: float,
    sample_points,
    method: str = "exact",
    n_paths: int = 20000,
    seed: int = 0,
) -> float:
    """Empirical best constant in the Green-function comparison lemma.

    ``min_x g_r(o,x) int_eta^r G^{1-2m} / int_{r(x)}^r G^{1-2m}`` over the
    sample points. ``method="exact"`` uses the radial Green function,
    ``method="mc"`` estimates it from Brownian occupation of small balls.
    """
    if not r > eta > 0:
        raise ValueError("need r > eta > 0")
    pts = np.atleast_2d(np.asarray(sample_points, dtype=complex))
    dist = np.atleast_1d(distance_to_base(model, pts))
    if np.any(dist <= eta):
        raise ValueError("sample point inside the closed ball B_o(eta)")
    if np.any(dist >= r):
        raise ValueError("sample point outside B_o(r)")
    k = kappa_profile(model, r)
    sol = solve_G(lambda t: k, r, tol=1e-11, description=f"kappa={k}")
    m = model.m
    full, _ = integral_G_power(sol, eta, r, m)
    best = math.inf
    for x, d in zip(pts, dist):
        if method == "exact":
            g = green_radial(model, float(d), r)
        elif method == "mc":
            from .stochastic import estimate_green_at

            g = estimate_green_at(model, x, r, n_paths=n_paths, seed=seed).mean
        else:
            raise ValueError(f"unknown method {method!r}")
        part, _ = integral_G_power(sol, float(d), r, m)
        best = min(best, g * full / part)
    return best


@dataclass
class GrowthFunctionProbe:
    r_grid: np.ndarray
    T_values: np.ndarray
    delta: float

    def __post_init__(self):
        self.r_grid = np.asarray(self.r_grid, dtype=float)
        self.T_values = np.asarray(self.T_values, dtype=float)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if np.any(np.diff(self.r_grid) <= 0):
            raise ValueError("r_grid must be strictly increasing")
        if np.any(self.T_values <= 0):
            raise ValueError("T must be strictly positive")


def borel_check(probe: GrowthFunctionProbe) -> float:
    """Lebesgue measure of grid cells where ``T' > T (log+ T)^{1+delta}``.

    T' on a cell is the forward difference (secant slope). Because T and the
    bound are nondecreasing, a cell is flagged only when the secant exceeds
    the bound at the right endpoint, which the mean value theorem makes a
    sufficient condition for a genuine violation somewhere in the cell.
    """
    T = probe.T_values
    if np.any(np.diff(T) < 0):
        raise ValueError("T must be nondecreasing")
    h = np.diff(probe.r_grid)
    slope = np.diff(T) / h
    bound = T[1:] * log_plus(T[1:]) ** (1.0 + probe.delta)
    bad = slope > bound * (1.0 + 1e-12)
    return float(np.sum(h[bad]))


@dataclass(frozen=True)
class CalculusF:
    value: float
    log_scale: float  # log+ log+ Gamma_hat + log+(r sqrt(-kappa)) + log+ log r


def calculus_F(gamma_hat: float, kappa_r: float, r: float, m: int, delta: float) -> CalculusF:
    """The Calculus-Lemma function F(Gamma_hat, kappa, delta) at radius r.

    ``log_scale`` is the quantity the logarithmic estimate of F is stated in
    terms of; callers fit the implied constant.
    """
    if gamma_hat < 0:
        raise ValueError("gamma_hat must be >= 0")
    if kappa_r > 0:
        raise ValueError("kappa must be <= 0")
    if delta <= 0:
        raise ValueError("delta must be positive")
    lg = log_plus(gamma_hat)
    rk = r * math.sqrt(-kappa_r)
    if lg == 0.0:
        value = 0.0
    else:
        # log of the inner argument, assembled in log space to avoid overflow
        inner_log = (2 * m - 1) * math.log(r) + (2 * m - 1) * rk + math.log(gamma_hat) + (1 + delta) * math.log(lg)
        value = (lg * max(inner_log, 0.0)) ** (1.0 + delta)
    scale = log_plus(lg) + log_plus(rk) + log_plus(log_plus(r))
    return CalculusF(float(value), float(scale))
