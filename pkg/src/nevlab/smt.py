"""Second Main Theorem machinery: singular volume forms, xi densities, Lang's
bound, the xi occupation bound, SMT inequality reports and defect estimates.

Constants that only exist abstractly (Lang's b, the O(.) constants of the SMT
inequality) are estimated on a calibration sweep, frozen, and then used with a
safety factor on held-out radii.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linprog

from .comparison import green_radial, log_plus
from .geometry import (
    ManifoldModel,
    ModelKind,
    chart_radius_of,
    distance_to_base,
    inverse_metric,
    kappa_profile,
    metric_at,
    parse_model,
)
from .nevanlinna import (
    Budget,
    Estimate,
    _green_volume_integral,
    characteristic_T,
    counting_N,
    find_zeros,
    ricci_term_T,
    sphere_average,
)
from .stochastic import FunctionalSpec, derive_seed, run_paths
from .target import (
    HoloMap,
    LineBundleFS,
    SncDivisor,
    chart_index,
    divisor_complexity,
    fs_hessian,
    parse_divisor,
    parse_map,
    pullback_fs_hessian,
    random_projective_points,
    section_norm,
    to_chart,
    wronskian,
)

__all__ = [
    "SmtConfig",
    "SmtReport",
    "LangProbe",
    "XiBoundReport",
    "XiOccupationReport",
    "DefectReport",
    "GrowthCheck",
    "DecompositionCheck",
    "FrozenConstants",
    "SMT_CATALOG",
    "catalog_triples",
    "catalog_key",
    "singular_volume_density",
    "eta_matrix",
    "lang_ratio",
    "lang_bound_probe",
    "divisor_approach_points",
    "xi_density",
    "xi_pointwise_bound_check",
    "xi_occupation_bound",
    "smt_series",
    "fit_envelope",
    "smt_report",
    "sharpness_probe",
    "defect_estimate",
    "growth_condition_check",
    "current_decomposition_check",
    "wedge_trace_ratio",
    "trace_form",
    "det_trace_slack",
    "random_psd",
    "random_metric",
]


# ------------------------------------------------------------ linear algebra


def random_psd(rng: np.random.Generator, m: int, n: int, rank: Optional[int] = None) -> np.ndarray:
    """``n`` random Hermitian semi-positive ``m x m`` matrices (rank-deficient if asked)."""
    k = m if rank is None else rank
    A = rng.standard_normal((n, m, k)) + 1j * rng.standard_normal((n, m, k))
    return A @ np.conj(np.swapaxes(A, 1, 2))


def random_metric(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    return random_psd(rng, m, n) + 0.1 * np.eye(m)[None]


def trace_form(phi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``Tr_g(phi) = sum g^{j ibar} phi_{i jbar}``."""
    return np.real(np.einsum("nij,nji->n", np.linalg.inv(g), phi))


def wedge_trace_ratio(phi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``m (phi ^ alpha^{m-1}) / alpha^m`` from the mixed volume.

    ``(phi ^ alpha^{m-1}) / alpha^m`` is ``(1/m)`` times the t-linear
    coefficient of ``det(g + t phi) / det g``; the coefficient is extracted
    exactly with an (m+1)-point discrete Fourier sum.
    """
    n, m, _ = phi.shape
    N = m + 1
    omega = np.exp(2j * np.pi * np.arange(N) / N)
    dets = np.stack([np.linalg.det(g + w * phi) for w in omega], axis=1)
    c1 = np.mean(dets * np.conj(omega)[None, :], axis=1)
    return np.real(c1 / np.linalg.det(g))


def det_trace_slack(phi: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``(1/m) Tr_g(phi) - (det phi / det g)^{1/m}``, non-negative for phi >= 0."""
    m = phi.shape[-1]
    ratio = np.clip(np.real(np.linalg.det(phi) / np.linalg.det(g)), 0.0, None)
    return trace_form(phi, g) / m - ratio ** (1.0 / m)


# -------------------------------------------------- singular forms on P^m


def _on_chart(w: np.ndarray):
    """Yield ``(idx, k, zeta)`` groups of points sharing the chart w_k != 0."""
    ks = chart_index(w)
    for k in np.unique(ks):
        idx = np.nonzero(ks == k)[0]
        yield idx, int(k), to_chart(w[idx] / w[idx, k : k + 1], k)


def _norm_product(D: SncDivisor, w: np.ndarray, lam: float) -> np.ndarray:
    out = np.ones(len(w))
    for j in range(D.q):
        s = section_norm(D, j, w)
        if np.any(s <= 0):
            raise ValueError("point lies on the divisor")
        out *= s ** (2.0 * (1.0 - lam))
    return out


def _check_lambda(lam: float):
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")


def singular_volume_density(D: SncDivisor, L: LineBundleFS, w: np.ndarray, lam: float) -> np.ndarray:
    """Density of ``Phi_{D,lambda}`` against the Fubini-Study volume form.

    ``Omega = c1(L)^m = (d FS)^m``, so the density is ``d^m / prod ||s_j||^{2(1-lambda)}``.
    """
    _check_lambda(lam)
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    d = L.degree * L.c1_factor
    return d ** D.m / _norm_product(D, w, lam)


def _log_norm_gradient(D: SncDivisor, j: int, w: np.ndarray, k: int, zeta: np.ndarray) -> np.ndarray:
    """``d_zeta log ||s_j||^2`` in the chart w_k = 1."""
    comp = D.components[j]
    full = w / w[:, k : k + 1]
    rest = [i for i in range(w.shape[1]) if i != k]
    grad = comp.poly.grad(full)[:, rest]
    p = comp.poly(full)
    rho = np.sum(np.abs(zeta) ** 2, axis=1)
    return grad / p[:, None] - comp.degree * np.conj(zeta) / (1.0 + rho)[:, None]


def _log1p_hessian(lam: float, nrm2: np.ndarray, dv: np.ndarray, ddv: np.ndarray) -> np.ndarray:
    """``d dbar log(1 + e^{lambda v})`` from ``v = log ||s||^2``, its gradient and Hessian."""
    x = nrm2 ** lam
    u1 = lam * x / (1.0 + x)
    u2 = lam * lam * x / (1.0 + x) ** 2
    return u1[:, None, None] * ddv + u2[:, None, None] * dv[:, :, None] * np.conj(dv)[:, None, :]


def eta_matrix(D: SncDivisor, L: LineBundleFS, w: np.ndarray, lam: float):
    """Coefficient matrices of ``eta_{D,lambda}`` and of ``FS`` in charts.

    Returns ``(eta, H_fs)`` with shape ``(n, m, m)`` each, expressed in the
    chart of the largest homogeneous coordinate of each point.
    """
    _check_lambda(lam)
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    n, m = len(w), D.m
    d = L.degree * L.c1_factor
    eta = np.zeros((n, m, m), dtype=complex)
    hfs = np.zeros((n, m, m), dtype=complex)
    for idx, k, zeta in _on_chart(w):
        H = fs_hessian(zeta)
        hfs[idx] = H
        acc = (1 + D.q) * lam * d * H
        for j in range(D.q):
            nrm2 = section_norm(D, j, w[idx]) ** 2
            dv = _log_norm_gradient(D, j, w[idx], k, zeta)
            acc = acc + _log1p_hessian(lam, nrm2, dv, -D.components[j].degree * H)
        eta[idx] = acc
    return eta, hfs


def lang_ratio(D: SncDivisor, L: LineBundleFS, w: np.ndarray, lam: float, k: Optional[int] = None) -> np.ndarray:
    """``lambda^{m+k} Phi_{D,lambda} / eta_{D,lambda}^m`` at the points w."""
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    k = divisor_complexity(D) if k is None else k
    eta, hfs = eta_matrix(D, L, w, lam)
    d = L.degree * L.c1_factor
    num = d ** D.m * np.real(np.linalg.det(hfs)) / _norm_product(D, w, lam)
    den = np.real(np.linalg.det(eta))
    return lam ** (D.m + k) * num / den


def divisor_approach_points(
    D: SncDivisor, rng: np.random.Generator, n_base: int = 8, depths: Sequence[float] = tuple(10.0 ** -np.arange(1, 8))
) -> np.ndarray:
    """Points at distances ``depths`` from the divisor, near generic points
    of each component and near pairwise crossings of linear components."""
    m = D.m
    anchors = []
    for comp in D.components:
        for _ in range(n_base):
            a, b = random_projective_points(m, 2, rng)
            # roots of t -> P(a + t b) lie on the component
            deg = comp.degree
            ts = np.linspace(0, 1, deg + 1) * np.exp(1j * rng.uniform(0, 2 * np.pi))
            vals = comp.poly(a[None] + ts[:, None] * b[None])
            coeffs = np.polyfit(ts, vals, deg)
            roots = np.roots(coeffs) if deg > 0 and abs(coeffs[0]) > 1e-14 else np.array([])
            for t in roots:
                p = a + t * b
                anchors.append(p / np.linalg.norm(p))
    if all(c.degree == 1 for c in D.components) and m >= 2:
        vecs = np.array([c.poly.coeffs for c in D.components])
        for i in range(D.q):
            for j in range(i + 1, D.q):
                # crossing = kernel of the 2 x (m+1) system (plus random extra rows for m > 2)
                for _ in range(max(1, n_base // 4)):
                    rows = [vecs[i], vecs[j]] + [rng.standard_normal(m + 1) for _ in range(m - 2)]
                    _, _, vh = np.linalg.svd(np.array(rows))
                    p = np.conj(vh[-1])
                    anchors.append(p / np.linalg.norm(p))
    pts = []
    for p in anchors:
        for eps in depths:
            v = rng.standard_normal(m + 1) + 1j * rng.standard_normal(m + 1)
            q = p + eps * v / np.linalg.norm(v)
            pts.append(q / np.linalg.norm(q))
    return np.array(pts)


@dataclass
class LangProbe:
    lambda_grid: tuple
    b_per_lambda: dict
    b_hat: float
    spread: float
    stable: bool
    k: int
    n_points: int


def lang_bound_probe(
    D: SncDivisor,
    L: Optional[LineBundleFS] = None,
    lambda_grid: Sequence[float] = (0.5, 0.1, 0.02),
    sample_points: Optional[np.ndarray] = None,
    seed: int = 0,
    n_random: int = 2000,
    stability_factor: float = 10.0,
) -> LangProbe:
    """Empirical Lang constant ``b^ = max lambda^{m+k} Phi / eta^m`` over samples and lambdas.

    ``stable`` reports whether the per-lambda maxima stay within
    ``stability_factor`` of each other, the testable content of Lang's lemma.
    """
    L = D.bundle() if L is None else L
    k = divisor_complexity(D)
    if sample_points is None:
        rng = np.random.default_rng(seed)
        sample_points = np.concatenate([random_projective_points(D.m, n_random, rng), divisor_approach_points(D, rng)])
    keep = np.ones(len(sample_points), dtype=bool)
    for j in range(D.q):
        keep &= section_norm(D, j, sample_points) > 1e-14
    pts = sample_points[keep]
    per = {}
    for lam in lambda_grid:
        per[float(lam)] = float(np.max(lang_ratio(D, L, pts, lam, k)))
    vals = np.array(list(per.values()))
    spread = float(vals.max() / vals.min())
    return LangProbe(tuple(float(x) for x in lambda_grid), per, float(vals.max()), spread, spread < stability_factor, k, len(pts))


# --------------------------------------------------------------- xi density


def _pullback_norms(f: HoloMap, D: SncDivisor, z: np.ndarray) -> list[np.ndarray]:
    w = f(z)
    return [section_norm(D, j, w) for j in range(D.q)]


def xi_density(f: HoloMap, D: SncDivisor, L: LineBundleFS, z: np.ndarray, lam: float) -> np.ndarray:
    """``xi`` with ``f* Phi_{D,lambda} = xi alpha^m``.

    Chart-free form: ``a(f)|J(f)|^2 = d^m |W|^2 / |F|^{2(m+1)}`` where
    ``W = det[F, dF]`` is the Wronskian of the homogeneous lift.
    """
    _check_lambda(lam)
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    F = f.lift(z)
    W = wronskian(f, z)
    d = L.degree * L.c1_factor
    nF = np.sum(np.abs(F) ** 2, axis=1)
    num = d ** f.m * np.abs(W) ** 2 / nF ** (f.m + 1)
    prod = np.ones(len(z))
    for s in _pullback_norms(f, D, z):
        with np.errstate(divide="ignore"):
            prod *= s ** (2.0 * (1.0 - lam))
    detg = np.real(np.linalg.det(metric_at(f.model, z)))
    with np.errstate(divide="ignore"):
        return num / prod / detg


def _pullback_log1p_hessian(f: HoloMap, D: SncDivisor, j: int, z: np.ndarray, lam: float) -> np.ndarray:
    """``d dbar log(1 + ||s_j o f||^{2 lambda})`` in the source chart."""
    comp = D.components[j]
    F = f.lift(z)
    dF = f.dF(z)
    nF = np.sum(np.abs(F) ** 2, axis=1)
    p = comp.poly(F)
    dp = np.einsum("nk,nki->ni", comp.poly.grad(F), dF)
    dlogF = np.einsum("nk,nki->ni", np.conj(F), dF) / nF[:, None]
    dv = dp / p[:, None] - comp.degree * dlogF
    ddv = -comp.degree * pullback_fs_hessian(f, z)
    nrm2 = section_norm(D, j, F / np.sqrt(nF)[:, None]) ** 2
    return _log1p_hessian(lam, nrm2, dv, ddv)


def _laplacian_from_hessian(model: ManifoldModel, z: np.ndarray, H: np.ndarray) -> np.ndarray:
    return 4.0 * np.real(np.einsum("nij,nji->n", inverse_metric(model, z), H))


@dataclass
class XiBoundReport:
    lhs: np.ndarray
    rhs: np.ndarray
    b: float
    lam: float
    k: int
    ok: bool
    min_slack: float


def xi_pointwise_bound_check(
    f: HoloMap, D: SncDivisor, L: LineBundleFS, z: np.ndarray, lam: float, b: float, k: Optional[int] = None
) -> XiBoundReport:
    """Pointwise xi bound with Lang constant ``b``:

    ``xi^{1/m} <= (q+1) b^{1/m} / (2 m lam^{k/m}) e + b^{1/m} / (4 m lam^{1+k/m}) sum_j Delta log(1 + ||s_j o f||^{2 lam})``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    m, q = f.m, D.q
    k = divisor_complexity(D) if k is None else k
    lhs = xi_density(f, D, L, z, lam) ** (1.0 / m)
    d = L.degree * L.c1_factor
    e = 2.0 * d * np.real(np.einsum("nij,nji->n", inverse_metric(f.model, z), pullback_fs_hessian(f, z)))
    lap = sum(_laplacian_from_hessian(f.model, z, _pullback_log1p_hessian(f, D, j, z, lam)) for j in range(q))
    bm = b ** (1.0 / m)
    rhs = (q + 1) * bm / (2 * m * lam ** (k / m)) * e + bm / (4 * m * lam ** (1 + k / m)) * lap
    slack = rhs - lhs
    tol = 1e-9 * np.maximum(1.0, np.abs(rhs))
    return XiBoundReport(lhs, rhs, b, lam, k, bool(np.all(slack >= -tol)), float(np.min(slack)))


# ----------------------------------------------------- xi occupation bound


@dataclass
class XiOccupationReport:
    r: float
    T: float
    lam: float
    lhs: float
    lhs_err: float
    bound_lambda: float
    B: float
    bound: float
    dynkin_terms: list
    dynkin_ok: bool
    ok: bool
    method: str


def _preimage_points(f: HoloMap, D: SncDivisor, r: float) -> list[complex]:
    from .nevanlinna import _section_pullback

    rho = chart_radius_of(f.model, r)
    pts = []
    for j in range(D.q):
        g, dg = _section_pullback(f, D, j)
        pts += [z for z, _ in find_zeros(g, dg, rho) if abs(z) < rho]
    return pts


def _graded_angles(s: float, sing: list[complex], n_gl: int = 16):
    """Gauss-Legendre panels on [0, 2 pi) graded towards the angles of nearby singular points."""
    cuts = list(np.linspace(0.0, 2 * np.pi, 33))
    for a in sing:
        if abs(a) == 0:
            continue
        th = float(np.angle(a)) % (2 * np.pi)
        h = max(abs(s - abs(a)) / s, 1e-15)
        while h < np.pi:
            cuts += [th - h, th + h]
            h *= 2.0
        cuts.append(th)
    cuts = np.unique(np.mod(cuts, 2 * np.pi))
    cuts = np.append(cuts, cuts[0] + 2 * np.pi)
    x, w = np.polynomial.legendre.leggauss(n_gl)
    lo, hi = cuts[:-1], cuts[1:]
    half = 0.5 * (hi - lo)
    th = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    return th.ravel(), (half[:, None] * w[None, :]).ravel()


def _xi_root_integral_m1(f: HoloMap, D: SncDivisor, L: LineBundleFS, r: float, lam: float, rtol: float) -> float:
    """``int g_r xi dV`` on a one-dimensional model, singularities at f^{-1}(D) resolved by graded panels."""
    from .geometry import radial_distance
    from .comparison import green_radial

    model = f.model
    rho = chart_radius_of(model, r)
    sing = _preimage_points(f, D, r)
    radii = sorted({abs(a) for a in sing if 0 < abs(a) < rho})

    def ring(s):
        if s <= 0:
            return 0.0
        t = float(radial_distance(model, s))
        if t >= r:
            return 0.0
        vol = float(np.real(metric_at(model, np.array([[s]]))[0, 0, 0]))
        th, w = _graded_angles(s, sing)
        vals = xi_density(f, D, L, (s * np.exp(1j * th))[:, None], lam)
        return green_radial(model, t, r) * vol * s * float(np.dot(w, vals))

    val, _ = quad(ring, 0.0, rho, points=radii or None, epsrel=rtol, limit=400)
    return val


def xi_occupation_bound(
    f: HoloMap,
    D: SncDivisor,
    L: LineBundleFS,
    r: float,
    b: float,
    method: str = "quadrature",
    budget: Budget = Budget(),
    k: Optional[int] = None,
) -> XiOccupationReport:
    """Occupation bound for ``xi^{1/m}`` with ``lambda = 1 / T_f(r, L)``.

    Checks ``E int_0^tau xi^{1/m} <= b^{1/m}/(m lam^{k/m}) ((q+1) T + q log2 / (2 lam))``
    and the consequence ``<= B T^{1+k/m}`` with ``B = (1+q+q log2/2) b^{1/m}/m``.
    The Dynkin sub-step ``E int Delta log(1+||s_j o f||^{2 lam}) < 2 log 2`` is
    evaluated through its boundary form.
    """
    m, q = f.m, D.q
    k = divisor_complexity(D) if k is None else k
    qmethod = "quadrature" if method == "quadrature" else "mc"
    T = characteristic_T(f, L, r, qmethod, budget).value
    if T <= 1.0:
        raise ValueError(f"T_f(r, L) = {T:.4g} <= 1; radius too small for lambda = 1/T")
    lam = 1.0 / T
    if method == "quadrature":
        if m != 1:
            raise ValueError("xi occupation quadrature is implemented for m = 1; use mc")
        lhs, err = _xi_root_integral_m1(f, D, L, r, lam, 1e-6), 0.0
        lhs_err = 1e-6 * abs(lhs)
    elif method == "mc":
        spec = FunctionalSpec("xi", lambda z: xi_density(f, D, L, z, lam) ** (1.0 / m))
        batch = run_paths(f.model, r, budget.n_paths, budget.seed, [spec], budget.step, budget.threads)
        est = batch.estimate("xi")
        lhs, lhs_err = est.mean, est.std_error
    else:
        raise ValueError(f"unknown method {method!r}")
    bm = b ** (1.0 / m)
    bound_lambda = bm / (m * lam ** (k / m)) * ((q + 1) * T + q * math.log(2) / (2 * lam))
    B = (1 + q + q * math.log(2) / 2) * bm / m
    bound = B * T ** (1 + k / m)
    rho = chart_radius_of(f.model, r)
    origin = np.zeros((1, m), dtype=complex)
    dyn = []
    for j in range(q):
        def bnd(z, j=j):
            return np.log1p(section_norm(D, j, f(z)) ** (2 * lam))
        dyn.append(2.0 * (sphere_average(bnd, m, rho) - float(bnd(origin)[0])))
    dynkin_ok = all(v < 2 * math.log(2) for v in dyn)
    ok = lhs <= min(bound_lambda, bound) + 3 * lhs_err
    return XiOccupationReport(r, T, lam, float(lhs), float(lhs_err), bound_lambda, B, bound, dyn, dynkin_ok, ok, method)


# --------------------------------------------------------- SMT inequality


SMT_CATALOG = [
    # (model, map, divisor, method, r_min, r_max)
    ("flat:1", "exp", "p1:points=[0,inf]", "quadrature", 2.0, 50.0),
    ("flat:1", "exp", "p1:points=[0,inf,-1]", "quadrature", 2.0, 50.0),
    ("flat:1", "poly:[0,0,1]", "p1:points=[1,-1,inf]", "quadrature", 2.0, 50.0),
    ("flat:1", "id", "p1:points=[1,-1,inf]", "quadrature", 2.0, 50.0),
    ("poincare", "id", "p1:points=[1,-1,inf]", "quadrature", 1.0, 12.0),
]


def catalog_key(model: str, fmap: str, divisor: str) -> str:
    return f"{model}|{fmap}|{divisor}"


@dataclass(frozen=True)
class SmtConfig:
    r_grid: tuple = tuple(np.geomspace(2.0, 50.0, 20).tolist())
    lambda_grid: tuple = (0.5, 0.1, 0.02)
    delta: float = 0.1
    exceptional_tolerance: float = 0.05
    safety: float = 2.0
    method: str = "quadrature"
    budget: Budget = Budget()

    def __post_init__(self):
        if any(not 0 < x < 1 for x in self.lambda_grid):
            raise ValueError("lambda grid values must lie in (0, 1)")
        if np.any(np.diff(self.r_grid) <= 0):
            raise ValueError("r_grid must be increasing")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass
class SmtSeries:
    r_grid: np.ndarray
    T_L: np.ndarray
    T_L_err: np.ndarray
    T_K: np.ndarray
    N1: np.ndarray
    kappa_r2: np.ndarray
    lhs: np.ndarray
    lead: np.ndarray      # ((m + k)/2) log T
    lower: np.ndarray     # log+ log T - kappa r^2 + log+ log r
    m: int
    k: int


def smt_series(f: HoloMap, D: SncDivisor, L: LineBundleFS, r_grid: Sequence[float], method: str = "quadrature",
               budget: Budget = Budget()) -> SmtSeries:
    """Per-radius terms of ``T_f(r,L) + T_f(r,K_V) - N^[1]_f(r,D)`` and of the bound."""
    r_grid = np.asarray(r_grid, dtype=float)
    m = f.m
    k = divisor_complexity(D)
    d = L.degree * L.c1_factor
    T = np.zeros(len(r_grid))
    Terr = np.zeros(len(r_grid))
    N1 = np.zeros(len(r_grid))
    for i, r in enumerate(r_grid):
        est = characteristic_T(f, L, r, method, Budget(budget.n_paths, derive_seed(budget.seed, i), budget.step, budget.threads, budget.rtol))
        T[i], Terr[i] = est.value, est.error
        N1[i] = counting_N(f, D, r, truncation=1)
    T_K = -(m + 1) / d * T
    kap = np.array([kappa_profile(f.model, r) * r * r for r in r_grid])
    lhs = T + T_K - N1
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = (m + k) / 2.0 * np.log(T)
    lower = log_plus(np.log(np.maximum(T, 1e-300))) - kap + log_plus(np.log(r_grid))
    return SmtSeries(r_grid, T, Terr, T_K, N1, kap, lhs, lead, lower, m, k)


def fit_envelope(lhs: np.ndarray, lead: np.ndarray, lower: np.ndarray) -> tuple[float, float]:
    """Smallest-area envelope ``lhs - lead <= C lower + C0`` with ``C >= 0`` (linear program)."""
    y = lhs - lead
    A = -np.stack([lower, np.ones_like(lower)], axis=1)
    c = np.array([lower.sum(), len(lower)])
    res = linprog(c, A_ub=A, b_ub=-y, bounds=[(0, None), (None, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"envelope fit failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


def _inflate(x: np.ndarray, factor: float) -> np.ndarray:
    return np.where(x > 0, factor * x, x / factor)


@dataclass
class FrozenConstants:
    """Calibrated constants keyed by catalog triple."""

    entries: dict = field(default_factory=dict)

    def set(self, key: str, C: float, C0: float, b_hat: Optional[float] = None):
        self.entries[key] = {"C": C, "C0": C0, "b_hat": b_hat}

    def get(self, key: str) -> Optional[dict]:
        return self.entries.get(key)

    def dumps(self) -> str:
        return json.dumps(self.entries, sort_keys=True, indent=2)

    @classmethod
    def loads(cls, text: str) -> "FrozenConstants":
        return cls(json.loads(text))


@dataclass
class SmtReport:
    series: SmtSeries
    C: float
    C0: float
    safety: float
    rhs: np.ndarray
    calibration: np.ndarray     # bool mask
    validation: np.ndarray      # bool mask
    violations: np.ndarray      # bool mask (validation cells only)
    violation_measure: float
    span: float
    tolerance: float
    ok: bool
    sharpness: Optional[float] = None

    columns = ("r", "T_L", "T_L_err", "T_K", "N1", "kappa_r2", "lhs", "rhs", "role", "violation")

    def rows(self):
        s = self.series
        for i, r in enumerate(s.r_grid):
            role = "calibration" if self.calibration[i] else ("validation" if self.validation[i] else "excluded")
            yield {"r": r, "T_L": s.T_L[i], "T_L_err": s.T_L_err[i], "T_K": s.T_K[i], "N1": s.N1[i],
                   "kappa_r2": s.kappa_r2[i], "lhs": s.lhs[i], "rhs": self.rhs[i], "role": role,
                   "violation": int(self.violations[i])}

    def summary(self) -> dict:
        return {"C": self.C, "C0": self.C0, "safety": self.safety, "violation_measure": self.violation_measure,
                "span": self.span, "tolerance": self.tolerance, "ok": self.ok, "k": self.series.k,
                "sharpness": self.sharpness}


def _cell_widths(r: np.ndarray) -> np.ndarray:
    w = np.empty_like(r)
    w[:-1] = np.diff(r)
    w[-1] = r[-1] - r[-2] if len(r) > 1 else 0.0
    return w


def sharpness_probe(series: SmtSeries) -> float:
    """Least-squares slope ``a`` in ``lhs ~ a log T + c0`` over radii with T > 1."""
    sel = series.T_L > 1.0
    if sel.sum() < 2:
        return float("nan")
    X = np.stack([np.log(series.T_L[sel]), np.ones(sel.sum())], axis=1)
    coef, *_ = np.linalg.lstsq(X, series.lhs[sel], rcond=None)
    return float(coef[0])


def smt_report(
    f: HoloMap,
    D: SncDivisor,
    L: LineBundleFS,
    cfg: SmtConfig = SmtConfig(),
    constants: Optional[tuple[float, float]] = None,
    seed: int = 0,
) -> SmtReport:
    """SMT inequality check on ``cfg.r_grid``.

    Radii with ``T_f(r, L) <= 1`` form the initial segment the theorem
    excludes. Of the rest, the first half calibrates ``(C, C0)`` unless
    frozen ``constants`` are given; the second half is validated against
    ``((m+k)/2) log T + inflate(C lower + C0)``. A violating cell contributes
    its width to the exceptional measure.
    """
    if not f.certify_nondegenerate(np.random.default_rng(seed)):
        raise ValueError(f"map {f.name} failed the non-degeneracy certificate")
    s = smt_series(f, D, L, cfg.r_grid, cfg.method, cfg.budget)
    usable = s.T_L > 1.0
    idx = np.nonzero(usable)[0]
    calib = np.zeros(len(s.r_grid), dtype=bool)
    calib[idx[: len(idx) // 2]] = True
    valid = usable & ~calib
    if constants is None:
        if calib.sum() < 2:
            raise ValueError("too few calibration radii with T > 1")
        C, C0 = fit_envelope(s.lhs[calib], s.lead[calib], s.lower[calib])
    else:
        C, C0 = constants
    rhs = s.lead + _inflate(C * s.lower + C0, cfg.safety)
    tol_abs = 1e-9 * np.maximum(1.0, np.abs(rhs)) + 3.0 * s.T_L_err
    viol = valid & (s.lhs > rhs + tol_abs)
    widths = _cell_widths(s.r_grid)
    measure = float(widths[viol].sum())
    span = float(s.r_grid[-1] - s.r_grid[0])
    ok = measure <= cfg.exceptional_tolerance * span
    return SmtReport(s, C, C0, cfg.safety, rhs, calib, valid, viol, measure, span, cfg.exceptional_tolerance, ok,
                     sharpness_probe(s))


# ------------------------------------------------------------ defects


@dataclass
class DefectReport:
    r_top: np.ndarray
    per_component: list
    per_component_err: list
    summed: float
    summed_bound: Optional[float]
    total: float
    total_err: float
    total_bound: float


def defect_estimate(f: HoloMap, D: SncDivisor, r_max: float, method: str = "quadrature",
                    budget: Budget = Budget(), n_top: int = 8) -> DefectReport:
    """``Theta^ = 1 - max_{top decade} N^[1] / T`` per component and for D.

    Components use ``L_j = O(deg D_j)``; the whole divisor uses ``L = O(deg D)``.
    The per-component sum is compared with ``m + 1`` when all components are
    hyperplanes, and ``Theta^(D)`` with ``(m+1)/deg D``.
    """
    r_top = np.geomspace(r_max / 10.0, r_max, n_top)
    T1 = np.zeros(n_top)
    T1e = np.zeros(n_top)
    for i, r in enumerate(r_top):
        est = characteristic_T(f, LineBundleFS(1, D.scale), r, method, budget)
        T1[i], T1e[i] = est.value, est.error
    keep = T1 > 1.0
    if keep.sum() < 2:
        raise ValueError(f"T_f(r, O(1)) <= 1 on most of [{r_top[0]:.3g}, {r_max:.3g}]; radius too small for a defect estimate")
    r_top, T1, T1e = r_top[keep], T1[keep], T1e[keep]
    thetas, errs = [], []
    for j, comp in enumerate(D.components):
        sub = D.subdivisor([j])
        N1 = np.array([counting_N(f, sub, r, truncation=1) for r in r_top])
        ratio = N1 / (comp.degree * T1)
        i = int(np.argmax(ratio))
        thetas.append(float(1.0 - ratio[i]))
        errs.append(float(ratio[i] * T1e[i] / T1[i]))
    N1_all = np.array([counting_N(f, D, r, truncation=1) for r in r_top])
    ratio = N1_all / (D.degree * T1)
    i = int(np.argmax(ratio))
    total = float(1.0 - ratio[i])
    total_err = float(ratio[i] * T1e[i] / T1[i])
    linear = all(c.degree == 1 for c in D.components)
    return DefectReport(r_top, thetas, errs, float(sum(thetas)), float(f.m + 1) if linear else None,
                        total, total_err, (f.m + 1) / D.degree)


@dataclass
class GrowthCheck:
    ratio: float
    applicable: bool
    r_top: np.ndarray


def growth_condition_check(model: ManifoldModel, f: HoloMap, L: LineBundleFS, r_grid: Sequence[float],
                           method: str = "quadrature", budget: Budget = Budget(), tol: float = 1e-3) -> GrowthCheck:
    """Surrogate of ``liminf kappa(r) r^2 / T_f(r,L) = 0``: min of |kappa r^2 / T| over the top decade."""
    r_grid = np.asarray(r_grid, dtype=float)
    top = r_grid[r_grid >= r_grid[-1] / 10.0]
    vals = []
    for r in top:
        kap = kappa_profile(model, r)
        if kap == 0.0:
            vals.append(0.0)
            continue
        T = characteristic_T(f, L, r, method, budget).value
        vals.append(abs(kap * r * r / T))
    ratio = float(min(vals))
    return GrowthCheck(ratio, ratio <= tol, top)


# --------------------------------------------------- current decomposition


@dataclass
class DecompositionCheck:
    r: float
    lam: float
    direct: float
    decomposed: float
    lower_bound: float
    difference: float
    ok: bool


def current_decomposition_check(f: HoloMap, D: SncDivisor, L: LineBundleFS, r: float, lam: float,
                                tol: float = 1e-6) -> DecompositionCheck:
    """Two evaluations of ``(1/4) int g_r Delta log xi dV`` on a one-dimensional model.

    ``direct`` uses the boundary form ``(1/2)(mean_S log xi - log xi(o))``;
    ``decomposed`` sums ``(1-lam) T_L + T_K + T_R - (1-lam) N_D + N_Ram``.
    ``lower_bound`` replaces the last two terms by ``-N^[1]``.
    """
    if f.m != 1:
        raise ValueError("current decomposition check is implemented for m = 1")
    model = f.model
    rho = chart_radius_of(model, r)
    origin = np.zeros((1, 1), dtype=complex)
    if abs(wronskian(f, origin)[0]) == 0.0:
        raise ValueError("ramification at the base point; log xi(o) is undefined")
    logxi = lambda z: np.log(xi_density(f, D, L, z, lam))
    direct = 0.5 * (sphere_average(logxi, 1, rho) - float(logxi(origin)[0]))
    d = L.degree * L.c1_factor
    T_L = characteristic_T(f, L, r).value
    T_K = -2.0 / d * T_L
    T_R = ricci_term_T(model, r, "quadrature")[0].value
    N_D = counting_N(f, D, r)
    N1 = counting_N(f, D, r, truncation=1)

    def W(z):
        return wronskian(f, np.asarray(z, dtype=complex).reshape(-1, 1))

    def dW(z):
        z = np.asarray(z, dtype=complex)
        h = 1e-6 * (1 + np.abs(z))
        return (W(z + h) - W(z - h)) / (2 * h)

    N_ram = 0.0
    for z0, mult in find_zeros(W, dW, rho):
        if abs(z0) < rho:
            N_ram += mult * math.pi * green_radial(model, float(distance_to_base(model, [z0])), r)
    decomposed = (1 - lam) * T_L + T_K + T_R - (1 - lam) * N_D + N_ram
    lower = (1 - lam) * T_L + T_K + T_R - N1
    diff = direct - decomposed
    return DecompositionCheck(r, lam, direct, decomposed, lower, diff, abs(diff) <= tol * max(1.0, abs(direct)))


def catalog_triples(entries=SMT_CATALOG):
    """Instantiate ``(key, f, D, L, method, r_grid)`` for the SMT catalog."""
    out = []
    for model_s, map_s, div_s, method, r0, r1 in entries:
        model = parse_model(model_s)
        f = parse_map(map_s, model)
        D = parse_divisor(div_s)
        out.append((catalog_key(model_s, map_s, div_s), f, D, D.bundle(), method, np.geomspace(r0, r1, 20)))
    return out
