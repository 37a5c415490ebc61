"""Brownian motion on the model manifolds: exit times, hitting laws, occupation.

Paths are integrated by Euler-Maruyama in the global chart. Because the
models are Kähler, Delta_M / 2 has no first-order part in holomorphic
coordinates, so the scheme is driftless: ``Z <- Z + S(Z) dW sqrt(dt)``.

Paths are simulated in fixed-size blocks; block ``b`` draws from the Philox
counter stream ``Philox(key=seed).jumped(b)``, so results depend only on
``(seed, config)`` and never on the number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import (
    ManifoldModel,
    ModelKind,
    SmoothField,
    chart_radius_of,
    diffusion_factor,
    laplace_beltrami,
    metric_at,
    radial_distance,
)

log = logging.getLogger(__name__)

__all__ = [
    "derive_seed",
    "StepPolicy",
    "FunctionalSpec",
    "ExitSample",
    "McEstimate",
    "PathBatch",
    "SimulationError",
    "simulate_exit",
    "run_paths",
    "estimate_occupation",
    "estimate_hitting",
    "dynkin_residual",
    "estimate_green_at",
    "propagate",
    "block_rng",
    "BLOCK_SIZE",
]

BLOCK_SIZE = 4096
BALL_GUARD = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepPolicy:
    """``dt = clip(min(c * d(X, S_o(r))^2, growth * t), dt_min, dt0)``.

    ``dt0`` defaults to ``1e-3 r^2`` and ``dt_min`` to ``dt_min_frac * r^2``.
    The ``growth * t`` cap makes the first steps from o geometric, so that
    occupation integrals resolve the early-time transient; ``growth=None``
    disables it.
    ``scheme="recentred"`` (curved models) takes each Euler step at the chart
    origin and maps it to the current point by a holomorphic isometry;
    ``scheme="chart"`` steps in place with the local coefficients.
    """

    dt0: Optional[float] = None
    c: float = 0.1
    dt_min_frac: float = 1e-7
    max_steps: int = 2_000_000
    scheme: str = "recentred"
    growth: Optional[float] = 0.1

    def resolve(self, r: float) -> tuple[float, float]:
        dt0 = self.dt0 if self.dt0 is not None else 1e-3 * r * r
        if dt0 <= 0:
            raise ValueError("dt0 must be positive")
        return dt0, min(dt0, self.dt_min_frac * r * r)


@dataclass
class FunctionalSpec:
    """An occupation integrand (``kind="occupation"``) or boundary function
    (``kind="hitting"``), vectorised over ``(n, m)`` complex arrays.

    ``mask`` returns the distance to a singular set; occupation steps closer
    than ``mask_radius`` are dropped and their time is reported as clipped.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    kind: str = "occupation"
    mask: Optional[Callable[[np.ndarray], np.ndarray]] = None
    mask_radius: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("occupation", "hitting"):
            raise ValueError(f"unknown functional kind {self.kind!r}")


@dataclass
class ExitSample:
    exit_point: np.ndarray
    exit_time: float
    occupation_sums: dict[str, float]
    steps_used: int


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_paths: int
    clipped_mass: float = 0.0

    @classmethod
    def from_samples(cls, x: np.ndarray, clipped_mass: float = 0.0) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        if n < 2:
            raise ValueError("need at least 2 samples")
        mean = float(np.sum(x) / n)
        se = float(np.std(x, ddof=1) / math.sqrt(n))
        return cls(mean, se, n, clipped_mass)

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error


@dataclass
class PathBatch:
    exit_points: np.ndarray
    exit_times: np.ndarray
    occupation: dict[str, np.ndarray]
    hitting: dict[str, np.ndarray]
    steps: np.ndarray
    abandoned: int = 0
    clipped: dict[str, float] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return len(self.exit_times)

    def estimate(self, name: str) -> McEstimate:
        if name == "exit_time":
            return McEstimate.from_samples(self.exit_times)
        if name in self.occupation:
            return McEstimate.from_samples(self.occupation[name], self.clipped.get(name, 0.0) / self.n_paths)
        return McEstimate.from_samples(self.hitting[name])

    def rows(self):
        for i in range(self.n_paths):
            row = {"path": i, "exit_time": self.exit_times[i], "steps": int(self.steps[i])}
            for k in range(self.exit_points.shape[1]):
                row[f"x{k}_re"] = self.exit_points[i, k].real
                row[f"x{k}_im"] = self.exit_points[i, k].imag
            row.update({k: v[i] for k, v in self.occupation.items()})
            row.update({k: v[i] for k, v in self.hitting.items()})
            yield row


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit child seed for the index-th sub-experiment (e.g. one radius of a sweep)."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)).jumped(block))


def _increment(model: ManifoldModel, z: np.ndarray, xi: np.ndarray) -> np.ndarray:
    if model.kind is ModelKind.FLAT:
        return xi / model.curvature_scale
    if model.m == 1:
        return diffusion_factor(model, z)[:, 0, 0][:, None] * xi
    return np.einsum("nij,nj->ni", diffusion_factor(model, z), xi)


def _automorphism(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Involutive ball automorphism exchanging 0 and ``a``, applied to ``y``."""
    rho = np.sum(np.abs(a) ** 2, axis=1)
    ip = np.sum(y * np.conj(a), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        proj = np.where(rho[:, None] > 0, a * (ip / np.where(rho > 0, rho, 1.0))[:, None], 0.0)
    s = np.sqrt(1.0 - rho)
    return (a - proj - s[:, None] * (y - proj)) / (1.0 - ip)[:, None]


def _step(model: ManifoldModel, z: np.ndarray, xi: np.ndarray, sqrt_dt: np.ndarray, scheme: str) -> np.ndarray:
    if model.kind is ModelKind.FLAT or scheme == "chart":
        return z + _increment(model, z, xi) * sqrt_dt[:, None]
    # Euler step taken at the origin, transported by an isometry fixing the law
    y = _increment(model, np.zeros_like(z), xi) * sqrt_dt[:, None]
    return _automorphism(z, y)


def _simulate_block(
    model: ManifoldModel,
    r: float,
    n: int,
    rng: np.random.Generator,
    occ_specs: Sequence[FunctionalSpec],
    step: StepPolicy,
):
    m = model.m
    dt0, dt_min = step.resolve(r)
    rho_r = chart_radius_of(model, r)
    guard = 1.0 - BALL_GUARD if model.kind is not ModelKind.FLAT else math.inf

    exit_pts = np.zeros((n, m), dtype=complex)
    exit_t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    occ = {s.name: np.zeros(n) for s in occ_specs}
    clipped = {s.name: 0.0 for s in occ_specs}
    ok = np.ones(n, dtype=bool)

    idx = np.arange(n)
    z = np.zeros((n, m), dtype=complex)
    t = np.zeros(n)
    acc = {s.name: np.zeros(n) for s in occ_specs}
    nstep = np.zeros(n, dtype=np.int64)
    d0 = np.zeros(n)

    def evaluate(points, sel=None):
        # occupation integrands at the given points; masked values are zeroed
        out, near_masks = {}, {}
        for s in occ_specs:
            v = np.asarray(s.func(points), dtype=float)
            if v.shape != (len(points),):
                v = np.broadcast_to(v, (len(points),)).astype(float)
            near = None
            if s.mask is not None:
                near = s.mask(points) < s.mask_radius
                v = np.where(near, 0.0, v)
            out[s.name], near_masks[s.name] = v, near
        return out, near_masks

    # trapezoid rule in time: each step averages the integrand at both ends
    cur, cur_near = evaluate(z) if occ_specs else ({}, {})
    while idx.size:
        k = idx.size
        cap = step.c * (r - d0) ** 2
        if step.growth is not None:
            cap = np.minimum(cap, step.growth * t)
        dt = np.clip(cap, dt_min, dt0)
        xi = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
        z1 = _step(model, z, xi, np.sqrt(dt), step.scheme)
        mod1 = np.linalg.norm(z1, axis=1)
        if not np.all(np.isfinite(mod1)):
            bad = idx[~np.isfinite(mod1)][0]
            raise SimulationError(f"NaN state on path {bad} at t={t[~np.isfinite(mod1)][0]:.6g}")
        broke = mod1 >= guard
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = np.where(broke, np.inf, radial_distance(model, np.minimum(mod1, guard)))
        crossed = (d1 >= r) & ~broke
        nstep += 1

        theta = np.ones(k)
        zc = None
        if np.any(crossed):
            theta[crossed] = (r - d0[crossed]) / (d1[crossed] - d0[crossed])
            zc = z[crossed] + theta[crossed, None] * (z1[crossed] - z[crossed])
            nrm = np.linalg.norm(zc, axis=1)
            zc *= (rho_r / nrm)[:, None]
        w = theta * dt
        t += w
        if occ_specs:
            z_end = z1.copy()
            if zc is not None:
                z_end[crossed] = zc
            z_end[broke] = 0.0
            nxt, nxt_near = evaluate(z_end)
            for s in occ_specs:
                name = s.name
                acc[name] += 0.5 * (cur[name] + nxt[name]) * w
                if s.mask is not None:
                    lost = 0.5 * (cur_near[name].astype(float) + nxt_near[name].astype(float)) * w
                    clipped[name] += float(np.sum(lost))

        if zc is not None:
            j = idx[crossed]
            exit_pts[j] = zc
            exit_t[j] = t[crossed]
            steps[j] = nstep[crossed]
            for s in occ_specs:
                occ[s.name][j] = acc[s.name][crossed]

        over = (nstep >= step.max_steps) & ~crossed
        dead = broke | over
        if np.any(dead):
            ok[idx[dead]] = False
        keep = ~(crossed | dead)
        idx = idx[keep]
        z = z1[keep]
        t = t[keep]
        nstep = nstep[keep]
        d0 = d1[keep]
        for s in occ_specs:
            acc[s.name] = acc[s.name][keep]
            cur[s.name] = nxt[s.name][keep]
            if s.mask is not None:
                cur_near[s.name] = nxt_near[s.name][keep]
    return exit_pts, exit_t, occ, steps, ok, clipped


def _run_block(model, r, n, seed, block, occ_specs, step, max_abandon_frac):
    rng = block_rng(seed, block)
    pts, times, occ, steps, ok, clipped = _simulate_block(model, r, n, rng, occ_specs, step)
    abandoned = int(np.sum(~ok))
    total_abandoned = abandoned
    # abandoned paths are resampled from the same block stream
    while abandoned:
        if total_abandoned > max_abandon_frac * n + 1:
            raise SimulationError(f"{total_abandoned} of {n} paths abandoned (step budget or chart guard)")
        miss = np.flatnonzero(~ok)
        p2, t2, o2, s2, ok2, c2 = _simulate_block(model, r, miss.size, rng, occ_specs, step)
        pts[miss], times[miss], steps[miss] = p2, t2, s2
        for name in occ:
            occ[name][miss] = o2[name]
            clipped[name] += c2[name]
        ok[miss] = ok2
        abandoned = int(np.sum(~ok2))
        total_abandoned += abandoned
    return pts, times, occ, steps, total_abandoned, clipped


def run_paths(
    model: ManifoldModel,
    r: float,
    n_paths: int,
    seed: int,
    specs: Sequence[FunctionalSpec] = (),
    step: StepPolicy = StepPolicy(),
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
    max_abandon_frac: float = 0.01,
) -> PathBatch:
    """Simulate ``n_paths`` Brownian paths from o until they leave B_o(r)."""
    if r <= 0:
        raise ValueError("r must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    occ_specs = [s for s in specs if s.kind == "occupation"]
    hit_specs = [s for s in specs if s.kind == "hitting"]
    sizes = [min(block_size, n_paths - b * block_size) for b in range(math.ceil(n_paths / block_size))]

    def work(b):
        return _run_block(model, r, sizes[b], seed, b, occ_specs, step, max_abandon_frac)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(len(sizes))))
    else:
        results = [work(b) for b in range(len(sizes))]

    pts = np.concatenate([res[0] for res in results])
    times = np.concatenate([res[1] for res in results])
    occ = {s.name: np.concatenate([res[2][s.name] for res in results]) for s in occ_specs}
    steps = np.concatenate([res[3] for res in results])
    abandoned = sum(res[4] for res in results)
    clipped = {s.name: sum(res[5][s.name] for res in results) for s in occ_specs}
    if abandoned:
        log.info("resampled %d abandoned paths", abandoned)
    hit = {s.name: np.asarray(s.func(pts), dtype=float) for s in hit_specs}
    return PathBatch(pts, times, occ, hit, steps, abandoned, clipped)


def simulate_exit(
    model: ManifoldModel,
    r: float,
    step: StepPolicy,
    rng_stream: np.random.Generator,
    specs: Sequence[FunctionalSpec] = (),
) -> ExitSample:
    """One path from o to its first exit from B_o(r)."""
    occ_specs = [s for s in specs if s.kind == "occupation"]
    for _ in range(1000):
        pts, times, occ, steps, ok, _ = _simulate_block(model, r, 1, rng_stream, occ_specs, step)
        if ok[0]:
            break
    else:
        raise SimulationError("path abandoned 1000 times")
    sums = {k: float(v[0]) for k, v in occ.items()}
    for s in specs:
        if s.kind == "hitting":
            sums[s.name] = float(np.asarray(s.func(pts))[0])
    return ExitSample(pts[0], float(times[0]), sums, int(steps[0]))


def estimate_occupation(
    model: ManifoldModel,
    phi: FunctionalSpec,
    r: float,
    n_paths: int,
    seed: int,
    step: StepPolicy = StepPolicy(),
    threads: int = 1,
) -> McEstimate:
    """Monte-Carlo ``E_o[int_0^tau_r phi(X_t) dt]``."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    if phi.kind != "occupation":
        phi = FunctionalSpec(phi.name, phi.func, "occupation", phi.mask, phi.mask_radius)
    batch = run_paths(model, r, n_paths, seed, [phi], step, threads)
    return batch.estimate(phi.name)


def estimate_hitting(
    model: ManifoldModel,
    psi: FunctionalSpec,
    r: float,
    n_paths: int,
    seed: int,
    step: StepPolicy = StepPolicy(),
    threads: int = 1,
) -> McEstimate:
    """Monte-Carlo ``E_o[psi(X_tau_r)]``, the harmonic-measure average of psi."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    if psi.kind != "hitting":
        psi = FunctionalSpec(psi.name, psi.func, "hitting")
    batch = run_paths(model, r, n_paths, seed, [psi], step, threads)
    return batch.estimate(psi.name)


def dynkin_residual(
    model: ManifoldModel,
    u: SmoothField,
    r: float,
    n_paths: int,
    seed: int,
    step: StepPolicy = StepPolicy(),
    threads: int = 1,
) -> McEstimate:
    """``E[u(X_tau)] - u(o) - (1/2) E[int_0^tau Delta_M u dt]``, pathwise paired."""
    origin = np.zeros((1, model.m), dtype=complex)
    u0 = float(np.asarray(u.value(origin))[0])
    lap = FunctionalSpec("half_laplacian", lambda z: 0.5 * laplace_beltrami(model, u, z))
    bnd = FunctionalSpec("boundary", lambda z: np.asarray(u.value(z), dtype=float), kind="hitting")
    batch = run_paths(model, r, n_paths, seed, [lap, bnd], step, threads)
    return McEstimate.from_samples(batch.hitting["boundary"] - u0 - batch.occupation["half_laplacian"])


def estimate_green_at(
    model: ManifoldModel,
    x,
    r: float,
    n_paths: int = 20000,
    seed: int = 0,
    radius: float = 0.05,
    step: StepPolicy = StepPolicy(),
) -> McEstimate:
    """Green function ``g_r(o, x)`` from occupation of a small chart ball around x."""
    x = np.asarray(x, dtype=complex).reshape(1, -1)
    m = model.m
    vol = abs(np.linalg.det(metric_at(model, x)[0])) * math.pi ** m * radius ** (2 * m) / math.factorial(m)
    spec = FunctionalSpec("ball", lambda z: (np.linalg.norm(z - x, axis=1) < radius) / vol)
    return estimate_occupation(model, spec, r, n_paths, seed, step)


def propagate(model: ManifoldModel, t_total: float, n_paths: int, seed: int, dt: float = 1e-3) -> np.ndarray:
    """Positions at time ``t_total`` of paths started at o, without absorption."""
    rng = block_rng(seed, 0)
    z = np.zeros((n_paths, model.m), dtype=complex)
    n_steps = max(1, int(round(t_total / dt)))
    h = t_total / n_steps
    sq = np.full(n_paths, math.sqrt(h))
    for _ in range(n_steps):
        xi = rng.standard_normal(z.shape) + 1j * rng.standard_normal(z.shape)
        z = _step(model, z, xi, sq, "recentred")
    return z
