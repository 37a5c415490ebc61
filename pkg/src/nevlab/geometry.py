"""Model Kähler manifolds with a global chart.

Conventions
-----------
A model carries a Hermitian matrix ``G[i, j] = g_{i jbar}`` such that the
Riemannian metric is ``ds^2 = Re sum G[i, j] dz_i dzbar_j`` (so the flat
model has ``G = I`` and ``ds^2 = |dz|^2``). The Laplace-Beltrami operator
of a Kähler metric has no first-order part in holomorphic coordinates::

    Delta_M u = 4 * tr(G^{-1} H),   H[i, j] = d^2 u / dz_i dzbar_j

Shipped models (``curvature_scale`` = c multiplies distances, i.e. the metric
is ``c^2 G``):

* ``FlatCm``                 ``G = I``
* ``PoincareDisk``           ``G = 4 / (1 - |z|^2)^2``, Gauss curvature -1
* ``ComplexHyperbolicBall``  ``G = dd log 1/(1-|z|^2)``, holomorphic
  sectional curvature -4

The base point o is the chart origin.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma as gamma_fn

__all__ = [
    "ModelKind",
    "ManifoldModel",
    "SmoothField",
    "parse_model",
    "metric_at",
    "inverse_metric",
    "diffusion_factor",
    "ricci_lower_bound",
    "kappa_profile",
    "distance_to_base",
    "chart_radius_of",
    "sphere_area",
    "scalar_curvature",
    "laplace_beltrami",
    "complex_hessian_fd",
    "unit_sphere_volume",
    "random_chart_points",
]


class ModelKind(str, enum.Enum):
    FLAT = "flat"
    POINCARE = "poincare"
    CHBALL = "chball"


class DomainError(ValueError):
    """Point outside the chart domain of a model."""


@dataclass(frozen=True)
class ManifoldModel:
    kind: ModelKind
    m: int = 1
    curvature_scale: float = 1.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("complex dimension must be >= 1")
        if self.kind is ModelKind.POINCARE and self.m != 1:
            raise ValueError("PoincareDisk requires m = 1")
        if not self.curvature_scale > 0:
            raise ValueError("curvature_scale must be positive")

    @property
    def chart_radius(self) -> float:
        return math.inf if self.kind is ModelKind.FLAT else 1.0

    @property
    def config_id(self) -> str:
        base = {
            ModelKind.FLAT: f"flat:{self.m}",
            ModelKind.POINCARE: "poincare",
            ModelKind.CHBALL: f"chball:{self.m}",
        }[self.kind]
        if self.curvature_scale != 1.0:
            base += f":scale={self.curvature_scale!r}"
        return base

    @classmethod
    def flat(cls, m: int = 1, scale: float = 1.0) -> "ManifoldModel":
        return cls(ModelKind.FLAT, m, scale)

    @classmethod
    def poincare(cls, scale: float = 1.0) -> "ManifoldModel":
        return cls(ModelKind.POINCARE, 1, scale)

    @classmethod
    def chball(cls, m: int = 1, scale: float = 1.0) -> "ManifoldModel":
        return cls(ModelKind.CHBALL, m, scale)


_MODEL_RE = re.compile(r"^(flat|poincare|chball)(?::(\d+))?(?::scale=([^:]+))?$")


def parse_model(text: str) -> ManifoldModel:
    """Parse ``flat:m``, ``poincare``, ``chball:m`` with optional ``:scale=x``."""
    match = _MODEL_RE.match(text.strip())
    if match is None:
        raise ValueError(f"malformed model id {text!r}")
    kind, m, scale = match.groups()
    kind = ModelKind(kind)
    if kind is ModelKind.POINCARE:
        if m not in (None, "1"):
            raise ValueError("poincare takes no dimension (m = 1)")
        m = 1
    elif m is None:
        raise ValueError(f"model {kind.value!r} needs a dimension, e.g. {kind.value}:2")
    return ManifoldModel(kind, int(m), float(scale) if scale else 1.0)


def _as_points(p) -> np.ndarray:
    z = np.asarray(p, dtype=complex)
    if z.ndim == 0:
        z = z.reshape(1)
    return z


def _check_domain(model: ManifoldModel, z: np.ndarray) -> np.ndarray:
    rho = np.sum(np.abs(z) ** 2, axis=-1)
    if not np.all(np.isfinite(rho)):
        raise DomainError("non-finite chart point")
    if model.kind is not ModelKind.FLAT and np.any(rho >= 1.0):
        raise DomainError("point outside the unit-ball chart")
    return rho


def metric_at(model: ManifoldModel, p) -> np.ndarray:
    """Hermitian metric matrix ``g_{i jbar}`` at a chart point (or a batch).

    ``p`` has shape ``(m,)`` or ``(n, m)``; the result has shape ``(m, m)``
    or ``(n, m, m)``.
    """
    z = _as_points(p)
    rho = _check_domain(model, z)
    m = model.m
    if z.shape[-1] != m:
        raise ValueError(f"expected {m} complex coordinates, got {z.shape[-1]}")
    eye = np.eye(m, dtype=complex)
    c2 = model.curvature_scale ** 2
    if model.kind is ModelKind.FLAT:
        g = np.broadcast_to(eye, z.shape[:-1] + (m, m)).copy()
    elif model.kind is ModelKind.POINCARE:
        g = (4.0 / (1.0 - rho) ** 2)[..., None, None] * eye
    else:
        w = 1.0 - rho
        g = eye / w[..., None, None] + np.conj(z)[..., :, None] * z[..., None, :] / (w ** 2)[..., None, None]
    return c2 * g


def inverse_metric(model: ManifoldModel, p) -> np.ndarray:
    """Closed-form ``G^{-1}``, same shapes as :func:`metric_at`."""
    z = _as_points(p)
    rho = _check_domain(model, z)
    m = model.m
    eye = np.eye(m, dtype=complex)
    c2 = model.curvature_scale ** 2
    if model.kind is ModelKind.FLAT:
        inv = np.broadcast_to(eye, z.shape[:-1] + (m, m)).copy()
    elif model.kind is ModelKind.POINCARE:
        inv = ((1.0 - rho) ** 2 / 4.0)[..., None, None] * eye
    else:
        inv = (1.0 - rho)[..., None, None] * (eye - np.conj(z)[..., :, None] * z[..., None, :])
    return inv / c2


def diffusion_factor(model: ManifoldModel, z: np.ndarray) -> np.ndarray:
    """Matrix S with ``S S^* = conj(G^{-1})`` for a batch ``z`` of shape (n, m).

    Brownian motion generated by Delta_M / 2 is ``dZ = S dW`` with W a standard
    complex Brownian motion (``E|dW_i|^2 = 2 dt``).
    """
    rho = np.sum(np.abs(z) ** 2, axis=-1)
    m = model.m
    c = model.curvature_scale
    eye = np.eye(m, dtype=complex)
    if model.kind is ModelKind.FLAT:
        return np.broadcast_to(eye / c, z.shape[:-1] + (m, m))
    if model.kind is ModelKind.POINCARE:
        return ((1.0 - rho) / (2.0 * c))[..., None, None] * eye
    w = 1.0 - rho
    sw = np.sqrt(w)
    # Hermitian square root of w (I - z z^*): eigenvalue w along z, 1 elsewhere.
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(rho > 1e-300, (1.0 - sw) / rho, 0.5)
    proj = z[..., :, None] * np.conj(z)[..., None, :]
    return (sw / c)[..., None, None] * (eye - coef[..., None, None] * proj)


def distance_to_base(model: ManifoldModel, p) -> np.ndarray | float:
    """Geodesic distance from the chart origin."""
    z = _as_points(p)
    rho = _check_domain(model, z)
    t = np.sqrt(rho)
    c = model.curvature_scale
    if model.kind is ModelKind.FLAT:
        d = c * t
    elif model.kind is ModelKind.POINCARE:
        d = 2.0 * c * np.arctanh(t)
    else:
        d = c * np.arctanh(t)
    return float(d) if np.ndim(d) == 0 else d


def radial_distance(model: ManifoldModel, t: np.ndarray) -> np.ndarray:
    """Geodesic distance as a function of the chart modulus ``|z|``."""
    c = model.curvature_scale
    if model.kind is ModelKind.FLAT:
        return c * t
    with np.errstate(divide="ignore"):
        if model.kind is ModelKind.POINCARE:
            return 2.0 * c * np.arctanh(t)
        return c * np.arctanh(t)


def chart_radius_of(model: ManifoldModel, r: float) -> float:
    """Chart modulus ``|z|`` of the geodesic sphere S_o(r)."""
    if r < 0:
        raise ValueError("negative radius")
    c = model.curvature_scale
    if model.kind is ModelKind.FLAT:
        return r / c
    if model.kind is ModelKind.POINCARE:
        return math.tanh(r / (2.0 * c))
    return math.tanh(r / c)


def unit_sphere_volume(n_real: int) -> float:
    """Volume of the unit sphere in R^n (n = 2m gives omega_{2m-1})."""
    return 2.0 * math.pi ** (n_real / 2) / gamma_fn(n_real / 2)


def sphere_area(model: ManifoldModel, t):
    """Riemannian area of the geodesic sphere S_o(t)."""
    t = np.asarray(t, dtype=float)
    m, c = model.m, model.curvature_scale
    omega = unit_sphere_volume(2 * m)
    if model.kind is ModelKind.FLAT:
        return omega * t ** (2 * m - 1)
    if model.kind is ModelKind.POINCARE:
        return 2.0 * math.pi * c * np.sinh(t / c)
    u = t / c
    return omega * c ** (2 * m - 1) * np.sinh(u) ** (2 * m - 1) * np.cosh(u)


def ricci_lower_bound(model: ManifoldModel, p) -> float:
    """Pointwise lower bound of the Riemannian Ricci curvature at ``p``.

    All shipped models are homogeneous, so the value does not depend on p.
    """
    _check_domain(model, _as_points(p))
    c2 = model.curvature_scale ** 2
    if model.kind is ModelKind.FLAT:
        return 0.0
    if model.kind is ModelKind.POINCARE:
        return -1.0 / c2
    return -2.0 * (model.m + 1) / c2


def kappa_profile(model: ManifoldModel, t: float) -> float:
    """(1/(2m-1)) times the minimum of the Ricci lower bound over B_o(t)."""
    if t < 0:
        raise ValueError("negative radius")
    origin = np.zeros(model.m, dtype=complex)
    return ricci_lower_bound(model, origin) / (2 * model.m - 1)


def scalar_curvature(model: ManifoldModel, p) -> float:
    """``s_M = tr(G^{-1} Ric) = -(1/4) Delta_M log det G``.

    This is the Kähler-normalised scalar curvature, equal to half the
    Riemannian scalar curvature: -1/2 on the Poincaré disk, -m(m+1) on the
    ball model.
    """
    _check_domain(model, _as_points(p))
    c2 = model.curvature_scale ** 2
    if model.kind is ModelKind.FLAT:
        return 0.0
    if model.kind is ModelKind.POINCARE:
        return -0.5 / c2
    return -float(model.m * (model.m + 1)) / c2


@dataclass
class SmoothField:
    """A real field on the chart with an optional analytic complex Hessian.

    ``value`` maps an ``(n, m)`` complex array to ``(n,)`` reals;
    ``complex_hessian`` (optional) maps it to ``(n, m, m)`` Hermitian arrays.
    """

    value: Callable[[np.ndarray], np.ndarray]
    complex_hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def hessian(self, z: np.ndarray) -> np.ndarray:
        if self.complex_hessian is not None:
            return self.complex_hessian(z)
        return complex_hessian_fd(self.value, z)


def complex_hessian_fd(u: Callable[[np.ndarray], np.ndarray], z: np.ndarray) -> np.ndarray:
    """Central-difference complex Hessian ``d^2 u / dz_i dzbar_j``.

    Step ``h = 1e-4 (1 + |z|)``. Built from the real Hessian in (x, y) via
    ``H = (1/4) [(u_xx + u_yy) + i (u_xy - u_yx)]`` blockwise.
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    n, m = z.shape
    h = 1e-4 * (1.0 + np.linalg.norm(z, axis=1))
    x = np.concatenate([z.real, z.imag], axis=1)

    def f(xx):
        return np.asarray(u(xx[:, :m] + 1j * xx[:, m:]), dtype=float)

    dim = 2 * m
    f0 = f(x)
    hess = np.empty((n, dim, dim))
    basis = np.eye(dim)
    for a in range(dim):
        ea = basis[a] * h[:, None]
        hess[:, a, a] = (f(x + ea) - 2.0 * f0 + f(x - ea)) / h ** 2
        for b in range(a + 1, dim):
            eb = basis[b] * h[:, None]
            val = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4.0 * h ** 2)
            hess[:, a, b] = hess[:, b, a] = val
    xx_ = hess[:, :m, :m]
    yy_ = hess[:, m:, m:]
    xy_ = hess[:, :m, m:]
    # d_i dbar_j = 1/4 (dx_i - i dy_i)(dx_j + i dy_j)
    return 0.25 * ((xx_ + yy_) + 1j * (xy_ - xy_.transpose(0, 2, 1)))


def laplace_beltrami(model: ManifoldModel, u: SmoothField, p) -> np.ndarray | float:
    """Delta_M u at a chart point or batch of points."""
    z = np.asarray(p, dtype=complex)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    inv = inverse_metric(model, z)
    H = u.hessian(z)
    lap = 4.0 * np.real(np.einsum("nij,nji->n", inv, H))
    return float(lap[0]) if single else lap


def random_chart_points(model: ManifoldModel, n: int, rng: np.random.Generator, max_dist: float = 3.0) -> np.ndarray:
    """Points with geodesic distance uniform in [0, max_dist) and isotropic direction."""
    v = rng.standard_normal((n, model.m)) + 1j * rng.standard_normal((n, model.m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    d = rng.uniform(0.0, max_dist, size=n)
    t = np.array([chart_radius_of(model, di) for di in d])
    return v * t[:, None]
