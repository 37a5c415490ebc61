"""Projective target P^m: Fubini-Study bundles, SNC divisors, holomorphic maps."""

from __future__ import annotations

import ast
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .geometry import ManifoldModel, inverse_metric

__all__ = [
    "HomogPoly",
    "LineBundleFS",
    "DivisorComponent",
    "SncDivisor",
    "HoloMap",
    "IndeterminacyError",
    "UnsupportedDivisor",
    "parse_divisor",
    "parse_map",
    "section_norm",
    "divisor_complexity",
    "pullback_chern_density",
    "pullback_fs_hessian",
    "ricci_form_pullback_density",
    "jacobian_det",
    "wronskian",
    "fs_hessian",
    "chart_index",
    "to_chart",
    "random_projective_points",
    "DEFAULT_SCALE",
]

DEFAULT_SCALE = 0.5
INDETERMINACY_GUARD = 1e-8


class IndeterminacyError(ValueError):
    """All homogeneous components of a map vanish (within the guard)."""


class UnsupportedDivisor(ValueError):
    """Divisor outside the certified catalog."""


@dataclass
class HomogPoly:
    """Homogeneous polynomial ``sum_t c_t prod_k w_k^{E[t, k]}``."""

    exponents: np.ndarray  # (T, n_vars) int
    coeffs: np.ndarray     # (T,) complex

    def __post_init__(self):
        self.exponents = np.atleast_2d(np.asarray(self.exponents, dtype=int))
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        degs = self.exponents.sum(axis=1)
        if len(set(degs.tolist())) != 1:
            raise ValueError("polynomial is not homogeneous")

    @property
    def degree(self) -> int:
        return int(self.exponents[0].sum())

    @property
    def n_vars(self) -> int:
        return self.exponents.shape[1]

    @classmethod
    def linear(cls, b: Sequence[complex]) -> "HomogPoly":
        b = np.asarray(b, dtype=complex)
        return cls(np.eye(len(b), dtype=int), b)

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(w)
        mon = np.prod(w[:, None, :] ** self.exponents[None, :, :], axis=2)
        return mon @ self.coeffs

    def grad(self, w: np.ndarray) -> np.ndarray:
        """``(n, n_vars)`` array of partial derivatives."""
        w = np.atleast_2d(w)
        out = np.zeros(w.shape, dtype=complex)
        for v in range(self.n_vars):
            e = self.exponents[:, v]
            sel = e > 0
            if not np.any(sel):
                continue
            ex = self.exponents[sel].copy()
            ex[:, v] -= 1
            mon = np.prod(w[:, None, :] ** ex[None, :, :], axis=2)
            out[:, v] = mon @ (self.coeffs[sel] * e[sel])
        return out

    def to_sympy(self, symbols: Sequence[sp.Symbol]) -> sp.Expr:
        expr = sp.Integer(0)
        for ex, c in zip(self.exponents, self.coeffs):
            term = sp.nsimplify(complex(c).real, rational=True) + sp.I * sp.nsimplify(complex(c).imag, rational=True)
            for s, e in zip(symbols, ex):
                term *= s ** int(e)
            expr += term
        return sp.expand(expr)


@dataclass(frozen=True)
class LineBundleFS:
    """O(degree) on P^m with the Fubini-Study metric; ``scale`` multiplies section norms."""

    degree: int
    scale: float = DEFAULT_SCALE
    c1_factor: float = 1.0  # multiplies the Chern form (linearity probes only)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if not 0 < self.scale < 1:
            raise ValueError("scale must lie in (0, 1)")


@dataclass
class DivisorComponent:
    poly: HomogPoly
    label: str
    norm_const: float = 1.0  # sup of |P(w)| / |w|^d over P^m

    @property
    def degree(self) -> int:
        return self.poly.degree


@dataclass
class SncDivisor:
    m: int
    components: list[DivisorComponent]
    certificate: Optional[str] = None
    scale: float = DEFAULT_SCALE
    config_id: str = ""

    @property
    def q(self) -> int:
        return len(self.components)

    @property
    def degree(self) -> int:
        return sum(c.degree for c in self.components)

    def bundle(self) -> LineBundleFS:
        return LineBundleFS(self.degree, self.scale)

    def subdivisor(self, indices: Sequence[int]) -> "SncDivisor":
        comps = [self.components[i] for i in indices]
        return SncDivisor(self.m, comps, self.certificate, self.scale, f"{self.config_id}#{list(indices)}")


def _parse_complex_token(tok: str) -> Optional[complex]:
    tok = tok.strip().replace(" ", "")
    if tok.lower() in ("inf", "infinity", "∞"):
        return None
    return complex(tok.replace("i", "j")) if "j" not in tok else complex(tok)


def _point_component(a: Optional[complex], label: str) -> DivisorComponent:
    hom = np.array([0.0, 1.0], dtype=complex) if a is None else np.array([1.0, a], dtype=complex)
    hom /= np.linalg.norm(hom)
    b = np.array([-hom[1], hom[0]])  # P(w) = a0 w1 - a1 w0
    return DivisorComponent(HomogPoly.linear(b), label, 1.0)


def _general_position(vectors: np.ndarray) -> bool:
    n, dim = vectors.shape
    for size in range(1, min(n, dim) + 1):
        for sub in itertools.combinations(range(n), size):
            if np.linalg.matrix_rank(vectors[list(sub)], tol=1e-9) < size:
                return False
    return True


def parse_divisor(text: str, scale: float = DEFAULT_SCALE) -> SncDivisor:
    """Parse a divisor catalog id.

    ``p1:points=[0,inf,1]``, ``p<m>:lines=[[b0,..,bm],...]``, ``p<m>:coord``,
    ``p<m>:fermat=<d>``.
    """
    text = text.strip()
    match = re.match(r"^p(\d+):(\w+)(?:=(.*))?$", text)
    if match is None:
        raise ValueError(f"malformed divisor id {text!r}")
    m, kind, arg = int(match.group(1)), match.group(2), match.group(3)
    if m < 1:
        raise ValueError("projective dimension must be >= 1")
    comps: list[DivisorComponent] = []
    if kind == "points":
        if m != 1:
            raise ValueError("points divisors live on p1")
        if not arg or not (arg.startswith("[") and arg.endswith("]")):
            raise ValueError(f"malformed point list in {text!r}")
        toks = [t for t in arg[1:-1].split(",") if t.strip()]
        if not toks:
            raise ValueError("empty point list")
        try:
            pts = [_parse_complex_token(t) for t in toks]
        except ValueError as exc:
            raise ValueError(f"malformed point in {text!r}: {exc}") from None
        for t, a in zip(toks, pts):
            comps.append(_point_component(a, t.strip()))
        vecs = np.array([c.poly.coeffs for c in comps])
        if not _general_position(vecs):
            raise ValueError("divisor points must be distinct")
        cert = "distinct points on P1"
    elif kind in ("lines", "hyperplanes"):
        try:
            rows = ast.literal_eval(arg) if arg else None
        except (ValueError, SyntaxError):
            raise ValueError(f"malformed hyperplane list in {text!r}") from None
        if not rows or any(len(r) != m + 1 for r in rows):
            raise ValueError(f"hyperplanes in p{m} need {m + 1} coefficients each")
        vecs = np.array(rows, dtype=complex)
        for i, b in enumerate(vecs):
            if np.linalg.norm(b) == 0:
                raise ValueError("zero hyperplane")
            comps.append(DivisorComponent(HomogPoly.linear(b), f"H{i}", float(np.linalg.norm(b))))
        if not _general_position(vecs):
            raise UnsupportedDivisor("hyperplanes are not in general position (no SNC certificate)")
        cert = "hyperplanes in general position"
    elif kind == "coord":
        for i in range(m + 1):
            b = np.zeros(m + 1)
            b[i] = 1.0
            comps.append(DivisorComponent(HomogPoly.linear(b), f"w{i}", 1.0))
        cert = "coordinate hyperplanes"
    elif kind == "fermat":
        try:
            d = int(arg)
        except (TypeError, ValueError):
            raise ValueError(f"malformed fermat degree in {text!r}") from None
        if d < 1:
            raise ValueError("fermat degree must be >= 1")
        ex = d * np.eye(m + 1, dtype=int)
        comps.append(DivisorComponent(HomogPoly(ex, np.ones(m + 1)), f"fermat{d}", 1.0))
        cert = "smooth Fermat hypersurface"
    else:
        raise ValueError(f"unknown divisor kind {kind!r}")
    return SncDivisor(m, comps, cert, scale, text)


def section_norm(D: SncDivisor, j: int, w: np.ndarray) -> np.ndarray:
    """Scaled Fubini-Study norm of the canonical section of component j at w."""
    if not 0 <= j < D.q:
        raise IndexError(f"component index {j} out of range")
    comp = D.components[j]
    w = np.atleast_2d(np.asarray(w, dtype=complex))
    nw = np.linalg.norm(w, axis=1)
    return D.scale * np.abs(comp.poly(w)) / (comp.norm_const * nw ** comp.degree)


def divisor_complexity(D: SncDivisor) -> int:
    """Max number of components through one point, capped at m."""
    if D.certificate is None:
        raise UnsupportedDivisor("divisor has no SNC certificate")
    if all(c.degree == 1 for c in D.components):
        vecs = np.array([c.poly.coeffs for c in D.components])
        k = 0
        for size in range(1, min(D.q, D.m + 1) + 1):
            for sub in itertools.combinations(range(D.q), size):
                if np.linalg.matrix_rank(vecs[list(sub)], tol=1e-9) <= D.m:
                    k = max(k, size)
        return min(k, D.m)
    if D.q == 1:
        return 1
    raise UnsupportedDivisor("complexity is certified only for linear arrangements and single hypersurfaces")


# ---------------------------------------------------------------- P^m charts


def chart_index(w: np.ndarray) -> np.ndarray:
    return np.argmax(np.abs(w), axis=1)


def to_chart(w: np.ndarray, k: int) -> np.ndarray:
    w = np.atleast_2d(w)
    rest = [i for i in range(w.shape[1]) if i != k]
    return w[:, rest] / w[:, k : k + 1]


def fs_hessian(zeta: np.ndarray) -> np.ndarray:
    """``d dbar log(1 + |zeta|^2)`` in an affine chart, shape (n, m, m)."""
    zeta = np.atleast_2d(zeta)
    rho = np.sum(np.abs(zeta) ** 2, axis=1)
    m = zeta.shape[1]
    return np.eye(m)[None] / (1 + rho)[:, None, None] - np.conj(zeta)[:, :, None] * zeta[:, None, :] / ((1 + rho) ** 2)[:, None, None]


def random_projective_points(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal((n, m + 1)) + 1j * rng.standard_normal((n, m + 1))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


# ------------------------------------------------------------------- maps


@dataclass
class HoloMap:
    """Holomorphic map M -> P^m given by a homogeneous lift ``F = (F_0, ..., F_m)``.

    ``F`` maps ``(n, m)`` chart points to ``(n, m+1)``; ``dF`` returns the
    ``(n, m+1, m)`` array ``dF_k / dz_j``. ``sym`` (optional) holds sympy
    expressions of F, used for exact zero-divisor manipulations.
    """

    m: int
    F: Callable[[np.ndarray], np.ndarray]
    dF: Callable[[np.ndarray], np.ndarray]
    model: ManifoldModel
    name: str = ""
    sym: Optional[list] = field(default=None, repr=False)
    symbols: Optional[list] = field(default=None, repr=False)
    entire_kind: str = "polynomial"  # or "exp"
    poly_coeffs: Optional[np.ndarray] = field(default=None, repr=False)

    def lift(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=complex))
        F = self.F(z)
        if np.any(np.linalg.norm(F, axis=1) < INDETERMINACY_GUARD):
            raise IndeterminacyError(f"indeterminacy point of {self.name}")
        return F

    def __call__(self, z: np.ndarray) -> np.ndarray:
        """Unit-normalised homogeneous image points."""
        F = self.lift(z)
        return F / np.linalg.norm(F, axis=1, keepdims=True)

    def certify_nondegenerate(self, rng: np.random.Generator, n: int = 100, radius: float = 0.9) -> bool:
        v = rng.standard_normal((n, self.m)) + 1j * rng.standard_normal((n, self.m))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        z = v * rng.uniform(0.05, radius, size=(n, 1))
        return bool(np.all(np.abs(wronskian(self, z)) > 0))


def _one_var_map(model, name, f, df, sym_expr, kind, coeffs=None) -> HoloMap:
    def F(z):
        z0 = z[:, 0]
        return np.stack([np.ones_like(z0), f(z0)], axis=1)

    def dF(z):
        z0 = z[:, 0]
        return np.stack([np.zeros_like(z0), df(z0)], axis=1)[:, :, None]

    zs = sp.Symbol("z1")
    return HoloMap(1, F, dF, model, name, [sp.Integer(1), sym_expr(zs)], [zs], kind, coeffs)


def parse_map(text: str, model: ManifoldModel) -> HoloMap:
    """Parse a map catalog id: ``id``, ``exp``, ``poly:[c0,c1,...]`` (m = 1),
    ``poly<m>:p1;...;pm`` (sympy expressions in z1..zm, lift ``[1:p1:...:pm]``).
    An optional ``map:`` prefix is accepted.
    """
    text = text.strip()
    body = text[4:] if text.startswith("map:") else text
    if body in ("id", "exp") or body.startswith("poly:"):
        if model.m != 1:
            raise ValueError(f"map {body!r} is equi-dimensional only for m = 1")
    if body == "id":
        return _one_var_map(model, text, lambda z: z, lambda z: np.ones_like(z), lambda s: s, "polynomial", np.array([0, 1]))
    if body == "exp":
        return _one_var_map(model, text, np.exp, np.exp, sp.exp, "exp")
    if body.startswith("poly:"):
        try:
            coeffs = np.array([complex(c) for c in ast.literal_eval(body[5:])], dtype=complex)
        except (ValueError, SyntaxError, TypeError):
            raise ValueError(f"malformed polynomial coefficients in {text!r}") from None
        coeffs = np.trim_zeros(coeffs, "b")
        if coeffs.size < 2:
            raise ValueError("constant map is degenerate")
        der = coeffs[1:] * np.arange(1, coeffs.size)
        rev, drev = coeffs[::-1], der[::-1]

        def sym_expr(s):
            return sum(sp.nsimplify(c.real) * s ** k + sp.I * sp.nsimplify(c.imag) * s ** k for k, c in enumerate(coeffs))

        return _one_var_map(model, text, lambda z: np.polyval(rev, z), lambda z: np.polyval(drev, z), sym_expr, "polynomial", coeffs)
    match = re.match(r"^poly(\d+):(.*)$", body)
    if match:
        m = int(match.group(1))
        if m != model.m:
            raise ValueError(f"map {text!r} needs a domain of dimension {m}")
        parts = match.group(2).split(";")
        if len(parts) != m:
            raise ValueError(f"poly{m} needs {m} expressions")
        syms = sp.symbols(" ".join(f"z{i + 1}" for i in range(m)))
        syms = list(syms) if m > 1 else [syms]
        try:
            exprs = [sp.Integer(1)] + [sp.sympify(p, locals={str(s): s for s in syms}) for p in parts]
        except (sp.SympifyError, SyntaxError, TypeError):
            raise ValueError(f"malformed polynomial in {text!r}") from None
        for e in exprs:
            if not e.free_symbols <= set(syms) or not e.is_polynomial(*syms):
                raise ValueError(f"{e} is not a polynomial in {syms}")
        fn = sp.lambdify([syms], exprs, "numpy")
        jac = [[sp.diff(e, s) for s in syms] for e in exprs]
        jfn = sp.lambdify([syms], jac, "numpy")

        def F(z):
            cols = [z[:, i] for i in range(m)]
            return np.stack([np.broadcast_to(np.asarray(v, dtype=complex), z.shape[:1]) for v in fn(cols)], axis=1)

        def dF(z):
            cols = [z[:, i] for i in range(m)]
            rows = jfn(cols)
            return np.stack(
                [np.stack([np.broadcast_to(np.asarray(v, dtype=complex), z.shape[:1]) for v in row], axis=1) for row in rows],
                axis=1,
            )

        return HoloMap(m, F, dF, model, text, exprs, syms, "polynomial")
    raise ValueError(f"unknown map id {text!r}")


def wronskian(f: HoloMap, z: np.ndarray) -> np.ndarray:
    """``det[F, dF/dz_1, ..., dF/dz_m]``; vanishes exactly on Ram_f."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    F = f.lift(z)
    mat = np.concatenate([F[:, :, None], f.dF(z)], axis=2)
    return np.linalg.det(mat)


def jacobian_det(f: HoloMap, z: np.ndarray, chart: Optional[int] = None) -> np.ndarray:
    """Holomorphic Jacobian determinant of f in an affine chart of P^m.

    The chart is the one of the largest homogeneous coordinate unless given.
    """
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    F = f.lift(z)
    dF = f.dF(z)
    ks = chart_index(F) if chart is None else np.full(len(z), chart)
    out = np.empty(len(z), dtype=complex)
    for i, k in enumerate(ks):
        Fk = F[i, k]
        if abs(Fk) < INDETERMINACY_GUARD:
            raise IndeterminacyError("chart coordinate vanishes")
        rest = [j for j in range(f.m + 1) if j != k]
        J = (dF[i, rest, :] * Fk - F[i, rest, None] * dF[i, k, None, :]) / Fk ** 2
        out[i] = np.linalg.det(J)
    return out


def pullback_fs_hessian(f: HoloMap, z: np.ndarray) -> np.ndarray:
    """``d_i dbar_j log |F|^2``, the pullback of the FS form, shape (n, m, m)."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    F = f.lift(z)
    dF = f.dF(z)  # (n, m+1, m)
    nF = np.sum(np.abs(F) ** 2, axis=1)
    inner = np.einsum("nki,nkj->nij", dF, np.conj(dF))       # <d_i F, d_j F>
    a = np.einsum("nki,nk->ni", dF, np.conj(F))               # <d_i F, F>
    return inner / nF[:, None, None] - a[:, :, None] * np.conj(a)[:, None, :] / (nF ** 2)[:, None, None]


def pullback_chern_density(f: HoloMap, L: LineBundleFS, z: np.ndarray) -> np.ndarray:
    """``e_{f* c1(L,h)} = -(1/2) Delta_M log(h o f) = 2 d tr(G^{-1} H_F)``."""
    z = np.atleast_2d(np.asarray(z, dtype=complex))
    H = pullback_fs_hessian(f, z)
    inv = inverse_metric(f.model, z)
    return 2.0 * L.degree * L.c1_factor * np.real(np.einsum("nij,nji->n", inv, H))


def ricci_form_pullback_density(f: HoloMap, z: np.ndarray) -> np.ndarray:
    """``e_{f* c1(K_V)}`` for V = P^m, where ``c1(K_V) = -(m+1) FS``."""
    return -(f.m + 1) * pullback_chern_density(f, LineBundleFS(1), z)
