"""Experiment configuration: flat ``section.key = value`` text, round-trippable and hashable."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
import sympy as sp


class ConfigError(ValueError):
    """Malformed configuration text or value."""


# key in the text format -> (attribute, type)
_KEYS = {
    "experiment.model": ("model", str),
    "experiment.map": ("map", str),
    "experiment.divisor": ("divisor", str),
    "experiment.degree": ("degree", "optint"),
    "experiment.method": ("method", str),
    "grid.r_min": ("r_min", float),
    "grid.r_max": ("r_max", float),
    "grid.count": ("r_count", int),
    "grid.spacing": ("r_spacing", str),
    "mc.n_paths": ("n_paths", int),
    "mc.seed": ("seed", "optint"),
    "mc.dt0": ("dt0", "optfloat"),
    "fmt.tol": ("fmt_tol", float),
    "ode.kappas": ("ode_kappas", str),
    "ode.r_max": ("ode_r_max", float),
    "ode.tol": ("ode_tol", float),
    "bm.radii": ("bm_radii", str),
    "bm.bins": ("bm_bins", int),
    "bm.hm_paths": ("bm_hm_paths", int),
    "smt.exceptional": ("smt_exceptional", float),
    "smt.safety": ("smt_safety", float),
    "smt.delta": ("smt_delta", float),
    "smt.lambdas": ("smt_lambdas", str),
    "smt.constants": ("smt_constants", str),
    "defect.r_max": ("defect_r_max", float),
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "flat:1"
    map: str = "id"
    divisor: str = "p1:points=[1]"
    degree: Optional[int] = None
    method: str = "quadrature"
    r_min: float = 2.0
    r_max: float = 50.0
    r_count: int = 20
    r_spacing: str = "log"
    n_paths: int = 10_000
    seed: Optional[int] = None
    dt0: Optional[float] = None
    fmt_tol: float = 0.1
    ode_kappas: str = "0; -1; -4; -1/(1+t)**2"
    ode_r_max: float = 10.0
    ode_tol: float = 1e-10
    bm_radii: str = "1, 2, 4"
    bm_bins: int = 64
    bm_hm_paths: int = 100_000
    smt_exceptional: float = 0.05
    smt_safety: float = 2.0
    smt_delta: float = 0.1
    smt_lambdas: str = "0.5, 0.1, 0.02"
    smt_constants: str = ""
    defect_r_max: float = 30.0

    def __post_init__(self):
        if self.method not in ("quadrature", "mc"):
            raise ConfigError(f"experiment.method must be quadrature or mc, not {self.method!r}")
        if self.r_spacing not in ("log", "linear"):
            raise ConfigError("grid.spacing must be log or linear")
        if not (0 < self.r_min < self.r_max) or self.r_count < 2:
            raise ConfigError("grid needs 0 < r_min < r_max and count >= 2")
        if self.n_paths < 2:
            raise ConfigError("mc.n_paths must be >= 2")
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise ConfigError("mc.seed must be a 64-bit unsigned integer")
        if self.degree is not None and self.degree < 1:
            raise ConfigError("experiment.degree must be positive")

    # ----------------------------------------------------------- derived

    def r_grid(self) -> np.ndarray:
        if self.r_spacing == "log":
            return np.geomspace(self.r_min, self.r_max, self.r_count)
        return np.linspace(self.r_min, self.r_max, self.r_count)

    def radii(self) -> list[float]:
        return _float_list(self.bm_radii, "bm.radii")

    def lambdas(self) -> list[float]:
        return _float_list(self.smt_lambdas, "smt.lambdas")

    def kappas(self) -> list[tuple[str, callable]]:
        """Curvature profiles as ``(label, callable)`` parsed from sympy expressions in t."""
        t = sp.Symbol("t", real=True)
        out = []
        for text in self.ode_kappas.split(";"):
            text = text.strip()
            if not text:
                continue
            try:
                expr = sp.sympify(text, locals={"t": t})
            except (sp.SympifyError, SyntaxError, TypeError):
                raise ConfigError(f"cannot parse kappa expression {text!r}") from None
            if not expr.free_symbols <= {t}:
                raise ConfigError(f"kappa expression {text!r} may only depend on t")
            fn = sp.lambdify(t, expr, "math")
            out.append((text, lambda x, fn=fn: float(fn(x))))
        if not out:
            raise ConfigError("ode.kappas is empty")
        return out

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is mandatory for Monte-Carlo runs (mc.seed or --seed)")
        return self.seed

    # ------------------------------------------------------- text format

    def dumps(self) -> str:
        lines = []
        for key in sorted(_KEYS):
            attr, _ = _KEYS[key]
            val = getattr(self, attr)
            lines.append(f"{key} = {_fmt(val)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = re.sub(r"(^|\s)#.*$", "", raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in _KEYS:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            attr, typ = _KEYS[key]
            kw[attr] = _parse(val, typ, key)
        return cls(**kw)

    def config_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:12]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _fmt(val) -> str:
    if val is None:
        return "none"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _parse(val: str, typ, key: str):
    try:
        if typ == "optint":
            return None if val.lower() in ("none", "auto", "") else int(val)
        if typ == "optfloat":
            return None if val.lower() in ("none", "auto", "") else float(val)
        return typ(val)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r}") from None


def _float_list(text: str, key: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers") from None
