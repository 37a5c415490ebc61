"""nevlab: Nevanlinna theory on complete Kähler manifolds, checked numerically through Brownian motion."""

__version__ = "0.1.0"
