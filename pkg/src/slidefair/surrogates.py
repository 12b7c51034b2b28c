"""Scalar relaxations of the indicator ``I(z > 0)``.

All functions are vectorised over ``z``.  Subgradients at kink points are 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("indicator", "hinge", "slide", "opposite_slide", "psi", "linear")
_NEEDS_TAU = {"slide", "opposite_slide", "psi"}


class InvalidSurrogateError(ValueError):
    pass


@dataclass(frozen=True)
class SurrogateSpec:
    kind: str = "slide"
    tau: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSurrogateError(f"unknown surrogate kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in _NEEDS_TAU and not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidSurrogateError(f"{self.kind} requires tau > 0, got {self.tau!r}")

    @property
    def bounded(self) -> bool:
        return self.kind in ("indicator", "slide", "opposite_slide", "psi")

    def with_tau(self, tau: float) -> "SurrogateSpec":
        return SurrogateSpec(self.kind, float(tau))

    def value(self, z):
        return surrogate_value(self, z)

    def grad(self, z):
        return surrogate_grad(self, z)


def surrogate_value(spec: SurrogateSpec, z):
    z = np.asarray(z, dtype=float)
    kind, tau = spec.kind, spec.tau
    if kind == "indicator":
        return (z > 0).astype(float)
    if kind == "hinge":
        return np.maximum(1.0 + z, 0.0)
    if kind == "linear":
        return z.copy()
    if kind == "slide":
        return np.where(z > tau, 1.0, np.where(z > 0, z / tau, 0.0))
    # opposite_slide and psi share one formula: the slide ramp shifted left by tau
    return np.where(z > 0, 1.0, np.where(z > -tau, 1.0 + z / tau, 0.0))


def surrogate_grad(spec: SurrogateSpec, z):
    z = np.asarray(z, dtype=float)
    kind, tau = spec.kind, spec.tau
    if kind == "indicator":
        return np.zeros_like(z)
    if kind == "hinge":
        return (z > -1.0).astype(float)
    if kind == "linear":
        return np.ones_like(z)
    if kind == "slide":
        return np.where((z > 0) & (z < tau), 1.0 / tau, 0.0)
    return np.where((z > -tau) & (z < 0), 1.0 / tau, 0.0)


def slide_convex_part(z, tau: float):
    """``(z)_+ / tau``; ``slide = convex_part - concave_part`` with both parts convex."""
    return np.maximum(np.asarray(z, dtype=float), 0.0) / tau


def slide_concave_part(z, tau: float):
    """``(z - tau)_+ / tau`` (enters the SLIDE function with a minus sign)."""
    return np.maximum(np.asarray(z, dtype=float) - tau, 0.0) / tau


def parse_surrogate(kind: str, tau=None) -> SurrogateSpec:
    return SurrogateSpec(kind.strip().lower(), 0.1 if tau is None else float(tau))
