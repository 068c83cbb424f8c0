"""Homogeneous risk functionals ``r`` and the exceedance regions ``{r(x/u) > 1}``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMOOTH_MAX_EXPONENT = 20.0
_DIFFERENTIABLE = {"sum", "power_sum", "smooth_max"}


class NotDifferentiableError(ValueError):
    """The requested operation needs a differentiable risk functional."""


@dataclass(frozen=True)
class RiskFunctional:
    kind: str
    exponent: float | None = None
    index: int | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in {"sum", "power_sum", "smooth_max", "site", "min_ratio", "max"}:
            raise ValueError(f"unknown risk functional kind {self.kind!r}")
        if self.kind == "power_sum" and not (self.exponent and self.exponent > 0):
            raise ValueError("power_sum needs a positive exponent")
        if self.kind == "site" and self.index is None:
            raise ValueError("site risk needs a site index")

    @property
    def power(self) -> float | None:
        if self.kind == "smooth_max":
            return SMOOTH_MAX_EXPONENT
        if self.kind == "power_sum":
            return float(self.exponent)
        return None

    @property
    def differentiable(self) -> bool:
        return self.kind in _DIFFERENTIABLE

    def __str__(self) -> str:
        if self.kind == "power_sum":
            return f"powsum:{self.exponent:g}"
        if self.kind == "smooth_max":
            return "smoothmax"
        if self.kind == "site":
            return f"site:{self.label if self.label is not None else self.index}"
        if self.kind == "min_ratio":
            return "minratio"
        if self.kind == "max":
            return "max"
        return "sum"


def parse_risk(text: str, site_ids=None) -> RiskFunctional:
    """Parse ``sum``, ``powsum:<p>``, ``smoothmax``, ``site:<id>``, ``minratio`` or ``max``."""
    name, _, arg = text.partition(":")
    if name == "sum" and not arg:
        return RiskFunctional("sum")
    if name == "smoothmax" and not arg:
        return RiskFunctional("smooth_max")
    if name == "minratio" and not arg:
        return RiskFunctional("min_ratio")
    if name == "max" and not arg:
        return RiskFunctional("max")
    if name == "powsum" and arg:
        return RiskFunctional("power_sum", exponent=float(arg))
    if name == "site" and arg:
        ids = list(site_ids) if site_ids is not None else []
        if arg in ids:
            return RiskFunctional("site", index=ids.index(arg), label=arg)
        if arg.isdigit() and site_ids is None:
            return RiskFunctional("site", index=int(arg), label=arg)
        raise ValueError(f"unknown site id {arg!r} in risk functional")
    raise ValueError(f"cannot parse risk functional {text!r}")


def _check_nonnegative(x: np.ndarray) -> None:
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("risk functionals are defined on nonnegative vectors")


def _power_norm(x: np.ndarray, p: float) -> np.ndarray:
    # Scale by the row maximum so large p does not overflow.
    m = np.max(x, axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    out = safe[..., 0] * np.sum((x / safe) ** p, axis=-1) ** (1.0 / p)
    return np.where(m[..., 0] > 0, out, 0.0)


def eval_risk(r: RiskFunctional, x) -> np.ndarray | float:
    """Evaluate ``r`` on a vector or on each row of an ``(N, I)`` array."""
    x = np.asarray(x, dtype=float)
    _check_nonnegative(x)
    if r.kind == "sum":
        out = x.sum(axis=-1)
    elif r.kind in ("power_sum", "smooth_max"):
        out = _power_norm(x, r.power)
    elif r.kind == "site":
        out = x[..., r.index]
    elif r.kind == "max":
        out = x.max(axis=-1)
    else:
        out = x.min(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def risk_gradient(r: RiskFunctional, x) -> np.ndarray:
    if not r.differentiable:
        raise NotDifferentiableError(f"risk functional {r} is not differentiable")
    x = np.asarray(x, dtype=float)
    _check_nonnegative(x)
    if r.kind == "sum":
        return np.ones_like(x)
    p = r.power
    m = np.max(x, axis=-1, keepdims=True)
    y = x / m
    s = np.sum(y**p, axis=-1, keepdims=True)
    # d/dx_i (sum x^p)^(1/p) = (x_i / r)^(p - 1)
    return (y / s ** (1.0 / p)) ** (p - 1.0)


def exceeds(r: RiskFunctional, x, u) -> np.ndarray | bool:
    """``r(x / u) > 1`` with componentwise division (strict inequality)."""
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)):
        raise ValueError("thresholds must be strictly positive")
    out = np.asarray(eval_risk(r, np.asarray(x, dtype=float) / u)) > 1.0
    return bool(out) if out.ndim == 0 else out
