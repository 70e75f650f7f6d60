"""Exponential energy, its first and second variations, and FD oracles."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .map_calculus import MapField, _vectors, integrate, pullback_derivatives

__all__ = [
    "CriticalityError",
    "VariationOracleReport",
    "DEFAULT_FD_STEPS",
    "exponential_energy",
    "criticality_tolerance",
    "is_critical",
    "first_variation",
    "first_variation_fd",
    "index_form",
    "index_form_polarized",
    "apply_index_operator",
    "second_variation_fd",
    "richardson_limit",
    "l2_inner",
]

DEFAULT_FD_STEPS = (1e-2, 5e-3, 2.5e-3)


class CriticalityError(ValueError):
    """The index form was requested at a map that is not a critical point."""


@dataclass
class VariationOracleReport:
    analytic: float
    fd_values: list[tuple[float, float]]
    extrapolated: float
    observed_order: float
    critical: bool = True
    kind: str = "first"
    notes: dict = field(default_factory=dict)

    @property
    def abs_error(self) -> float:
        return abs(self.analytic - self.extrapolated)

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.extrapolated))
        return self.abs_error / scale if scale > 0 else 0.0

    def agrees(self, rtol: float = 1e-4, atol: float = 1e-8, small: float = 1e-4) -> bool:
        """Relative check, switching to an absolute one when the analytic value is below ``small``."""
        if abs(self.analytic) < small:
            return self.abs_error <= atol
        return self.rel_error <= rtol

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fd_values"] = [list(p) for p in self.fd_values]
        out["abs_error"] = self.abs_error
        out["rel_error"] = self.rel_error
        return out


def exponential_energy(f: MapField) -> float:
    """``E(f) = int_M exp(|df_H|^2 / 2) dv_g`` by node quadrature."""
    return integrate(f.manifold, f.exp_density)


def l2_inner(f: MapField, V, W) -> float:
    """``int <V, W>_h dv_g``."""
    return integrate(f.manifold, f.target.inner(f.values, _vectors(V), _vectors(W)))


def criticality_tolerance(f: MapField) -> float:
    return 1e-6 * (1.0 + float(np.max(f.energy_density)))


def is_critical(f: MapField, tol: float | None = None) -> bool:
    return f.residual <= (criticality_tolerance(f) if tol is None else tol)


def first_variation(f: MapField, V) -> float:
    """``-int e^{e_f} <V, tau_H(f)> dv_g``."""
    vec = _vectors(V)
    return -integrate(f.manifold, f.exp_density * f.target.inner(f.values, vec, f.tension))


def richardson_limit(steps, values) -> float:
    """Neville extrapolation to ``h = 0`` of a series even in ``h``."""
    x = [float(h) ** 2 for h in steps]
    p = [float(v) for v in values]
    n = len(p)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (x[i] * p[i + 1] - x[i + k] * p[i]) / (x[i] - x[i + k])
    return p[0]


def _observed_order(steps, values) -> float:
    if len(values) < 3:
        return float("nan")
    d1 = abs(values[0] - values[1])
    d2 = abs(values[1] - values[2])
    scale = max(abs(v) for v in values)
    floor = 1e-13 * max(scale, 1.0)
    if d1 <= floor or d2 <= floor:
        return float("nan")
    return math.log(d1 / d2) / math.log(steps[0] / steps[1])


def _check_steps(steps) -> list[float]:
    steps = [float(h) for h in steps]
    if len(steps) < 3 or any(b >= a for a, b in zip(steps, steps[1:])) or steps[-1] <= 0:
        raise ValueError(f"need at least 3 strictly decreasing positive steps, got {steps}")
    return steps


def _energy_along(f: MapField, vec: np.ndarray, t: float) -> float:
    return exponential_energy(f.with_values(f.target.retract(f.values, vec, t)))


def first_variation_fd(f: MapField, V, steps=DEFAULT_FD_STEPS) -> VariationOracleReport:
    """Central differences of ``E`` along the nodewise geodesic ``retract(f, V, t)``."""
    steps = _check_steps(steps)
    vec = _vectors(V)
    if not np.any(vec):
        vals = [0.0] * len(steps)
    else:
        vals = [(_energy_along(f, vec, h) - _energy_along(f, vec, -h)) / (2.0 * h) for h in steps]
    return VariationOracleReport(
        analytic=first_variation(f, vec),
        fd_values=list(zip(steps, vals)),
        extrapolated=richardson_limit(steps, vals),
        observed_order=_observed_order(steps, vals),
        critical=is_critical(f),
        kind="first",
    )


def _require_critical(f: MapField, allow_noncritical: bool) -> None:
    if not allow_noncritical and not is_critical(f):
        raise CriticalityError(
            f"map is not critical: residual {f.residual:.3e} > {criticality_tolerance(f):.3e}"
        )


def _index_density(f: MapField, vec: np.ndarray) -> np.ndarray:
    x = f.values
    xb = x[..., None, :]
    nab = pullback_derivatives(f, vec)  # [..., i, k]
    u = f.dfH
    target = f.target
    coupling = target.inner(xb, nab, u).sum(axis=-1)
    kinetic = target.inner(xb, nab, nab).sum(axis=-1)
    vb = np.broadcast_to(vec[..., None, :], u.shape)
    curv = target.inner(xb, target.curvature_operator(xb, u, vb, vb), u).sum(axis=-1)
    return coupling**2 + kinetic - curv


def index_form(f: MapField, V, allow_noncritical: bool = False) -> float:
    """Second variation ``I_H(V, V)`` at a critical map.

    ``int e^{e_f} ([sum_i <nabla_i V, df(e_i)>]^2 + sum_i |nabla_i V|^2
    - sum_i <R(df(e_i), V) V, df(e_i)>) dv_g``.
    """
    _require_critical(f, allow_noncritical)
    return integrate(f.manifold, f.exp_density * _index_density(f, _vectors(V)))


def index_form_polarized(f: MapField, V, W, allow_noncritical: bool = False) -> float:
    """``I_H(V, W) = (I(V+W) - I(V-W)) / 4``."""
    _require_critical(f, allow_noncritical)
    v, w = _vectors(V), _vectors(W)
    plus = integrate(f.manifold, f.exp_density * _index_density(f, v + w))
    minus = integrate(f.manifold, f.exp_density * _index_density(f, v - w))
    return 0.25 * (plus - minus)


def apply_index_operator(f: MapField, V) -> np.ndarray:
    """Matrix-free ``A V`` with ``I_H(V, W) = sum_nodes <A V, W>`` for tangent ``W``.

    The node sum is the plain euclidean pairing of coordinate vectors;
    divide by ``rho * cellvol * g`` to get the L2 representative.
    """
    M = f.manifold
    target = f.target
    vec = _vectors(V)
    x = f.values
    xb = x[..., None, :]
    g = f.metric
    u = f.dfH
    nab = pullback_derivatives(f, vec)
    coupling = (g[..., None] * np.sum(nab * u, axis=-1)).sum(axis=-1)
    omega = f.exp_density * M.quadrature_weight
    X = coupling[..., None, None] * u + nab
    Y = (omega * g)[..., None, None] * X
    out = M.frame_adjoint(Y)
    raw = f.raw_derivatives[..., : M.m, :]
    out = out + target.christoffel_transpose(xb, raw, Y).sum(axis=-2)
    if target.curvature_sign:
        uu = np.sum(u * u, axis=-1)
        uv = np.sum(u * vec[..., None, :], axis=-1)
        curv = uu.sum(-1)[..., None] * vec - np.einsum("...i,...ik->...k", uv, u)
        out = out - (target.curvature_sign * omega * g**2)[..., None] * curv
    return target.project_tangent(x, out)


def second_variation_fd(
    f: MapField, V, steps=DEFAULT_FD_STEPS, allow_noncritical: bool = False
) -> VariationOracleReport:
    """Second central differences of ``E`` along the nodewise geodesic."""
    _require_critical(f, allow_noncritical)
    steps = _check_steps(steps)
    vec = _vectors(V)
    if not np.any(vec):
        vals = [0.0] * len(steps)
    else:
        e0 = exponential_energy(f)
        vals = [
            (_energy_along(f, vec, h) - 2.0 * e0 + _energy_along(f, vec, -h)) / (h * h) for h in steps
        ]
    return VariationOracleReport(
        analytic=index_form(f, vec, allow_noncritical=True),
        fd_values=list(zip(steps, vals)),
        extrapolated=richardson_limit(steps, vals),
        observed_order=_observed_order(steps, vals),
        critical=is_critical(f),
        kind="second",
    )
