"""Discrete calculus for maps from a framed torus into a target manifold.

Two discretizations of the exponential tension field are provided:

``"divergence"`` (default)
    ``tau = (rho e^e g)^-1 * pi( sum_mu d_mu[rho e^e g a_i^mu e_i(f)] ) - metric term``.
    It is the exact gradient of the discrete energy under the node
    quadrature, so the first-variation formula holds to rounding.
``"termwise"``
    ``beta_H trace - df(zeta) + df_H(grad e_f)`` evaluated term by term with
    the same stencil.  Agrees with the divergence form to the stencil order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .frame_geometry import FrameManifold
from .targets import Sphere, TargetError, TargetManifold

__all__ = [
    "NumericalGuardError",
    "MapField",
    "VariationField",
    "integrate",
    "frame_derivative",
    "horizontal_differential",
    "energy_density",
    "pullback_derivative",
    "pullback_derivatives",
    "beta_H_trace",
    "tension_field",
    "tension_residual",
    "integration_by_parts_sides",
]

EXP_GUARD = 700.0


class NumericalGuardError(RuntimeError):
    """A numerical guard tripped (overflow, under-resolution, step failure)."""

    def __init__(self, message: str, node: tuple[int, ...] | None = None):
        super().__init__(message)
        self.node = node


def integrate(manifold: FrameManifold, density: np.ndarray) -> float:
    """Node quadrature of a scalar density against ``dv_g``.

    Uses ``math.fsum`` so the result does not depend on summation order.
    """
    w = np.asarray(density, dtype=float) * manifold.quadrature_weight
    return math.fsum(w.ravel().tolist())


def _dot(U, W):
    return np.sum(U * W, axis=-1)


@dataclass(frozen=True, eq=False)
class MapField:
    """A map ``f: M -> N`` stored as one target point per grid node."""

    manifold: FrameManifold
    target: TargetManifold
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[:-1] != self.manifold.dims:
            raise ValueError(
                f"map values have node shape {values.shape[:-1]}, manifold has {self.manifold.dims}"
            )
        self.target.check_points(values)
        if isinstance(self.target, Sphere):
            for mu in range(self.manifold.ndim):
                cos_adj = _dot(values, np.roll(values, -1, axis=mu))
                bad = cos_adj <= 0.0
                if np.any(bad):
                    node = tuple(int(i) for i in np.argwhere(bad)[0])
                    raise NumericalGuardError(
                        f"map under-resolved: adjacent nodes {node} (+axis {mu}) are pi/2 or more apart",
                        node,
                    )
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "MapField":
        return MapField(self.manifold, self.target, values)

    @cached_property
    def raw_derivatives(self) -> np.ndarray:
        """Ambient/coordinate ``e_A(f)`` for all frame indices, shape ``(*dims, m+d, k)``."""
        return self.manifold.frame_derivatives(self.values)

    @cached_property
    def dfH(self) -> np.ndarray:
        """Horizontal differential ``df(e_i)``, tangent at ``f``; shape ``(*dims, m, k)``."""
        u = self.raw_derivatives[..., : self.manifold.m, :]
        return self.target.project_tangent(self.values[..., None, :], u)

    @cached_property
    def metric(self) -> np.ndarray:
        return self.target.metric_factor(self.values)

    @cached_property
    def energy_density(self) -> np.ndarray:
        # raw chords: projecting them first would let odd/even node modes lower the energy
        u = self.raw_derivatives[..., : self.manifold.m, :]
        e = 0.5 * self.metric * np.sum(u**2, axis=(-2, -1))
        if np.any(e > EXP_GUARD):
            node = tuple(int(i) for i in np.argwhere(e > EXP_GUARD)[0])
            raise NumericalGuardError(f"energy density {e[node]:.1f} > {EXP_GUARD} at node {node}", node)
        return e

    @cached_property
    def exp_density(self) -> np.ndarray:
        return np.exp(self.energy_density)

    @cached_property
    def tension(self) -> np.ndarray:
        return tension_field(self)

    @cached_property
    def residual(self) -> float:
        """``sup_nodes |tau_H(f)|`` in the target metric."""
        return float(np.max(self.target.norm(self.values, self.tension)))


@dataclass(frozen=True, eq=False)
class VariationField:
    """A section of ``f^-1 TN``: one tangent vector at ``f(node)`` per node."""

    base: MapField
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=float)
        if vec.shape != self.base.values.shape:
            raise ValueError(f"vectors shape {vec.shape} != map values shape {self.base.values.shape}")
        if isinstance(self.base.target, Sphere):
            off = np.abs(_dot(vec, self.base.values))
            if np.any(off > 1e-10 * np.maximum(1.0, np.linalg.norm(vec, axis=-1))):
                node = tuple(int(i) for i in np.argwhere(off > 1e-10)[0])
                raise TargetError(f"variation vector not tangent at node {node}", node)
        object.__setattr__(self, "vectors", vec)

    @classmethod
    def tangent(cls, base: MapField, W: np.ndarray) -> "VariationField":
        """Project arbitrary ambient vectors onto the tangent spaces along ``base``."""
        return cls(base, base.target.project_tangent(base.values, np.asarray(W, dtype=float)))


def _vectors(V) -> np.ndarray:
    return V.vectors if isinstance(V, VariationField) else np.asarray(V, dtype=float)


def frame_derivative(f: MapField, A: int) -> np.ndarray:
    """``df(e_A)`` from centered differences (no projection)."""
    return f.raw_derivatives[..., A, :]


def horizontal_differential(f: MapField) -> np.ndarray:
    """``df(e_i)`` for the horizontal indices, projected tangent on spheres."""
    return f.dfH


def energy_density(f: MapField) -> np.ndarray:
    """``e_f = |df_H|^2 / 2`` per node."""
    return f.energy_density


def _covariant(f: MapField, dV: np.ndarray, V: np.ndarray, du: np.ndarray) -> np.ndarray:
    """Turn plain derivatives ``dV`` of a section into pull-back covariant ones."""
    base = f.values[..., None, :]
    if isinstance(f.target, Sphere):
        return f.target.project_tangent(base, dV)
    if V.ndim == dV.ndim - 1:
        V = V[..., None, :]
    return dV + f.target.christoffel(base, du, V)


def pullback_derivatives(f: MapField, V, frames=None) -> np.ndarray:
    """``nabla^f_{e_A} V`` for ``A`` in ``frames`` (default: horizontal); shape ``(*dims, len, k)``.

    On spheres this is the tangential part of the ambient derivative; on the
    Poincare ball the Christoffel correction ``Gamma(df(e_A), V)`` is added.
    """
    vec = _vectors(V)
    frames = list(range(f.manifold.m)) if frames is None else list(frames)
    dV = f.manifold.frame_derivatives(vec)[..., frames, :]
    du = f.raw_derivatives[..., frames, :]
    return _covariant(f, dV, vec, du)


def pullback_derivative(f: MapField, V, A: int) -> np.ndarray:
    return pullback_derivatives(f, V, [A])[..., 0, :]


def beta_H_trace(f: MapField) -> np.ndarray:
    """``sum_i nabla^f_{e_i}(df_H(e_i)) - df_H(nabla_{e_i} e_i)``."""
    M = f.manifold
    v = f.dfH
    idx = np.arange(M.m)
    diag = M.frame_derivatives(v)[..., idx, idx, :]  # e_i(df(e_i))
    first = _covariant(f, diag, v, f.raw_derivatives[..., : M.m, :]).sum(axis=-2)
    # df_H(nabla_{e_i} e_i) = sum_j Gamma_ii^j df(e_j)
    gdiag = M.gamma[..., idx, idx, : M.m].sum(axis=-2)
    return first - np.einsum("...j,...jk->...k", gdiag, v)


def _energy_gradient_term(f: MapField) -> np.ndarray:
    """``df_H(grad e_f) = sum_i e_i(e_f) df(e_i)``."""
    de = f.manifold.frame_derivatives(f.energy_density)[..., : f.manifold.m]
    return np.einsum("...i,...ik->...k", de, f.dfH)


def _zeta_term(f: MapField) -> np.ndarray:
    return np.einsum("...i,...ik->...k", f.manifold.zeta, f.dfH)


def _tension_termwise(f: MapField) -> np.ndarray:
    tau = beta_H_trace(f) - _zeta_term(f) + _energy_gradient_term(f)
    return f.target.project_tangent(f.values, tau)


def _tension_divergence(f: MapField) -> np.ndarray:
    M = f.manifold
    weight = M.vol_weight * f.exp_density * f.metric
    u = f.raw_derivatives[..., : M.m, :]
    div = -M.frame_adjoint(weight[..., None, None] * u)
    if isinstance(f.target, Sphere):
        return f.target.project_tangent(f.values, div / weight[..., None])
    grad_g = f.target.metric_factor_gradient(f.values)
    sq = np.sum(u**2, axis=(-2, -1))
    return div / weight[..., None] - (0.5 * sq / f.metric)[..., None] * grad_g


def tension_field(f: MapField, form: str = "divergence") -> np.ndarray:
    """Exponential tension field ``tau_H(f)`` per node (tangent at ``f``)."""
    if form == "divergence":
        return _tension_divergence(f)
    if form == "termwise":
        return _tension_termwise(f)
    raise ValueError(f"unknown tension form {form!r}")


def tension_residual(f: MapField) -> float:
    return f.residual


def integration_by_parts_sides(f: MapField, W) -> tuple[float, float]:
    """Both sides of the weighted integration-by-parts identity for a section ``W``.

    Left: ``int e^{e_f} [e_i<W, df_H(e_i)> - <W, df_H(nabla_{e_i} e_i)>]``.
    Right: ``int e^{e_f} <W, df(zeta) - df_H(grad e_f)>``.
    Inner products use the target metric.
    """
    M = f.manifold
    W = _vectors(W)
    g = f.metric
    theta = g[..., None] * np.einsum("...k,...ik->...i", W, f.dfH)  # <W, df(e_i)>_h
    dtheta = M.frame_derivatives(theta)  # [..., A, i]
    idx = np.arange(M.m)
    div_part = dtheta[..., idx, idx].sum(axis=-1)
    gdiag = M.gamma[..., idx, idx, : M.m].sum(axis=-2)
    conn_part = np.einsum("...j,...j->...", gdiag, theta)
    lhs = integrate(M, f.exp_density * (div_part - conn_part))
    rhs_vec = _zeta_term(f) - _energy_gradient_term(f)
    rhs = integrate(M, f.exp_density * g * _dot(W, rhs_vec))
    return lhs, rhs
