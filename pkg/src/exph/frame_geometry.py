"""Framed periodic source manifolds and their frame geometry.

A source manifold is a flat coordinate torus ``[0, 2pi)^D`` sampled on a
uniform grid, carrying a global frame ``e_A = a_A^mu d_mu`` that is declared
orthonormal.  The first ``m`` frame fields span the horizontal distribution,
the remaining ``d`` the vertical one.

Index conventions for the cached arrays (node axes always lead):

* ``frame[..., A, mu]``      coordinate components ``a_A^mu``
* ``structure[..., A, B, C]`` ``[e_A, e_B] = c_AB^C e_C``
* ``gamma[..., A, B, C]``    ``<nabla_{e_A} e_B, e_C>``
* ``zeta[..., i]``           horizontal frame components of ``zeta``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GeometryError",
    "FrameManifold",
    "PRESETS",
    "build_framed_torus",
    "axis_difference",
    "compute_structure_functions",
    "compute_connection",
    "compute_zeta",
    "compute_volume_weight",
]

PRESETS = ("flat", "stretched", "twisted", "custom")
_PRESET_PARAMS = {"flat": (), "stretched": ("amplitude",), "twisted": ("twist",)}

_DET_TOL = 1e-12


class GeometryError(ValueError):
    """Raised when a frame or grid cannot support the discrete calculus."""

    def __init__(self, message: str, node: tuple[int, ...] | None = None):
        super().__init__(message)
        self.node = node


def axis_difference(F: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """Centered periodic difference of ``F`` along grid axis ``axis``.

    Both stencils are antisymmetric, so summation by parts holds exactly on
    the periodic grid.
    """
    if order == 2:
        return (np.roll(F, -1, axis) - np.roll(F, 1, axis)) / (2.0 * h)
    if order == 4:
        p1 = np.roll(F, -1, axis) - np.roll(F, 1, axis)
        p2 = np.roll(F, -2, axis) - np.roll(F, 2, axis)
        return (8.0 * p1 - p2) / (12.0 * h)
    raise ValueError(f"unsupported stencil order {order}; use 2 or 4")


@dataclass(frozen=True, eq=False)
class FrameManifold:
    """Periodic grid with a cached orthonormal frame split ``H + V``."""

    dims: tuple[int, ...]
    m: int
    d: int
    frame: np.ndarray
    structure: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    vol_weight: np.ndarray
    preset: str = "custom"
    params: dict = field(default_factory=dict)
    stencil_order: int = 2

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * math.pi / n for n in self.dims)

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def n_nodes(self) -> int:
        return math.prod(self.dims)

    @property
    def quadrature_weight(self) -> np.ndarray:
        """``dv_g`` per node: ``vol_weight * cell_volume``."""
        return self.vol_weight * self.cell_volume

    def coordinates(self) -> list[np.ndarray]:
        """Coordinate arrays on the full grid (``indexing='ij'``)."""
        axes = [np.arange(n) * (2.0 * math.pi / n) for n in self.dims]
        return np.meshgrid(*axes, indexing="ij")

    def grid_gradient(self, F: np.ndarray) -> np.ndarray:
        """Coordinate differences of ``F`` stacked on a new axis after the nodes."""
        parts = [
            axis_difference(F, mu, h, self.stencil_order)
            for mu, h in enumerate(self.spacing)
        ]
        return np.stack(parts, axis=self.ndim)

    def frame_derivatives(self, F: np.ndarray) -> np.ndarray:
        """``e_A(F)`` for every frame index; shape ``(*dims, m+d, *F.shape[ndim:])``."""
        rest = F.shape[self.ndim:]
        grad = self.grid_gradient(F).reshape(self.dims + (self.ndim, -1))
        out = np.einsum("...am,...mr->...ar", self.frame, grad)
        return out.reshape(self.dims + (self.m + self.d,) + rest)

    def frame_adjoint(self, Y: np.ndarray) -> np.ndarray:
        """Adjoint of the horizontal derivatives under the plain node sum.

        ``Y`` has shape ``(*dims, m, *rest)``.  Returns
        ``-sum_mu d_mu(sum_i a_i^mu Y_i)``, so that
        ``sum_nodes sum_i <Y_i, e_i(W)> == sum_nodes <frame_adjoint(Y), W>``
        holds exactly on the periodic grid.
        """
        rest = Y.shape[self.ndim + 1:]
        Yf = Y.reshape(self.dims + (self.m, -1))
        out = np.zeros(Yf.shape[: self.ndim] + Yf.shape[-1:])
        for mu, h in enumerate(self.spacing):
            flux = np.einsum("...i,...ir->...r", self.frame[..., : self.m, mu], Yf)
            out -= axis_difference(flux, mu, h, self.stencil_order)
        return out.reshape(self.dims + rest)


def _validate_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(n) for n in dims)
    if not dims:
        raise GeometryError("dims must list at least one axis")
    for ax, n in enumerate(dims):
        if n < 4:
            raise GeometryError(f"dims[{ax}] = {n} < 4: difference stencil too wide for the grid")
    return dims


def compute_volume_weight(frame: np.ndarray) -> np.ndarray:
    """Density of ``dv_g`` against coordinate volume: ``1/|det a|`` per node."""
    det = np.linalg.det(frame)
    bad = np.abs(det) < _DET_TOL
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise GeometryError(f"degenerate frame at node {node}: |det| = {abs(det[node]):.3e}", node)
    return 1.0 / np.abs(det)


def compute_structure_functions(
    frame: np.ndarray, spacing, order: int = 2
) -> np.ndarray:
    """Structure functions ``c_AB^C`` from centered differences of the frame.

    ``[e_A, e_B]^mu = a_A^nu d_nu a_B^mu - a_B^nu d_nu a_A^mu`` is expanded back
    into the frame with the pointwise inverse coefficient matrix.
    """
    ndim = len(spacing)
    jac = np.stack(
        [axis_difference(frame, nu, h, order) for nu, h in enumerate(spacing)],
        axis=ndim,
    )  # [..., nu, B, mu]
    deriv = np.einsum("...an,...nbm->...abm", frame, jac)  # e_A(a_B^mu)
    bracket = deriv - np.swapaxes(deriv, -3, -2)
    inv = np.linalg.inv(frame)  # [..., mu, C]
    return np.einsum("...abm,...mc->...abc", bracket, inv)


def compute_connection(structure: np.ndarray) -> np.ndarray:
    """Levi-Civita coefficients in an orthonormal frame (Koszul formula).

    ``Gamma_AB^C = (c_AB^C - c_BC^A + c_CA^B) / 2``.
    """
    c = structure
    c_bca = np.moveaxis(c, -1, -3)  # [..., A, B, C] <- c[..., B, C, A]
    c_cab = np.moveaxis(c, -3, -1)  # [..., A, B, C] <- c[..., C, A, B]
    return 0.5 * (c - c_bca + c_cab)


def compute_zeta(gamma: np.ndarray, m: int) -> np.ndarray:
    """Horizontal components of ``zeta = pi_H(sum_alpha nabla_{e_alpha} e_alpha)``."""
    D = gamma.shape[-1]
    idx = np.arange(m, D)
    return gamma[..., idx, idx, :m].sum(axis=-2)


def _preset_frame(preset: str, coords, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """Frame coefficients and analytic structure functions for the 3-torus presets."""
    x = coords[0]
    shape = x.shape
    frame = np.zeros(shape + (3, 3))
    frame[..., 0, 0] = 1.0
    frame[..., 1, 1] = 1.0
    frame[..., 2, 2] = 1.0
    c = np.zeros(shape + (3, 3, 3))
    allowed = _PRESET_PARAMS.get(preset, ())
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise GeometryError(f"preset {preset!r} does not take parameter(s) {unknown}; allowed: {list(allowed)}")
    if preset == "stretched":
        amp = float(params.get("amplitude", 0.5))
        if not abs(amp) < 1.0:
            raise GeometryError(f"stretched preset needs |amplitude| < 1 for a nondegenerate frame, got {amp}")
        a = 1.0 + amp * np.sin(x)
        frame[..., 2, 2] = a
        ratio = amp * np.cos(x) / a
        c[..., 0, 2, 2] = ratio
        c[..., 2, 0, 2] = -ratio
    elif preset == "twisted":
        lam = float(params.get("twist", 1.0))
        frame[..., 1, 2] = lam * np.cos(x)
        c[..., 0, 1, 2] = -lam * np.sin(x)
        c[..., 1, 0, 2] = lam * np.sin(x)
    elif preset != "flat":
        raise GeometryError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    return frame, c


def build_framed_torus(
    preset: str = "flat",
    dims=(8, 8, 8),
    params: dict | None = None,
    *,
    frame_fn: Callable[..., np.ndarray] | None = None,
    frame_values: np.ndarray | None = None,
    m: int | None = None,
    stencil_order: int = 2,
) -> FrameManifold:
    """Build a framed periodic torus.

    Parameters
    ----------
    preset : {"flat", "stretched", "twisted", "custom"}
        ``flat``: ``e1=d_x, e2=d_y`` horizontal, ``e3=d_z`` vertical.
        ``stretched``: ``e3 = a(x) d_z`` with ``a = 1 + amplitude*sin x``.
        ``twisted``: ``e2 = d_y + twist*cos(x) d_z``.
    dims : sequence of int
        Grid sizes per coordinate axis, each at least 4.
    params : dict, optional
        ``amplitude`` (stretched, default 0.5), ``twist`` (twisted, default 1).
    frame_fn : callable, optional
        Custom preset: maps the coordinate arrays to frame coefficients of
        shape ``(*dims, D, D)`` indexed ``[A, mu]``.
    frame_values : ndarray, optional
        Custom preset: sampled frame coefficients, same layout as ``frame_fn``.
    m : int, optional
        Horizontal rank for custom frames (presets use 2).
    stencil_order : {2, 4}
        Order of the centered differences used throughout.
    """
    params = dict(params or {})
    dims = _validate_dims(dims)
    if stencil_order not in (2, 4):
        raise GeometryError(f"stencil_order must be 2 or 4, got {stencil_order}")
    axes = [np.arange(n) * (2.0 * math.pi / n) for n in dims]
    coords = np.meshgrid(*axes, indexing="ij")
    spacing = tuple(2.0 * math.pi / n for n in dims)

    if preset == "custom":
        if frame_values is not None:
            frame = np.asarray(frame_values, dtype=float)
        elif frame_fn is not None:
            frame = np.asarray(frame_fn(*coords), dtype=float)
        else:
            raise GeometryError("custom preset needs frame_fn or frame_values")
        D = len(dims)
        if frame.shape != dims + (D, D):
            raise GeometryError(f"custom frame has shape {frame.shape}, expected {dims + (D, D)}")
        if m is None or not 0 < m <= D:
            raise GeometryError(f"custom frame needs horizontal rank 0 < m <= {D}, got {m}")
        vol = compute_volume_weight(frame)
        structure = compute_structure_functions(frame, spacing, stencil_order)
    else:
        if len(dims) != 3:
            raise GeometryError(f"preset {preset!r} lives on the 3-torus; got {len(dims)} axes")
        frame, structure = _preset_frame(preset, coords, params)
        vol = compute_volume_weight(frame)
        m = 2
    gamma = compute_connection(structure)
    zeta = compute_zeta(gamma, m)
    return FrameManifold(
        dims=dims,
        m=m,
        d=len(dims) - m,
        frame=frame,
        structure=structure,
        gamma=gamma,
        zeta=zeta,
        vol_weight=vol,
        preset=preset,
        params=params,
        stencil_order=stencil_order,
    )
