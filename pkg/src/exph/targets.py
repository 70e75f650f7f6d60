"""Riemannian target manifolds.

Points are stored as arrays whose last axis holds the representation
(ambient unit vectors for spheres, coordinates otherwise).  Every operation
broadcasts over leading axes, so a whole map field is processed at once.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "TargetError",
    "TargetManifold",
    "Sphere",
    "Euclidean",
    "Hyperbolic",
    "make_target",
]

BALL_GUARD = 1e-6
SPHERE_NORM_TOL = 1e-10
NORMAL_TOL = 1e-8


class TargetError(ValueError):
    """A point or step violates the target's invariants."""

    def __init__(self, message: str, node: tuple[int, ...] | None = None):
        super().__init__(message)
        self.node = node


def _dot(U, W):
    return np.sum(U * W, axis=-1)


def _first_bad(mask) -> tuple[int, ...]:
    return tuple(int(i) for i in np.argwhere(mask)[0])


class TargetManifold:
    """Common interface; see :class:`Sphere`, :class:`Euclidean`, :class:`Hyperbolic`."""

    kind: str = ""
    curvature_sign: int = 0

    def __init__(self, n: int):
        if int(n) < 1:
            raise ValueError(f"target dimension must be positive, got {n}")
        self.n = int(n)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.n})"

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.n == other.n

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.n))

    @property
    def ambient_dim(self) -> int:
        return self.n

    def check_points(self, x: np.ndarray) -> None:
        x = np.asarray(x)
        if x.shape[-1] != self.ambient_dim:
            raise TargetError(f"{self!r} points need {self.ambient_dim} components, got {x.shape[-1]}")
        bad = ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            node = _first_bad(bad)
            raise TargetError(f"non-finite point at node {node}", node)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return x

    def project_tangent(self, x: np.ndarray, W: np.ndarray) -> np.ndarray:
        return np.broadcast_to(W, np.broadcast_shapes(np.shape(x), np.shape(W))).copy()

    def metric_factor(self, x: np.ndarray) -> np.ndarray:
        """Conformal factor ``g(x)`` with ``h = g(x) * euclidean``."""
        return np.ones(np.shape(x)[:-1])

    def metric_factor_gradient(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(x))

    def inner(self, x, U, W) -> np.ndarray:
        return self.metric_factor(x) * _dot(U, W)

    def norm(self, x, U) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(x, U, U), 0.0))

    def christoffel(self, x, U, W) -> np.ndarray:
        """Coordinate correction ``Gamma(U, W)`` of the covariant derivative."""
        return np.zeros(np.broadcast_shapes(np.shape(U), np.shape(W)))

    def christoffel_transpose(self, x, U, Y) -> np.ndarray:
        """``Gamma(U, .)^T Y`` under the euclidean pairing."""
        return np.zeros(np.broadcast_shapes(np.shape(U), np.shape(Y)))

    def retract(self, x, v, t: float = 1.0) -> np.ndarray:
        raise NotImplementedError

    def curvature_operator(self, x, X, Y, Z) -> np.ndarray:
        """``R(X, Y) Z`` for constant sectional curvature ``curvature_sign``."""
        if self.curvature_sign == 0:
            return np.zeros(np.broadcast_shapes(np.shape(X), np.shape(Y), np.shape(Z)))
        k = float(self.curvature_sign)
        yz = self.inner(x, Y, Z)[..., None]
        xz = self.inner(x, X, Z)[..., None]
        return k * (yz * X - xz * Y)


class Sphere(TargetManifold):
    """Unit sphere ``S^n`` in ``R^(n+1)``, extrinsic calculus."""

    kind = "sphere"
    curvature_sign = 1

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    def check_points(self, x: np.ndarray) -> None:
        super().check_points(x)
        bad = np.abs(np.linalg.norm(x, axis=-1) - 1.0) > SPHERE_NORM_TOL
        if np.any(bad):
            node = _first_bad(bad)
            raise TargetError(f"point at node {node} is off the unit sphere", node)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def project_tangent(self, x, W):
        return W - _dot(W, x)[..., None] * x

    def retract(self, x, v, t: float = 1.0):
        """Great-circle step ``cos(t|v|) x + sin(t|v|) v/|v|``."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        theta = t * nv
        safe = np.where(nv > 0.0, nv, 1.0)
        out = np.cos(theta) * x + np.sin(theta) * v / safe
        return self.normalize(out)

    def shape_operator(self, x, W, X):
        """Weingarten map ``A^W(X) = -<x, W> X`` for a normal vector ``W``."""
        x = np.asarray(x, dtype=float)
        W = np.asarray(W, dtype=float)
        tangential = W - _dot(W, x)[..., None] * x
        if np.any(np.linalg.norm(tangential, axis=-1) > NORMAL_TOL):
            raise TargetError("shape operator needs a normal vector W = <W, x> x")
        return -_dot(x, W)[..., None] * np.asarray(X, dtype=float)


class Euclidean(TargetManifold):
    """Flat ``R^n``."""

    kind = "euclidean"
    curvature_sign = 0

    def retract(self, x, v, t: float = 1.0):
        return np.asarray(x, dtype=float) + t * np.asarray(v, dtype=float)


class Hyperbolic(TargetManifold):
    """Hyperbolic space ``H^n`` in the Poincare ball, curvature -1.

    The metric is ``lambda(x)^2 * euclidean`` with ``lambda = 2 / (1 - |x|^2)``.
    """

    kind = "hyperbolic"
    curvature_sign = -1

    @staticmethod
    def conformal(x) -> np.ndarray:
        return 2.0 / (1.0 - _dot(x, x))

    def check_points(self, x: np.ndarray) -> None:
        super().check_points(x)
        bad = np.linalg.norm(x, axis=-1) >= 1.0 - BALL_GUARD
        if np.any(bad):
            node = _first_bad(bad)
            raise TargetError(f"point at node {node} leaves the Poincare ball guard", node)

    def metric_factor(self, x):
        return self.conformal(x) ** 2

    def metric_factor_gradient(self, x):
        lam = self.conformal(x)
        return 2.0 * (lam**3)[..., None] * x

    def christoffel(self, x, U, W):
        lam = self.conformal(x)[..., None]
        return lam * (_dot(x, U)[..., None] * W + _dot(x, W)[..., None] * U - _dot(U, W)[..., None] * x)

    def christoffel_transpose(self, x, U, Y):
        lam = self.conformal(x)[..., None]
        return lam * (_dot(x, U)[..., None] * Y + _dot(U, Y)[..., None] * x - _dot(x, Y)[..., None] * U)

    def retract(self, x, v, t: float = 1.0):
        """Geodesic exponential ``x (+) tanh(lambda_x t|v| / 2) v/|v|`` (Mobius addition)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        lam = self.conformal(x)[..., None]
        safe = np.where(nv > 0.0, nv, 1.0)
        y = np.tanh(0.5 * lam * t * nv) * v / safe
        xy = _dot(x, y)[..., None]
        xx = _dot(x, x)[..., None]
        yy = _dot(y, y)[..., None]
        out = ((1.0 + 2.0 * xy + yy) * x + (1.0 - xx) * y) / (1.0 + 2.0 * xy + xx * yy)
        bad = np.linalg.norm(out, axis=-1) >= 1.0 - BALL_GUARD
        if np.any(bad):
            node = _first_bad(bad) if bad.ndim else None
            raise TargetError(f"step too large: retraction leaves the ball guard at node {node}", node)
        return out


def make_target(kind: str, n: int) -> TargetManifold:
    kinds = {"sphere": Sphere, "euclidean": Euclidean, "hyperbolic": Hyperbolic}
    try:
        return kinds[kind.lower()](n)
    except KeyError:
        raise ValueError(f"unknown target kind {kind!r}; expected one of {sorted(kinds)}") from None
