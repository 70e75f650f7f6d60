"""Standard maps and smooth random fields on framed tori."""

from __future__ import annotations

import numpy as np

from .frame_geometry import FrameManifold
from .map_calculus import MapField, VariationField
from .targets import Euclidean, Hyperbolic, Sphere, TargetManifold

__all__ = [
    "constant_map",
    "eigenmap",
    "perturbed_phase",
    "smooth_random_field",
    "random_smooth_map",
    "random_tangent_field",
]


def constant_map(manifold: FrameManifold, target: TargetManifold, point=None) -> MapField:
    if point is None:
        point = np.zeros(target.ambient_dim)
        if isinstance(target, Sphere):
            point[-1] = 1.0
    point = np.asarray(point, dtype=float)
    values = np.broadcast_to(point, manifold.dims + point.shape).copy()
    return MapField(manifold, target, values)


def _circle(manifold, target, phase, plane):
    if not isinstance(target, Sphere):
        raise ValueError(f"circle maps need a sphere target, got {target!r}")
    p, q = plane
    values = np.zeros(manifold.dims + (target.ambient_dim,))
    values[..., p] = np.cos(phase)
    values[..., q] = np.sin(phase)
    return MapField(manifold, target, values)


def eigenmap(manifold: FrameManifold, target: TargetManifold, k: int = 1, plane=(0, 1), axis: int = 0) -> MapField:
    """Great-circle map ``cos(k x) E_p + sin(k x) E_q`` along coordinate ``axis``."""
    x = manifold.coordinates()[axis]
    return _circle(manifold, target, k * x, plane)


def perturbed_phase(
    manifold: FrameManifold, target: TargetManifold, epsilon: float = 0.1, plane=(0, 1), axis: int = 0
) -> MapField:
    """Circle map with phase ``x + epsilon sin x``."""
    x = manifold.coordinates()[axis]
    return _circle(manifold, target, x + epsilon * np.sin(x), plane)


def smooth_random_field(
    manifold: FrameManifold, rng: np.random.Generator, components: int, max_freq: int = 1, n_modes: int = 6
) -> np.ndarray:
    """Sum of a few random low-frequency Fourier modes, shape ``(*dims, components)``."""
    coords = manifold.coordinates()
    out = np.zeros(manifold.dims + (components,))
    for _ in range(n_modes):
        k = rng.integers(-max_freq, max_freq + 1, size=len(coords))
        phase = sum(int(kk) * c for kk, c in zip(k, coords))
        a = rng.normal(size=components)
        b = rng.normal(size=components)
        out += np.cos(phase)[..., None] * a + np.sin(phase)[..., None] * b
    return out / np.sqrt(n_modes)


def random_smooth_map(
    manifold: FrameManifold,
    target: TargetManifold,
    rng: np.random.Generator,
    amplitude: float = 0.5,
    max_freq: int = 1,
) -> MapField:
    field = amplitude * smooth_random_field(manifold, rng, target.ambient_dim, max_freq)
    if isinstance(target, Sphere):
        centre = rng.normal(size=target.ambient_dim)
        centre /= np.linalg.norm(centre)
        values = target.normalize(1.5 * centre + field)
    elif isinstance(target, Hyperbolic):
        values = 0.6 * field / np.sqrt(1.0 + np.sum(field**2, axis=-1, keepdims=True))
    elif isinstance(target, Euclidean):
        values = field
    else:
        raise ValueError(f"unsupported target {target!r}")
    return MapField(manifold, target, values)


def random_tangent_field(
    f: MapField, rng: np.random.Generator, max_freq: int = 1, scale: float = 1.0
) -> VariationField:
    W = scale * smooth_random_field(f.manifold, rng, f.target.ambient_dim, max_freq)
    return VariationField.tangent(f, W)
