"""Gradient descent on the exponential energy with nodewise geodesic steps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .map_calculus import MapField, NumericalGuardError, VariationField, integrate
from .targets import TargetError
from .variational import exponential_energy

__all__ = ["FlowOptions", "FlowTrace", "descent_direction", "minimize"]

logger = logging.getLogger(__name__)


@dataclass
class FlowOptions:
    max_iter: int = 5000
    residual_tol: float = 1e-6
    initial_step: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-12
    max_step: float = 1e3


@dataclass
class FlowTrace:
    iterations: list[tuple[int, float, float, float]] = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    final_map: MapField | None = None

    @property
    def energies(self) -> list[float]:
        return [row[1] for row in self.iterations]

    @property
    def final_residual(self) -> float:
        return self.iterations[-1][2] if self.iterations else float("nan")

    @property
    def n_steps(self) -> int:
        return max(len(self.iterations) - 1, 0)


def descent_direction(f: MapField) -> VariationField:
    """``e^{e_f} tau_H(f)`` per node."""
    return VariationField(f, f.exp_density[..., None] * f.tension)


def _mass_inner(f: MapField, U, W) -> float:
    return integrate(f.manifold, f.target.inner(f.values, U, W))


def minimize(f0: MapField, opts: FlowOptions | None = None) -> FlowTrace:
    """Minimize ``E`` from ``f0``.

    Each step moves every node along the geodesic in the direction
    ``e^{e_f} tau_H(f)``.  The trial step is a Barzilai-Borwein estimate
    (``initial_step`` on the first iteration) and is halved until the
    Armijo condition on the discrete energy holds, so recorded energies are
    non-increasing.
    """
    opts = opts or FlowOptions()
    trace = FlowTrace()
    f = f0
    energy = exponential_energy(f)
    prev_dir = None
    prev_step = None
    trial = opts.initial_step
    for it in range(opts.max_iter + 1):
        residual = f.residual
        trace.iterations.append((it, energy, residual, 0.0 if prev_step is None else prev_step))
        if residual <= opts.residual_tol:
            trace.converged = True
            break
        if it == opts.max_iter:
            break
        direction = descent_direction(f).vectors
        slope = -integrate(f.manifold, f.exp_density * f.target.inner(f.values, direction, f.tension))
        if prev_dir is not None:
            s = prev_step * prev_dir
            y = prev_dir - direction  # change of the L2 gradient -e^e tau
            sy = _mass_inner(f, s, y)
            if sy > 0.0:
                trial = min(opts.max_step, _mass_inner(f, s, s) / sy)
            else:
                trial = min(opts.max_step, 2.0 * prev_step)
        t = trial
        accepted = None
        while t >= opts.min_step:
            try:
                cand = f.with_values(f.target.retract(f.values, direction, t))
                e_new = exponential_energy(cand)
            except (NumericalGuardError, TargetError):
                t *= opts.backtrack
                continue
            if e_new <= energy + opts.armijo * t * slope:
                accepted = (cand, e_new)
                break
            t *= opts.backtrack
        if accepted is None:
            trace.stalled = True
            logger.warning("line search stalled at iteration %d (residual %.3e)", it, residual)
            break
        f, energy = accepted
        prev_dir, prev_step = direction, t
        if it % 100 == 0:
            logger.debug("iter %d  E=%.12g  residual=%.3e  step=%.3e", it, energy, residual, t)
    trace.final_map = f
    return trace
