"""Batch driver: ``exph run <config.json> [--out DIR] [--seed N] [--threads K]``.

Exit status 0 on success, 2 on an invalid configuration, 3 when a numerical
guard trips.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .fixtures import constant_map, eigenmap, perturbed_phase, random_tangent_field
from .flow import FlowOptions, minimize
from .frame_geometry import GeometryError, build_framed_torus
from .map_calculus import MapField, NumericalGuardError, integration_by_parts_sides
from .stability import INSTABILITY_TOL, SIGN_TEST_ATOL, check_sphere_identities, stability_verdict
from .tables import read_node_table, write_json, write_node_table, write_rows
from .targets import Sphere, TargetError, make_target
from .variational import DEFAULT_FD_STEPS, first_variation_fd, is_critical, second_variation_fd

logger = logging.getLogger("exph")

EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 2, 3


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ManifoldSpec(_Strict):
    preset: Literal["flat", "stretched", "twisted"] = "flat"
    dims: list[int] = Field(default_factory=lambda: [24, 24, 24], min_length=3, max_length=3)
    params: dict[str, float] = Field(default_factory=dict)

    @field_validator("dims")
    @classmethod
    def _dims_wide_enough(cls, v):
        if any(n < 4 for n in v):
            raise ValueError("every grid size must be at least 4")
        return v


class TargetSpec(_Strict):
    kind: Literal["sphere", "euclidean", "hyperbolic"]
    n: int = Field(ge=1)


class ConstantInit(_Strict):
    type: Literal["constant"]
    point: list[float] | None = None


class EigenmapInit(_Strict):
    type: Literal["eigenmap"]
    k: int = 1
    plane: tuple[int, int] = (0, 1)


class PhaseInit(_Strict):
    type: Literal["perturbed_phase"]
    epsilon: float = 0.1
    plane: tuple[int, int] = (0, 1)


class FileInit(_Strict):
    type: Literal["file"]
    path: str


InitialMap = Annotated[Union[ConstantInit, EigenmapInit, PhaseInit, FileInit], Field(discriminator="type")]


class NumericSpec(_Strict):
    stencil_order: Literal[2, 4] = 2
    residual_tol: float = Field(1e-6, gt=0)
    seed: int = 0
    fd_steps: list[float] = Field(default_factory=lambda: list(DEFAULT_FD_STEPS), min_length=3)
    max_iter: int = Field(5000, ge=0)
    variations: int = Field(3, ge=1)
    probes: int = Field(20, ge=0)
    rayleigh_iters: int = Field(150, ge=1)
    rayleigh_samples: int = Field(2, ge=1)

    @field_validator("fd_steps")
    @classmethod
    def _steps_decreasing(cls, v):
        if any(h <= 0 for h in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("fd_steps must be positive and strictly decreasing")
        return v


class RunConfig(_Strict):
    manifold: ManifoldSpec = Field(default_factory=ManifoldSpec)
    target: TargetSpec
    initial_map: InitialMap
    task: Literal["flow", "check-variation", "stability", "identities"]
    numeric: NumericSpec = Field(default_factory=NumericSpec)
    output: str = "out"


def load_config(path: Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(p) for p in err["loc"])
        raise ConfigError(f"{path}: field '{loc}': {err['msg']}") from None
    if isinstance(cfg.initial_map, FileInit):
        ref = Path(cfg.initial_map.path)
        if not ref.is_absolute():
            ref = Path(path).parent / ref
        if not ref.exists():
            raise ConfigError(f"field 'initial_map.path': {ref} does not exist")
    return cfg


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def build_map(cfg: RunConfig, base_dir: Path) -> MapField:
    try:
        M = build_framed_torus(
            cfg.manifold.preset, cfg.manifold.dims, cfg.manifold.params, stencil_order=cfg.numeric.stencil_order
        )
    except GeometryError as exc:
        raise ConfigError(f"field 'manifold': {exc}") from None
    try:
        target = make_target(cfg.target.kind, cfg.target.n)
    except ValueError as exc:
        raise ConfigError(f"field 'target': {exc}") from None
    init = cfg.initial_map
    try:
        if isinstance(init, ConstantInit):
            if init.point is not None and len(init.point) != target.ambient_dim:
                raise ConfigError(
                    f"field 'initial_map.point': {len(init.point)} coordinates for a target in R^{target.ambient_dim}"
                )
            return constant_map(M, target, init.point)
        if isinstance(init, FileInit):
            ref = Path(init.path) if Path(init.path).is_absolute() else base_dir / init.path
            values = read_node_table(ref, M.dims)
            if values.shape[-1] != target.ambient_dim:
                raise ConfigError(
                    f"field 'initial_map.path': table has {values.shape[-1]} components, target needs {target.ambient_dim}"
                )
            return MapField(M, target, values)
        if not isinstance(target, Sphere):
            raise ConfigError(f"field 'initial_map.type': {init.type} needs a sphere target")
        if max(init.plane) >= target.ambient_dim or init.plane[0] == init.plane[1]:
            raise ConfigError(f"field 'initial_map.plane': {list(init.plane)} invalid for R^{target.ambient_dim}")
        if isinstance(init, EigenmapInit):
            return eigenmap(M, target, k=init.k, plane=init.plane)
        return perturbed_phase(M, target, epsilon=init.epsilon, plane=init.plane)
    except (TargetError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"field 'initial_map': {exc}") from None


def _columns(f: MapField) -> list[str]:
    return [f"x{k}" for k in range(f.target.ambient_dim)]


def task_flow(cfg: RunConfig, f: MapField, out: Path, threads: int) -> list[str]:
    opts = FlowOptions(max_iter=cfg.numeric.max_iter, residual_tol=cfg.numeric.residual_tol)
    trace = minimize(f, opts)
    write_rows(out / "trace.csv", ["iteration", "energy", "residual", "step"], trace.iterations)
    write_node_table(out / "final_map.csv", trace.final_map.values, _columns(f))
    report = {
        "converged": trace.converged,
        "stalled": trace.stalled,
        "iterations": trace.n_steps,
        "energy": trace.energies[-1],
        "residual": trace.final_residual,
        "max_dfH_sq": float(np.max(2.0 * trace.final_map.energy_density)),
    }
    write_json(out / "report.json", report)
    return ["trace.csv", "final_map.csv", "report.json"]


def task_check_variation(cfg: RunConfig, f: MapField, out: Path, threads: int) -> list[str]:
    rng = np.random.default_rng(cfg.numeric.seed)
    fields = [random_tangent_field(f, rng) for _ in range(cfg.numeric.variations)]
    first = [first_variation_fd(f, V, cfg.numeric.fd_steps).to_dict() for V in fields]
    write_json(out / "first_variation.json", {"seed": cfg.numeric.seed, "reports": first})
    if is_critical(f):
        second = {"seed": cfg.numeric.seed, "reports": [second_variation_fd(f, V, cfg.numeric.fd_steps).to_dict() for V in fields]}
    else:
        second = {"seed": cfg.numeric.seed, "reports": [], "skipped": f"map not critical (residual {f.residual:.3e})"}
    write_json(out / "second_variation.json", second)
    return ["first_variation.json", "second_variation.json"]


def task_stability(cfg: RunConfig, f: MapField, out: Path, threads: int) -> list[str]:
    rep = stability_verdict(
        f,
        probes=cfg.numeric.probes,
        seed=cfg.numeric.seed,
        rayleigh_iters=cfg.numeric.rayleigh_iters,
        rayleigh_samples=cfg.numeric.rayleigh_samples,
        threads=threads,
    )
    witness_ref = None
    if rep.witness is not None:
        witness_ref = "witness.csv"
        write_node_table(out / witness_ref, rep.witness.vectors, [f"v{k}" for k in range(f.target.ambient_dim)])
    write_json(out / "report.json", rep.to_dict(witness_ref))
    return ["report.json"] + ([witness_ref] if witness_ref else [])


def task_identities(cfg: RunConfig, f: MapField, out: Path, threads: int) -> list[str]:
    rng = np.random.default_rng(cfg.numeric.seed)
    W = random_tangent_field(f, rng).vectors
    lhs, rhs = integration_by_parts_sides(f, W)
    summary = {"seed": cfg.numeric.seed, "integration_by_parts": {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs)}}
    files = ["identities.json"]
    if isinstance(f.target, Sphere):
        ids = check_sphere_identities(f)
        table = np.stack([*ids.left, *ids.right, *ids.residuals], axis=-1)
        cols = [f"{side}{j}" for side in ("left", "right", "residual") for j in (1, 2, 3)]
        write_node_table(out / "identities.csv", table, cols)
        summary["identity_residuals"] = ids.max_residuals
        files.append("identities.csv")
    write_json(out / "identities.json", summary)
    return files


TASKS = {
    "flow": task_flow,
    "check-variation": task_check_variation,
    "stability": task_stability,
    "identities": task_identities,
}


def write_manifest(cfg: RunConfig, f: MapField, out: Path, threads: int, outputs: list[str]) -> None:
    write_json(
        out / "manifest.json",
        {
            "version": __version__,
            "config": cfg.model_dump(mode="json"),
            "config_hash": config_hash(cfg),
            "task": cfg.task,
            "grid_spacing": list(f.manifold.spacing),
            "dims": list(f.manifold.dims),
            "stencil_order": cfg.numeric.stencil_order,
            "tolerances": {
                "residual_tol": cfg.numeric.residual_tol,
                "criticality": "1e-6 * (1 + max e_f)",
                "instability": INSTABILITY_TOL,
                "sign_test_zero_band": SIGN_TEST_ATOL,
                "fd_steps": cfg.numeric.fd_steps,
            },
            "threads": threads,
            "outputs": sorted(outputs),
        },
    )


def run(config_path: Path, out: Path | None = None, seed: int | None = None, threads: int = 1) -> int:
    """Execute one configured task; returns the process exit status."""
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.model_copy(update={"numeric": cfg.numeric.model_copy(update={"seed": seed})})
        if threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {threads}")
        out_dir = Path(out) if out is not None else Path(config_path).parent / cfg.output
        f = build_map(cfg, Path(config_path).parent)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc} (node {exc.node})", file=sys.stderr)
        return EXIT_GUARD
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        outputs = TASKS[cfg.task](cfg, f, out_dir, threads)
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc} (node {exc.node})", file=sys.stderr)
        return EXIT_GUARD
    write_manifest(cfg, f, out_dir, threads, outputs)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="exph", description="Exponential subelliptic harmonic map toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the task described by a JSON config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="output directory (default: config 'output')")
    p_run.add_argument("--seed", type=int, default=None, help="override numeric.seed")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads for probe evaluation")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
