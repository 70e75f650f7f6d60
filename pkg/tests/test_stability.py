import math

import numpy as np
import pytest

from exph.fixtures import constant_map, eigenmap, perturbed_phase, random_smooth_map
from exph.flow import minimize
from exph.frame_geometry import build_framed_torus
from exph.stability import (
    check_sphere_identities,
    min_rayleigh,
    sphere_index_sum,
    sphere_parallel_field,
    stability_verdict,
    theorem33_integral,
)
from exph.targets import Euclidean, Hyperbolic, Sphere
from exph.variational import index_form, l2_inner

VOL = (2 * np.pi) ** 3


@pytest.fixture(scope="module")
def eig5():
    return eigenmap(build_framed_torus("flat", (48, 4, 4), stencil_order=4), Sphere(5))


def test_parallel_fields_are_tangent(eig5):
    for a in range(6):
        V = sphere_parallel_field(eig5, a).vectors
        assert np.max(np.abs(np.sum(V * eig5.values, axis=-1))) < 1e-15
    with pytest.raises(IndexError):
        sphere_parallel_field(eig5, 6)


def test_parallel_field_needs_sphere():
    f = constant_map(build_framed_torus("flat", (8, 8, 8)), Euclidean(2))
    with pytest.raises(TypeError):
        sphere_parallel_field(f, 0)


def test_sphere_sum_closed_form(eig5):
    res = sphere_index_sum(eig5)
    expect = -2 * math.exp(0.5) * VOL
    assert res.value == pytest.approx(expect, rel=1e-3)
    assert res.closed_form == pytest.approx(expect, rel=1e-3)
    assert res.consistent
    assert sum(res.per_field) == pytest.approx(res.value)
    assert theorem33_integral(eig5) == pytest.approx(expect, rel=1e-3)


def test_sphere_sum_for_constant_map_vanishes():
    f = constant_map(build_framed_torus("flat", (8, 8, 8)), Sphere(3))
    res = sphere_index_sum(f)
    assert res.value == 0.0 and res.closed_form == 0.0


def test_identities_hold_for_eigenmap(eig5):
    ids = check_sphere_identities(eig5)
    for left, value in zip(ids.left, (1.0, 1.0, 4.0)):
        assert np.max(np.abs(left - value)) < 1e-3
    assert ids.max_residuals[2] < 1e-12


def test_identity_residuals_decay_at_order_two():
    res = []
    for n in (24, 48, 96):
        M = build_framed_torus("twisted", (n, n, 8))
        f = perturbed_phase(M, Sphere(4), 0.2)
        res.append(max(check_sphere_identities(f).max_residuals))
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    assert min(orders) > 1.8


def test_rayleigh_constant_map_sphere():
    f = constant_map(build_framed_torus("flat", (8, 8, 8)), Sphere(3))
    r = min_rayleigh(f, samples=2, seed=1)
    assert -1e-6 <= r.estimate <= 1e-6
    assert l2_inner(f, r.minimizer, r.minimizer) == pytest.approx(1.0)


def test_rayleigh_eigenmap_is_negative(eig5):
    r = min_rayleigh(eig5, iters=50, samples=1)
    assert r.estimate < 0
    assert index_form(eig5, r.minimizer) < 0


def test_rayleigh_rejects_noncritical():
    f = perturbed_phase(build_framed_torus("flat", (8, 8, 8)), Sphere(3), 0.3)
    with pytest.raises(ValueError):
        min_rayleigh(f)


@pytest.mark.parametrize("target", [Euclidean(3), Hyperbolic(3)])
def test_nonpositive_curvature_gives_stable_evidence(target):
    M = build_framed_torus("stretched", (10, 10, 10))
    f = minimize(random_smooth_map(M, target, np.random.default_rng(2), amplitude=0.3)).final_map
    rep = stability_verdict(f, probes=10, seed=3)
    assert rep.critical
    assert rep.verdict == "stable-evidence"
    assert rep.probe_min >= -1e-8 and rep.rayleigh_min >= -1e-6
    assert rep.sphere_sum is None


def test_constant_sphere_map_is_stable_evidence():
    f = constant_map(build_framed_torus("flat", (8, 8, 8)), Sphere(3))
    rep = stability_verdict(f, probes=5)
    assert rep.verdict == "stable-evidence"
    assert rep.pointwise_bound_holds is False


def test_eigenmap_unstable_with_witness(eig5):
    rep = stability_verdict(eig5, probes=5, seed=0)
    assert rep.verdict == "unstable"
    assert rep.sign_test_verdict == "unstable"
    assert rep.pointwise_bound_holds
    assert rep.witness is not None and rep.witness_value < 0
    assert index_form(eig5, rep.witness) == pytest.approx(rep.witness_value)


def test_noncritical_map_is_inconclusive():
    f = perturbed_phase(build_framed_torus("flat", (8, 8, 8)), Sphere(5), 0.3)
    rep = stability_verdict(f, probes=2, rayleigh_iters=5, rayleigh_samples=1)
    assert rep.verdict == "inconclusive"
    assert not rep.critical


def test_report_keys_and_threads_are_deterministic(eig5):
    a = stability_verdict(eig5, probes=6, seed=4, threads=1).to_dict("w.csv")
    b = stability_verdict(eig5, probes=6, seed=4, threads=3).to_dict("w.csv")
    assert a == b
    assert {"energy", "residual", "rayleigh_min", "sphere_sum", "theorem33_value", "identity_residuals",
            "verdict", "witness_ref", "seed"} <= set(a)
