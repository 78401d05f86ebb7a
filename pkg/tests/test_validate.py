import dataclasses
import math

import numpy as np
import pytest

from normbound.auxiliary import BoundCurve, CurveKind
from normbound.model import MatrixFunction, oscillator_system
from normbound.transition import compute_fundamental
from normbound.validate import (BoundaryTrace, SampleMode, check_bound, check_decay,
                                hull_containment, integrate_samples, sample_ellipsoid,
                                trace_boundary)

from conftest import linear_system, scalar_system


@pytest.fixture(scope="module")
def identity_path():
    return compute_fundamental(MatrixFunction.constant(np.zeros((2, 2))), 0.0, 1.0, "identity")


@pytest.fixture(scope="module")
def scaled_path(identity_path):
    shape = identity_path.W.shape
    return dataclasses.replace(identity_path, W=np.broadcast_to(np.diag([2.0, 1.0]), shape),
                               Winv=np.broadcast_to(np.diag([0.5, 1.0]), shape))


def test_surface_samples_identity(identity_path):
    x = sample_ellipsoid(identity_path, 0.0, 1.0, 200, SampleMode.SURFACE, seed=1)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.0, rtol=1e-14)


def test_surface_samples_scaled(scaled_path):
    x = sample_ellipsoid(scaled_path, 0.0, 1.0, 200, "surface", seed=2)
    np.testing.assert_allclose(np.linalg.norm(x @ np.diag([0.5, 1.0]), axis=1), 1.0, atol=1e-12)


def test_volume_samples_inside(scaled_path):
    x = sample_ellipsoid(scaled_path, 0.0, 0.7, 500, SampleMode.VOLUME, seed=3)
    r = np.linalg.norm(x @ np.diag([0.5, 1.0]), axis=1)
    assert np.all(r <= 0.7 + 1e-12)
    # uniform in the disc: the radius fraction below 0.7/sqrt(2) is about one half
    assert 0.4 < np.mean(r < 0.7 / math.sqrt(2)) < 0.6


def test_sampling_is_deterministic(identity_path):
    a = sample_ellipsoid(identity_path, 0.0, 1.0, 10, "volume", seed=7)
    b = sample_ellipsoid(identity_path, 0.0, 1.0, 10, "volume", seed=7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sample_ellipsoid(identity_path, 0.0, 1.0, 10, "volume", seed=8))


def test_sampling_arguments(identity_path):
    with pytest.raises(ValueError):
        sample_ellipsoid(identity_path, 0.0, -1.0, 5)
    with pytest.raises(ValueError):
        sample_ellipsoid(identity_path, 0.0, 1.0, 0)


def test_batched_integration_matches_single():
    spec = oscillator_system(a=0.3, a1=5, r1=3.2 * math.pi, a2=5, r2=13, alpha2=-0.05, horizon=5)
    x0s = np.array([[0.1, 0.2], [-0.3, 0.05], [0.0, 0.0]])
    batch = integrate_samples(spec, x0s, 0.0, 5.0, rel_tol=1e-11, abs_tol=1e-13)
    for j, x0 in enumerate(x0s):
        single = integrate_samples(spec, x0[None], 0.0, 5.0, rel_tol=1e-11, abs_tol=1e-13)
        np.testing.assert_allclose(batch.states[:, j], single.states[:, 0], atol=1e-9)


def test_escaping_sample_is_isolated():
    spec = scalar_system(0.0)
    spec = dataclasses.replace(spec, A=MatrixFunction.constant([[1.0]]))
    run = integrate_samples(spec, np.array([[1.0], [1e-8]]), 0.0, 10.0, escape_radius=1e3)
    assert run.escape_times[0] == pytest.approx(math.log(1e3), abs=1e-6)
    assert run.escape_times[1] is None
    assert np.isnan(run.states[-1, 0, 0]) and np.isfinite(run.states[-1, 1, 0])


def test_zero_system_never_violates():
    spec = linear_system(np.zeros((2, 2)), horizon=5.0)
    grid = np.linspace(0, 5, 51)
    bound = BoundCurve(grid, np.ones_like(grid), 1.0, CurveKind.LINEAR)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((20, 2))
    x0 /= np.linalg.norm(x0, axis=1, keepdims=True)
    report = check_bound(spec, bound, x0)
    assert report.ok and report.max_ratio == pytest.approx(1.0)


def test_tight_scalar_bound():
    spec = scalar_system(-1.0, horizon=5.0)
    grid = np.linspace(0, 5, 501)
    bound = BoundCurve(grid, 2.0 * np.exp(-grid), 2.0, CurveKind.LINEAR)
    report = check_bound(spec, bound, np.array([[2.0]]), rel_slack=0.0)
    assert report.max_ratio == pytest.approx(1.0, abs=1e-6)
    assert report.decayed_fraction == 1.0


def test_violation_is_reported():
    spec = scalar_system(-0.5, horizon=5.0)
    grid = np.linspace(0, 5, 501)
    bound = BoundCurve(grid, np.exp(-grid), 1.0, CurveKind.LINEAR)
    report = check_bound(spec, bound, np.array([[1.0], [0.0]]))
    assert not report.ok
    assert {v[0] for v in report.violations} == {0}
    assert report.max_ratio == pytest.approx(math.exp(2.5), rel=1e-6)
    data = report.to_json()
    assert data["violation_count"] == len(report.violations)


def test_escape_before_bound_blow_up_is_violation():
    spec = dataclasses.replace(scalar_system(0.0, horizon=10.0), A=MatrixFunction.constant([[2.0]]))
    grid = np.linspace(0, 10, 101)
    bound = BoundCurve(grid, np.full_like(grid, 1e9), 1.0, CurveKind.LINEAR)
    report = check_bound(spec, bound, np.array([[1.0]]))
    assert any(math.isinf(v[2]) for v in report.violations)
    assert report.max_ratio == math.inf


def test_check_decay_examples():
    spec = linear_system(np.diag([-1.0, -2.0]), horizon=20.0)
    rng = np.random.default_rng(1)
    assert check_decay(spec, rng.standard_normal((10, 2)), 20.0) == 1.0
    assert check_decay(spec, np.zeros((3, 2)), 20.0) == 1.0
    grow = scalar_system(1.0, horizon=5.0)
    assert check_decay(grow, np.array([[0.1], [0.2]]), 5.0) == 0.0
    with pytest.raises(ValueError):
        check_decay(spec, np.zeros((1, 2)), 25.0)


def test_trace_of_globally_stable_system_escapes():
    spec = linear_system(np.array([[0.0, 1.0], [-4.0, -0.2]]), horizon=100.0)
    path = compute_fundamental(spec.A, 0.0, 1.0, "identity")
    trace = trace_boundary(spec, path, 1.0, 0.0, 100.0, n_seeds=4, seed=0)
    assert not trace.finite_boundary
    assert trace.to_json()["escaped"] == 4
    assert len(trace.tail_cloud) == 0 and trace.loop_drift is None


def test_trace_is_deterministic():
    spec = oscillator_system(alpha2=-0.05, a1=0.1, r1=3.2 * math.pi, a2=0.1, r2=13, horizon=20)
    path = compute_fundamental(spec.A, 0.0, 1.0)
    a = trace_boundary(spec, path, 0.7, 0.0, 20.0, n_seeds=3, seed=5)
    b = trace_boundary(spec, path, 0.7, 0.0, 20.0, n_seeds=3, seed=5)
    assert np.array_equal(a.tail_cloud, b.tail_cloud)
    assert a.loop_drift == b.loop_drift


def test_trace_argument_check(identity_path):
    with pytest.raises(ValueError):
        trace_boundary(linear_system(np.zeros((2, 2))), identity_path, 1.0, 0.0, 1.0, n_seeds=0)


def test_hull_containment():
    theta = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    cloud = np.column_stack([np.cos(theta), np.sin(theta)])
    trace = BoundaryTrace(cloud[:1], [], (False,), cloud, 0.0)
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [2.0, 0.0], [0.0, -1.5]])
    assert hull_containment(trace, pts) == pytest.approx(0.5)
    empty = BoundaryTrace(cloud[:1], [], (True,), np.empty((0, 2)), None)
    assert hull_containment(empty, pts) == 0.0
