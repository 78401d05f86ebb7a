import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from normbound.auxiliary import (AuxCoefficients, CurveKind, Status, build_coefficients,
                                 evaluate_criteria, solve_bernoulli, solve_linear_aux,
                                 solve_nonlinear_aux)
from normbound.model import LipschitzEnvelope, TrigAffineScalar, derive_envelope, oscillator_system
from normbound.transition import Exponents, compute_fundamental

from conftest import cubic_field

CUBIC_005 = LipschitzEnvelope(((3, (TrigAffineScalar(0.05),)),))


@pytest.fixture(scope="module")
def fig2_coeffs():
    spec = oscillator_system(a=0.01, a1=0.5, r1=math.pi, a2=0.5, r2=7.0, horizon=20.0)
    path = compute_fundamental(spec.A, 0.0, 20.0, "spectral")
    return build_coefficients(spec, path, X0=0.5)


def u_closed_form(X0, t):
    # X' = -0.1 X + 0.05 X^3 with u = X^-2: u' = 0.2 u - 0.1
    return 0.5 + (X0 ** -2 - 0.5) * math.exp(0.2 * t)


def test_linear_decay():
    c = AuxCoefficients.constant(-1.0, 1.0, l=0.0)
    curve = solve_linear_aux(c, 1.0)
    assert curve.at(1.0) == pytest.approx(math.exp(-1), abs=1e-6)
    assert curve.kind == CurveKind.LINEAR


def test_linear_zero_start_zero_forcing():
    curve = solve_linear_aux(AuxCoefficients.constant(-0.3, 2.0, l=0.1), 0.0)
    assert np.all(curve.X == 0.0)


def test_linear_forced_converges_to_ultimate_bound():
    c = AuxCoefficients.constant(-1.0, 1.0, forcing=1.0, l=0.0, horizon=30.0)
    curve = solve_linear_aux(c, 0.0)
    np.testing.assert_allclose(curve.X, 1 - np.exp(-curve.grid), atol=1e-12)
    report = evaluate_criteria(c)
    assert report.cor2["nu"] == pytest.approx(1.0)
    assert report.cor2["ultimate_bound"] == pytest.approx(1.0)
    assert curve.X[-1] == pytest.approx(report.cor2["ultimate_bound"], abs=1e-12)


def test_linear_needs_profile():
    with pytest.raises(ValueError):
        solve_linear_aux(AuxCoefficients.constant(-1.0, 1.0), 1.0)


def test_nonlinear_without_envelope_equals_linear(fig2_coeffs):
    c = fig2_coeffs
    degenerate = AuxCoefficients(grid=c.grid, p=c.p, k=c.k, envelope=LipschitzEnvelope(),
                                 forcing_norm=c.forcing_norm, forcing_hat=c.forcing_hat,
                                 l_profile=np.zeros_like(c.grid), l_hat=0.0)
    for X0 in (0.0, 0.5, 2.0):
        lin = solve_linear_aux(degenerate, X0)
        nl = solve_nonlinear_aux(degenerate, X0)
        np.testing.assert_allclose(nl.X, lin.X, atol=1e-6, rtol=1e-6)


def test_nonlinear_against_scipy(fig2_coeffs):
    c = fig2_coeffs
    env = c.envelope

    def rhs(t, X):
        p = np.interp(t, c.grid, c.p)
        k = np.interp(t, c.grid, c.k)
        F = np.interp(t, c.grid, c.forcing_norm)
        return [p * X[0] + k * (env(t, max(X[0], 0.0)) + F)]

    curve = solve_nonlinear_aux(c, 0.5)
    ref = solve_ivp(rhs, (0.0, 20.0), [0.5], method="DOP853", rtol=1e-11, atol=1e-13,
                    t_eval=curve.grid[::50], max_step=0.01)
    np.testing.assert_allclose(curve.X[::50], ref.y[0], rtol=1e-6, atol=1e-9)


def test_nonlinear_bernoulli_value():
    c = AuxCoefficients.constant(-0.1, 1.0, envelope=CUBIC_005)
    curve = solve_nonlinear_aux(c, 1.0)
    assert curve.at(5.0) == pytest.approx(0.73343, abs=1e-4)
    assert curve.at(5.0) == pytest.approx(u_closed_form(1.0, 5.0) ** -0.5, rel=1e-8)


def test_nonlinear_blow_up_time():
    curve = solve_nonlinear_aux(AuxCoefficients.constant(-0.1, 1.0, envelope=CUBIC_005), 2.0)
    assert curve.blew_up
    assert curve.blow_up_time == pytest.approx(5 * math.log(2), abs=1e-2)
    assert curve.grid[-1] <= curve.blow_up_time


def test_bernoulli_closed_form():
    curve = solve_bernoulli(-0.1, 1.0, 0.05, 3.0, 1.0)
    assert curve.at(5.0) == pytest.approx(0.73343, abs=1e-4)
    assert curve.at(5.0) == pytest.approx(((math.e + 1) / 2) ** -0.5, rel=1e-14)
    np.testing.assert_allclose(curve.X, [u_closed_form(1.0, t) ** -0.5 for t in curve.grid],
                               rtol=1e-13)


def test_bernoulli_blow_up_exact():
    curve = solve_bernoulli(-0.1, 1.0, 0.05, 3.0, 2.0)
    assert curve.blow_up_time == pytest.approx(5 * math.log(2), rel=1e-14)


def test_bernoulli_zero_start():
    assert np.all(solve_bernoulli(-0.1, 1.0, 0.05, 3.0, 0.0).X == 0.0)


def test_bernoulli_rejects_linear_exponent():
    with pytest.raises(ValueError):
        solve_bernoulli(-0.1, 1.0, 0.05, 1.0, 1.0)


def test_bernoulli_series_matches_constant():
    grid = np.linspace(0, 10, 100_001)
    ones = np.ones_like(grid)
    series = solve_bernoulli(-0.1 * ones, ones, 0.05 * ones, 3.0, 1.0, grid=grid)
    const = solve_bernoulli(-0.1, 1.0, 0.05, 3.0, 1.0, grid=grid)
    np.testing.assert_allclose(series.X, const.X, rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(p=st.floats(-1, 0.2), k=st.floats(1, 3), c=st.floats(0.0, 0.2),
       X0=st.floats(0.01, 1.5))
def test_nonlinear_matches_bernoulli_property(p, k, c, X0):
    env = LipschitzEnvelope(((3, (TrigAffineScalar(c),)),)) if c > 0 else LipschitzEnvelope()
    coeffs = AuxCoefficients.constant(p, k, envelope=env, horizon=5.0, step=0.05)
    num = solve_nonlinear_aux(coeffs, X0)
    exact = solve_bernoulli(p, k, c, 3.0, X0, grid=coeffs.grid)
    if exact.blew_up and exact.blow_up_time < 5.0:
        assert num.blew_up
        return
    m = min(len(num.X), len(exact.X))
    np.testing.assert_allclose(num.X[:m], exact.X[:m], rtol=1e-6, atol=1e-12)


def test_monotone_in_initial_value(fig2_coeffs):
    curves = [solve_nonlinear_aux(fig2_coeffs, X0) for X0 in (0.1, 0.3, 0.5, 0.7)]
    for lo, hi in zip(curves, curves[1:]):
        m = min(len(lo.X), len(hi.X))
        assert np.all(lo.X[:m] <= hi.X[:m] + 1e-9)


def test_linear_dominates_nonlinear_inside_radius(fig2_coeffs):
    # with l = L(R)/R the linear equation majorizes the nonlinear one while X <= R
    c = fig2_coeffs
    lin = solve_linear_aux(c, 0.5)
    nl = solve_nonlinear_aux(c, 0.5)
    inside = np.maximum.accumulate(nl.X) <= c.lipschitz_radius
    assert np.all(nl.X[inside] <= lin.X[inside] * (1 + 1e-6))


def test_build_coefficients_notes_default_radius(fig2_coeffs):
    assert fig2_coeffs.lipschitz_radius == pytest.approx(1.0)
    assert any("default Lipschitz radius" in n for n in fig2_coeffs.notes)
    assert fig2_coeffs.l_hat == pytest.approx(0.1)
    assert fig2_coeffs.forcing_hat == pytest.approx(0.01)


def test_build_coefficients_without_radius():
    spec = oscillator_system(horizon=5.0)
    c = build_coefficients(spec, compute_fundamental(spec.A, 0.0, 5.0))
    assert c.l_profile is None and c.lipschitz_radius is None
    assert evaluate_criteria(c).cor2["status"] == Status.INCONCLUSIVE


def test_coefficients_validation():
    with pytest.raises(ValueError):
        AuxCoefficients.constant(-0.1, 0.5)
    with pytest.raises(ValueError):
        AuxCoefficients(grid=np.linspace(0, 1, 11), p=np.zeros(5), k=1.0,
                        envelope=LipschitzEnvelope(), forcing_norm=0.0)
    with pytest.raises(ValueError):
        AuxCoefficients.constant(-0.1, 1.0, forcing=-1.0)


def test_criteria_pointwise_holds():
    report = evaluate_criteria(AuxCoefficients.constant(-0.15, 2.0, l=0.02))
    assert report.cor2["status"] == Status.HOLDS
    assert report.cor2["nu"] == pytest.approx(0.11)
    assert report.cor1["status"] == Status.HOLDS


def test_criteria_boundary_case_fails():
    c = AuxCoefficients.constant(0.0, 1.0, l=0.0)
    report = evaluate_criteria(c, exponents=Exponents(0.0, 1.0, 0.0, (0.0,)))
    assert report.cor1["status"] == Status.FAILS
    assert report.cor2["status"] == Status.FAILS
    assert report.cor3["status"] == Status.FAILS
    assert report.cor4["status"] == Status.FAILS
    assert report.classical6["status"] == Status.FAILS
    assert report.classical8["status"] == Status.FAILS


def test_criteria_isolated_zero_allowed():
    grid = np.linspace(0, 10, 1001)
    p = -0.1 * (grid - 5.0) ** 2   # touches zero only at t = 5
    c = AuxCoefficients(grid=grid, p=p, k=1.0, envelope=LipschitzEnvelope(),
                        forcing_norm=0.0, l_profile=0.0, l_hat=0.0)
    report = evaluate_criteria(c, t_star=0.0)
    assert report.cor1["status"] == Status.HOLDS
    assert report.cor2["status"] == Status.FAILS


def test_classical_more_conservative_than_pointwise():
    c = AuxCoefficients.constant(-0.15, 1.0, l=0.1, horizon=50.0)
    report = evaluate_criteria(c, exponents=Exponents(-0.15, 2.0, 0.15, (0.0,)))
    assert report.classical6["value"] == pytest.approx(0.05)
    assert report.classical6["status"] == Status.FAILS
    assert report.cor2["nu"] == pytest.approx(0.05)
    assert report.cor2["status"] == Status.HOLDS


def test_criteria_exponent_based(fig2_coeffs):
    spec = oscillator_system(a1=0.5, r1=math.pi, a2=0.5, r2=7.0, horizon=100.0)
    path = compute_fundamental(spec.A, 0.0, 100.0)
    c = build_coefficients(spec, path, lipschitz_radius=0.3)
    report = evaluate_criteria(c, path)
    # l = 0.1 * 0.09: the linear part dominates, so the exponent test holds
    assert report.cor3["mu_max"] == pytest.approx(-0.1, abs=0.01)
    assert report.cor3["status"] == Status.HOLDS
    assert report.cor4["status"] in (Status.HOLDS, Status.INCONCLUSIVE)
    assert report.cor4["rho"] == pytest.approx(-report.cor3["chi"] - 1e-3)


def test_criteria_report_json_roundtrip():
    import json
    report = evaluate_criteria(AuxCoefficients.constant(-0.15, 2.0, l=0.02))
    data = json.loads(json.dumps(report.to_json(), allow_nan=False))
    assert data["cor2"]["status"] == "holds"


def test_t_star_outside_horizon():
    with pytest.raises(ValueError):
        evaluate_criteria(AuxCoefficients.constant(-0.15, 2.0, l=0.02), t_star=50.0)


def test_duffing_and_vdp_share_auxiliary_curve():
    duffing = oscillator_system(a1=0.5, r1=math.pi, a2=0.5, r2=7.0, cubic_on=0, horizon=10.0)
    vdp = oscillator_system(a1=0.5, r1=math.pi, a2=0.5, r2=7.0, cubic_on=1, horizon=10.0)
    path = compute_fundamental(duffing.A, 0.0, 10.0)
    a = solve_nonlinear_aux(build_coefficients(duffing, path, X0=0.5), 0.5)
    b = solve_nonlinear_aux(build_coefficients(vdp, path, X0=0.5), 0.5)
    assert np.array_equal(a.X, b.X)
    assert derive_envelope(duffing.f) == derive_envelope(cubic_field(-0.1, 0))
