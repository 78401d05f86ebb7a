import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normbound.model import (ForcingTerm, LipschitzEnvelope, MatrixFunction, ModelError, Monomial,
                             PolynomialField, SystemSpec, TrigAffineScalar, default_lipschitz_radius,
                             derive_envelope, eval_rhs, forcing_amplitude, lipschitz_constant,
                             oscillator_system)

from conftest import cubic_field, sin_scalar

finite = st.floats(-10, 10, allow_nan=False)


def test_eval_rhs_constant_oscillator():
    spec = oscillator_system()
    np.testing.assert_allclose(eval_rhs(spec, 0.0, [1.0, 0.0]), [0.0, -4.0])


def test_eval_rhs_zero_state_without_forcing():
    spec = oscillator_system(a1=0.5, r1=math.pi, a2=0.5, r2=7.0)
    for t in (0.0, 0.3, 17.1):
        np.testing.assert_array_equal(eval_rhs(spec, t, [0.0, 0.0]), [0.0, 0.0])


def test_eval_rhs_forcing_only():
    spec = SystemSpec(MatrixFunction.constant(np.zeros((2, 2))), PolynomialField.zero(2),
                      ForcingTerm((0.0, sin_scalar(0.01, 2 * math.pi))))
    np.testing.assert_allclose(eval_rhs(spec, 0.25, [0.3, -0.2]), [0.0, 0.01], atol=1e-15)


def test_eval_rhs_batched_matches_rowwise(rng):
    spec = oscillator_system(a=0.3, a1=5, r1=3.2 * math.pi, a2=5, r2=13)
    X = rng.standard_normal((7, 2))
    batch = eval_rhs(spec, 1.7, X)
    for row, x in zip(batch, X):
        np.testing.assert_allclose(row, eval_rhs(spec, 1.7, x), rtol=1e-15)


def test_degree_zero_monomial_rejected():
    with pytest.raises(ModelError, match="f\\(t, 0\\) = 0"):
        Monomial(1.0, (0, 0))


def test_negative_exponent_rejected():
    with pytest.raises(ModelError):
        Monomial(1.0, (-1, 2))


def test_harmonic_with_negative_frequency_rejected():
    with pytest.raises(ModelError):
        TrigAffineScalar(0.0, ((1.0, -2.0, 0.0),))


def test_dimension_mismatch_rejected():
    with pytest.raises(ModelError):
        SystemSpec(MatrixFunction.constant(np.eye(2)), PolynomialField.zero(3), ForcingTerm.zero(2))


def test_envelope_of_mixed_field():
    f = PolynomialField(((Monomial(1.0, (1, 3)),), (Monomial(1.0, (2, 0)),)))
    env = derive_envelope(f)
    assert env.sup_coefficients == {2: 1.0, 4: 1.0}
    for rho in (0.0, 0.5, 1.0, 2.0):
        assert env.sup(rho) == pytest.approx(rho ** 4 + rho ** 2, rel=1e-15)


def test_envelope_of_cubic_oscillator_field():
    env = derive_envelope(cubic_field(0.1, on=1))
    assert env.sup_coefficients == {3: 0.1}
    assert env.sup(2.0) == pytest.approx(0.8)


def test_envelope_of_zero_field():
    env = derive_envelope(PolynomialField.zero(2))
    assert env.is_zero
    assert env.sup(3.0) == 0.0


def test_envelope_sign_of_constant_coefficient_irrelevant():
    assert derive_envelope(cubic_field(0.1, on=0)) == derive_envelope(cubic_field(-0.1, on=0))


def test_duffing_and_vdp_envelopes_equal():
    vdp = oscillator_system(cubic_on=1).f
    duffing = oscillator_system(cubic_on=0).f
    assert vdp != duffing
    assert derive_envelope(vdp) == derive_envelope(duffing)


def test_envelope_with_oscillating_coefficient():
    coef = sin_scalar(0.3, 2.0, const=0.1)
    env = derive_envelope(PolynomialField(((Monomial(coef, (2, 0)),), ())))
    assert env.sup_coefficients == {2: pytest.approx(0.4)}
    t = np.linspace(0, 10, 101)
    np.testing.assert_allclose(env.coefficient_profile(2, t), np.abs(0.1 + 0.3 * np.sin(2 * t)))


def test_envelope_rejects_degree_zero():
    with pytest.raises(ModelError):
        LipschitzEnvelope(((0, (TrigAffineScalar(1.0),)),))


@pytest.mark.parametrize("field_builder", [
    lambda: cubic_field(0.1, on=1),
    lambda: cubic_field(-0.05, on=0),
    lambda: PolynomialField(((Monomial(1.0, (1, 3)),), (Monomial(1.0, (2, 0)),))),
    lambda: PolynomialField(((Monomial(sin_scalar(0.5, 3.0, 0.2), (1, 1)),
                              Monomial(-0.7, (0, 2))),
                             (Monomial(sin_scalar(1.0, 1.0), (3, 0)),))),
])
def test_envelope_majorizes_field_on_random_samples(field_builder, rng):
    f = field_builder()
    env = derive_envelope(f)
    t = rng.uniform(0, 50, 10_000)
    x = rng.standard_normal((10_000, 2)) * rng.uniform(0, 3, (10_000, 1))
    values = np.array([np.linalg.norm(f(ti, xi)) for ti, xi in zip(t[:2000], x[:2000])])
    rho = np.linalg.norm(x[:2000], axis=1)
    bound = env(t[:2000], rho)
    assert np.all(values <= bound * (1 + 1e-12) + 1e-15)
    # batched evaluation of the whole sample
    batched = np.linalg.norm(np.stack([f(ti, xi) for ti, xi in zip(t, x)]), axis=1)
    assert np.all(batched <= env(t, np.linalg.norm(x, axis=1)) * (1 + 1e-12) + 1e-15)


@settings(max_examples=200, deadline=None)
@given(a=finite, b=finite, x1=finite, x2=finite, t=st.floats(0, 100))
def test_envelope_majorizes_quadratic_field(a, b, x1, x2, t):
    f = PolynomialField(((Monomial(a, (1, 1)),), (Monomial(sin_scalar(b, 1.3), (0, 2)),)))
    env = derive_envelope(f)
    x = np.array([x1, x2])
    assert np.linalg.norm(f(t, x)) <= env(t, np.linalg.norm(x)) * (1 + 1e-12) + 1e-300


def test_scalar_evaluator_matches_vector_call(rng):
    f = PolynomialField(((Monomial(sin_scalar(0.5, 3.0, 0.2), (1, 1)),),
                         (Monomial(-0.1, (0, 3)), Monomial(sin_scalar(1.0, 1.0), (3, 0)))))
    env = derive_envelope(f)
    fast = env.scalar_evaluator()
    for t, r in rng.uniform(0, 10, (50, 2)):
        assert fast(t, r) == pytest.approx(env(t, r), rel=1e-13)


def test_lipschitz_constant_examples():
    cubic = derive_envelope(cubic_field(0.1, on=1))
    assert lipschitz_constant(cubic, 2.0)[0] == pytest.approx(0.4)
    mixed = derive_envelope(PolynomialField(((Monomial(1.0, (1, 3)),), (Monomial(1.0, (2, 0)),))))
    assert lipschitz_constant(mixed, 1.0)[0] == pytest.approx(2.0)
    zero = derive_envelope(PolynomialField.zero(2))
    l_hat, profile = lipschitz_constant(zero, 5.0)
    assert l_hat == 0.0 and profile(3.0) == 0.0


@pytest.mark.parametrize("R", [0.0, -1.0])
def test_lipschitz_constant_rejects_nonpositive_radius(R):
    with pytest.raises(ValueError):
        lipschitz_constant(derive_envelope(cubic_field(0.1, 1)), R)


def test_lipschitz_profile_bounds_l_hat(rng):
    env = derive_envelope(PolynomialField(((Monomial(sin_scalar(0.5, 3.0, 0.2), (2, 0)),), ())))
    l_hat, profile = lipschitz_constant(env, 1.5)
    t = rng.uniform(0, 100, 1000)
    assert np.all(profile(t) <= l_hat + 1e-15)
    assert l_hat == pytest.approx(0.7 * 1.5)


def test_forcing_amplitude_examples():
    assert forcing_amplitude(ForcingTerm((0.0, sin_scalar(0.01, 2 * math.pi)))) == pytest.approx(0.01)
    assert forcing_amplitude(ForcingTerm.zero(2)) == 0.0
    F = ForcingTerm((sin_scalar(0.03, 1.0), sin_scalar(0.04, 1.0, phase=math.pi / 2)))
    assert forcing_amplitude(F) == pytest.approx(0.05)


def test_forcing_amplitude_bounds_norm(rng):
    F = ForcingTerm((sin_scalar(0.03, 1.0, 0.01), sin_scalar(0.04, 2.3, phase=0.4)))
    t = rng.uniform(0, 100, 5000)
    assert np.all(F.norm(t) <= forcing_amplitude(F) + 1e-15)


def test_matrix_function_evaluate_matches_call():
    A = oscillator_system(a1=0.5, r1=math.pi, a2=0.5, r2=7.0).A
    times = np.linspace(0, 3, 31)
    stacked = A.evaluate(times)
    for t, M in zip(times, stacked):
        np.testing.assert_array_equal(M, A(t))
    np.testing.assert_array_equal(A.frozen(), [[0.0, 1.0], [-4.0, -0.2]])


def test_oscillator_matrix_entries():
    A = oscillator_system(a1=0.5, r1=math.pi, a2=0.5, r2=7.0).A
    t = 0.37
    expected = -(4.0 + 0.5 * math.sin(math.pi * t) + 0.5 * math.sin(7 * t))
    assert A(t)[1, 0] == pytest.approx(expected, rel=1e-15)
    assert A(t)[1, 1] == -0.2


def test_default_lipschitz_radius_companion():
    R, note = default_lipschitz_radius(oscillator_system().A, 0.5)
    assert R == pytest.approx(1.0)
    assert "companion" in note


def test_default_lipschitz_radius_general_matrix():
    R, _ = default_lipschitz_radius(MatrixFunction.constant(np.diag([-1.0, -2.0])), 0.5)
    assert R == pytest.approx(0.5)
