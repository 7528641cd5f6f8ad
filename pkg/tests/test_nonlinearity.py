"""Power-law nonlinearities: worked values, homogeneity, growth certificates."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from viscowave import (NonlinearityError, certify_growth,
                       check_exponent_constraints, power_nonlinearity,
                       zero_nonlinearity)
from viscowave.nonlinearity import Nonlinearity, apply, apply_derivative


def test_worked_example_cubic():
    f = power_nonlinearity(1.0, 2)
    assert f.value(2.0) == pytest.approx(8.0)
    assert f.dvalue(2.0) == pytest.approx(12.0)


def test_worked_example_quadratic_negative_argument():
    f = power_nonlinearity(1.0, 1)
    assert f.value(-3.0) == pytest.approx(-9.0)
    assert f.dvalue(-3.0) == pytest.approx(6.0)


def test_value_and_derivative_vanish_at_zero():
    for r in (0.5, 1, 2):
        f = power_nonlinearity(2.3, r)
        assert f.value(0.0) == 0.0
        assert f.dvalue(0.0) == 0.0


def test_zero_nonlinearity():
    f = zero_nonlinearity()
    tau = np.linspace(-3, 3, 7)
    assert_allclose(f.value(tau), 0.0)
    assert_allclose(f.dvalue(tau), 0.0)
    assert f.homogeneous


@settings(max_examples=50, deadline=None)
@given(tau=st.floats(min_value=-10, max_value=10,
                     allow_nan=False, allow_infinity=False),
       lam=st.sampled_from([0.5, 2.0, 10.0]),
       r=st.sampled_from([0.5, 1.0, 2.0]))
def test_homogeneity_identity(tau, lam, r):
    f = power_nonlinearity(1.7, r)
    left = f.value(lam * tau)
    right = lam ** (r + 1.0) * f.value(tau)
    assert_allclose(left, right, rtol=1e-12, atol=1e-300)


def test_scaling_worked_example():
    # lambda = 2, r = 1: f(2u) = 4 f(u) pointwise
    f = power_nonlinearity(1.0, 1)
    u = np.array([[0.3, -1.2], [2.0, 0.0]])
    assert_allclose(f.value(2 * u), 4.0 * f.value(u), rtol=1e-14)


def test_nodal_coefficient_full_grid_and_per_node():
    coeff = np.arange(10, dtype=float)
    f = power_nonlinearity(coeff, 1)
    nodes = np.array([2, 5, 7])
    tau = np.array([1.0, -2.0, 3.0])
    assert_allclose(f.value(tau, nodes), coeff[nodes] * np.abs(tau) * tau)
    # per-node layout: one coefficient per evaluation node
    fsub = power_nonlinearity(coeff[nodes], 1)
    assert_allclose(fsub.value(tau, nodes), coeff[nodes] * np.abs(tau) * tau)


def test_nodal_coefficient_length_mismatch():
    f = power_nonlinearity(np.ones(4), 1)
    with pytest.raises(NonlinearityError, match="matches neither"):
        f.value(np.ones(3), np.array([5, 6, 7]))


def test_negative_exponent_rejected():
    with pytest.raises(NonlinearityError, match="nonnegative"):
        power_nonlinearity(1.0, -0.5)


def test_nonfinite_coefficient_rejected():
    with pytest.raises(NonlinearityError, match="finite"):
        power_nonlinearity(np.array([1.0, np.nan]), 1)


def test_apply_matches_pointwise(rng):
    coeff = rng.normal(size=6)
    f = power_nonlinearity(coeff, 2)
    u = rng.normal(size=(5, 6))
    nodes = np.arange(6)
    assert_allclose(apply(f, u, nodes), coeff * np.abs(u) ** 2 * u)
    assert_allclose(apply_derivative(f, u, nodes), 3.0 * coeff * np.abs(u) ** 2)


def test_apply_zero_field_is_zero():
    f = power_nonlinearity(3.0, 2)
    u = np.zeros((4, 5))
    assert_allclose(apply(f, u), 0.0)


def test_apply_rejects_nonfinite_output():
    f = power_nonlinearity(1.0, 2)
    with np.errstate(over="ignore"), pytest.raises(NonlinearityError,
                                                   match="non-finite"):
        apply(f, np.array([[1e300]]))


def test_directional_difference_first_order(rng):
    # [f(u + eps h) - f(u)]/eps approaches the differential at rate eps
    f = power_nonlinearity(1.0, 2)
    u = 1.0 + 0.3 * rng.normal(size=20)
    hdir = rng.normal(size=20)
    errs = []
    eps_list = (1e-2, 1e-3, 1e-4)
    for eps in eps_list:
        fd = (apply(f, u + eps * hdir) - apply(f, u)) / eps
        errs.append(np.linalg.norm(fd - apply_derivative(f, u) * hdir))
    slope = np.polyfit(np.log(eps_list), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)


def test_frechet_remainder_superlinear(rng):
    # || f(u+h) - f(u) - df(u) h || = o(||h||) for r in {1, 2}
    u = 0.5 * rng.normal(size=30)
    hdir = rng.normal(size=30)
    for r in (1, 2):
        f = power_nonlinearity(1.0, r)
        norms, rems = [], []
        for eps in (1e-1, 1e-2, 1e-3):
            h = eps * hdir
            rem = apply(f, u + h) - apply(f, u) - apply_derivative(f, u) * h
            norms.append(np.linalg.norm(h))
            rems.append(np.linalg.norm(rem))
        ratios = np.asarray(rems) / np.asarray(norms)
        assert ratios[2] < ratios[1] < ratios[0]


def test_continuity_along_convergent_sequence(rng):
    f = power_nonlinearity(1.0, 2)
    u = rng.normal(size=(6, 8))
    noise = rng.normal(size=(6, 8))
    prev = np.inf
    for k in (1, 4, 16, 64):
        uk = u + noise / k
        err = np.max(np.abs(apply(f, uk) - apply(f, u)))
        assert err < prev or err == 0.0
        prev = err


def test_certify_growth_power_law_is_tight():
    for r in (1, 2):
        rep = certify_growth(power_nonlinearity(1.0, r), (-5.0, 5.0))
        assert rep.A == pytest.approx(0.0, abs=1e-8)
        assert rep.B == pytest.approx(r + 1.0, rel=1e-6)
        assert rep.max_violation <= 1e-10


def test_certify_growth_half_coefficient():
    rep = certify_growth(power_nonlinearity(0.5, 1), (-4.0, 4.0))
    assert rep.B == pytest.approx(1.0, rel=1e-6)


def test_certify_growth_flags_exponential():
    f = Nonlinearity(value_fn=lambda nodes, tau: np.expm1(tau),
                     dvalue_fn=lambda nodes, tau: np.exp(tau), r=2.0)
    rep = certify_growth(f, (0.0, 10.0), r=2)
    assert rep.max_violation > 0.0


def test_certify_growth_report_dict():
    rep = certify_growth(power_nonlinearity(1.0, 1), (-2.0, 2.0))
    d = rep.to_dict()
    assert d["tau_range"] == [-2.0, 2.0]
    assert set(d) == {"A", "B", "r", "max_violation", "tau_range"}


def test_certify_growth_needs_exponent():
    f = Nonlinearity(value_fn=lambda nodes, tau: tau,
                     dvalue_fn=lambda nodes, tau: np.ones_like(tau))
    with pytest.raises(NonlinearityError, match="exponent"):
        certify_growth(f, (-1.0, 1.0))


def test_exponent_constraint_warnings():
    with pytest.warns(UserWarning, match="homogeneity degree"):
        msgs = check_exponent_constraints(0.3, r=4.0)
    assert len(msgs) == 1
    with pytest.warns(UserWarning, match="integrability"):
        check_exponent_constraints(0.3, p=2.0)
    with pytest.warns(UserWarning, match="exceed 2"):
        check_exponent_constraints(0.5, p=2.0)
    assert check_exponent_constraints(0.5, r=10.0, p=3.0) == []
    assert check_exponent_constraints(0.8, r=2.0, p=2.0) == []
