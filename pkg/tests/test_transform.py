import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynbridge import make_model
from dynbridge.model import build_coefficient
from dynbridge.transform import SpaceTransform, eval_A, eval_A_inv, eval_b

from conftest import HALF

# int_0^x dy / sqrt((y + 1)^2 + exp(-t)), 40-digit adaptive quadrature
A_II_0_1 = 0.5622618881592673172606674152933129603774
A_II_04_M25 = -2.395529516702331068459564786169640613261
B_INT_II_0_1 = -0.3931525384034478582990325515483036734075


def test_unit_coefficient_identity(gaussian):
    x = np.linspace(-3, 3, 7)
    for t in (0.0, 0.4, 1.0):
        np.testing.assert_array_equal(eval_A(gaussian, t, x), x)
        np.testing.assert_array_equal(eval_A_inv(gaussian, t, x), x)
        np.testing.assert_array_equal(eval_b(gaussian, t, x), 0.0 * x)


def test_constant_two():
    m = make_model(HALF, 0.5, a={"family": "constant", "a0": 2.0})
    assert eval_A(m, 0.3, 1.2) == pytest.approx(0.6, abs=1e-15)
    assert eval_A_inv(m, 0.3, 0.5) == pytest.approx(1.0, abs=1e-15)


def test_family_ii_against_oracle(family_ii_tr):
    assert abs(family_ii_tr.A(0.0, 1.0) - A_II_0_1) < 1e-9
    assert abs(family_ii_tr.A(0.4, -2.5) - A_II_04_M25) < 1e-9


def test_quadrature_path_matches_closed(family_ii):
    num = SpaceTransform(family_ii, force_numeric=True)
    assert abs(num.A(0.0, 1.0) - A_II_0_1) < 1e-9
    assert abs(num.A_inv(0.0, A_II_0_1) - 1.0) < 1e-9


def test_family_ii_drift(family_ii_tr):
    b0 = -0.5 / math.sqrt(2.0)
    for x in (-2.0, 0.0, 3.0):
        assert family_ii_tr.b(0.0, x) == pytest.approx(b0, abs=1e-12)
    assert family_ii_tr.b_definition(0.0, 0.8) == pytest.approx(b0, abs=1e-7)
    assert abs(family_ii_tr.B_int(0.0, 1.0) - B_INT_II_0_1) < 1e-9


def test_ou_drift(ou_model):
    tr = SpaceTransform(ou_model)
    x = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(tr.b(0.3, x), -x)
    assert not tr.b_is_time_only


@pytest.mark.parametrize("family,params", [
    ("sqrt_quadratic", {"k1": 1.0, "k2": 1.0, "k3": 1.0}),
    ("sqrt_quadratic", {"k1": 0.5, "k2": 0.3, "k3": 2.0}),
    ("erfi", {"k1": 1.0, "k2": 1.0}),
])
def test_equilibrium_reduction(family, params):
    m = make_model(HALF, 0.5, a={"family": family, **params})
    tr = SpaceTransform(m)
    co = m.coeff
    worst = 0.0
    for t in np.linspace(0.05, 0.95, 7):
        for x in np.linspace(-1.5, 1.5, 7):
            worst = max(worst, abs(tr.b_definition(t, x) + 0.5 * co.a_z(t, 0.0)))
    assert worst < 1e-7


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.0, 1.0), u=st.floats(-4.0, 4.0))
def test_round_trip_inverse_first(family_ii_tr, t, u):
    assert abs(family_ii_tr.A(t, family_ii_tr.A_inv(t, u)) - u) < 1e-9


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.0, 1.0), x=st.floats(-6.0, 6.0))
def test_round_trip_forward_first(family_ii_tr, t, x):
    assert abs(family_ii_tr.A_inv(t, family_ii_tr.A(t, x)) - x) < 1e-9


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.0, 1.0), x1=st.floats(-8, 8), dx=st.floats(1e-6, 5))
def test_monotone(family_ii_tr, t, x1, dx):
    assert family_ii_tr.A(t, x1) < family_ii_tr.A(t, x1 + dx)


def test_erfi_round_trip():
    m = make_model(HALF, 0.5, a={"family": "erfi", "k1": 1.0, "k2": 1.0})
    tr = SpaceTransform(m)
    u = np.linspace(-2, 2, 11)
    back = np.array([tr.A(0.6, tr.A_inv(0.6, v)) for v in u])
    np.testing.assert_allclose(back, u, atol=1e-9)


def test_time_derivative_integral():
    co = build_coefficient("sqrt_quadratic", k1=1.0, k2=1.0, k3=1.0)
    m = make_model(HALF, 0.5, a={"family": "sqrt_quadratic", "k1": 1.0, "k2": 1.0, "k3": 1.0})
    tr = SpaceTransform(m)
    h = 1e-5
    fd = (tr.A(0.5 + h, 0.7) - tr.A(0.5 - h, 0.7)) / (2 * h)
    assert tr.A_t(0.5, 0.7) == pytest.approx(fd, abs=1e-8)
    assert co.equilibrium_ready
