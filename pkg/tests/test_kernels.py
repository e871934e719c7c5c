import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dynbridge import TransitionKernel, build_pricing, make_model
from dynbridge.errors import BackendMismatch, DomainError
from dynbridge.kernels import aronson_check, gamma_closed, gaussian_q, h_ratio_diagnostic

from conftest import HALF


def shift_transform(beta):
    """Stand-in transform with constant drift b = beta."""
    return SimpleNamespace(b_is_time_only=True, B_int=lambda t, u: beta * (np.asarray(u) - np.asarray(t)),
                           b=lambda t, x: beta + 0.0 * np.asarray(x), b_time=lambda t: beta + 0.0 * np.asarray(t))


def kernel_with(model, tr):
    return TransitionKernel(model, transform=tr, backend="closed_time_only")


def grid_points(ts=(0.0, 0.3, 0.6), gaps=(0.1, 0.3), xs=(-1.0, 0.0, 1.0), ks=(-2, -1, 0, 1, 2)):
    return [(t, x, t + g, x + k * math.sqrt(g)) for t in ts for g in gaps for x in xs
            for k in ks]


def test_q_value():
    assert gaussian_q(1.0, 0.0, 0.0) == pytest.approx(0.3989422804014327, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(1e-3, 5), x=st.floats(-5, 5), y=st.floats(-5, 5))
def test_q_symmetric(t, x, y):
    assert gaussian_q(t, x, y) == gaussian_q(t, y, x)


def test_q_normalized():
    assert quad(lambda y: gaussian_q(0.25, 0.0, y), -np.inf, np.inf)[0] == pytest.approx(1, abs=1e-10)


def test_q_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        gaussian_q(0.0, 0.0, 0.0)


def test_zero_drift_gamma_is_q(gaussian_kernel):
    assert gaussian_kernel.gamma(0.1, 0.3, 0.9, -0.2) == gaussian_q(0.8, 0.3, -0.2)


def test_constant_drift_shift():
    assert gamma_closed(shift_transform(0.2), 0.0, 0.0, 1.0, 0.2) == pytest.approx(
        0.3989422804014327, abs=1e-12)


def test_ou_kernel(ou_model):
    k = TransitionKernel(ou_model)
    assert k.backend == "closed_ou"
    s, t, x, z = 0.1, 0.7, 0.8, -0.3
    var = (1 - math.exp(-2 * (t - s))) / 2
    assert k.gamma(s, x, t, z) == pytest.approx(gaussian_q(var, x * math.exp(-(t - s)), z),
                                                rel=1e-14)


def test_closed_kernel_needs_time_only(ou_model):
    with pytest.raises(BackendMismatch):
        TransitionKernel(ou_model, backend="closed_time_only")


def test_unit_coefficient_original_coordinates(gaussian, gaussian_kernel):
    assert gaussian_kernel.G(0.2, 0.4, 0.7, 1.0) == pytest.approx(gaussian_q(0.5, 0.4, 1.0), rel=1e-14)
    t, x, z = 0.3, 0.2, -0.5
    assert gaussian_kernel.log_dx_rho(t, x, z) == pytest.approx((z - x) / (gaussian.V(t) - t),
                                                                rel=1e-12)


def test_log_dx_rho_closed_form(family_ii, family_ii_kernel):
    tr, co = family_ii_kernel.tr, family_ii.coeff
    for t, x, z in [(0.2, 0.3, -0.4), (0.6, -1.0, 0.5), (0.85, 0.7, 1.2)]:
        V = family_ii.V(t)
        want = (tr.A(V, z) - tr.A(t, x) - tr.B_int(t, V)) / (co.a(t, x) * (V - t))
        h = 1e-5
        fd = (math.log(family_ii_kernel.rho(t, x + h, z))
              - math.log(family_ii_kernel.rho(t, x - h, z))) / (2 * h)
        got = family_ii_kernel.log_dx_rho(t, x, z)
        assert got == pytest.approx(want, abs=1e-12)
        assert abs(got - fd) < 1e-6


def test_kernel_rejects_tiny_gap(gaussian_kernel):
    with pytest.raises(DomainError):
        gaussian_kernel.gamma(0.5, 0.0, 0.5 + 1e-8, 0.0)


@pytest.mark.parametrize("t,u", [(0.0, 0.01), (0.2, 0.6), (0.5, 1.0)])
@pytest.mark.parametrize("x", [-1.0, 0.0, 1.5])
def test_normalization_and_zero_drift(family_ii_kernel, t, u, x):
    k = family_ii_kernel
    assert k.integrate_z(lambda z: k.G(t, x, u, z), t, x, u) == pytest.approx(1.0, abs=1e-6)
    assert abs(k.integrate_z(lambda z: k.G_x(t, x, u, z), t, x, u)) < 1e-6


def test_h_ratio_zero_drift(gaussian_kernel):
    rep = h_ratio_diagnostic(gaussian_kernel, grid_points())
    assert rep.sup == 0.0 and rep.passed


def test_h_ratio_time_only(family_ii_kernel):
    rep = h_ratio_diagnostic(family_ii_kernel, grid_points())
    assert rep.closed_max_error < 1e-12
    assert rep.finite and rep.sup <= rep.bound


def test_h_ratio_numeric_bounded_drift():
    m = make_model(HALF, 0.5, a={"family": "tanh", "a0": 1.0, "amp": 0.5})
    k = TransitionKernel(m)
    assert k.backend == "numeric"
    pts = [(t, x, t + g, x + s * math.sqrt(g)) for t in (0.0, 0.4) for g in (0.2, 0.4)
           for x in (-0.5, 0.5) for s in (-1.0, 0.0, 1.0)]
    tr = k.tr
    sup_b = max(abs(tr.b(t, z)) for t in (0.0, 0.4, 0.8) for z in np.linspace(-4, 4, 81))
    rep = h_ratio_diagnostic(k, pts)
    assert rep.finite
    assert rep.sup <= sup_b + 0.1


def test_aronson_zero_drift(gaussian_kernel):
    rep = aronson_check(gaussian_kernel, grid_points())
    assert rep.found
    assert (rep.M1, rep.alpha1, rep.M2, rep.alpha2) == pytest.approx((1, 1, 1, 1), abs=1e-12)


def test_aronson_shifted(gaussian):
    # out to 8 sd the shift e^{0.2 (z - x)} no longer fits a factor-2 band at alpha = 1
    pts = grid_points(gaps=(0.3, 0.6), ks=(-8, -4, 0, 4, 8))
    rep = aronson_check(kernel_with(gaussian, shift_transform(0.2)), pts)
    assert rep.found
    assert rep.alpha1 < 1 < rep.alpha2


def test_aronson_numeric_ou(ou_model):
    k = TransitionKernel(ou_model, backend="numeric")
    pts = [(0.0, x, u, x + s * math.sqrt(u)) for u in (0.2, 0.5) for x in (-0.5, 0.5)
           for s in (-2.0, 0.0, 2.0)]
    rep = aronson_check(k, pts)
    assert rep.found


def test_pricing_gaussian(gaussian, gaussian_kernel):
    p = build_pricing(gaussian, gaussian_kernel)
    for t in (0.0, 0.3, 0.9):
        for x in (-1.0, 0.4):
            assert p.H(t, x) == pytest.approx(x, abs=1e-14)
            assert p.F(t, x) == pytest.approx(x, abs=1e-14)


def test_pricing_constant_payoff(gaussian_kernel):
    m = make_model(HALF, 0.5, payoff={"kind": "constant", "value": 2.5})
    p = build_pricing(m, TransitionKernel(m))
    assert p.H(0.3, -0.7) == 2.5 and p.F(0.3, 0.9) == 2.5


def test_window_pricing_identity_non_affine(family_ii, family_ii_kernel):
    p = build_pricing(family_ii, family_ii_kernel)
    xs = np.linspace(-2, 2, 9)
    for t in (0.0, 0.5, 0.9):
        h = [p.H(t, x) for x in xs]
        assert np.all(np.diff(h) > 0)
        f = [p.F(t, z) for z in xs]
        assert np.all(np.diff(f) > 0)


def test_hermite_agrees_with_window():
    m = make_model(HALF, 0.5, a={"family": "sqrt_quadratic", "k1": 1.0, "k2": 1.0, "k3": 1.0},
                   payoff={"kind": "tanh"})
    k = TransitionKernel(m)
    pw, ph = build_pricing(m, k), build_pricing(m, k, method="hermite")
    for t, x in [(0.0, 0.0), (0.4, -0.8), (0.8, 1.1)]:
        assert abs(pw.H(t, x) - ph.H(t, x)) < 1e-6
