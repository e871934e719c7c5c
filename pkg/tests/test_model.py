import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynbridge import load_scenario, make_model, model_from_dict, validate
from dynbridge.errors import AssumptionViolation, ScenarioError
from dynbridge.model import build_coefficient, build_profile, dump_scenario, pde_residual

from conftest import FAMILY_II, HALF, scenario

SHIPPED = {
    "constant": {"a0": 1.7},
    "sqrt_quadratic": {"k1": 1.0, "k2": 1.0, "k3": 1.0},
    "erfi": {"k1": 1.0, "k2": 1.0},
    "self_similar": {},
    "gen_self_similar": {},
}


def test_static_profile():
    p = build_profile({"kind": "zero"}, 1.0)
    t = np.linspace(0, 0.999, 50)
    assert np.all(p.V(t) == 1.0)
    assert np.all(p.gap(t) > 0)


def test_linear_profile_hits_one():
    p = build_profile(HALF, 0.5)
    assert p.V(1.0) == 1.0
    assert p.V(0.3) == pytest.approx(0.65, abs=1e-14)


def test_constant_sigma_closed_forms():
    p = build_profile(HALF, 0.5)
    t = np.array([0.0, 0.2, 0.5, 0.9, 0.99])
    np.testing.assert_allclose(p.lam(t), (1 - t) ** 2, rtol=1e-10)
    np.testing.assert_allclose(p.Lam(t), 0.5 * ((1 - t) ** -3 - 1), rtol=1e-9, atol=1e-12)


def test_tail_proxy_decreases_to_zero():
    _, seq = build_profile(HALF, 0.5).tail_sequence()
    tail = seq[9:]
    assert np.all(np.diff(tail) < 0)
    assert tail[-1] < 1e-3


def test_profile_refinement_idempotent():
    s = {"kind": "sine", "amp": 0.5, "freq": 2}
    p1, p2 = build_profile(s, 0.3, panels=1024), build_profile(s, 0.3, panels=2048)
    t = np.linspace(0, 1, 33)
    assert np.max(np.abs(p1.V(t) - p2.V(t))) < 1e-10


def test_violating_clock_rejected():
    with pytest.raises(AssumptionViolation):
        make_model({"kind": "constant", "value": 1.0}, 0.0)


@pytest.mark.parametrize("family", sorted(SHIPPED))
def test_shipped_families_solve_pde(family):
    co = build_coefficient(family, **SHIPPED[family])
    t0, t1, z0, z1 = co.domain
    T, Z = np.meshgrid(np.linspace(t0, t1, 50), np.linspace(z0, z1, 50), indexing="ij")
    assert np.max(np.abs(pde_residual(co, T, Z))) < 1e-8


@pytest.mark.parametrize("family", ["sqrt_quadratic", "erfi"])
def test_fd_derivatives_solve_pde(family):
    co = build_coefficient(family, **SHIPPED[family]).with_fd_derivatives()
    T, Z = np.meshgrid(np.linspace(0.05, 0.95, 50), np.linspace(-3, 3, 50), indexing="ij")
    assert np.max(np.abs(pde_residual(co, T, Z))) < 1e-4


def test_constant_residual_exactly_zero():
    assert pde_residual(build_coefficient("constant", a0=2.5), 0.4, -1.2) == 0.0


def test_family_ii_residual_at_sample_point():
    assert abs(pde_residual(build_coefficient(**FAMILY_II), 0.3, 0.7)) < 1e-10


def test_quadratic_fails_family_check():
    z = 0.7
    r = pde_residual(build_coefficient("quadratic"), 0.3, z)
    assert r == pytest.approx((1 + z * z) ** 2, rel=1e-12)


def test_validate_reference_setup(gaussian):
    rep = validate(gaussian)
    assert rep.passed, rep.lines()


def test_validate_flags_unit_clock():
    m = make_model({"kind": "constant", "value": 1.0}, 0.0, strict=False)
    rep = validate(m)
    assert not rep["V(t)>t"].passed
    assert not rep.passed


def test_family_ii_epsilon(family_ii):
    assert family_ii.coeff.epsilon == pytest.approx(0.6065306597126334, abs=1e-15)
    chk = validate(family_ii)["a >= epsilon"]
    assert chk.passed
    assert chk.witness == (1.0, -1.0)


@pytest.mark.parametrize("name", ["back_pedersen", "family_ii", "ou", "static", "seasonal"])
def test_shipped_scenarios_validate(name):
    assert validate(load_scenario(scenario(name))).passed


def test_scenario_round_trip(tmp_path, family_ii):
    path = tmp_path / "s.yaml"
    dump_scenario(family_ii, str(path))
    back = load_scenario(str(path))
    t = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(back.V(t), family_ii.V(t))
    assert back.coeff.a(0.3, 0.7) == family_ii.coeff.a(0.3, 0.7)


def _write(tmp_path, text):
    p = tmp_path / "bad.yaml"
    p.write_text(text)
    return str(p)


def test_malformed_yaml_reports_line(tmp_path):
    with pytest.raises(ScenarioError, match=r"bad.yaml:[34]: YAML syntax"):
        load_scenario(_write(tmp_path, "c: 0.5\nsigma:\n  kind: [zero\n"))


def test_unknown_field_reports_line(tmp_path):
    text = "c: 0.5\nsigma:\n  kind: zero\ncolour: red\n"
    with pytest.raises(ScenarioError, match=r"colour.*line 4"):
        load_scenario(_write(tmp_path, text))


def test_unknown_family_reports_field(tmp_path):
    text = "c: 0.5\nsigma:\n  kind: constant\n  value: 0.7071067811865476\na:\n  family: cubic\n"
    with pytest.raises(ScenarioError, match=r"a \(line 5\)"):
        load_scenario(_write(tmp_path, text))


def test_missing_sigma():
    with pytest.raises(ScenarioError, match="sigma"):
        model_from_dict({"c": 0.5})


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.05, 1.0), t=st.floats(0.0, 0.999))
def test_constant_profile_gap_positive(c, t):
    p = build_profile({"kind": "constant", "value": math.sqrt(1 - c)}, c)
    assert p.V(t) > t
    assert abs(p.V(1.0) - 1.0) <= 1e-9
