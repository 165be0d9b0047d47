import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from piezoflow.constitutive import (CARREAU, KINDS, NEWTONIAN, POWER_LAW, SCHAEFFER, ModelSpec, NotCertifiable,
                                    SampleSpec, certify_assumptions, growth_bounds_check, power_law_for_gamma0,
                                    random_unit_symmetric, stress, stress_jacobian_d, stress_jacobian_d_fd,
                                    stress_jacobian_p)

MODELS = [
    ModelSpec.newtonian(0.5),
    ModelSpec.schaeffer(),
    ModelSpec.carreau(),
    ModelSpec.power_law(1.9, 0.0),
    ModelSpec.power_law(1.85, 3.0),
]
IDS = ["newtonian", "schaeffer", "carreau", "power0", "power3"]

finite = st.floats(-5.0, 5.0, allow_nan=False)


def sym(entries):
    A = np.array(entries, dtype=float).reshape(3, 3)
    return 0.5 * (A + A.T)


matrices = st.lists(finite, min_size=9, max_size=9).map(sym)


def test_kinds_and_defaults():
    assert KINDS == (NEWTONIAN, SCHAEFFER, CARREAU, POWER_LAW)
    assert ModelSpec.newtonian().r == 2.0
    assert ModelSpec.schaeffer().r == 1.5


@pytest.mark.parametrize("kind,params", [
    ("Bogus", {}),
    (NEWTONIAN, {"nu_star": -1.0}),
    (NEWTONIAN, {"nu_star": math.nan}),
    (POWER_LAW, {"r": 2.0}),
    (POWER_LAW, {"r": 0.9}),
    (POWER_LAW, {"gamma_amp": -1.0}),
    (CARREAU, {"eta_0": 0.0}),
    (SCHAEFFER, {"epsilon": 0.0}),
    (NEWTONIAN, {"alpha": 1.0}),
])
def test_invalid_specs_rejected(kind, params):
    with pytest.raises(ValueError):
        ModelSpec(kind, params)


def test_specs_hash_by_value():
    a = ModelSpec.power_law(1.9, 0.2)
    b = ModelSpec(POWER_LAW, {"gamma_amp": 0.2, "r": 1.9})
    assert a == b and hash(a) == hash(b)
    assert len({a, b}) == 1


def test_newtonian_stress_is_linear():
    D = sym(np.arange(9.0))
    np.testing.assert_allclose(stress(ModelSpec.newtonian(0.7), 3.0, D), 1.4 * D)


def test_stress_rejects_non_finite():
    with pytest.raises(ValueError):
        stress(ModelSpec.newtonian(), 0.0, np.full((3, 3), np.nan))


@pytest.mark.parametrize("model", MODELS, ids=IDS)
@given(p=finite, D=matrices, seed=st.integers(0, 2**31))
def test_frame_indifference(model, p, D, seed):
    Q = special_ortho_group.rvs(3, random_state=seed)
    lhs = stress(model, p, Q @ D @ Q.T)
    rhs = Q @ stress(model, p, D) @ Q.T
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.abs(rhs).max()))


@pytest.mark.parametrize("model", [m for m in MODELS if m.kind != SCHAEFFER],
                         ids=[i for i, m in zip(IDS, MODELS) if m.kind != SCHAEFFER])
@given(p=finite, D1=matrices, D2=matrices)
def test_monotone_in_d(model, p, D1, D2):
    dS = stress(model, p, D1) - stress(model, p, D2)
    assert np.sum(dS * (D1 - D2)) >= -1e-10 * (1 + np.sum((D1 - D2) ** 2))


@pytest.mark.parametrize("model", MODELS, ids=IDS)
def test_jacobian_matches_finite_differences(model, rng):
    D = random_unit_symmetric(rng, 50) * rng.uniform(0.05, 4.0, (50, 1, 1))
    B = random_unit_symmetric(rng, 50)
    p = rng.uniform(0.2, 3.0, 50)
    exact = stress_jacobian_d(model, p, D, B)
    fd = stress_jacobian_d_fd(model, p, D, B, h=1e-6)
    np.testing.assert_allclose(fd, exact, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("model", MODELS, ids=IDS)
def test_pressure_derivative_matches_finite_differences(model, rng):
    D = random_unit_symmetric(rng, 30) * rng.uniform(0.1, 3.0, (30, 1, 1))
    p = rng.uniform(-2.0, 2.0, 30)
    if model.kind == CARREAU:
        p = np.minimum(p, model.params["p_cap"] - 0.1)
    h = 1e-6
    fd = (stress(model, p + h, D) - stress(model, p - h, D)) / (2 * h)
    np.testing.assert_allclose(stress_jacobian_p(model, p, D), fd, rtol=1e-6, atol=1e-9)


def test_sampler_grids():
    s = SampleSpec()
    p = s.pressures()
    assert p.min() == -100 and p.max() == 100 and 0.0 in p
    assert np.all(np.diff(p) > 0)
    m = s.magnitudes()
    assert m[0] == 0.0 and m[-1] == pytest.approx(1e3)
    c = s.direction_cosines()
    assert c.size == 66 and c[0] == 1.0 and c[1] == 0.0
    assert np.all(np.abs(c) <= 1.0)


def test_certify_newtonian():
    cert = certify_assumptions(ModelSpec.newtonian(0.5))
    assert cert.C1_est == cert.C2_est == 1.0
    assert cert.gamma0_est == 0.0 and cert.admissible
    assert cert.theorem_bound == 0.5


def test_certify_power_law_bounds():
    cert = certify_assumptions(ModelSpec.power_law(1.9, 0.0))
    # the exact infimum of 1 + (r-2) c^2 s^2/(1+s^2) is r - 1
    assert cert.C1_est == pytest.approx(0.9, abs=1e-6)
    assert cert.C1_est >= 0.9
    assert cert.C2_est == pytest.approx(1.0)
    assert cert.gamma0_est == 0.0 and cert.admissible


def test_gamma0_scales_with_amplitude():
    g1 = certify_assumptions(ModelSpec.power_law(1.9, 1.0)).gamma0_est
    g2 = certify_assumptions(ModelSpec.power_law(1.9, 2.0)).gamma0_est
    assert 0 < g1 < g2


def test_power_law_for_gamma0_round_trip():
    model = power_law_for_gamma0(0.2, 1.9)
    cert = certify_assumptions(model)
    assert cert.gamma0_est == pytest.approx(0.2, rel=1e-8)
    assert cert.admissible


def test_schaeffer_not_certifiable(tmp_path):
    with pytest.raises(NotCertifiable) as info:
        certify_assumptions(ModelSpec.schaeffer(), SampleSpec(p_min=0.0, p_max=1e6))
    cert = info.value.certificate
    assert cert.violations and not cert.admissible
    cert.write_violations_csv(tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "p,D_norm,cosine,ellipticity_ratio" and len(lines) == len(cert.violations) + 1


def test_certificate_report(tmp_path):
    cert = certify_assumptions(ModelSpec.newtonian())
    cert.write_report(tmp_path / "c.txt")
    kv = dict(line.split(" = ") for line in (tmp_path / "c.txt").read_text().splitlines())
    assert kv["gamma0_est"] == "0.0" and kv["admissible"] == "True"


@pytest.mark.parametrize("model", [MODELS[0], MODELS[3], MODELS[4]], ids=["newtonian", "power0", "power3"])
def test_growth_bounds_hold(model, rng):
    D = random_unit_symmetric(rng, 200) * np.logspace(-3, 3, 200)[:, None, None]
    p = rng.uniform(-50, 50, 200)
    lower, upper = growth_bounds_check(model, p, D)
    assert lower.all() and upper.all()


def test_certification_is_cached():
    m = ModelSpec.power_law(1.9, 0.3)
    assert certify_assumptions(m) is certify_assumptions(m)
