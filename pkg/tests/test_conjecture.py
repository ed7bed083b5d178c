import json

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from conftest import solved
from monobound.coefficients import X
from monobound.conjecture import (DEC, FLAT, GT, INC, LT, NONMONO, Classification,
                                  adverse_move, check_lambda_limit, check_phi_shape,
                                  check_value_monotone_x, check_vx_sign, classify_model,
                                  expected_directions, run_gs_check, value_direction, verify_gs)
from monobound.model import DiffusionModel, get_model
from monobound.solver import BoundarySet, SolverConfig, extract_boundaries

SMALL = SolverConfig(n_phi=65, n_x=65)


# classification ------------------------------------------------------------------------

def test_classify_tanh():
    c = classify_model(get_model("mono-rho-tanh"))
    assert (c.rho_direction, c.mu_order, c.constant) == (INC, GT, False)


def test_classify_constant():
    c = classify_model(get_model("const-rho"))
    assert c.rho_direction == INC and c.constant


def test_classify_drift_swapped():
    m = DiffusionModel(mu0=1 + sp.tanh(X) / 2, mu1=0, sigma=1)
    assert tuple(classify_model(m)) == (DEC, LT)


def test_classify_non_monotone():
    m = DiffusionModel(mu0=0, mu1=2 + sp.sin(X), sigma=1)
    c = classify_model(m)
    assert c.rho_direction == NONMONO and not c.applicable


# expected direction table ---------------------------------------------------------------

@pytest.mark.parametrize("rho_dir,order,testing,detection", [
    (INC, GT, {"b0": DEC, "b1": INC}, {"b": INC}),
    (DEC, GT, {"b0": INC, "b1": DEC}, {"b": DEC}),
    (INC, LT, {"b0": INC, "b1": DEC}, {"b": DEC}),
    (DEC, LT, {"b0": DEC, "b1": INC}, {"b": INC}),
])
def test_direction_table(rho_dir, order, testing, detection):
    c = Classification(rho_dir, order)
    assert expected_directions(c, "testing") == testing
    assert expected_directions(c, "detection") == detection


def test_value_direction_flips_with_either_factor():
    assert value_direction(Classification(INC, GT)) == DEC
    assert value_direction(Classification(DEC, GT)) == INC
    assert value_direction(Classification(INC, LT)) == INC
    assert value_direction(Classification(DEC, LT)) == DEC
    assert value_direction(Classification(INC, GT, constant=True)) == FLAT


def test_non_monotone_has_no_expectation():
    assert expected_directions(Classification(NONMONO, GT), "detection") == {}


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=40))
def test_adverse_move_zero_for_sorted(values):
    v = np.sort(values)
    assert adverse_move(v, INC) == 0.0
    assert adverse_move(v[::-1], DEC) == 0.0
    assert adverse_move(v, DEC) == pytest.approx(v[-1] - v[0])


# verify_gs ----------------------------------------------------------------------------------

def _bset(b, h=0.05):
    return BoundarySet("detection", np.linspace(-1, 1, len(b)), b=np.asarray(b, float), h_logphi=h)


def test_verify_gs_budget():
    c = Classification(INC, GT, model="m")
    cells = np.array([0, 1, 2, 0.6, 3, 4])  # one adverse move of 1.4 cells
    v = verify_gs(_bset(np.exp(0.05 * cells)), c)
    assert v.violation["b"] == pytest.approx(1.4) and v.all_pass
    cells[3] = 0.0  # now 2 cells
    assert not verify_gs(_bset(np.exp(0.05 * cells)), c).all_pass


def test_verify_gs_not_applicable():
    v = verify_gs(_bset([1, 2, 1]), Classification(NONMONO, GT))
    assert v.all_pass is None and v.passed == {}
    assert v.to_json()["applicable"] is False


def test_verify_gs_flat_boundary_passes_constant():
    c = Classification(INC, GT, constant=True)
    v = verify_gs(_bset(np.full(9, 1.25)), c)
    assert v.all_pass and v.observed["b"] == FLAT


@pytest.mark.parametrize("mode,expected", [("detection", {"b": INC}),
                                           ("testing", {"b0": DEC, "b1": INC})])
def test_gs_tanh(mode, expected):
    f = solved("mono-rho-tanh", mode)
    v = verify_gs(extract_boundaries(f), classify_model(get_model("mono-rho-tanh")))
    assert v.expected == expected and v.observed == expected and v.all_pass


@pytest.mark.parametrize("mode", ["detection", "testing"])
def test_gs_const_rho_flat(mode):
    f = solved("const-rho", mode)
    v = verify_gs(extract_boundaries(f), classify_model(get_model("const-rho")))
    assert v.all_pass and set(v.observed.values()) == {FLAT}


def test_mirror_verdicts_consistent():
    for mode in ("detection", "testing"):
        a = verify_gs(extract_boundaries(solved("mono-rho-dec", mode)),
                      classify_model(get_model("mono-rho-dec")))
        b = verify_gs(extract_boundaries(solved("mono-rho-dec-mirror", mode)),
                      classify_model(get_model("mono-rho-dec-mirror")))
        flip = {INC: DEC, DEC: INC}
        assert {k: flip[v] for k, v in a.expected.items()} == b.expected
        assert a.all_pass == b.all_pass is True


def test_run_gs_check_records_history(tmp_path):
    v, field, bset = run_gs_check(get_model("mono-rho-tanh"), "detection", SMALL)
    assert v.history[0]["n_phi"] == 65 and v.all_pass
    v.write(tmp_path / "v.json")
    data = json.loads((tmp_path / "v.json").read_text())
    assert data["pass"] is True and data["expected"] == {"b": INC}


def test_run_gs_check_refines_on_failure():
    v, _, _ = run_gs_check(get_model("mono-rho-tanh"), "detection", SMALL, budget=1e-9)
    assert len(v.history) == 2 and v.history[1]["n_phi"] == 129


def test_checks_are_pure():
    f = solved("mono-rho-tanh", "detection")
    c = classify_model(get_model("mono-rho-tanh"))
    assert check_value_monotone_x(f, c) == check_value_monotone_x(f, c)


# value-level reductions ------------------------------------------------------------------

def test_value_monotone_tanh_detection():
    f = solved("mono-rho-tanh", "detection")
    rep = check_value_monotone_x(f, classify_model(get_model("mono-rho-tanh")))
    assert rep["direction"] == DEC and rep["pass"]


def test_value_monotone_const_rho_flat():
    f = solved("const-rho", "detection")
    rep = check_value_monotone_x(f, classify_model(get_model("const-rho")))
    assert rep["direction"] == FLAT and rep["pass"]


def test_value_monotone_mirror_increasing():
    f = solved("mono-rho-tanh-mirror", "detection")
    rep = check_value_monotone_x(f, classify_model(get_model("mono-rho-tanh-mirror")))
    assert rep["direction"] == INC and rep["pass"]


def test_value_monotone_detects_violation():
    f = solved("mono-rho-tanh", "detection")
    rep = check_value_monotone_x(f, Classification(INC, LT))  # predicts the wrong way
    assert not rep["pass"]


@pytest.mark.parametrize("name,mode", [("mono-rho-tanh", "testing"), ("paper-trap", "detection"),
                                       ("mono-rho-dec", "detection")])
def test_phi_shape(name, mode):
    assert check_phi_shape(solved(name, mode))["pass"]


def test_vx_sign_tanh():
    m = get_model("mono-rho-tanh")
    rep = check_vx_sign(solved("mono-rho-tanh", "detection"), classify_model(m), m)
    assert rep["pass"] and rep["concave"] and rep["h_sign_ok"]


def test_vx_sign_const_rho():
    rep = check_vx_sign(solved("const-rho", "detection"), classify_model(get_model("const-rho")))
    assert rep["direction"] == FLAT and rep["pass"]


def test_vx_sign_requires_detection():
    with pytest.raises(ValueError):
        check_vx_sign(solved("const-rho", "testing"), classify_model(get_model("const-rho")))


# lambda limit ---------------------------------------------------------------------------------

def test_lambda_limit_paper_trap():
    rep = check_lambda_limit(get_model("paper-trap"), SMALL)
    gaps = [r["gap"] for r in rep["rows"]]
    assert all(g > 0 for g in gaps) and rep["shrinking"] and rep["pass"]


def test_lambda_limit_zero_eps_identical():
    rep = check_lambda_limit(get_model("mono-rho-tanh"), SMALL, eps_list=(0.0,))
    assert rep["rows"][0]["gap"] == 0.0 and rep["pass"]
