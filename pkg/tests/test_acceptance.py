"""Numbered acceptance criteria at their stated tolerances.

Each test carries a ``criterion`` marker; the conftest hook prints one
PASS/FAIL line per criterion at the end of the run.
"""

import time

import numpy as np
import pytest
from scipy.stats import kstest

from conftest import solved
from monobound.cli import EXIT_OK, main
from monobound.conjecture import (FLAT, check_lambda_limit, check_phi_shape, check_vx_sign,
                                  classify_model, run_gs_check)
from monobound.model import get_model
from monobound.sde import simulate_hat, simulate_qd, simulate_st, time_change
from monobound.solver import (CONTINUE, SolverConfig, compare_with_oracle,
                              extract_boundaries, mc_value_oracle, solve_1d_constant_rho,
                              solve_st, solve_st_timechanged)
from monobound.trap import detect_trap, hormander_scan, perturbation_check

GS_MODELS = ["mono-rho-tanh", "mono-rho-dec", "mono-rho-tanh-mirror", "mono-rho-dec-mirror"]
ALL_MODELS = ["const-rho", "mono-rho-tanh", "mono-rho-dec", "paper-trap",
              "mono-rho-tanh-mirror", "mono-rho-dec-mirror"]
DEFAULT = SolverConfig(n_phi=257, n_x=257)


def _gs_suite(mode):
    failures, report = [], {}
    for name in GS_MODELS:
        t0 = time.perf_counter()
        verdict, _, _ = run_gs_check(get_model(name), mode, DEFAULT, max_refinements=0)
        sec = time.perf_counter() - t0
        report[name] = (verdict.observed, verdict.violation, round(sec, 1))
        if not (verdict.applicable and verdict.all_pass and verdict.budget == 1.5):
            failures.append((name, "verdict", verdict.to_json()))
        if sec > 300:
            failures.append((name, "runtime", sec))
    return failures, report


@pytest.mark.criterion(1, "GS monotonicity, detection, 4 monotone-rho models at 257x257")
def test_c01_gs_detection():
    failures, report = _gs_suite("detection")
    assert not failures, (failures, report)


@pytest.mark.criterion(2, "GS monotonicity, testing, b0 and b1, same models and budget")
def test_c02_gs_testing():
    failures, report = _gs_suite("testing")
    assert not failures, (failures, report)


def _testing_invariants(name):
    f, m = solved(name, "testing"), get_model(name)
    tol = 2 * f.eps_D
    cap = np.minimum(m.cost_a * f.phi, m.cost_b)[:, None]
    out = {"lower": f.values.min() >= -tol,
           "upper": np.all(f.values <= cap + tol),
           "shape": check_phi_shape(f)["pass"]}
    b = extract_boundaries(f)
    ratio = m.cost_b / m.cost_a
    out["b0<b/a<b1"] = bool(np.all(b.b0 < ratio) and np.all(b.b1 > ratio))
    i = np.argmin(np.abs(np.log(f.phi[1:] / ratio))) + 1
    out["b/a row in C"] = bool(np.all(f.region[i] == CONTINUE))
    return out


def _detection_invariants(name):
    f, m = solved(name, "detection"), get_model(name)
    tol = 2 * f.eps_D
    out = {"lower": f.values.min() >= -1 / m.cost_c - tol,
           "upper": f.values.max() <= tol,
           "shape": check_phi_shape(f)["pass"]}
    b = extract_boundaries(f)
    out["b>=lam/c"] = bool(np.all(b.b >= m.lam / m.cost_c - tol))
    return out


@pytest.mark.criterion(3, "structural invariants on every default-grid field")
def test_c03_structural_invariants():
    bad = {}
    for name in ALL_MODELS:
        for mode, fn in (("testing", _testing_invariants), ("detection", _detection_invariants)):
            res = fn(name)
            failed = [k for k, ok in res.items() if not ok]
            if failed:
                bad[(name, mode)] = failed
    assert not bad, bad


@pytest.mark.criterion(4, "time-change equivalence of the testing solves")
def test_c04_time_change_equivalence():
    bad = {}
    for name in ("const-rho", "mono-rho-tanh"):
        m = get_model(name)
        a, b = solve_st(DEFAULT, m), solve_st_timechanged(DEFAULT, m)
        tol = 3 * (a.eps_D + a.grid.h_max ** 2)
        dv = float(np.max(np.abs(a.values - b.values)))
        ba, bb = extract_boundaries(a), extract_boundaries(b)
        cells = max(float(np.max(np.abs(np.log(ba.curves[k] / bb.curves[k])))) / ba.h_logphi
                    for k in ("b0", "b1"))
        if dv > tol or cells > 1.0:
            bad[name] = {"value_diff": dv, "tol": tol, "boundary_cells": cells}
    assert not bad, bad


@pytest.mark.criterion(5, "constant-rho reduction against the 1-D oracle, both modes")
def test_c05_oracle():
    m = get_model("const-rho")
    bad = {}
    for mode in ("testing", "detection"):
        f = solved("const-rho", mode)
        rep = compare_with_oracle(f, solve_1d_constant_rho(m, mode), extract_boundaries(f))
        if not rep["pass"]:
            bad[mode] = rep
    assert not bad, bad


# probe points sit inside the continuation region: geometric weights between
# b0 and b1 (testing) and fractions of b (detection)
PROBE_X = (-2.0, -1.0, 0.0, 1.0, 2.0)
PROBE_W_TESTING = (0.25, 0.5, 0.75, 0.4, 0.6)
PROBE_W_DETECTION = (0.1, 0.3, 0.5, 0.7, 0.2)


def _probes(field):
    b = extract_boundaries(field)
    for k, x in enumerate(PROBE_X):
        if field.mode == "testing":
            b0, b1 = np.interp(x, b.x_nodes, b.b0), np.interp(x, b.x_nodes, b.b1)
            w = PROBE_W_TESTING[k]
            yield k, b0 ** (1 - w) * b1 ** w, x
        else:
            yield k, PROBE_W_DETECTION[k] * np.interp(x, b.x_nodes, b.b), x


@pytest.mark.slow
@pytest.mark.criterion(6, "Monte Carlo cross-check, 5 probes per model and mode, 1e5 paths")
def test_c06_monte_carlo():
    bad = []
    for name in ("const-rho", "mono-rho-tanh", "mono-rho-dec", "paper-trap"):
        m = get_model(name)
        for mode in ("detection", "testing"):
            f = solved(name, mode)
            for k, phi, x in _probes(f):
                est, err = mc_value_oracle(m, mode, phi, x, n_paths=100_000, seed=100 + k)
                grid = f.interpolate(phi, x)
                if abs(est - grid) > 3 * err + f.eps_D:
                    bad.append((name, mode, phi, x, grid, est, err, f.eps_D))
    assert not bad, bad


@pytest.mark.criterion(7, "trap detection on paper-trap, none on const-rho and mono-rho-tanh")
def test_c07_trap_detection():
    t0 = time.perf_counter()
    r = detect_trap(get_model("paper-trap"))
    none = [detect_trap(get_model(n)).has_trap for n in ("const-rho", "mono-rho-tanh")]
    sec = time.perf_counter() - t0
    assert r.has_trap and abs(r.kappa - 1.0) <= 1e-8 and r.residual_sup < 1e-10
    assert none == [False, False]
    assert sec <= 10.0


@pytest.mark.criterion(8, "perturbing lambda destroys the trap with residual >= 0.9 eps")
def test_c08_perturbation():
    rep = perturbation_check(get_model("paper-trap"), (1e-3, 1e-2, 1e-1))
    assert rep["applicable"] and len(rep["rows"]) == 3
    for row in rep["rows"]:
        assert not row["has_trap"]
        assert row["min_residual_sup"] >= 0.9 * row["eps"]


@pytest.mark.criterion(9, "Hormander fail set is u = 0 on paper-trap, empty on const-rho")
def test_c09_hormander():
    h = hormander_scan(get_model("paper-trap"), (-2, 2), (-4, 4), n_max=6)
    assert h.fail.any() and h.fail_set_matches(lambda x: np.zeros_like(x), cells=1.0)
    c = hormander_scan(get_model("const-rho"), (-2, 2), (-4, 4), n_max=6)
    assert not c.fail.any()


@pytest.mark.criterion(10, "sign of V_x on detection continuation nodes")
def test_c10_vx_sign():
    m = get_model("mono-rho-tanh")
    rep = check_vx_sign(solved("mono-rho-tanh", "detection"), classify_model(m), m)
    assert rep["pass"], rep
    c = get_model("const-rho")
    flat = check_vx_sign(solved("const-rho", "detection"), classify_model(c))
    assert flat["direction"] == FLAT
    assert flat["pass"], flat


@pytest.mark.criterion(11, "lambda-limit ordering and gap shrinkage at the default grid")
def test_c11_lambda_limit():
    bad = {}
    for name in ("paper-trap", "mono-rho-tanh"):
        rep = check_lambda_limit(get_model(name), DEFAULT, (0.1, 0.05, 0.025))
        if not rep["pass"]:
            bad[name] = rep
    assert not bad, bad


def _stderr(a):
    return a.std(ddof=1) / np.sqrt(a.size)


@pytest.mark.criterion(12, "path-level suite within two minutes")
def test_c12_path_suite():
    t0 = time.perf_counter()
    tanh, dec = get_model("mono-rho-tanh"), get_model("mono-rho-dec")

    # martingale property of Phi under the null measure, both clocks
    P = simulate_st(tanh, 1.0, 0.0, 1.0, 0.01, 7, n_paths=100_000, extras=False).phi[-1]
    assert abs(P.mean() - 1.0) <= 3 * _stderr(P)
    P = simulate_hat(dec, 2.0, 0.0, 1.0, 0.01, 6, n_paths=100_000).phi[-1]
    assert abs(P.mean() - 2.0) <= 3 * _stderr(P)

    # time-changed Phi is geometric Brownian motion: log Phi_hat(1) ~ N(-1/2, 1)
    b = simulate_st(tanh, 1.0, 0.0, 6.0, 0.005, 11, n_paths=10_000)
    tc = time_change(b, tanh, horizon=1.0)
    assert not tc.meta["truncated"]
    assert kstest(np.log(tc.phi[-1]) + 0.5, "norm").pvalue > 0.01

    # pathwise comparison under shared seeds
    lo = simulate_hat(tanh, 1.0, 0.0, 1.0, 0.01, 5, n_paths=10_000)
    hi = simulate_hat(tanh, 1.0, 0.5, 1.0, 0.01, 5, n_paths=10_000)
    assert np.all(lo.x <= hi.x)

    # lambda-path dominance, exact
    a = simulate_qd(tanh, 0.2, 0.0, 1.0, 0.01, 3, lambda_dyn=1.0, n_paths=10_000)
    c = simulate_qd(tanh, 0.2, 0.0, 1.0, 0.01, 3, lambda_dyn=1.1, n_paths=10_000)
    assert np.all(c.phi >= a.phi)

    # clock inversion within two steps
    s = simulate_st(dec, 1.0, 0.0, 2.0, 0.01, 5, n_paths=10_000)
    A = s.extras["A"]
    tcd = time_change(s, dec)
    for i in range(s.n_paths):
        T = np.interp(tcd.times, A[:, i], s.times)
        back = np.interp(T, s.times, A[:, i])
        assert np.max(np.abs(back - tcd.times)) <= 2 * s.dt

    assert time.perf_counter() - t0 <= 120.0


@pytest.mark.criterion(13, "fixed seeds give byte-identical CSV/JSON artifacts")
def test_c13_reproducibility(tmp_path):
    runs = [("solve-qd", "--model", "mono-rho-tanh", "--grid", "65,65"),
            ("solve-st", "--model", "paper-trap", "--grid", "65,65"),
            ("simulate", "--model", "mono-rho-dec", "--scheme", "qd", "--n-paths", "4",
             "--seed", "3"),
            ("trap-scan", "--model", "paper-trap"),
            ("verify-gs", "--model", "mono-rho-tanh", "--mode", "testing", "--grid", "65,65")]
    for k, args in enumerate(runs):
        for tag in ("a", "b"):
            assert main([*args, "--out", str(tmp_path), "--name", f"{k}{tag}"]) == EXIT_OK
        da, db = tmp_path / f"{k}a", tmp_path / f"{k}b"
        files = sorted(p.relative_to(da) for p in da.rglob("*")
                       if p.is_file() and p.suffix in (".csv", ".json") and p.name != "manifest.json")
        assert files
        for rel in files:
            assert (da / rel).read_bytes() == (db / rel).read_bytes(), rel
