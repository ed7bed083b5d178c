import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from monobound.model import DiffusionModel, get_model
from monobound.sde import (BLOCK, PathBundle, normals, simulate_canonical, simulate_hat,
                           simulate_qd, simulate_st, time_change)
from monobound.io import read_csv

FLAT = DiffusionModel(mu0=1, mu1=1, sigma=1, name="flat")  # rho = 0, never validated


def _stderr(a):
    return a.std(ddof=1) / np.sqrt(a.size)


# normals -----------------------------------------------------------------------

def test_normals_per_path_independent_of_bundle_size():
    a = normals(5, 3 * BLOCK + 7, 20)
    b = normals(5, BLOCK + 1, 20)
    np.testing.assert_array_equal(a[:, :BLOCK + 1], b)


def test_normals_antithetic_pairs():
    z = normals(2, 10, 4, antithetic=True)
    np.testing.assert_array_equal(z[:, 5:], -z[:, :5])


# simulate_st ---------------------------------------------------------------------

def test_st_zero_start_stays_zero(unit_model):
    b = simulate_st(unit_model, 0.0, 0.0, 1.0, 0.01, 1, n_paths=20)
    assert np.all(b.phi == 0.0)


def test_st_flat_model_keeps_phi():
    b = simulate_st(FLAT, 2.0, 0.0, 1.0, 0.01, 1, n_paths=5)
    assert np.all(b.phi == 2.0)


def test_st_martingale():
    b = simulate_st(get_model("const-rho"), 1.0, 0.0, 1.0, 0.01, 7, n_paths=100_000, extras=False)
    P = b.phi[-1]
    assert abs(P.mean() - 1.0) <= 3 * _stderr(P)


def test_st_times_and_positivity():
    b = simulate_st(get_model("mono-rho-dec"), 0.5, 1.0, 2.0, 0.01, 3, n_paths=50)
    assert b.times[0] == 0.0
    np.testing.assert_allclose(np.diff(b.times), 0.01, atol=1e-12)
    assert np.all(b.phi > 0)
    assert np.all(np.diff(b.extras["A"], axis=0) > 0) and np.all(b.extras["A"][0] == 0)


def test_st_stays_in_domain(trap_model):
    b = simulate_st(trap_model, 1.0, -3.9, 2.0, 0.01, 4, n_paths=200)
    assert b.x.min() >= trap_model.x_domain[0] and b.x.max() <= trap_model.x_domain[1]


def test_st_determinism():
    m = get_model("mono-rho-tanh")
    a = simulate_st(m, 1.0, 0.0, 1.0, 0.01, 42, n_paths=300)
    b = simulate_st(m, 1.0, 0.0, 1.0, 0.01, 42, n_paths=300)
    np.testing.assert_array_equal(a.phi, b.phi)
    np.testing.assert_array_equal(a.x, b.x)


def test_st_weak_convergence_in_dt():
    m = get_model("mono-rho-tanh")
    a = simulate_st(m, 1.0, 0.0, 1.0, 0.02, 8, n_paths=40_000, extras=False).phi[-1]
    b = simulate_st(m, 1.0, 0.0, 1.0, 0.01, 9, n_paths=40_000, extras=False).phi[-1]
    assert abs(a.mean() - b.mean()) <= 3 * np.hypot(_stderr(a), _stderr(b))


def test_bad_step_rejected(unit_model):
    with pytest.raises(ValueError):
        simulate_st(unit_model, 1.0, 0.0, 1.0, 0.0, 1)
    with pytest.raises(ValueError):
        simulate_st(unit_model, 1.0, 0.0, 0.001, 0.01, 1)


# simulate_qd ---------------------------------------------------------------------

def test_qd_flat_model_closed_form():
    b = simulate_qd(FLAT, 0.0, 0.0, 1.0, 0.01, 1, n_paths=3)
    np.testing.assert_allclose(b.phi[-1], np.e - 1, rtol=1e-12)


def test_qd_initial_value(unit_model):
    b = simulate_qd(unit_model, 5.0, 0.0, 1.0, 0.01, 1, n_paths=4)
    assert np.all(b.phi[0] == 5.0)
    assert np.all(b.phi[1:] > 0)


def test_qd_mean_matches_closed_form():
    b = simulate_qd(get_model("const-rho"), 0.0, 0.0, 1.0, 0.01, 3, n_paths=100_000, extras=False)
    P = b.phi[-1]
    assert abs(P.mean() - (np.e - 1)) <= 3 * _stderr(P)


def test_qd_lambda_dominance_exact():
    m = get_model("mono-rho-tanh")
    a = simulate_qd(m, 0.2, 0.0, 1.0, 0.01, 3, lambda_dyn=1.0, n_paths=2000)
    b = simulate_qd(m, 0.2, 0.0, 1.0, 0.01, 3, lambda_dyn=1.2, n_paths=2000)
    assert np.all(b.phi >= a.phi)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.0, 1.0), st.integers(0, 2 ** 32))
def test_qd_lambda_dominance_property(lam, eps, seed):
    m = get_model("const-rho")
    a = simulate_qd(m, 1.0, 0.0, 0.5, 0.01, seed, lambda_dyn=lam, n_paths=8)
    b = simulate_qd(m, 1.0, 0.0, 0.5, 0.01, seed, lambda_dyn=lam + eps, n_paths=8)
    assert np.all(b.phi >= a.phi)


# time change ------------------------------------------------------------------------

def test_clock_constant_rho():
    m = DiffusionModel(mu0=0, mu1=2, sigma=1)
    b = simulate_st(m, 1.0, 0.0, 1.0, 0.01, 2, n_paths=3)
    np.testing.assert_allclose(b.extras["A"], 4 * b.times[:, None] * np.ones((1, 3)), rtol=1e-12)
    tc = time_change(b, m)
    # resampling at T_s = s / 4 on the new clock
    s = tc.times
    np.testing.assert_allclose(tc.x[:, 0], np.interp(s / 4, b.times, b.x[:, 0]), atol=1e-12)


def test_clock_inversion_within_two_steps():
    m = get_model("mono-rho-dec")
    b = simulate_st(m, 1.0, 0.0, 2.0, 0.01, 5, n_paths=50)
    A = b.extras["A"]
    assert np.all(np.diff(A, axis=0) > 0)
    tc = time_change(b, m)
    for i in range(b.n_paths):
        T = np.interp(tc.times, A[:, i], b.times)
        back = np.interp(T, b.times, A[:, i])
        valid = tc.times <= A[-1, i]
        assert np.max(np.abs(back - tc.times)[valid]) <= 2 * b.dt


def test_time_changed_phi_is_gbm():
    m = get_model("mono-rho-tanh")
    b = simulate_st(m, 1.0, 0.0, 6.0, 0.005, 11, n_paths=10_000)
    tc = time_change(b, m, horizon=1.0)
    assert not tc.meta.get("truncated", False)
    z = np.log(tc.phi[-1]) + 0.5
    assert kstest(z, "norm").pvalue > 0.01


def test_time_change_flags_truncation():
    m = get_model("const-rho")
    b = simulate_st(m, 1.0, 0.0, 1.0, 0.01, 1, n_paths=2)
    tc = time_change(b, m, horizon=5.0)
    assert tc.meta["truncated"]


# simulate_hat ----------------------------------------------------------------------------

def test_hat_comparison_ordering():
    m = get_model("mono-rho-tanh")
    lo = simulate_hat(m, 1.0, 0.0, 1.0, 0.01, 5, n_paths=2000)
    hi = simulate_hat(m, 1.0, 0.5, 1.0, 0.01, 5, n_paths=2000)
    assert np.all(lo.x <= hi.x)


def test_hat_phi_independent_of_x0():
    m = get_model("mono-rho-dec")
    a = simulate_hat(m, 1.0, -1.0, 1.0, 0.01, 5, n_paths=100)
    b = simulate_hat(m, 1.0, 1.0, 1.0, 0.01, 5, n_paths=100)
    np.testing.assert_array_equal(a.phi, b.phi)


def test_hat_martingale():
    m = get_model("mono-rho-tanh")
    P = simulate_hat(m, 2.0, 0.0, 1.0, 0.01, 6, n_paths=100_000).phi[-1]
    assert abs(P.mean() - 2.0) <= 3 * _stderr(P)


def test_hat_rejects_vanishing_rho():
    with pytest.raises(ValueError):
        simulate_hat(FLAT, 1.0, 0.0, 1.0, 0.01, 1)


# simulate_canonical ------------------------------------------------------------------------

def test_canonical_on_trap(trap_model):
    lo, hi = trap_model.x_domain
    ratios = []
    for dt in (0.005, 0.0025, 0.00125):
        c = simulate_canonical(trap_model, 0.0, 0.0, 1.0, dt, 9, n_paths=200)
        assert np.max(np.abs(c.extras["u"])) < 1e-12
        # paths clipped at the domain edge leave the exact dynamics; drop them
        inside = np.all((c.x > lo) & (c.x < hi), axis=0)
        assert inside.sum() > 100
        # U = F(X) - log Phi with F(x) = x, so Phi = e^X up to O(dt) per step
        check = c.extras["u_check"][:, inside]
        assert np.abs(np.diff(check, axis=0)).max() <= 30 * dt
        ratios.append(np.abs(check[-1]).mean() / dt)
    assert max(ratios) / min(ratios) < 1.5


def test_canonical_unit_model_decreasing(unit_model):
    c = simulate_canonical(unit_model, 0.0, 0.0, 1.0, 0.01, 3, n_paths=50)
    assert np.all(np.diff(c.extras["u"], axis=0) < 0)


def test_canonical_coupling_error_is_order_dt():
    m = get_model("const-rho")
    ratios = []
    for dt in (0.01, 0.005, 0.0025):
        c = simulate_canonical(m, 0.3, 0.0, 1.0, dt, 9, n_paths=2000)
        d = np.abs(c.extras["u"][-1] - c.extras["u_check"][-1])
        ratios.append(d.mean() / dt)
    assert max(ratios) / min(ratios) < 1.5


# bundle export -----------------------------------------------------------------------------

def test_bundle_csv(tmp_path, unit_model):
    b = simulate_st(unit_model, 1.0, 0.0, 0.1, 0.01, 1, n_paths=2)
    files = b.to_csv(tmp_path)
    assert len(files) == 2
    header, rows = read_csv(files[1])
    assert header == ["t", "phi", "x", "L", "A"]
    assert len(rows) == b.n_steps + 1
    assert float(rows[-1][1]) == b.phi[-1, 1]
    assert isinstance(b, PathBundle) and b.path(1)["phi"].shape == (b.n_steps + 1,)
