"""Least-squares regression Monte Carlo check of the value at one point.

Backward pass: on a regression set of paths, the continuation cost at each
exercise date is regressed on a polynomial basis in (log phi, x) and the
resulting policy is applied to realised cost-to-go (Longstaff-Schwartz).
Forward pass: the fitted policy is run on independent paths.  Because the
policy is feasible but not optimal, the estimate is biased high, up to
regression noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import DiffusionModel
from ..sde import simulate_qd, simulate_st
from .scheme import obstacle

_EVAL_SEED_OFFSET = 0x5DEECE66D
_CHUNK = 10_000


@dataclass
class MCEstimate:
    estimate: float
    stderr: float
    info: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.estimate
        yield self.stderr


def _basis(logphi, x, phi, payoff, degree, mode):
    """Columns ordered so that every prefix is a usable smaller basis:
    powers of log(phi), the payoff-like term, then mixed and pure x terms."""
    cols = [np.ones_like(x)] + [logphi ** d for d in range(1, degree + 1)]
    cols.append(payoff if mode != "detection" else phi)
    for d in range(1, degree + 1):
        for i in range(1, d + 1):
            cols.append(logphi ** (d - i) * x ** i)
    return np.column_stack(cols)


def _column_options(degree):
    full = (degree + 1) * (degree + 2) // 2 + 1
    return [full, degree + 2, degree + 1, 2, 1]


def _standardise(Bs, keep, mu, sd):
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = np.where(keep, (Bs - np.where(keep, mu, 0)) / np.where(keep, sd, 1), 0.0)
    Z[:, 0] = 1.0
    return Z[:, keep]


def _fit(B, y, degree_cols):
    """Least squares with standardised columns; drops to fewer columns if rank-deficient."""
    fallback = False
    for ncol in degree_cols:
        Bs = B[:, :ncol]
        mu = Bs.mean(axis=0)
        sd = Bs.std(axis=0)
        keep = sd > 1e-12 * (1 + np.abs(mu))
        keep[0] = True
        Z = _standardise(Bs, keep, mu, sd)
        coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=1e-10)
        if rank == Z.shape[1]:
            return (ncol, keep, mu, sd, coef), fallback
        fallback = True
    return (1, np.array([True]), np.zeros(1), np.ones(1), np.array([y.mean()])), True


def _predict(B, fit):
    ncol, keep, mu, sd, coef = fit
    return _standardise(B[:, :ncol], keep, mu, sd) @ coef


class _Problem:
    def __init__(self, model, mode, lam_dyn, lam_cost):
        self.model, self.mode = model, mode
        self.lam_dyn = model.lam if lam_dyn is None else lam_dyn
        self.lam_cost = model.lam if lam_cost is None else lam_cost

    def simulate(self, phi0, x0, horizon, dt, seed, n):
        if self.mode == "detection":
            return simulate_qd(self.model, phi0, x0, horizon, dt, seed, self.lam_dyn,
                               n_paths=n, extras=False)
        return simulate_st(self.model, phi0, x0, horizon, dt, seed, n_paths=n, extras=False)

    def payoff(self, phi):
        return obstacle(self.model, self.mode, phi)

    def step_costs(self, bundle):
        """Running cost over each step, discounted to time 0 (trapezoid)."""
        P, t = bundle.phi, bundle.times[:, None]
        if self.mode == "detection":
            c = np.exp(-self.lam_cost * t) * (P - self.lam_cost / self.model.cost_c)
        else:
            c = 1.0 + P
        return 0.5 * (c[1:] + c[:-1]) * bundle.dt

    def basis(self, P, X, degree):
        with np.errstate(divide="ignore"):
            z = np.log(np.maximum(P, 1e-300))
        return _basis(z, X, P, self.payoff(P), degree, self.mode)

    def side(self, P):
        """Regression groups: the two sides of b/a in testing, one group in detection."""
        if self.mode == "detection":
            return np.zeros(P.shape, np.int8)
        return (self.model.cost_a * P > self.model.cost_b).astype(np.int8)

    def premium(self, P, X, degree, fits):
        B = self.basis(P, X, degree)
        side = self.side(P)
        out = np.empty(P.shape)
        for g in np.unique(side):
            sel = side == g
            fit = fits.get(g)
            # a side never seen in the regression set: keep going
            out[sel] = -1.0 if fit is None else _predict(B[sel], fit)
        return out

    def discount(self, times):
        if self.mode == "detection":
            return np.exp(-self.lam_cost * times)
        return np.ones_like(times)


def mc_value_oracle(model: DiffusionModel, mode: str, phi0: float, x0: float,
                    n_paths: int = 100_000, horizon: float | None = None, dt: float | None = None,
                    seed: int = 0, n_regression: int = 20_000, exercise_every: int = 1,
                    degree: int = 3, lambda_dyn: float | None = None,
                    lambda_cost: float | None = None) -> MCEstimate:
    """Upper estimate of the value at (phi0, x0) and its standard error.

    Default horizons: b (testing; continuing longer than b never beats
    stopping) and 6/lambda (detection).  The default step keeps
    max(sigma^2, rho^2) dt <= 0.1 at the start point, capped at 0.02.
    """
    if n_paths < 10_000:
        raise ValueError("n_paths must be at least 1e4")
    mode = "testing" if mode == "testing-timechanged" else mode
    prob = _Problem(model, mode, lambda_dyn, lambda_cost)
    if horizon is None:
        horizon = model.cost_b if mode == "testing" else 6.0 / prob.lam_cost
    if dt is None:
        xa = np.asarray(x0, dtype=float)
        spread = max(float(model.sigma(xa)) ** 2, float(model.rho(xa)) ** 2)
        dt = min(0.02, 0.1 / spread)
        dt = horizon / np.ceil(horizon / dt)
    pay0 = float(prob.payoff(np.array(phi0)))
    if mode == "testing" and phi0 == 0:
        return MCEstimate(0.0, 0.0, {"immediate_stop": True})

    # backward pass on the regression set
    reg = prob.simulate(phi0, x0, horizon, dt, seed, n_regression)
    costs = prob.step_costs(reg)
    n = reg.n_steps
    dates = np.arange(0, n + 1, exercise_every)
    if dates[-1] != n:
        dates = np.append(dates, n)
    disc = prob.discount(reg.times)
    col_options = _column_options(degree)
    ctg = disc[-1] * prob.payoff(reg.phi[-1])    # forced stop at the horizon
    fits = {}
    any_fallback = False
    for a, b in zip(dates[-2::-1], dates[:0:-1]):
        ctg = ctg + costs[a:b].sum(axis=0)
        if a == 0:
            break
        P, X = reg.phi[a], reg.x[a]
        stop_val = disc[a] * prob.payoff(P)
        B = prob.basis(P, X, degree)
        side = prob.side(P)
        fits[a] = {}
        premium = np.empty_like(ctg)
        for g in np.unique(side):
            sel = side == g
            fit, fb = _fit(B[sel], ctg[sel] - stop_val[sel], col_options)
            any_fallback |= fb
            fits[a][g] = fit
            premium[sel] = _predict(B[sel], fit)
        ctg = np.where(premium >= 0, stop_val, ctg)
    stop_at_zero = pay0 <= ctg.mean()

    # forward pass on independent paths
    if stop_at_zero:
        return MCEstimate(pay0, 0.0, {"immediate_stop": True, "fallback": any_fallback})
    total, total_sq, count = 0.0, 0.0, 0
    eval_seed = (int(seed) + _EVAL_SEED_OFFSET) % 2 ** 64
    for c0 in range(0, n_paths, _CHUNK):
        m = min(_CHUNK, n_paths - c0)
        bund = prob.simulate(phi0, x0, horizon, dt, eval_seed + c0 // _CHUNK, m)
        costs = prob.step_costs(bund)
        value = np.zeros(m)
        alive = np.ones(m, bool)
        for a, b in zip(dates[:-1], dates[1:]):
            value[alive] += costs[a:b, alive].sum(axis=0)
            P, X = bund.phi[b], bund.x[b]
            if b == n:
                value[alive] += disc[b] * prob.payoff(P[alive])
                break
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            Pa, Xa = P[idx], X[idx]
            sv = disc[b] * prob.payoff(Pa)
            st = prob.premium(Pa, Xa, degree, fits[b]) >= 0
            value[idx[st]] += sv[st]
            alive[idx[st]] = False
        total += value.sum()
        total_sq += (value ** 2).sum()
        count += m
    mean = total / count
    var = max(total_sq / count - mean ** 2, 0.0)
    return MCEstimate(float(mean), float(np.sqrt(var / count)),
                      {"immediate_stop": False, "fallback": any_fallback,
                       "horizon": horizon, "dt": dt, "n_regression": n_regression})
