"""One-dimensional reference solver for models with constant rho.

With rho constant, Phi is autonomous and the value does not depend on x.
The obstacle problem is solved in y = log(phi) on a fine uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from ..model import DiffusionModel, ModelError
from .boundary import refine_crossing
from .grid import MODES, ConfigError
from .lcp import policy_iteration
from .scheme import obstacle

RHO_CONST_TOL = 1e-10


@dataclass
class Oracle1D:
    mode: str
    y: np.ndarray
    values: np.ndarray
    boundaries: dict
    tol_1d: float

    def value(self, phi):
        """Interpolated value curve; phi = 0 gives 0 in testing mode."""
        phi = np.asarray(phi, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.interp(np.log(phi), self.y, self.values)
        if self.mode != "detection":
            out = np.where(phi == 0, 0.0, out)
        return out if out.ndim else float(out)

    def __iter__(self):
        yield self.value
        yield self.boundaries


def constant_rho(model: DiffusionModel) -> float:
    r = model.rho(model.sample_points(1001))
    if np.ptp(r) > RHO_CONST_TOL:
        raise ModelError(f"{model.name}: rho varies by {np.ptp(r):.3g}; 1-D reduction needs constant rho")
    return float(r[0])


def _solve(model, mode, rho, y, lam_dyn, lam_cost):
    n = y.size
    h = y[1] - y[0]
    phi = np.exp(y)
    psi = obstacle(model, mode, phi)
    s2 = rho ** 2
    if mode == "detection":
        drift = lam_dyn * (1 + phi) / phi - 0.5 * s2
        cost = phi - lam_cost / model.cost_c
        disc = lam_cost
    else:
        drift = np.full(n, -0.5 * s2)
        cost = 1 + phi
        disc = 0.0
        if mode == "testing-timechanged":
            drift, cost = drift / s2, cost / s2
            s2 = 1.0
    D = 0.5 * s2 / h ** 2
    central = np.abs(drift) * h <= s2
    cp = np.where(central, D + drift / (2 * h), D + np.maximum(drift, 0) / h)
    cm = np.where(central, D - drift / (2 * h), D + np.maximum(-drift, 0) / h)
    diag = cp + cm + disc
    lower, upper = -cm[1:], -cp[:-1]
    forced = np.zeros(n, bool)
    forced[-1] = True
    if mode == "detection":
        # reflecting bottom edge: phi -> 0 is an entrance boundary
        diag[0] = cp[0] + disc
    else:
        forced[0] = True
    A = sps.diags([lower, diag, upper], [-1, 0, 1], format="csr")
    res = policy_iteration(A, cost, psi, forced, scale=diag, max_iter=20 * n)
    return res.W, res.stop, psi


def _boundaries(model, mode, y, W, stop, psi):
    d = W - psi
    if mode == "detection":
        n = int(np.flatnonzero(stop)[0])
        return {"b": float(np.exp(refine_crossing(y, d, n, -1)))}
    ya = np.log(model.cost_b / model.cost_a)
    lo = np.flatnonzero(stop & (y < ya))
    hi = np.flatnonzero(stop & (y > ya))
    if lo.size == 0 or hi.size == 0:
        raise ConfigError("1-D oracle: stop region not found on both sides of b/a")
    return {"b0": float(np.exp(refine_crossing(y, d, int(lo[-1]), +1))),
            "b1": float(np.exp(refine_crossing(y, d, int(hi[0]), -1)))}


def solve_1d_constant_rho(model: DiffusionModel, mode: str, resolution: int = 2056,
                          phi_range=(1e-3, 1e3), lam_dyn=None, lam_cost=None,
                          margin: float = 1.0) -> Oracle1D:
    """Dense 1-D solve on ``resolution`` cells over [phi_min, phi_max] (log scale).

    The grid is extended by ``margin`` in log(phi) on both sides.  ``tol_1d``
    is the sup-difference to a run with twice the resolution.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    rho = constant_rho(model)
    lam_dyn = model.lam if lam_dyn is None else lam_dyn
    lam_cost = model.lam if lam_cost is None else lam_cost
    y_lo, y_hi = np.log(phi_range[0]) - margin, np.log(phi_range[1]) + margin
    h = (np.log(phi_range[1]) - np.log(phi_range[0])) / resolution
    n = int(round((y_hi - y_lo) / h)) + 1

    y = np.linspace(y_lo, y_hi, n)
    W, stop, psi = _solve(model, mode, rho, y, lam_dyn, lam_cost)
    y2 = np.linspace(y_lo, y_hi, 2 * n - 1)
    W2, _, _ = _solve(model, mode, rho, y2, lam_dyn, lam_cost)
    tol = float(np.max(np.abs(W2[::2] - W)))
    return Oracle1D(mode, y, W, _boundaries(model, mode, y, W, stop, psi), tol)


def compare_with_oracle(field, oracle: Oracle1D, boundaries=None) -> dict:
    """Sup value difference and boundary distance (in phi-cells) to a 1-D oracle.

    The tolerance is 3 max(h^2, tol_1d) for values and 3 cells for boundaries.
    """
    ref = oracle.value(field.phi)
    diff = float(np.max(np.abs(field.values - ref[:, None])))
    h = field.grid.h_logphi
    tol_v = 3.0 * max(field.grid.h_max ** 2, oracle.tol_1d)
    out = {"value_sup_diff": diff, "value_tol": tol_v, "boundary_cells": {},
           "tol_1d": oracle.tol_1d}
    if boundaries is not None:
        for name, curve in boundaries.curves.items():
            out["boundary_cells"][name] = float(
                np.max(np.abs(np.log(curve) - np.log(oracle.boundaries[name]))) / h)
    out["pass"] = bool(diff <= tol_v and all(c <= 3.0 for c in out["boundary_cells"].values()))
    return out
