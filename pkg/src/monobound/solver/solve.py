"""Value-function solves for the testing and detection problems."""

from __future__ import annotations

import dataclasses
import time

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..model import DiffusionModel
from .fields import CONTINUE, STOP, ValueField
from .grid import Grid2D, SolverConfig, build_grid
from .lcp import SolverError, policy_iteration, psor
from .scheme import CanonicalProblem, assemble, obstacle


def eps_D(grid: Grid2D, model: DiffusionModel, lam_cost: float | None = None) -> float:
    """Stop-set identification tolerance 4 h (h * cost scale), h the coarser spacing."""
    if grid.mode == "detection":
        lam_cost = model.lam if lam_cost is None else lam_cost
        scale = lam_cost / model.cost_c
    else:
        scale = 1.0 + model.cost_b / model.cost_a
    h = grid.h_max
    return 4.0 * h * h * scale


def red_black_order(prob: CanonicalProblem) -> np.ndarray:
    J = prob.x.size
    cols = list(range(0, J, 2)) + list(range(1, J, 2))
    return np.concatenate([np.arange(prob.offset[j], prob.offset[j + 1]) for j in cols])


# below this many nodes per direction the warm-start recursion stops
WARM_START_MIN = 64


def _coarse_policy(prob: CanonicalProblem, grid: Grid2D, model, lam_dyn, lam_cost):
    """Initial stop set from a half-resolution solve, or None on small grids.

    Howard's iteration moves the free boundary by about one node per step
    when started from the payoff; a coarse solution puts it within a few
    nodes of its final position.
    """
    cfg = grid.config
    if min(cfg.n_phi, cfg.n_x) < WARM_START_MIN or cfg.method != "policy":
        return None
    coarse = dataclasses.replace(cfg, n_phi=(cfg.n_phi + 1) // 2, n_x=(cfg.n_x + 1) // 2)
    cgrid = build_grid(coarse, model, grid.mode)
    cprob = assemble(model, cgrid, lam_dyn, lam_cost)
    stop0 = _coarse_policy(cprob, cgrid, model, lam_dyn, lam_cost)
    cres = _lattice_solve(cprob, coarse, stop0=stop0)
    V, _, payoff = _to_output(cprob, cres.W, cres.stop, cgrid, model)
    skip = 1 if cgrid.has_zero_row else 0
    y_c = np.log(cgrid.phi_nodes[skip:])
    interp = RegularGridInterpolator((y_c, cgrid.x_nodes), (V - payoff)[skip:],
                                     bounds_error=False, fill_value=None)
    y_f = np.clip(np.log(prob.phi), y_c[0], y_c[-1])
    d = interp(np.column_stack([y_f, prob.x[prob.j]]))
    return d >= -1e-12 * (1.0 + np.abs(prob.psi))


def _lattice_solve(prob: CanonicalProblem, cfg: SolverConfig, callback=None, stop0=None):
    if cfg.method == "psor":
        res = psor(prob.A, prob.cost, prob.psi, prob.forced, tol=cfg.tol_solve,
                   max_sweeps=cfg.psor_max_sweeps, omega=cfg.omega,
                   order=red_black_order(prob), scale=prob.row_scale, callback=callback)
    else:
        res = policy_iteration(prob.A, prob.cost, prob.psi, prob.forced,
                               tol=cfg.tol_solve, max_iter=cfg.max_iter, scale=prob.row_scale,
                               stop0=stop0)
        if res.residual > cfg.tol_solve:
            raise SolverError(f"residual {res.residual:.3g} above tol_solve", res.history)
    return res


def _to_output(prob: CanonicalProblem, W, stop, grid: Grid2D, model):
    """Map lattice values to the (phi, x) grid by interpolation in log(phi)."""
    phi_pos = grid.positive_phi()
    y_out = np.log(phi_pos)
    psi_out = obstacle(model, grid.mode, phi_pos)
    J = grid.x_nodes.size
    V = np.empty((phi_pos.size, J))
    R = np.empty((phi_pos.size, J), dtype=np.int8)
    for j in range(J):
        sl = prob.column(j)
        y = prob.log_phi(j)[::-1]
        w, s = W[sl][::-1], stop[sl][::-1]
        pos = np.clip(np.searchsorted(y, y_out), 1, y.size - 1)
        both = s[pos - 1] & s[pos]
        exact = np.isclose(y[pos - 1], y_out, rtol=0, atol=1e-12) & s[pos - 1]
        st = both | exact
        V[:, j] = np.where(st, psi_out, np.minimum(psi_out, np.interp(y_out, y, w)))
        R[:, j] = np.where(st, STOP, CONTINUE)
    payoff = np.repeat(psi_out[:, None], J, axis=1)
    if grid.has_zero_row:
        V = np.vstack([np.zeros((1, J)), V])
        R = np.vstack([np.full((1, J), STOP, np.int8), R])
        payoff = np.vstack([np.zeros((1, J)), payoff])
    return V, R, payoff


def smooth_fit_defect(field: ValueField) -> dict:
    """One-sided V_phi and V_x just inside the continuation set at each column's boundary."""
    V, R, phi, x = field.values, field.region, field.phi, field.x
    vphi, vx = [], []
    for j in range(x.size):
        st = np.flatnonzero((R[:, j] == STOP) & (phi > field.grid.anchor))
        if st.size == 0 or st[0] == 0:
            continue
        i = st[0] - 1
        vphi.append((V[i + 1, j] - V[i, j]) / (phi[i + 1] - phi[i]))
        jl, jr = max(j - 1, 0), min(j + 1, x.size - 1)
        vx.append((V[i, jr] - V[i, jl]) / (x[jr] - x[jl]))
    vphi, vx = np.abs(vphi), np.abs(vx)
    if vphi.size == 0:
        return {"v_phi_max": None, "v_phi_rms": None, "v_x_max": None, "v_x_rms": None}
    return {"v_phi_max": float(vphi.max()), "v_phi_rms": float(np.sqrt(np.mean(vphi ** 2))),
            "v_x_max": float(vx.max()), "v_x_rms": float(np.sqrt(np.mean(vx ** 2)))}


def _solve(grid: Grid2D, model: DiffusionModel, lam_dyn=None, lam_cost=None,
           callback=None) -> ValueField:
    model.validate()
    t0 = time.perf_counter()
    prob = assemble(model, grid, lam_dyn, lam_cost)
    stop0 = _coarse_policy(prob, grid, model, lam_dyn, lam_cost)
    res = _lattice_solve(prob, grid.config, callback, stop0=stop0)
    V, R, payoff = _to_output(prob, res.W, res.stop, grid, model)
    params = {"model": model.name, "mode": grid.mode, "lambda": model.lam,
              "cost_a": model.cost_a, "cost_b": model.cost_b, "cost_c": model.cost_c,
              "method": grid.config.method, "lattice_nodes": int(prob.size)}
    if grid.mode == "detection":
        params["lambda_dyn"] = model.lam if lam_dyn is None else float(lam_dyn)
        params["lambda_cost"] = model.lam if lam_cost is None else float(lam_cost)
    field = ValueField(values=V, payoff=payoff, region=R, mode=grid.mode,
                       residual=res.residual, params=params, grid=grid,
                       eps_D=eps_D(grid, model, lam_cost), iterations=res.iterations,
                       history=res.history, problem=prob, W=res.W, stop=res.stop)
    field.diagnostics["solve_seconds"] = time.perf_counter() - t0
    if grid.mode == "detection":
        field.diagnostics["smooth_fit"] = smooth_fit_defect(field)
    return field


def _grid_for(grid, model, mode):
    if grid is None:
        return build_grid(SolverConfig(), model, mode)
    if isinstance(grid, SolverConfig):
        return build_grid(grid, model, mode)
    if grid.mode != mode:
        return build_grid(grid.config, model, mode)
    return grid


def solve_st(grid: Grid2D | SolverConfig | None, model: DiffusionModel, **kw) -> ValueField:
    """Sequential testing: undiscounted obstacle problem with cost 1 + phi."""
    return _solve(_grid_for(grid, model, "testing"), model, **kw)


def solve_st_timechanged(grid: Grid2D | SolverConfig | None, model: DiffusionModel,
                         **kw) -> ValueField:
    """Sequential testing after the additive-functional time change."""
    return _solve(_grid_for(grid, model, "testing-timechanged"), model, **kw)


def solve_qd(grid: Grid2D | SolverConfig | None, model: DiffusionModel,
             lambda_dyn: float | None = None, lambda_cost: float | None = None,
             **kw) -> ValueField:
    """Quickest detection: discount lambda_cost, Phi-drift lambda_dyn (1 + phi)."""
    for lam in (lambda_dyn, lambda_cost):
        if lam is not None and not lam > 0:
            raise ValueError("lambda_dyn and lambda_cost must be positive")
    return _solve(_grid_for(grid, model, "detection"), model, lambda_dyn, lambda_cost, **kw)
