"""Monotone-boundary checks for models with monotone signal-to-noise ratio.

Expected directions (testing / detection), by sign of mu1 - mu0 and the
direction of rho:

    mu1 > mu0, rho increasing:  b0 decreasing, b1 increasing / b increasing
    mu1 > mu0, rho decreasing:  b0 increasing, b1 decreasing / b decreasing
    mu1 < mu0, rho increasing:  b0 increasing, b1 decreasing / b decreasing
    mu1 < mu0, rho decreasing:  b0 decreasing, b1 increasing / b increasing

Equivalently x -> V(phi, x) is decreasing in the first and last rows of the
table and increasing in the two middle rows.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .io import write_json
from .model import DiffusionModel
from .solver import (STOP, BoundarySet, SolverConfig, ValueField, build_grid,
                     extract_boundaries, solve_qd, solve_st)

INC, DEC, NONMONO, FLAT = "increasing", "decreasing", "non-monotone", "flat"
GT, LT = "mu1_gt_mu0", "mu1_lt_mu0"
MONOTONE_TOL = 1e-10
VIOLATION_BUDGET = 1.5


@dataclass(frozen=True)
class Classification:
    rho_direction: str
    mu_order: str
    constant: bool = False
    model: str = ""

    @property
    def applicable(self) -> bool:
        return self.rho_direction != NONMONO

    def __iter__(self):
        yield self.rho_direction
        yield self.mu_order


def classify_model(model: DiffusionModel, n: int = 1000) -> Classification:
    """Direction of rho from n samples and the order of the two drifts."""
    r = model.rho(model.sample_points(n))
    d = np.diff(r)
    constant = bool(np.all(np.abs(d) <= MONOTONE_TOL))
    if constant or np.all(d >= -MONOTONE_TOL):
        direction = INC
    elif np.all(d <= MONOTONE_TOL):
        direction = DEC
    else:
        direction = NONMONO
    return Classification(direction, GT if model.mu1_gt_mu0 else LT, constant, model.name)


def value_direction(c: Classification) -> str:
    """Predicted direction of x -> V(phi, x)."""
    if c.constant:
        return FLAT
    same = (c.rho_direction == INC) == (c.mu_order == GT)
    return DEC if same else INC


def expected_directions(c: Classification, mode: str) -> dict[str, str]:
    """Boundary directions implied by the value direction."""
    if not c.applicable:
        return {}
    v = value_direction(c)
    flip = {INC: DEC, DEC: INC, FLAT: FLAT}
    if mode == "detection":
        return {"b": flip[v]}
    # V increasing in x pushes b0 up and b1 down
    return {"b0": v, "b1": flip[v]}


def adverse_move(values: np.ndarray, direction: str) -> float:
    """Largest cumulative move against ``direction`` (max over i < k)."""
    v = np.asarray(values, dtype=float)
    if direction == INC:
        return float(np.max(np.maximum.accumulate(v) - v))
    if direction == DEC:
        return float(np.max(v - np.minimum.accumulate(v)))
    return float(np.ptp(v))


def observed_direction(values, tol: float) -> str:
    inc, dec = adverse_move(values, INC), adverse_move(values, DEC)
    if np.ptp(values) <= tol:
        return FLAT
    return INC if inc <= dec else DEC


@dataclass
class GsVerdict:
    model: str
    mode: str
    rho_direction: str
    mu_order: str
    constant: bool
    expected: dict
    observed: dict
    violation: dict          # in phi-cells
    passed: dict
    budget: float = VIOLATION_BUDGET
    history: list = field(default_factory=list)

    @property
    def applicable(self) -> bool:
        return self.rho_direction != NONMONO

    @property
    def all_pass(self) -> bool | None:
        return all(self.passed.values()) if self.applicable else None

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["applicable"] = self.applicable
        out["pass"] = self.all_pass
        return out

    def write(self, path) -> None:
        write_json(path, self.to_json())


def verify_gs(boundaries: BoundarySet, classification: Classification,
              budget: float = VIOLATION_BUDGET) -> GsVerdict:
    """Compare the (sub-cell refined) boundaries with the expected directions.

    Violations are measured in log(phi) cells; constant rho expects flat
    curves, whose total variation must stay within the budget.
    """
    c = classification
    expected = expected_directions(c, boundaries.mode)
    observed, violation, passed = {}, {}, {}
    h = boundaries.h_logphi
    for name, curve in boundaries.curves.items():
        cells = np.log(curve) / h
        observed[name] = observed_direction(cells, budget)
        if not c.applicable:
            continue
        violation[name] = adverse_move(cells, expected[name])
        passed[name] = violation[name] <= budget
    return GsVerdict(c.model, boundaries.mode, c.rho_direction, c.mu_order, c.constant,
                     expected, observed, violation, passed, budget)


def _solve(model, mode, config):
    if mode == "detection":
        return solve_qd(config, model)
    return solve_st(config, model)


def refine_config(config: SolverConfig) -> SolverConfig:
    return dataclasses.replace(config, n_phi=2 * config.n_phi - 1, n_x=2 * config.n_x - 1)


def run_gs_check(model: DiffusionModel, mode: str, config: SolverConfig | None = None,
                 budget: float = VIOLATION_BUDGET, max_refinements: int = 1):
    """Solve, extract and verify; on failure re-run on a doubled grid.

    Returns (verdict, field, boundaries) of the last run; the verdict's
    ``history`` lists every resolution tried.
    """
    config = SolverConfig() if config is None else config
    c = classify_model(model)
    history = []
    for level in range(max_refinements + 1):
        field = _solve(model, mode, config)
        bset = extract_boundaries(field)
        verdict = verify_gs(bset, c, budget)
        history.append({"n_phi": config.n_phi, "n_x": config.n_x,
                        "violation": dict(verdict.violation), "pass": verdict.all_pass})
        if not verdict.applicable or verdict.all_pass or level == max_refinements:
            break
        config = refine_config(config)
    verdict.history = history
    return verdict, field, bset


def _rows(field: ValueField):
    skip = 1 if field.grid.has_zero_row else 0
    return range(skip, field.values.shape[0])


def check_value_monotone_x(field: ValueField, classification: Classification) -> dict:
    """Predicted x-monotonicity of every phi-row, up to 2 eps_D."""
    tol = 2.0 * field.eps_D
    if not classification.applicable:
        return {"applicable": False, "pass": None}
    direction = value_direction(classification)
    worst, worst_row = 0.0, None
    for i in _rows(field):
        v = adverse_move(field.values[i], direction)
        if v > worst:
            worst, worst_row = v, i
    return {"applicable": True, "direction": direction, "tolerance": tol,
            "worst_violation": worst,
            "worst_phi": None if worst_row is None else float(field.phi[worst_row]),
            "pass": bool(worst <= tol)}


def phi_concavity_defect(field: ValueField) -> np.ndarray:
    """Linear interpolation of the phi-neighbours minus V (positive = convex kink)."""
    V, phi = field.values, field.phi
    w = ((phi[1:-1] - phi[:-2]) / (phi[2:] - phi[:-2]))[:, None]
    return (1 - w) * V[:-2] + w * V[2:] - V[1:-1]


def check_phi_shape(field: ValueField) -> dict:
    """Monotone increasing and concave in phi at every x, up to 2 eps_D."""
    tol = 2.0 * field.eps_D
    drop = float(np.max(np.maximum.accumulate(field.values, axis=0) - field.values))
    conc = float(np.max(phi_concavity_defect(field)))
    return {"tolerance": tol, "max_decrease": drop, "max_convexity": conc,
            "increasing": drop <= tol, "concave": conc <= tol,
            "pass": bool(drop <= tol and conc <= tol)}


def check_vx_sign(field: ValueField, classification: Classification, model=None) -> dict:
    """Sign of the x-derivative on continuation nodes, and the concavity feed.

    V_x is a central difference on interior columns; the slack is
    2 eps_D / h_x.  The concavity part reports whether V_phiphi <= 0 up to
    tolerance, which with rho rho' >= 0 gives the sign of phi^2 rho rho' V_phiphi.
    """
    if field.mode != "detection":
        raise ValueError("check_vx_sign applies to detection fields")
    slack = 2.0 * field.eps_D / field.grid.h_x
    V, R = field.values, field.region
    vx = (V[:, 2:] - V[:, :-2]) / (2 * field.grid.h_x)
    cont = R[:, 1:-1] != STOP
    direction = value_direction(classification) if classification.applicable else None
    vals = vx[cont]
    if direction == DEC:
        worst = float(vals.max(initial=-np.inf))
        ok = worst <= slack
    elif direction == INC:
        worst = float(-vals.min(initial=np.inf))
        ok = worst <= slack
    else:
        worst = float(np.abs(vals).max(initial=0.0))
        ok = worst <= slack
    conc = phi_concavity_defect(field)
    conc_ok = bool(np.max(conc) <= 2.0 * field.eps_D)
    out = {"direction": direction, "slack": slack, "worst": worst, "pass": bool(ok),
           "concave": conc_ok, "max_convexity": float(np.max(conc))}
    if model is not None:
        x = field.x
        rr = model.rho(x) * model.rho.derivative(x, 1)
        mask = rr >= 0
        h_ok = bool(np.all(conc[:, mask] <= 2.0 * field.eps_D)) if mask.any() else True
        out["h_sign_ok"] = h_ok
    return out


def check_lambda_limit(model: DiffusionModel, grid=None, eps_list=(0.1, 0.05, 0.025)) -> dict:
    """Ordering and shrinking gap of the value with lambda_dyn = lambda + eps."""
    config = grid.config if hasattr(grid, "config") else (grid or SolverConfig())
    lam = model.lam
    base = solve_qd(config, model, lam, lam)
    tol = 2.0 * base.eps_D
    rows = []
    for eps in sorted(eps_list, reverse=True):
        pert = solve_qd(config, model, lam + eps, lam)
        diff = pert.values - base.values
        rows.append({"eps": float(eps), "min_diff": float(diff.min()),
                     "gap": float(np.abs(diff).max()), "ordered": bool(diff.min() >= -tol)})
    gaps = [r["gap"] for r in rows]
    shrinking = bool(all(a >= b for a, b in zip(gaps, gaps[1:])))
    rate = None
    if len(rows) > 1 and min(gaps) > 0:
        e = np.log([r["eps"] for r in rows])
        rate = float(np.polyfit(e, np.log(gaps), 1)[0])
    return {"model": model.name, "lambda": lam, "tolerance": tol, "rows": rows,
            "shrinking": shrinking, "rate": rate,
            "pass": bool(shrinking and all(r["ordered"] for r in rows))}
