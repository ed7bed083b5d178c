"""Trap curves, Hormander brackets and the lambda-perturbation check.

A trap is a curve phi = kappa * exp(F(x)) that the detection pair never
leaves.  It exists iff G1(x) - lam = (lam/kappa) exp(-F(x)) on the whole
domain; differentiating gives lam/kappa = G1'(x) / G2'(x) with
G2 = exp(-F), which is how kappa is estimated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .io import write_csv, write_json
from .model import DiffusionModel

N_SAMPLES = 1000
G2_FLOOR = 1e-12


def tol_trap(lam: float) -> float:
    return 1e-8 * (1.0 + lam)


@dataclass
class ResidualProfile:
    x: np.ndarray
    residual: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.residual)))

    def to_csv(self, path) -> None:
        write_csv(path, ["x", "residual"], zip(self.x, self.residual))


def trap_residual(model: DiffusionModel, kappa: float, lam: float | None = None,
                  n: int = N_SAMPLES) -> ResidualProfile:
    """R(x) = G1(x) - lam - (lam/kappa) exp(-F(x)) on n domain points."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    lam = model.lam if lam is None else lam
    x = model.sample_points(n)
    r = model.G1(x) - lam - (lam / kappa) * np.exp(-model.F(x))
    return ResidualProfile(x, r)


@dataclass
class TrapReport:
    model: str
    lam: float
    has_trap: bool
    kappa: float | None
    residual: ResidualProfile | None
    tolerance: float
    candidate_spread: float | None = None
    curve_x: np.ndarray | None = None
    curve: np.ndarray | None = None
    perturbation: list = field(default_factory=list)
    F: object = field(default=None, repr=False)

    @property
    def residual_sup(self) -> float | None:
        return None if self.residual is None else self.residual.sup

    def gamma(self, x):
        """Trap curve kappa * exp(F(x)); only defined when a trap exists."""
        if not self.has_trap:
            raise ValueError("no trap")
        return self.kappa * np.exp(self.F(np.asarray(x, dtype=float)))

    def to_json(self) -> dict:
        return {"model": self.model, "lambda": self.lam, "has_trap": self.has_trap,
                "kappa": self.kappa, "residual_sup": self.residual_sup,
                "tolerance": self.tolerance, "candidate_spread": self.candidate_spread,
                "perturbation": self.perturbation}

    def write(self, directory, prefix: str = "trap") -> list[str]:
        """JSON report plus residual / curve CSVs; returns the file names."""
        import pathlib
        d = pathlib.Path(directory)
        names = [f"{prefix}.json"]
        write_json(d / names[0], self.to_json())
        if self.residual is not None:
            names.append(f"{prefix}_residual.csv")
            self.residual.to_csv(d / names[-1])
        if self.has_trap:
            names.append(f"{prefix}_curve.csv")
            write_csv(d / names[-1], ["x", "gamma"], zip(self.curve_x, self.curve))
        return names


def _ratio_candidates(model: DiffusionModel, x: np.ndarray):
    g1p = model.G1.derivative(x, 1)
    g2p = -model.F_derivative(x, 1) * np.exp(-model.F(x))
    keep = np.abs(g2p) > G2_FLOOR
    return g1p[keep] / g2p[keep]


def detect_trap(model: DiffusionModel, lam: float | None = None,
                n: int = N_SAMPLES) -> TrapReport:
    """Look for kappa with G1 - lam = (lam/kappa) exp(-F).

    ``lam`` replaces the rate on the right-hand side only (G1 is kept), which
    is the perturbed problem with lam + eps.
    """
    lam = model.lam if lam is None else lam
    tol = tol_trap(lam)
    x = model.sample_points(n)
    ratio = _ratio_candidates(model, x)
    empty = TrapReport(model.name, lam, False, None, None, tol)
    if ratio.size == 0:
        return empty
    spread = float(np.ptp(ratio))
    beta = float(np.mean(ratio))
    empty.candidate_spread = spread
    if spread >= tol or beta <= 0:
        return empty
    kappa = lam / beta
    prof = trap_residual(model, kappa, lam, n)
    if prof.sup > tol:
        return TrapReport(model.name, lam, False, None, prof, tol, spread)
    curve = kappa * np.exp(model.F(x))
    return TrapReport(model.name, lam, True, kappa, prof, tol, spread, x, curve, F=model.F)


def min_residual_sup(model: DiffusionModel, lam: float, n: int = N_SAMPLES):
    """min over beta >= 0 of sup |G1 - lam - beta exp(-F)| (a small LP).

    Returns (sup, beta); beta = lam / kappa at the optimum.
    """
    x = model.sample_points(n)
    r = model.G1(x) - lam
    g = np.exp(-model.F(x))
    # variables (beta, t): minimise t with |r - beta g| <= t
    ones = np.ones_like(g)
    A = np.vstack([np.column_stack([-g, -ones]), np.column_stack([g, -ones])])
    b = np.concatenate([-r, r])
    res = linprog([0.0, 1.0], A_ub=A, b_ub=b, bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"residual LP failed: {res.message}")
    beta = float(res.x[0])
    return float(np.max(np.abs(r - beta * g))), beta


def perturbation_check(model: DiffusionModel, eps_list=(1e-3, 1e-2, 1e-1),
                       n: int = N_SAMPLES) -> dict:
    """Trap destruction under lam -> lam + eps on the right-hand side.

    Vacuous pass when the unperturbed model has no trap.
    """
    base = detect_trap(model, n=n)
    if not base.has_trap:
        return {"model": model.name, "applicable": False, "pass": True, "rows": []}
    rows = []
    for eps in eps_list:
        rep = detect_trap(model, lam=model.lam + eps, n=n)
        sup, beta = min_residual_sup(model, model.lam + eps, n)
        rows.append({"eps": float(eps), "has_trap": rep.has_trap, "min_residual_sup": sup,
                     "kappa_best": (model.lam + eps) / beta if beta > 0 else None,
                     "ratio": sup / eps if eps > 0 else None})
    ok = all(not r["has_trap"] for r in rows if r["eps"] > 0)
    return {"model": model.name, "applicable": True, "kappa": base.kappa,
            "rows": rows, "pass": bool(ok)}


@dataclass
class HormanderMap:
    """First non-vanishing x-derivative order of the canonical drift per node.

    ``nstar`` is -1 where every order up to ``n_max`` vanishes (a fail node).
    """

    u: np.ndarray
    x: np.ndarray
    nstar: np.ndarray
    n_max: int
    tol: float
    model: str = ""

    @property
    def fail(self) -> np.ndarray:
        return self.nstar < 0

    def fail_nodes(self):
        iu, ix = np.nonzero(self.fail)
        return self.u[iu], self.x[ix]

    def fail_set_matches(self, u_curve, cells: float = 1.0) -> bool:
        """Fail nodes lie within ``cells`` u-cells of u_curve(x), one per column at least."""
        hu = self.u[1] - self.u[0] if self.u.size > 1 else 1.0
        target = np.asarray(u_curve(self.x), dtype=float)
        near = np.abs(self.u[:, None] - target[None, :]) <= cells * hu + 1e-12
        inside = (target >= self.u[0]) & (target <= self.u[-1])
        return bool(np.all(~self.fail | near) and np.all((self.fail & near).any(axis=0) | ~inside))

    def to_json(self) -> dict:
        uu, xx = self.fail_nodes()
        return {"model": self.model, "n_max": self.n_max, "tol": self.tol,
                "u": self.u.tolist(), "x": self.x.tolist(), "nstar": self.nstar.tolist(),
                "fail_count": int(self.fail.sum()),
                "fail_nodes": [[float(a), float(b)] for a, b in zip(uu, xx)]}


def hormander_scan(model: DiffusionModel, u_range=(-2.0, 2.0), x_range=None, n_max: int = 6,
                   n_u: int = 41, n_x: int = 81, tol: float = 1e-8) -> HormanderMap:
    """Scan d^n a / dx^n = f^(n) - e^u g^(n) for n = 0..n_max.

    A derivative counts as non-zero when it exceeds ``tol`` relative to the
    size of the two terms.  Odd node counts keep the midpoints on the grid.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    x_range = model.x_domain if x_range is None else x_range
    model.check_domain(np.asarray(x_range))
    u = np.linspace(*u_range, n_u)
    x = np.linspace(*x_range, n_x)
    eu = np.exp(u)[:, None]
    nstar = np.full((n_u, n_x), -1, dtype=int)
    for n in range(n_max + 1):
        fn = model.G1.derivative(x, n) - (model.lam if n == 0 else 0.0)
        gn = model.g_derivative(x, n)
        d = fn[None, :] - eu * gn[None, :]
        scale = np.abs(fn)[None, :] + eu * np.abs(gn)[None, :] + 1e-300
        hit = (np.abs(d) > tol * scale) & (nstar < 0)
        nstar[hit] = n
    return HormanderMap(u, x, nstar, n_max, tol, model.name)
