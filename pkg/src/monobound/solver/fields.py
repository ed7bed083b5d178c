"""Solved value fields and extracted boundaries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..io import write_csv, write_json
from .boundary import refine_crossing
from .grid import Grid2D
from .scheme import CanonicalProblem

CONTINUE, STOP = 0, 1


class BoundaryEscapeError(RuntimeError):
    """A boundary was not found inside the phi range; enlarge it."""


@dataclass
class ValueField:
    values: np.ndarray          # (N_phi, N_x)
    payoff: np.ndarray          # obstacle at the output nodes
    region: np.ndarray          # int8, CONTINUE / STOP
    mode: str
    residual: float
    params: dict
    grid: Grid2D
    eps_D: float
    iterations: int = 0
    history: list = field(default_factory=list)
    problem: CanonicalProblem | None = field(default=None, repr=False)
    W: np.ndarray | None = field(default=None, repr=False)      # lattice values
    stop: np.ndarray | None = field(default=None, repr=False)   # lattice stop set
    diagnostics: dict = field(default_factory=dict)

    @property
    def phi(self) -> np.ndarray:
        return self.grid.phi_nodes

    @property
    def x(self) -> np.ndarray:
        return self.grid.x_nodes

    def interpolate(self, phi, x):
        """Bilinear interpolation in (log phi, x); phi = 0 uses the zero row."""
        from scipy.interpolate import RegularGridInterpolator
        skip = 1 if self.grid.has_zero_row else 0
        y = np.log(self.phi[skip:])
        f = RegularGridInterpolator((y, self.x), self.values[skip:])
        phi, x = np.broadcast_arrays(np.asarray(phi, float), np.asarray(x, float))
        out = np.zeros(phi.shape)
        pos = phi > 0
        out[pos] = f(np.column_stack([np.log(phi[pos]), x[pos]]))
        return out if out.ndim else float(out)

    def column(self, j: int):
        """(log phi ascending, W, defect, stop) along lattice column j."""
        p = self.problem
        sl = p.column(j)
        y = p.log_phi(j)[::-1]
        W = self.W[sl][::-1]
        return y, W, W - p.psi[sl][::-1], self.stop[sl][::-1]

    def to_csv(self, path) -> None:
        P, X = np.meshgrid(self.phi, self.x, indexing="ij")
        rows = zip(P.ravel(), X.ravel(), self.values.ravel(),
                   np.where(self.region.ravel() == STOP, "stop", "continue"))
        write_csv(path, ("phi", "x", "value", "region"), rows)

    def manifest(self) -> dict:
        return {"mode": self.mode, "grid": self.grid.to_json(),
                "solver": self.grid.config.to_json(), "params": self.params,
                "eps_D": self.eps_D, "iterations": self.iterations,
                "residual": self.residual, "residual_history": list(self.history),
                "diagnostics": self.diagnostics}

    def manifest_json(self, path) -> None:
        write_json(path, self.manifest())


@dataclass
class BoundarySet:
    mode: str
    x_nodes: np.ndarray
    b0: np.ndarray | None = None
    b1: np.ndarray | None = None
    b: np.ndarray | None = None
    h_logphi: float = 0.0

    @property
    def curves(self) -> dict[str, np.ndarray]:
        names = ("b",) if self.mode == "detection" else ("b0", "b1")
        return {n: getattr(self, n) for n in names}

    def tolerance(self, name: str) -> np.ndarray:
        """One phi-cell at each x (multiplicative cell width in phi units)."""
        return getattr(self, name) * np.expm1(self.h_logphi)

    def to_csv(self, path) -> None:
        names = list(self.curves)
        cols = [self.x_nodes] + [self.curves[n] for n in names]
        write_csv(path, ["x"] + names, zip(*cols))

    def to_json(self) -> dict:
        out = {"mode": self.mode, "x": self.x_nodes.tolist(), "h_logphi": self.h_logphi}
        out.update({k: v.tolist() for k, v in self.curves.items()})
        return out


def extract_boundaries(field: ValueField, grid: Grid2D | None = None) -> BoundarySet:
    """Per-column boundaries, refined to sub-cell accuracy on the lattice."""
    grid = field.grid if grid is None else grid
    p = field.problem
    phi_pos = grid.positive_phi()
    y_min, y_max = np.log(phi_pos[0]), np.log(phi_pos[-1])
    J = grid.x_nodes.size
    out = {k: np.empty(J) for k in (("b",) if field.mode == "detection" else ("b0", "b1"))}
    y_anchor = np.log(grid.anchor)

    for j in range(J):
        y, _, d, stop = field.column(j)
        inside = (y >= y_min - 1e-12) & (y <= y_max + 1e-12)
        if field.mode == "detection":
            cand = np.flatnonzero(stop & inside & (y >= y_anchor - 1e-12))
            if cand.size == 0:
                raise BoundaryEscapeError(f"no stop node at x={grid.x_nodes[j]:.4g}; raise phi_max")
            # the stop set is an upper interval; take its lower end
            n = int(cand[0])
            while n > 0 and stop[n - 1] and inside[n - 1]:
                n -= 1
            out["b"][j] = refine_crossing(y, d, n, -1)
        else:
            lo = np.flatnonzero(stop & inside & (y < y_anchor))
            hi = np.flatnonzero(stop & inside & (y > y_anchor))
            if lo.size == 0 or hi.size == 0:
                raise BoundaryEscapeError(
                    f"stop region missing around b/a at x={grid.x_nodes[j]:.4g}; widen phi_range")
            out["b0"][j] = refine_crossing(y, d, int(lo[-1]), +1)
            out["b1"][j] = refine_crossing(y, d, int(hi[0]), -1)
    out = {k: np.exp(v) for k, v in out.items()}
    return BoundarySet(mode=field.mode, x_nodes=grid.x_nodes.copy(),
                       h_logphi=grid.h_logphi, **out)
