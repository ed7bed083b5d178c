"""Monotone finite-difference scheme on the canonical (u, x) lattice.

With u = F(x) - log(phi) the single noise source acts along x at fixed u,
so the generator of (Phi, X) becomes

    (1/2) sigma^2 d_xx + mu d_x + a(u, x) d_u

and a five-point stencil (central/upwind in x, upwind in u) is monotone.
Only a band of the lattice is kept: in column j the nodes whose phi lies in
the requested range plus a margin.  References leaving the band are clamped
to the nearest node of the same column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from ..model import DiffusionModel, ModelError
from .grid import Grid2D

RHO_FLOOR = 1e-8


@dataclass
class CanonicalProblem:
    mode: str
    u0: float
    hu: float
    x: np.ndarray          # column abscissae
    F: np.ndarray          # F at the columns
    klo: np.ndarray
    khi: np.ndarray
    offset: np.ndarray     # node index of (klo[j], j)
    k: np.ndarray          # per node lattice index
    j: np.ndarray          # per node column
    phi: np.ndarray
    psi: np.ndarray
    cost: np.ndarray
    forced: np.ndarray
    A: sps.csr_matrix
    row_scale: np.ndarray

    @property
    def size(self) -> int:
        return self.k.size

    def index(self, k, j):
        j = np.asarray(j)
        kk = np.clip(k, self.klo[j], self.khi[j])
        return self.offset[j] + kk - self.klo[j]

    def column(self, j: int) -> slice:
        return slice(self.offset[j], self.offset[j + 1])

    def log_phi(self, j: int) -> np.ndarray:
        """log(phi) along column j in storage order (decreasing)."""
        ks = np.arange(self.klo[j], self.khi[j] + 1)
        return self.F[j] - (self.u0 + ks * self.hu)


def obstacle(model: DiffusionModel, mode: str, phi):
    phi = np.asarray(phi, dtype=float)
    if mode == "detection":
        return np.zeros_like(phi)
    return np.minimum(model.cost_a * phi, model.cost_b)


def column_coefficients(model: DiffusionModel, mode: str, x, lam_dyn: float):
    """(sigma^2, drift, G1, scale) of the x-operator per column.

    ``scale`` multiplies the running cost (1/rho^2 after the time change).
    """
    sig2 = model.sigma(x) ** 2
    mu = model.mu0(x)
    g1 = model.G1(x)
    scale = np.ones_like(x)
    if mode == "testing-timechanged":
        r2 = model.rho(model.sample_points(2001)) ** 2
        if np.min(np.sqrt(r2)) < RHO_FLOOR:
            raise ModelError(f"{model.name}: |rho| too small for the time change")
        scale = 1.0 / model.rho(x) ** 2
        sig2, mu, g1 = sig2 * scale, mu * scale, g1 * scale
    return sig2, mu, g1, scale


def assemble(model: DiffusionModel, grid: Grid2D, lam_dyn: float | None = None,
             lam_cost: float | None = None) -> CanonicalProblem:
    cfg = grid.config
    mode = grid.mode
    detection = mode == "detection"
    lam_dyn = model.lam if lam_dyn is None else float(lam_dyn)
    lam_cost = model.lam if lam_cost is None else float(lam_cost)

    x = grid.x_nodes
    hx = grid.h_x
    J = x.size
    hu = grid.h_logphi / cfg.u_refine
    F = model.F(x)
    y_pos = np.log(grid.positive_phi())
    y_lo, y_hi = y_pos[0], y_pos[-1]
    margin = cfg.band_margin * hu

    u0 = F.min() - y_hi - margin - hu
    klo = np.floor((F - y_hi - margin - u0) / hu + 1e-9).astype(np.int64)
    khi = np.ceil((F - y_lo + margin - u0) / hu - 1e-9).astype(np.int64)
    counts = khi - klo + 1
    offset = np.concatenate([[0], np.cumsum(counts)])
    n = int(offset[-1])
    jj = np.repeat(np.arange(J), counts)
    kk = klo[jj] + np.arange(n) - offset[jj]
    u = u0 + kk * hu
    phi = np.exp(F[jj] - u)

    sig2, mu, g1, cscale = column_coefficients(model, mode, x, lam_dyn)
    psi = obstacle(model, mode, phi)
    if detection:
        cost = phi - lam_cost / model.cost_c
        drift_u = g1[jj] - lam_dyn - lam_dyn / phi
        discount = lam_cost
    else:
        cost = (1.0 + phi) * cscale[jj]
        drift_u = g1[jj]
        discount = 0.0

    # band edges: low u (large phi) always stops; high u (small phi) stops in
    # testing and is an outflow edge in detection
    forced = kk == klo[jj]
    if not detection:
        forced |= kk == khi[jj]

    prob = CanonicalProblem(mode, u0, hu, x, F, klo, khi, offset, kk, jj, phi,
                            psi, cost, forced, None, None)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    ids = np.arange(n)
    interior = (jj > 0) & (jj < J - 1)
    i_in = ids[interior]
    jin, kin = jj[i_in], kk[i_in]

    D = 0.5 * sig2 / hx ** 2
    central = np.abs(mu) * hx <= sig2
    cp = np.where(central, D + mu / (2 * hx), D + np.maximum(mu, 0) / hx)
    cm = np.where(central, D - mu / (2 * hx), D + np.maximum(-mu, 0) / hx)
    a = drift_u[i_in]
    up = np.maximum(a, 0) / hu
    dn = np.maximum(-a, 0) / hu

    add(i_in, i_in, cp[jin] + cm[jin] + up + dn + discount)
    add(i_in, prob.index(kin, jin + 1), -cp[jin])
    add(i_in, prob.index(kin, jin - 1), -cm[jin])
    add(i_in, prob.index(kin + 1, jin), -up)
    add(i_in, prob.index(kin - 1, jin), -dn)

    # reflection at the x-edges: copy the neighbouring column at equal phi
    for edge, nb in ((0, 1), (J - 1, J - 2)):
        i_e = ids[jj == edge]
        pos = (u[i_e] + F[nb] - F[edge] - u0) / hu
        kf = np.floor(pos).astype(np.int64)
        w = pos - kf
        add(i_e, i_e, np.ones(i_e.size))
        add(i_e, prob.index(kf, np.full(i_e.size, nb)), -(1 - w))
        add(i_e, prob.index(kf + 1, np.full(i_e.size, nb)), -w)
        cost[i_e] = 0.0

    A = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(n, n))
    A.sum_duplicates()
    prob.A = A
    prob.cost = cost
    prob.row_scale = np.maximum(np.abs(A.diagonal()), 1.0)
    return prob
