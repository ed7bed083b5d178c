"""Solve configuration and the (phi, x) output grid."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..model import DiffusionModel

MODES = ("testing", "testing-timechanged", "detection")


class ConfigError(ValueError):
    """Inconsistent grid or solver settings."""


@dataclass(frozen=True)
class SolverConfig:
    n_phi: int = 257
    n_x: int = 257
    phi_range: tuple[float, float] = (1e-3, 1e3)
    x_range: tuple[float, float] | None = None   # None: the model's x_domain
    method: str = "policy"                         # "policy" or "psor"
    tol_solve: float = 1e-10
    max_iter: int = 500
    psor_max_sweeps: int = 200_000
    omega: float = 1.0
    u_refine: int = 2          # canonical-grid u spacing = h_logphi / u_refine
    band_margin: int = 6       # extra canonical cells beyond the phi range

    def to_json(self) -> dict:
        out = asdict(self)
        out["phi_range"] = list(self.phi_range)
        out["x_range"] = None if self.x_range is None else list(self.x_range)
        return out


@dataclass(frozen=True)
class Grid2D:
    """Tensor grid: geometric in phi (plus phi = 0 in testing modes), uniform in x."""

    phi_nodes: np.ndarray
    x_nodes: np.ndarray
    h_logphi: float
    h_x: float
    mode: str
    anchor: float              # b/a in testing modes, lam/c in detection
    config: SolverConfig = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.phi_nodes.size, self.x_nodes.size)

    @property
    def has_zero_row(self) -> bool:
        return self.phi_nodes[0] == 0.0

    @property
    def h_max(self) -> float:
        return max(self.h_logphi, self.h_x)

    def positive_phi(self) -> np.ndarray:
        return self.phi_nodes[1:] if self.has_zero_row else self.phi_nodes

    def to_json(self) -> dict:
        return {"mode": self.mode, "n_phi": int(self.phi_nodes.size),
                "n_x": int(self.x_nodes.size), "h_logphi": self.h_logphi,
                "h_x": self.h_x, "anchor": self.anchor,
                "phi_range": [float(self.positive_phi()[0]), float(self.phi_nodes[-1])],
                "x_range": [float(self.x_nodes[0]), float(self.x_nodes[-1])]}


def anchor_value(model: DiffusionModel, mode: str) -> float:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "detection":
        return model.lam / model.cost_c
    return model.cost_b / model.cost_a


def build_grid(config: SolverConfig, model: DiffusionModel, mode: str) -> Grid2D:
    anchor = anchor_value(model, mode)
    if config.n_phi < 16 or config.n_x < 16:
        raise ConfigError("need at least 16 nodes in each direction")
    phi_min, phi_max = map(float, config.phi_range)
    if not 0 < phi_min < phi_max:
        raise ConfigError(f"bad phi_range {config.phi_range}")
    if phi_max <= 20 * anchor:
        raise ConfigError(f"phi_max={phi_max} must exceed 20 x {anchor:g}")
    if phi_min >= anchor:
        raise ConfigError(f"phi_min={phi_min} must lie below {anchor:g}")
    x_lo, x_hi = model.x_domain if config.x_range is None else map(float, config.x_range)
    if not x_lo < x_hi:
        raise ConfigError(f"bad x_range {config.x_range}")
    if x_lo < model.x_domain[0] or x_hi > model.x_domain[1]:
        raise ConfigError(f"x_range {x_lo, x_hi} leaves the model domain {model.x_domain}")
    if config.method not in ("policy", "psor"):
        raise ConfigError(f"unknown method {config.method!r}")
    if config.tol_solve <= 0 or not 0 < config.omega < 2:
        raise ConfigError("tol_solve must be positive and omega in (0, 2)")

    logs = np.linspace(np.log(phi_min), np.log(phi_max), config.n_phi)
    phi = np.exp(logs)
    if mode != "detection":
        phi = np.concatenate([[0.0], phi])
    x = np.linspace(x_lo, x_hi, config.n_x)
    return Grid2D(phi_nodes=phi, x_nodes=x, h_logphi=float(logs[1] - logs[0]),
                  h_x=float(x[1] - x[0]), mode=mode, anchor=anchor, config=config)
