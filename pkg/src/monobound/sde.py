"""Path simulation for the posterior-odds process and its transforms.

All simulators share one Brownian increment stream per seed.  Normals come
from a counter-based Philox generator keyed by the seed; paths are grouped in
blocks of :data:`BLOCK` and block ``b`` uses the key's ``b``-th jump, so a
path's increments do not depend on how many other paths are requested.

Arrays in a :class:`PathBundle` have shape ``(n_steps + 1, n_paths)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import write_csv
from .model import DiffusionModel, ModelError

BLOCK = 256
RHO_FLOOR = 1e-8


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass
class PathBundle:
    times: np.ndarray
    phi: np.ndarray
    x: np.ndarray
    seed: int
    scheme: str
    dt: float
    extras: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.phi.shape[1]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def path(self, i: int) -> dict:
        out = {"t": self.times, "phi": self.phi[:, i], "x": self.x[:, i]}
        out.update({k: v[:, i] for k, v in self.extras.items()})
        return out

    def to_csv(self, directory, prefix: str = "path") -> list[Path]:
        """One CSV per path with columns t,phi,x followed by L,A,u when present."""
        directory = Path(directory)
        names = [k for k in ("L", "A", "u") if k in self.extras]
        width = len(str(max(self.n_paths - 1, 0)))
        files = []
        for i in range(self.n_paths):
            cols = [self.times, self.phi[:, i], self.x[:, i]] + [self.extras[k][:, i] for k in names]
            files.append(write_csv(directory / f"{prefix}_{i:0{width}d}.csv",
                                   ["t", "phi", "x"] + names, zip(*cols)))
        return files


def normals(seed: int, n_paths: int, n_steps: int, antithetic: bool = False) -> np.ndarray:
    """Standard normals of shape (n_steps, n_paths), reproducible per path.

    With ``antithetic`` the second half of the paths mirrors the first.
    """
    if n_paths < 1 or n_steps < 0:
        raise ValueError("need n_paths >= 1 and n_steps >= 0")
    base = (n_paths + 1) // 2 if antithetic else n_paths
    out = np.empty((n_steps, base))
    root = np.random.Philox(key=int(seed) % 2 ** 64)
    for b, start in enumerate(range(0, base, BLOCK)):
        gen = np.random.Generator(root.jumped(b) if b else np.random.Philox(key=int(seed) % 2 ** 64))
        width = min(BLOCK, base - start)
        out[:, start:start + width] = gen.standard_normal((n_steps, BLOCK))[:, :width]
    if antithetic:
        out = np.concatenate([out, -out[:, : n_paths - base]], axis=1)
    return out


def _steps(horizon: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if horizon < dt * (1 - 1e-12):
        raise ValueError("horizon must be at least dt")
    return int(round(horizon / dt))


def _increments(seed, n_paths, n_steps, dt, antithetic, dB):
    if dB is not None:
        dB = np.asarray(dB, dtype=float)
        if dB.shape != (n_steps, n_paths):
            raise ValueError(f"dB must have shape {(n_steps, n_paths)}")
        return dB
    return np.sqrt(dt) * normals(seed, n_paths, n_steps, antithetic)


def _euler_x(model: DiffusionModel, x0, dB, dt):
    """Euler scheme for dX = mu0 dt + sigma dB, projected onto x_domain."""
    lo, hi = model.x_domain
    n_steps, n_paths = dB.shape
    X = np.empty((n_steps + 1, n_paths))
    X[0] = x0
    for k in range(n_steps):
        xk = X[k]
        X[k + 1] = np.clip(xk + model.mu0(xk) * dt + model.sigma(xk) * dB[k], lo, hi)
        if not np.all(np.isfinite(X[k + 1])):
            raise SimulationError("non-finite X", k + 1)
    return X


def _log_likelihood(model, X, dB, dt):
    """log L_n = sum_k rho(X_k) dB_k - rho(X_k)^2 dt / 2."""
    r = model.rho(X[:-1])
    inc = r * dB - 0.5 * r * r * dt
    logL = np.vstack([np.zeros((1, X.shape[1])), np.cumsum(inc, axis=0)])
    bad = ~np.isfinite(logL)
    if bad.any():
        raise SimulationError("non-finite likelihood", int(np.argwhere(bad)[0, 0]))
    return logL


def _clock(model, X, dt):
    """A_n = int_0^{t_n} rho^2(X_s) ds by the trapezoid rule."""
    r2 = model.rho(X) ** 2
    return np.vstack([np.zeros((1, X.shape[1])),
                      np.cumsum(0.5 * (r2[1:] + r2[:-1]) * dt, axis=0)])


def simulate_st(model: DiffusionModel, phi0: float, x0: float, horizon: float, dt: float,
                seed: int, n_paths: int = 1, antithetic: bool = False,
                extras: bool = True, dB=None) -> PathBundle:
    """(Phi, X) of the testing problem under the null measure.

    X: Euler; Phi = phi0 * L with L the exact exponent evaluated on the
    Euler path, so Phi >= 0 always and Phi = 0 stays at 0.
    """
    if phi0 < 0:
        raise ValueError("phi0 must be non-negative")
    model.check_domain(x0)
    n = _steps(horizon, dt)
    dB = _increments(seed, n_paths, n, dt, antithetic, dB)
    X = _euler_x(model, x0, dB, dt)
    logL = _log_likelihood(model, X, dB, dt)
    L = np.exp(logL)
    times = dt * np.arange(n + 1)
    ext = {"L": L, "A": _clock(model, X, dt)} if extras else {}
    return PathBundle(times, phi0 * L, X, int(seed), "euler", dt, ext,
                      {"model": model.name, "kind": "testing", "phi0": phi0, "x0": x0})


def simulate_qd(model: DiffusionModel, phi0: float, x0: float, horizon: float, dt: float,
                seed: int, lambda_dyn: float | None = None, n_paths: int = 1,
                antithetic: bool = False, extras: bool = True, dB=None) -> PathBundle:
    """(Phi, X) of the detection problem under the no-change measure.

    Phi_t = L_t (e^{lam t} phi0 + int_0^t lam e^{lam (t-s)} / L_s ds); the
    integral is advanced one step at a time with the exact exponential
    weight and a trapezoid average of 1/L, which is exact when rho = 0.
    """
    lam = model.lam if lambda_dyn is None else float(lambda_dyn)
    if not lam > 0:
        raise ValueError("lambda_dyn must be positive")
    if phi0 < 0:
        raise ValueError("phi0 must be non-negative")
    model.check_domain(x0)
    n = _steps(horizon, dt)
    dB = _increments(seed, n_paths, n, dt, antithetic, dB)
    X = _euler_x(model, x0, dB, dt)
    L = np.exp(_log_likelihood(model, X, dB, dt))
    inv = 1.0 / L
    grow, gain = np.exp(lam * dt), np.expm1(lam * dt)
    psi = np.empty_like(L)          # Phi / L
    psi[0] = phi0
    for k in range(n):
        psi[k + 1] = grow * psi[k] + gain * 0.5 * (inv[k] + inv[k + 1])
    times = dt * np.arange(n + 1)
    ext = {"L": L, "A": _clock(model, X, dt)} if extras else {}
    return PathBundle(times, L * psi, X, int(seed), "exact-exponent", dt, ext,
                      {"model": model.name, "kind": "detection", "phi0": phi0, "x0": x0,
                       "lambda_dyn": lam})


def time_change(path: PathBundle, model: DiffusionModel, horizon: float | None = None,
                dt: float | None = None) -> PathBundle:
    """Re-clock (Phi, X) by the inverse of A_t = int rho^2(X_s) ds.

    The new clock is uniform with step ``dt`` (default: the path's step) up
    to ``horizon`` (default: the smallest terminal A over the paths).  Values
    are interpolated linearly in t (log-linearly for Phi).  If some path's
    clock does not reach ``horizon`` the result is truncated and
    ``meta["truncated"]`` is set.
    """
    A = path.extras.get("A")
    if A is None:
        A = _clock(model, path.x, path.dt)
    dt = path.dt if dt is None else float(dt)
    reach = float(A[-1].min())
    meta = dict(path.meta, time_changed=True, truncated=False)
    if horizon is None:
        horizon = reach
    elif horizon > reach * (1 + 1e-12):
        meta["truncated"] = True
        meta["warning"] = f"clock reaches only {reach:.6g} < requested {horizon:.6g}"
        horizon = reach
    n = int(np.floor(horizon / dt + 1e-9))
    s = dt * np.arange(n + 1)
    T = np.empty((n + 1, path.n_paths))
    Xh = np.empty_like(T)
    Ph = np.empty_like(T)
    with np.errstate(divide="ignore"):
        logphi = np.log(path.phi)
    for i in range(path.n_paths):
        a = A[:, i]
        if np.any(np.diff(a) <= 0):
            raise SimulationError("clock A is not strictly increasing", int(np.argmin(np.diff(a))))
        T[:, i] = np.interp(s, a, path.times)
        Xh[:, i] = np.interp(T[:, i], path.times, path.x[:, i])
        if np.all(np.isfinite(logphi[:, i])):
            Ph[:, i] = np.exp(np.interp(T[:, i], path.times, logphi[:, i]))
        else:
            Ph[:, i] = np.interp(T[:, i], path.times, path.phi[:, i])
    return PathBundle(s, Ph, Xh, path.seed, path.scheme, dt, {"T": T}, meta)


def _check_rho(model):
    if np.min(np.abs(model.rho(model.sample_points(2001)))) < RHO_FLOOR:
        raise ModelError(f"{model.name}: |rho| < {RHO_FLOOR} somewhere on {model.x_domain}")


def simulate_hat(model: DiffusionModel, phi0: float, x0: float, horizon: float, dt: float,
                 seed: int, n_paths: int = 1, antithetic: bool = False, dB=None) -> PathBundle:
    """Time-changed pair: Phi_hat a geometric Brownian motion and
    dX_hat = (mu0/rho^2) dt + (sigma/rho) dB.

    Phi_hat uses the exact exponent.  X_hat is advanced in the coordinate
    Y = F(X_hat), where the noise coefficient is 1:
    dY = (G1/rho^2 - 1/2) dt + dB.  An Euler step in Y is monotone in the
    starting point, so paths from ordered starts stay ordered.
    """
    _check_rho(model)
    if phi0 < 0:
        raise ValueError("phi0 must be non-negative")
    model.check_domain(x0)
    n = _steps(horizon, dt)
    dB = _increments(seed, n_paths, n, dt, antithetic, dB)
    times = dt * np.arange(n + 1)
    B = np.vstack([np.zeros((1, n_paths)), np.cumsum(dB, axis=0)])
    phi = phi0 * np.exp(B - 0.5 * times[:, None])

    y_lo, y_hi = sorted(map(float, model.F(np.array(model.x_domain))))
    Y = np.empty((n + 1, n_paths))
    Y[0] = model.F(np.asarray(x0, dtype=float))
    for k in range(n):
        xk = model.F_inverse(Y[k])
        drift = model.G1(xk) / model.rho(xk) ** 2 - 0.5
        Y[k + 1] = np.clip(Y[k] + drift * dt + dB[k], y_lo, y_hi)
        if not np.all(np.isfinite(Y[k + 1])):
            raise SimulationError("non-finite X_hat", k + 1)
    return PathBundle(times, phi, model.F_inverse(Y), int(seed), "exact-exponent", dt, {},
                      {"model": model.name, "kind": "time-changed", "phi0": phi0, "x0": x0})


def simulate_canonical(model: DiffusionModel, u0: float, x0: float, horizon: float,
                       dt: float, seed: int, lambda_dyn: float | None = None,
                       n_paths: int = 1, dB=None) -> PathBundle:
    """Canonical pair (U, X): X by Euler, U by dU = a(U, X) dt.

    The bundle's ``phi`` is a coupled detection path started at
    phi0 = exp(F(x0) - u0) with the same increments, and
    ``extras["u_check"] = F(X) - log(Phi)`` for comparison with ``extras["u"]``.
    """
    lam = model.lam if lambda_dyn is None else float(lambda_dyn)
    model.check_domain(x0)
    n = _steps(horizon, dt)
    dB = _increments(seed, n_paths, n, dt, False, dB)
    phi0 = float(np.exp(model.F(np.asarray(x0, dtype=float)) - u0))
    qd = simulate_qd(model, phi0, x0, horizon, dt, seed, lam, n_paths, dB=dB)
    X = qd.x
    g1 = model.G1(X)
    eF = np.exp(-model.F(X))
    U = np.empty_like(X)
    U[0] = u0
    for k in range(n):
        a = g1[k] - lam - lam * np.exp(U[k]) * eF[k]
        U[k + 1] = U[k] + a * dt
        if not np.all(np.isfinite(U[k + 1])):
            raise SimulationError("non-finite U", k + 1)
    ext = {"L": qd.extras["L"], "A": qd.extras["A"], "u": U,
           "u_check": model.F(X) - np.log(qd.phi)}
    return PathBundle(qd.times, qd.phi, X, int(seed), "euler", dt, ext,
                      {"model": model.name, "kind": "canonical", "u0": u0, "x0": x0,
                       "lambda_dyn": lam})
