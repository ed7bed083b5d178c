"""Diffusion models for the sequential-testing and quickest-detection problems.

The observed process solves ``dX = mu(X) dt + sigma(X) dB`` where the drift
is ``mu0`` before (or under the null) and ``mu1`` after the change (or under
the alternative).  Everything the solvers need is derived from the triple
``(mu0, mu1, sigma)`` plus the cost parameters:

* ``rho = (mu1 - mu0) / sigma``, the signal-to-noise ratio;
* ``F(x) = int_0^x rho/sigma``, which straightens the noise of ``log Phi``;
* ``f``, ``g`` and ``a(u, x) = f(x) - exp(u) g(x)``, the drift of the
  canonical coordinate ``U = F(X) - log Phi`` in the detection problem.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import sympy as sp
from scipy.interpolate import CubicSpline

from .coefficients import I_SYM, X, Coefficient, ScaleChart

__all__ = [
    "DiffusionModel", "ModelCatalogEntry", "ModelError", "DomainError",
    "rho", "F_integral", "canonical_coefficients", "canonical_drift",
    "phi_from_pi", "pi_from_phi", "full_value", "scale_transform", "mirror",
    "catalog", "get_model", "load_model", "model_from_spec", "CATALOG_ENV",
]

CATALOG_ENV = "MONOBOUND_CATALOG"

DEFAULT_DOMAIN = (-8.0, 8.0)

# Gauss-Legendre panels used for F and the scale function
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)
_DENSE_PANELS = 4000


class ModelError(ValueError):
    """Model violates a standing assumption (sigma > 0, one-signed mu1 - mu0, ...)."""


class DomainError(ValueError):
    """Evaluation point lies outside the truncated state space."""


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    mu0: Coefficient
    mu1: Coefficient
    sigma: Coefficient
    lam: float = 1.0
    cost_a: float = 1.0
    cost_b: float = 1.0
    cost_c: float = 1.0
    x_domain: tuple[float, float] = DEFAULT_DOMAIN
    name: str = "model"
    spec: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        for attr in ("mu0", "mu1", "sigma"):
            object.__setattr__(self, attr, Coefficient.coerce(getattr(self, attr)))
        lo, hi = map(float, self.x_domain)
        if not lo < hi:
            raise ModelError(f"empty x_domain {self.x_domain}")
        object.__setattr__(self, "x_domain", (lo, hi))
        for attr in ("lam", "cost_a", "cost_b", "cost_c"):
            if not getattr(self, attr) > 0:
                raise ModelError(f"{attr} must be positive")

    # sanity -----------------------------------------------------------------
    def validate(self, n: int = 2001) -> "DiffusionModel":
        """Check the standing assumptions by dense sampling; returns self."""
        xs = self.sample_points(n)
        sig = self.sigma(xs)
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise ModelError(f"{self.name}: sigma must be positive and finite on {self.x_domain}")
        gap = self.mu1(xs) - self.mu0(xs)
        if not np.all(np.isfinite(gap)):
            raise ModelError(f"{self.name}: drifts are not finite on {self.x_domain}")
        if not (np.all(gap > 0) or np.all(gap < 0)):
            raise ModelError(f"{self.name}: mu1 - mu0 must have one sign on {self.x_domain}")
        for c in (self.mu0, self.mu1, self.sigma):
            if not np.all(np.isfinite(c.derivative(xs, 1))):
                raise ModelError(f"{self.name}: non-finite derivative on {self.x_domain}")
        return self

    def sample_points(self, n: int = 1001) -> np.ndarray:
        return np.linspace(*self.x_domain, n)

    def check_domain(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_domain
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            raise DomainError(f"x outside {self.x_domain}")
        return x

    def with_params(self, **changes) -> "DiffusionModel":
        return dataclasses.replace(self, **changes)

    @property
    def mu1_gt_mu0(self) -> bool:
        mid = np.array(0.5 * sum(self.x_domain))
        return bool(self.mu1(mid) > self.mu0(mid))

    # derived coefficients ---------------------------------------------------
    @cached_property
    def rho(self) -> Coefficient:
        return (self.mu1 - self.mu0) / self.sigma

    @cached_property
    def rho_over_sigma(self) -> Coefficient:
        """F' = rho / sigma = (mu1 - mu0) / sigma^2."""
        return (self.mu1 - self.mu0) / (self.sigma * self.sigma)

    @cached_property
    def G1(self) -> Coefficient:
        """(1/2)(sigma^2 F'' + (mu0 + mu1) F'), the left side of the trap equation."""
        fp = self.rho_over_sigma
        return (self.sigma * self.sigma * fp.diff(1) + (self.mu0 + self.mu1) * fp) / 2

    def f_coefficient(self, lam: float | None = None) -> Coefficient:
        lam = self.lam if lam is None else lam
        return self.G1 - lam

    @cached_property
    def _F_table(self):
        lo, hi = self.x_domain
        # the dense grid contains 0 when the domain does, so F(0) = 0 exactly
        knots = np.linspace(lo, hi, _DENSE_PANELS + 1)
        if lo < 0 < hi:
            knots = np.union1d(knots, [0.0])
        cum = _cumulative_integral(self.rho_over_sigma, knots)
        anchor = 0.0 if lo <= 0 <= hi else lo
        cum = cum - np.interp(anchor, knots, cum)
        if lo <= 0 <= hi:
            cum[np.flatnonzero(knots == 0.0)] = 0.0
        return knots, cum, CubicSpline(knots, cum)

    def F(self, x) -> np.ndarray:
        """F from a dense cached table (cubic interpolation); solver use."""
        x = np.asarray(x, dtype=float)
        return self._F_table[2](x)

    def F_inverse(self, y) -> np.ndarray:
        """x with F(x) = y, by monotone interpolation of the dense table."""
        knots, cum, _ = self._F_table
        if cum[-1] < cum[0]:
            knots, cum = knots[::-1], cum[::-1]
        return np.interp(y, cum, knots)

    def F_derivative(self, x, n: int) -> np.ndarray:
        """n-th derivative of F; n >= 1 uses the exact derivatives of rho/sigma."""
        if n == 0:
            return self.F(x)
        return self.rho_over_sigma.derivative(x, n - 1)

    def g_derivative(self, x, n: int, lam: float | None = None) -> np.ndarray:
        """n-th derivative of g = lam * exp(-F)."""
        lam = self.lam if lam is None else lam
        x = np.asarray(x, dtype=float)
        base = lam * np.exp(-self.F(x))
        if n == 0:
            return base
        derivs = [self.F_derivative(x, k) for k in range(1, n + 1)]
        return base * _exp_neg_F_derivative_polynomial(n)(*derivs)

    def to_json(self) -> dict:
        out = {"name": self.name, "lambda": self.lam, "cost_a": self.cost_a,
               "cost_b": self.cost_b, "cost_c": self.cost_c,
               "x_domain": list(self.x_domain)}
        if self.spec is not None:
            out["spec"] = self.spec
        else:
            out["coefficients"] = {k: str(getattr(self, k).expr)
                                   for k in ("mu0", "mu1", "sigma")}
        return out


_POLY_CACHE: dict[int, object] = {}


def _exp_neg_F_derivative_polynomial(n):
    """Polynomial P_n(F', ..., F^(n)) with (e^{-F})^(n) = e^{-F} P_n."""
    if n not in _POLY_CACHE:
        Ff = sp.Function("F")(X)
        expr = sp.diff(sp.exp(-Ff), X, n) * sp.exp(Ff)
        syms = sp.symbols(f"d1:{n + 1}")
        for k in range(n, 0, -1):
            expr = expr.subs(sp.Derivative(Ff, (X, k)), syms[k - 1])
        _POLY_CACHE[n] = sp.lambdify(syms, sp.expand(sp.simplify(expr)), "numpy")
    return _POLY_CACHE[n]


def _panel_integrals(coef: Coefficient, knots: np.ndarray) -> np.ndarray:
    a, b = knots[:-1], knots[1:]
    half = 0.5 * (b - a)
    pts = 0.5 * (a + b)[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = coef(pts.ravel()).reshape(pts.shape)
    return half * (vals @ _GL_WEIGHTS)


def _cumulative_integral(coef: Coefficient, knots: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(_panel_integrals(coef, knots))])


# ---------------------------------------------------------------------------
# operations

def rho(model: DiffusionModel, x):
    """Signal-to-noise ratio (mu1 - mu0)/sigma at x."""
    x = model.check_domain(x)
    return model.rho(x)


def F_integral(model: DiffusionModel, x):
    """F(x) = int_0^x rho/sigma dy by composite 10-point Gauss-Legendre panels.

    Panels are no wider than the dense cache spacing, so the result is accurate
    to rounding for analytic coefficients.  F(0) = 0 exactly.
    """
    x = model.check_domain(x)
    flat = np.atleast_1d(x).ravel()
    lo, hi = min(flat.min(), 0.0), max(flat.max(), 0.0)
    h = (model.x_domain[1] - model.x_domain[0]) / _DENSE_PANELS
    n = max(1, int(np.ceil((hi - lo) / h)))
    knots = np.union1d(np.union1d(np.linspace(lo, hi, n + 1), flat), [0.0])
    cum = _cumulative_integral(model.rho_over_sigma, knots)
    cum -= cum[np.searchsorted(knots, 0.0)]
    out = cum[np.searchsorted(knots, flat)]
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def canonical_coefficients(model: DiffusionModel, x, lam: float | None = None):
    """(f, g) of the canonical drift; g > 0 always."""
    x = model.check_domain(x)
    lam = model.lam if lam is None else lam
    f = model.G1(x) - lam
    g = lam * np.exp(-model.F(x))
    return f, g


def canonical_drift(model: DiffusionModel, u, x, lam: float | None = None):
    """a(u, x) = f(x) - exp(u) g(x), the drift of U = F(X) - log Phi."""
    f, g = canonical_coefficients(model, x, lam)
    return f - np.exp(u) * g


def phi_from_pi(pi):
    """Posterior odds pi/(1-pi)."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or np.any(pi >= 1):
        raise DomainError("pi must lie in [0, 1)")
    out = pi / (1.0 - pi)
    return out if out.ndim else float(out)


def pi_from_phi(phi):
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise DomainError("phi must be non-negative")
    out = phi / (1.0 + phi)
    return out if out.ndim else float(out)


def full_value(mode: str, pi, vhat, model: DiffusionModel | None = None):
    """Undo the change of measure: V = (1-pi) Vhat, or (1-pi)(1 + c Vhat)."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or np.any(pi >= 1):
        raise DomainError("pi must lie in [0, 1)")
    if mode == "testing":
        out = (1.0 - pi) * vhat
    elif mode == "detection":
        c = 1.0 if model is None else model.cost_c
        out = (1.0 - pi) * (1.0 + c * np.asarray(vhat, dtype=float))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def mirror(model: DiffusionModel) -> DiffusionModel:
    """Observe -X instead of X: mu_i(x) -> -mu_i(-x), sigma(x) -> sigma(-x)."""
    lo, hi = model.x_domain
    return dataclasses.replace(
        model,
        mu0=-(model.mu0.reflected()),
        mu1=-(model.mu1.reflected()),
        sigma=model.sigma.reflected(),
        x_domain=(-hi, -lo),
        name=model.name + "-mirror",
        spec=None if model.spec is None else {"mirror": model.spec},
    )


def scale_transform(model: DiffusionModel) -> DiffusionModel:
    """Model of the observed process S(X), S the scale function with S(0)=0.

    New coefficients: mu0 = 0, mu1(s) = ((mu1-mu0) S')(x), sigma(s) = (sigma S')(x)
    with x = S^{-1}(s).  The signal-to-noise ratio is unchanged pointwise.
    """
    lo, hi = model.x_domain
    two_mu0 = 2 * model.mu0 / (model.sigma * model.sigma)
    if model.mu0.symbolic and model.mu0.chart is None and model.mu0.expr == 0:
        return dataclasses.replace(model, name=model.name + "-scaled")
    knots = np.linspace(lo, hi, _DENSE_PANELS + 1)
    if lo < 0 < hi:
        knots = np.union1d(knots, [0.0])
    anchor = 0.0 if lo <= 0 <= hi else lo
    inner = _cumulative_integral(two_mu0, knots)
    inner -= np.interp(anchor, knots, inner)
    inner_spline = CubicSpline(knots, inner)

    def s_prime(x):
        return np.exp(-inner_spline(x))

    s_vals = _cumulative_integral(Coefficient(func=s_prime), knots)
    s_vals -= np.interp(anchor, knots, s_vals)
    s_spline = CubicSpline(knots, s_vals)

    def x_of_s(s):
        s = np.asarray(s, dtype=float)
        x = np.interp(s, s_vals, knots)
        for _ in range(4):
            x = np.clip(x - (s_spline(x) - s) / s_prime(x), lo, hi)
        return x

    symbolic = all(c.symbolic and c.chart is None
                   for c in (model.mu0, model.mu1, model.sigma))
    if symbolic:
        chart = ScaleChart(two_mu0.expr, x_of_s, inner_spline)
        sprime = sp.exp(-I_SYM)
        mu1 = Coefficient(expr=(model.mu1.expr - model.mu0.expr) * sprime, chart=chart)
        sigma = Coefficient(expr=model.sigma.expr * sprime, chart=chart)
    else:
        gap = model.mu1 - model.mu0
        mu1 = Coefficient(func=lambda s: (gap(x_of_s(s)) * s_prime(x_of_s(s))))
        sigma = Coefficient(func=lambda s: model.sigma(x_of_s(s)) * s_prime(x_of_s(s)))
    return dataclasses.replace(
        model, mu0=Coefficient.constant(0.0), mu1=mu1, sigma=sigma,
        x_domain=(float(s_spline(lo)), float(s_spline(hi))),
        name=model.name + "-scaled", spec=None,
    )


# ---------------------------------------------------------------------------
# model files and the built-in catalog
#
# Coefficient grammar (JSON):
#   number                      constant
#   "x"                         identity
#   {"poly": [c0, c1, ...]}     c0 + c1 x + c2 x^2 + ...
#   {"exp":  [a, r, s]}         a * exp(r x + s)
#   {"tanh": [a, r, s]}         a * tanh(r x + s)
#   {"sum":  [e1, e2, ...]}     e1 + e2 + ...
#   {"prod": [e1, e2, ...]}     e1 * e2 * ...
#   {"div":  [e1, e2]}          e1 / e2
#   {"sqrt": e}                 sqrt(e)
#   {"neg":  e}                 -e

def _parse_expr(node) -> sp.Expr:
    if isinstance(node, bool):
        raise ModelError("booleans are not coefficients")
    if isinstance(node, (int, float)):
        return sp.nsimplify(node) if float(node).is_integer() else sp.Float(node)
    if node == "x":
        return X
    if not isinstance(node, dict) or len(node) != 1:
        raise ModelError(f"malformed coefficient node: {node!r}")
    (op, arg), = node.items()
    if op == "poly":
        if not isinstance(arg, list) or not arg:
            raise ModelError("poly needs a non-empty coefficient list")
        return sum((_parse_expr(c) * X ** k for k, c in enumerate(arg)), sp.Integer(0))
    if op in ("exp", "tanh"):
        if not isinstance(arg, list) or len(arg) != 3:
            raise ModelError(f"{op} takes [amplitude, rate, shift]")
        a, r, s = (_parse_expr(v) for v in arg)
        fn = sp.exp if op == "exp" else sp.tanh
        return a * fn(r * X + s)
    if op in ("sum", "prod"):
        if not isinstance(arg, list) or not arg:
            raise ModelError(f"{op} needs a non-empty list")
        terms = [_parse_expr(t) for t in arg]
        return sp.Add(*terms) if op == "sum" else sp.Mul(*terms)
    if op == "div":
        if not isinstance(arg, list) or len(arg) != 2:
            raise ModelError("div takes [numerator, denominator]")
        return _parse_expr(arg[0]) / _parse_expr(arg[1])
    if op == "sqrt":
        return sp.sqrt(_parse_expr(arg))
    if op == "neg":
        return -_parse_expr(arg)
    raise ModelError(f"unknown coefficient operator {op!r}")


_PARAM_KEYS = {"lambda": "lam", "cost_a": "cost_a", "cost_b": "cost_b", "cost_c": "cost_c"}


def model_from_spec(spec: dict) -> DiffusionModel:
    """Build a model from a parsed model-file dictionary."""
    if not isinstance(spec, dict):
        raise ModelError("model spec must be a JSON object")
    params = {}
    for key, attr in _PARAM_KEYS.items():
        if key in spec:
            params[attr] = float(spec[key])
    if "x_domain" in spec:
        dom = spec["x_domain"]
        if not (isinstance(dom, list) and len(dom) == 2):
            raise ModelError("x_domain must be [x_min, x_max]")
        params["x_domain"] = (float(dom[0]), float(dom[1]))
    if "builtin" in spec:
        base = get_model(spec["builtin"])
        if "name" in spec:
            params["name"] = str(spec["name"])
        return base.with_params(**params).validate()
    missing = [k for k in ("mu0", "mu1", "sigma") if k not in spec]
    if missing:
        raise ModelError(f"model spec lacks {', '.join(missing)}")
    coefs = {k: Coefficient(expr=_parse_expr(spec[k])) for k in ("mu0", "mu1", "sigma")}
    model = DiffusionModel(name=str(spec.get("name", "model")), spec=spec, **coefs, **params)
    return model.validate()


def load_model(ref: str | os.PathLike) -> DiffusionModel:
    """Resolve a catalog name or a JSON model file."""
    ref_str = str(ref)
    try:
        return get_model(ref_str)
    except KeyError:
        pass
    path = Path(ref_str)
    if not path.is_file():
        raise ModelError(f"{ref_str!r} is neither a catalog model nor a file")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_spec(spec)


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    model: DiffusionModel
    expected_traits: dict


def _builtin_specs() -> dict[str, dict]:
    two = {"poly": [2]}
    trap_var = {"prod": [two, {"sum": [1, {"exp": [1, -1, 0]}]}]}
    dec_mu0 = {"tanh": [-0.2, 1, 0]}
    dec_sigma = {"sum": [1, {"tanh": [0.2, 0.5, 0]}]}
    return {
        "const-rho": {"mu0": 0, "mu1": 1, "sigma": 1},
        # mu1 = sigma^2 = 2 lam (1 + e^{-x}) with lam = 1: rho/sigma = 1, F(x) = x
        "paper-trap": {"mu0": 0, "mu1": trap_var, "sigma": {"sqrt": trap_var},
                       "lambda": 1.0, "x_domain": [-4, 8]},
        "mono-rho-tanh": {"mu0": 0, "mu1": {"sum": [1, {"tanh": [0.5, 1, 0]}]}, "sigma": 1},
        # rho = 1.2 - 0.5 tanh x, with state-dependent drift and volatility
        "mono-rho-dec": {
            "mu0": dec_mu0,
            "mu1": {"sum": [dec_mu0, {"prod": [dec_sigma, {"sum": [1.2, {"tanh": [-0.5, 1, 0]}]}]}]},
            "sigma": dec_sigma,
        },
    }


# testing costs wide enough for a well-resolved continuation band
_BUILTIN_COSTS = {"cost_a": 5.0, "cost_b": 5.0}

_TRAITS = {
    "const-rho": {"rho_monotone": "constant", "mu1_gt_mu0": True, "has_trap": False},
    "paper-trap": {"rho_monotone": "down", "mu1_gt_mu0": True, "has_trap": True},
    "mono-rho-tanh": {"rho_monotone": "up", "mu1_gt_mu0": True, "has_trap": False},
    "mono-rho-dec": {"rho_monotone": "down", "mu1_gt_mu0": True, "has_trap": False},
}

_CATALOG: dict[str, ModelCatalogEntry] = {}


def catalog() -> dict[str, ModelCatalogEntry]:
    """Built-in models, plus those listed in the file named by $MONOBOUND_CATALOG."""
    if not _CATALOG:
        for name, spec in _builtin_specs().items():
            model = model_from_spec({**_BUILTIN_COSTS, **spec, "name": name})
            _CATALOG[name] = ModelCatalogEntry(name, model, dict(_TRAITS[name]))
            traits = dict(_TRAITS[name])
            traits["mu1_gt_mu0"] = not traits["mu1_gt_mu0"]
            mname = name + "-mirror"
            _CATALOG[mname] = ModelCatalogEntry(mname, mirror(model), traits)
    entries = dict(_CATALOG)
    extra = os.environ.get(CATALOG_ENV)
    if extra:
        data = json.loads(Path(extra).read_text())
        for name, spec in data.items():
            entries[name] = ModelCatalogEntry(
                name, model_from_spec(dict(spec, name=name)), dict(spec.get("traits", {})))
    return entries


def get_model(name: str) -> DiffusionModel:
    entries = catalog()
    if name not in entries:
        raise KeyError(name)
    return entries[name].model
