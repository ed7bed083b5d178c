"""Command-line experiment runner.

Every invocation creates one run directory holding its artifacts and a
``manifest.json`` (config echo, file hashes, timings, verdicts).  Artifacts
never contain timings, so fixed seeds and configs reproduce them byte for
byte.

Exit status: 0 when every check passes, 1 when a check fails, 2 on a
configuration error and 3 when a pipeline stage raises.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import datetime as _dt
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, conjecture, sde, trap
from .io import read_csv, sha256, write_csv, write_json
from .model import ModelError, load_model
from .solver import (ConfigError, SolverConfig, compare_with_oracle, extract_boundaries,
                     solve_1d_constant_rho, solve_qd, solve_st, solve_st_timechanged)

COMMANDS = ("simulate", "solve-st", "solve-st-tc", "solve-qd", "boundaries", "verify-gs",
            "trap-scan", "hormander", "oracle-1d", "compare")
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2, 3


class CompareError(ValueError):
    """Runs cannot be compared node-wise."""


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.exc = exc


# ---------------------------------------------------------------- config --

@dataclasses.dataclass
class RunConfig:
    command: str
    model: str = "const-rho"
    mode: str | None = None
    grid: tuple[int, int] = (257, 257)
    phi_range: tuple[float, float] | None = None
    x_range: tuple[float, float] | None = None
    seed: int = 0
    eps_list: tuple[float, ...] | None = None
    out: str = "runs"
    name: str | None = None
    tol: float = 1e-10
    method: str = "policy"
    # simulate
    scheme: str = "st"
    phi0: float = 1.0
    x0: float = 0.0
    u0: float = 0.0
    horizon: float = 1.0
    dt: float = 0.01
    n_paths: int = 10
    # hormander
    u_range: tuple[float, float] = (-2.0, 2.0)
    n_max: int = 6
    # verify-gs
    budget: float = conjecture.VIOLATION_BUDGET
    # compare
    runs: tuple[str, ...] = ()
    max_value_diff: float | None = None

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        for key in ("tol", "dt", "horizon", "budget"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if min(self.grid) < 16:
            raise ConfigError("grid needs at least 16 nodes per axis")
        if self.n_paths < 1 or self.n_max < 1:
            raise ConfigError("n_paths and n_max must be at least 1")
        if self.eps_list is not None and any(e < 0 for e in self.eps_list):
            raise ConfigError("eps values must be non-negative")
        if self.command == "compare" and len(self.runs) != 2:
            raise ConfigError("compare needs exactly two runs")
        return self

    def solver_config(self) -> SolverConfig:
        kw = {"n_phi": self.grid[0], "n_x": self.grid[1], "tol_solve": self.tol,
              "method": self.method, "x_range": self.x_range}
        if self.phi_range is not None:
            kw["phi_range"] = self.phi_range
        return SolverConfig(**kw)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _pair(kind):
    def parse(text: str):
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 2:
            raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
        return tuple(kind(p) for p in parts)
    return parse


def _floats(text: str):
    try:
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="catalog name or model JSON file")
    common.add_argument("--mode", choices=("testing", "testing-timechanged", "detection"))
    common.add_argument("--grid", type=_pair(int), metavar="N_PHI,N_X")
    common.add_argument("--phi-range", type=_pair(float), metavar="LO,HI")
    common.add_argument("--x-range", type=_pair(float), metavar="LO,HI")
    common.add_argument("--seed", type=int)
    common.add_argument("--eps-list", type=_floats, metavar="E1,E2,...")
    common.add_argument("--out", help="parent directory for run directories")
    common.add_argument("--name", help="run directory name (default: timestamp)")
    common.add_argument("--tol", type=float, help="solver residual tolerance")
    common.add_argument("--method", choices=("policy", "psor"))
    common.add_argument("--config", help="JSON file whose keys override the flags")

    parser = argparse.ArgumentParser(prog="monobound", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"monobound {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "simulate sample paths",
        "solve-st": "solve the sequential-testing problem",
        "solve-st-tc": "solve the time-changed sequential-testing problem",
        "solve-qd": "solve the quickest-detection problem",
        "boundaries": "solve and export the optimal stopping boundaries",
        "verify-gs": "check monotone boundaries for a monotone signal-to-noise ratio",
        "trap-scan": "detect trap curves and run the lambda-perturbation check",
        "hormander": "scan the bracket condition over a (u, x) grid",
        "oracle-1d": "constant-rho 1-D oracle and its comparison with the grid solver",
        "compare": "node-wise comparison of two solve runs",
    }
    subs = {c: sub.add_parser(c, parents=[common], help=h) for c, h in helps.items()}
    s = subs["simulate"]
    s.add_argument("--scheme", choices=("st", "st-tc", "qd", "hat", "canonical"))
    for flag in ("--phi0", "--x0", "--u0", "--horizon", "--dt"):
        s.add_argument(flag, type=float)
    s.add_argument("--n-paths", type=int)
    h = subs["hormander"]
    h.add_argument("--u-range", type=_pair(float), metavar="LO,HI")
    h.add_argument("--n-max", type=int)
    subs["verify-gs"].add_argument("--budget", type=float, help="violation budget in phi-cells")
    c = subs["compare"]
    c.add_argument("runs", nargs=2, help="run directories or manifest files")
    c.add_argument("--max-value-diff", type=float, help="fail when the value diff exceeds this")
    return parser


_TUPLE_KEYS = ("grid", "phi_range", "x_range", "eps_list", "u_range", "runs")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags first, then the JSON config file (which wins)."""
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    values = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    if args.config:
        try:
            extra = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        extra = {k.replace("-", "_"): v for k, v in extra.items()}
        unknown = set(extra) - fields - {"command"}
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(extra)
    for key in _TUPLE_KEYS:
        if values.get(key) is not None:
            values[key] = tuple(values[key])
    values["command"] = args.command
    return RunConfig(**values).validate()


# ------------------------------------------------------------------- run --

class Run:
    """One run directory with its artifacts, timings and verdicts."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        name = cfg.name or _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f") + f"-{cfg.command}"
        self.dir = Path(cfg.out) / name
        self.dir.mkdir(parents=True, exist_ok=False)
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}
        self.verdicts: dict[str, dict] = {}
        self.error: dict | None = None
        self.model_json = None

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.dir / name

    def add(self, names) -> None:
        self.artifacts.extend(names)

    def verdict(self, key: str, report: dict) -> None:
        self.verdicts[key] = report

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    @property
    def passed(self) -> bool:
        return self.error is None and all(v.get("pass") is not False for v in self.verdicts.values())

    def manifest(self) -> dict:
        files = []
        for name in dict.fromkeys(self.artifacts):
            p = self.dir / name
            if p.is_file():
                files.append({"file": name, "sha256": sha256(p), "bytes": p.stat().st_size})
        return {"tool": "monobound", "version": __version__, "command": self.cfg.command,
                "config": self.cfg.to_json(), "model": self.model_json, "artifacts": files,
                "timings": self.timings, "verdicts": self.verdicts,
                "complete": self.error is None, "error": self.error, "pass": self.passed}

    def finish(self) -> Path:
        return write_json(self.dir / "manifest.json", self.manifest())


def _field_record(field) -> dict:
    """Field metadata without wall-clock timings (those go to the manifest)."""
    rec = field.manifest()
    rec["diagnostics"] = {k: v for k, v in rec["diagnostics"].items() if k != "solve_seconds"}
    return rec


def _solve(run: Run, model, mode: str):
    cfg = run.cfg.solver_config()
    fn = {"testing": solve_st, "testing-timechanged": solve_st_timechanged,
          "detection": solve_qd}[mode]
    with run.stage("solve"):
        field = fn(cfg, model)
    run.verdict("solve", {"residual": field.residual, "tol": cfg.tol_solve,
                          "iterations": field.iterations, "pass": field.residual <= cfg.tol_solve})
    return field


def _write_field(run: Run, field, boundaries=None) -> None:
    with run.stage("write"):
        field.to_csv(run.path("value.csv"))
        write_json(run.path("field.json"), _field_record(field))
        if boundaries is not None:
            boundaries.to_csv(run.path("boundaries.csv"))
            write_json(run.path("boundaries.json"), boundaries.to_json())


def _solve_pipeline(run: Run, model, mode: str) -> None:
    field = _solve(run, model, mode)
    with run.stage("boundaries"):
        bset = extract_boundaries(field)
    _write_field(run, field, bset)


def _mode(run: Run, default: str = "detection") -> str:
    return run.cfg.mode or default


# ------------------------------------------------------------- pipelines --

def cmd_simulate(run: Run, model) -> None:
    c = run.cfg
    with run.stage("simulate"):
        if c.scheme in ("st", "st-tc"):
            bundle = sde.simulate_st(model, c.phi0, c.x0, c.horizon, c.dt, c.seed, c.n_paths)
            if c.scheme == "st-tc":
                bundle = sde.time_change(bundle, model)
        elif c.scheme == "qd":
            bundle = sde.simulate_qd(model, c.phi0, c.x0, c.horizon, c.dt, c.seed,
                                     n_paths=c.n_paths)
        elif c.scheme == "hat":
            bundle = sde.simulate_hat(model, c.phi0, c.x0, c.horizon, c.dt, c.seed, c.n_paths)
        elif c.scheme == "canonical":
            bundle = sde.simulate_canonical(model, c.u0, c.x0, c.horizon, c.dt, c.seed,
                                            n_paths=c.n_paths)
        else:
            raise ConfigError(f"unknown scheme {c.scheme!r}")
    with run.stage("write"):
        files = bundle.to_csv(run.dir / "paths")
        run.add(str(f.relative_to(run.dir)) for f in files)
        write_json(run.path("paths.json"), {"scheme": bundle.scheme, "dt": bundle.dt,
                                            "seed": bundle.seed, "n_paths": bundle.n_paths,
                                            "n_steps": bundle.n_steps, "meta": bundle.meta})
    finite = bool(np.all(np.isfinite(bundle.phi)) and np.all(np.isfinite(bundle.x)))
    run.verdict("paths_finite", {"pass": finite})


def cmd_solve(mode: str):
    def run_it(run: Run, model) -> None:
        _solve_pipeline(run, model, mode)
    return run_it


def cmd_boundaries(run: Run, model) -> None:
    _solve_pipeline(run, model, _mode(run))


def cmd_verify_gs(run: Run, model) -> None:
    mode = _mode(run)
    if mode == "testing-timechanged":
        raise ConfigError("verify-gs runs in testing or detection mode")
    with run.stage("verify"):
        cls = conjecture.classify_model(model)
        verdict, field, bset = conjecture.run_gs_check(model, mode, run.cfg.solver_config(),
                                                       run.cfg.budget)
    run.verdict("gs", {"pass": verdict.all_pass, "applicable": verdict.applicable,
                       "violation": verdict.violation})
    _write_field(run, field, bset)
    extra = {}
    if cls.applicable:
        with run.stage("verify"):
            extra["value_monotone_x"] = conjecture.check_value_monotone_x(field, cls)
            extra["phi_shape"] = conjecture.check_phi_shape(field)
            if mode == "detection":
                extra["vx_sign"] = conjecture.check_vx_sign(field, cls, model)
        for k, v in extra.items():
            run.verdict(k, {"pass": v["pass"]})
    report = verdict.to_json()
    report["checks"] = extra
    write_json(run.path("verdict.json"), report)


def cmd_trap_scan(run: Run, model) -> None:
    eps = run.cfg.eps_list or (1e-3, 1e-2, 1e-1)
    with run.stage("trap"):
        report = trap.detect_trap(model)
        pert = trap.perturbation_check(model, eps)
        report.perturbation = pert["rows"]
    with run.stage("write"):
        run.add(report.write(run.dir, "trap"))
    run.verdict("trap", {"has_trap": report.has_trap, "kappa": report.kappa,
                         "residual_sup": report.residual_sup})
    run.verdict("perturbation", {"applicable": pert["applicable"], "pass": pert["pass"]})


def cmd_hormander(run: Run, model) -> None:
    c = run.cfg
    x_range = c.x_range or model.x_domain
    with run.stage("hormander"):
        hmap = trap.hormander_scan(model, c.u_range, x_range, c.n_max)
        report = trap.detect_trap(model)
    verdict = {"fail_count": int(hmap.fail.sum()), "has_trap": report.has_trap}
    if report.has_trap:
        u_trap = -np.log(report.kappa)
        verdict["pass"] = hmap.fail_set_matches(lambda x: np.full_like(x, u_trap))
    run.verdict("hormander", verdict)
    with run.stage("write"):
        write_json(run.path("hormander.json"), hmap.to_json())


def cmd_oracle_1d(run: Run, model) -> None:
    mode = _mode(run)
    phi_range = run.cfg.solver_config().phi_range
    with run.stage("oracle"):
        oracle = solve_1d_constant_rho(model, mode, phi_range=phi_range)
    with run.stage("write"):
        phi = np.exp(oracle.y)
        write_csv(run.path("oracle_value.csv"), ["phi", "value"], zip(phi, oracle.values))
        write_json(run.path("oracle.json"), {"mode": mode, "boundaries": oracle.boundaries,
                                             "tol_1d": oracle.tol_1d})
    field = _solve(run, model, mode)
    with run.stage("boundaries"):
        bset = extract_boundaries(field)
    _write_field(run, field, bset)
    cmp = compare_with_oracle(field, oracle, bset)
    write_json(run.path("oracle_compare.json"), cmp)
    run.verdict("oracle_1d", cmp)


# --------------------------------------------------------------- compare --

def _manifest_of(ref: str) -> tuple[Path, dict]:
    p = Path(ref)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        return p.parent, json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {p}: {exc}") from exc


def _load_value_csv(path: Path):
    header, rows = read_csv(path)
    if header[:3] != ["phi", "x", "value"]:
        raise CompareError(f"{path}: unexpected header {header}")
    a = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
    phi, x = np.unique(a[:, 0]), np.unique(a[:, 1])
    return phi, x, a[:, 2].reshape(phi.size, x.size)


def _load_boundaries(path: Path) -> dict:
    header, rows = read_csv(path)
    a = np.array([[float(v) for v in r] for r in rows])
    return {name: a[:, k] for k, name in enumerate(header)}


def _common(a: np.ndarray, b: np.ndarray, what: str):
    """Indices of the coarser node set inside the finer one (nested grids only)."""
    coarse, fine, swap = (a, b, False) if a.size <= b.size else (b, a, True)
    idx = np.searchsorted(fine, coarse).clip(0, fine.size - 1)
    if not np.allclose(fine[idx], coarse, rtol=1e-9, atol=1e-12):
        raise CompareError(f"{what} nodes are not nested")
    ia, ib = (np.arange(coarse.size), idx) if not swap else (idx, np.arange(coarse.size))
    return ia, ib


def compare_runs(dir_a: Path, dir_b: Path) -> dict:
    """Node-wise value differences and boundary sup-distance in phi-cells."""
    for d in (dir_a, dir_b):
        if not (d / "value.csv").is_file():
            raise CompareError(f"{d} has no value field")
    ma, mb = (json.loads((d / "field.json").read_text())["mode"] for d in (dir_a, dir_b))
    compatible = {ma, mb} <= {"testing", "testing-timechanged"} or ma == mb
    if not compatible:
        raise CompareError(f"modes differ: {ma} vs {mb}")
    pa, xa, va = _load_value_csv(dir_a / "value.csv")
    pb, xb, vb = _load_value_csv(dir_b / "value.csv")
    ip_a, ip_b = _common(pa, pb, "phi")
    ix_a, ix_b = _common(xa, xb, "x")
    d = np.abs(va[np.ix_(ip_a, ix_a)] - vb[np.ix_(ip_b, ix_b)])
    out = {"modes": [ma, mb], "nodes": int(d.size), "value_max_diff": float(d.max()),
           "value_mean_diff": float(d.mean()), "boundary_cells": {}}
    fa, fb = dir_a / "boundaries.csv", dir_b / "boundaries.csv"
    if fa.is_file() and fb.is_file():
        ba, bb = _load_boundaries(fa), _load_boundaries(fb)
        ja, jb = _common(ba["x"], bb["x"], "boundary x")
        h = max(json.loads((dd / "field.json").read_text())["grid"]["h_logphi"]
                for dd in (dir_a, dir_b))
        for name in set(ba) & set(bb) - {"x"}:
            dist = np.abs(np.log(ba[name][ja]) - np.log(bb[name][jb])) / h
            out["boundary_cells"][name] = float(dist.max())
    return out


def cmd_compare(run: Run, model) -> None:
    (da, _), (db, _) = (_manifest_of(r) for r in run.cfg.runs)
    with run.stage("compare"):
        report = compare_runs(da, db)
    if run.cfg.max_value_diff is not None:
        report["pass"] = report["value_max_diff"] <= run.cfg.max_value_diff
    write_json(run.path("compare.json"), report)
    run.verdict("compare", report)


PIPELINES = {
    "simulate": cmd_simulate,
    "solve-st": cmd_solve("testing"),
    "solve-st-tc": cmd_solve("testing-timechanged"),
    "solve-qd": cmd_solve("detection"),
    "boundaries": cmd_boundaries,
    "verify-gs": cmd_verify_gs,
    "trap-scan": cmd_trap_scan,
    "hormander": cmd_hormander,
    "oracle-1d": cmd_oracle_1d,
    "compare": cmd_compare,
}


def execute(cfg: RunConfig) -> tuple[int, Run | None]:
    """Run one pipeline; returns (exit status, run)."""
    try:
        model = None if cfg.command == "compare" else load_model(cfg.model)
    except (ModelError, ConfigError, ValueError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    run = Run(cfg)
    if model is not None:
        run.model_json = model.to_json()
    status = EXIT_OK
    try:
        PIPELINES[cfg.command](run, model)
    except StageError as exc:
        run.error = {"stage": exc.stage, "message": str(exc.exc), "type": type(exc.exc).__name__}
        print(f"error {exc}", file=sys.stderr)
        config_like = (ConfigError, CompareError, ModelError)
        status = EXIT_CONFIG if isinstance(exc.exc, config_like) else EXIT_STAGE
    except (ConfigError, CompareError) as exc:
        run.error = {"stage": "config", "message": str(exc), "type": type(exc).__name__}
        print(f"error [config]: {exc}", file=sys.stderr)
        status = EXIT_CONFIG
    run.finish()
    if status == EXIT_OK and not run.passed:
        status = EXIT_CHECK
    print(run.dir / "manifest.json")
    return status, run


_PAIR_FLAGS = ("--phi-range", "--x-range", "--u-range", "--eps-list")


def _join_negative_values(argv: list[str]) -> list[str]:
    """Turn ``--x-range -4,4`` into ``--x-range=-4,4`` so argparse accepts it."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _PAIR_FLAGS and i + 1 < len(argv) and argv[i + 1][:1] == "-" \
                and argv[i + 1][1:2].isdigit() | (argv[i + 1][1:2] == "."):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_negative_values(argv))
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status, _ = execute(cfg)
    return status


if __name__ == "__main__":
    sys.exit(main())
