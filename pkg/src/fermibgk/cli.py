"""Command-line entry point.

Subcommands: ``betatable``, ``invert``, ``simulate``, ``lincheck``, ``picard``.
Configuration is TOML with sections ``[run]``, ``[tau]``, ``[grid]``,
``[equilibrium]``, ``[perturbation]`` and ``[initial]``; a ``scenario`` key in
``[run]`` selects a preset that the remaining keys override.

Exit codes:
    0  success
    1  unexpected internal error
    2  configuration or usage error
    3  admissibility violation (moments outside 0 < B < beta(-ln 3), or an
       inadmissible global equilibrium)
    4  a verification check failed
    5  a nonlinear solve did not converge
    6  the fermionic bound 0 <= F <= 1 was violated
"""

from __future__ import annotations

import argparse
import copy
import csv
import logging
import math
import os
import sys
import traceback
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from threadpoolctl import threadpool_limits

from . import __version__
from .diagnostics import decay_fit, format_fit
from .equilibrium import (
    FermiParams,
    Moments,
    TauCoefficients,
    discrete_invert_equilibrium,
    equilibrium_moments,
    fermi_dirac_eval,
    invert_equilibrium,
    moments_B,
)
from .errors import (
    AdmissibilityError,
    ConfigError,
    ConvergenceError,
    DegenerateMomentsError,
    InvariantViolationError,
    OutOfBranchError,
    PositivityError,
    UsageError,
)
from .fdintegrals import LN3, beta, beta_branch, beta_prime
from .linearized import build_basis, corrupt_basis, run_lincheck
from .phasegrid import (
    GlobalEquilibrium,
    PerturbationSpec,
    PhaseState,
    SpatialGrid,
    VelocityGrid,
    init_perturbed_state,
    save_snapshot,
)
from .solver import CSV_COLUMNS, RunConfig, picard_iteration, run_simulation

log = logging.getLogger("fermibgk")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_ADMISSIBILITY = 3
EXIT_CHECK = 4
EXIT_CONVERGENCE = 5
EXIT_BOUNDS = 6

# value type accepted for every configuration key
SCHEMA = {
    "run": {
        "scenario": str,
        "dt": float,
        "t_final": float,
        "transport": str,
        "inversion": str,
        "snapshot_every": int,
        "threads": int,
        "n_iter": int,
        "monitor": bool,
        "fit_t_lo": float,
        "fit_floor": float,
        "fault_injection": str,
        "n_coercivity": int,
        "n_residual": int,
        "n_samples": int,
    },
    "tau": {"poly": list, "n": float, "m": float, "C1": float, "C2": float, "C3": float, "C4": float},
    "grid": {"n_x": int, "length": float, "n_p": int, "p_max": float},
    "equilibrium": {"a0": float, "c0": float},
    "perturbation": {
        "amplitude": float,
        "shape": str,
        "mode": int,
        "spatial": str,
        "bump_center": list,
        "bump_width": float,
    },
    "initial": {"kind": str, "a": float, "c": float, "drift": float},
    "betatable": {"c_min": float, "c_max": float, "n": int},
}

PRESETS = {
    "relax0d": {
        "run": {"dt": 0.05, "t_final": 20.0, "transport": "semi-lagrangian", "fit_floor": 1e-13},
        "grid": {"n_x": 1, "length": 1.0, "n_p": 24},
        "initial": {"kind": "bimodal", "a": 2.0, "c": 0.0, "drift": 0.6},
    },
    "decay1x3v": {
        "run": {"dt": 0.02, "t_final": 10.0, "transport": "semi-lagrangian"},
        "grid": {"n_x": 32, "length": 1.0, "n_p": 24},
        "equilibrium": {"a0": 1.0, "c0": 0.0},
        "perturbation": {"amplitude": 1e-3, "shape": "e1", "mode": 1, "spatial": "cos"},
    },
    "conservation": {
        "run": {"dt": 0.02, "t_final": 40.0, "transport": "upwind", "snapshot_every": 10},
        "grid": {"n_x": 32, "length": 2 * math.pi, "n_p": 24},
        "equilibrium": {"a0": 1.0, "c0": 0.0},
        "perturbation": {
            "amplitude": 1e-2,
            "shape": "bump",
            "spatial": "cos",
            "bump_center": [0.5, 0.2, 0.0],
        },
    },
    "picard": {
        "run": {"dt": 0.05, "t_final": 0.5, "transport": "semi-lagrangian", "n_iter": 8},
        "grid": {"n_x": 16, "length": 2 * math.pi, "n_p": 24},
        "equilibrium": {"a0": 1.0, "c0": 0.0},
        "perturbation": {"amplitude": 1e-3, "shape": "bump", "spatial": "cos", "bump_center": [0.5, 0.0, 0.0]},
    },
    "lincheck": {
        "equilibrium": {"a0": 1.0, "c0": 0.0},
        "run": {"n_coercivity": 100, "n_residual": 20, "inversion": "discrete"},
    },
    "betatable": {"betatable": {"c_min": -LN3, "c_max": 10.0, "n": 100}},
    "invert-roundtrip": {"run": {"n_samples": 100}, "grid": {"n_p": 32}},
}

BASE_RUN = {
    "transport": "semi-lagrangian",
    "inversion": "discrete",
    "snapshot_every": 1,
    "monitor": True,
    "n_iter": 8,
}


# ---------------------------------------------------------------- config


def _typecheck(section, key, value):
    expected = SCHEMA[section][key]
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}")
    if not isinstance(value, expected):
        raise ConfigError(f"[{section}] {key} must be {expected.__name__}, got {value!r}")
    return value


def validate(raw: dict) -> dict:
    """Type-check ``raw`` against :data:`SCHEMA`; unknown sections or keys are errors."""
    out = {}
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        out[section] = {}
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            out[section][key] = _typecheck(section, key, value)
    return out


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for section, body in override.items():
        out.setdefault(section, {}).update(body)
    return out


def load_config(path, scenario=None) -> dict:
    """Read TOML at ``path`` (may be None) and overlay it on the chosen preset."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    user = validate(raw)
    name = scenario or user.get("run", {}).get("scenario")
    if name is not None and name not in PRESETS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}")
    cfg = merge({"run": dict(BASE_RUN)}, PRESETS.get(name, {}))
    cfg = merge(cfg, user)
    cfg["run"]["scenario"] = name or "custom"
    return cfg


def tau_from(cfg) -> TauCoefficients:
    body = cfg.get("tau", {})
    try:
        return TauCoefficients(**{k: (tuple(v) if k == "poly" else v) for k, v in body.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[tau] {exc}") from None


def run_config_from(cfg) -> RunConfig:
    run = cfg["run"]
    for key in ("dt", "t_final"):
        if key not in run:
            raise ConfigError(f"[run] {key} is required")
    return RunConfig(
        dt=run["dt"],
        t_final=run["t_final"],
        tau=tau_from(cfg),
        transport=run["transport"],
        inversion=run["inversion"],
        snapshot_every=run["snapshot_every"],
        scenario=run["scenario"],
        monitor=run["monitor"],
    )


def _velocity_grid(cfg, a0=1.0):
    grid = cfg.get("grid", {})
    n_p = grid.get("n_p", 24)
    if "p_max" in grid:
        return VelocityGrid(grid["p_max"], n_p)
    return VelocityGrid.for_equilibrium(a0, n_p)


def _global_equilibrium(cfg, grid=None, adequacy_tol=1e-6):
    eq = cfg.get("equilibrium", {})
    a0, c0 = eq.get("a0", 1.0), eq.get("c0", 0.0)
    if not c0 > -LN3:
        raise PositivityError(f"c0 = {c0!r} is not above -ln 3; no admissible global equilibrium")
    grid = _velocity_grid(cfg, a0) if grid is None else grid
    try:
        return GlobalEquilibrium.from_params(a0, c0, grid=grid, adequacy_tol=adequacy_tol)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def initial_state(cfg) -> tuple[PhaseState, GlobalEquilibrium | None]:
    """Initial state and, for perturbation scenarios, the reference equilibrium."""
    g = cfg.get("grid", {})
    space = SpatialGrid(g.get("length", 1.0), g.get("n_x", 1))
    init = cfg.get("initial", {})
    if init.get("kind") == "bimodal":
        a = init.get("a", 2.0)
        vel = _velocity_grid(cfg, 0.75 * a)
        drift = np.array([init.get("drift", 0.6), 0.0, 0.0])
        lobes = [fermi_dirac_eval(FermiParams(a, sgn * drift, init.get("c", 0.0)), vel.nodes) for sgn in (1, -1)]
        F = np.tile(0.5 * (lobes[0] + lobes[1]), (space.n_x, 1))
        return PhaseState(F, space, vel), None
    if init.get("kind") not in (None, "perturbation"):
        raise ConfigError(f"[initial] kind must be 'bimodal' or 'perturbation', got {init['kind']!r}")
    ge = _global_equilibrium(cfg)
    p = dict(cfg.get("perturbation", {}))
    if "bump_center" in p:
        p["bump_center"] = tuple(float(v) for v in p["bump_center"])
    try:
        spec = PerturbationSpec(**p)
    except TypeError as exc:
        raise ConfigError(f"[perturbation] {exc}") from None
    s0, _ = init_perturbed_state(ge, spec, space)
    return s0, ge


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, rows, columns, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in columns])


def _header(args, cfg):
    return [f"fermibgk {__version__}", f"scenario={cfg['run']['scenario']}", f"seed={args.seed}"]


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_betatable(args, cfg):
    bt = dict(PRESETS["betatable"]["betatable"])
    bt.update(cfg.get("betatable", {}))
    for key in ("c_min", "c_max", "n"):
        if getattr(args, key) is not None:
            bt[key] = getattr(args, key)
    if bt["n"] < 1 or bt["c_max"] < bt["c_min"]:
        raise UsageError("need n >= 1 and c_max >= c_min")
    c = np.linspace(bt["c_min"], bt["c_max"], bt["n"])
    b = np.atleast_1d(beta(c))
    bp = np.atleast_1d(beta_prime(c))
    rows = [{"c": ci, "beta": bi, "beta_prime": di} for ci, bi, di in zip(c, b, bp)]
    out = _out_dir(args) / "betatable.csv"
    write_csv(out, rows, ("c", "beta", "beta_prime"), _header(args, cfg))
    print(f"wrote {out} ({len(rows)} rows)")
    # -ln 3 itself is the closed branch endpoint; allow it despite rounding
    if bt["c_min"] < -LN3 - 1e-15:
        print("notice: c range extends below -ln 3; monotonicity assertion skipped")
        return EXIT_OK
    ok = bool(np.all(np.diff(b) < 0) and np.all(bp < 0))
    print(f"monotone decreasing: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _roundtrip(args, cfg):
    rng = np.random.default_rng(args.seed)
    n = cfg["run"].get("n_samples", 100)
    grid = _velocity_grid(cfg, 1.0)
    worst_c = worst_d = 0.0
    for _ in range(n):
        c = -LN3 + 1e-3 + rng.uniform(0.0, 6.0)
        fp = FermiParams(1.0, rng.uniform(-0.5, 0.5, 3), c)
        mom = equilibrium_moments(fp)
        back = equilibrium_moments(invert_equilibrium(mom))
        worst_c = max(worst_c, float(np.max(np.abs(back.as_array() - mom.as_array()) / np.abs(mom.as_array()).max())))
        Fd = fermi_dirac_eval(fp, grid.nodes)
        md = Moments.from_array(Fd @ grid.moment_basis)
        got = fermi_dirac_eval(discrete_invert_equilibrium(md, grid), grid.nodes) @ grid.moment_basis
        worst_d = max(worst_d, float(np.max(np.abs(got - md.as_array()) / np.abs(md.as_array()).max())))
    ok = worst_c <= 1e-8 and worst_d <= 1e-12
    print(f"samples = {n}")
    print(f"continuous_max_rel_error = {worst_c:.3e}")
    print(f"discrete_max_rel_error = {worst_d:.3e}")
    print(f"roundtrip: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_invert(args, cfg):
    if args.N is None and args.E is None:
        return _roundtrip(args, cfg)
    if args.N is None or args.E is None:
        raise UsageError("invert needs both --N and --E (or neither for the round-trip check)")
    P = np.array([float(v) for v in args.P.split(",")]) if args.P else np.zeros(3)
    if P.shape != (3,):
        raise UsageError("--P takes three comma-separated components")
    mom = Moments(args.N, P, args.E)
    B = moments_B(mom)
    if args.mode == "discrete":
        grid = _velocity_grid(cfg, float(invert_equilibrium(mom).a))
        fp = discrete_invert_equilibrium(mom, grid)
    else:
        fp = invert_equilibrium(mom)
    print(f"B = {B!r}")
    print(f"beta_lower = {beta_branch().beta_lower!r}")
    print(f"a = {float(fp.a)!r}")
    print(f"b = {', '.join(repr(float(v)) for v in fp.b)}")
    print(f"c = {float(fp.c)!r}")
    return EXIT_OK


def _columns(records):
    extra = [k for k in records[0] if k not in CSV_COLUMNS]
    return list(CSV_COLUMNS) + extra


def _reference_tau(tc: TauCoefficients):
    """tau for a pure constant law, else 1; sets where the decay-fit window starts."""
    if tc.C1 == tc.C2 == tc.C3 == 0.0:
        return 1.0 / tc.C4
    return 1.0


def cmd_simulate(args, cfg):
    rc = run_config_from(cfg)
    s0, ge = initial_state(cfg)
    out = _out_dir(args)
    log.info("scenario %s: %d steps of dt=%g", rc.scenario, rc.n_steps, rc.dt)
    try:
        res = run_simulation(rc, s0, ge)
    except AdmissibilityError as exc:
        if exc.checkpoint is not None:
            save_snapshot(out / "checkpoint.snap", exc.checkpoint)
        raise
    write_csv(out / "timeseries.csv", res.records, _columns(res.records), _header(args, cfg))
    save_snapshot(out / "final.snap", res.final)

    t = res.column("time")
    tot = np.array([[r[c] for c in CSV_COLUMNS[1:6]] for r in res.records])
    scale = math.sqrt(abs(tot[0, 0] * tot[0, 4]))
    drift = np.abs(tot - tot[0]) / np.array([abs(tot[0, 0]), scale, scale, scale, abs(tot[0, 4])])
    H = res.column("H")
    lines = [
        "[run]",
        f"scenario = {rc.scenario}",
        f"seed = {args.seed}",
        f"steps = {res.steps}",
        f"dt = {rc.dt!r}",
        f"t_final = {float(t[-1])!r}",
        f"transport = {rc.transport}",
        f"inversion = {rc.inversion}",
        f"max_conservation_drift = {float(drift.max()):.3e}",
        f"max_H_increase = {float(np.max(np.diff(H), initial=-math.inf)):.3e}",
        f"F_min = {float(res.column('F_min').min())!r}",
        f"F_max = {float(res.column('F_max').max())!r}",
        f"min_B_margin = {float(res.column('B_max_margin').min())!r}",
        "",
    ]
    text = "\n".join(lines)
    if len(t) > 2:
        fit_kw = {"floor": cfg["run"].get("fit_floor", 0.0)}
        if "fit_t_lo" in cfg["run"]:
            fit_kw["t_lo"] = cfg["run"]["fit_t_lo"]
        else:
            fit_kw["tau"] = _reference_tau(rc.tau)
        try:
            fit = decay_fit(t, res.column("f_l2"), **fit_kw)
        except ValueError as exc:
            log.info("no decay fit: %s", exc)
        else:
            fit_text = format_fit(fit)
            text += fit_text
            kv = "".join(f"{k}={_fmt(v)}\n" for k, v in fit.as_dict().items())
            (out / "fit.kv").write_text(kv)
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_picard(args, cfg):
    rc = run_config_from(cfg)
    s0, ge = initial_state(cfg)
    n_iter = cfg["run"]["n_iter"]
    out = _out_dir(args)
    res = picard_iteration(rc, s0, n_iter)
    direct = run_simulation(rc, s0, ge)
    diff = res.differences
    rows = [{"iteration": i + 1, "sup_diff": d} for i, d in enumerate(diff)]
    write_csv(out / "picard.csv", rows, ("iteration", "sup_diff"), _header(args, cfg))
    vs_direct = float(np.max(np.abs(res.final.F - direct.final.F)))
    monotone = bool(all(b < a for a, b in zip(diff, diff[1:])))
    text = "\n".join([
        "[picard]",
        f"iterations = {n_iter}",
        f"last_difference = {diff[-1]:.3e}",
        f"monotone_decrease = {str(monotone).lower()}",
        f"max_abs_vs_direct = {vs_direct:.3e}",
        "",
    ])
    (out / "summary.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if monotone else EXIT_CHECK


LINCHECK_GRIDS = (32, 48, 64, 96)


def lincheck_equilibrium(cfg, target=1e-12):
    """Smallest grid from :data:`LINCHECK_GRIDS` whose adequacy error is below ``target``."""
    eq = cfg.get("equilibrium", {})
    a0 = eq.get("a0", 1.0)
    if "n_p" in cfg.get("grid", {}):
        return _global_equilibrium(cfg)
    for n_p in LINCHECK_GRIDS:
        ge = _global_equilibrium(cfg, VelocityGrid.for_equilibrium(a0, n_p))
        if ge.check_adequacy() <= target:
            return ge
    return ge


def cmd_lincheck(args, cfg):
    ge = lincheck_equilibrium(cfg)
    rng = np.random.default_rng(args.seed)
    run = cfg["run"]
    basis = None
    fault = args.inject_fault or run.get("fault_injection")
    if fault == "basis":
        basis = corrupt_basis(build_basis(ge))
    elif fault is not None:
        raise ConfigError(f"unknown fault injection {fault!r}; only 'basis' is supported")
    report = run_lincheck(
        ge,
        rng,
        basis=basis,
        n_coercivity=run.get("n_coercivity", 100),
        n_residual=run.get("n_residual", 20),
        mode=run.get("inversion", "discrete"),
    )
    head = (
        f"# a0 = {ge.a0!r}, c0 = {ge.c0!r}, n_p = {ge.grid.n_p}, seed = {args.seed}"
        + (f", fault = {fault}" if fault else "")
        + "\n"
    )
    text = head + report.text()
    if args.out:
        (_out_dir(args) / "lincheck.txt").write_text(text)
    sys.stdout.write(text)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK


COMMANDS = {
    "betatable": cmd_betatable,
    "invert": cmd_invert,
    "simulate": cmd_simulate,
    "lincheck": cmd_lincheck,
    "picard": cmd_picard,
}

DEFAULT_SCENARIO = {
    "betatable": "betatable",
    "invert": "invert-roundtrip",
    "lincheck": "lincheck",
    "picard": "picard",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fermibgk", description="Fermionic BGK relaxation solver and checks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--scenario", help=f"preset: {', '.join(sorted(PRESETS))}")
    common.add_argument("--out", default="fermibgk-out", help="output directory")
    common.add_argument("--threads", type=int, default=None, help="BLAS worker threads")
    common.add_argument("--seed", type=int, default=0, help="seed for random test directions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("betatable", parents=[common], help="tabulate beta(c) and beta'(c)")
    p.add_argument("--c-min", dest="c_min", type=float)
    p.add_argument("--c-max", dest="c_max", type=float)
    p.add_argument("--n", type=int)

    p = sub.add_parser("invert", parents=[common], help="invert moments; without --N/--E run a round trip")
    p.add_argument("--N", type=float)
    p.add_argument("--P", help="p1,p2,p3")
    p.add_argument("--E", type=float)
    p.add_argument("--mode", choices=("continuous", "discrete"), default="continuous")

    sub.add_parser("simulate", parents=[common], help="run a scenario")
    p = sub.add_parser("lincheck", parents=[common], help="check the linearization identities")
    p.add_argument("--inject-fault", choices=("basis",), default=None, help=argparse.SUPPRESS)
    sub.add_parser("picard", parents=[common], help="Picard iteration vs direct solve")
    return parser


def _setup_logging():
    level = os.environ.get("FERMIBGK_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"FERMIBGK_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = load_config(args.config, args.scenario or (
            None if args.config else DEFAULT_SCENARIO.get(args.command)))
        threads = args.threads if args.threads is not None else cfg["run"].get("threads")
        if threads is not None and threads < 1:
            raise ConfigError("threads must be >= 1")
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdmissibilityError as exc:
        print(f"admissibility violation (0 < B < beta(-ln 3) required): {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except (OutOfBranchError, DegenerateMomentsError, PositivityError) as exc:
        print(f"admissibility violation: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InvariantViolationError as exc:
        print(f"fermionic bound 0 <= F <= 1 violated: {exc}", file=sys.stderr)
        return EXIT_BOUNDS
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
