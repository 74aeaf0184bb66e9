"""Command line entry point.

Every subcommand reads its fields from flags, from a JSON config file given
with ``--config``, or both (flags win). Unknown or missing fields exit with
status 2; a failed verification exits with status 1.

Examples::

    tietime estimate --m 3 --gaps 2,3 --trials 100000 --seed 7
    tietime verify --suite all --m 4 --grid 20
    tietime series search --k 3 --degree 6 --normalize 1
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from . import martingale as mv
from . import montecarlo as mc
from . import series as se
from . import solver as sv
from .errors import ConvergenceError, TieTimeError
from .process import DEFAULT_HORIZON, GapState

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
REQUIRED = object()


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"invalid config field '{field}': {message}")
        self.field = field


def _int_list(v) -> list[int]:
    if isinstance(v, str):
        v = [p for p in v.replace(" ", "").split(",") if p]
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a comma-separated list of integers")
    out = []
    for x in v:
        if isinstance(x, bool) or (isinstance(x, float) and not x.is_integer()):
            raise ValueError(f"{x!r} is not an integer")
        out.append(int(x))
    return out


def _int(v) -> int:
    if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
        raise ValueError(f"{v!r} is not an integer")
    return int(v)


def _float(v) -> float:
    if isinstance(v, bool):
        raise ValueError(f"{v!r} is not a number")
    return float(v)


def _rational(v) -> Fraction:
    if isinstance(v, float):
        raise ValueError("give rationals as exact strings such as '1/4'")
    return Fraction(str(v))


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    raise ValueError("expected true or false")


def _choice(*options) -> Callable:
    def parse(v):
        if v not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return v
    return parse


@dataclass(frozen=True)
class Field:
    parse: Callable
    default: Any = None
    help: str = ""
    flag: bool = True


_MC = {
    "m": Field(_int, REQUIRED, "team count"),
    "gaps": Field(_int_list, REQUIRED, "initial gaps a1,...,a_{m-1}"),
    "trials": Field(_int, REQUIRED, "number of trials"),
    "seed": Field(_int, REQUIRED, "64-bit seed (required; there is no default)"),
    "horizon": Field(_int, DEFAULT_HORIZON, "per-trial step cap"),
    "workers": Field(_int, 1, "Monte Carlo threads; output does not depend on it"),
    "samples": Field(str, None, "write per-trial CSV here"),
}
_BLOCKS = {"blocks": Field(_int, mc.DEFAULT_BLOCKS, "median-of-means block count")}
_SOLVE = {
    "m": Field(_int, REQUIRED, "team count"),
    "radius": Field(_int, REQUIRED, "lattice radius R"),
    "tol": Field(_float, sv.DEFAULT_TOL, "relative residual tolerance"),
    "method": Field(_choice("auto", "direct", "gauss_seidel", "exact"), "auto", "solver"),
    "gaps": Field(_int_list, None, "state to report"),
    "csv": Field(str, None, "export the grid as CSV here"),
}

SCHEMAS: dict[str, dict[str, Field]] = {
    "simulate": {**_MC, "pair": Field(_int, None, "watch only gaps pair, pair+1")},
    "estimate": {**_MC, **_BLOCKS},
    "estimate-pair": {**_MC, **_BLOCKS, "pair": Field(_int, REQUIRED, "pair index i")},
    "limit-check": {
        "m": Field(_int, REQUIRED, "team count"),
        "pair": Field(_int, REQUIRED, "pair index i"),
        "fixed": Field(_int_list, REQUIRED, "values a_i,a_{i+1}"),
        "far": Field(_int_list, [1, 2, 5, 10, 20], "values for the other gaps"),
        "trials": _MC["trials"], "seed": _MC["seed"], "horizon": _MC["horizon"],
        "workers": _MC["workers"], **_BLOCKS,
    },
    "tail": {**_MC,
             "thresholds": Field(_int_list, [10, 100, 1000, 10000], "survival thresholds"),
             "hill_fraction": Field(_float, mc.DEFAULT_HILL_FRACTION, "Hill top fraction")},
    "solve": {**_SOLVE, "policy": Field(_choice(*sv.BUILTIN_POLICIES), "zero", "boundary policy")},
    "bracket": dict(_SOLVE),
    "second-moment": {
        "m": Field(_int, REQUIRED, "team count"),
        "gaps": Field(_int_list, REQUIRED, "state to report"),
        "radii": Field(_int_list, REQUIRED, "radii to solve on"),
        "tol": _SOLVE["tol"],
        "method": _SOLVE["method"],
    },
    "verify": {
        "suite": Field(_choice("pairs", "min", "phi", "moments", "H", "time2", "all"),
                       REQUIRED, "identity suite"),
        "m": Field(_int, None, "team count (not needed for phi)"),
        "grid": Field(_int, mv.DEFAULT_GRID, "grid [1..N] per coordinate"),
        "n_max": Field(_int, 10, "largest time for the time2 suite"),
        "phi_grid": Field(_int, None, "grid for the phi suite (default: --grid)"),
    },
    "series": {
        "action": Field(_choice("search", "residual", "commute-check"), REQUIRED,
                        "search | residual | commute-check", flag=False),
        "k": Field(_int, None, "variable count for search"),
        "degree": Field(_int, None, "truncation degree"),
        "normalize": Field(_rational, Fraction(1), "constant-term normalization (0 drops it)"),
        "family": Field(_choice("perfect", "gamma"), "perfect", "which functional equation"),
        "file": Field(str, None, "series JSON file for residual"),
        "gamma": Field(_rational, None, "compensator for residual"),
        "vars": Field(_int, 3, "variable count for commute-check"),
        "trials": Field(_int, 100, "random series for commute-check"),
        "seed": Field(_int, None, "seed for commute-check"),
    },
}
COMMON = {
    "out": Field(str, None, "write the JSON summary here instead of stdout"),
    "no_meta": Field(_bool, False, "omit run metadata (timestamps) for byte-stable output"),
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tietime", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON config file; flags override its fields")
    sub = parser.add_subparsers(dest="command")
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", dest="sub_config", help="JSON config file")
        if name == "series":
            p.add_argument("action", nargs="?", choices=["search", "residual", "commute-check"])
        for key, f in {**schema, **COMMON}.items():
            if not f.flag:
                continue
            if f.parse is _bool:
                p.add_argument(_flag(key), dest=key, action="store_const", const=True,
                               default=None, help=f.help)
            else:
                p.add_argument(_flag(key), dest=key, default=None, help=f.help)
    return parser


def resolve_config(args: argparse.Namespace) -> tuple[str, dict]:
    """Merge config file and flags, validate, and fill defaults."""
    path = getattr(args, "sub_config", None) or args.config
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
    command = args.command or data.get("command")
    if command is None:
        raise ConfigError("command", "no subcommand given")
    if command not in SCHEMAS:
        raise ConfigError("command", f"unknown command {command!r}")
    if args.command and data.get("command", command) != command:
        raise ConfigError("command", f"config is for {data['command']!r}, not {command!r}")
    schema = {**SCHEMAS[command], **COMMON}
    raw = {k: v for k, v in data.items() if k != "command"}
    for key in raw:
        if key not in schema:
            raise ConfigError(key, f"unknown field for {command}")
    for key in schema:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    cfg = {}
    for key, f in schema.items():
        if key in raw and raw[key] is not None:
            try:
                cfg[key] = f.parse(raw[key])
            except (ValueError, TypeError, ZeroDivisionError) as exc:
                raise ConfigError(key, str(exc)) from exc
        elif f.default is REQUIRED:
            raise ConfigError(key, f"required for {command}")
        else:
            cfg[key] = f.default
    _check_fields(command, cfg)
    return command, cfg


def _check_fields(command: str, cfg: dict) -> None:
    m = cfg.get("m")
    if m is not None and m < 2:
        raise ConfigError("m", "team count must be >= 2")
    if cfg.get("gaps") is not None and m is not None and len(cfg["gaps"]) != m - 1:
        raise ConfigError("gaps", f"expected {m - 1} gaps for m={m}, got {len(cfg['gaps'])}")
    for key in ("trials", "radius", "grid", "horizon", "workers", "blocks"):
        if cfg.get(key) is not None and cfg[key] < 1:
            raise ConfigError(key, "must be >= 1")
    if command == "limit-check" and len(cfg["fixed"]) != 2:
        raise ConfigError("fixed", "need exactly two values")
    if command == "verify" and cfg["suite"] != "phi" and m is None:
        raise ConfigError("m", f"required for suite {cfg['suite']}")
    if command == "series":
        action = cfg["action"]
        if action == "search" and (cfg["k"] is None and cfg["family"] == "perfect"):
            raise ConfigError("k", "required for series search")
        if action in ("search", "commute-check") and cfg["degree"] is None:
            raise ConfigError("degree", f"required for series {action}")
        if action == "residual":
            if cfg["file"] is None:
                raise ConfigError("file", "required for series residual")
            if cfg["gamma"] is None:
                raise ConfigError("gamma", "required for series residual")
        if action == "commute-check" and cfg["seed"] is None:
            raise ConfigError("seed", "required for series commute-check")


# --- command implementations -------------------------------------------
# each returns (summary dict, failed flag)

def _state(cfg) -> GapState:
    return GapState(cfg["m"], tuple(cfg["gaps"]))


def _write_samples(cfg, batch) -> None:
    if cfg.get("samples"):
        mc.write_samples_csv(cfg["samples"], batch)


def cmd_simulate(cfg):
    batch = mc.simulate(_state(cfg), cfg["trials"], cfg["seed"], cfg["horizon"],
                        pair=cfg["pair"], workers=cfg["workers"])
    _write_samples(cfg, batch)
    hits = np.bincount(batch.hit_index[batch.absorbed], minlength=cfg["m"])[1:]
    return {
        "m": cfg["m"], "gaps": cfg["gaps"], "pair": cfg["pair"], "trials": cfg["trials"],
        "seed": cfg["seed"], "horizon": cfg["horizon"],
        "absorbed": int(batch.absorbed.sum()), "truncated": batch.truncated,
        "mean_T": float(batch.steps.mean()), "max_T": int(batch.steps.max()),
        "median_T": float(np.median(batch.steps)),
        "hit_counts": [int(h) for h in hits],
    }, False


def cmd_estimate(cfg):
    state = _state(cfg)
    batch = mc.simulate(state, cfg["trials"], cfg["seed"], cfg["horizon"], workers=cfg["workers"])
    _write_samples(cfg, batch)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mc.InfiniteMeanWarning)
        est = mc.estimate_expected_T(state, cfg["trials"], cfg["seed"], cfg["horizon"],
                                     cfg["blocks"], cfg["workers"], batch=batch)
    return {"m": cfg["m"], "gaps": cfg["gaps"], "seed": cfg["seed"], **est.to_dict()}, False


def cmd_estimate_pair(cfg):
    state = _state(cfg)
    if cfg.get("samples"):
        _write_samples(cfg, mc.simulate(state, cfg["trials"], cfg["seed"], cfg["horizon"],
                                        pair=cfg["pair"], workers=cfg["workers"]))
    est = mc.estimate_expected_T_pair(state, cfg["pair"], cfg["trials"], cfg["seed"],
                                      cfg["horizon"], cfg["blocks"], cfg["workers"])
    return {"m": cfg["m"], "gaps": cfg["gaps"], "pair": cfg["pair"], "seed": cfg["seed"],
            **est.to_dict()}, False


def cmd_limit_check(cfg):
    table = mc.check_limit_theorem(cfg["m"], cfg["pair"], tuple(cfg["fixed"]), cfg["far"],
                                   cfg["trials"], cfg["seed"], cfg["horizon"], cfg["blocks"],
                                   cfg["workers"])
    return {"seed": cfg["seed"], **table.to_dict()}, False


def cmd_tail(cfg):
    state = _state(cfg)
    batch = mc.simulate(state, cfg["trials"], cfg["seed"], cfg["horizon"], workers=cfg["workers"])
    _write_samples(cfg, batch)
    curve = mc.estimate_tail(state, cfg["thresholds"], cfg["trials"], cfg["seed"],
                             cfg["hill_fraction"], cfg["horizon"], cfg["workers"], batch=batch)
    return {"m": cfg["m"], "gaps": cfg["gaps"], "seed": cfg["seed"], **curve.to_dict()}, False


def _value(x):
    return se._fmt(x) if isinstance(x, Fraction) else float(x)


def cmd_solve(cfg):
    grid = sv.SolverGrid(cfg["m"], cfg["radius"], cfg["policy"])
    res = sv.solve_expected_T(grid, cfg["tol"], cfg["method"])
    out = {"solve": res.metadata()}
    if cfg["gaps"] is not None:
        out["gaps"] = cfg["gaps"]
        out["tau"] = _value(res.value(cfg["gaps"]))
    if cfg["csv"]:
        sv.export_bracket_csv(cfg["csv"], res, res)
    return out, False


def cmd_bracket(cfg):
    lower, upper = sv.bracket_grid(cfg["m"], cfg["radius"], cfg["tol"], cfg["method"])
    out = sv.bracket_metadata(lower, upper)
    if cfg["gaps"] is not None:
        out["gaps"] = cfg["gaps"]
        out["tau_lower"] = _value(lower.value(cfg["gaps"]))
        out["tau_upper"] = _value(upper.value(cfg["gaps"]))
    if cfg["csv"]:
        sv.export_bracket_csv(cfg["csv"], lower, upper)
    return out, False


def cmd_second_moment(cfg):
    rows = []
    for r in cfg["radii"]:
        grid = sv.SolverGrid(cfg["m"], r, "zero")
        tau = sv.solve_expected_T(grid, cfg["tol"], cfg["method"])
        s = sv.solve_second_moment_truncated(grid, tau, cfg["tol"], cfg["method"])
        rows.append({"radius": r, "tau": _value(tau.value(cfg["gaps"])),
                     "second_moment_lower": _value(s.value(cfg["gaps"])),
                     "residual": _value(s.residual)})
    return {"m": cfg["m"], "gaps": cfg["gaps"], "rows": rows}, False


def cmd_verify(cfg):
    suites = ["phi"] if cfg["suite"] == "phi" else None
    if suites:
        reports = [mv.verify_phi_supermartingale(cfg["phi_grid"] or cfg["grid"])]
    else:
        reports = mv.run_suite(cfg["suite"], cfg["m"], cfg["grid"], cfg["n_max"], cfg["phi_grid"])
    dicts = [r.to_dict() for r in reports]
    failures = [f | {"suite": r["suite"]} for r in dicts for f in r["failures"]]
    out = {"suite": cfg["suite"], "m": cfg["m"],
           "states_checked": sum(r["states_checked"] for r in dicts),
           "failures": failures, "reports": dicts}
    return out, bool(failures)


def cmd_series(cfg):
    action = cfg["action"]
    if action == "search":
        if cfg["family"] == "gamma":
            res = se.solve_gamma_family(cfg["degree"], cfg["normalize"])
        else:
            res = se.solve_linear_family(cfg["k"], cfg["degree"], cfg["normalize"])
        return {"action": action, "family": cfg["family"], **res.to_dict()}, False
    if action == "residual":
        f = se.MultiSeries.load(cfg["file"], cfg["degree"])
        if cfg["family"] == "gamma":
            r = se.residual_gamma_form(f, cfg["gamma"])
        else:
            r = se.residual_perfect(f, cfg["gamma"])
        return {"action": action, "family": cfg["family"], "gamma": se._fmt(cfg["gamma"]),
                "degree": f.max_degree, "working_degree": r.max_degree,
                "zero": r.is_zero(), "residual": r.to_json()}, not r.is_zero()
    rng = np.random.default_rng(cfg["seed"])
    k, D = cfg["vars"], cfg["degree"]
    if k < 2:
        raise ConfigError("vars", "commutativity needs at least two variables")
    bad = []
    for t in range(cfg["trials"]):
        f = se.random_series(rng, k, D)
        k1, k2 = (int(x) + 1 for x in rng.choice(k, size=2, replace=False))
        s1, s2 = (("+", "-")[int(x)] for x in rng.integers(0, 2, size=2))
        if not se.check_commutativity(s1, s2, k1, k2, f):
            bad.append({"trial": t, "slots": [k1, k2], "signs": [s1, s2]})
    return {"action": action, "vars": k, "degree": D, "trials": cfg["trials"],
            "seed": cfg["seed"], "failures": bad}, bool(bad)


COMMANDS = {
    "simulate": cmd_simulate, "estimate": cmd_estimate, "estimate-pair": cmd_estimate_pair,
    "limit-check": cmd_limit_check, "tail": cmd_tail, "solve": cmd_solve,
    "bracket": cmd_bracket, "second-moment": cmd_second_moment, "verify": cmd_verify,
    "series": cmd_series,
}


def _jsonable(x):
    if isinstance(x, Fraction):
        return se._fmt(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def run(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2
        return int(exc.code or 0)
    try:
        command, cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"tietime: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    started = time.time()
    try:
        summary, failed = COMMANDS[command](cfg)
    except ConfigError as exc:
        print(f"tietime: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"tietime: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except TieTimeError as exc:
        print(f"tietime: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {"command": command, **summary}
    if not cfg["no_meta"]:
        summary["meta"] = {"version": __version__, "started": started,
                           "elapsed_seconds": round(time.time() - started, 3)}
    text = json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_FAILED if failed else EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
