"""Command-line interface: config parsing, pipeline dispatch, report emission.

Subcommands: validate, homogenize, quad-homogenize, expand, diagram,
counterexample1, counterexample2, splitting.  Options may come from a flat
INI-style config file (section per subcommand plus [global]); explicit
flags override the file.  Reports are JSON (schema 1, embedding the full
resolved config) plus plot-ready CSV tables; identical config + seed
produces byte-identical files.

Exit codes: 0 success, 2 validation failure, 3 solver non-convergence,
64 usage error, 65 config parse error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, cells, domains
from .densities import Density, validate_class
from .errors import (
    AllStartsFailed,
    ConfigError,
    ElhomError,
    NotConverged,
)
from .grids import PeriodicGrid

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_USAGE = 64
EXIT_CONFIG = 65

COMMANDS = (
    "validate",
    "homogenize",
    "quad-homogenize",
    "expand",
    "diagram",
    "counterexample1",
    "counterexample2",
    "splitting",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# option table: every option carries its own string parser so values coming
# from the config file and from flags go through the same conversion
# ---------------------------------------------------------------------------


def _floats(s: str):
    return [float(t) for t in str(s).split(",") if t.strip() != ""]


def _ints(s: str):
    return [int(t) for t in str(s).split(",") if t.strip() != ""]


def parse_matrix(s: str, dim: int) -> np.ndarray:
    """Comma-separated row-major entries or a named shorthand.

    Shorthands: id, e1e1, e2e2, sym-shear; an optional leading '-' negates.
    """
    s = str(s).strip()
    sign = 1.0
    if s.startswith("-") and not s[1:2].isdigit():
        sign, s = -1.0, s[1:]
    named = {
        "id": np.eye(dim),
        "e1e1": np.outer(_unit(0, dim), _unit(0, dim)),
        "e2e2": np.outer(_unit(1, dim), _unit(1, dim)),
        "sym-shear": np.outer(_unit(0, dim), _unit(1, dim))
        + np.outer(_unit(1, dim), _unit(0, dim)),
    }
    if s in named:
        return sign * named[s]
    vals = _floats(s)
    if len(vals) != dim * dim:
        raise ConfigError(f"matrix needs {dim * dim} entries, got {len(vals)}: {s!r}")
    return sign * np.array(vals).reshape(dim, dim)


def _unit(i, dim):
    e = np.zeros(dim)
    e[i] = 1.0
    return e


GLOBAL_OPTS = {
    "out": dict(type=str, default="elhom-out", help="output directory"),
    "seed": dict(type=int, default=0, help="random seed"),
    "threads": dict(type=int, default=None, help="worker threads (env ELHOM_THREADS)"),
    "tol": dict(type=float, default=None, help="solver tolerance override"),
    "config": dict(type=str, default=None, help="INI config file"),
}

DENSITY_OPTS = {
    "density": dict(type=str, default="dist2",
                    help="dist2|stvk|homogeneous|layered|prestressed"),
    "base": dict(type=str, default=None, help="base energy for microstructures"),
    "alpha": dict(type=float, default=0.5, help="soft-phase stiffness"),
    "s": dict(type=float, default=0.3, help="prestress parameter"),
    "rho": dict(type=float, default=0.15, help="cylinder radius"),
    "dim": dict(type=int, default=None, help="space dimension (2 or 3)"),
}

COMMAND_OPTS = {
    "validate": {**DENSITY_OPTS, "samples": dict(type=int, default=200)},
    "homogenize": {
        **DENSITY_OPTS,
        "F": dict(type=str, default="id", help="deformation gradient"),
        "k": dict(type=_ints, default=[1], help="multi-cell factors"),
        "res": dict(type=int, default=16),
    },
    "quad-homogenize": {**DENSITY_OPTS, "res": dict(type=int, default=32)},
    "expand": {
        **DENSITY_OPTS,
        "G": dict(type=str, default="e1e1", help="perturbation direction"),
        "k": dict(type=int, default=1),
        "h": dict(type=_floats, default=[0.1, 0.05, 0.025]),
        "res": dict(type=int, default=16),
    },
    "diagram": {
        **DENSITY_OPTS,
        "eps": dict(type=_floats, default=[0.5, 0.25]),
        "h": dict(type=_floats, default=[0.1, 0.05]),
        "res": dict(type=int, default=16),
        "lift": dict(type=str, default=None, help="affine lift matrix (2x2)"),
        "lift-magnitude": dict(type=float, default=0.05),
        "force": dict(type=str, default=None, help="constant body force (2 entries)"),
    },
    "counterexample1": {
        "alpha": dict(type=float, default=1e-3),
        "delta": dict(type=_floats, default=[0.1, 0.2]),
        "k": dict(type=_ints, default=[1, 2, 4, 8]),
        "res": dict(type=int, default=16),
    },
    "counterexample2": {
        **DENSITY_OPTS,
        "G": dict(type=str, default="-e2e2"),
        "k": dict(type=_ints, default=[1, 2, 4]),
        "h": dict(type=_floats, default=[0.05, 0.1, 0.15, 0.2]),
        "res": dict(type=int, default=6),
    },
    "splitting": {
        "base": dict(type=str, default="stvk"),
        "s": dict(type=float, default=0.3),
        "rho": dict(type=float, default=0.15),
        "k": dict(type=int, default=1),
        "res": dict(type=int, default=10),
        "F": dict(type=str, default="id;compress-e2;near-id",
                  help="semicolon-separated matrices or named probes"),
    },
}

DEFAULT_TOL = {
    "homogenize": 1e-8,
    "expand": 1e-9,
    "diagram": 1e-9,
    "counterexample1": 1e-6,
    "counterexample2": 1e-6,
    "splitting": 1e-8,
}


def _build_parser():
    p = _Parser(prog="elhom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command")
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, add_help=True)
        for name, spec in {**GLOBAL_OPTS, **COMMAND_OPTS[cmd]}.items():
            sp.add_argument(
                f"--{name}",
                dest=name.replace("-", "_"),
                type=str,
                default=None,
                help=spec.get("help", ""),
            )
    return p


def _resolve_options(cmd: str, args) -> dict:
    """Merge defaults <- config file <- explicit flags, typed and validated."""
    table = {**GLOBAL_OPTS, **COMMAND_OPTS[cmd]}
    raw = {}
    cfg_path = args.config
    if cfg_path is not None:
        cp = configparser.ConfigParser()
        read = cp.read(cfg_path)
        if not read:
            raise ConfigError(f"config file not found: {cfg_path}")
        for section in ("global", cmd):
            if cp.has_section(section):
                allowed = GLOBAL_OPTS if section == "global" else table
                for key, val in cp.items(section):
                    norm = key.replace("-", "_")
                    match = next(
                        (n for n in allowed if n.replace("-", "_") == norm), None
                    )
                    if match is None:
                        raise ConfigError(
                            f"unknown key {key!r} in section [{section}]"
                        )
                    raw[match] = val
    resolved = {}
    for name, spec in table.items():
        dest = name.replace("-", "_")
        cli_val = getattr(args, dest, None)
        src = cli_val if cli_val is not None else raw.get(name)
        if src is None:
            resolved[dest] = spec["default"]
        else:
            try:
                resolved[dest] = spec["type"](src)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for --{name}: {src!r} ({exc})")
    if resolved.get("threads") is None:
        env = os.environ.get("ELHOM_THREADS")
        resolved["threads"] = int(env) if env else 1
    if resolved.get("tol") is None:
        resolved["tol"] = DEFAULT_TOL.get(cmd, 1e-8)
    return resolved


def density_from_options(opt: dict) -> Density:
    kind = opt["density"]
    base = opt.get("base")
    dim = opt.get("dim")
    if kind in ("dist2", "stvk"):
        return Density(kind, "homogeneous", dim or 2)
    if kind in ("homogeneous", "layered"):
        micro = kind
        return Density(base or "dist2", micro, dim or 2, alpha=opt["alpha"])
    if kind in ("prestressed", "prestressed_perforated"):
        return Density(
            base or "stvk",
            "prestressed_perforated",
            3,
            s=opt["s"],
            rho=opt["rho"],
        )
    raise ConfigError(f"unknown density kind {kind!r}")


def _validate_numerics(cmd: str, opt: dict):
    """Parameter preconditions checked before any solve starts."""
    def bad(msg):
        raise ValueError(msg)

    if "res" in opt:
        res = opt["res"]
        if res < 2 or res % 2 != 0:
            bad(f"res must be an even integer >= 2, got {res}")
    for key in ("k",):
        if key in opt:
            ks = opt[key] if isinstance(opt[key], list) else [opt[key]]
            if any(k < 1 for k in ks):
                bad("multi-cell factors must be >= 1")
    if "h" in opt and any(h <= 0 for h in opt["h"]):
        bad("perturbation sizes h must be positive")
    if "eps" in opt:
        for e in opt["eps"]:
            m = 1.0 / e
            if abs(m - round(m)) > 1e-9:
                bad(f"eps must be an integer inverse, got {e}")
    if "alpha" in opt and opt["alpha"] is not None and opt["alpha"] <= 0:
        bad("alpha must be positive")
    if "s" in opt and opt["s"] is not None and not 0 < opt["s"] < 0.5:
        bad("prestress s must lie in (0, 1/2)")
    if "rho" in opt and opt["rho"] is not None and not 0 < opt["rho"] < 0.25:
        bad("rho must lie in (0, 1/4)")
    if opt.get("threads", 1) < 1:
        bad("threads must be >= 1")


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def write_report(outdir: str, command: str, config: dict, results: dict, tables=None):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": 1,
        "command": command,
        "config": _jsonable(config),
        "results": _jsonable(results),
    }
    jpath = out / f"{command}.json"
    with open(jpath, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, rows in (tables or {}).items():
        with open(out / f"{command}_{name}.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return jpath


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def _cmd_validate(opt):
    W = density_from_options(opt)
    report = validate_class(W, sample_count=opt["samples"], seed=opt["seed"])
    rows = [("condition", "passed", "note")]
    for c in report.conditions:
        rows.append((c.name, c.passed, c.note))
    write_report(opt["out"], "validate", opt, report.to_dict(), {"conditions": rows})
    return EXIT_OK if report.all_passed else EXIT_VALIDATION


def _cmd_homogenize(opt):
    W = density_from_options(opt)
    F = parse_matrix(opt["F"], W.dim)
    records, running = cells.khom_curve(
        W, F, opt["k"], opt["res"], tol=opt["tol"], seed=opt["seed"]
    )
    rows = [("k", "energy", "running_min", "converged", "start")]
    rmap = dict(running)
    results = {"records": [], "running_min": [[int(k), float(e)] for k, e in running]}
    ok = True
    for k, r in records:
        rows.append((k, repr(float(r.energy)), repr(float(rmap[k])), r.converged,
                     r.start_label))
        results["records"].append(r.summary())
        ok = ok and r.converged
    write_report(opt["out"], "homogenize", opt, results, {"energies": rows})
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def _cmd_quad_homogenize(opt):
    W = density_from_options(opt)
    hom = cells.homogenized_tensor(
        W.quadratic_term(), PeriodicGrid(W.dim, 1, opt["res"])
    )
    results = {
        "L_hom": hom.L_hom.coeff.tolist(),
        "per_direction_energy": hom.per_direction_energy.tolist(),
        "major_symmetry_defect": hom.major_symmetry_defect,
        "psd": hom.L_hom.is_psd(),
    }
    rows = [("row",) + tuple(f"c{j}" for j in range(W.dim**2))]
    for i, row in enumerate(hom.L_hom.coeff):
        rows.append((i,) + tuple(repr(float(v)) for v in row))
    write_report(opt["out"], "quad-homogenize", opt, results, {"tensor": rows})
    return EXIT_OK


def _cmd_expand(opt):
    W = density_from_options(opt)
    G = parse_matrix(opt["G"], W.dim)
    rep = analysis.expansion_residuals(
        W, G, opt["k"], opt["h"], opt["res"], tol=opt["tol"], seed=opt["seed"]
    )
    write_report(opt["out"], "expand", opt, rep.to_dict(), {"residuals": rep.csv_rows()})
    return EXIT_OK


def _cmd_diagram(opt):
    W = density_from_options(opt)
    if opt["lift"] is not None:
        lift = parse_matrix(opt["lift"], 2)
    else:
        m = opt["lift_magnitude"]
        lift = np.array([[m, 0.0], [m, 0.0]])
    force = None
    if opt["force"] is not None:
        force = np.array(_floats(opt["force"]))
    mesh = domains.DomainMesh(opt["res"])
    rep = domains.diagram_probe(
        W,
        domains.Load(lift=lift, force=force),
        opt["eps"],
        opt["h"],
        mesh,
        tol=opt["tol"],
    )
    write_report(opt["out"], "diagram", opt, rep.to_dict(), {"paths": rep.csv_rows()})
    return EXIT_OK


def _cmd_counterexample1(opt):
    rep = analysis.counterexample1_pipeline(
        opt["alpha"], opt["delta"], opt["k"], opt["res"], tol=opt["tol"],
        seed=opt["seed"],
    )
    write_report(
        opt["out"], "counterexample1", opt, rep.to_dict(), {"energies": rep.csv_rows()}
    )
    return EXIT_OK


def _cmd_counterexample2(opt):
    opt = dict(opt)
    opt["density"] = "prestressed"
    W = density_from_options(opt)
    G = parse_matrix(opt["G"], 3)
    v = analysis.commutativity_probe(
        W, G, opt["k"], opt["h"], opt["res"], tol=opt["tol"], seed=opt["seed"]
    )
    write_report(
        opt["out"], "counterexample2", opt, v.to_dict(), {"energies": v.csv_rows()}
    )
    return EXIT_OK


_SPLIT_PROBES = {
    "id": lambda: np.eye(3),
    "compress-e2": lambda: np.diag([1.0, 0.95, 1.0]),
    "near-id": lambda: np.eye(3)
    + 0.04 * np.array([[0.3, 0.1, 0.0], [0.0, -0.2, 0.1], [0.1, 0.0, 0.2]]),
}


def _cmd_splitting(opt):
    F_list = []
    for token in str(opt["F"]).split(";"):
        token = token.strip()
        if not token:
            continue
        if token in _SPLIT_PROBES:
            F_list.append((token, _SPLIT_PROBES[token]()))
        else:
            F_list.append((token, parse_matrix(token, 3)))
    rep = analysis.splitting_check(
        opt["s"], opt["rho"], opt["k"], opt["res"], F_list,
        tol=opt["tol"], base=opt["base"] or "stvk", seed=opt["seed"],
    )
    write_report(opt["out"], "splitting", opt, rep.to_dict(), {"table": rep.csv_rows()})
    ok = all(r["converged"] for r in rep.rows)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


_IMPL = {
    "validate": _cmd_validate,
    "homogenize": _cmd_homogenize,
    "quad-homogenize": _cmd_quad_homogenize,
    "expand": _cmd_expand,
    "diagram": _cmd_diagram,
    "counterexample1": _cmd_counterexample1,
    "counterexample2": _cmd_counterexample2,
    "splitting": _cmd_splitting,
}


def run(argv) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"elhom: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print("elhom: missing subcommand", file=sys.stderr)
        return EXIT_USAGE
    try:
        opt = _resolve_options(args.command, args)
    except ConfigError as exc:
        print(f"elhom: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _validate_numerics(args.command, opt)
        density_probe = opt.get("density")
        if density_probe is not None:
            density_from_options(opt)  # raises on inconsistent parameters
    except (ValueError, ConfigError) as exc:
        print(f"elhom: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return _IMPL[args.command](opt)
    except (NotConverged, AllStartsFailed) as exc:
        print(f"elhom: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ConfigError as exc:
        print(f"elhom: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ElhomError as exc:
        print(f"elhom: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
