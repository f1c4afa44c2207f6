"""Command-line experiment runner.

Each subcommand reads a TOML config (unknown keys are errors), validates it
completely, then writes one output directory with a resolved config copy,
CSV tables, a JSON summary and field snapshots.

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 precondition refusal, 5 run finished without a blow-up signal.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import pathlib
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import diagnostics as dg
from .grid import Field, GridError, GridSpec, load_snapshot, make_grid, save_snapshot
from .groundstate import DEFAULT_GRIDS, ConvergenceError, ground_state, petviashvili
from .refine import ExtractionRefused, decompose, tube_cover, write_decomposition
from .solver import (NumericalFailure, SolverConfig, estimate_blowup_time, evolve,
                     pseudoconformal_field)
from .spectral import TimeBox

log = logging.getLogger("nlsmass")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_REFUSED, EXIT_GLOBAL = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


# Schema: block -> key -> (type, default).  A default of None means optional.
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"dim": (int, 1), "extent": (float, None), "points": (int, None)},
    "solver": {"gamma": (float, 1.0), "dt": (float, 1e-3), "policy": (str, "adaptive"),
               "cutoff": (float, None), "stride": (int, 10), "c_adapt": (float, 0.05),
               "t_target": (float, 2.0), "mass_tolerance": (float, 1e-6)},
    "exponents": {"p": (float, None), "j_min": (int, None), "j_max": (int, None)},
    "groundstate": {"tol": (float, 1e-10), "max_iter": (int, 500)},
    "blowup": {"mode": (str, "gaussian"), "amplitude": (float, 3.0), "T_blow": (float, 1.0),
               "t_start": (float, 0.0), "snapshots": (int, 40), "tail": (int, 12)},
    "strichartz": {"samples": (int, 32), "calibration_samples": (int, 16), "margin": (float, 1.25),
                   "t_min": (float, -0.5), "t_max": (float, 0.5), "time_samples": (int, 65),
                   "m_max": (int, 4), "xi_range": (float, 0.5), "family_extent": (float, 128.0),
                   "family_points": (int, 8192), "family_t_max": (float, 0.1)},
    "decompose": {"input": (str, None), "epsilon": (float, None), "epsilon_fraction": (float, 0.3),
                  "max_pieces": (int, 64), "t_min": (float, -8.0), "t_max": (float, 8.0),
                  "time_samples": (int, 513), "calibration_samples": (int, 16), "tubes": (bool, True)},
    "profiles": {"n_max": (int, 4), "t_min": (float, -0.25), "t_max": (float, 0.25),
                 "time_samples": (int, 33), "scores": (list, [4.0, 16.0, 64.0])},
}
TOP_LEVEL = {"seed": (int, 0), "out": (str, None)}

COMMAND_BLOCKS = {
    "groundstate": ("grid", "groundstate"),
    "blowup": ("grid", "solver", "blowup", "groundstate"),
    "strichartz": ("grid", "exponents", "strichartz"),
    "decompose": ("grid", "exponents", "decompose"),
    "profiles": ("grid", "profiles"),
}

DEFAULT_GRID = {
    "groundstate": None,
    "blowup": {1: (32.0, 16384), 2: (32.0, 512)},
    "strichartz": {1: (128.0, 1024), 2: (48.0, 256)},
    "decompose": {1: (64.0, 512), 2: (32.0, 128)},
    "profiles": {1: (384.0, 4096), 2: (128.0, 512)},
}


def _coerce(value, typ, where):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is list and isinstance(value, list):
        return [float(v) for v in value]
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def resolve_config(raw: dict, command: str) -> dict:
    """Fill defaults and reject unknown blocks or keys."""
    out: dict = {}
    for key, val in raw.items():
        if isinstance(val, dict):
            if key not in SCHEMA:
                raise ConfigError(f"unknown block [{key}]")
            if key not in COMMAND_BLOCKS[command]:
                raise ConfigError(f"block [{key}] is not used by '{command}'")
            for k in val:
                if k not in SCHEMA[key]:
                    raise ConfigError(f"unknown key {key}.{k}")
        elif key not in TOP_LEVEL:
            raise ConfigError(f"unknown key {key}")
    for key, (typ, default) in TOP_LEVEL.items():
        out[key] = _coerce(raw[key], typ, key) if key in raw else default
    for block in COMMAND_BLOCKS[command]:
        given = raw.get(block, {})
        out[block] = {k: (_coerce(given[k], typ, f"{block}.{k}") if k in given else copy.copy(d))
                      for k, (typ, d) in SCHEMA[block].items()}
    return out


def build_grid(cfg: dict, command: str) -> GridSpec:
    g = cfg["grid"]
    dim = g["dim"]
    if not 1 <= dim <= 3:
        raise ConfigError("grid.dim must be 1, 2 or 3")
    table = DEFAULT_GRID[command] or DEFAULT_GRIDS
    extent, points = table.get(dim, (None, None)) if isinstance(table, dict) else (None, None)
    extent = g["extent"] if g["extent"] is not None else extent
    points = g["points"] if g["points"] is not None else points
    if extent is None or points is None:
        raise ConfigError(f"grid.extent and grid.points are required for dim {dim}")
    try:
        return make_grid(dim, extent, points)
    except GridError as exc:
        raise ConfigError(str(exc)) from exc


def _box(block: dict) -> TimeBox:
    try:
        return TimeBox(block["t_min"], block["t_max"], block["time_samples"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _exponents(cfg: dict, dim: int) -> tuple[dg.ExponentSet, tuple[int, int] | None]:
    ex = dg.admissible_exponents(dim)
    e = cfg["exponents"]
    if e["p"] is not None:
        try:
            ex = ex.with_p(e["p"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    jr = None
    if (e["j_min"] is None) != (e["j_max"] is None):
        raise ConfigError("exponents.j_min and exponents.j_max go together")
    if e["j_min"] is not None:
        if e["j_min"] > e["j_max"]:
            raise ConfigError("empty scale window")
        jr = (e["j_min"], e["j_max"])
    return ex, jr


def _dump(path: pathlib.Path, obj) -> None:
    dg.write_summary_json(path, obj)


# -- subcommands --------------------------------------------------------------

def cmd_groundstate(cfg: dict, out: pathlib.Path, workers: int) -> int:
    spec = build_grid(cfg, "groundstate")
    gcfg = cfg["groundstate"]
    if not gcfg["tol"] > 0 or gcfg["max_iter"] < 1:
        raise ConfigError("groundstate.tol must be positive and max_iter >= 1")
    try:
        gs = petviashvili(spec, tol=gcfg["tol"], max_iter=gcfg["max_iter"])
    except ConvergenceError as exc:
        log.error("%s", exc)
        _dump(out / "groundstate.json", {"converged": False, "last_residual": exc.last_residual})
        return EXIT_NUMERIC
    gs.export(out / "Q.field", out / "groundstate.json")
    log.info("mass_sq = %.10f", gs.mass_sq)
    return EXIT_OK


def _blowup_initial(cfg: dict, spec: GridSpec) -> Field:
    b = cfg["blowup"]
    amp = b["amplitude"]
    if b["mode"] == "gaussian":
        return Field.from_function(spec, lambda *x: amp * np.exp(-np.pi * sum(c**2 for c in x)))
    gs = ground_state(spec.dim)
    return Field.from_function(spec, lambda *x: amp * gs(*x))


def cmd_blowup(cfg: dict, out: pathlib.Path, workers: int) -> int:
    spec = build_grid(cfg, "blowup")
    b, s = cfg["blowup"], cfg["solver"]
    if b["mode"] not in ("gaussian", "lambda_q", "pseudoconformal"):
        raise ConfigError(f"unknown blowup.mode {b['mode']!r}")
    try:
        scfg = SolverConfig(gamma=s["gamma"], dt_base=s["dt"], dt_policy=s["policy"],
                            amplitude_cutoff=s["cutoff"], snapshot_stride=s["stride"],
                            c_adapt=s["c_adapt"], mass_tolerance=s["mass_tolerance"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not s["t_target"] > 0 or b["tail"] < 8:
        raise ConfigError("solver.t_target must be positive and blowup.tail >= 8")
    summary: dict = {"mode": b["mode"], "dim": spec.dim}
    if b["mode"] == "pseudoconformal":
        return _pseudoconformal_replay(cfg, spec, out, workers, summary)
    u0 = _blowup_initial(cfg, spec)
    traj = evolve(u0, s["t_target"], scfg)
    traj.write_csv(out / "trajectory.csv")
    save_snapshot(out / "final.field", traj.series[-1])
    summary.update({"truncated": traj.truncated, "valid": traj.valid, "steps": traj.steps,
                    "mass_drift": traj.mass_drift(), "t_final": float(traj.times[-1]),
                    "spacetime_norm": traj.spacetime_norm(), "initial_mass": u0.mass()})
    if not traj.truncated:
        summary["verdict"] = "global-looking"
        _dump(out / "summary.json", summary)
        log.info("no blow-up signal up to t=%.4g", traj.times[-1])
        return EXIT_GLOBAL
    est = estimate_blowup_time(traj, tail=b["tail"])
    summary["blowup"] = est
    if not math.isfinite(est.T_est):
        _dump(out / "summary.json", summary)
        return EXIT_NUMERIC
    for rule in ("fixed", "log", "quarter"):
        reps = dg.concentration_series(traj, est.T_est, rule, workers=workers)
        dg.write_reports_csv(out / f"concentration_{rule}.csv", reps)
        if reps:
            summary[f"last_fraction_{rule}"] = reps[-1].fraction
    summary["verdict"] = "blow-up suspected"
    _dump(out / "summary.json", summary)
    return EXIT_OK


def _pseudoconformal_replay(cfg, spec, out, workers, summary) -> int:
    b = cfg["blowup"]
    T = b["T_blow"]
    if not T > b["t_start"]:
        raise ConfigError("blowup.T_blow must exceed blowup.t_start")
    gs = ground_state(spec.dim)
    times = T - (T - b["t_start"]) * np.logspace(0, -3, b["snapshots"])
    fields, kept = [], []
    for t in times:
        try:
            fields.append(pseudoconformal_field(gs, spec, T, t))
            kept.append(float(t))
        except GridError:
            continue
    if len(kept) < 2:
        log.error("no resolvable snapshots in the replay window")
        return EXIT_NUMERIC
    from .grid import SpacetimeSeries

    series = SpacetimeSeries.from_fields(kept, fields)
    summary.update({"q_mass": gs.mass_sq, "snapshots": len(kept), "t_last": kept[-1]})
    for rule in ("fixed", "log", "quarter"):
        reps = dg.concentration_series(series, T, rule, workers=workers)
        dg.write_reports_csv(out / f"concentration_{rule}.csv", reps)
        if reps:
            summary[f"last_fraction_{rule}"] = reps[-1].fraction
            summary[f"last_mass_{rule}"] = reps[-1].mass_in_ball
    _dump(out / "summary.json", summary)
    return EXIT_OK


def cmd_strichartz(cfg: dict, out: pathlib.Path, workers: int) -> int:
    spec = build_grid(cfg, "strichartz")
    st = cfg["strichartz"]
    if st["samples"] < 1 or st["calibration_samples"] < 1:
        raise ConfigError("strichartz.samples and calibration_samples must be >= 1")
    if st["m_max"] < 0:
        raise ConfigError("strichartz.m_max must be >= 0")
    box = _box(st)
    ex, jr = _exponents(cfg, spec.dim)
    seed = cfg["seed"]
    cal = dg.calibrate_refined_constant(spec, box, samples=st["calibration_samples"], seed=seed,
                                        exponents=ex, margin=st["margin"], xi_range=st["xi_range"])
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
    inputs = [dg.random_localized_input(spec, rng, xi_range=st["xi_range"]) for _ in range(st["samples"])]

    def one(g):
        return dg.refined_ratio(g, box, ex, jr).ratio

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            ratios = list(pool.map(one, inputs))
    else:
        ratios = [one(g) for g in inputs]
    fam_spec = make_grid(1, st["family_extent"], st["family_points"])
    fam_box = TimeBox(0.0, st["family_t_max"], 129)
    curve = []
    for m in range(st["m_max"] + 1):
        g = dg.separated_cube_family(fam_spec, m, spacing=2.0, spread=4.0)
        curve.append(dg.refined_ratio(g, fam_box).lhs / math.sqrt(g.mass()))
    summary = {
        "dim": spec.dim,
        "exponents": ex,
        "c_emp": cal.c_emp,
        "calibration_ratios": list(cal.ratios),
        "ratios": ratios,
        "max_ratio": max(ratios),
        "all_below_c_emp": bool(max(ratios) <= cal.c_emp),
        "separated_family_curve": curve,
        "curve_strictly_decreasing": bool(all(b < a for a, b in zip(curve, curve[1:]))),
    }
    _dump(out / "summary.json", summary)
    return EXIT_OK


def cmd_decompose(cfg: dict, out: pathlib.Path, workers: int, input_path: str | None) -> int:
    d = cfg["decompose"]
    path = input_path or d["input"]
    if path is None:
        raise ConfigError("an input snapshot is required (argument or decompose.input)")
    try:
        f = load_snapshot(path)
    except (OSError, GridError) as exc:
        raise ConfigError(f"cannot read snapshot {path}: {exc}") from exc
    if d["max_pieces"] < 0:
        raise ConfigError("decompose.max_pieces must be >= 0")
    box = _box(d)
    cfg["grid"].update({"dim": f.spec.dim, "extent": f.spec.extent, "points": f.spec.points})
    ex, jr = _exponents(cfg, f.spec.dim)
    cal = dg.calibrate_refined_constant(f.spec, box, samples=d["calibration_samples"],
                                        seed=cfg["seed"], exponents=ex)
    from .spectral import free_spacetime_norm

    norm = free_spacetime_norm(f, box.times, float(ex.q))
    eps = d["epsilon"] if d["epsilon"] is not None else d["epsilon_fraction"] * norm
    if not eps > 0:
        raise ConfigError("epsilon must be positive")
    dec = decompose(f, eps, box, cal.c_emp, d["max_pieces"], ex, jr)
    covers = None
    if d["tubes"] and dec.pieces:
        def cover(p):
            return tube_cover(p, eps, box, ex)

        try:
            if workers > 1:
                with ThreadPoolExecutor(workers) as pool:
                    covers = list(pool.map(cover, dec.pieces))
            else:
                covers = [cover(p) for p in dec.pieces]
        except ValueError as exc:
            log.error("tube cover failed: %s", exc)
            write_decomposition(out, dec)
            return EXIT_NUMERIC
    write_decomposition(out, dec, covers)
    if norm < eps:
        log.warning("input norm %.4g is below epsilon %.4g: nothing to extract", norm, eps)
        return EXIT_REFUSED
    return EXIT_OK if dec.converged else EXIT_NUMERIC


def cmd_profiles(cfg: dict, out: pathlib.Path, workers: int) -> int:
    spec = build_grid(cfg, "profiles")
    pr = cfg["profiles"]
    if pr["n_max"] < 0:
        raise ConfigError("profiles.n_max must be >= 0")
    if any(s < 2 for s in pr["scores"]):
        raise ConfigError("profiles.scores must be >= 2")
    box = _box(pr)
    n = spec.dim
    zero = (0.0,) * n

    def phi(*x):
        return np.exp(-np.pi * sum(c**2 for c in x))

    ns = list(range(pr["n_max"] + 1))
    base = dg.ProfileParams(1.0, 0.0, zero, zero)
    scaled = [dg.ProfileParams(2.0**k, 0.0, zero, zero) for k in ns]
    summary: dict = {"dim": n, "n": ns}
    summary["scores_identical"] = [dg.orthogonality_score(base, base) for _ in ns]
    summary["scores_scale_separated"] = [dg.orthogonality_score(a, base) for a in scaled]
    status = EXIT_OK
    try:
        summary["decay_identical"] = dg.product_norm_decay(phi, phi, [base] * len(ns), [base] * len(ns),
                                                           spec, box, workers)
        summary["decay_scale_separated"] = dg.product_norm_decay(phi, phi, scaled, [base] * len(ns),
                                                                 spec, box, workers)
    except GridError as exc:
        log.error("box overflow: %s", exc)
        summary["box_overflow"] = str(exc)
        status = EXIT_NUMERIC
    cross = []
    for s in pr["scores"]:
        r = 0.5 * (s + math.sqrt(s * s - 4))
        try:
            cross.append(dg.pythagorean_defect([phi, phi], spec, [base, dg.ProfileParams(r, 0.0, zero, zero)]))
        except GridError as exc:
            summary["box_overflow"] = str(exc)
            cross.append(None)
            status = EXIT_NUMERIC
    summary["pythagorean_scores"] = pr["scores"]
    summary["pythagorean_cross_terms"] = cross
    _dump(out / "summary.json", summary)
    return status


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlsmass", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=pathlib.Path, help="TOML experiment config")
    common.add_argument("--out", type=pathlib.Path, help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    common.add_argument("--workers", type=int, default=1, help="worker pool size")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("groundstate", "compute the ground state Q"),
                        ("blowup", "simulate focusing data and scan for concentration"),
                        ("strichartz", "refined Strichartz sweeps"),
                        ("profiles", "profile orthogonality and product decay")]:
        sub.add_parser(name, parents=[common], help=help_)
    dec = sub.add_parser("decompose", parents=[common], help="greedy frequency decomposition of a snapshot")
    dec.add_argument("input", nargs="?", help="field snapshot to decompose")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        raw = {}
        if args.config is not None:
            with open(args.config, "rb") as fh:
                raw = tomllib.load(fh)
        cfg = resolve_config(raw, args.command)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = args.out or (pathlib.Path(cfg["out"]) if cfg["out"] else None)
        if out is None:
            raise ConfigError("an output directory is required (--out or out = ...)")
        if args.command != "decompose":
            build_grid(cfg, args.command)  # validate before any compute
    except (ConfigError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    try:
        if args.command == "decompose":
            return cmd_decompose(cfg, out, args.workers, args.input)
        handler = {"groundstate": cmd_groundstate, "blowup": cmd_blowup,
                   "strichartz": cmd_strichartz, "profiles": cmd_profiles}[args.command]
        return handler(cfg, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExtractionRefused as exc:
        log.error("refused: %s", exc)
        return EXIT_REFUSED
    except (NumericalFailure, ConvergenceError, GridError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
