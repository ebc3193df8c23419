"""Command-line pipeline: abstract -> synthesize -> simulate -> report.

Every stage reads the previous stage's files from the output directory, so an
expensive abstraction can be reused across specifications.  Exit codes: 0 on
success, 2 for configuration errors (with the offending field path), 1 when a
stage fails (with the stage name).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .abstraction import KINDS, Abstraction, build_abstraction, compute_footprints, memory_report
from .geometry import Rect, build_grid_partition, coarse_cover, partition_from_edges
from .noise import build_noise_partition
from .synthesis import Spec, SynthesisResult, rdp, refine_controller
from .systems import make_system
from .validation import RunReport, compute_metrics, run_monte_carlo, sample_initial_states

log = logging.getLogger("stochabs")

SCHEMA_VERSION = 1

_BOX = {
    "type": "object",
    "required": ["lower", "upper"],
    "additionalProperties": False,
    "properties": {
        "lower": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "upper": {"type": "array", "items": {"type": "number"}, "minItems": 1},
    },
}
_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "stoch-abstract run configuration",
    "type": "object",
    "required": ["version", "system", "grid", "reach", "noise", "classes"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "system": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string", "pattern": "^(example1|affine2d|unicycle3d|rooms_n|rooms_[234])$"},
                "params": {"type": "object"},
            },
        },
        "grid": {
            "oneOf": [
                {"type": "object", "required": ["lower", "upper", "cells"], "additionalProperties": False,
                 "properties": {"lower": _BOX["properties"]["lower"], "upper": _BOX["properties"]["upper"],
                                "cells": _INT_LIST}},
                {"type": "object", "required": ["edges"], "additionalProperties": False,
                 "properties": {"edges": {"type": "array", "minItems": 1,
                                          "items": {"type": "array", "items": {"type": "number"},
                                                    "minItems": 2}}}},
            ]
        },
        "reach": _BOX,
        "avoid": {"type": "array", "items": _BOX},
        "noise": {
            "type": "object",
            "required": ["cells"],
            "additionalProperties": False,
            "properties": {
                "cells": _INT_LIST,
                "w0": {"type": "array", "items": {"type": "number"}},
                "r_W": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "classes": {"type": "array", "items": {"enum": list(KINDS)}, "minItems": 1, "uniqueItems": True},
        "cover_block": {"oneOf": [{"type": "integer", "minimum": 1}, _INT_LIST]},
        "spec": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "horizon": {"type": ["integer", "null"], "minimum": 0},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_initial": {"type": "integer", "minimum": 1},
                "n_traj": {"type": "integer", "minimum": 1},
                "max_steps": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
}


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class StageError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


def _field_path(parts) -> str:
    out = "config"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate_config(cfg: dict) -> dict:
    """Schema check plus the cross-field checks a schema cannot express."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        # oneOf failures hide the useful message one level down
        best = jsonschema.exceptions.best_match([err]) if err.context else err
        raise ConfigError(_field_path(best.absolute_path), best.message)

    grid = cfg["grid"]
    dim = len(grid["edges"]) if "edges" in grid else len(grid["lower"])
    if "edges" not in grid:
        for key in ("upper", "cells"):
            if len(grid[key]) != dim:
                raise ConfigError(f"config.grid.{key}", f"expected {dim} entries")
        for i, (lo, hi) in enumerate(zip(grid["lower"], grid["upper"])):
            if not lo < hi:
                raise ConfigError(f"config.grid.upper[{i}]", "must exceed the lower corner")
    else:
        for i, e in enumerate(grid["edges"]):
            if np.any(np.diff(e) <= 0):
                raise ConfigError(f"config.grid.edges[{i}]", "edges must be strictly increasing")
    boxes = [("config.reach", cfg["reach"])] + [(f"config.avoid[{i}]", b) for i, b in enumerate(cfg.get("avoid", []))]
    for path, b in boxes:
        for key in ("lower", "upper"):
            if len(b[key]) != dim:
                raise ConfigError(f"{path}.{key}", f"expected {dim} entries")
    cb = cfg.get("cover_block")
    if isinstance(cb, list) and len(cb) != dim:
        raise ConfigError("config.cover_block", f"expected {dim} entries")
    return cfg


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return validate_config(cfg)


_ABSTRACTION_KEYS = ("system", "grid", "reach", "avoid", "noise", "cover_block")
_SYNTHESIS_KEYS = _ABSTRACTION_KEYS + ("spec",)


def config_digest(cfg: dict, keys=_ABSTRACTION_KEYS) -> str:
    """Hash of the config fields a stage's output depends on."""
    core = {k: cfg.get(k) for k in keys}
    return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Problem:
    system: object
    noise_model: object
    partition: object
    noise: object
    cover: list | None
    spec: Spec


def build_problem(cfg: dict) -> Problem:
    """Instantiate the system, partitions and objective described by a config."""
    sysd = cfg["system"]
    try:
        system, noise_model = make_system(sysd["name"], **sysd.get("params", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError("config.system.params", str(exc)) from None
    grid = cfg["grid"]
    reach = Rect(cfg["reach"]["lower"], cfg["reach"]["upper"])
    avoid = [Rect(b["lower"], b["upper"]) for b in cfg.get("avoid", [])]
    try:
        if "edges" in grid:
            part = partition_from_edges(grid["edges"], reach, avoid)
        else:
            part = build_grid_partition(Rect(grid["lower"], grid["upper"]), grid["cells"], reach, avoid)
    except ValueError as exc:
        raise ConfigError("config.grid", str(exc)) from None
    if part.dim != system.dim:
        raise ConfigError("config.grid", f"grid has dimension {part.dim}, system has {system.dim}")
    nz = cfg["noise"]
    if len(nz["cells"]) not in (1, noise_model.dim):
        raise ConfigError("config.noise.cells", f"expected {noise_model.dim} entries")
    try:
        noise = build_noise_partition(noise_model, nz["cells"], nz.get("w0"), nz.get("r_W"))
    except ValueError as exc:
        raise ConfigError("config.noise", str(exc)) from None
    cover = coarse_cover(part, cfg.get("cover_block", 2)) if "TwoIMDP" in cfg["classes"] else None
    sp = cfg.get("spec", {})
    spec = Spec.for_partition(part, horizon=sp.get("horizon"), epsilon=sp.get("epsilon", 1e-6),
                              max_iter=sp.get("max_iter", 10_000))
    return Problem(system, noise_model, part, noise, cover, spec)


# stage implementations

def _out_dir(cfg, override) -> Path:
    out = Path(override or cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _timings(out: Path) -> dict:
    p = out / "timings.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _store_timing(out: Path, kind: str, key: str, seconds: float):
    t = _timings(out)
    t.setdefault(kind, {})[key] = seconds
    (out / "timings.json").write_text(json.dumps(t, indent=1, sort_keys=True))


def _need(path: Path, stage: str, producer: str) -> Path:
    if not path.exists():
        raise StageError(stage, f"missing input {path.name}; run '{producer}' first")
    return path


def _check_digest(meta_digest, cfg, stage, path, keys=_ABSTRACTION_KEYS):
    if meta_digest != config_digest(cfg, keys):
        raise StageError(stage, f"{path.name} was produced from a different configuration")


def cmd_abstract(cfg, out: Path, threads=1) -> list:
    prob = build_problem(cfg)
    t0 = time.perf_counter()
    fp = compute_footprints(prob.system, prob.partition, prob.noise)
    t_fp = time.perf_counter() - t0
    paths = []
    for kind in cfg["classes"]:
        abs_ = build_abstraction(prob.system, prob.partition, prob.noise, kind,
                                 prob.cover if kind == "TwoIMDP" else None, footprints=fp)
        abs_.meta.update(config_digest=config_digest(cfg), system=cfg["system"])
        path = out / f"abstraction_{kind}.json"
        abs_.save(path)
        _store_timing(out, kind, "T_abs", t_fp + abs_.build_seconds)
        log.info("%s abstraction: %d states, %.2fs -> %s", kind, prob.partition.n_states,
                 t_fp + abs_.build_seconds, path)
        paths.append(path)
    return paths


def cmd_synthesize(cfg, out: Path, threads=1) -> list:
    prob = build_problem(cfg)
    paths = []
    for kind in cfg["classes"]:
        src = _need(out / f"abstraction_{kind}.json", "synthesize", "abstract")
        abs_ = Abstraction.load(src)
        _check_digest(abs_.meta.get("config_digest"), cfg, "synthesize", src)
        res = rdp(abs_, prob.spec, threads=threads)
        path = out / f"result_{kind}.json"
        res.save(path)
        _store_timing(out, kind, "T_syn", res.seconds)
        (out / f"result_{kind}.digest").write_text(config_digest(cfg, _SYNTHESIS_KEYS))
        log.info("%s synthesis: %d sweeps, residual %.2e, %.2fs", kind, res.iterations, res.residual, res.seconds)
        paths.append(path)
    return paths


def cmd_simulate(cfg, out: Path, threads=1) -> list:
    prob = build_problem(cfg)
    sim = cfg.get("simulation", {})
    seed = int(cfg.get("seed", 0))
    n_init = sim.get("n_initial", 100)
    paths = []
    for k, kind in enumerate(cfg["classes"]):
        src = _need(out / f"result_{kind}.json", "simulate", "synthesize")
        dig = out / f"result_{kind}.digest"
        _check_digest(dig.read_text() if dig.exists() else None, cfg, "simulate", src, _SYNTHESIS_KEYS)
        res = SynthesisResult.load(src)
        abs_path = _need(out / f"abstraction_{kind}.json", "simulate", "abstract")
        mem = memory_report(Abstraction.load(abs_path))
        # initial states depend on the seed only, so every class is checked on the same set
        init = sample_initial_states(prob.partition, n_init, np.random.default_rng(seed))
        ctrl = refine_controller(res, prob.partition)
        t0 = time.perf_counter()
        mc = run_monte_carlo(prob.system, prob.noise_model, ctrl, prob.partition, init,
                             n_traj=sim.get("n_traj", 1000), seed=seed + 1 + k,
                             max_steps=sim.get("max_steps", 1000), horizon=prob.spec.horizon, threads=threads)
        _store_timing(out, kind, "T_mc", time.perf_counter() - t0)
        rep = compute_metrics(res, prob.partition, init, mc, memory=mem,
                              n_actions=len(prob.system.actions), n_cells=len(prob.noise), seed=seed)
        path = out / f"report_{kind}.json"
        rep.save(path)
        rep.write_csv(out / f"report_{kind}.csv")
        log.info("%s: e_avg %.4f, %d flagged of %d", kind, rep.e_avg, len(rep.violations), len(init))
        paths.append(path)
    return paths


COMPARISON_COLUMNS = ["class", "|S|", "|A|", "|C|", "e_avg", "T_abs", "T_syn", "memory", "p_lower_avg",
                      "p_upper_avg", "P_kappa_avg"]


def write_heatmap(path, partition, result):
    """One row per safe cell: centre coordinates, lower and upper bound."""
    lo, hi = partition.region_bounds()
    centres = 0.5 * (lo + hi)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(partition.dim)] + ["state", "p_lower", "p_upper"])
        for s in range(partition.n_safe):
            w.writerow([repr(float(c)) for c in centres[s]] + [s, repr(float(result.p_lower[s])),
                                                              repr(float(result.p_upper[s]))])


def cmd_report(cfg, out: Path, threads=1) -> Path:
    found = [k for k in cfg["classes"] if (out / f"report_{k}.json").exists()]
    if not found:
        raise ConfigError("config.classes", f"no report files in {out}; run 'simulate' first")
    timings = _timings(out)
    rows = []
    for kind in found:
        rep = RunReport.load(out / f"report_{kind}.json")
        res_path = out / f"result_{kind}.json"
        if res_path.exists():
            res = SynthesisResult.load(res_path)
            write_heatmap(out / f"heatmap_{kind}.csv", build_problem(cfg).partition, res)
        t = timings.get(kind, {})
        rows.append([kind, rep.n_states, rep.n_actions, rep.n_cells, rep.e_avg, t.get("T_abs", ""),
                     t.get("T_syn", ""), rep.memory.get("total_entries", ""), rep.p_lower_avg, rep.p_upper_avg,
                     rep.mc_avg if rep.mc_avg is not None else ""])
    path = out / "comparison.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        w.writerows(rows)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "e_avg", "p_lower_avg", "p_upper_avg", "mc_avg", "flagged", "n_initial"])
        for kind in found:
            rep = RunReport.load(out / f"report_{kind}.json")
            w.writerow([kind, repr(rep.e_avg), repr(rep.p_lower_avg), repr(rep.p_upper_avg),
                        repr(rep.mc_avg), len(rep.violations), len(rep.initial_states)])
    for r in rows:
        print("  ".join(f"{c:.4g}" if isinstance(c, float) else str(c) for c in r))
    return path


COMMANDS = {"abstract": cmd_abstract, "synthesize": cmd_synthesize, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stoch-abstract", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None, help="output directory (overrides the config's 'out')")
    args = ap.parse_args(argv)
    logging.basicConfig(level=os.environ.get("STOCHABS_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        out = _out_dir(cfg, args.out)
        COMMANDS[args.command](cfg, out, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # any compute failure is reported against its stage
        print(f"error: stage '{args.command}' failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
