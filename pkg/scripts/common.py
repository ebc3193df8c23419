"""Shared plumbing for the experiment scripts: dataclass configs exposed as CLI flags."""
from __future__ import annotations

import argparse
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from stochabs.abstraction import build_abstraction, compute_footprints
from stochabs.cli import build_problem, validate_config
from stochabs.synthesis import rdp

ROOT = Path(__file__).resolve().parents[1]


def parse_into(cls, argv=None):
    """Build ``cls`` from command-line flags named after its fields."""
    ap = argparse.ArgumentParser(description=(cls.__doc__ or "").strip().splitlines()[0])
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        flag = "--" + f.name.replace("_", "-")
        if isinstance(default, bool):
            ap.add_argument(flag, action=argparse.BooleanOptionalAction, default=default)
        elif isinstance(default, (list, tuple)):
            kind = type(default[0]) if default else str
            ap.add_argument(flag, nargs="+", type=kind, default=list(default))
        else:
            ap.add_argument(flag, type=type(default), default=default)
    return cls(**vars(ap.parse_args(argv)))


def load_run_config(path, **overrides) -> dict:
    cfg = json.loads(Path(path).read_text())
    cfg.update(overrides)
    return validate_config(cfg)


def run_classes(cfg, threads=1):
    """Abstract and solve every class in ``cfg``; footprints are shared across classes."""
    prob = build_problem(cfg)
    t0 = time.perf_counter()
    fp = compute_footprints(prob.system, prob.partition, prob.noise)
    t_fp = time.perf_counter() - t0
    out = {}
    for kind in cfg["classes"]:
        t0 = time.perf_counter()
        abs_ = build_abstraction(prob.system, prob.partition, prob.noise, kind,
                                 prob.cover if kind == "TwoIMDP" else None, footprints=fp)
        t_abs = t_fp + time.perf_counter() - t0
        res = rdp(abs_, prob.spec, threads=threads)
        out[kind] = dict(abstraction=abs_, result=res, T_abs=t_abs, T_syn=res.seconds)
    return prob, out


def e_avg(result, partition) -> float:
    nt = partition.non_terminal
    return float(np.mean(result.p_upper[nt] - result.p_lower[nt]))


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"-> {path}")
