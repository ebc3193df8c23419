"""SMDP tightness as the state grid is refined.

    python scripts/refinement_trend.py --cells 15 30 45
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from common import ROOT, e_avg, load_run_config, parse_into, run_classes, write_rows


@dataclass
class TrendConfig:
    """One abstraction per grid resolution, same system and noise cells."""
    config: str = str(ROOT / "configs" / "desk2d.json")
    cells: tuple = (15, 30)
    kind: str = "SMDP"
    threads: int = 1
    out: str = "results/refinement.csv"


def main(argv=None):
    c = parse_into(TrendConfig, argv)
    base = json.loads(Path(c.config).read_text())
    rows, prev = [], None
    for n in c.cells:
        grid = dict(base["grid"], cells=[n] * len(base["grid"]["cells"]))
        cfg = load_run_config(c.config, grid=grid, classes=[c.kind])
        prob, runs = run_classes(cfg, c.threads)
        r = runs[c.kind]
        e = e_avg(r["result"], prob.partition)
        rows.append([n, prob.partition.n_states, f"{e:.6f}", f"{r['T_abs']:.2f}", f"{r['T_syn']:.2f}",
                     "" if prev is None else str(e < prev)])
        prev = e
    write_rows(c.out, ["cells_per_axis", "|S|", "e_avg", "T_abs", "T_syn", "decreased"], rows)


if __name__ == "__main__":
    main()
