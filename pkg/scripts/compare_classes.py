"""Side-by-side comparison of the four abstraction classes on one configuration.

    python scripts/compare_classes.py --config configs/desk2d.json --out results/compare.csv
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from common import ROOT, e_avg, load_run_config, parse_into, run_classes, write_rows
from stochabs.abstraction import memory_report


@dataclass
class CompareConfig:
    """Tightness, timing and memory of every class on a shared partition."""
    config: str = str(ROOT / "configs" / "desk2d.json")
    classes: tuple = ("SMDP", "MIMDP", "TwoIMDP", "IMDP")
    threads: int = 1
    out: str = "results/compare.csv"


def main(argv=None):
    c = parse_into(CompareConfig, argv)
    cfg = load_run_config(c.config, classes=list(c.classes))
    prob, runs = run_classes(cfg, c.threads)
    part = prob.partition
    rows = []
    for kind, r in runs.items():
        res = r["result"]
        nt = part.non_terminal
        rows.append([kind, part.n_states, len(prob.system.actions), len(prob.noise),
                     f"{e_avg(res, part):.6f}", f"{np.mean(res.p_lower[nt]):.6f}",
                     f"{r['T_abs']:.3f}", f"{r['T_syn']:.3f}", memory_report(r["abstraction"])["total_entries"]])
    write_rows(c.out, ["class", "|S|", "|A|", "|C|", "e_avg", "p_lower_avg", "T_abs", "T_syn", "memory"], rows)

    # pointwise containment between neighbouring classes
    kinds = list(runs)
    for tight, loose in zip(kinds, kinds[1:]):
        a, b = runs[tight]["result"], runs[loose]["result"]
        print(f"{tight} inside {loose}: lower gap {np.max(b.p_lower - a.p_lower):.2e}, "
              f"upper gap {np.max(a.p_upper - b.p_upper):.2e}")


if __name__ == "__main__":
    main()
