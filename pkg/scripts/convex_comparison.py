#!/usr/bin/env python3
"""Convergence-rate comparison in the convex arena (both controllers, paired
seeds).  Writes per-run logs, summary curves and a small report."""

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from hmpcc.metrics import aggregate
from hmpcc.output import fmt, summary_text, write_atomic
from hmpcc.scenario import parse_scenario
from hmpcc.sim import run

SCENARIO = pathlib.Path(__file__).resolve().parent.parent / "scenarios" / "convex.yaml"


def time_to_fraction(log, frac=0.9):
    final = log.metric_E[-1]
    if final <= 0:
        return float("inf")
    return float(log.times[int(np.argmax(log.metric_E >= frac * final))])


def main(out_dir="hmpcc_out/convex_comparison"):
    sdef = parse_scenario(SCENARIO)
    report = {}
    for controller in ("hmpcc", "baseline"):
        logs = [run(sdef.instantiate(seed, controller=controller))
                for seed in sdef.seeds]
        summary = aggregate(logs)
        report[controller] = {
            "final_E": summary.final_E,
            "final_H": summary.final_H,
            "mean_time_to_90pct_E": float(np.mean([time_to_fraction(l) for l in logs])),
        }
        rows = ["t,mean_E,std_E,mean_H,std_H"]
        for i, t in enumerate(summary.times):
            rows.append(",".join(fmt(v) for v in (
                t, summary.mean_E[i], summary.std_E[i],
                summary.mean_H[i], summary.std_H[i])))
        write_atomic(f"{out_dir}/{controller}_curves.csv", "\n".join(rows) + "\n")
    write_atomic(f"{out_dir}/report.yaml", summary_text(report))
    print(summary_text(report), end="")
    print(f"wrote {out_dir}/report.yaml")


if __name__ == "__main__":
    main(*sys.argv[1:])
