"""Command-line interface: run, batch, compare, snapshot.

Exit codes: 0 success, 1 usage or scenario-file error, 2 runtime failure.
Output directory resolution order: --out flag, HMPCC_OUT environment
variable, the scenario file's run.outputs entry, then ./hmpcc_out.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys

from . import metrics, output, scenario as scenario_io, sim

OUT_ENV = "HMPCC_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1
        raise scenario_io.ScenarioError(f"usage error: {message}")


def _build_parser():
    p = _Parser(prog="hmpcc", description="Coverage-control simulation runner")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a single seeded run")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--controller", choices=["hmpcc", "baseline"], default=None)

    batch = sub.add_parser("batch", help="execute a batch of seeded runs")
    batch.add_argument("scenario")
    batch.add_argument("--seeds", default=None, help="e.g. '1..10' or '1,2,5'")
    batch.add_argument("--jobs", type=int, default=1)
    batch.add_argument("--out", default=None)
    batch.add_argument("--controller", choices=["hmpcc", "baseline"], default=None)

    cmp_ = sub.add_parser("compare", help="run both controllers on identical seeds")
    cmp_.add_argument("scenario")
    cmp_.add_argument("--seeds", default=None)
    cmp_.add_argument("--humans", default=None, help="comma list of human counts")
    cmp_.add_argument("--jobs", type=int, default=1)
    cmp_.add_argument("--out", default=None)

    snap = sub.add_parser("snapshot", help="render an SVG frame from a run log")
    snap.add_argument("log")
    snap.add_argument("--t", type=float, required=True)
    snap.add_argument("--out", required=True)
    return p


def parse_seed_spec(spec: str):
    seeds = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise scenario_io.ScenarioError(f"usage error: empty seed spec {spec!r}")
    return seeds


def _out_dir(args, sdef):
    return args.out or os.environ.get(OUT_ENV) or sdef.outputs or "hmpcc_out"


def _run_one(text: str, seed: int, controller: str | None):
    sdef = scenario_io.parse_scenario_text(text)
    return sim.run(sdef.instantiate(seed, controller=controller))


def _worker(payload):
    text, seed, controller = payload
    log = _run_one(text, seed, controller)
    return seed, output.log_to_dict(log)


def _run_batch(text, seeds, controller, jobs):
    """Deterministic regardless of parallelism: results are keyed by seed."""
    payloads = [(text, seed, controller) for seed in seeds]
    results = {}
    failures = {}
    if jobs <= 1:
        for pl in payloads:
            try:
                seed, d = _worker(pl)
                results[seed] = d
            except Exception as exc:
                failures[pl[1]] = str(exc)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(_worker, pl): pl[1] for pl in payloads}
            for fut in concurrent.futures.as_completed(futs):
                seed = futs[fut]
                try:
                    s, d = fut.result()
                    results[s] = d
                except Exception as exc:
                    failures[seed] = str(exc)
    logs = [output.log_from_dict(results[s]) for s in sorted(results)]
    return logs, failures


def _write_batch(out_dir, logs, failures, prefix=""):
    for log in logs:
        base = os.path.join(out_dir, f"{prefix}run_{log.seed}")
        output.write_atomic(base + ".csv", output.trajectory_table(log))
        output.write_atomic(base + ".json", output.log_json(log))
    summary = metrics.aggregate(logs) if logs else None
    doc = output.batch_summary(logs, summary) if summary else {"runs": 0}
    if failures:
        doc["failed_runs"] = {int(k): v for k, v in sorted(failures.items())}
    output.write_atomic(os.path.join(out_dir, f"{prefix}summary.yaml"),
                        output.summary_text(doc))
    if summary:
        output.write_atomic(os.path.join(out_dir, f"{prefix}curves.csv"),
                            output.curves_table(summary))
    return doc, summary


def cmd_run(args):
    sdef = scenario_io.parse_scenario(args.scenario)
    seed = args.seed if args.seed is not None else sdef.seeds[0]
    out_dir = _out_dir(args, sdef)
    log = _run_one(open(args.scenario, encoding="utf-8").read(), seed, args.controller)
    base = os.path.join(out_dir, f"run_{seed}")
    output.write_atomic(base + ".csv", output.trajectory_table(log))
    output.write_atomic(base + ".json", output.log_json(log))
    print(f"seed {seed}: {output.outcome_label(log.outcome)}")
    if log.n_steps:
        print(f"final E={output.fmt(log.metric_E[-1])} H={output.fmt(log.metric_H[-1])}")
    print(f"wrote {base}.csv and {base}.json")
    return 0


def cmd_batch(args):
    sdef = scenario_io.parse_scenario(args.scenario)
    seeds = parse_seed_spec(args.seeds) if args.seeds else list(sdef.seeds)
    out_dir = _out_dir(args, sdef)
    text = open(args.scenario, encoding="utf-8").read()
    logs, failures = _run_batch(text, seeds, args.controller, args.jobs)
    doc, _ = _write_batch(out_dir, logs, failures)
    print(output.summary_text(doc), end="")
    print(f"wrote {len(logs)} run logs to {out_dir}")
    return 0 if not failures else 2


def cmd_compare(args):
    sdef = scenario_io.parse_scenario(args.scenario)
    seeds = parse_seed_spec(args.seeds) if args.seeds else list(sdef.seeds)
    human_counts = ([int(x) for x in args.humans.split(",")] if args.humans
                    else [None])
    out_dir = _out_dir(args, sdef)
    text = open(args.scenario, encoding="utf-8").read()
    rows = []
    any_failures = False
    for nh in human_counts:
        variant = sdef.with_humans(nh) if nh is not None else sdef
        variant_text = scenario_io.serialize_scenario(variant) if nh is not None else text
        row = {"n_humans": nh if nh is not None else
               (variant.human_count or len(variant.human_agents or []))}
        for controller in ("hmpcc", "baseline"):
            tag = f"nh{row['n_humans']}_{controller}_"
            logs, failures = _run_batch(variant_text, seeds, controller, args.jobs)
            any_failures = any_failures or bool(failures)
            doc, _ = _write_batch(out_dir, logs, failures, prefix=tag)
            row[controller] = doc
        rows.append(row)
    output.write_atomic(os.path.join(out_dir, "comparison.yaml"),
                        output.summary_text({"rows": rows}))
    print(output.summary_text({"rows": rows}), end="")
    return 0 if not any_failures else 2


def cmd_snapshot(args):
    log = output.load_log(args.log)
    svg = output.snapshot_svg(log, args.t)
    output.write_atomic(args.out, svg)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"run": cmd_run, "batch": cmd_batch, "compare": cmd_compare,
                   "snapshot": cmd_snapshot}[args.command]
        return handler(args)
    except scenario_io.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
