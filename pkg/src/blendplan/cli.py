"""Command-line front door: generate, validate, solve, simulate, audit,
loss, export, bench.

Exit codes: 0 ok, 1 infeasible, 2 error.  ``solve`` writes the plan, the
simulated trace (JSON + CSV), the audit report and a result row; ``bench``
runs a config matrix (optionally across processes) and emits per-method
time-completion and loss-distribution profiles.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
import time

from . import __version__
from .builders import (CenterOptions, build_center, build_exact_mix,
                       build_exact_split, build_mccormick, make_plans)
from .instance import (Instance, InstanceError, RandomizationParams,
                       extend_periodic, randomize_supply, read_instance,
                       validate_instance, write_instance)
from .rolling import (RollParams, fixed_periods, roll_full, roll_partial,
                      run_based_periods)
from .simulate import (PlanInconsistencyError, audit, loss, read_plan,
                       simulate, write_plan)
from .solve import SolveOptions, extract_flow_plan, solve

RESULTS_VERSION = 1
RESULT_FIELDS = [
    "record_version", "instance", "method", "scheme", "horizon", "eps_hat",
    "status", "objective", "bound", "pct_loss", "violations",
    "worst_spec_violation", "steps", "wall_time_s",
]
OK_STATUSES = {"ok", "optimal", "gap_reached", "time_limit"}


def _parse_eps_hat(value):
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        return {q: float(v) for q, v in value.items()}
    if "=" not in value:
        return float(value)
    out = {}
    for part in value.split(","):
        q, v = part.split("=", 1)
        out[q.strip()] = float(v)
    return out


def _builder_for(args):
    eps_hat = _parse_eps_hat(args.eps_hat)
    if args.method == "center":
        opts = CenterOptions(coupling=args.coupling, relax_avol=args.relax_avol,
                             tighten=not args.no_tighten)
        return lambda inst: build_center(inst, make_plans(inst, eps_hat), opts)
    if args.method == "mccormick":
        return lambda inst: build_mccormick(inst, make_plans(inst, eps_hat),
                                            tighten_bounds=not args.no_tighten)
    raise ValueError(f"method {args.method!r} cannot be solved in-process")


def _solve_options(args) -> SolveOptions:
    return SolveOptions(mip_gap=args.mip_gap, time_limit=args.time_limit,
                        threads=args.threads, seed=args.seed, backend=args.backend)


def _trace_csv(inst: Instance, trace, path) -> None:
    spec_ids = inst.spec_ids()
    tanks = [t.id for t in inst.tanks]
    ratio_pairs = sorted({p for r in inst.runs for p in r.ratio_bounds})
    cols = ["day"]
    for k in tanks:
        cols += [f"v_mid_{k}", f"v_end_{k}"] + [f"f_{k}_{q}" for q in spec_ids]
    cols += ["feed_volume"] + [f"feed_{q}" for q in spec_ids]
    cols += [f"feed_ratio_{q1}_{q2}" for q1, q2 in ratio_pairs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for t in range(trace.horizon):
            row = [t]
            for k in tanks:
                row += [trace.v_mid[(k, t)], trace.v_end[(k, t)]]
                row += [trace.f[(k, q, t)] for q in spec_ids]
            vol = trace.feed_volume.get(t, 0.0)
            row.append(vol)
            row += [trace.feed_spec.get((q, t), "") for q in spec_ids]
            for q1, q2 in ratio_pairs:
                den = trace.feed_spec.get((q2, t))
                num = trace.feed_spec.get((q1, t))
                row.append(num / den if vol > 0 and den else "")
            w.writerow(row)


def run_solve_config(config: dict) -> dict:
    """Execute one solve pipeline from a plain config dict (bench worker)."""
    inst = read_instance(config["instance"])
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    ns = argparse.Namespace(**{**_SOLVE_DEFAULTS, **config})
    builder = _builder_for(ns)
    opts = _solve_options(ns)
    t0 = time.perf_counter()
    steps = 0
    status = "ok"
    if ns.scheme == "flat":
        model = builder(inst)
        res = solve(model, opts)
        if res.status in ("infeasible", "error") or not res.has_values:
            return {"status": res.status, "instance": config["instance"],
                    "method": ns.method, "message": res.message}
        status = res.status
        plan = extract_flow_plan(model, res)
        objective, bound = res.objective, res.best_bound
    else:
        periods = (run_based_periods(inst.runs, inst.horizon, ns.dt)
                   if ns.periods == "run" else fixed_periods(inst.horizon, ns.dt))
        params = RollParams(h_nf=ns.h_nf, n_present=ns.n_present, n_step=ns.n_step,
                            solve=opts)
        log_path = os.path.join(out_dir, "steps.jsonl")
        roller = roll_full if ns.scheme == "full" else roll_partial
        result = roller(inst, periods, params, builder, log_path=log_path)
        plan = result.plan
        objective, bound = result.objective, result.milp_objective
        steps = len(result.steps)
    wall = time.perf_counter() - t0

    write_plan(plan, os.path.join(out_dir, "plan.json"))
    trace = simulate(inst, plan)
    with open(os.path.join(out_dir, "trace.json"), "w") as fh:
        json.dump(trace.to_dict(), fh, indent=2)
    _trace_csv(inst, trace, os.path.join(out_dir, "trace.csv"))
    rep = audit(inst, trace, plan)
    with open(os.path.join(out_dir, "audit.json"), "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2)
    ls = loss(inst, plan)
    record = {
        "record_version": RESULTS_VERSION,
        "instance": config["instance"],
        "method": ns.method,
        "scheme": ns.scheme,
        "horizon": inst.horizon,
        "eps_hat": ns.eps_hat,
        "status": status,
        "objective": objective,
        "bound": bound,
        "pct_loss": ls.pct_loss,
        "violations": len(rep.violations),
        "worst_spec_violation": rep.worst_spec_violation,
        "steps": steps,
        "wall_time_s": round(wall, 4),
    }
    with open(os.path.join(out_dir, "record.json"), "w") as fh:
        json.dump(record, fh, indent=2)
    return record


_SOLVE_DEFAULTS = {
    "method": "center", "eps_hat": "1.0", "scheme": "flat", "periods": "fixed",
    "dt": 7, "h_nf": 90, "n_present": 1, "n_step": 1,
    "coupling": False, "relax_avol": False, "no_tighten": False,
    "mip_gap": 0.005, "time_limit": 600.0, "threads": 0, "seed": 0,
    "backend": "highs",
}


def _add_solve_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=["center", "mccormick"], default="center")
    p.add_argument("--eps-hat", dest="eps_hat", default="1.0",
                   help="precision, a number or q1=v1,q2=v2")
    p.add_argument("--scheme", choices=["flat", "full", "partial"], default="flat")
    p.add_argument("--periods", choices=["fixed", "run"], default="fixed")
    p.add_argument("--dt", type=int, default=7)
    p.add_argument("--h-nf", dest="h_nf", type=int, default=90)
    p.add_argument("--n-present", dest="n_present", type=int, default=1)
    p.add_argument("--n-step", dest="n_step", type=int, default=1)
    p.add_argument("--coupling", action="store_true")
    p.add_argument("--relax-avol", dest="relax_avol", action="store_true")
    p.add_argument("--no-tighten", dest="no_tighten", action="store_true")
    p.add_argument("--mip-gap", dest="mip_gap", type=float, default=0.005)
    p.add_argument("--time-limit", dest="time_limit", type=float, default=600.0)
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="highs")


def cmd_validate(args) -> int:
    inst = read_instance(args.instance)
    rep = validate_instance(inst)
    print(json.dumps({"ok": rep.ok, "violations": [str(v) for v in rep.violations]}, indent=2))
    return 0 if rep.ok else 2


def cmd_gen(args) -> int:
    inst = read_instance(args.instance)
    if args.extend:
        inst = extend_periodic(inst, args.extend)
    if args.seed is not None:
        jitter = RandomizationParams(volume_rel=args.jitter_volume,
                                     spec_rel=args.jitter_spec,
                                     window_shift=args.jitter_window)
        inst = randomize_supply(inst, args.seed, jitter)
    write_instance(inst, args.out)
    print(json.dumps({"out": args.out, "horizon": inst.horizon,
                      "barges": len(inst.barges), "runs": len(inst.runs)}))
    return 0


def cmd_solve(args) -> int:
    config = {**_SOLVE_DEFAULTS, **{k: v for k, v in vars(args).items() if k in _SOLVE_DEFAULTS}}
    config["instance"] = args.instance
    config["out_dir"] = args.out_dir
    record = run_solve_config(config)
    _append_results(os.path.join(args.out_dir, "results.csv"), [record])
    print(json.dumps(record, indent=2))
    if record["status"] in OK_STATUSES:
        return 0
    return 1 if record["status"] == "infeasible" else 2


def cmd_simulate(args) -> int:
    inst = read_instance(args.instance)
    plan = read_plan(args.plan)
    trace = simulate(inst, plan)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(trace.to_dict(), fh, indent=2)
    if args.csv:
        _trace_csv(inst, trace, args.csv)
    if not args.out and not args.csv:
        print(json.dumps(trace.to_dict()))
    return 0


def cmd_audit(args) -> int:
    inst = read_instance(args.instance)
    plan = read_plan(args.plan)
    rep = audit(inst, simulate(inst, plan), plan)
    text = json.dumps(rep.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if rep.ok else 1


def cmd_loss(args) -> int:
    inst = read_instance(args.instance)
    plan = read_plan(args.plan)
    print(json.dumps(loss(inst, plan).to_dict(), indent=2))
    return 0


def cmd_export(args) -> int:
    inst = read_instance(args.instance)
    eps_hat = _parse_eps_hat(args.eps_hat)
    if args.method == "exact-mix":
        model = build_exact_mix(inst)
    elif args.method == "exact-split":
        model = build_exact_split(inst)
    elif args.method == "center":
        model = build_center(inst, make_plans(inst, eps_hat),
                             CenterOptions(coupling=args.coupling, relax_avol=args.relax_avol))
    else:
        model = build_mccormick(inst, make_plans(inst, eps_hat))
    if model.has_bilinear():
        if not args.out.endswith(".lp"):
            print("note: bilinear model, writing LP format", file=sys.stderr)
        model.write_lp(args.out)
    else:
        if args.out.endswith(".lp"):
            model.write_lp(args.out)
        else:
            model.write_mps(args.out)
    model.write_sidecar(args.out + ".tags.json")
    print(json.dumps({"out": args.out, "vars": model.n_vars, "rows": model.n_rows,
                      "binary": model.n_binary,
                      "bilinear": len(getattr(model, "quad_rows", []))}))
    return 0


def _append_results(path: str, records: list[dict]) -> None:
    new = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, extrasaction="ignore")
        if new:
            w.writeheader()
        for rec in records:
            w.writerow(rec)


def _profiles(records: list[dict], out_dir: str) -> None:
    methods = sorted({r["method"] for r in records if r.get("status") in OK_STATUSES})
    for method in methods:
        rows = [r for r in records if r["method"] == method and r.get("status") in OK_STATUSES]
        times = sorted(r["wall_time_s"] for r in rows)
        with open(os.path.join(out_dir, f"profile_time_{method}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wall_time_s", "fraction_finished"])
            for i, t in enumerate(times, start=1):
                w.writerow([t, i / len(records)])
        losses = sorted(r["pct_loss"] for r in rows)
        with open(os.path.join(out_dir, f"profile_loss_{method}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pct_loss", "fraction_at_or_below"])
            for i, v in enumerate(losses, start=1):
                w.writerow([v, i / len(losses)])


def default_matrix(instances: list[str], time_limit: float = 600.0) -> list[dict]:
    """Cross the provided instance files with both MILP methods at coarse
    and fine precision; the budget per run is the usual 600 seconds."""
    runs = []
    for path in instances:
        for eps in (1.0, 0.25):
            for method in ("center", "mccormick"):
                runs.append({"instance": path, "method": method,
                             "eps_hat": eps, "time_limit": time_limit})
    return runs


def cmd_bench(args) -> int:
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        runs = config["runs"]
    elif args.matrix:
        config = {}
        runs = default_matrix(args.matrix)
    else:
        raise InstanceError("bench needs --config or --matrix")
    if not runs:
        raise InstanceError("bench config has no runs")
    out_dir = args.out_dir or config.get("out_dir", "bench_out")
    os.makedirs(out_dir, exist_ok=True)
    tasks = []
    for i, run in enumerate(runs):
        task = {**_SOLVE_DEFAULTS, **run}
        task["out_dir"] = os.path.join(out_dir, f"run_{i:03d}")
        tasks.append(task)
    workers = args.workers or config.get("workers", 1)
    records: list[dict | None] = [None] * len(tasks)
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_solve_config, t): i for i, t in enumerate(tasks)}
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    records[i] = fut.result()
                except Exception as e:  # keep going, record the failure
                    records[i] = {"record_version": RESULTS_VERSION,
                                  "instance": tasks[i]["instance"],
                                  "method": tasks[i]["method"], "status": "error",
                                  "objective": "", "pct_loss": "", "wall_time_s": "",
                                  "violations": "", "worst_spec_violation": "",
                                  "steps": "", "scheme": tasks[i]["scheme"],
                                  "horizon": "", "eps_hat": tasks[i]["eps_hat"],
                                  "bound": "", "error": str(e)}
    else:
        for i, t in enumerate(tasks):
            try:
                records[i] = run_solve_config(t)
            except Exception as e:
                records[i] = {"record_version": RESULTS_VERSION,
                              "instance": t["instance"], "method": t["method"],
                              "status": "error", "objective": "", "pct_loss": "",
                              "wall_time_s": "", "violations": "",
                              "worst_spec_violation": "", "steps": "",
                              "scheme": t["scheme"], "horizon": "",
                              "eps_hat": t["eps_hat"], "bound": "", "error": str(e)}
    _append_results(os.path.join(out_dir, "results.csv"), records)
    _profiles(records, out_dir)
    n_ok = sum(1 for r in records if r.get("status") in OK_STATUSES)
    print(json.dumps({"runs": len(records), "ok": n_ok, "out_dir": out_dir}))
    return 0 if n_ok == len(records) else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="blendplan",
                                     description="barge unloading / tank blending scheduler")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", help="extend an instance periodically and/or randomize supply")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--extend", type=int, help="target horizon in days")
    p.add_argument("--seed", type=int)
    p.add_argument("--jitter-volume", dest="jitter_volume", type=float, default=0.0)
    p.add_argument("--jitter-spec", dest="jitter_spec", type=float, default=0.0)
    p.add_argument("--jitter-window", dest="jitter_window", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="build, solve, simulate, audit, report")
    p.add_argument("--instance", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_solve_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="recover true volumes/specs from a plan")
    p.add_argument("--instance", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit", help="check a plan against the original rules")
    p.add_argument("--instance", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("loss", help="value-loss metric of a plan")
    p.add_argument("--instance", required=True)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("export", help="write a model interchange file")
    p.add_argument("--instance", required=True)
    p.add_argument("--method", choices=["center", "mccormick", "exact-mix", "exact-split"],
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps-hat", dest="eps_hat", default="1.0")
    p.add_argument("--coupling", action="store_true")
    p.add_argument("--relax-avol", dest="relax_avol", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="run a config matrix, emit results and profiles")
    p.add_argument("--config", help="JSON config with a 'runs' list")
    p.add_argument("--matrix", nargs="+",
                   help="instance files: run the default method x precision matrix")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, PlanInconsistencyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
