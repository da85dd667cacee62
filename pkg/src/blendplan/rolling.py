"""Rolling-horizon schemes: period generation and the two step loops.

Periods partition the day grid.  ``fixed_periods`` cuts equal blocks;
``run_based_periods`` aligns period boundaries with the ends of demand
runs and of the gaps between them, so neither is ever subdivided.

Two schemes walk the periods:

* ``roll_full``    -- every step solves the whole horizon.  Past binaries
  are frozen (continuous variables stay free), the present block is fully
  binary, unload binaries stay binary through the near future, everything
  else there and beyond is relaxed to [0, 1].
* ``roll_partial`` -- every step solves only [present start, near-future
  end].  The past is fully fixed: the accumulated plan is simulated and
  the resulting tank state seeds a shifted sub-instance; barge volumes and
  unload counts are decremented, and a barge whose window is only partly
  visible is asked to unload the visible fraction of its volume only.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace

from .instance import Instance, derive_sets
from .model import MilpModel
from .simulate import FlowPlan, plan_objective, simulate
from .solve import SolveOptions, SolveResult, extract_flow_plan, solve

log = logging.getLogger(__name__)

SEGMENTS = ("past", "present", "near", "far")
TREATMENTS = ("fixed", "active", "relaxed", "omitted")


class RollingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Period:
    index: int
    start: int
    end: int              # exclusive

    @property
    def days(self) -> range:
        return range(self.start, self.end)

    def __len__(self) -> int:
        return self.end - self.start


def fixed_periods(horizon: int, dt: int) -> list[Period]:
    """Equal-length periods; the last one is truncated at the horizon."""
    if dt < 1:
        raise ValueError("dt must be >= 1")
    periods = []
    for i, start in enumerate(range(0, horizon, dt)):
        periods.append(Period(i, start, min(start + dt, horizon)))
    return periods


def run_based_periods(runs, horizon: int, dt: int) -> list[Period]:
    """Periods that never subdivide a run or a gap between runs.

    A period runs to the containing segment's end, or further to the last
    segment end within ``dt`` days of the period start.  Segments are the
    runs plus the maximal non-demand intervals around them; with no runs
    at all this degrades to fixed-length stepping.
    """
    if dt < 1:
        raise ValueError("dt must be >= 1")
    intervals = sorted(_run_days(r) for r in runs)
    for (a0, a1), (b0, b1) in zip(intervals, intervals[1:]):
        if b0 <= a1:
            raise ValueError("runs overlap")
    ends: list[int] = []
    cursor = 0
    for (r0, r1) in intervals:
        if r0 > cursor:
            ends.append(r0 - 1)    # gap before this run
        ends.append(min(r1, horizon - 1))
        cursor = r1 + 1
    if intervals and cursor <= horizon - 1:
        ends.append(horizon - 1)   # tail gap after the last run
    periods = []
    t = 0
    i = 0
    while t < horizon:
        t_end = next((e for e in ends if e >= t), None)
        in_reach = [e for e in ends if t <= e <= t + dt]
        t_change = max(in_reach) if in_reach else t_end
        if t_end is None and t_change is None:
            nxt = t + dt           # no segments: plain stepping
        else:
            nxt = max(e for e in (t_end, t_change) if e is not None) + 1
        nxt = min(nxt, horizon)
        periods.append(Period(i, t, nxt))
        t = nxt
        i += 1
    return periods


def _run_days(r) -> tuple[int, int]:
    if hasattr(r, "days"):
        return tuple(r.days)
    return tuple(r)


def check_partition(periods: list[Period], horizon: int) -> bool:
    if not periods:
        return horizon == 0
    if periods[0].start != 0 or periods[-1].end != horizon:
        return False
    return all(a.end == b.start for a, b in zip(periods, periods[1:]))


# ---------------------------------------------------------------------------
# Segment policies (which variables stay binary / get relaxed / vanish)


@dataclass(frozen=True)
class SegmentPolicy:
    name: str
    treatment: dict[str, tuple[str, str, str, str]]   # kind -> per-segment

    def of(self, kind: str, segment: str) -> str:
        return self.treatment[kind][SEGMENTS.index(segment)]


_CONT = {"y_in": 0, "y_out": 0, "v_mid": 0, "v_end": 0, "vf_mid": 0, "vf_end": 0,
         "yf_out": 0, "x_alpha": 0, "x_delta": 0, "delta_f": 0, "mis": 0,
         "v_unused": 0, "t_first": 0, "t_last": 0}

FULL_SCHEME = SegmentPolicy("full", {
    **{k: ("active", "active", "active", "active") for k in _CONT},
    "gamma": ("fixed", "active", "active", "relaxed"),
    "sigma": ("fixed", "active", "relaxed", "relaxed"),
    "alpha": ("fixed", "active", "relaxed", "relaxed"),
})

PARTIAL_SCHEME = SegmentPolicy("partial", {
    **{k: ("fixed", "active", "active", "omitted") for k in _CONT},
    "gamma": ("fixed", "active", "active", "omitted"),
    "sigma": ("fixed", "active", "relaxed", "omitted"),
    "alpha": ("fixed", "active", "relaxed", "omitted"),
})


@dataclass(frozen=True)
class RollParams:
    h_nf: int = 90            # near-future horizon, days
    n_present: int = 1        # periods fully binary per step
    n_step: int = 1           # periods frozen per step
    solve: SolveOptions = field(default_factory=lambda: SolveOptions(time_limit=1800.0))
    min_step_time: float = 2.0

    def __post_init__(self):
        if not (1 <= self.n_step <= self.n_present):
            raise ValueError("need 1 <= n_step <= n_present")
        if self.h_nf < 1:
            raise ValueError("h_nf must be >= 1")


@dataclass
class StepLog:
    step: int
    window: tuple[int, int]    # present [start, end)
    t_nf: int
    status: str
    objective: float | None
    bound: float | None
    wall_time: float
    n_binary: int

    def to_json(self) -> str:
        return json.dumps({
            "step": self.step, "window": list(self.window), "t_nf": self.t_nf,
            "status": self.status, "objective": self.objective, "bound": self.bound,
            "wall_time": round(self.wall_time, 4), "n_binary": self.n_binary,
        })


@dataclass
class RollResult:
    plan: FlowPlan
    steps: list[StepLog]
    objective: float           # true value of the final plan
    milp_objective: float | None   # last step's solver objective


def _solve_step(model: MilpModel, opts: SolveOptions, step: int) -> SolveResult:
    res = solve(model, opts)
    if res.status in ("infeasible", "error") or not res.has_values:
        # misses are already soft penalties, so the re-solve is a plain
        # retry; a second failure is a real dead end
        log.warning("step %d solve returned %s; retrying once", step, res.status)
        res = solve(model, opts)
        if res.status in ("infeasible", "error") or not res.has_values:
            raise RollingError(f"step {step}: solver returned {res.status}: {res.message}")
    return res


def _step_budget(params: RollParams, spent: float, steps_left: int) -> float:
    remaining = params.solve.time_limit - spent
    if remaining < params.min_step_time:
        raise RollingError(f"time budget exhausted with {steps_left} steps left")
    return max(params.min_step_time, remaining / max(steps_left, 1))


def roll_full(inst: Instance, periods: list[Period], params: RollParams, builder,
              log_path=None, on_step=None) -> RollResult:
    """Full-horizon scheme: all constraints always present; binaries frozen
    behind the window, relaxed ahead of it per FULL_SCHEME.

    ``on_step(step, model, result)`` is called after each solve.
    """
    H = inst.horizon
    if not check_partition(periods, H):
        raise ValueError("periods must partition the horizon")
    frozen: dict[tuple[str, tuple], float] = {}
    steps: list[StepLog] = []
    t_begin = time.perf_counter()
    logf = open(log_path, "w") if log_path else None
    model = None
    res = None
    try:
        i = 0
        step = 0
        while i < len(periods):
            present = periods[i:i + params.n_present]
            t_start = present[0].start
            present_end = present[-1].end
            t_nf = max(min(H - 1, t_start + params.h_nf - 1), present_end - 1)
            model = builder(inst)
            for v in model.vars:
                if not v.binary:
                    continue
                d = v.day
                if d is None:
                    continue
                if d < t_start:
                    key = (v.kind, v.index)
                    if key not in frozen:
                        raise RollingError(f"no frozen value for {v.name} at step {step}")
                    model.fix(v, frozen[key])
                elif d < present_end:
                    pass
                elif d <= t_nf:
                    if v.kind != "gamma":
                        model.relax_binary(v)
                else:
                    model.relax_binary(v)
            steps_left = math.ceil((len(periods) - i) / params.n_step)
            opts = replace(params.solve,
                           time_limit=_step_budget(params, time.perf_counter() - t_begin, steps_left))
            res = _solve_step(model, opts, step)
            next_start = periods[i + params.n_step].start if i + params.n_step < len(periods) else H
            for v in model.vars:
                if v.kind in ("gamma", "sigma", "alpha") and v.day is not None and v.day < next_start:
                    frozen[(v.kind, v.index)] = 1.0 if res.values[v.name] >= 0.5 else 0.0
            entry = StepLog(step, (t_start, present_end), t_nf, res.status,
                            res.objective, res.best_bound, res.wall_time, model.n_binary)
            steps.append(entry)
            if logf:
                logf.write(entry.to_json() + "\n")
            if on_step is not None:
                on_step(step, model, res)
            i += params.n_step
            step += 1
    finally:
        if logf:
            logf.close()
    plan = extract_flow_plan(model, res)
    return RollResult(plan, steps, plan_objective(inst, plan), res.objective)


# ---------------------------------------------------------------------------
# Partial-horizon scheme


def _visible_sub_instance(inst: Instance, acc: FlowPlan, t_start: int, t_nf: int):
    """Shifted instance covering [t_start, t_nf] with the simulated state at
    t_start as initial conditions and per-barge remainders decremented."""
    if t_start > 0:
        trace = simulate(inst, acc, through_day=t_start)
        # clamp away float dust so the sub-instance revalidates cleanly
        tanks = tuple(replace(
            k, v_init=min(max(trace.v_end[(k.id, t_start - 1)], k.v_min), k.v_max),
            specs_init={q: max(trace.f[(k.id, q, t_start - 1)], 0.0)
                        for q in inst.spec_ids()},
        ) for k in inst.tanks)
    else:
        tanks = inst.tanks

    barges = []
    for b in inst.barges:
        used_days = [t for t in acc.unload_days(b.id) if t < t_start]
        used_vol = sum(v for (s, _, t), v in acc.y_in.items() if s == b.id and t < t_start)
        n_left = inst.barge_max_unloads(b.id) - len(used_days)
        w0, w1 = b.window
        if used_days:
            w1 = min(w1, used_days[0] + inst.ops.max_unload_gap)
        vis0, vis1 = max(w0, t_start), min(w1, t_nf)
        if n_left <= 0 or vis0 > vis1:
            continue
        window_len = b.window[1] - b.window[0] + 1
        seen = max(0, min(b.window[1], t_nf) - b.window[0] + 1)
        required = b.volume * (seen / window_len)
        vol = min(b.volume - used_vol, max(required - used_vol, 0.0))
        if vol <= 1e-9:
            continue
        min_pct = inst.barge_min_unload_pct(b.id) * b.volume / vol
        barges.append(replace(
            b, volume=vol, window=(vis0 - t_start, vis1 - t_start),
            max_unloads=n_left, min_unload_pct=min(min_pct, 1.0),
        ))

    runs = []
    for r in inst.runs:
        r0, r1 = r.days
        if r1 < t_start or r0 > t_nf:
            continue
        if r0 < t_start:
            raise RollingError(
                f"step boundary {t_start} splits run {r.id}; use run-based periods "
                "with the partial scheme")
        runs.append(replace(r, days=(r0 - t_start, min(r1, t_nf) - t_start)))

    ops = replace(inst.ops, horizon=t_nf - t_start + 1)
    return replace(inst, tanks=tanks, barges=tuple(barges), runs=tuple(runs), ops=ops)


def roll_partial(inst: Instance, periods: list[Period], params: RollParams, builder,
                 log_path=None, on_step=None) -> RollResult:
    """Partial-horizon scheme: solve only the visible window, freeze all of
    it that falls in the stepped-over periods, re-simulate, repeat."""
    H = inst.horizon
    if not check_partition(periods, H):
        raise ValueError("periods must partition the horizon")
    ds = derive_sets(inst)
    acc = FlowPlan()
    steps: list[StepLog] = []
    t_begin = time.perf_counter()
    logf = open(log_path, "w") if log_path else None
    try:
        i = 0
        step = 0
        while i < len(periods):
            present = periods[i:i + params.n_present]
            t_start = present[0].start
            present_end = present[-1].end
            t_nf = max(min(H - 1, t_start + params.h_nf - 1), present_end - 1)
            sub = _visible_sub_instance(inst, acc, t_start, t_nf)
            model = builder(sub)
            rel_present_end = present_end - t_start
            for v in model.vars:
                if not v.binary:
                    continue
                d = v.day
                if d is not None and d >= rel_present_end and v.kind != "gamma":
                    model.relax_binary(v)
            steps_left = math.ceil((len(periods) - i) / params.n_step)
            opts = replace(params.solve,
                           time_limit=_step_budget(params, time.perf_counter() - t_begin, steps_left))
            res = _solve_step(model, opts, step)
            sub_plan = extract_flow_plan(model, res)
            next_start = periods[i + params.n_step].start if i + params.n_step < len(periods) else H
            cut = next_start - t_start
            for (s, k, t), v in sub_plan.y_in.items():
                if t < cut and v > 0.0:
                    acc.y_in[(s, k, t + t_start)] = v
            for (k, t), v in sub_plan.y_out.items():
                if t < cut and v > 0.0:
                    acc.y_out[(k, t + t_start)] = v
            for (s, t), g in sub_plan.gamma.items():
                if t < cut and g:
                    acc.gamma[(s, t + t_start)] = g
            for (k, t), g in sub_plan.sigma.items():
                if t < cut and g:
                    acc.sigma[(k, t + t_start)] = g
            entry = StepLog(step, (t_start, present_end), t_nf, res.status,
                            res.objective, res.best_bound, res.wall_time, model.n_binary)
            steps.append(entry)
            if logf:
                logf.write(entry.to_json() + "\n")
            if on_step is not None:
                on_step(step, model, res)
            i += params.n_step
            step += 1
    finally:
        if logf:
            logf.close()
    for b in inst.barges:
        acc.v_unused[b.id] = b.volume - acc.unloaded_total(b.id)
    for t in ds.demand_days:
        served = sum(acc.y_out.get((k.id, t), 0.0) for k in inst.tanks)
        acc.mis[t] = max(ds.demand(t) - served, 0.0)
    return RollResult(acc, steps, plan_objective(inst, acc),
                      steps[-1].objective if steps else None)
