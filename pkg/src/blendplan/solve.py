"""Uniform interface to MILP backends.

Backends implement ``(model, options) -> SolveResult``:

* ``highs``     -- in-process HiGHS via scipy.optimize.milp (default).
* ``reference`` -- brute-force enumeration of the binary assignments with a
  dense LP per assignment; a slow, independent cross-check for tiny models.
* ``cli``       -- write MPS, invoke an external solver binary named by the
  ``BLENDPLAN_SOLVER`` environment variable as
  ``<binary> <model.mps> <solution-file>``, parse ``column value`` lines.

Objectives are reported in maximization form (target value minus misses);
``best_bound`` is an upper bound on that value.  HiGHS as packaged by scipy
is single-threaded and deterministic, so ``threads`` and ``seed`` are
recorded but have no effect there.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .discretize import encode
from .model import MilpModel
from .simulate import FlowPlan, PlanInconsistencyError, simulate

log = logging.getLogger(__name__)

SOLVER_ENV_VAR = "BLENDPLAN_SOLVER"
ROW_FEAS_TOL = 1e-6


class SolverError(RuntimeError):
    pass


class ExtractionError(RuntimeError):
    """Rounded binaries break a hard counting constraint."""


@dataclass(frozen=True)
class SolveOptions:
    mip_gap: float = 0.005
    time_limit: float = 600.0
    threads: int = 0          # 0: backend default
    seed: int = 0
    backend: str = "highs"

    def __post_init__(self):
        if self.mip_gap < 0:
            raise ValueError("mip_gap must be >= 0")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")


@dataclass
class SolveResult:
    status: str                        # optimal | gap_reached | time_limit | infeasible | error
    objective: float | None            # reported (maximization) objective
    best_bound: float | None           # upper bound on the reported objective
    values: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    gap: float | None = None
    message: str = ""

    @property
    def has_values(self) -> bool:
        return bool(self.values)

    def value(self, ref) -> float:
        return self.values[ref.name]


def solve(model: MilpModel, opts: SolveOptions | None = None) -> SolveResult:
    """Solve a linear model; bilinear models must go through file export."""
    if model.has_bilinear():
        raise SolverError("model has bilinear rows; export it for a QCP-capable backend")
    opts = opts or SolveOptions()
    backend = _BACKENDS.get(opts.backend)
    if backend is None:
        raise SolverError(f"unknown backend {opts.backend!r}; have {sorted(_BACKENDS)}")
    t0 = time.perf_counter()
    result = backend(model, opts)
    result.wall_time = time.perf_counter() - t0
    return result


def _values_from_x(model: MilpModel, x) -> dict[str, float]:
    return {v.name: float(x[v.col]) for v in model.vars}


def _solve_highs(model: MilpModel, opts: SolveOptions) -> SolveResult:
    if model.n_vars == 0:
        return SolveResult("optimal", model.obj_offset, model.obj_offset, {}, gap=0.0)
    c, integrality, var_lo, var_hi, A, row_lo, row_hi = model.to_arrays()
    # Carry the constant target value inside the objective via a fixed
    # column: the solver's relative MIP gap is then measured against the
    # full plan value, not against the miss value (which tends to 0).
    offset = model.obj_offset
    if offset:
        c = np.append(c, -offset)
        integrality = np.append(integrality, 0)
        var_lo = np.append(var_lo, 1.0)
        var_hi = np.append(var_hi, 1.0)
        A = sp.hstack([A, sp.csr_matrix((A.shape[0], 1))]).tocsr() if model.n_rows else A
    constraints = [LinearConstraint(A, row_lo, row_hi)] if model.n_rows else ()
    res = milp(
        c=c, constraints=constraints, integrality=integrality,
        bounds=Bounds(var_lo, var_hi),
        options={"mip_rel_gap": opts.mip_gap, "time_limit": opts.time_limit,
                 "presolve": True, "disp": False},
    )
    if res.status == 2:
        return SolveResult("infeasible", None, None, message=res.message)
    if res.status in (3, 4) or (res.status == 0 and res.x is None):
        return SolveResult("error", None, None, message=res.message)
    values = _values_from_x(model, res.x) if res.x is not None else {}
    objective = -float(res.fun) if res.x is not None else None
    if not offset and objective is not None:
        objective = model.reported_objective(float(res.fun))
    dual = getattr(res, "mip_dual_bound", None)
    if dual is not None:
        bound = -float(dual) if offset else model.reported_objective(float(dual))
    else:
        bound = objective
    gap = getattr(res, "mip_gap", None)
    if res.status == 1:
        return SolveResult("time_limit", objective, bound, values, gap=gap, message=res.message)
    status = "optimal" if not gap else "gap_reached"
    return SolveResult(status, objective, bound, values, gap=gap or 0.0, message=res.message)


def _solve_reference(model: MilpModel, opts: SolveOptions) -> SolveResult:
    """Enumerate binary assignments, solve a dense LP for each (tiny models)."""
    if model.n_vars > 200:
        raise SolverError(f"reference backend is capped at 200 variables, model has {model.n_vars}")
    bins = [v for v in model.vars if v.binary and v.lo != v.hi]
    if len(bins) > 14:
        raise SolverError(f"reference backend is capped at 14 free binaries, model has {len(bins)}")
    if model.n_vars == 0:
        return SolveResult("optimal", model.obj_offset, model.obj_offset, {}, gap=0.0)
    c, _, var_lo, var_hi, A, row_lo, row_hi = model.to_arrays()
    A = A.toarray()
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for i in range(len(row_lo)):
        if row_lo[i] == row_hi[i]:
            eq_rows.append(A[i])
            eq_rhs.append(row_lo[i])
        else:
            if not math.isinf(row_hi[i]):
                ub_rows.append(A[i])
                ub_rhs.append(row_hi[i])
            if not math.isinf(row_lo[i]):
                ub_rows.append(-A[i])
                ub_rhs.append(-row_lo[i])
    A_ub = np.array(ub_rows) if ub_rows else None
    b_ub = np.array(ub_rhs) if ub_rhs else None
    A_eq = np.array(eq_rows) if eq_rows else None
    b_eq = np.array(eq_rhs) if eq_rhs else None
    best = None
    best_x = None
    for assignment in itertools.product((0.0, 1.0), repeat=len(bins)):
        lo = var_lo.copy()
        hi = var_hi.copy()
        for ref, val in zip(bins, assignment):
            lo[ref.col] = hi[ref.col] = val
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=list(zip(lo, hi)), method="highs")
        if res.status == 0 and (best is None or res.fun < best - 1e-12):
            best = res.fun
            best_x = res.x
    if best is None:
        return SolveResult("infeasible", None, None)
    obj = model.reported_objective(float(best))
    return SolveResult("optimal", obj, obj, _values_from_x(model, best_x), gap=0.0)


def _solve_cli(model: MilpModel, opts: SolveOptions) -> SolveResult:
    binary = os.environ.get(SOLVER_ENV_VAR)
    if not binary:
        raise SolverError(f"set {SOLVER_ENV_VAR} to the solver binary for the cli backend")
    with tempfile.TemporaryDirectory(prefix="blendplan_") as tmp:
        mps = os.path.join(tmp, "model.mps")
        sol = os.path.join(tmp, "model.sol")
        model.write_mps(mps)
        model.write_sidecar(mps + ".tags.json")
        cmd = [binary, mps, sol]
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=opts.time_limit + 60)
        if proc.returncode != 0 and not os.path.exists(sol):
            raise SolverError(f"solver exited with {proc.returncode}: {proc.stderr[:500]}")
        by_short = {f"C{v.col + 1}": v for v in model.vars}
        x = np.zeros(model.n_vars)
        seen = 0
        with open(sol) as fh:
            for line in fh:
                parts = line.split()
                if len(parts) == 2 and parts[0] in by_short:
                    try:
                        x[by_short[parts[0]].col] = float(parts[1])
                        seen += 1
                    except ValueError:
                        continue
        if seen == 0:
            return SolveResult("infeasible", None, None, message="no column values in solution file")
        raw = sum(model.obj.get(col, 0.0) * x[col] for col in range(model.n_vars))
        obj = model.reported_objective(raw)
        return SolveResult("optimal", obj, obj, _values_from_x(model, x))


_BACKENDS = {
    "highs": _solve_highs,
    "reference": _solve_reference,
    "cli": _solve_cli,
}


# ---------------------------------------------------------------------------
# Warm starts and plan extraction


def warm_start(model: MilpModel, plan: FlowPlan) -> MilpModel:
    """Attach starting values for unload/feed decisions from a plan.

    Plan entries without a matching variable are skipped; values outside
    the variable bounds are dropped with a warning.  Digit binaries get
    starts by simulating the plan and encoding the resulting tank specs.
    """
    if not any((plan.y_in, plan.y_out, plan.gamma, plan.sigma, plan.v_unused, plan.mis)):
        return model

    def put(kind, index, value):
        ref = model.var(kind, index)
        if ref is None:
            return
        if value < ref.lo - 1e-9 or value > ref.hi + 1e-9:
            log.warning("warm start for %s dropped: %.6g outside [%g, %g]",
                        ref.name, value, ref.lo, ref.hi)
            return
        model.starts[ref.col] = float(min(max(value, ref.lo), ref.hi))

    for (s, t), g in plan.gamma.items():
        put("gamma", (s, t), float(g))
    for (k, t), g in plan.sigma.items():
        put("sigma", (k, t), float(g))
    for (s, k, t), v in plan.y_in.items():
        put("y_in", (s, k, t), v)
    for (k, t), v in plan.y_out.items():
        put("y_out", (k, t), v)
    for s, v in plan.v_unused.items():
        put("v_unused", (s,), v)
    for t, v in plan.mis.items():
        put("mis", (t,), v)

    if model.plans is not None and model.instance is not None:
        try:
            trace = simulate(model.instance, plan)
        except PlanInconsistencyError as e:
            log.warning("warm start digits skipped, plan inconsistent: %s", e)
            return model
        for (k, q, t), fval in trace.f.items():
            p = model.plans.get((k, q))
            if p is None or p.n == 0:
                continue
            code = encode(min(max(fval, p.lo), p.hi), p)
            for i, digit in enumerate(code.digits, start=1):
                put("alpha", (k, q, t, i), float(digit))
    return model


def row_violations(model: MilpModel, values: dict[str, float], tol: float = ROW_FEAS_TOL):
    """Rows violated by more than ``tol`` at the given point (diagnostics)."""
    out = []
    val = {v.col: values[v.name] for v in model.vars if v.name in values}
    for row in model.rows:
        ax = sum(c * val.get(col, 0.0) for col, c in row.coeffs.items())
        if ax < row.lo - tol or ax > row.hi + tol:
            out.append((row.name, ax, row.lo, row.hi))
    return out


def extract_flow_plan(model: MilpModel, result: SolveResult) -> FlowPlan:
    """Read the decision variables out of a solve, rounding binaries at 0.5
    and re-validating the hard unload-counting rules."""
    if not result.has_values and model.n_vars > 0:
        raise ExtractionError(f"no values in result with status {result.status!r}")
    inst = model.instance
    vals = result.values

    def rounded(kind):
        out = {}
        for v in model.vars_of_kind(kind):
            out[v.index] = 1 if vals[v.name] >= 0.5 else 0
        return out

    def clipped(kind):
        out = {}
        for v in model.vars_of_kind(kind):
            x = vals[v.name]
            out[v.index] = 0.0 if abs(x) < 1e-9 else max(x, 0.0)
        return out

    gamma = rounded("gamma")
    plan = FlowPlan(
        y_in={idx: v for idx, v in clipped("y_in").items() if v > 0.0},
        y_out={idx: v for idx, v in clipped("y_out").items() if v > 0.0},
        gamma=gamma,
        sigma=rounded("sigma"),
        v_unused={idx[0]: v for idx, v in clipped("v_unused").items()},
        mis={idx[0]: v for idx, v in clipped("mis").items()},
    )
    if inst is not None:
        problems = []
        for b in inst.barges:
            n = sum(g for (s, _), g in gamma.items() if s == b.id)
            if n > inst.barge_max_unloads(b.id):
                problems.append(f"barge {b.id}: {n} unload days, limit {inst.barge_max_unloads(b.id)}")
        per_day: dict[int, int] = {}
        for (_, t), g in gamma.items():
            per_day[t] = per_day.get(t, 0) + g
        for t, n in sorted(per_day.items()):
            if n > inst.ops.max_unloads_per_day:
                problems.append(f"day {t}: {n} unloads, limit {inst.ops.max_unloads_per_day}")
        if problems:
            raise ExtractionError("rounded binaries violate counting limits: " + "; ".join(problems))
    return plan


def default_options(**overrides) -> SolveOptions:
    return replace(SolveOptions(), **overrides)
