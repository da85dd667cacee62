"""Build optimization models from an instance.

Four builders share one linear core (flows, demand, unload rules):

* ``build_exact_mix``   -- bilinear model tracking tank concentrations
  directly; products are concentration x volume.
* ``build_exact_split`` -- bilinear model tracking per-spec volumes; the
  only bilinear rows tie outflow composition to tank composition.
* ``build_center``      -- MILP: grid part of each tank spec encoded in
  shared binary digits, residual pinned to the cell midpoint, and the
  blending balance relaxed by half a cell per unit volume.
* ``build_mccormick``   -- MILP: same digits, residual kept as a variable
  whose volume products are bounded by convex-envelope rows.

Both MILPs tighten demand spec and ratio windows by half the requested
precision (and its ratio differential) so that simulated plans stay inside
the original windows; see ``tighten``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .discretize import DiscretizationPlan, degenerate_plan, plan as make_plan
from .instance import Instance, derive_sets
from .model import INF, MilpModel, QcpModel, VarRef
from .simulate import value_target

DROP_WITH_COUPLING = {"xa_mid_lb", "xa_end_ub"}
DROP_WITH_RELAX = {"xa_end_lb", "xa_out_ub"}


@dataclass(frozen=True)
class CenterOptions:
    coupling: bool = False     # add digit-product coupling rows, drop implied rows
    relax_avol: bool = False   # drop the further rows made redundant by coupling
    tighten: bool = True       # buffer demand spec / ratio windows

    def __post_init__(self):
        if self.relax_avol and not self.coupling:
            raise ValueError("relax_avol requires coupling")


# ---------------------------------------------------------------------------
# Reachable bounds, digit plans, tightened demand windows


def reachable_spec_bounds(inst: Instance) -> dict[tuple[str, str], tuple[float, float]]:
    """Per (tank, spec): hull of the initial content and admissible inflows."""
    ds = derive_sets(inst)
    out = {}
    for tank in inst.tanks:
        for q in inst.spec_ids():
            vals = [tank.specs_init[q]]
            vals += [inst.barge(s).specs[q] for s in ds.barges_by_tank[tank.id]]
            out[(tank.id, q)] = (min(vals), max(vals))
    return out


def _eps_by_spec(inst: Instance, eps_hat) -> dict[str, float]:
    if isinstance(eps_hat, dict):
        missing = set(inst.spec_ids()) - set(eps_hat)
        if missing:
            raise ValueError(f"eps_hat missing specs {sorted(missing)}")
        return {q: float(eps_hat[q]) for q in inst.spec_ids()}
    return {q: float(eps_hat) for q in inst.spec_ids()}


def make_plans(inst: Instance, eps_hat, base: int = 2) -> dict[tuple[str, str], DiscretizationPlan]:
    """Digit plan per (tank, spec) from its reachable bounds.

    Ranges no wider than the requested precision need no digits: the grid
    collapses to the lower bound with the whole range in the residual.
    """
    eps = _eps_by_spec(inst, eps_hat)
    plans = {}
    for (k, q), (lo, hi) in reachable_spec_bounds(inst).items():
        e = eps[q]
        if e <= 0:
            raise ValueError(f"eps_hat for {q} must be positive")
        if hi - lo <= 0.0:
            plans[(k, q)] = degenerate_plan(lo, e)
        elif hi - lo <= e:
            plans[(k, q)] = DiscretizationPlan("nmdt", base, lo, hi - lo, 0, base - 1, lo, hi, e)
        else:
            plans[(k, q)] = make_plan(lo, hi, e, base=base, scheme="nmdt")
    return plans


def plan_eps_hat(plans: dict[tuple[str, str], DiscretizationPlan]) -> dict[str, float]:
    out: dict[str, float] = {}
    for (_, q), p in plans.items():
        out[q] = max(out.get(q, 0.0), p.eps_hat)
    return out


def ratio_buffer(f1_max: float, f2_min: float, eps1: float, eps2: float) -> float:
    """First-order bound on the ratio error from spec errors of eps/2 each."""
    if f2_min <= 0:
        raise ValueError("ratio denominator must have a positive reachable lower bound")
    return (eps1 / 2.0) / f2_min + f1_max * (eps2 / 2.0) / f2_min ** 2


@dataclass
class TightenedBounds:
    spec: dict[tuple[str, str], tuple[float, float]]          # (run, spec)
    ratio: dict[tuple[str, str, str], tuple[float, float]]    # (run, q1, q2)
    warnings: list[str] = field(default_factory=list)


def _shrink(lo: float, hi: float, buffer: float, min_width: float, label: str,
            warnings: list[str]) -> tuple[float, float]:
    width = hi - lo
    if width - 2.0 * buffer >= min_width - 1e-12:
        return (lo + buffer, hi - buffer)
    if width >= min_width - 1e-12:
        b = (width - min_width) / 2.0
        return (lo + b, hi - b)
    warnings.append(f"{label}: window width {width} below one discretization cell "
                    f"{min_width}; buffer skipped")
    return (lo, hi)


def tighten(inst: Instance, eps_hat) -> TightenedBounds:
    """Buffer each demand window by eps_hat/2 (specs) or by the ratio
    differential (ratios).  A buffer is reduced when it would leave a
    window narrower than one discretization cell, and skipped with a
    warning when the original window is already narrower than that.
    """
    eps = _eps_by_spec(inst, eps_hat)
    reach = reachable_spec_bounds(inst)
    glo = {q: min(reach[(k.id, q)][0] for k in inst.tanks) for q in inst.spec_ids()}
    ghi = {q: max(reach[(k.id, q)][1] for k in inst.tanks) for q in inst.spec_ids()}
    out = TightenedBounds({}, {})
    for r in inst.runs:
        for q, (lo, hi) in r.spec_bounds.items():
            out.spec[(r.id, q)] = _shrink(lo, hi, eps[q] / 2.0, eps[q],
                                          f"run {r.id} spec {q}", out.warnings)
        for (q1, q2), (lo, hi) in r.ratio_bounds.items():
            buf = ratio_buffer(ghi[q1], glo[q2], eps[q1], eps[q2])
            out.ratio[(r.id, q1, q2)] = _shrink(lo, hi, buf, 2.0 * buf,
                                                f"run {r.id} ratio {q1}/{q2}", out.warnings)
    return out


def _identity_bounds(inst: Instance) -> TightenedBounds:
    out = TightenedBounds({}, {})
    for r in inst.runs:
        for q, b in r.spec_bounds.items():
            out.spec[(r.id, q)] = b
        for (q1, q2), b in r.ratio_bounds.items():
            out.ratio[(r.id, q1, q2)] = b
    return out


# ---------------------------------------------------------------------------
# Shared linear core


class _Core:
    """Variable handles for the flow/unload/demand skeleton of a model."""

    def __init__(self, m: MilpModel, inst: Instance):
        self.m = m
        self.inst = inst
        self.ds = derive_sets(inst)
        H = inst.horizon
        ds = self.ds
        self.demand_days = set(ds.demand_days)

        self.v_unused = {b.id: m.add_var("v_unused", (b.id,), 0.0, b.volume) for b in inst.barges}
        self.mis = {t: m.add_var("mis", (t,), 0.0, ds.demand(t)) for t in ds.demand_days}
        self.gamma = {}
        self.y_in = {}
        for b in inst.barges:
            days = range(b.window[0], min(b.window[1], H - 1) + 1)
            for t in days:
                self.gamma[(b.id, t)] = m.add_var("gamma", (b.id, t), 0.0, 1.0, binary=True)
                for k in b.allowed_tanks:
                    self.y_in[(b.id, k, t)] = m.add_var("y_in", (b.id, k, t), 0.0, b.volume)
            m.note_structural("barge_window_mask", H - len(list(days)))
            m.note_structural("supply_window", (H - len(list(days))) * len(b.allowed_tanks))
        self.sigma = {}
        self.y_out = {}
        for k in inst.tanks:
            for t in ds.demand_days:
                self.sigma[(k.id, t)] = m.add_var("sigma", (k.id, t), 0.0, 1.0, binary=True)
                self.y_out[(k.id, t)] = m.add_var("y_out", (k.id, t), 0.0, ds.demand(t))
        self.v_mid = {}
        self.v_end = {}
        for k in inst.tanks:
            for t in range(H):
                self.v_mid[(k.id, t)] = m.add_var("v_mid", (k.id, t), k.v_min, k.v_max)
                self.v_end[(k.id, t)] = m.add_var("v_end", (k.id, t), k.v_min, k.v_max)
            m.note_structural("inv_lb", H)
            m.note_structural("inv_ub", H)
            m.note_structural("init_volume")
        self.t_first = {b.id: m.add_var("t_first", (b.id,), 0.0, H) for b in inst.barges}
        self.t_last = {b.id: m.add_var("t_last", (b.id,), 0.0, H) for b in inst.barges}

        self._rows()
        self._objective()

    def inflow_coeffs(self, k: str, t: int) -> dict[VarRef, float]:
        out = {}
        for s in self.ds.barges_by_tank[k]:
            ref = self.y_in.get((s, k, t))
            if ref is not None:
                out[ref] = 1.0
        return out

    def _rows(self):
        m, inst, ds = self.m, self.inst, self.ds
        H = inst.horizon
        for k in inst.tanks:
            for t in range(H):
                coeffs = self.inflow_coeffs(k.id, t)
                coeffs[self.v_mid[(k.id, t)]] = -1.0
                rhs = 0.0
                if t == 0:
                    rhs = -k.v_init
                else:
                    coeffs[self.v_end[(k.id, t - 1)]] = 1.0
                m.add_eq("inflow_balance", coeffs, rhs, f"inflow_balance[{k.id},{t}]")
                coeffs = {self.v_mid[(k.id, t)]: 1.0, self.v_end[(k.id, t)]: -1.0}
                out = self.y_out.get((k.id, t))
                if out is not None:
                    coeffs[out] = -1.0
                m.add_eq("outflow_balance", coeffs, 0.0, f"outflow_balance[{k.id},{t}]")

        for t in ds.demand_days:
            coeffs = {self.y_out[(k.id, t)]: 1.0 for k in inst.tanks}
            coeffs[self.mis[t]] = 1.0
            m.add_eq("demand_balance", coeffs, ds.demand(t), f"demand_balance[{t}]")

        for b in inst.barges:
            coeffs = {ref: 1.0 for (s, _, _), ref in self.y_in.items() if s == b.id}
            coeffs[self.v_unused[b.id]] = 1.0
            m.add_eq("supply_total", coeffs, b.volume, f"supply_total[{b.id}]")

        for r in inst.runs:
            for k in inst.tanks:
                for t in range(r.days[0] + 1, r.days[1] + 1):
                    m.add_eq("run_const_feed",
                             {self.y_out[(k.id, t)]: 1.0, self.y_out[(k.id, t - 1)]: -1.0},
                             0.0, f"run_const_feed[{k.id},{t}]")
        for k in inst.tanks:
            for t in ds.demand_days:
                d = ds.demand(t)
                m.add_row("feed_share_lb",
                          {self.y_out[(k.id, t)]: 1.0, self.sigma[(k.id, t)]: -k.min_feed_pct * d},
                          lo=0.0, name=f"feed_share_lb[{k.id},{t}]")
                m.add_row("feed_share_ub",
                          {self.y_out[(k.id, t)]: 1.0, self.sigma[(k.id, t)]: -d},
                          hi=0.0, name=f"feed_share_ub[{k.id},{t}]")

        for b in inst.barges:
            coeffs = {ref: 1.0 for (s, _), ref in self.gamma.items() if s == b.id}
            m.add_row("barge_unload_limit", coeffs, hi=float(inst.barge_max_unloads(b.id)),
                      name=f"barge_unload_limit[{b.id}]")
        for t, avail in ds.available_by_day.items():
            coeffs = {self.gamma[(s, t)]: 1.0 for s in avail if (s, t) in self.gamma}
            if coeffs:
                m.add_row("daily_unload_limit", coeffs, hi=float(inst.ops.max_unloads_per_day),
                          name=f"daily_unload_limit[{t}]")
        for (s, k, t), ref in self.y_in.items():
            vol = self.inst.barge(s).volume
            m.add_row("unload_flow_gate", {ref: 1.0, self.gamma[(s, t)]: -vol},
                      hi=0.0, name=f"unload_flow_gate[{s},{k},{t}]")
        for b in inst.barges:
            need = inst.barge_min_unload_pct(b.id) * b.volume
            for t in range(b.window[0], min(b.window[1], H - 1) + 1):
                coeffs = {self.y_in[(b.id, k, t)]: 1.0 for k in b.allowed_tanks}
                coeffs[self.gamma[(b.id, t)]] = -need
                m.add_row("unload_min_pct", coeffs, lo=0.0, name=f"unload_min_pct[{b.id},{t}]")

        for (s, t), g in self.gamma.items():
            m.add_row("first_unload_ub", {self.t_first[s]: 1.0, g: float(H - t)},
                      hi=float(H), name=f"first_unload_ub[{s},{t}]")
            m.add_row("last_unload_lb", {self.t_last[s]: 1.0, g: -float(H + t)},
                      lo=-float(H), name=f"last_unload_lb[{s},{t}]")
        for b in inst.barges:
            m.add_row("unload_gap", {self.t_last[b.id]: 1.0, self.t_first[b.id]: -1.0},
                      hi=float(inst.ops.max_unload_gap), name=f"unload_gap[{b.id}]")

    def _objective(self):
        inst, ds = self.inst, self.ds
        coeffs: dict[VarRef, float] = {}
        for b in inst.barges:
            coeffs[self.v_unused[b.id]] = b.unload_penalty
        for t in ds.demand_days:
            coeffs[self.mis[t]] = ds.miss_penalty_by_day[t]
        self.m.set_objective(coeffs, value_target(inst))


# ---------------------------------------------------------------------------
# Exact bilinear models


def build_exact_mix(inst: Instance) -> QcpModel:
    """Bilinear model with explicit tank concentrations (products f x v)."""
    m = QcpModel("exact_mix")
    core = _Core(m, inst)
    m.instance = inst
    m.meta["method"] = "exact-mix"
    ds = core.ds
    reach = reachable_spec_bounds(inst)
    H = inst.horizon

    f = {}
    for k in inst.tanks:
        for q in inst.spec_ids():
            lo, hi = reach[(k.id, q)]
            for t in range(H):
                f[(k.id, q, t)] = m.add_var("f", (k.id, q, t), lo, hi)
            m.note_structural("init_spec")

    for k in inst.tanks:
        for q in inst.spec_ids():
            for t in range(H):
                fv = f[(k.id, q, t)]
                lin = {ref: -inst.barge(s).specs[q]
                       for (s, kk, tt), ref in core.y_in.items() if kk == k.id and tt == t}
                quads = [(1.0, fv, core.v_mid[(k.id, t)])]
                rhs = 0.0
                if t == 0:
                    rhs = k.specs_init[q] * k.v_init
                else:
                    quads.append((-1.0, f[(k.id, q, t - 1)], core.v_end[(k.id, t - 1)]))
                m.add_quad_row("blend_mix", lin, quads, rhs, rhs, f"blend_mix[{k.id},{q},{t}]")
                quads = [(1.0, fv, core.v_mid[(k.id, t)]), (-1.0, fv, core.v_end[(k.id, t)])]
                out = core.y_out.get((k.id, t))
                if out is not None:
                    quads.append((-1.0, fv, out))
                m.add_quad_row("spec_flow_split", {}, quads, 0.0, 0.0,
                               f"spec_flow_split[{k.id},{q},{t}]")

    for r in inst.runs:
        for t in range(r.days[0], r.days[1] + 1):
            outs = {k.id: core.y_out[(k.id, t)] for k in inst.tanks}
            for q, (lo, hi) in sorted(r.spec_bounds.items()):
                quads = [(1.0, f[(kid, q, t)], ref) for kid, ref in outs.items()]
                m.add_quad_row("feed_spec_lb", {ref: -lo for ref in outs.values()}, quads,
                               0.0, INF, f"feed_spec_lb[{q},{t}]")
                m.add_quad_row("feed_spec_ub", {ref: -hi for ref in outs.values()}, quads,
                               -INF, 0.0, f"feed_spec_ub[{q},{t}]")
            for (q1, q2), (lo, hi) in sorted(r.ratio_bounds.items()):
                quads = [(1.0, f[(kid, q1, t)], ref) for kid, ref in outs.items()]
                quads += [(-lo, f[(kid, q2, t)], ref) for kid, ref in outs.items()]
                m.add_quad_row("feed_ratio_lb", {}, quads, 0.0, INF, f"feed_ratio_lb[{q1},{q2},{t}]")
                quads = [(1.0, f[(kid, q1, t)], ref) for kid, ref in outs.items()]
                quads += [(-hi, f[(kid, q2, t)], ref) for kid, ref in outs.items()]
                m.add_quad_row("feed_ratio_ub", {}, quads, -INF, 0.0, f"feed_ratio_ub[{q1},{q2},{t}]")
    return m


def build_exact_split(inst: Instance) -> QcpModel:
    """Bilinear model tracking spec volumes; mixing is linear and the only
    bilinear rows force outflow composition to match tank composition."""
    m = QcpModel("exact_split")
    core = _Core(m, inst)
    m.instance = inst
    m.meta["method"] = "exact-split"
    reach = reachable_spec_bounds(inst)
    vf_mid, vf_end, yf_out = _add_spec_volume_vars(m, core, reach)
    _add_spec_volume_mass_rows(m, core, vf_mid, vf_end, yf_out, relax_eps=None)
    _add_feed_window_rows(m, core, yf_out, _identity_bounds(inst))
    for k in inst.tanks:
        for q in inst.spec_ids():
            for t in sorted(core.demand_days):
                m.add_quad_row(
                    "outflow_consistency", {},
                    [(1.0, vf_mid[(k.id, q, t)], core.y_out[(k.id, t)]),
                     (-1.0, yf_out[(k.id, q, t)], core.v_mid[(k.id, t)])],
                    0.0, 0.0, f"outflow_consistency[{k.id},{q},{t}]")
    return m


def _add_spec_volume_vars(m: MilpModel, core: _Core, reach):
    inst = core.inst
    vf_mid, vf_end, yf_out = {}, {}, {}
    for k in inst.tanks:
        for q in inst.spec_ids():
            lo, hi = reach[(k.id, q)]
            for t in range(inst.horizon):
                vf_mid[(k.id, q, t)] = m.add_var("vf_mid", (k.id, q, t), lo * k.v_min, hi * k.v_max)
                vf_end[(k.id, q, t)] = m.add_var("vf_end", (k.id, q, t), lo * k.v_min, hi * k.v_max)
                if t in core.demand_days:
                    yf_out[(k.id, q, t)] = m.add_var("yf_out", (k.id, q, t),
                                                     0.0, hi * core.ds.demand(t))
            m.note_structural("init_spec_volume")
    return vf_mid, vf_end, yf_out


def _add_spec_volume_mass_rows(m, core: _Core, vf_mid, vf_end, yf_out, relax_eps):
    """Mass-balance rows for spec volumes.

    With ``relax_eps`` a per-(tank,spec) map, the blending balance becomes
    a two-sided relaxation of +/- eps/2 per unit of post-blend volume;
    with None it is an equality.
    """
    inst = core.inst
    for k in inst.tanks:
        for q in inst.spec_ids():
            for t in range(inst.horizon):
                coeffs = {vf_mid[(k.id, q, t)]: 1.0, vf_end[(k.id, q, t)]: -1.0}
                out = yf_out.get((k.id, q, t))
                if out is not None:
                    coeffs[out] = -1.0
                m.add_eq("spec_mass_split", coeffs, 0.0, f"spec_mass_split[{k.id},{q},{t}]")

                base = {vf_mid[(k.id, q, t)]: 1.0}
                for s in core.ds.barges_by_tank[k.id]:
                    ref = core.y_in.get((s, k.id, t))
                    if ref is not None:
                        base[ref] = -inst.barge(s).specs[q]
                rhs = k.specs_init[q] * k.v_init if t == 0 else 0.0
                if t > 0:
                    base[vf_end[(k.id, q, t - 1)]] = -1.0
                if relax_eps is None:
                    m.add_eq("spec_mass_blend", base, rhs, f"spec_mass_blend[{k.id},{q},{t}]")
                else:
                    half = relax_eps[(k.id, q)] / 2.0
                    vm = core.v_mid[(k.id, t)]
                    ub = dict(base)
                    ub[vm] = ub.get(vm, 0.0) - half
                    m.add_row("blend_relax_ub", ub, hi=rhs, name=f"blend_relax_ub[{k.id},{q},{t}]")
                    lb = dict(base)
                    lb[vm] = lb.get(vm, 0.0) + half
                    m.add_row("blend_relax_lb", lb, lo=rhs, name=f"blend_relax_lb[{k.id},{q},{t}]")


def _add_feed_window_rows(m, core: _Core, yf_out, bounds: TightenedBounds):
    inst = core.inst
    for r in inst.runs:
        for t in range(r.days[0], r.days[1] + 1):
            outs = [core.y_out[(k.id, t)] for k in inst.tanks]
            for q in sorted(r.spec_bounds):
                lo, hi = bounds.spec[(r.id, q)]
                yfs = {yf_out[(k.id, q, t)]: 1.0 for k in inst.tanks}
                row = dict(yfs)
                for ref in outs:
                    row[ref] = -lo
                m.add_row("feed_spec_lb", row, lo=0.0, name=f"feed_spec_lb[{q},{t}]")
                row = dict(yfs)
                for ref in outs:
                    row[ref] = -hi
                m.add_row("feed_spec_ub", row, hi=0.0, name=f"feed_spec_ub[{q},{t}]")
            for (q1, q2) in sorted(r.ratio_bounds):
                lo, hi = bounds.ratio[(r.id, q1, q2)]
                row = {yf_out[(k.id, q1, t)]: 1.0 for k in inst.tanks}
                for k in inst.tanks:
                    row[yf_out[(k.id, q2, t)]] = -lo
                m.add_row("feed_ratio_lb", row, lo=0.0, name=f"feed_ratio_lb[{q1},{q2},{t}]")
                row = {yf_out[(k.id, q1, t)]: 1.0 for k in inst.tanks}
                for k in inst.tanks:
                    row[yf_out[(k.id, q2, t)]] = -hi
                m.add_row("feed_ratio_ub", row, hi=0.0, name=f"feed_ratio_ub[{q1},{q2},{t}]")


# ---------------------------------------------------------------------------
# Discretized MILP models


def _digit_weight(p: DiscretizationPlan, i: int) -> float:
    return p.eps * p.level_weight(i)


def _add_digit_vars(m: MilpModel, core: _Core, plans):
    """Shared digit binaries and digit-product variables per (tank, spec, day)."""
    inst = core.inst
    alpha, xa = {}, {}
    for k in inst.tanks:
        for q in inst.spec_ids():
            p = plans[(k.id, q)]
            for t in range(inst.horizon):
                for i in range(1, p.n + 1):
                    alpha[(k.id, q, t, i)] = m.add_var("alpha", (k.id, q, t, i), 0.0, 1.0, binary=True)
                    xa[(k.id, q, t, i, "mid")] = m.add_var("x_alpha", (k.id, q, t, i, "mid"), 0.0, k.v_max)
                    xa[(k.id, q, t, i, "end")] = m.add_var("x_alpha", (k.id, q, t, i, "end"), 0.0, k.v_max)
                    if t in core.demand_days:
                        xa[(k.id, q, t, i, "out")] = m.add_var(
                            "x_alpha", (k.id, q, t, i, "out"), 0.0, core.ds.demand(t))
    return alpha, xa


def _envelope_rows(m, tag_family: str, x: VarRef, beta: VarRef, prod: VarRef,
                   xlo: float, xhi: float, name: str, scale: float = 1.0,
                   skip: set[str] = frozenset()):
    """Convex-envelope rows for prod = x * (scale * beta), beta in [0, 1].

    With scale == 1 and binary beta these rows are exact; with scale == eps
    and beta the residual variable in [0, eps] they are its envelope.
    """
    tags = {
        "lb": (f"{tag_family}_lb", {prod: 1.0, beta: -xlo}, 0.0, INF),
        "ub": (f"{tag_family}_ub", {prod: 1.0, beta: -xhi}, -INF, 0.0),
        "shift_ub": (f"{tag_family}_shift_ub", {prod: 1.0, x: -scale, beta: -xlo},
                     -INF, -xlo * scale),
        "shift_lb": (f"{tag_family}_shift_lb", {prod: 1.0, x: -scale, beta: -xhi},
                     -xhi * scale, INF),
    }
    for key, (tag, coeffs, lo, hi) in tags.items():
        if tag in skip:
            continue
        m.add_row(tag, coeffs, lo, hi, f"{tag}[{name}]")


def build_center(inst: Instance, plans=None, opts: CenterOptions | None = None,
                 eps_hat=None) -> MilpModel:
    """MILP with the spec residual pinned to the grid-cell midpoint.

    The blending balance is relaxed two-sided by eps/2 per unit of
    post-blend volume, so any true mixture within half a cell of a grid
    midpoint is representable.  One digit vector per (tank, spec, day) is
    shared by the post-blend volume, end volume and feed products.
    """
    opts = opts or CenterOptions()
    if plans is None:
        if eps_hat is None:
            raise ValueError("need plans or eps_hat")
        plans = make_plans(inst, eps_hat)
    m = MilpModel("center")
    core = _Core(m, inst)
    m.instance = inst
    m.plans = plans
    m.meta["method"] = "center"
    m.meta["opts"] = opts
    _check_plans(inst, plans)
    reach = {kq: (p.lo, p.hi) for kq, p in plans.items()}
    vf_mid, vf_end, yf_out = _add_spec_volume_vars(m, core, reach)
    alpha, xa = _add_digit_vars(m, core, plans)
    relax_eps = {kq: p.eps for kq, p in plans.items()}
    _add_spec_volume_mass_rows(m, core, vf_mid, vf_end, yf_out, relax_eps=relax_eps)

    skip: set[str] = set()
    if opts.coupling:
        skip |= DROP_WITH_COUPLING
    if opts.relax_avol:
        skip |= DROP_WITH_RELAX

    for k in inst.tanks:
        for q in inst.spec_ids():
            p = plans[(k.id, q)]
            center0 = p.lambda0 + p.eps / 2.0
            for t in range(inst.horizon):
                name = f"{k.id},{q},{t}"
                targets = [("mid", vf_mid[(k.id, q, t)], core.v_mid[(k.id, t)], k.v_min, k.v_max)]
                targets.append(("end", vf_end[(k.id, q, t)], core.v_end[(k.id, t)], k.v_min, k.v_max))
                if t in core.demand_days:
                    targets.append(("out", yf_out[(k.id, q, t)], core.y_out[(k.id, t)],
                                    0.0, core.ds.demand(t)))
                for fam, xf, x, xlo, xhi in targets:
                    coeffs = {xf: 1.0, x: -center0}
                    for i in range(1, p.n + 1):
                        coeffs[xa[(k.id, q, t, i, fam)]] = -_digit_weight(p, i)
                    m.add_eq(f"xf_def_{fam}", coeffs, 0.0, f"xf_def_{fam}[{name}]")
                    for i in range(1, p.n + 1):
                        _envelope_rows(m, f"xa_{fam}", x, alpha[(k.id, q, t, i)],
                                       xa[(k.id, q, t, i, fam)], xlo, xhi,
                                       f"{name},{i}", skip=skip)
                if opts.coupling:
                    for i in range(1, p.n + 1):
                        coeffs = {xa[(k.id, q, t, i, "mid")]: 1.0,
                                  xa[(k.id, q, t, i, "end")]: -1.0}
                        out = xa.get((k.id, q, t, i, "out"))
                        if out is not None:
                            coeffs[out] = -1.0
                        m.add_eq("digit_coupling", coeffs, 0.0, f"digit_coupling[{name},{i}]")

    bounds = tighten(inst, plan_eps_hat(plans)) if opts.tighten else _identity_bounds(inst)
    m.meta["tightened"] = bounds
    _add_feed_window_rows(m, core, yf_out, bounds)
    return m


def build_mccormick(inst: Instance, plans=None, eps_hat=None, tighten_bounds: bool = True) -> MilpModel:
    """MILP keeping the spec residual as a variable; residual-volume
    products are enclosed by their convex envelopes.  Blending is exact."""
    if plans is None:
        if eps_hat is None:
            raise ValueError("need plans or eps_hat")
        plans = make_plans(inst, eps_hat)
    m = MilpModel("mccormick")
    core = _Core(m, inst)
    m.instance = inst
    m.plans = plans
    m.meta["method"] = "mccormick"
    _check_plans(inst, plans)
    reach = {kq: (p.lo, p.hi) for kq, p in plans.items()}
    vf_mid, vf_end, yf_out = _add_spec_volume_vars(m, core, reach)
    alpha, xa = _add_digit_vars(m, core, plans)
    _add_spec_volume_mass_rows(m, core, vf_mid, vf_end, yf_out, relax_eps=None)

    for k in inst.tanks:
        for q in inst.spec_ids():
            p = plans[(k.id, q)]
            for t in range(inst.horizon):
                name = f"{k.id},{q},{t}"
                if p.eps > 0.0:
                    df = m.add_var("delta_f", (k.id, q, t), 0.0, p.eps)
                else:
                    df = None
                targets = [("mid", vf_mid[(k.id, q, t)], core.v_mid[(k.id, t)], k.v_min, k.v_max)]
                targets.append(("end", vf_end[(k.id, q, t)], core.v_end[(k.id, t)], k.v_min, k.v_max))
                if t in core.demand_days:
                    targets.append(("out", yf_out[(k.id, q, t)], core.y_out[(k.id, t)],
                                    0.0, core.ds.demand(t)))
                for fam, xf, x, xlo, xhi in targets:
                    coeffs = {xf: 1.0, x: -p.lambda0}
                    if df is not None:
                        xd = m.add_var("x_delta", (k.id, q, t, fam), 0.0, p.eps * xhi)
                        coeffs[xd] = -1.0
                    for i in range(1, p.n + 1):
                        coeffs[xa[(k.id, q, t, i, fam)]] = -_digit_weight(p, i)
                    m.add_eq(f"xf_def_{fam}", coeffs, 0.0, f"xf_def_{fam}[{name}]")
                    for i in range(1, p.n + 1):
                        _envelope_rows(m, f"xa_{fam}", x, alpha[(k.id, q, t, i)],
                                       xa[(k.id, q, t, i, fam)], xlo, xhi, f"{name},{i}")
                    if df is not None:
                        # beta = delta_f / eps; rows scaled through by eps
                        _envelope_rows(m, f"xdelta_{fam}", x, df, xd, xlo, xhi,
                                       name, scale=p.eps)

    bounds = tighten(inst, plan_eps_hat(plans)) if tighten_bounds else _identity_bounds(inst)
    m.meta["tightened"] = bounds
    _add_feed_window_rows(m, core, yf_out, bounds)
    return m


def _check_plans(inst: Instance, plans) -> None:
    for k in inst.tanks:
        for q in inst.spec_ids():
            if (k.id, q) not in plans:
                raise KeyError(f"no discretization plan for tank {k.id}, spec {q}")


# ---------------------------------------------------------------------------
# Generalized digit envelope block (library form)


def mccormick_m(x_bounds: tuple[float, float], m: int, name: str = "x"):
    """Standalone model block for the products of x with a one-hot selector.

    Returns ``(model, x, betas, products)`` where sum(betas) = 1,
    sum(products) = x, and each product carries the four envelope rows.
    With m = 0 the block forces beta_0 = 1 and product_0 = x.
    """
    if m < 0:
        raise ValueError("m must be >= 0")
    xlo, xhi = x_bounds
    mdl = MilpModel(f"mccormick_m[{name}]")
    x = mdl.add_var("x", (name,), xlo, xhi)
    betas = [mdl.add_var("beta", (name, j), 0.0, 1.0, binary=True) for j in range(m + 1)]
    prods = [mdl.add_var("x_beta", (name, j), min(xlo, 0.0), max(xhi, 0.0)) for j in range(m + 1)]
    mdl.add_eq("envelope_select", {b: 1.0 for b in betas}, 1.0, f"envelope_select[{name}]")
    coeffs = {p: 1.0 for p in prods}
    coeffs[x] = -1.0
    mdl.add_eq("envelope_sum", coeffs, 0.0, f"envelope_sum[{name}]")
    for j, (b, p) in enumerate(zip(betas, prods)):
        _envelope_rows(mdl, "envelope", x, b, p, xlo, xhi, f"{name},{j}")
    return mdl, x, betas, prods
