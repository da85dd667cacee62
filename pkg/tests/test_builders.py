"""Model builders: structure, bounds, tightening, tag coverage, variants."""

from dataclasses import replace

import pytest

from blendplan.builders import (CenterOptions, build_center, build_exact_mix,
                                build_exact_split, build_mccormick, make_plans,
                                mccormick_m, ratio_buffer,
                                reachable_spec_bounds, tighten)
from blendplan.instance import Barge, Run, SpecDef, Tank
from blendplan.solve import SolveOptions, solve
from conftest import small_instance, toy_1t1s

CORE_TAGS = {
    "inflow_balance", "outflow_balance", "demand_balance", "supply_total",
    "run_const_feed", "feed_share_lb", "feed_share_ub", "barge_unload_limit",
    "daily_unload_limit", "unload_flow_gate", "unload_min_pct",
    "first_unload_ub", "last_unload_lb", "unload_gap",
    "inv_lb", "inv_ub", "init_volume",
}
# noted only when a window is a proper subset of the horizon
MASK_TAGS = {"supply_window", "barge_window_mask"}
FEED_TAGS = {"feed_spec_lb", "feed_spec_ub", "feed_ratio_lb", "feed_ratio_ub"}
ENVELOPE_TAGS = {f"xa_{fam}_{kind}" for fam in ("mid", "end", "out")
                 for kind in ("lb", "ub", "shift_lb", "shift_ub")}
DELTA_TAGS = {f"xdelta_{fam}_{kind}" for fam in ("mid", "end", "out")
              for kind in ("lb", "ub", "shift_lb", "shift_ub")}
XF_TAGS = {"xf_def_mid", "xf_def_end", "xf_def_out"}


def test_exact_mix_bilinear_structure(toy):
    m = build_exact_mix(toy)
    # one spec, one tank, two days: products f*v_mid, f*v_end, f*y_out per day
    assert len(m.bilinear_pairs()) == 6
    assert m.bilinear_kind_pairs() == {("f", "v_mid"), ("f", "v_end"), ("f", "y_out")}
    assert m.tags() >= CORE_TAGS | {"blend_mix", "spec_flow_split", "init_spec",
                                    "feed_spec_lb", "feed_spec_ub"}


def test_exact_mix_no_ratio_rows_without_pairs(toy):
    m = build_exact_mix(toy)
    assert not [q for q in m.quad_rows if q.tag.startswith("feed_ratio")]


def test_window_mask_tags_noted_for_partial_windows():
    inst = small_instance(0)
    m = build_exact_mix(inst)
    assert MASK_TAGS <= set(m.structural_tags)


def test_exact_mix_unload_limit_rhs(toy):
    m = build_exact_mix(toy)
    rows = m.rows_by_tag("barge_unload_limit")
    assert len(rows) == 1 and rows[0].hi == 2.0


def test_exact_split_bilinear_only_outflow_consistency(toy):
    m = build_exact_split(toy)
    quad = [q for q in m.quad_rows if q.quads]
    assert {q.tag for q in quad} == {"outflow_consistency"}
    assert len(quad) == 2          # one per (tank, spec, demand day)
    assert all(len(q.quads) == 2 for q in quad)


def test_exact_split_initial_condition_value():
    inst = toy_1t1s()
    inst = replace(inst, tanks=(Tank("T1", 2000.0, 100.0, 1179.0, {"P": 50.0}, 0.10),))
    m = build_exact_split(inst)
    row0 = [r for r in m.rows if r.tag == "spec_mass_blend" and r.name.endswith(",0]")][0]
    assert row0.lo == row0.hi == pytest.approx(1179.0 * 50.0)


def test_no_specs_makes_split_a_pure_milp(toy):
    inst = replace(toy, specs=(),
                   tanks=(replace(toy.tanks[0], specs_init={}),),
                   barges=(replace(toy.barges[0], specs={}),),
                   runs=(replace(toy.runs[0], spec_bounds={}),))
    m = build_exact_split(inst)
    assert not m.has_bilinear()


def test_reachable_bounds_hull(toy):
    inst = replace(toy, barges=(
        replace(toy.barges[0], id="B1", specs={"P": 12.0}),
        replace(toy.barges[0], id="B2", specs={"P": 8.0}),
    ), tanks=(replace(toy.tanks[0], specs_init={"P": 10.0}),))
    assert reachable_spec_bounds(inst)[("T1", "P")] == (8.0, 12.0)


def test_reachable_bounds_no_inflow_is_degenerate():
    inst = toy_1t1s()
    inst = replace(
        inst,
        tanks=inst.tanks + (Tank("T2", 500.0, 0.0, 100.0, {"P": 33.0}, 0.10),),
    )
    assert reachable_spec_bounds(inst)[("T2", "P")] == (33.0, 33.0)
    plans = make_plans(inst, 1.0)
    assert plans[("T2", "P")].degenerate


def test_tighten_spec_buffer(toy):
    inst = replace(toy, runs=(replace(toy.runs[0], spec_bounds={"P": (40.0, 60.0)}),))
    tb = tighten(inst, 1.0)
    assert tb.spec[("R1", "P")] == (40.5, 59.5)


def test_tighten_zero_eps_is_identity(toy):
    tb = tighten(toy, 0.0)
    assert tb.spec[("R1", "P")] == toy.runs[0].spec_bounds["P"]


def test_ratio_buffer_formula():
    assert ratio_buffer(60.0, 30.0, 1.0, 1.0) == pytest.approx(0.05)


def test_tighten_ratio_window():
    inst = toy_1t1s()
    inst = replace(
        inst,
        specs=(SpecDef("P"), SpecDef("Q")),
        tanks=(Tank("T1", 1000.0, 100.0, 500.0, {"P": 60.0, "Q": 30.0}, 0.10),),
        barges=(Barge("B1", 400.0, {"P": 60.0, "Q": 30.0}, (0, 1), 1000.0, ("T1",)),),
        runs=(Run("R1", (0, 1), 200.0, {"P": (0.0, 100.0), "Q": (20.0, 100.0)},
                  {("P", "Q"): (1.0, 2.0)}, 3000.0),),
    )
    tb = tighten(inst, 1.0)
    assert tb.ratio[("R1", "P", "Q")] == (pytest.approx(1.05), pytest.approx(1.95))


def test_tighten_buffer_reduction_rule(toy):
    # window narrower than 2*eps_hat: buffer shrinks until one cell remains
    inst = replace(toy, runs=(replace(toy.runs[0], spec_bounds={"P": (50.0, 51.5)}),))
    tb = tighten(inst, 1.0)
    lo, hi = tb.spec[("R1", "P")]
    assert hi - lo == pytest.approx(1.0)
    assert lo == pytest.approx(50.25) and hi == pytest.approx(51.25)
    # window narrower than one cell: buffer skipped with a warning
    inst2 = replace(toy, runs=(replace(toy.runs[0], spec_bounds={"P": (50.0, 50.5)}),))
    tb2 = tighten(inst2, 1.0)
    assert tb2.spec[("R1", "P")] == (50.0, 50.5)
    assert tb2.warnings


def test_tightened_windows_are_subsets():
    for seed in range(6):
        inst = small_instance(seed, tight=seed % 2 == 0)
        tb = tighten(inst, 1.0)
        for r in inst.runs:
            for q, (lo, hi) in r.spec_bounds.items():
                tlo, thi = tb.spec[(r.id, q)]
                assert lo - 1e-12 <= tlo <= thi <= hi + 1e-12
            for (q1, q2), (lo, hi) in r.ratio_bounds.items():
                tlo, thi = tb.ratio[(r.id, q1, q2)]
                assert lo - 1e-12 <= tlo <= thi <= hi + 1e-12


# -- discretized models -------------------------------------------------------


def test_center_binary_count_per_day(toy):
    # reachable width 10 at eps_hat 1 -> 4 digits per day, one tank, one spec
    plans = make_plans(toy, 1.0)
    assert plans[("T1", "P")].n == 4
    m = build_center(toy, plans)
    alphas = m.vars_of_kind("alpha")
    assert len(alphas) == 4 * toy.horizon
    # plus gamma (2 window days) and sigma (2 demand days)
    assert m.n_binary == len(alphas) + 2 + 2


def test_center_zero_digits_leaves_unload_binaries_only(toy):
    inst = replace(toy, barges=(replace(toy.barges[0], specs={"P": 50.4}),))
    plans = make_plans(inst, 1.0)
    assert plans[("T1", "P")].n == 0
    m = build_center(inst, plans)
    assert {v.kind for v in m.vars if v.binary} == {"gamma", "sigma"}


def test_center_six_binaries_per_tank_day():
    # two specs, widths in (4, 8] at eps_hat 1 -> 3 digits each, 6 per tank-day
    base = toy_1t1s()
    inst = replace(
        base,
        specs=(SpecDef("S1"), SpecDef("S2")),
        tanks=tuple(Tank(f"T{i+1}", 1000.0, 100.0, 500.0,
                         {"S1": 50.0, "S2": 12.0}, 0.10) for i in range(3)),
        barges=(Barge("B1", 400.0, {"S1": 53.0, "S2": 15.0}, (0, 1), 1000.0,
                      ("T1", "T2", "T3")),
                Barge("B2", 400.0, {"S1": 47.5, "S2": 9.5}, (0, 1), 800.0,
                      ("T1", "T2", "T3"))),
        runs=(Run("R1", (0, 1), 200.0, {"S1": (40.0, 60.0), "S2": (5.0, 20.0)},
                  {}, 3000.0),),
    )
    plans = make_plans(inst, 1.0)
    for k in inst.tanks:
        per_day = sum(plans[(k.id, q)].n for q in ("S1", "S2"))
        assert per_day == 6
    m = build_center(inst, plans)
    assert len(m.vars_of_kind("alpha")) == 6 * 3 * inst.horizon


def test_center_is_linear_and_tagged(toy):
    m = build_center(toy, make_plans(toy, 1.0))
    assert not m.has_bilinear()
    want = CORE_TAGS | FEED_TAGS - {"feed_ratio_lb", "feed_ratio_ub"}
    assert m.tags() >= (want | {"spec_mass_split", "blend_relax_lb", "blend_relax_ub",
                                "init_spec_volume"} | XF_TAGS | ENVELOPE_TAGS)


def test_center_no_feed_vars_off_demand_days(toy):
    # horizon 2 with demand both days vs horizon 3 with a quiet third day
    inst = replace(toy, ops=replace(toy.ops, horizon=3))
    m = build_center(inst, make_plans(inst, 1.0))
    assert m.var("y_out", ("T1", 2)) is None
    assert m.var("yf_out", ("T1", "P", 2)) is None
    assert m.var("x_alpha", ("T1", "P", 2, 1, "out")) is None
    assert m.var("x_alpha", ("T1", "P", 2, 1, "mid")) is not None


def test_center_coupling_swaps_rows(toy):
    plans = make_plans(toy, 1.0)
    base = build_center(toy, plans)
    coupled = build_center(toy, plans, CenterOptions(coupling=True))
    assert not base.rows_by_tag("digit_coupling")
    assert coupled.rows_by_tag("digit_coupling")
    assert base.rows_by_tag("xa_mid_lb") and not coupled.rows_by_tag("xa_mid_lb")
    assert base.rows_by_tag("xa_end_ub") and not coupled.rows_by_tag("xa_end_ub")
    assert coupled.rows_by_tag("xa_end_lb")    # only dropped under relax_avol
    relaxed = build_center(toy, plans, CenterOptions(coupling=True, relax_avol=True))
    assert not relaxed.rows_by_tag("xa_end_lb")
    assert not relaxed.rows_by_tag("xa_out_ub")
    assert relaxed.rows_by_tag("xa_out_lb")


def test_relax_requires_coupling():
    with pytest.raises(ValueError):
        CenterOptions(coupling=False, relax_avol=True)


def test_mccormick_structure(toy):
    plans = make_plans(toy, 1.0)
    m = build_mccormick(toy, plans)
    assert not m.has_bilinear()
    assert m.rows_by_tag("spec_mass_blend")        # exact equality
    assert not m.rows_by_tag("blend_relax_ub")
    p = plans[("T1", "P")]
    df = m.var("delta_f", ("T1", "P", 0))
    assert df is not None and df.hi == pytest.approx(p.eps)
    xd = m.var("x_delta", ("T1", "P", 0, "mid"))
    assert xd is not None and xd.hi == pytest.approx(p.eps * 1000.0)
    assert m.tags() >= DELTA_TAGS | ENVELOPE_TAGS | XF_TAGS


def test_builders_raise_on_missing_plan(toy):
    plans = make_plans(toy, 1.0)
    del plans[("T1", "P")]
    with pytest.raises(KeyError):
        build_center(toy, plans)


def test_make_plans_per_spec_precision():
    inst = small_instance(0)
    plans = make_plans(inst, {"S1": 1.0, "S2": 0.25})
    assert plans[("T1", "S1")].eps_hat == 1.0
    assert plans[("T1", "S2")].eps_hat == 0.25
    assert plans[("T1", "S2")].eps <= 0.25
    with pytest.raises(ValueError, match="missing specs"):
        make_plans(inst, {"S1": 1.0})


# -- generalized envelope block ------------------------------------------------


def test_envelope_block_m0_forces_identity():
    mdl, x, betas, prods = mccormick_m((2.0, 5.0), 0)
    mdl.obj = {x.col: 1.0}
    res = solve(mdl, SolveOptions(backend="highs"))
    assert res.status == "optimal"
    assert res.value(betas[0]) == pytest.approx(1.0)
    assert res.value(prods[0]) == pytest.approx(res.value(x))


def test_envelope_block_m2_selected_product_carries_x():
    mdl, x, betas, prods = mccormick_m((1.0, 3.0), 2)
    mdl.fix(betas[1], 1.0)
    mdl.fix(x, 2.5)
    res = solve(mdl, SolveOptions(backend="highs"))
    assert res.status == "optimal"
    assert res.value(prods[1]) == pytest.approx(2.5)
    assert res.value(prods[0]) == pytest.approx(0.0)
    assert res.value(prods[2]) == pytest.approx(0.0)


@pytest.mark.parametrize("beta,lo,hi", [(0.0, 0.0, 0.0), (1.0, 10.0, 10.0), (0.5, 0.0, 4.0)])
def test_envelope_bounds_at_fractional_selector(beta, lo, hi):
    # x in [0, 10], x fixed to 4 where relevant: the envelope of x*beta
    mdl, x, betas, prods = mccormick_m((0.0, 10.0), 1)
    mdl.relax_binary(betas[0])
    mdl.relax_binary(betas[1])
    mdl.fix(betas[1], beta)
    if beta == 0.5:
        mdl.fix(x, 4.0)
    mdl.obj = {prods[1].col: 1.0}
    res_min = solve(mdl, SolveOptions())
    assert res_min.value(prods[1]) == pytest.approx(lo if beta != 1.0 else res_min.value(x))
    mdl.obj = {prods[1].col: -1.0}
    res_max = solve(mdl, SolveOptions())
    assert res_max.value(prods[1]) == pytest.approx(hi if beta != 1.0 else res_max.value(x))
