import json
import random
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from autows import cemodel as cm
from autows import dse, netdev
from autows.cemodel import UnrollFactors
from autows.dse import Action, DseError, DseHyperParams

from instances import (ORACLE_CALIB, chain, check_constraints, make_device, random_budget_device,
                       random_chain)

CALIB = cm.CalibrationTable()


def big_conv(**kw):
    return {"op": "conv", "c": 64, "h": 9, "w": 9, "k": 3, "pad": 1, "f": 64, "w_bits": 8, **kw}


def with_unroll(design, lid, unroll):
    layer = design.net.layer(lid)
    m_dep = cm.memory_geometry(layer, unroll)[0]
    cfg = cm.CEConfig(layer, unroll, cm.Fragmentation(1, m_dep, 0), design.device.clk_comp_hz)
    return design.with_config(cfg)


# --------------------------------------------------------------------------- initialize


def test_initialize_minimal_compute_all_onchip():
    net = chain(big_conv(), {"op": "pool", "c": 64, "h": 9, "w": 9, "k": 3, "stride": 3, "f": 64})
    dev = make_device()
    design = dse.initialize(net, dev, CALIB)
    conv, pool = design.configs
    assert conv.unroll == UnrollFactors(1, 1, 1)
    assert conv.frag == cm.Fragmentation(1, 64 * 64 * 9, 0)
    assert pool.frag == cm.Fragmentation(1, 0, 0)
    expect = min(Fraction(dev.clk_comp_hz, cm.cycles_per_inference(l, UnrollFactors())) for l in net)
    assert design.theta_pipeline == expect
    assert design.beta_weights == 0


# --------------------------------------------------------------------------- eviction primitives


def test_delta_bandwidth_example():
    net = chain(big_conv())
    design = with_unroll(dse.initialize(net, make_device(), CALIB), 0, UnrollFactors(1, 8, 4))
    cfg = design.configs[0]
    assert (cfg.m_dep, cfg.m_wid) == (1152, 256)
    delta = dse.delta_bandwidth(design, 0, DseHyperParams(mu=64))
    assert delta == Fraction(256 * 200 * 10**6 * 64, 1152)
    assert float(delta) / 1e9 == pytest.approx(2.844, abs=1e-3)
    assert design.configs[0].m_dep_off == 0  # design untouched


def test_delta_bandwidth_scales_with_slowdown():
    net = chain(big_conv(), big_conv())
    design = dse.initialize(net, make_device(), CALIB)
    fast = with_unroll(design, 1, UnrollFactors(1, 1, 2))
    assert fast.slowdown[1] == Fraction(1, 2)
    both = with_unroll(fast, 0, UnrollFactors(1, 1, 2))
    assert both.slowdown[1] == 1 and both.configs[1] == fast.configs[1]
    hp = DseHyperParams(mu=64)
    # same layer configuration, smaller slowdown factor, smaller delta
    assert dse.delta_bandwidth(fast, 1, hp) == dse.delta_bandwidth(both, 1, hp) / 2
    after = dse.increment_offchip(fast, 1, hp)
    assert after.beta_weights - fast.beta_weights == dse.delta_bandwidth(fast, 1, hp)


def test_delta_bandwidth_rejects_fully_streamed():
    net = chain(big_conv(f=1, c=1, k=1, pad=0))
    design = dse.initialize(net, make_device(), CALIB)
    design = dse.increment_offchip(design, 0, DseHyperParams(mu=64))
    with pytest.raises(DseError):
        dse.delta_bandwidth(design, 0, DseHyperParams())


def test_write_burst_balance_examples():
    # reuse 28x28 = 784 and 14x14 = 196
    net = chain({"op": "conv", "c": 4, "h": 28, "w": 28, "k": 1, "f": 4},
                {"op": "conv", "c": 4, "h": 28, "w": 28, "k": 2, "stride": 2, "f": 4})
    hp = DseHyperParams(mu=8)
    design = dse.initialize(net, make_device(), CALIB)
    design = dse.increment_offchip(dse.increment_offchip(design, 0, hp), 1, hp)
    assert dse.write_burst_balance(design, 1) == 4
    assert dse.write_burst_balance(design, 0) == 1
    assert design.configs[1].frag.n == 4
    assert design.metrics[0].r == design.metrics[1].r == 784


def test_balance_fragments_rounding_and_clamp():
    assert dse.balance_fragments(784, 196, 64) == 4
    assert dse.balance_fragments(196, 784, 64) == 1
    assert dse.balance_fragments(300, 200, 64) == 2  # 1.5 rounds half up
    assert dse.balance_fragments(12544, 49, 64) == 64  # clamped to the evicted words
    assert dse.balance_fragments(49, 49, 64) == 1


def test_single_weighted_layer_balances_against_itself():
    net = chain(big_conv())
    assert dse.balance_targets(net) == {0: 81}


def test_increment_offchip_steps_and_saturates():
    net = chain(big_conv())
    design = with_unroll(dse.initialize(net, make_device(), CALIB), 0, UnrollFactors(1, 8, 4))
    hp = DseHyperParams(mu=64)
    after = dse.increment_offchip(design, 0, hp)
    assert after.configs[0].m_dep_off == 64
    assert after.metrics[0].theta == design.metrics[0].theta
    nearly = design.with_config(cm.with_fragmentation(design.configs[0], 1142, 1))
    full = dse.increment_offchip(nearly, 0, hp)
    assert full.configs[0].m_dep_off == 1152
    assert full.configs[0].frag.u_on == 0


# --------------------------------------------------------------------------- allocate_memory


def test_allocate_memory_under_budget_is_identity():
    design = dse.initialize(chain(big_conv()), make_device(), CALIB)
    out, ok = dse.allocate_memory(design, DseHyperParams())
    assert ok and out is design


def test_allocate_memory_vanilla_reports_overflow():
    net = netdev.load_network("resnet18")
    design = dse.initialize(net, netdev.load_device("zcu102").scaled(mem=0.5), CALIB)
    out, ok = dse.allocate_memory(design, DseHyperParams(evict=False))
    assert not ok and out is design


def test_allocate_memory_zero_budget_streams_everything():
    # activation FIFOs cannot be evicted, so the budget stays out of reach
    net = chain(big_conv(), big_conv())
    dev = make_device(gbps=10**6, bram=0)
    out, ok = dse.allocate_memory(dse.initialize(net, dev, CALIB), DseHyperParams(mu=512))
    assert not ok
    assert all(cfg.m_dep_off == cfg.m_dep for cfg in out.configs)
    assert out.memory.wt_mem == 0


def test_allocate_memory_respects_bandwidth():
    net = chain(big_conv(), big_conv())
    init = dse.initialize(net, make_device(), CALIB)
    dev = make_device(gbps=Fraction(1, 10**6), bram=init.area.bram36 - 4)
    out, ok = dse.allocate_memory(dse.initialize(net, dev, CALIB), DseHyperParams())
    # pipeline I/O alone exceeds the link, so no eviction is affordable
    assert not ok
    assert out.beta_weights == 0 and not out.streaming_layers


def test_allocate_memory_trace_and_invariants():
    # different reuse counts, so the second layer streams in 9 fragments
    net = chain(big_conv(), big_conv(stride=3, pad=0))
    init = dse.initialize(net, make_device(), CALIB)
    dev = make_device(bram=init.area.bram36 - 4)
    trace = dse.DseTrace()
    out, ok = dse.allocate_memory(dse.initialize(net, dev, CALIB), DseHyperParams(), trace)
    assert ok and out.area.bram36 <= dev.area.bram36
    assert [m.theta for m in out.metrics] == [m.theta for m in init.metrics]
    assert trace.entries and all(e.action is Action.EVICT_MEMORY for e in trace)


@given(st.integers(0, 10**6), st.sampled_from([1, 4, 16, 64]))
def test_eviction_step_never_grows_weight_bits(seed, mu):
    rng = random.Random(seed)
    net = random_chain(rng)
    design = dse.initialize(net, make_device(), ORACLE_CALIB)
    hp = DseHyperParams(mu=mu)
    lid = rng.choice([l.id for l in net.weighted_layers])
    for _ in range(rng.randint(1, 6)):
        if design.configs[lid].m_dep_off >= design.configs[lid].m_dep:
            break
        after = dse.increment_offchip(design, lid, hp)
        before_n, after_n = design.configs[lid].frag.n, after.configs[lid].frag.n
        grew = after.metrics[lid].area.mem_bits - design.metrics[lid].area.mem_bits
        if after_n == before_n:
            assert grew <= 0
        else:
            # a larger fragment count may bring back up to n - 1 words of padding
            assert grew < after_n * after.configs[lid].m_wid
        assert after.configs[lid].m_dep_off > design.configs[lid].m_dep_off
        assert [m.theta for m in after.metrics] == [m.theta for m in design.metrics]
        others = [i for i in range(len(net.layers)) if i != lid]
        assert all(after.configs[i] == design.configs[i] for i in others)
        design = after


# --------------------------------------------------------------------------- compute allocation


def test_increment_unroll_examples():
    hp = DseHyperParams()
    cfg = cm.CEConfig.initial(chain(big_conv()).layers[0], 200 * 10**6)
    up, ok = dse.increment_unroll(cfg, hp)
    assert ok and up.unroll == UnrollFactors(3, 1, 1)

    layer = chain({"op": "conv", "c": 8, "h": 4, "w": 4, "k": 1, "f": 64}).layers[0]
    start = cm.CEConfig(layer, UnrollFactors(1, 1, 8), cm.Fragmentation(1, 64, 0), 200 * 10**6)
    up, ok = dse.increment_unroll(start, DseHyperParams(phi=2))
    assert ok and up.unroll.f_p == 16


def test_increment_unroll_saturated():
    layer = chain({"op": "conv", "c": 2, "h": 4, "w": 4, "k": 1, "f": 2}).layers[0]
    cfg = cm.CEConfig(layer, UnrollFactors(1, 2, 2), cm.Fragmentation(1, 1, 0), 200 * 10**6)
    same, ok = dse.increment_unroll(cfg, DseHyperParams())
    assert not ok and same == cfg


def test_increment_unroll_keeps_streamed_share_on_grid():
    layer = chain(big_conv()).layers[0]
    base = cm.CEConfig.initial(layer, 200 * 10**6)
    cfg = cm.with_fragmentation(base, 640, 2)
    up, _ = dse.increment_unroll(cfg, DseHyperParams(mu=64))
    assert up.unroll.k_p == 3
    assert up.m_dep_off % 64 == 0
    assert up.m_dep_off * up.m_wid >= cfg.m_dep_off * cfg.m_wid
    assert up.frag.n == 2


def test_allocate_compute_small_area_returns_initial():
    net = netdev.load_network("toy3")
    dev = make_device(lut=1, dsp=1)
    design, trace = dse.run(net, dev)
    assert not design.feasible
    assert all(cfg.unroll == UnrollFactors() for cfg in design.configs)
    assert not trace.accepted_unrolls()


def test_allocate_compute_single_layer_saturates():
    net = chain({"op": "conv", "c": 4, "h": 6, "w": 6, "k": 3, "f": 8})
    design, trace = dse.run(net, make_device(gbps=1000))
    assert design.configs[0].unroll == UnrollFactors(3, 4, 8)
    assert trace.entries[-1].action is Action.INCREMENT_UNROLL and not trace.entries[-1].accepted


def test_run_without_weights():
    net = chain({"op": "pool", "c": 4, "h": 8, "w": 8, "k": 2, "stride": 2, "f": 4})
    design, _ = dse.run(net, make_device())
    assert design.configs[0].frag == cm.Fragmentation(1, 0, 0)
    assert design.beta_weights == 0 and design.feasible


def test_resnet18_on_zcu102_streams_weights():
    net, dev = netdev.load_network("resnet18"), netdev.load_device("zcu102")
    design, trace = dse.run(net, dev)
    assert design.feasible
    assert design.streaming_layers
    assert design.beta_weights > 0
    assert design.area.bram36 <= dev.area.bram36
    assert check_constraints(design) == []
    thetas = [e.totals["theta_pipeline"] for e in trace.accepted_unrolls()]
    assert thetas == sorted(thetas)


def test_run_is_deterministic():
    net, dev = netdev.load_network("toy3"), make_device(bram=3, dsp=40)
    a, ta = dse.run(net, dev)
    b, tb = dse.run(net, dev)
    assert a == b
    assert [e.to_dict() for e in ta] == [e.to_dict() for e in tb]


@given(st.integers(0, 10**6))
def test_greedy_designs_pass_independent_checks(seed):
    rng = random.Random(seed)
    net = random_chain(rng)
    dev = random_budget_device(rng, net)
    design, trace = dse.run(net, dev, DseHyperParams(mu=rng.choice([4, 16, 64])), ORACLE_CALIB)
    assert check_constraints(design) == []
    thetas = [e.totals["theta_pipeline"] for e in trace.accepted_unrolls()]
    assert all(a <= b for a, b in zip(thetas, thetas[1:]))


# --------------------------------------------------------------------------- oracle


def test_oracle_matches_greedy_on_single_layer():
    net = chain({"op": "conv", "c": 4, "h": 6, "w": 6, "k": 3, "f": 8})
    dev = make_device()
    greedy, _ = dse.run(net, dev)
    oracle = dse.exhaustive_search(net, dev, DseHyperParams(mu=16))
    assert oracle.feasible
    assert oracle.design.theta_pipeline == greedy.theta_pipeline


def test_oracle_reports_infeasible_device():
    net = netdev.load_network("toy3")
    dev = make_device(lut=0, ff=0, dsp=0, bram=0)
    result = dse.exhaustive_search(net, dev, DseHyperParams(mu=64))
    assert not result.feasible and result.design is None and result.points > 0


def test_oracle_dominates_greedy_with_tight_memory():
    net = chain({"op": "conv", "c": 4, "h": 8, "w": 8, "k": 3, "pad": 1, "f": 16, "w_bits": 8},
                {"op": "fc", "c": 1024, "h": 1, "w": 1, "f": 8, "w_bits": 8})
    init = dse.initialize(net, make_device(), ORACLE_CALIB)
    dev = make_device(gbps=5, dsp=64, bram=init.area.bram36 - 1)
    hp = DseHyperParams(mu=256)
    greedy, _ = dse.run(net, dev, hp, ORACLE_CALIB)
    oracle = dse.exhaustive_search(net, dev, hp, ORACLE_CALIB)
    assert greedy.feasible and oracle.feasible
    assert oracle.design.theta_pipeline >= greedy.theta_pipeline
    assert check_constraints(oracle.design) == []


def test_oracle_rejects_huge_space():
    net = netdev.load_network("resnet18")
    with pytest.raises(DseError, match="exceeds"):
        dse.exhaustive_search(net, netdev.load_device("zcu102"))


# --------------------------------------------------------------------------- latency and serialization


def test_start_offsets_follow_producers():
    net = netdev.load_network("toy3")
    design = dse.initialize(net, make_device(), CALIB)
    offsets = dse.start_offsets(design)
    assert offsets[0] == 0
    assert offsets[1] == 1 / (design.theta_pipeline * net.layer(0).reuse)
    assert dse.latency(design) == 1 / design.theta_pipeline + offsets[2]


def test_design_round_trip():
    net = netdev.load_network("toy3")
    init = dse.initialize(net, make_device(), CALIB)
    design, _ = dse.run(net, make_device(bram=init.area.bram36 - 1))
    doc = json.loads(json.dumps(dse.design_to_dict(design, DseHyperParams())))
    again = dse.design_from_dict(doc)
    assert again.configs == design.configs
    assert again.theta_pipeline == design.theta_pipeline
    assert dse.hyperparams_from_dict(doc) == DseHyperParams()
    assert doc["totals"]["bandwidth_bps"] == pytest.approx(float(design.bandwidth_total))


def test_design_schema_violation():
    net = netdev.load_network("toy3")
    doc = dse.design_to_dict(dse.initialize(net, make_device(), CALIB))
    doc["layers"][0]["frag"]["n"] = "four"
    with pytest.raises(DseError, match="schema"):
        dse.design_from_dict(doc)
    doc = dse.design_to_dict(dse.initialize(net, make_device(), CALIB))
    doc["layers"][1]["frag"]["u_on"] += 5
    with pytest.raises(DseError):
        dse.design_from_dict(doc)


def test_hyperparams_validated():
    with pytest.raises(DseError):
        DseHyperParams(phi=0)
    with pytest.raises(DseError):
        replace(DseHyperParams(), mu=0)
