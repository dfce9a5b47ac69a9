"""Instance generators and independent checks shared by the test modules."""

from __future__ import annotations

import math
import random
from fractions import Fraction

from autows import cemodel as cm
from autows import dmasim, dse, netdev
from autows.netdev import BRAM36_BITS, DeviceSpec, ResourceVector

MHZ = 10**6
GBPS = 10**9

# counters read by the acceptance summary
AUDITED_SIMULATIONS = [0]
CHECKED_DESIGNS = [0]
VERDICTS: list[str] = []


def make_device(name="dev", *, gbps=10, lut=10**6, ff=10**6, dsp=10**4, bram=1000,
                clk_comp=200, clk_dma=250) -> DeviceSpec:
    bw = gbps * GBPS if isinstance(gbps, int) else round(Fraction(str(gbps)) * GBPS)
    return DeviceSpec(name, bw, ResourceVector(lut, ff, dsp, bram, bram * BRAM36_BITS),
                      clk_comp * MHZ, clk_dma * MHZ)


def chain(*layers: dict, name="chain") -> netdev.NetworkGraph:
    docs = [{"id": i, **layer} for i, layer in enumerate(layers)]
    return netdev.parse_network(
        {"name": name, "layers": docs, "edges": [[i - 1, i] for i in range(1, len(docs))]}
    )


# --------------------------------------------------------------------------- oracle instances

ORACLE_CALIB = cm.CalibrationTable(fifo_words_per_edge=64)


def random_chain(rng: random.Random) -> netdev.NetworkGraph:
    """Two or three layers with small dims; the last one is often fully connected."""
    count = rng.choice([2, 3])
    layers = []
    c, h = rng.choice([4, 8]), rng.choice([8, 16])
    for i in range(count):
        if i == count - 1 and rng.random() < 0.6:
            layers.append({"op": "fc", "c": c * h * h, "h": 1, "w": 1,
                           "f": rng.choice([4, 8, 16]), "w_bits": rng.choice([4, 8])})
            continue
        k, f, stride = rng.choice([1, 3]), rng.choice([8, 16, 32]), rng.choice([1, 2])
        layers.append({"op": "conv", "c": c, "h": h, "w": h, "k": k, "pad": k // 2, "f": f,
                       "stride": stride, "w_bits": rng.choice([4, 8])})
        c, h = f, netdev.conv_out_dim(h, k, stride, k // 2)
    return chain(*layers, name="rand")


def random_budget_device(rng: random.Random, net, calib=ORACLE_CALIB) -> DeviceSpec:
    """BRAM between the eviction floor and 1.5x the all-on-chip footprint."""
    init = dse.initialize(net, make_device(), calib)
    floor = init.memory.act_fifo + len(net.weighted_layers)
    bram = rng.randint(floor, max(floor, 3 * init.area.bram36 // 2))
    return make_device("rand", gbps=rng.choice([2, 5, 10, 50]), lut=rng.randint(20000, 200000),
                       ff=400000, dsp=rng.randint(16, 256), bram=bram)


def pick_mu(net, limit=10**6) -> int:
    """Smallest power-of-two eviction step keeping the oracle space under ``limit``."""
    for mu in (4, 8, 16, 32, 64, 128, 256):
        if dse.search_space_size(net, dse.DseHyperParams(mu=mu)) <= limit:
            return mu
    return 10**9  # whole-layer eviction only


def oracle_instances(seed: int, count: int):
    rng = random.Random(seed)
    for _ in range(count):
        net = random_chain(rng)
        hp = dse.DseHyperParams(mu=pick_mu(net))
        yield net, random_budget_device(rng, net), hp


# --------------------------------------------------------------------------- simulator instances


def streaming_single_layer(rng: random.Random) -> dse.DesignPoint:
    """One streaming layer with spare bandwidth: s * beta <= 0.8 * (B - beta_io)."""
    if rng.random() < 0.5:
        h, k = rng.choice([2, 3, 4]), rng.choice([1, 3])
        layer = {"op": "conv", "c": rng.choice([4, 8]), "h": h, "w": h, "k": k, "pad": k // 2,
                 "f": rng.choice([4, 8, 16]), "w_bits": rng.choice([4, 8])}
    else:
        layer = {"op": "fc", "c": rng.choice([64, 128, 256]), "h": 1, "w": 1,
                 "f": rng.choice([4, 8]), "w_bits": rng.choice([4, 8])}
    net = chain(layer, name="single")
    spec = net.layers[0]
    unroll = cm.UnrollFactors(1, rng.choice(cm.divisors(spec.c)[:2]), rng.choice(cm.divisors(spec.f)[:2]))
    base = cm.CEConfig(spec, unroll, cm.Fragmentation(1, cm.memory_geometry(spec, unroll)[0], 0),
                       200 * MHZ)
    m_dep = base.m_dep
    n = rng.choice([d for d in (1, 2, 4) if 2 * d <= m_dep])
    cfg = cm.with_fragmentation(base, rng.randint(n, m_dep - n), n)
    need = cm.io_bandwidth(net, cm.throughput(cfg)) + cm.bandwidth(cfg) / Fraction(4, 5)
    bw = math.ceil(need * Fraction(rng.randint(100, 300), 100))
    dev = DeviceSpec("single", bw, ResourceVector(10**6, 10**6, 10**4, 1000, 1000 * BRAM36_BITS),
                     200 * MHZ, 250 * MHZ)
    return dse.DesignPoint.evaluate(net, dev, cm.CalibrationTable(), [cfg])


def fig4_design(n_first: int) -> dse.DesignPoint:
    """Two 1x1 convs sharing a DMA; the second layer always uses four fragments.

    With ``n_first == 1`` the second layer bursts four times as often as the
    first; ``n_first == 4`` balances the burst counts.
    """
    conv = {"op": "conv", "c": 16, "h": 2, "w": 2, "k": 1, "f": 16}
    net = chain(conv, conv, name="two-layer")
    dev = make_device("tight", gbps=2.6)
    cfgs = [cm.CEConfig.initial(layer, dev.clk_comp_hz) for layer in net.layers]
    cfgs[0] = cm.with_fragmentation(cfgs[0], 128, n_first)
    cfgs[1] = cm.with_fragmentation(cfgs[1], 128, 4)
    return dse.DesignPoint.evaluate(net, dev, cm.CalibrationTable(), cfgs)


# --------------------------------------------------------------------------- independent checks


def simulate_audited(design, horizon, dev=None) -> dmasim.SimReport:
    """Simulate with the event log on and require every audit to pass."""
    report = dmasim.simulate(design, dev, horizon, record_events=True)
    result = dmasim.audit(report, design, dev)
    assert result.ok, result.problems[:5]
    AUDITED_SIMULATIONS[0] += 1
    return report


def check_constraints(design: dse.DesignPoint, balance: bool = True) -> list[str]:
    """Re-evaluate area, bandwidth and burst balance from the configs alone.

    ``balance=False`` skips the fragment-count check, for hand-built designs
    whose ``n`` was chosen by the test rather than by the search.
    """
    problems = []
    dev, net, calib = design.device, design.net, design.calib
    areas = [cm.area(cfg, calib) for cfg in design.configs]
    thetas = {cfg.layer.id: cm.throughput(cfg) for cfg in design.configs}
    slow = cm.slowdown(thetas)
    theta = min(thetas.values())
    total = ResourceVector.total(areas)
    bw = cm.io_bandwidth(net, theta) + sum(
        (slow[cfg.layer.id] * cm.bandwidth(cfg) for cfg in design.configs), Fraction(0)
    )
    if total != design.area or theta != design.theta_pipeline or bw != design.bandwidth_total:
        problems.append("stored totals differ from re-evaluation")
    fits = (total.lut <= dev.area.lut and total.ff <= dev.area.ff and total.dsp <= dev.area.dsp
            and total.bram36 <= dev.area.bram36)
    if design.feasible and not (fits and bw <= dev.bandwidth_bps):
        problems.append("claims feasibility but violates area or bandwidth")

    targets = dse.balance_targets(net)
    for cfg in design.configs:
        if not balance or not cfg.streaming:
            continue
        lid, reuse = cfg.layer.id, cfg.layer.reuse
        r = cm.repeat_count(cfg.layer, cfg.frag.n)
        ideal = _rounded_fragments(targets[lid], reuse)
        if cfg.frag.n == ideal:
            if 2 * abs(r - targets[lid]) > reuse:
                problems.append(f"layer {lid}: burst residual of a whole fragment")
        elif cfg.frag.n != max(1, min(ideal, cfg.m_dep_off)):
            problems.append(f"layer {lid}: n={cfg.frag.n} is neither balanced nor clamped")
    CHECKED_DESIGNS[0] += 1
    return problems


def _rounded_fragments(target: int, reuse: int) -> int:
    """Balanced fragment count before clamping to ``[1, m_dep_off]``."""
    return (2 * target + reuse) // (2 * reuse)


def clamped_layers(design: dse.DesignPoint) -> int:
    """Streaming layers whose fragment count sits at the floor of 1 or at the evicted depth."""
    targets = dse.balance_targets(design.net)
    return sum(
        1 for cfg in design.configs
        if cfg.streaming and cfg.frag.n != _rounded_fragments(targets[cfg.layer.id], cfg.layer.reuse)
    )
