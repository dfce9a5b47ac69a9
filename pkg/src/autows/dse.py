"""Greedy design-space exploration over per-layer unroll factors and weight eviction.

The search alternates two greedy phases.  Compute allocation repeatedly
unrolls the slowest layer; after each step memory allocation evicts
``mu``-word blocks of weights to off-chip memory, always from the layer whose
eviction adds the least streamed bandwidth, until the design fits the
on-chip memory budget again.  ``exhaustive_search`` enumerates the same
space for small networks and serves as the optimality oracle.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Iterator, Mapping, Sequence

import jsonschema

from . import cemodel as cm
from .cemodel import CalibrationTable, CEConfig, MemoryBreakdown, UnrollFactors
from .netdev import DeviceSpec, NetworkGraph, ResourceVector, parse_device, parse_network

MAX_SEARCH_POINTS = 10**7


class DseError(ValueError):
    pass


@dataclass(frozen=True)
class DseHyperParams:
    phi: int = 1
    mu: int = 64
    evict: bool = True  # False gives the all-on-chip baseline

    def __post_init__(self) -> None:
        if self.phi < 1 or self.mu < 1:
            raise DseError("phi and mu must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {"phi": self.phi, "mu": self.mu, "evict": self.evict}


# --------------------------------------------------------------------------- burst balance


def balance_targets(net: NetworkGraph) -> dict[int, int]:
    """Per weighted layer, the largest natural reuse count among the *other* weighted layers.

    Streaming layers pick ``n`` so their burst count ``reuse * n`` matches this
    target.  A layer that is the only weighted layer balances against itself.
    """
    weighted = net.weighted_layers
    out = {}
    for layer in weighted:
        others = [o.reuse for o in weighted if o.id != layer.id]
        out[layer.id] = max(others) if others else layer.reuse
    return out


def balance_fragments(r_max: int, reuse: int, m_dep_off: int) -> int:
    """``round(r_max / reuse)`` (half up) clamped to ``[1, m_dep_off]``."""
    raw = (2 * r_max + reuse) // (2 * reuse)
    return max(1, min(raw, max(1, m_dep_off)))


# --------------------------------------------------------------------------- design points


@dataclass(frozen=True)
class LayerMetrics:
    theta: Fraction
    beta: Fraction
    area: ResourceVector
    memory: MemoryBreakdown
    r: int


def _metrics(cfg: CEConfig, calib: CalibrationTable) -> LayerMetrics:
    layer = cfg.layer
    return LayerMetrics(
        theta=cm.throughput(cfg),
        beta=cm.bandwidth(cfg),
        area=cm.area(cfg, calib),
        memory=cm.memory_breakdown(cfg, calib),
        r=cm.repeat_count(layer, cfg.frag.n) if layer.weighted else 0,
    )


@dataclass(frozen=True)
class DesignPoint:
    """Per-layer configurations plus every derived quantity, evaluated eagerly."""

    net: NetworkGraph
    device: DeviceSpec
    calib: CalibrationTable
    configs: tuple[CEConfig, ...]
    metrics: tuple[LayerMetrics, ...] = field(repr=False)
    slowdown: tuple[Fraction, ...] = field(repr=False)
    theta_pipeline: Fraction
    beta_io: Fraction
    beta_weights: Fraction
    area: ResourceVector
    memory: MemoryBreakdown

    @classmethod
    def evaluate(
        cls,
        net: NetworkGraph,
        device: DeviceSpec,
        calib: CalibrationTable,
        configs: Sequence[CEConfig],
        *,
        reuse: Sequence[LayerMetrics | None] | None = None,
    ) -> DesignPoint:
        if len(configs) != len(net.layers) or any(
            cfg.layer != layer for cfg, layer in zip(configs, net.layers)
        ):
            raise DseError("configs do not match the network layers")
        metrics = tuple(
            (reuse[i] if reuse is not None and reuse[i] is not None else _metrics(cfg, calib))
            for i, cfg in enumerate(configs)
        )
        slow = cm.slowdown({i: m.theta for i, m in enumerate(metrics)})
        theta = min(m.theta for m in metrics)
        beta_w = sum((slow[i] * m.beta for i, m in enumerate(metrics)), Fraction(0))
        mem = MemoryBreakdown()
        for m in metrics:
            mem = mem + m.memory
        return cls(
            net=net,
            device=device,
            calib=calib,
            configs=tuple(configs),
            metrics=metrics,
            slowdown=tuple(slow[i] for i in range(len(metrics))),
            theta_pipeline=theta,
            beta_io=cm.io_bandwidth(net, theta),
            beta_weights=beta_w,
            area=ResourceVector.total(m.area for m in metrics),
            memory=mem,
        )

    def with_config(self, cfg: CEConfig) -> DesignPoint:
        configs = list(self.configs)
        configs[cfg.layer.id] = cfg
        reuse: list[LayerMetrics | None] = list(self.metrics)
        reuse[cfg.layer.id] = None
        return DesignPoint.evaluate(self.net, self.device, self.calib, configs, reuse=reuse)

    def with_device(self, device: DeviceSpec) -> DesignPoint:
        return replace(self, device=device)

    @property
    def bandwidth_total(self) -> Fraction:
        return self.beta_io + self.beta_weights

    @property
    def area_ok(self) -> bool:
        return self.area <= self.device.area

    @property
    def memory_ok(self) -> bool:
        return self.area.bram36 <= self.device.area.bram36

    @property
    def bandwidth_ok(self) -> bool:
        return self.bandwidth_total <= self.device.bandwidth_bps

    @property
    def feasible(self) -> bool:
        return self.area_ok and self.bandwidth_ok

    @property
    def streaming_layers(self) -> list[int]:
        return [cfg.layer.id for cfg in self.configs if cfg.streaming]

    def burst_imbalance(self) -> float:
        """Largest relative gap between a streaming layer's burst count and the balance target."""
        targets = balance_targets(self.net)
        worst = 0.0
        for lid in self.streaming_layers:
            r, target = self.metrics[lid].r, targets[lid]
            worst = max(worst, abs(r - target) / target)
        return worst

    def totals_snapshot(self) -> dict[str, Any]:
        return {
            "theta_pipeline": float(self.theta_pipeline),
            "bandwidth_bps": float(self.bandwidth_total),
            "bram36": self.area.bram36,
            "dsp": self.area.dsp,
        }


def initialize(net: NetworkGraph, device: DeviceSpec, calib: CalibrationTable) -> DesignPoint:
    """Minimal compute everywhere, all weights on-chip."""
    configs = [CEConfig.initial(layer, device.clk_comp_hz) for layer in net.layers]
    return DesignPoint.evaluate(net, device, calib, configs)


# --------------------------------------------------------------------------- memory allocation


def _evicted_frag(cfg: CEConfig, mu: int, target: int) -> CEConfig:
    m_dep = cfg.m_dep
    off = cfg.m_dep_off + min(mu, m_dep - cfg.m_dep_off)
    n = balance_fragments(target, cfg.layer.reuse, off)
    return cm.with_fragmentation(cfg, off, n)


def write_burst_balance(design: DesignPoint, lid: int) -> int:
    """Fragment count for ``lid`` that equalises its burst count with the other layers."""
    cfg = design.configs[lid]
    target = balance_targets(design.net)[lid]
    return balance_fragments(target, cfg.layer.reuse, cfg.m_dep_off)


def increment_offchip(design: DesignPoint, lid: int, hp: DseHyperParams) -> DesignPoint:
    cfg = design.configs[lid]
    if not cfg.layer.weighted or cfg.m_dep_off >= cfg.m_dep:
        raise DseError(f"layer {lid} cannot evict more weights")
    return design.with_config(_evicted_frag(cfg, hp.mu, balance_targets(design.net)[lid]))


def delta_bandwidth(design: DesignPoint, lid: int, hp: DseHyperParams) -> Fraction:
    """Change of the slowdown-weighted weight bandwidth if ``lid`` evicted one more block.

    Eviction leaves every throughput untouched, so only ``lid``'s own term moves.
    """
    cfg = design.configs[lid]
    if not cfg.layer.weighted or cfg.m_dep_off >= cfg.m_dep:
        raise DseError(f"layer {lid} is already fully off-chip")
    after = _evicted_frag(cfg, hp.mu, balance_targets(design.net)[lid])
    return design.slowdown[lid] * (cm.bandwidth(after) - design.metrics[lid].beta)


class Action(str, enum.Enum):
    INCREMENT_UNROLL = "IncrementUnroll"
    EVICT_MEMORY = "EvictMemory"


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    action: Action
    layer: int
    accepted: bool
    totals: Mapping[str, Any]
    steps: int = 1
    imbalance: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "action": self.action.value,
            "layer": self.layer,
            "accepted": self.accepted,
            "steps": self.steps,
            "imbalance": self.imbalance,
            **self.totals,
        }


@dataclass
class DseTrace:
    entries: list[TraceEntry] = field(default_factory=list)

    def __iter__(self) -> Iterator[TraceEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def accepted_unrolls(self) -> list[TraceEntry]:
        return [
            e for e in self.entries if e.action is Action.INCREMENT_UNROLL and e.accepted
        ]


class _EvictionState:
    """Integer fragmentation state of one weighted layer, advanced without building configs."""

    __slots__ = ("cfg", "m_dep", "m_wid", "reuse", "target", "off", "n", "u_on", "u_off",
                 "beta", "bram", "dirty")

    def __init__(self, cfg: CEConfig, target: int, beta: Fraction, cap: int) -> None:
        self.cfg = cfg
        self.m_dep, self.m_wid = cfg.m_dep, cfg.m_wid
        self.reuse, self.target = cfg.layer.reuse, target
        self.off, self.n = cfg.m_dep_off, cfg.frag.n
        self.u_on, self.u_off = cfg.frag.u_on, cfg.frag.u_off
        self.beta = beta
        self.bram = self._bram(self.n, self.u_on, self.u_off, cap)
        self.dirty = False

    def _bram(self, n: int, u_on: int, u_off: int, cap: int) -> int:
        return cm.bram_blocks(self.m_wid, u_off, cap) + cm.bram_blocks(self.m_wid, n * u_on, cap)

    def step(self, mu: int, cap: int) -> tuple[int, int, int, int, Fraction, int]:
        off = self.off + min(mu, self.m_dep - self.off)
        n = balance_fragments(self.target, self.reuse, off)
        u_off = -(-off // n)
        u_on = -(-self.m_dep // n) - u_off
        beta = Fraction(self.m_wid * self.cfg.clk_comp_hz * u_off, u_on + u_off)
        return off, n, u_on, u_off, beta, self._bram(n, u_on, u_off, cap)

    def imbalance(self) -> float:
        return abs(self.reuse * self.n - self.target) / self.target if self.u_off else 0.0

    def config(self) -> CEConfig:
        if self.dirty:
            self.cfg = replace(self.cfg, frag=cm.Fragmentation(self.n, self.u_on, self.u_off),
                               m_dep_off=self.off)
            self.dirty = False
        return self.cfg


def allocate_memory(
    design: DesignPoint,
    hp: DseHyperParams,
    trace: DseTrace | None = None,
    iteration: int = 0,
) -> tuple[DesignPoint, bool]:
    """Evict blocks until the BRAM budget holds.

    Returns the last design that respected the bandwidth limit and ``False``
    if the budget cannot be met (bandwidth exceeded, eviction disabled, or
    nothing left to evict).
    """
    dev = design.device
    if design.area.bram36 <= dev.area.bram36:
        return design, True
    if not hp.evict:
        return design, False

    targets = balance_targets(design.net)
    cap = design.calib.bram_depth_cap
    slow = design.slowdown
    states = {
        cfg.layer.id: _EvictionState(cfg, targets[cfg.layer.id], design.metrics[cfg.layer.id].beta, cap)
        for cfg in design.configs
        if cfg.layer.weighted
    }
    bram = design.area.bram36
    budget_bw = dev.bandwidth_bps - design.beta_io
    beta_w = design.beta_weights
    version = dict.fromkeys(states, 0)

    def candidate(lid: int) -> tuple:
        nxt = states[lid].step(hp.mu, cap)
        return slow[lid] * (nxt[4] - states[lid].beta), lid, version[lid], nxt

    heap = [candidate(lid) for lid, st in states.items() if st.off < st.m_dep]
    heapq.heapify(heap)
    run_layer, run_steps = -1, 0
    ok = True

    def flush() -> None:
        if trace is None or not run_steps:
            return
        totals = {
            "theta_pipeline": float(design.theta_pipeline),
            "bandwidth_bps": float(design.beta_io + beta_w),
            "bram36": bram,
            "dsp": design.area.dsp,
        }
        worst = max(st.imbalance() for st in states.values())
        trace.entries.append(
            TraceEntry(iteration, Action.EVICT_MEMORY, run_layer, True, totals, run_steps, worst)
        )

    while bram > dev.area.bram36:
        while heap and heap[0][2] != version[heap[0][1]]:
            heapq.heappop(heap)
        if not heap:
            ok = False
            break
        delta, lid, _, nxt = heapq.heappop(heap)
        if beta_w + delta > budget_bw:
            ok = False
            break
        st = states[lid]
        bram += nxt[5] - st.bram
        st.off, st.n, st.u_on, st.u_off, st.beta, st.bram = nxt
        st.dirty = True
        version[lid] += 1
        beta_w += delta
        if lid != run_layer:
            flush()
            run_layer, run_steps = lid, 0
        run_steps += 1
        if st.off < st.m_dep:
            heapq.heappush(heap, candidate(lid))
    flush()

    configs = list(design.configs)
    reuse: list[LayerMetrics | None] = list(design.metrics)
    for lid, st in states.items():
        if st.dirty:
            configs[lid] = st.config()
            reuse[lid] = None
    return DesignPoint.evaluate(design.net, dev, design.calib, configs, reuse=reuse), ok


# --------------------------------------------------------------------------- compute allocation


def _next_divisor(full: int, at_least: int) -> int:
    return next(d for d in cm.divisors(full) if d >= at_least)


def increment_unroll(cfg: CEConfig, hp: DseHyperParams) -> tuple[CEConfig, bool]:
    """Raise the first unsaturated unroll factor in order (kernel window, filters, channels).

    The raised factor snaps up to the next divisor of its dimension.  Evicted
    depth is rescaled to keep at least the same number of streamed bits and is
    rounded up to the ``mu`` grid.
    """
    layer, u = cfg.layer, cfg.unroll
    dims = [("k_p", u.k_p, layer.k)]
    if layer.weighted:
        dims.append(("f_p", u.f_p, layer.f))
    dims.append(("c_p", u.c_p, layer.group_c))
    for name, cur, full in dims:
        if cur < full:
            unroll = replace(u, **{name: _next_divisor(full, min(full, cur + hp.phi))})
            break
    else:
        return cfg, False
    if not layer.weighted:
        return replace(cfg, unroll=unroll), True
    m_dep_new = cm.memory_geometry(layer, unroll)[0]
    off = 0
    if cfg.m_dep_off:
        scaled = -(-cfg.m_dep_off * m_dep_new // cfg.m_dep)
        off = min(m_dep_new, hp.mu * -(-scaled // hp.mu))
    n = min(cfg.frag.n, off) if off else 1
    base = replace(cfg, unroll=unroll, frag=cm.Fragmentation(1, m_dep_new, 0), m_dep_off=0)
    return cm.with_fragmentation(base, off, n), True


def _rebalanced(design: DesignPoint, cfg: CEConfig) -> CEConfig:
    if not cfg.m_dep_off:
        return cfg
    target = balance_targets(design.net)[cfg.layer.id]
    n = balance_fragments(target, cfg.layer.reuse, cfg.m_dep_off)
    return cm.with_fragmentation(cfg, cfg.m_dep_off, n)


def _slowest(design: DesignPoint) -> int:
    return min(range(len(design.metrics)), key=lambda i: (design.metrics[i].theta, i))


def allocate_compute(
    design: DesignPoint, hp: DseHyperParams, trace: DseTrace | None = None
) -> DesignPoint:
    trace = trace if trace is not None else DseTrace()
    design, _ = allocate_memory(design, hp, trace, iteration=0)
    if not design.area_ok:
        return design
    iteration = 0
    while True:
        iteration += 1
        lid = _slowest(design)
        cfg, s1 = increment_unroll(design.configs[lid], hp)
        if not s1:
            trace.entries.append(
                TraceEntry(iteration, Action.INCREMENT_UNROLL, lid, False, design.totals_snapshot())
            )
            break
        clone = design.with_config(_rebalanced(design, cfg))
        clone, s2 = allocate_memory(clone, hp, trace, iteration)
        accepted = s2 and clone.area_ok and clone.bandwidth_ok
        trace.entries.append(
            TraceEntry(iteration, Action.INCREMENT_UNROLL, lid, accepted,
                       clone.totals_snapshot(), 1, clone.burst_imbalance())
        )
        if not accepted:
            break
        design = clone
    return design


def run(
    net: NetworkGraph,
    device: DeviceSpec,
    hp: DseHyperParams | None = None,
    calib: CalibrationTable | None = None,
) -> tuple[DesignPoint, DseTrace]:
    hp = hp or DseHyperParams()
    calib = calib or CalibrationTable()
    trace = DseTrace()
    design = allocate_compute(initialize(net, device, calib), hp, trace)
    return design, trace


# --------------------------------------------------------------------------- exhaustive oracle


@dataclass(frozen=True)
class SearchResult:
    design: DesignPoint | None
    points: int

    @property
    def feasible(self) -> bool:
        return self.design is not None


def _unroll_choices(layer) -> list[UnrollFactors]:
    ks = cm.divisors(layer.k)
    cs = cm.divisors(layer.group_c)
    fs = cm.divisors(layer.f) if layer.weighted else [1]
    return [UnrollFactors(k, c, f) for k in ks for c in cs for f in fs]


def _offchip_grid(m_dep: int, mu: int, evict: bool) -> list[int]:
    if not evict:
        return [0]
    return sorted(set(range(0, m_dep, mu)) | {m_dep})


def search_space_size(net: NetworkGraph, hp: DseHyperParams) -> int:
    total = 0
    per_layer = []
    for layer in net.layers:
        count = 0
        for unroll in _unroll_choices(layer):
            m_dep = cm.memory_geometry(layer, unroll)[0] if layer.weighted else 0
            count += len(_offchip_grid(m_dep, hp.mu, hp.evict)) if layer.weighted else 1
        per_layer.append(count)
    total = math.prod(per_layer)
    return total


def exhaustive_search(
    net: NetworkGraph,
    device: DeviceSpec,
    hp: DseHyperParams | None = None,
    calib: CalibrationTable | None = None,
    max_points: int = MAX_SEARCH_POINTS,
) -> SearchResult:
    """Best feasible design over every unroll choice and every ``mu``-grid eviction depth.

    Fragment counts follow the same balance rule as the greedy search.  Ties on
    throughput go to the smaller (bram36, dsp, lut, ff) footprint, then to the
    lower total bandwidth.
    """
    hp = hp or DseHyperParams()
    calib = calib or CalibrationTable()
    size = search_space_size(net, hp)
    if size > max_points:
        raise DseError(f"search space of {size} points exceeds {max_points}")
    targets = balance_targets(net)
    clk = device.clk_comp_hz
    cap = device.area

    # Per layer: unroll -> (theta, [(cfg, area, beta)] over the eviction grid)
    options: list[list[tuple[Fraction, list[tuple[CEConfig, ResourceVector, Fraction]]]]] = []
    for layer in net.layers:
        per_unroll = []
        for unroll in _unroll_choices(layer):
            base = CEConfig(layer, unroll, cm.Fragmentation(), clk) if not layer.weighted else None
            frags = []
            if layer.weighted:
                m_dep = cm.memory_geometry(layer, unroll)[0]
                base = CEConfig(layer, unroll, cm.Fragmentation(1, m_dep, 0), clk)
                for off in _offchip_grid(m_dep, hp.mu, hp.evict):
                    n = balance_fragments(targets[layer.id], layer.reuse, off) if off else 1
                    cfg = cm.with_fragmentation(base, off, n)
                    frags.append((cfg, cm.area(cfg, calib), cm.bandwidth(cfg)))
            else:
                frags.append((base, cm.area(base, calib), Fraction(0)))
            per_unroll.append((cm.throughput(base), frags))
        options.append(per_unroll)

    combos = list(itertools.product(*options))
    combos.sort(key=lambda combo: min(theta for theta, _ in combo), reverse=True)
    best: tuple | None = None
    best_theta: Fraction | None = None
    for combo in combos:
        thetas = [theta for theta, _ in combo]
        theta_min = min(thetas)
        if best_theta is not None and theta_min < best_theta:
            break
        slow = [theta_min / t for t in thetas]
        budget = device.bandwidth_bps - cm.io_bandwidth(net, theta_min)
        for choice in itertools.product(*(frags for _, frags in combo)):
            total = ResourceVector.total(a for _, a, _ in choice)
            if not total <= cap:
                continue
            bw = sum((s * b for s, (_, _, b) in zip(slow, choice)), Fraction(0))
            if bw > budget:
                continue
            key = (-theta_min, (total.bram36, total.dsp, total.lut, total.ff), bw)
            if best is None or key < best[0]:
                best = (key, [cfg for cfg, _, _ in choice])
                best_theta = theta_min
    if best is None:
        return SearchResult(None, size)
    return SearchResult(DesignPoint.evaluate(net, device, calib, best[1]), size)


# --------------------------------------------------------------------------- pipeline fill


def start_offsets(design: DesignPoint) -> dict[int, Fraction]:
    """Pipeline fill: a layer starts one output position after its latest producer.

    A producer emits one output position every ``1 / (theta * reuse)`` seconds
    at the pipeline rate; the source starts at zero.
    """
    theta = design.theta_pipeline
    offsets: dict[int, Fraction] = {}
    for layer in design.net.layers:  # ids are in topological order
        offsets[layer.id] = max(
            (offsets[p] + 1 / (theta * design.net.layer(p).reuse)
             for p in design.net.predecessors(layer.id)),
            default=Fraction(0),
        )
    return offsets


def latency(design: DesignPoint) -> Fraction:
    """Approximate single-inference latency: one pipeline period plus fill."""
    return 1 / design.theta_pipeline + start_offsets(design)[design.net.sink.id]


# --------------------------------------------------------------------------- serialization

DESIGN_FORMAT = "autows-design/1"

_UNROLL_SCHEMA = {
    "type": "object",
    "required": ["k_p", "c_p", "f_p"],
    "properties": {k: {"type": "integer", "minimum": 1} for k in ("k_p", "c_p", "f_p")},
}
_FRAG_SCHEMA = {
    "type": "object",
    "required": ["n", "u_on", "u_off"],
    "properties": {k: {"type": "integer", "minimum": 0} for k in ("n", "u_on", "u_off")},
}
DESIGN_SCHEMA = {
    "type": "object",
    "required": ["format", "network", "calibration", "layers"],
    "properties": {
        "format": {"const": DESIGN_FORMAT},
        "network": {"type": "object"},
        "device": {"type": "object"},
        "calibration": {"type": "object"},
        "hyperparameters": {"type": "object"},
        "layers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "unroll", "frag", "m_dep_off"],
                "properties": {
                    "id": {"type": "integer"},
                    "unroll": _UNROLL_SCHEMA,
                    "frag": _FRAG_SCHEMA,
                    "m_dep_off": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


def _num(x: Fraction) -> float | int:
    return int(x) if x.denominator == 1 else float(x)


def design_to_dict(design: DesignPoint, hp: DseHyperParams | None = None) -> dict[str, Any]:
    """Self-contained JSON form: configs are authoritative, derived values are informative."""
    layers = []
    for cfg, m, s in zip(design.configs, design.metrics, design.slowdown):
        layers.append({
            "id": cfg.layer.id,
            "name": cfg.layer.name,
            "op": cfg.layer.op.value,
            "unroll": cfg.unroll.to_dict(),
            "frag": cfg.frag.to_dict(),
            "m_dep": cfg.m_dep,
            "m_dep_off": cfg.m_dep_off,
            "theta": _num(m.theta),
            "beta_bps": _num(m.beta),
            "s": _num(s),
            "r": m.r,
            "area": m.area.to_dict(),
            "memory": {"act_fifo": m.memory.act_fifo, "wt_buff": m.memory.wt_buff,
                       "wt_mem": m.memory.wt_mem},
        })
    return {
        "format": DESIGN_FORMAT,
        "feasible": design.feasible,
        "feasibility": {"area": design.area_ok, "bandwidth": design.bandwidth_ok},
        "totals": {
            "theta_pipeline": _num(design.theta_pipeline),
            "latency_s": _num(latency(design)),
            "beta_io_bps": _num(design.beta_io),
            "beta_weights_bps": _num(design.beta_weights),
            "bandwidth_bps": _num(design.bandwidth_total),
            "area": design.area.to_dict(),
            "memory": {"act_fifo": design.memory.act_fifo, "wt_buff": design.memory.wt_buff,
                       "wt_mem": design.memory.wt_mem},
            "burst_imbalance": design.burst_imbalance(),
        },
        "hyperparameters": (hp or DseHyperParams()).to_dict(),
        "layers": layers,
        "network": design.net.to_dict(),
        "device": design.device.to_dict(),
        "calibration": design.calib.to_dict(),
    }


def design_from_dict(data: Mapping[str, Any], device: DeviceSpec | None = None) -> DesignPoint:
    """Rebuild a design from its JSON form, re-evaluating every derived quantity.

    ``device`` overrides the embedded device description.
    """
    try:
        jsonschema.validate(data, DESIGN_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DseError(f"design schema violation: {exc.message}") from None
    net = parse_network(data["network"])
    if device is None:
        if "device" not in data:
            raise DseError("design has no embedded device; pass one explicitly")
        device = parse_device(data["device"])
    calib = CalibrationTable.from_dict(data["calibration"])
    by_id = {entry["id"]: entry for entry in data["layers"]}
    if sorted(by_id) != [layer.id for layer in net.layers]:
        raise DseError("design layers do not match its network")
    configs = []
    for layer in net.layers:
        entry = by_id[layer.id]
        try:
            configs.append(CEConfig(
                layer,
                UnrollFactors(**entry["unroll"]),
                cm.Fragmentation(**entry["frag"]),
                device.clk_comp_hz,
                entry["m_dep_off"],
            ))
        except ValueError as exc:
            raise DseError(f"layer {layer.id}: {exc}") from None
    return DesignPoint.evaluate(net, device, calib, configs)


def hyperparams_from_dict(data: Mapping[str, Any]) -> DseHyperParams:
    hp = data.get("hyperparameters", {})
    return DseHyperParams(**{k: hp[k] for k in ("phi", "mu", "evict") if k in hp})
