"""Deterministic simulation of one DMA port time-multiplexed across streaming layers.

Each streaming layer owns a single shared buffer of ``u_off`` words with a
chasing write/read pointer pair.  Its PEs sweep ``u_on`` static words and then
``u_off`` buffer words per fragment, at ``s * clk_comp`` words/s.  The DMA
visits layers in a fixed cyclic order and writes one fragment payload per
visit at the bandwidth left over after pipeline I/O.  A burst for fragment
``q + 1`` may only start once fragment ``q`` has been read out of the buffer,
and a reader that would overtake the write pointer blocks (a stall).

All timestamps are exact ``Fraction`` seconds.  Because every event depends
only on earlier events of the same layer and on the DMA's previous burst,
the schedule is resolved in demux order; the event log is then merged by time.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .dse import DesignPoint, start_offsets
from .netdev import DeviceSpec


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleEntry:
    layer: int
    burst_index: int
    start: Fraction
    duration: Fraction

    @property
    def end(self) -> Fraction:
        return self.start + self.duration


@dataclass(frozen=True)
class SimEvent:
    t: Fraction
    kind: str  # burst_start | burst_end | stall_begin | stall_end | fragment_advance
    layer: int
    fragment: int
    phase: str = ""

    def to_dict(self) -> dict[str, Any]:
        d = {"t": float(self.t), "kind": self.kind, "layer": self.layer, "fragment": self.fragment}
        if self.phase:
            d["phase"] = self.phase
        return d


@dataclass(frozen=True)
class LayerSimStats:
    layer: int
    stall_time: Fraction
    stall_events: int
    stalls_per_inference: tuple[int, ...]
    bits_written: int
    measured_beta: Fraction
    achieved_theta: Fraction
    offset: Fraction
    finish: Fraction

    @property
    def steady_stall_events(self) -> int:
        """Stalls after the first inference, which absorbs pipeline warm-up."""
        return sum(self.stalls_per_inference[1:])

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer": self.layer,
            "stall_time_s": float(self.stall_time),
            "stall_events": self.stall_events,
            "steady_stall_events": self.steady_stall_events,
            "stalls_per_inference": list(self.stalls_per_inference),
            "bits_written": self.bits_written,
            "measured_beta_bps": float(self.measured_beta),
            "achieved_theta": float(self.achieved_theta),
            "start_offset_s": float(self.offset),
        }


@dataclass(frozen=True)
class SimReport:
    horizon: int
    layers: tuple[LayerSimStats, ...]
    achieved_theta: Fraction
    dma_utilization: Fraction
    makespan: Fraction
    sequence: tuple[int, ...]
    fingerprint: tuple
    schedule: tuple[ScheduleEntry, ...] = field(default=(), repr=False)
    events: tuple[SimEvent, ...] = field(default=(), repr=False)

    def layer(self, lid: int) -> LayerSimStats:
        for stats in self.layers:
            if stats.layer == lid:
                return stats
        raise KeyError(lid)

    def to_dict(self) -> dict[str, Any]:
        return {
            "horizon": self.horizon,
            "achieved_theta": float(self.achieved_theta),
            "dma_utilization": float(self.dma_utilization),
            "makespan_s": float(self.makespan),
            "demux_sequence": list(self.sequence),
            "layers": [s.to_dict() for s in self.layers],
        }

    def event_lines(self) -> Iterator[str]:
        for ev in self.events:
            yield json.dumps(ev.to_dict())


def _fingerprint(design: DesignPoint) -> tuple:
    return (design.net.name, tuple((c.layer.id, c.frag.n, c.frag.u_on, c.frag.u_off) for c in design.configs))


def build_demux_sequence(design: DesignPoint) -> list[int]:
    """One period of the DMA's cyclic service order.

    Each streaming layer gets ``r / g`` slots, ``g`` being the gcd of all burst
    counts, spread evenly over the period (slot ``j`` of a layer with ``c``
    slots sits at ``(j + 1/2) / c``); ties go to the earlier pipeline stage.
    Layers with equal ``r`` therefore appear once per period in pipeline
    order.  An empty list means nothing streams.
    """
    counts = {lid: design.metrics[lid].r for lid in design.streaming_layers}
    if not counts:
        return []
    g = math.gcd(*counts.values())
    slots = [
        (Fraction(2 * j + 1, 2 * (r // g)), lid)
        for lid, r in counts.items()
        for j in range(r // g)
    ]
    return [lid for _, lid in sorted(slots)]


class _Reader:
    """Per-layer read loop state, resolved one fragment at a time.

    Times are integer ticks of ``1 / tick_hz`` seconds, where ``tick_hz`` is a
    common multiple of every rate in the simulation, so the arithmetic stays
    exact without rational overhead.
    """

    def __init__(self, lid: int, design: DesignPoint, t_word: Fraction, t_write_word: Fraction,
                 offset: Fraction, horizon: int, tick_hz: int) -> None:
        cfg = design.configs[lid]
        self.lid = lid
        self.u_on, self.u_off = cfg.frag.u_on, cfg.frag.u_off
        self.m_wid = cfg.m_wid
        self.r = design.metrics[lid].r
        self.total = self.r * horizon
        self.t_word = int(t_word * tick_hz)
        self.t_write_word = int(t_write_word * tick_hz)
        self.t_wr = self.u_off * self.t_write_word
        self.offset = int(offset * tick_hz)
        self.next_q = 0
        self.last_read_done = self.offset  # end of the previous fragment's buffer reads
        self.stall_time = 0
        self.stalls = [0] * horizon
        self.first_inference_done = self.offset

    @property
    def done(self) -> bool:
        return self.next_q >= self.total

    def burst_ready(self) -> int:
        """Earliest start of the next burst: the buffer must have been drained."""
        return 0 if self.next_q == 0 else self.last_read_done

    def serve(self, burst_start: int, log: list[tuple] | None) -> None:
        q = self.next_q
        ready = self.last_read_done + self.u_on * self.t_word
        # word j is read at start + j*t_word and written at burst_start + (j+1)*t_write_word;
        # the constraint is linear in j, so the two endpoints bound it
        start = max(
            ready,
            burst_start + self.t_write_word,
            burst_start + self.u_off * self.t_write_word - (self.u_off - 1) * self.t_word,
        )
        if log is not None:
            log.append((burst_start, "burst_start", self.lid, q, ""))
            log.append((burst_start + self.t_wr, "burst_end", self.lid, q, ""))
        if start > ready:
            self.stall_time += start - ready
            self.stalls[q // self.r] += 1
            if log is not None:
                log.append((ready, "stall_begin", self.lid, q, ""))
                log.append((start, "stall_end", self.lid, q, ""))
        self.last_read_done = start + self.u_off * self.t_word
        if log is not None:
            log.append((start, "fragment_advance", self.lid, q, "buffer"))
            log.append((self.last_read_done, "fragment_advance", self.lid, q, "static"))
        if q == self.r - 1:
            self.first_inference_done = self.last_read_done
        self.next_q += 1


def simulate(
    design: DesignPoint,
    dev: DeviceSpec | None = None,
    horizon: int = 1,
    *,
    record_events: bool = False,
) -> SimReport:
    if horizon < 1:
        raise SimError("horizon must be at least one inference")
    dev = dev or design.device
    spare = dev.bandwidth_bps - design.beta_io
    if spare <= 0:
        raise SimError("device bandwidth does not exceed the pipeline I/O bandwidth")
    offsets = start_offsets(design)
    sequence = build_demux_sequence(design)
    streaming = sorted(set(sequence))
    periods = {
        lid: (1 / (design.slowdown[lid] * design.configs[lid].clk_comp_hz),
              design.configs[lid].m_wid / spare)
        for lid in streaming
    }
    tick_hz = math.lcm(1, *(
        x.denominator for lid in streaming for x in (*periods[lid], offsets[lid])
    ))
    readers = {
        lid: _Reader(lid, design, *periods[lid], offsets[lid], horizon, tick_hz)
        for lid in streaming
    }
    log: list[tuple] | None = [] if record_events else None
    schedule: list[ScheduleEntry] = []
    dma_free = 0
    busy = 0
    pending = len(readers)
    pos = 0
    while pending:
        reader = readers[sequence[pos]]
        pos = (pos + 1) % len(sequence)
        if reader.done:
            continue
        start = max(dma_free, reader.burst_ready())
        if record_events:
            schedule.append(ScheduleEntry(reader.lid, reader.next_q, Fraction(start, tick_hz),
                                          Fraction(reader.t_wr, tick_hz)))
        reader.serve(start, log)
        dma_free = start + reader.t_wr
        busy += reader.t_wr
        if reader.done:
            pending -= 1

    def sec(ticks: int) -> Fraction:
        return Fraction(ticks, tick_hz)

    theta = design.theta_pipeline
    stats = []
    achieved = theta
    for cfg in design.configs:
        lid = cfg.layer.id
        if lid in readers:
            rd = readers[lid]
            span = sec(rd.last_read_done - rd.offset)
            bits = rd.total * rd.m_wid * rd.u_off
            # steady-state rate: the first inference absorbs warm-up
            if horizon > 1:
                layer_theta = (horizon - 1) / sec(rd.last_read_done - rd.first_inference_done)
            else:
                layer_theta = horizon / span
            achieved = min(achieved, layer_theta)
            stats.append(LayerSimStats(lid, sec(rd.stall_time), sum(rd.stalls), tuple(rd.stalls),
                                       bits, bits / span, layer_theta, sec(rd.offset),
                                       sec(rd.last_read_done)))
        else:
            finish = offsets[lid] + horizon / theta
            stats.append(LayerSimStats(lid, Fraction(0), 0, (0,) * horizon, 0, Fraction(0),
                                       theta, offsets[lid], finish))
    makespan = max(s.finish for s in stats)
    events: tuple[SimEvent, ...] = ()
    if log is not None:
        log.sort(key=lambda e: (e[0], _KIND_ORDER[e[1]], e[2], e[3]))
        events = tuple(SimEvent(sec(t), kind, lid, q, phase) for t, kind, lid, q, phase in log)
    return SimReport(
        horizon=horizon,
        layers=tuple(stats),
        achieved_theta=achieved,
        dma_utilization=sec(busy) / makespan if makespan else Fraction(0),
        makespan=makespan,
        sequence=tuple(sequence),
        fingerprint=_fingerprint(design),
        schedule=tuple(schedule),
        events=events,
    )


# ends sort before starts at equal timestamps
_KIND_ORDER = {"burst_end": 0, "stall_end": 1, "fragment_advance": 2, "stall_begin": 3, "burst_start": 4}


# --------------------------------------------------------------------------- model comparison


@dataclass(frozen=True)
class LayerDeviation:
    layer: int
    modeled_beta: Fraction
    measured_beta: Fraction
    rel_error: float


@dataclass(frozen=True)
class Deviation:
    layers: tuple[LayerDeviation, ...]
    theta_ratio: float
    degraded: bool

    @property
    def max_rel_error(self) -> float:
        return max((d.rel_error for d in self.layers), default=0.0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta_ratio": self.theta_ratio,
            "degraded": self.degraded,
            "max_rel_error": self.max_rel_error,
            "layers": [
                {
                    "layer": d.layer,
                    "modeled_beta_bps": float(d.modeled_beta),
                    "measured_beta_bps": float(d.measured_beta),
                    "rel_error": d.rel_error,
                }
                for d in self.layers
            ],
        }


def compare_with_model(report: SimReport, design: DesignPoint, tolerance: float = 0.01) -> Deviation:
    """Measured vs modeled bandwidth per layer, and achieved vs modeled throughput.

    ``degraded`` is set when the achieved rate falls more than ``tolerance``
    below the model once fragment padding (read but never used) is accounted for.
    """
    if report.fingerprint != _fingerprint(design):
        raise SimError("report was produced from a different design")
    rows = []
    expected = design.theta_pipeline
    for cfg in design.configs:
        lid = cfg.layer.id
        modeled = design.slowdown[lid] * design.metrics[lid].beta
        measured = report.layer(lid).measured_beta
        rows.append(LayerDeviation(lid, modeled, measured,
                                   float(abs(measured - modeled) / max(modeled, Fraction(1)))))
        if cfg.streaming:
            padded_words = cfg.layer.reuse * cfg.frag.n * cfg.frag.depth
            expected = min(expected, design.slowdown[lid] * cfg.clk_comp_hz / padded_words)
    ratio = report.achieved_theta / design.theta_pipeline
    degraded = report.achieved_theta < expected * (1 - Fraction(str(tolerance)))
    return Deviation(tuple(rows), float(ratio), degraded)


# --------------------------------------------------------------------------- audits


@dataclass(frozen=True)
class AuditResult:
    exclusive: bool
    raw_safe: bool
    conserved: bool
    problems: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.exclusive and self.raw_safe and self.conserved


def audit(report: SimReport, design: DesignPoint, dev: DeviceSpec | None = None) -> AuditResult:
    """Re-check exclusivity, RAW safety and bit conservation from the recorded event log."""
    if not report.events and design.streaming_layers:
        raise SimError("audit needs a report simulated with record_events=True")
    dev = dev or design.device
    problems: list[str] = []

    # at most one burst open at any instant, and each end closes the open one
    exclusive = True
    active: tuple[int, int] | None = None
    for ev in sorted(report.events, key=lambda e: (e.t, _KIND_ORDER[e.kind])):
        if ev.kind == "burst_start":
            exclusive &= active is None
            active = (ev.layer, ev.fragment)
        elif ev.kind == "burst_end":
            exclusive &= active == (ev.layer, ev.fragment)
            active = None
    if not exclusive:
        problems.append("overlapping bursts on the DMA port")

    spare = dev.bandwidth_bps - design.beta_io
    burst_at: dict[tuple[int, int], Fraction] = {}
    buffer_read: dict[tuple[int, int], Fraction] = {}
    read_done: dict[tuple[int, int], Fraction] = {}
    for ev in report.events:
        key = (ev.layer, ev.fragment)
        if ev.kind == "burst_start":
            burst_at[key] = ev.t
        elif ev.kind == "fragment_advance" and ev.phase == "buffer":
            buffer_read[key] = ev.t
        elif ev.kind == "fragment_advance" and ev.phase == "static":
            read_done[key] = ev.t
    raw_safe = True
    for (lid, q), start in buffer_read.items():
        cfg = design.configs[lid]
        t_word = 1 / (design.slowdown[lid] * cfg.clk_comp_hz)
        t_write = cfg.m_wid / spare
        w = burst_at.get((lid, q))
        u = cfg.frag.u_off
        if w is None or start < w + t_write or start + (u - 1) * t_word < w + u * t_write:
            raw_safe = False
            problems.append(f"layer {lid} fragment {q}: read overtakes the write pointer")
            break
        # the next burst must not overwrite words still being read
        nxt = burst_at.get((lid, q + 1))
        if nxt is not None and nxt < read_done[(lid, q)]:
            raw_safe = False
            problems.append(f"layer {lid} fragment {q + 1}: burst overwrites unread words")
            break

    conserved = True
    for lid in design.streaming_layers:
        cfg = design.configs[lid]
        expect = report.horizon * design.metrics[lid].r * cfg.m_wid * cfg.frag.u_off
        written = sum(1 for (l, _) in burst_at if l == lid) * cfg.m_wid * cfg.frag.u_off
        if written != expect or report.layer(lid).bits_written != expect:
            conserved = False
            problems.append(f"layer {lid}: wrote {written} bits, expected {expect}")
    return AuditResult(exclusive, raw_safe, conserved, tuple(problems))


def dump_events(events: Iterable[SimEvent]) -> str:
    return "".join(json.dumps(ev.to_dict()) + "\n" for ev in events)
