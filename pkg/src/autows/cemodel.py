"""Analytical models of a single compute engine (CE).

Everything here is a pure function of a layer and its configuration:
weight-memory geometry, fragmentation into static/streamed regions, the
repetition count of the read loop, throughput, average off-chip bandwidth
and an area estimate driven by a calibration table.

Rates are exact ``Fraction`` values (inferences/s, bits/s); callers convert
to floats at I/O boundaries.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from .netdev import BRAM36_BITS, LayerSpec, NetworkGraph, OpKind, ResourceVector

__all__ = [
    "CEConfig",
    "CalibrationTable",
    "Fragmentation",
    "MemoryBreakdown",
    "ResourceVector",
    "UnrollFactors",
    "area",
    "bandwidth",
    "bram_blocks",
    "cycles_per_inference",
    "fragment_geometry",
    "io_bandwidth",
    "memory_breakdown",
    "memory_geometry",
    "repeat_count",
    "slowdown",
    "throughput",
]


class ModelError(ValueError):
    pass


def divisors(n: int) -> list[int]:
    small = [d for d in range(1, math.isqrt(n) + 1) if n % d == 0]
    return sorted(set(small + [n // d for d in small]))


@dataclass(frozen=True)
class UnrollFactors:
    k_p: int = 1
    c_p: int = 1
    f_p: int = 1

    def check(self, layer: LayerSpec) -> None:
        for name, p, full in self._dims(layer):
            if p < 1 or full % p:
                raise ModelError(f"layer {layer.id}: {name}={p} does not divide {full}")

    def _dims(self, layer: LayerSpec) -> list[tuple[str, int, int]]:
        return [("k_p", self.k_p, layer.k), ("c_p", self.c_p, layer.group_c), ("f_p", self.f_p, layer.f)]

    def tripcounts(self, layer: LayerSpec) -> tuple[int, int, int]:
        """(k_t, c_t, f_t)."""
        return layer.k // self.k_p, layer.group_c // self.c_p, layer.f // self.f_p

    def lanes(self, layer: LayerSpec) -> int:
        """Parallel elementwise operations per cycle."""
        if layer.weighted:
            return self.f_p * self.c_p * self.k_p**2
        if layer.op is OpKind.POOL:
            return self.c_p * self.k_p**2
        return self.c_p

    def to_dict(self) -> dict[str, int]:
        return {"k_p": self.k_p, "c_p": self.c_p, "f_p": self.f_p}


@dataclass(frozen=True)
class Fragmentation:
    n: int = 1
    u_on: int = 0
    u_off: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.u_on < 0 or self.u_off < 0:
            raise ModelError(f"invalid fragmentation {self}")

    @property
    def depth(self) -> int:
        """Per-fragment depth (static + streamed words)."""
        return self.u_on + self.u_off

    def check(self, m_dep: int) -> None:
        if m_dep == 0:
            if (self.n, self.u_on, self.u_off) != (1, 0, 0):
                raise ModelError("layers without weights must use fragmentation (1, 0, 0)")
            return
        padding = self.n * self.depth - m_dep
        if self.depth < 1 or not 0 <= padding < self.n:
            raise ModelError(
                f"fragmentation {self} does not tile {m_dep} words with < n words of padding"
            )

    def to_dict(self) -> dict[str, int]:
        return {"n": self.n, "u_on": self.u_on, "u_off": self.u_off}


@dataclass(frozen=True)
class CEConfig:
    layer: LayerSpec
    unroll: UnrollFactors
    frag: Fragmentation
    clk_comp_hz: int
    m_dep_off: int = 0  # words requested off-chip; frag may round it up

    def __post_init__(self) -> None:
        self.unroll.check(self.layer)
        self.frag.check(self.m_dep)
        if not 0 <= self.m_dep_off <= self.m_dep:
            raise ModelError(f"layer {self.layer.id}: m_dep_off outside [0, M_dep]")
        if self.clk_comp_hz <= 0:
            raise ModelError("clock must be positive")

    @property
    def m_dep(self) -> int:
        return memory_geometry(self.layer, self.unroll)[0] if self.layer.weighted else 0

    @property
    def m_wid(self) -> int:
        return memory_geometry(self.layer, self.unroll)[1] if self.layer.weighted else 0

    @property
    def streaming(self) -> bool:
        return self.frag.u_off > 0

    @classmethod
    def initial(cls, layer: LayerSpec, clk_comp_hz: int) -> CEConfig:
        unroll = UnrollFactors()
        if layer.weighted:
            frag = Fragmentation(1, memory_geometry(layer, unroll)[0], 0)
        else:
            frag = Fragmentation()
        return cls(layer, unroll, frag, clk_comp_hz)


# --------------------------------------------------------------------------- geometry


@functools.lru_cache(maxsize=65536)
def memory_geometry(layer: LayerSpec, unroll: UnrollFactors) -> tuple[int, int]:
    """Weight memory (depth in words, width in bits) that keeps the PEs fed every cycle."""
    if not layer.weighted:
        raise ModelError(f"layer {layer.id} ({layer.op.value}) has no weight memory")
    k_t, c_t, f_t = unroll.tripcounts(layer)
    return f_t * c_t * k_t**2, unroll.f_p * unroll.c_p * unroll.k_p**2 * layer.w_bits


def fragment_geometry(m_dep: int, m_dep_off: int, n: int) -> Fragmentation:
    """Split ``m_dep`` words into ``n`` equal fragments with ``m_dep_off`` words streamed.

    Each fragment is ``ceil(m_dep / n)`` deep; the streamed part of every
    fragment is ``ceil(m_dep_off / n)`` words and the rest stays on-chip, so
    total padding is below ``n`` words.
    """
    if not 0 <= m_dep_off <= m_dep:
        raise ModelError(f"m_dep_off={m_dep_off} outside [0, {m_dep}]")
    if n < 1:
        raise ModelError("n must be >= 1")
    if m_dep_off > 0 and n > m_dep_off:
        raise ModelError(f"n={n} exceeds the {m_dep_off} evicted words")
    if m_dep_off == 0 and n != 1:
        raise ModelError("fragmentation requires evicted words")
    u_off = -(-m_dep_off // n)
    u_on = -(-m_dep // n) - u_off
    return Fragmentation(n, u_on, u_off)


def repeat_count(layer: LayerSpec, n: int) -> int:
    """Fragment sweeps per inference: weights are reused over b, h_out and w_out."""
    if not layer.weighted:
        raise ModelError(f"layer {layer.id} has no weights to repeat")
    return layer.b * layer.h_out * layer.w_out * n


# --------------------------------------------------------------------------- rates


def cycles_per_inference(layer: LayerSpec, unroll: UnrollFactors) -> int:
    k_t, c_t, f_t = unroll.tripcounts(layer)
    if layer.op is OpKind.CONV:
        return layer.b * layer.h_out * layer.w_out * k_t**2 * c_t * f_t
    if layer.op is OpKind.FC:
        return layer.b * c_t * f_t
    if layer.op is OpKind.POOL:
        return layer.b * layer.h_out * layer.w_out * k_t**2 * c_t
    return layer.b * layer.h * layer.w * c_t


def throughput(cfg: CEConfig) -> Fraction:
    """Inferences per second, pipeline fill excluded."""
    return Fraction(cfg.clk_comp_hz, cycles_per_inference(cfg.layer, cfg.unroll))


def bandwidth(cfg: CEConfig) -> Fraction:
    """Average off-chip bits/s needed to refill the streamed fragments at full rate."""
    if cfg.frag.u_off == 0:
        return Fraction(0)
    depth = cfg.frag.depth
    if depth == 0:
        raise ModelError(f"layer {cfg.layer.id}: empty fragments")
    return Fraction(cfg.m_wid * cfg.clk_comp_hz * cfg.frag.u_off, depth)


def slowdown(thetas: Mapping[int, Fraction]) -> dict[int, Fraction]:
    """Ratio of the pipeline rate (slowest layer) to each layer's own rate."""
    if not thetas:
        raise ModelError("slowdown of an empty design")
    slowest = min(thetas.values())
    return {lid: slowest / theta for lid, theta in thetas.items()}


def io_bandwidth(net: NetworkGraph, theta_pipeline: Fraction) -> Fraction:
    """Bits/s for reading input samples into the first CE and writing results from the last."""
    if theta_pipeline <= 0:
        raise ModelError("pipeline throughput must be positive")
    src, sink = net.source, net.sink
    bits = src.in_volume * src.a_bits + sink.out_volume * sink.a_bits
    return theta_pipeline * src.b * bits


# --------------------------------------------------------------------------- area

# port width -> depth multiple of the 36-bit configuration
_BRAM_ASPECTS = {36: 1, 18: 2, 9: 4, 4: 8, 2: 16, 1: 32}


def bram_blocks(width: int, depth: int, cap36: int = 1024) -> int:
    """BRAM36 blocks for a ``width`` x ``depth`` memory.

    Memories at least 36 bits wide tile 36-bit columns of ``cap36`` words;
    narrower ones use the narrowest aspect ratio that fits, where halving the
    port width doubles the depth.
    """
    if width <= 0 or depth <= 0:
        return 0
    if width >= 36:
        return -(-width // 36) * -(-depth // cap36)
    port = min(w for w in _BRAM_ASPECTS if w >= width)
    return -(-depth // (cap36 * _BRAM_ASPECTS[port]))


@dataclass(frozen=True)
class CalibrationTable:
    """Area coefficients.  Defaults follow vendor packing rules; a JSON file may override any key."""

    dsp_per_mac: Mapping[str, float] = field(
        default_factory=lambda: {"w8a8": 1.0, "w4a4": 0.5, "w4a5": 0.5}
    )
    lut_base: int = 400
    lut_per_mac: float = 12.0
    lut_per_port: float = 24.0
    ff_per_lut: float = 1.25
    bram_depth_cap: int = 1024
    fifo_words_per_edge: int = 2048

    def __post_init__(self) -> None:
        coeffs = [self.lut_base, self.lut_per_mac, self.lut_per_port, self.ff_per_lut,
                  self.fifo_words_per_edge, *self.dsp_per_mac.values()]
        if min(coeffs) < 0 or self.bram_depth_cap < 1:
            raise ModelError("calibration coefficients must be non-negative")

    def dsp_cost(self, w_bits: int, a_bits: int) -> Fraction:
        key = f"w{w_bits}a{a_bits}"
        if key in self.dsp_per_mac:
            return Fraction(str(self.dsp_per_mac[key]))
        if w_bits <= 4:
            return Fraction(1, 2)
        if w_bits <= 18 and a_bits <= 27:
            return Fraction(1)
        return Fraction(2)

    def fifo_words(self, layer: LayerSpec) -> int:
        """Activation FIFO words charged to a layer, one FIFO per incoming stream."""
        streams = 2 if layer.op is OpKind.ELTWISE_ADD else 1
        return streams * self.fifo_words_per_edge

    def to_dict(self) -> dict[str, Any]:
        return {
            "dsp_per_mac": dict(self.dsp_per_mac),
            "lut_base": self.lut_base,
            "lut_per_mac": self.lut_per_mac,
            "lut_per_port": self.lut_per_port,
            "ff_per_lut": self.ff_per_lut,
            "bram_depth_cap": self.bram_depth_cap,
            "fifo_words_per_edge": self.fifo_words_per_edge,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CalibrationTable:
        known = set(cls().to_dict())
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown calibration keys: {sorted(unknown)}")
        merged = {**cls().to_dict(), **data}
        if "dsp_per_mac" in data:
            merged["dsp_per_mac"] = {**cls().dsp_per_mac, **data["dsp_per_mac"]}
        return cls(**merged)

    @classmethod
    def load(cls, path: str | Path | None) -> CalibrationTable:
        if path is None:
            return cls()
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ModelError(f"cannot read calibration {path}: {exc}") from None


@dataclass(frozen=True)
class MemoryBreakdown:
    """BRAM36 blocks by role."""

    act_fifo: int = 0
    wt_buff: int = 0
    wt_mem: int = 0

    @property
    def total(self) -> int:
        return self.act_fifo + self.wt_buff + self.wt_mem

    def __add__(self, other: MemoryBreakdown) -> MemoryBreakdown:
        return MemoryBreakdown(
            self.act_fifo + other.act_fifo, self.wt_buff + other.wt_buff, self.wt_mem + other.wt_mem
        )


def memory_breakdown(cfg: CEConfig, calib: CalibrationTable) -> MemoryBreakdown:
    cap = calib.bram_depth_cap
    act = bram_blocks(cfg.layer.a_bits, calib.fifo_words_per_edge, cap)
    act *= 2 if cfg.layer.op is OpKind.ELTWISE_ADD else 1
    if not cfg.layer.weighted:
        return MemoryBreakdown(act_fifo=act)
    m_wid, frag = cfg.m_wid, cfg.frag
    return MemoryBreakdown(
        act_fifo=act,
        wt_buff=bram_blocks(m_wid, frag.u_off, cap),
        wt_mem=bram_blocks(m_wid, frag.n * frag.u_on, cap),
    )


def area(cfg: CEConfig, calib: CalibrationTable) -> ResourceVector:
    layer, frag = cfg.layer, cfg.frag
    lanes = cfg.unroll.lanes(layer)
    mem = memory_breakdown(cfg, calib)
    fifo_bits = calib.fifo_words(layer) * layer.a_bits
    if layer.weighted:
        m_wid = cfg.m_wid
        dsp = math.ceil(lanes * calib.dsp_cost(layer.w_bits, layer.a_bits))
        cols = bram_blocks(m_wid, 1, calib.bram_depth_cap)
        ports = cols * ((frag.u_on > 0) + (frag.u_off > 0))
        weight_bits = m_wid * (frag.n * frag.u_on + frag.u_off)
    else:
        dsp = ports = weight_bits = 0
    lut = math.ceil(calib.lut_base + calib.lut_per_mac * lanes + calib.lut_per_port * ports)
    return ResourceVector(
        lut=lut,
        ff=math.ceil(lut * calib.ff_per_lut),
        dsp=dsp,
        bram36=mem.total,
        mem_bits=weight_bits + fifo_bits,
    )


def total_area(configs: Iterable[CEConfig], calib: CalibrationTable) -> ResourceVector:
    return ResourceVector.total(area(cfg, calib) for cfg in configs)


def with_fragmentation(cfg: CEConfig, m_dep_off: int, n: int) -> CEConfig:
    m_dep = cfg.m_dep
    if m_dep_off == 0:
        return replace(cfg, frag=Fragmentation(1, m_dep, 0), m_dep_off=0)
    return replace(cfg, frag=fragment_geometry(m_dep, m_dep_off, n), m_dep_off=m_dep_off)
