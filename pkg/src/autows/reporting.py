"""Tabular reports: memory/bandwidth breakdown, per-layer allocation and sweeps."""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from . import dse
from .dse import DesignPoint, DseHyperParams
from .netdev import BRAM36_BITS, GBPS, DeviceSpec, NetworkGraph

MB = 8 * 10**6  # bits per (decimal) megabyte

BREAKDOWN_COLUMNS = [
    "design", "bw_act_gbps", "bw_wt_gbps", "bw_total_gbps", "bw_util",
    "act_fifo_bram36", "wt_buff_bram36", "wt_mem_bram36", "bram36_total",
    "act_fifo_mb", "wt_buff_mb", "wt_mem_mb", "mem_total_mb", "mem_util",
    "dsp", "lut", "fps", "feasible",
]

LAYER_COLUMNS = [
    "layer", "name", "op", "k_p", "c_p", "f_p", "n", "u_on", "u_off", "m_dep", "m_dep_off",
    "onchip_bytes", "offchip_bytes", "theta", "s", "r", "weighted_beta_bps", "delta_b_next_bps",
]


def fmt(value: Any) -> str:
    """Six significant digits for floats and fractions; everything else verbatim."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, Fraction)):
        return f"{float(value):.6g}"
    return str(value)


def to_csv(columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def breakdown_row(design: DesignPoint, label: str = "autows") -> dict[str, Any]:
    """Bandwidth split (pipeline I/O vs weights), BRAM split by role, DSP and FPS."""
    dev = design.device
    mem = design.memory
    return {
        "design": label,
        "bw_act_gbps": design.beta_io / GBPS,
        "bw_wt_gbps": design.beta_weights / GBPS,
        "bw_total_gbps": design.bandwidth_total / GBPS,
        "bw_util": design.bandwidth_total / dev.bandwidth_bps,
        "act_fifo_bram36": mem.act_fifo,
        "wt_buff_bram36": mem.wt_buff,
        "wt_mem_bram36": mem.wt_mem,
        "bram36_total": mem.total,
        "act_fifo_mb": Fraction(mem.act_fifo * BRAM36_BITS, MB),
        "wt_buff_mb": Fraction(mem.wt_buff * BRAM36_BITS, MB),
        "wt_mem_mb": Fraction(mem.wt_mem * BRAM36_BITS, MB),
        "mem_total_mb": Fraction(mem.total * BRAM36_BITS, MB),
        "mem_util": Fraction(mem.total, dev.area.bram36) if dev.area.bram36 else float("inf"),
        "dsp": design.area.dsp,
        "lut": design.area.lut,
        "fps": design.theta_pipeline,
        "feasible": design.feasible,
    }


def layer_rows(design: DesignPoint, hp: DseHyperParams | None = None) -> list[dict[str, Any]]:
    """Per-layer on/off-chip weight bytes and the cost of evicting one more block."""
    hp = hp or DseHyperParams()
    rows = []
    for cfg, m, s in zip(design.configs, design.metrics, design.slowdown):
        lid = cfg.layer.id
        frag = cfg.frag
        evictable = cfg.layer.weighted and cfg.m_dep_off < cfg.m_dep
        rows.append({
            "layer": lid,
            "name": cfg.layer.name,
            "op": cfg.layer.op.value,
            "k_p": cfg.unroll.k_p,
            "c_p": cfg.unroll.c_p,
            "f_p": cfg.unroll.f_p,
            "n": frag.n,
            "u_on": frag.u_on,
            "u_off": frag.u_off,
            "m_dep": cfg.m_dep,
            "m_dep_off": cfg.m_dep_off,
            "onchip_bytes": cfg.m_wid * frag.n * frag.u_on // 8,
            "offchip_bytes": cfg.m_wid * frag.n * frag.u_off // 8,
            "theta": m.theta,
            "s": s,
            "r": m.r,
            "weighted_beta_bps": s * m.beta,
            "delta_b_next_bps": dse.delta_bandwidth(design, lid, hp) if evictable else "",
        })
    return rows


# --------------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepPoint:
    value: float
    autows: DesignPoint
    vanilla: DesignPoint

    def row(self, param: str) -> dict[str, Any]:
        base = self.autows.device.bandwidth_bps
        return {
            sweep_key(param): self.value,
            "fps_autows": self.autows.theta_pipeline if self.autows.feasible else "infeasible",
            "fps_vanilla_or_infeasible": (
                self.vanilla.theta_pipeline if self.vanilla.feasible else "infeasible"
            ),
            "bw_norm": self.autows.bandwidth_total / base,
        }


def sweep_key(param: str) -> str:
    return {"mem": "a_mem_norm", "bandwidth": "b_norm"}[param]


def sweep_columns(param: str) -> list[str]:
    return [sweep_key(param), "fps_autows", "fps_vanilla_or_infeasible", "bw_norm"]


def _scaled(device: DeviceSpec, param: str, value: float) -> DeviceSpec:
    return device.scaled(mem=value) if param == "mem" else device.scaled(bandwidth=value)


def sweep_point(args: tuple) -> SweepPoint:
    net, device, param, value, hp, calib = args
    dev = _scaled(device, param, value)
    autows, _ = dse.run(net, dev, hp, calib)
    vanilla, _ = dse.run(net, dev, DseHyperParams(hp.phi, hp.mu, evict=False), calib)
    return SweepPoint(value, autows, vanilla)


def sweep(
    net: NetworkGraph,
    device: DeviceSpec,
    param: str,
    values: Sequence[float],
    hp: DseHyperParams | None = None,
    calib=None,
    jobs: int = 1,
) -> list[SweepPoint]:
    """One AutoWS and one vanilla run per value; rows keep the order of ``values``."""
    if param not in ("mem", "bandwidth"):
        raise ValueError(f"unknown sweep parameter {param!r}")
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be non-empty and strictly increasing")
    if any(v <= 0 for v in values) and param == "bandwidth":
        raise ValueError("bandwidth fractions must be positive")
    if any(v < 0 for v in values):
        raise ValueError("sweep values must be non-negative")
    hp = hp or DseHyperParams()
    tasks = [(net, device, param, v, hp, calib) for v in values]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(sweep_point, tasks))
    return [sweep_point(t) for t in tasks]
