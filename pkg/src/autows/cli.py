"""``autows`` command line: dse, simulate and sweep."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__, dmasim, dse, reporting
from .cemodel import CalibrationTable
from .netdev import load_device, load_network

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class InputError(Exception):
    pass


def _prepare_out(out: Path, names: Sequence[str], force: bool) -> None:
    clash = [n for n in names if (out / n).exists()]
    if clash and not force:
        raise InputError(f"{out}: would overwrite {', '.join(clash)} (use --force)")
    out.mkdir(parents=True, exist_ok=True)


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def _hp(args) -> dse.DseHyperParams:
    return dse.DseHyperParams(phi=args.phi, mu=args.mu, evict=not getattr(args, "vanilla", False))


def cmd_dse(args) -> int:
    net = load_network(args.network)
    dev = load_device(args.device)
    calib = CalibrationTable.load(args.calib)
    hp = _hp(args)
    out = Path(args.output)
    files = ["design.json", "breakdown.csv", "layers.csv", "trace.jsonl"]
    _prepare_out(out, files, args.force)

    design, trace = dse.run(net, dev, hp, calib)
    label = "vanilla" if args.vanilla else "autows"
    _write(out, "design.json", json.dumps(dse.design_to_dict(design, hp), indent=2) + "\n")
    _write(out, "breakdown.csv",
           reporting.to_csv(reporting.BREAKDOWN_COLUMNS, [reporting.breakdown_row(design, label)]))
    _write(out, "layers.csv", reporting.to_csv(reporting.LAYER_COLUMNS, reporting.layer_rows(design, hp)))
    _write(out, "trace.jsonl", "".join(json.dumps(e.to_dict()) + "\n" for e in trace))

    status = "feasible" if design.feasible else "INFEASIBLE"
    print(
        f"{net.name} on {dev.name}: {status}, fps {reporting.fmt(design.theta_pipeline)}, "
        f"bandwidth {reporting.fmt(design.bandwidth_total / 10**9)} Gbps, "
        f"bram36 {design.area.bram36}/{dev.area.bram36}, dsp {design.area.dsp}/{dev.area.dsp}, "
        f"streaming layers {design.streaming_layers}"
    )
    return EXIT_OK if design.feasible else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    if args.horizon < 1:
        raise InputError("--horizon must be at least 1")
    dev = load_device(args.device)
    try:
        data = json.loads(Path(args.design).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read design {args.design}: {exc}") from None
    design = dse.design_from_dict(data, dev)
    out = Path(args.output)
    files = ["sim_report.json"] + (["events.jsonl"] if args.emit_events else [])
    _prepare_out(out, files, args.force)

    report = dmasim.simulate(design, dev, args.horizon, record_events=args.emit_events)
    doc = report.to_dict()
    doc["model_comparison"] = dmasim.compare_with_model(report, design).to_dict()
    if args.emit_events:
        result = dmasim.audit(report, design, dev)
        doc["audit"] = {"exclusive": result.exclusive, "raw_safe": result.raw_safe,
                        "conserved": result.conserved, "problems": list(result.problems)}
        _write(out, "events.jsonl", dmasim.dump_events(report.events))
    _write(out, "sim_report.json", json.dumps(doc, indent=2) + "\n")

    steady = sum(s.steady_stall_events for s in report.layers)
    print(
        f"horizon {args.horizon}: achieved fps {reporting.fmt(report.achieved_theta)} "
        f"(model {reporting.fmt(design.theta_pipeline)}), steady-state stalls {steady}, "
        f"dma utilization {reporting.fmt(report.dma_utilization)}"
    )
    return EXIT_OK


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def cmd_sweep(args) -> int:
    net = load_network(args.network)
    dev = load_device(args.device)
    calib = CalibrationTable.load(args.calib)
    out = Path(args.output)
    _prepare_out(out, ["sweep.csv"], args.force)
    try:
        points = reporting.sweep(net, dev, args.param, args.values, _hp(args), calib, args.jobs)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    rows = [p.row(args.param) for p in points]
    text = reporting.to_csv(reporting.sweep_columns(args.param), rows)
    _write(out, "sweep.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autows",
        description="Weight-streaming design-space exploration for layer-pipelined accelerators.",
    )
    parser.add_argument("--version", action="version", version=f"autows {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_default: str = "out") -> None:
        p.add_argument("-o", "--output", default=out_default, help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    def search(p: argparse.ArgumentParser) -> None:
        p.add_argument("network", help="network JSON path or shipped name (resnet18, mobilenetv2, toy3)")
        p.add_argument("device", help="device JSON path or preset name (zcu102, ...)")
        p.add_argument("--calib", help="calibration JSON overriding the default table")
        p.add_argument("--phi", type=int, default=1, help="unroll step (default 1)")
        p.add_argument("--mu", type=int, default=64, help="eviction step in words (default 64)")

    p = sub.add_parser("dse", help="run the design-space exploration")
    search(p)
    p.add_argument("--vanilla", action="store_true", help="disable weight eviction (all on-chip)")
    common(p)
    p.set_defaults(func=cmd_dse)

    p = sub.add_parser("simulate", help="simulate the DMA schedule of a design")
    p.add_argument("design", help="design.json written by 'autows dse'")
    p.add_argument("device", help="device JSON path or preset name")
    p.add_argument("--horizon", type=int, required=True, help="inferences to simulate")
    p.add_argument("--emit-events", action="store_true", help="also write events.jsonl and audit it")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep the memory or bandwidth budget")
    search(p)
    p.add_argument("--param", choices=["mem", "bandwidth"], default="mem")
    p.add_argument("--values", type=_values, required=True,
                   help="comma-separated fractions of the device capacity, increasing")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "phi", 1) < 1 or getattr(args, "mu", 1) < 1:
        parser.error("--phi and --mu must be >= 1")
    try:
        return args.func(args)
    except (InputError, ValueError) as exc:
        print(f"autows: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
