"""Network and device descriptions.

Layers carry the dimensional symbols used by every model in the package
(batch, channels, spatial dims, kernel, filters, bitwidths).  Devices carry
the resource vector, the off-chip bandwidth and the two clock domains.
"""

from __future__ import annotations

import enum
import graphlib
import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping

import jsonschema

BRAM36_BITS = 36 * 1024
GBPS = 10**9
MHZ = 10**6


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network documents."""


class DeviceError(ValueError):
    """Raised for malformed device documents or unknown presets."""


class OpKind(str, enum.Enum):
    CONV = "conv"
    FC = "fc"
    POOL = "pool"
    ELTWISE_ADD = "eltwise_add"
    ACTIVATION = "activation"

    @property
    def weighted(self) -> bool:
        return self in (OpKind.CONV, OpKind.FC)

    @property
    def windowed(self) -> bool:
        return self in (OpKind.CONV, OpKind.POOL)


def conv_out_dim(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


@dataclass(frozen=True)
class LayerSpec:
    id: int
    op: OpKind
    c: int
    h: int
    w: int
    f: int
    h_out: int
    w_out: int
    b: int = 1
    k: int = 1
    stride: int = 1
    pad: int = 0
    w_bits: int = 8
    a_bits: int = 8
    groups: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "op", OpKind(self.op))
        where = f"layer {self.id}"
        for attr in ("b", "c", "h", "w", "k", "f", "stride", "h_out", "w_out", "groups"):
            if getattr(self, attr) < 1:
                raise NetworkError(f"{where}: {attr} must be >= 1")
        if self.pad < 0:
            raise NetworkError(f"{where}: pad must be >= 0")
        for attr in ("w_bits", "a_bits"):
            if not 1 <= getattr(self, attr) <= 32:
                raise NetworkError(f"{where}: {attr} must be in 1..32")
        if self.op is OpKind.FC and (self.k, self.h, self.w, self.h_out, self.w_out) != (1,) * 5:
            raise NetworkError(f"{where}: fc layers require k = h = w = h_out = w_out = 1")
        if self.op.windowed:
            expect = (
                conv_out_dim(self.h, self.k, self.stride, self.pad),
                conv_out_dim(self.w, self.k, self.stride, self.pad),
            )
            if (self.h_out, self.w_out) != expect:
                raise NetworkError(
                    f"{where}: output dims {(self.h_out, self.w_out)} disagree with "
                    f"window arithmetic {expect}"
                )
        elif (self.h_out, self.w_out) != (self.h, self.w) or self.k != 1:
            if self.op is not OpKind.FC:
                raise NetworkError(f"{where}: {self.op.value} must preserve spatial dims with k = 1")
        if not self.op.weighted and self.f != self.c:
            raise NetworkError(f"{where}: {self.op.value} requires f == c")
        if self.groups != 1 and (
            self.op is not OpKind.CONV or self.c % self.groups or self.f % self.groups
        ):
            raise NetworkError(f"{where}: groups must divide c and f of a conv layer")

    @property
    def weighted(self) -> bool:
        return self.op.weighted

    @property
    def group_c(self) -> int:
        """Input channels seen by one filter."""
        return self.c // self.groups

    @property
    def weight_count(self) -> int:
        return self.f * self.group_c * self.k * self.k if self.weighted else 0

    @property
    def weight_bits(self) -> int:
        return self.weight_count * self.w_bits

    @property
    def reuse(self) -> int:
        """Times the full weight set is swept per inference (b * h_out * w_out)."""
        return self.b * self.h_out * self.w_out

    @property
    def in_volume(self) -> int:
        return self.c * self.h * self.w

    @property
    def out_volume(self) -> int:
        return self.f * self.h_out * self.w_out

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["op"] = self.op.value
        d["w_bits"], d["a_bits"] = self.w_bits, self.a_bits
        if self.groups == 1:
            del d["groups"]
        if not self.name:
            del d["name"]
        return d


@dataclass(frozen=True)
class NetworkGraph:
    name: str
    layers: tuple[LayerSpec, ...]
    edges: tuple[tuple[int, int], ...]
    _index: dict[int, LayerSpec] = field(init=False, repr=False, compare=False)
    _preds: dict[int, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.layers:
            raise NetworkError("network has no layers")
        ids = [layer.id for layer in self.layers]
        if ids != list(range(len(ids))):
            raise NetworkError("layer ids must be the ordinals 0..N-1 in pipeline order")
        index = {layer.id: layer for layer in self.layers}
        preds: dict[int, list[int]] = {i: [] for i in ids}
        succs: dict[int, list[int]] = {i: [] for i in ids}
        for src, dst in self.edges:
            if src not in index or dst not in index:
                raise NetworkError(f"edge {src}->{dst} references an unknown layer")
            if src == dst:
                raise NetworkError(f"self-loop on layer {src}")
            preds[dst].append(src)
            succs[src].append(dst)
        if len(set(self.edges)) != len(self.edges):
            raise NetworkError("duplicate edges")
        try:
            tuple(graphlib.TopologicalSorter({i: preds[i] for i in ids}).static_order())
        except graphlib.CycleError as exc:
            raise NetworkError(f"network graph is cyclic: {exc.args[1]}") from None
        sources = [i for i in ids if not preds[i]]
        sinks = [i for i in ids if not succs[i]]
        if len(sources) != 1 or len(sinks) != 1:
            raise NetworkError(
                f"expected exactly one source and one sink, got sources={sources} sinks={sinks}"
            )
        for i in ids:
            layer = index[i]
            fan_in = preds[i]
            if layer.op is OpKind.ELTWISE_ADD:
                if len(fan_in) != 2:
                    raise NetworkError(f"layer {i}: eltwise_add needs exactly two inputs")
                a, b = (index[p] for p in fan_in)
                if (a.f, a.h_out, a.w_out) != (b.f, b.h_out, b.w_out):
                    raise NetworkError(f"layer {i}: eltwise_add inputs have different shapes")
            elif len(fan_in) > 1:
                raise NetworkError(f"layer {i}: only eltwise_add may have several inputs")
            for p in fan_in:
                if index[p].out_volume != layer.in_volume:
                    raise NetworkError(
                        f"edge {p}->{i}: producer volume {index[p].out_volume} != "
                        f"consumer volume {layer.in_volume}"
                    )
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_preds", {i: tuple(p) for i, p in preds.items()})

    def __iter__(self) -> Iterator[LayerSpec]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def layer(self, lid: int) -> LayerSpec:
        return self._index[lid]

    def predecessors(self, lid: int) -> tuple[int, ...]:
        return self._preds[lid]

    @property
    def source(self) -> LayerSpec:
        return next(layer for layer in self.layers if not self._preds[layer.id])

    @property
    def sink(self) -> LayerSpec:
        has_succ = {src for src, _ in self.edges}
        return next(layer for layer in self.layers if layer.id not in has_succ)

    @property
    def weighted_layers(self) -> tuple[LayerSpec, ...]:
        return tuple(layer for layer in self.layers if layer.weighted)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "layers": [layer.to_dict() for layer in self.layers],
            "edges": [list(e) for e in self.edges],
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


_LAYER_SCHEMA = {
    "type": "object",
    "required": ["id", "op", "c", "h", "w", "f"],
    "properties": {
        "id": {"type": "integer"},
        "op": {"enum": [k.value for k in OpKind]},
        **{
            key: {"type": "integer"}
            for key in ("b", "c", "h", "w", "k", "f", "stride", "pad", "h_out", "w_out",
                        "w_bits", "a_bits", "groups")
        },
        "name": {"type": "string"},
    },
    "additionalProperties": False,
}

NETWORK_SCHEMA = {
    "type": "object",
    "required": ["name", "layers", "edges"],
    "properties": {
        "name": {"type": "string"},
        "layers": {"type": "array", "items": _LAYER_SCHEMA},
        "edges": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        },
    },
}


def _load_json(doc: bytes | str | Mapping[str, Any], err: type[ValueError]) -> Any:
    if isinstance(doc, Mapping):
        return doc
    try:
        return json.loads(doc)
    except json.JSONDecodeError as exc:
        raise err(f"invalid JSON: {exc}") from None


def parse_network(doc: bytes | str | Mapping[str, Any]) -> NetworkGraph:
    """Validate a network document, filling h_out/w_out by shape inference."""
    data = _load_json(doc, NetworkError)
    try:
        jsonschema.validate(data, NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise NetworkError(f"schema violation: {exc.message}") from None
    layers = []
    for raw in data["layers"]:
        fields = dict(raw)
        fields["op"] = OpKind(fields["op"])
        k = fields.setdefault("k", 1)
        stride = fields.setdefault("stride", 1)
        pad = fields.setdefault("pad", 0)
        if fields["op"].windowed:
            fields.setdefault("h_out", conv_out_dim(fields["h"], k, stride, pad))
            fields.setdefault("w_out", conv_out_dim(fields["w"], k, stride, pad))
        else:
            fields.setdefault("h_out", fields["h"])
            fields.setdefault("w_out", fields["w"])
        layers.append(LayerSpec(**fields))
    layers.sort(key=lambda layer: layer.id)
    return NetworkGraph(
        name=data["name"], layers=tuple(layers), edges=tuple(tuple(e) for e in data["edges"])
    )


@dataclass(frozen=True)
class ResourceVector:
    lut: int = 0
    ff: int = 0
    dsp: int = 0
    bram36: int = 0
    mem_bits: int = 0

    def __post_init__(self) -> None:
        if min(self.lut, self.ff, self.dsp, self.bram36, self.mem_bits) < 0:
            raise ValueError("resource counts must be non-negative")

    def __add__(self, other: ResourceVector) -> ResourceVector:
        return ResourceVector(
            self.lut + other.lut,
            self.ff + other.ff,
            self.dsp + other.dsp,
            self.bram36 + other.bram36,
            self.mem_bits + other.mem_bits,
        )

    def __le__(self, other: ResourceVector) -> bool:
        return (
            self.lut <= other.lut
            and self.ff <= other.ff
            and self.dsp <= other.dsp
            and self.bram36 <= other.bram36
            and self.mem_bits <= other.mem_bits
        )

    @property
    def bram_bits(self) -> int:
        return self.bram36 * BRAM36_BITS

    @classmethod
    def total(cls, vectors) -> ResourceVector:
        acc = cls()
        for v in vectors:
            acc = acc + v
        return acc

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    bandwidth_bps: int
    area: ResourceVector
    clk_comp_hz: int
    clk_dma_hz: int

    def __post_init__(self) -> None:
        if self.bandwidth_bps <= 0:
            raise DeviceError(f"{self.name}: bandwidth must be positive")
        if self.clk_comp_hz <= 0 or self.clk_dma_hz <= 0:
            raise DeviceError(f"{self.name}: clock frequencies must be positive")
        a = self.area
        if a.mem_bits != a.bram36 * BRAM36_BITS:
            raise DeviceError(f"{self.name}: memory budget must equal bram36 * {BRAM36_BITS} bits")

    @property
    def mem_budget_bits(self) -> int:
        return self.area.mem_bits

    @property
    def bandwidth_gbps(self) -> float:
        return self.bandwidth_bps / GBPS

    def scaled(self, *, mem: float | None = None, bandwidth: float | None = None) -> DeviceSpec:
        """Copy with the BRAM budget and/or bandwidth scaled by the given fractions."""
        dev = self
        if mem is not None:
            bram = max(0, round(self.area.bram36 * Fraction(str(mem))))
            dev = replace(dev, area=replace(self.area, bram36=bram, mem_bits=bram * BRAM36_BITS))
        if bandwidth is not None:
            dev = replace(dev, bandwidth_bps=max(1, round(self.bandwidth_bps * Fraction(str(bandwidth)))))
        return dev

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "bandwidth_gbps": _exact_float(Fraction(self.bandwidth_bps, GBPS)),
            "clk_comp_mhz": _exact_float(Fraction(self.clk_comp_hz, MHZ)),
            "clk_dma_mhz": _exact_float(Fraction(self.clk_dma_hz, MHZ)),
            "area": {
                "lut": self.area.lut,
                "ff": self.area.ff,
                "dsp": self.area.dsp,
                "bram36": self.area.bram36,
            },
        }


def _exact_float(x: Fraction) -> float | int:
    return int(x) if x.denominator == 1 else float(x)


def _to_int_units(value: float | int, scale: int) -> int:
    # decimal string keeps 153.6 * 1e9 exact
    return round(Fraction(str(value)) * scale)


DEVICE_SCHEMA = {
    "type": "object",
    "required": ["name", "bandwidth_gbps", "clk_comp_mhz", "clk_dma_mhz", "area"],
    "properties": {
        "name": {"type": "string"},
        "bandwidth_gbps": {"type": "number"},
        "clk_comp_mhz": {"type": "number"},
        "clk_dma_mhz": {"type": "number"},
        "area": {
            "type": "object",
            "required": ["lut", "ff", "dsp", "bram36"],
            "properties": {k: {"type": "integer"} for k in ("lut", "ff", "dsp", "bram36")},
            "additionalProperties": False,
        },
        "normative": {"type": "boolean"},
        "note": {"type": "string"},
    },
}


def _device_from_dict(data: Mapping[str, Any]) -> DeviceSpec:
    try:
        jsonschema.validate(data, DEVICE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise DeviceError(f"schema violation: {exc.message}") from None
    a = data["area"]
    if min(a.values()) < 0:
        raise DeviceError(f"{data['name']}: resource counts must be non-negative")
    for key in ("bandwidth_gbps", "clk_comp_mhz", "clk_dma_mhz"):
        if data[key] <= 0:
            raise DeviceError(f"{data['name']}: {key} must be positive")
    return DeviceSpec(
        name=data["name"],
        bandwidth_bps=_to_int_units(data["bandwidth_gbps"], GBPS),
        area=ResourceVector(a["lut"], a["ff"], a["dsp"], a["bram36"], a["bram36"] * BRAM36_BITS),
        clk_comp_hz=_to_int_units(data["clk_comp_mhz"], MHZ),
        clk_dma_hz=_to_int_units(data["clk_dma_mhz"], MHZ),
    )


def _presets() -> dict[str, dict[str, Any]]:
    text = resources.files("autows.data").joinpath("devices.json").read_text()
    return {d["name"]: d for d in json.loads(text)["devices"]}


def preset_names() -> list[str]:
    return sorted(_presets())


def parse_device(doc: bytes | str | Mapping[str, Any]) -> DeviceSpec:
    """Parse a device document, or resolve a bare preset name such as ``"zcu102"``."""
    if isinstance(doc, (bytes, str)):
        text = doc.decode() if isinstance(doc, bytes) else doc
        if not text.lstrip().startswith("{"):
            presets = _presets()
            key = text.strip().lower()
            if key not in presets:
                raise DeviceError(f"unknown device preset {text.strip()!r}; known: {sorted(presets)}")
            return _device_from_dict(presets[key])
    return _device_from_dict(_load_json(doc, DeviceError))


def load_network(ref: str | Path) -> NetworkGraph:
    """Load a network from a path or a shipped example name (``resnet18``...)."""
    path = Path(ref)
    if path.exists():
        return parse_network(path.read_bytes())
    shipped = resources.files("autows.data").joinpath("networks", f"{ref}.json")
    if shipped.is_file():
        return parse_network(shipped.read_text())
    raise NetworkError(f"no such network file or shipped network: {ref}")


def load_device(ref: str | Path) -> DeviceSpec:
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise DeviceError(f"no such device file: {ref}")
        return parse_device(path.read_bytes())
    return parse_device(str(ref))
