"""Regenerate the shipped example networks under src/autows/data/networks."""

from __future__ import annotations

import json
from pathlib import Path

from autows.netdev import conv_out_dim, parse_network

OUT = Path(__file__).resolve().parents[1] / "src" / "autows" / "data" / "networks"


class Builder:
    def __init__(self, name: str, w_bits: int, a_bits: int) -> None:
        self.name = name
        self.w_bits, self.a_bits = w_bits, a_bits
        self.layers: list[dict] = []
        self.edges: list[list[int]] = []

    def _add(self, inputs: list[int], **fields) -> int:
        lid = len(self.layers)
        self.layers.append({"id": lid, **fields})
        self.edges.extend([src, lid] for src in inputs)
        return lid

    def shape(self, lid: int) -> tuple[int, int, int]:
        layer = self.layers[lid]
        if layer["op"] in ("conv", "pool"):
            h = conv_out_dim(layer["h"], layer.get("k", 1), layer.get("stride", 1), layer.get("pad", 0))
            w = conv_out_dim(layer["w"], layer.get("k", 1), layer.get("stride", 1), layer.get("pad", 0))
            return layer["f"], h, w
        return layer["f"], layer["h"], layer["w"]

    def conv(self, src, f, k, stride=1, pad=0, groups=1, name="", shape=None, bits=None):
        c, h, w = shape if shape else self.shape(src)
        w_bits, a_bits = bits or (self.w_bits, self.a_bits)
        extra = {"groups": groups} if groups != 1 else {}
        return self._add(
            [] if src is None else [src], op="conv", name=name, c=c, h=h, w=w, k=k, f=f,
            stride=stride, pad=pad, w_bits=w_bits, a_bits=a_bits, **extra,
        )

    def pool(self, src, k, stride, pad=0, name=""):
        c, h, w = self.shape(src)
        return self._add([src], op="pool", name=name, c=c, h=h, w=w, k=k, f=c,
                         stride=stride, pad=pad, a_bits=self.a_bits)

    def add(self, a, b, name=""):
        c, h, w = self.shape(a)
        return self._add([a, b], op="eltwise_add", name=name, c=c, h=h, w=w, f=c, a_bits=self.a_bits)

    def fc(self, src, f, name="", bits=None):
        c, h, w = self.shape(src)
        w_bits, a_bits = bits or (self.w_bits, self.a_bits)
        return self._add([src], op="fc", name=name, c=c * h * w, h=1, w=1, f=f,
                         w_bits=w_bits, a_bits=a_bits)

    def doc(self) -> dict:
        return {"name": self.name, "layers": self.layers, "edges": self.edges}


def resnet18() -> dict:
    # 4-bit weights / 5-bit activations, 8-bit first layer
    g = Builder("resnet18", 4, 5)
    x = g.conv(None, 64, 7, 2, 3, name="conv1", shape=(3, 224, 224), bits=(8, 8))
    x = g.pool(x, 3, 2, 1, name="maxpool")
    channels = 64
    for stage, width in enumerate((64, 128, 256, 512), start=1):
        for block in range(2):
            stride = 2 if stage > 1 and block == 0 else 1
            tag = f"layer{stage}.{block}"
            a = g.conv(x, width, 3, stride, 1, name=f"{tag}.conv1")
            skip = x
            if stride != 1 or channels != width:
                skip = g.conv(x, width, 1, stride, 0, name=f"{tag}.downsample")
            b = g.conv(a, width, 3, 1, 1, name=f"{tag}.conv2")
            x = g.add(b, skip, name=f"{tag}.add")
            channels = width
    x = g.pool(x, 7, 1, name="avgpool")
    g.fc(x, 1000, name="fc")
    return g.doc()


def mobilenetv2() -> dict:
    g = Builder("mobilenetv2", 4, 4)
    x = g.conv(None, 32, 3, 2, 1, name="conv0", shape=(3, 224, 224), bits=(8, 8))
    channels = 32
    settings = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    idx = 0
    for t, width, repeats, first_stride in settings:
        for i in range(repeats):
            stride = first_stride if i == 0 else 1
            tag = f"block{idx}"
            inp = x
            hidden = channels * t
            y = x
            if t != 1:
                y = g.conv(y, hidden, 1, name=f"{tag}.expand")
            y = g.conv(y, hidden, 3, stride, 1, groups=hidden, name=f"{tag}.dw")
            y = g.conv(y, width, 1, name=f"{tag}.project")
            if stride == 1 and channels == width:
                y = g.add(y, inp, name=f"{tag}.add")
            x, channels = y, width
            idx += 1
    x = g.conv(x, 1280, 1, name="conv_last")
    x = g.pool(x, 7, 1, name="avgpool")
    g.fc(x, 1000, name="fc")
    return g.doc()


def toy3() -> dict:
    g = Builder("toy3", 8, 8)
    x = g.conv(None, 4, 3, 1, 1, name="conv_a", shape=(2, 6, 6))
    x = g.conv(x, 4, 3, 2, 1, name="conv_b")
    g.fc(x, 4, name="fc")
    return g.doc()


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for make in (resnet18, mobilenetv2, toy3):
        doc = make()
        net = parse_network(doc)
        (OUT / f"{net.name}.json").write_text(net.serialize() + "\n")
        print(f"{net.name}: {len(net.layers)} layers, {len(net.weighted_layers)} weighted")


if __name__ == "__main__":
    main()
