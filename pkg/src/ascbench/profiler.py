"""Analytic MAC and parameter-memory accounting against the 128 kB / 30 MMAC budget.

Counting policy: convolutions and linear layers cost one MAC per weight use;
batchnorm, activations, pooling and residual additions cost zero MACs.
Batchnorm scale/shift parameters count toward memory (unfolded). kB means
1000 bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from torch import nn

from .model import CONV_KINDS, GraphNet, ModelGraph, Shape, infer_shapes

MAX_PARAM_BYTES = 128_000
MAX_MACS = 30_000_000
SUPPORTED_PRECISIONS = (8, 16, 32)

# MAC cost of layer kinds outside the conv/linear families; edit to change policy.
ZERO_MAC_KINDS = frozenset({"batchnorm", "activation", "residual-add", "avg-pool", "global-pool"})


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    params: int
    macs: int
    output_shape: tuple[int, ...]


@dataclass
class ComplexityReport:
    layers: list[LayerRow] = field(default_factory=list)
    precision: int = 32
    max_param_bytes: int = MAX_PARAM_BYTES
    max_macs: int = MAX_MACS

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.layers)

    @property
    def param_bytes(self) -> int:
        return param_memory(self.total_params, self.precision)

    @property
    def memory_ok(self) -> bool:
        return self.param_bytes <= self.max_param_bytes

    @property
    def macs_ok(self) -> bool:
        return self.total_macs <= self.max_macs

    @property
    def passed(self) -> bool:
        return self.memory_ok and self.macs_ok

    def to_dict(self) -> dict:
        return {
            "layers": [asdict(r) | {"output_shape": list(r.output_shape)} for r in self.layers],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "precision_bits": self.precision,
            "param_bytes": self.param_bytes,
            "memory_ok": self.memory_ok,
            "macs_ok": self.macs_ok,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'layer':<24} {'kind':<18} {'params':>8} {'MACs':>12}  output"]
        for r in self.layers:
            shape = "x".join(str(d) for d in r.output_shape)
            lines.append(f"{r.name:<24} {r.kind:<18} {r.params:>8} {r.macs:>12}  {shape}")
        lines.append("-" * 72)
        lines.append(f"{'total':<43} {self.total_params:>8} {self.total_macs:>12}")
        lines.append(
            f"parameter memory: {self.param_bytes} B at {self.precision}-bit "
            f"(limit {self.max_param_bytes} B) -> {'OK' if self.memory_ok else 'EXCEEDED'}"
        )
        lines.append(
            f"MACs: {self.total_macs / 1e6:.3f} M (limit {self.max_macs / 1e6:.0f} M) "
            f"-> {'OK' if self.macs_ok else 'EXCEEDED'}"
        )
        return "\n".join(lines)


def _graph_of(model: ModelGraph | GraphNet) -> ModelGraph:
    return model.graph if isinstance(model, GraphNet) else model


def count_macs(model: ModelGraph | GraphNet, input_shape: Shape | None = None) -> list[LayerRow]:
    graph = _graph_of(model)
    shapes = infer_shapes(graph, tuple(input_shape or graph.input_shape))
    rows = []
    for layer in graph.layers:
        out = shapes[layer.name]
        if layer.kind in CONV_KINDS:
            _, h, w = out
            kh, kw = layer.kernel
            macs = (layer.in_channels // layer.groups) * layer.out_channels * kh * kw * h * w
        elif layer.kind == "linear":
            macs = layer.in_channels * layer.out_channels
        elif layer.kind in ZERO_MAC_KINDS:
            macs = 0
        else:
            raise ValueError(f"no MAC rule for layer kind {layer.kind!r}")
        rows.append(LayerRow(layer.name, layer.kind, layer.param_count, macs, tuple(out)))
    return rows


def param_memory(model: ModelGraph | nn.Module | int, precision: int) -> int:
    """Bytes needed to store the parameters at ``precision`` bits each."""
    if precision not in SUPPORTED_PRECISIONS:
        raise ValueError(f"unsupported precision {precision} bit (choose from {SUPPORTED_PRECISIONS})")
    if isinstance(model, int):
        n = model
    elif isinstance(model, ModelGraph):
        n = model.param_count
    else:
        n = sum(p.numel() for p in model.parameters())
    return n * precision // 8


def check_limits(
    model: ModelGraph | GraphNet,
    input_shape: Shape | None = None,
    precision: int | None = None,
    max_param_bytes: int = MAX_PARAM_BYTES,
    max_macs: int = MAX_MACS,
) -> ComplexityReport:
    """Profile ``model``; precision defaults to the network's storage precision (32 for bare graphs)."""
    if precision is None:
        precision = model.precision if isinstance(model, GraphNet) else 32
    if precision not in SUPPORTED_PRECISIONS:
        raise ValueError(f"unsupported precision {precision}")
    graph = _graph_of(model)
    rows = count_macs(graph, input_shape) if graph.layers else []
    return ComplexityReport(rows, precision, max_param_bytes, max_macs)
