"""Declarative layer graph for the factorized inverted-residual CNN.

The same :class:`ModelGraph` drives the torch network used for training and
the analytic complexity profiler, so the two can never disagree about the
architecture.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .manifest import SCENES

KINDS = (
    "conv2d",
    "depthwise-conv2d",
    "pointwise-conv2d",
    "batchnorm",
    "activation",
    "residual-add",
    "avg-pool",
    "global-pool",
    "linear",
)
CONV_KINDS = ("conv2d", "depthwise-conv2d", "pointwise-conv2d")
CHECKPOINT_FORMAT = "ascbench-checkpoint"
CHECKPOINT_VERSION = 1


class GraphError(ValueError):
    """Invalid layer parameters or an unresolvable graph topology."""


def _pair(v: int | Sequence[int]) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_channels: int = 1
    out_channels: int = 1
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1
    bias: bool = False
    inputs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for attr in ("kernel", "stride", "padding"):
            object.__setattr__(self, attr, _pair(getattr(self, attr)))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind not in KINDS:
            raise GraphError(f"{self.name}: unknown layer kind {self.kind!r}")
        if "." in self.name or not self.name:
            raise GraphError(f"invalid layer name {self.name!r}")
        if min(self.in_channels, self.out_channels, self.groups, *self.kernel, *self.stride) < 1:
            raise GraphError(f"{self.name}: all dimensions must be >= 1")
        if min(self.padding) < 0:
            raise GraphError(f"{self.name}: padding must be >= 0")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise GraphError(f"{self.name}: groups={self.groups} must divide channels")
        if self.kind == "depthwise-conv2d" and not (self.groups == self.in_channels == self.out_channels):
            raise GraphError(f"{self.name}: depthwise conv needs groups == in_channels == out_channels")
        if self.kind == "pointwise-conv2d" and self.kernel != (1, 1):
            raise GraphError(f"{self.name}: pointwise conv needs a 1x1 kernel")
        if self.kind == "residual-add" and len(self.inputs) != 2:
            raise GraphError(f"{self.name}: residual-add joins exactly two inputs")

    @property
    def param_count(self) -> int:
        if self.kind in CONV_KINDS:
            w = self.out_channels * (self.in_channels // self.groups) * self.kernel[0] * self.kernel[1]
            return w + (self.out_channels if self.bias else 0)
        if self.kind == "batchnorm":
            return 2 * self.in_channels
        if self.kind == "linear":
            return self.in_channels * self.out_channels + (self.out_channels if self.bias else 0)
        return 0


Shape = tuple[int, ...]


@dataclass(frozen=True)
class ModelGraph:
    """Ordered layers; each consumes the previous layer's output unless ``inputs`` says otherwise.

    ``"input"`` names the network input.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: Shape = (1, 256, 63)
    n_classes: int = len(SCENES)
    config: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names) or "input" in names:
            raise GraphError("layer names must be unique and must not be 'input'")
        shapes = infer_shapes(self, self.input_shape)
        if self.layers and shapes[self.layers[-1].name] != (self.n_classes,):
            raise GraphError(
                f"graph output shape {shapes[self.layers[-1].name]} does not match n_classes={self.n_classes}"
            )

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers)

    def input_names(self, index: int) -> tuple[str, ...]:
        layer = self.layers[index]
        if layer.inputs:
            return layer.inputs
        return (self.layers[index - 1].name,) if index > 0 else ("input",)

    def then(self, other: ModelGraph) -> ModelGraph:
        """Sequential composition: feed this graph's output into ``other``."""
        mine = {l.name for l in self.layers}
        clash = mine & {l.name for l in other.layers}
        if clash:
            raise GraphError(f"cannot compose graphs with shared layer names {sorted(clash)}")
        last = self.layers[-1].name if self.layers else "input"
        rewired = []
        for i, layer in enumerate(other.layers):
            inputs = other.input_names(i)
            inputs = tuple(last if n == "input" else n for n in inputs)
            rewired.append(replace(layer, inputs=inputs))
        return ModelGraph(self.layers + tuple(rewired), self.input_shape, other.n_classes)


def _conv_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def layer_output_shape(layer: LayerSpec, in_shapes: Sequence[Shape]) -> Shape:
    x = in_shapes[0]
    if layer.kind == "residual-add":
        if in_shapes[0] != in_shapes[1]:
            raise GraphError(f"{layer.name}: residual join of mismatched shapes {in_shapes[0]} and {in_shapes[1]}")
        return x
    if layer.kind == "linear":
        if x != (layer.in_channels,):
            raise GraphError(f"{layer.name}: linear expects ({layer.in_channels},), got {x}")
        return (layer.out_channels,)
    if len(x) != 3:
        raise GraphError(f"{layer.name}: expected a (C, H, W) input, got {x}")
    c, h, w = x
    if layer.kind == "activation":
        return x
    if layer.kind == "global-pool":
        return (c,)
    if c != layer.in_channels:
        raise GraphError(f"{layer.name}: expects {layer.in_channels} input channels, got {c}")
    if layer.kind == "batchnorm":
        return x
    (kh, kw), (sh, sw), (ph, pw) = layer.kernel, layer.stride, layer.padding
    ho, wo = _conv_out(h, kh, sh, ph), _conv_out(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise GraphError(f"{layer.name}: input {x} too small for kernel {layer.kernel}")
    if layer.kind == "avg-pool":
        if layer.out_channels != c:
            raise GraphError(f"{layer.name}: pooling cannot change channel count")
        return (c, ho, wo)
    return (layer.out_channels, ho, wo)


def infer_shapes(graph: ModelGraph, input_shape: Shape) -> dict[str, Shape]:
    shapes: dict[str, Shape] = {"input": tuple(input_shape)}
    for i, layer in enumerate(graph.layers):
        srcs = graph.input_names(i)
        for s in srcs:
            if s not in shapes:
                raise GraphError(f"{layer.name}: input {s!r} is not an earlier layer")
        shapes[layer.name] = layer_output_shape(layer, [shapes[s] for s in srcs])
    return shapes


# ---------------------------------------------------------------- baseline


def make_divisible(v: float, divisor: int = 8, min_value: int | None = None) -> int:
    min_value = min_value or divisor
    new_v = max(min_value, int(v + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * v:
        new_v += divisor
    return new_v


@dataclass(frozen=True)
class BaselineConfig:
    n_classes: int = len(SCENES)
    in_channels: int = 1
    input_shape: tuple[int, int, int] = (1, 256, 63)
    base_channels: int = 32
    channels_multiplier: float = 1.8
    expansion_rate: float = 2.1
    blocks_per_stage: tuple[int, ...] = (3, 2, 1)
    # 1-based block index -> (freq stride, time stride); unlisted blocks use stride 1
    block_strides: dict[int, tuple[int, int]] = field(default_factory=lambda: {2: (1, 1), 3: (1, 2), 4: (2, 1)})
    # "auto": shortcut whenever channel counts match; "all": force one on every block
    residual: str = "auto"

    @classmethod
    def from_dict(cls, d: dict) -> BaselineConfig:
        d = dict(d)
        if "block_strides" in d:
            d["block_strides"] = {int(k): tuple(v) for k, v in d["block_strides"].items()}
        for key in ("input_shape", "blocks_per_stage"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_strides"] = {str(k): list(v) for k, v in self.block_strides.items()}
        return d

    def scaled(self, width: float) -> BaselineConfig:
        return replace(self, base_channels=int(round(self.base_channels * width)))


def _conv_bn_act(name: str, cin: int, cout: int, stride: tuple[int, int]) -> list[LayerSpec]:
    return [
        LayerSpec(f"{name}_conv", "conv2d", cin, cout, kernel=3, stride=stride, padding=1),
        LayerSpec(f"{name}_bn", "batchnorm", cout, cout),
        LayerSpec(f"{name}_act", "activation", cout, cout),
    ]


def _block(name: str, cin: int, cout: int, expansion: float, stride: tuple[int, int], residual: str) -> list[LayerSpec]:
    hidden = make_divisible(cin * expansion, 8)
    layers = [
        LayerSpec(f"{name}_expand", "pointwise-conv2d", cin, hidden),
        LayerSpec(f"{name}_expand_bn", "batchnorm", hidden, hidden),
        LayerSpec(f"{name}_expand_act", "activation", hidden, hidden),
        LayerSpec(f"{name}_dw", "depthwise-conv2d", hidden, hidden, kernel=3, stride=stride, padding=1, groups=hidden),
        LayerSpec(f"{name}_dw_bn", "batchnorm", hidden, hidden),
        LayerSpec(f"{name}_dw_act", "activation", hidden, hidden),
        LayerSpec(f"{name}_project", "pointwise-conv2d", hidden, cout),
        LayerSpec(f"{name}_project_bn", "batchnorm", cout, cout),
    ]
    use_shortcut = residual == "all" or cin == cout
    if use_shortcut:
        shortcut = "{entry}"
        if stride != (1, 1):
            layers.append(
                LayerSpec(f"{name}_shortcut_pool", "avg-pool", cin, cin, kernel=3, stride=stride, padding=1, inputs=("{entry}",))
            )
            shortcut = f"{name}_shortcut_pool"
        layers.append(LayerSpec(f"{name}_add", "residual-add", cout, cout, inputs=(f"{name}_project_bn", shortcut)))
    layers.append(LayerSpec(f"{name}_act", "activation", cout, cout))
    return layers


def build_baseline(cfg: BaselineConfig = BaselineConfig()) -> ModelGraph:
    """Strided conv stem, three stages of inverted-residual blocks, then a
    pointwise classifier head with batchnorm and global average pooling.

    The default configuration has 61,148 parameters.
    """
    if cfg.residual not in ("auto", "all"):
        raise GraphError(f"residual must be 'auto' or 'all', got {cfg.residual!r}")
    base = cfg.base_channels
    layers = _conv_bn_act("stem1", cfg.in_channels, make_divisible(base / 4, 8), (2, 2))
    layers += _conv_bn_act("stem2", make_divisible(base / 4, 8), base, (2, 2))

    channels = base
    block_no = 0
    for stage, n_blocks in enumerate(cfg.blocks_per_stage):
        stage_channels = make_divisible(base * cfg.channels_multiplier**stage, 8)
        for _ in range(n_blocks):
            block_no += 1
            entry = layers[-1].name
            stride = tuple(cfg.block_strides.get(block_no, (1, 1)))
            block = _block(f"b{block_no}", channels, stage_channels, cfg.expansion_rate, stride, cfg.residual)
            for layer in block:
                if "{entry}" in layer.inputs:
                    layer = replace(layer, inputs=tuple(entry if n == "{entry}" else n for n in layer.inputs))
                layers.append(layer)
            channels = stage_channels

    layers += [
        LayerSpec("head_conv", "pointwise-conv2d", channels, cfg.n_classes),
        LayerSpec("head_bn", "batchnorm", cfg.n_classes, cfg.n_classes),
        LayerSpec("pool", "global-pool", cfg.n_classes, cfg.n_classes),
    ]
    # dataclasses.replace above re-runs validation, so every layer is checked
    return ModelGraph(tuple(layers), cfg.input_shape, cfg.n_classes, config=cfg.to_dict())


# ---------------------------------------------------------------- torch


def _torch_layer(spec: LayerSpec) -> nn.Module:
    if spec.kind in CONV_KINDS:
        return nn.Conv2d(
            spec.in_channels,
            spec.out_channels,
            spec.kernel,
            stride=spec.stride,
            padding=spec.padding,
            groups=spec.groups,
            bias=spec.bias,
        )
    if spec.kind == "batchnorm":
        return nn.BatchNorm2d(spec.in_channels)
    if spec.kind == "activation":
        return nn.ReLU()
    if spec.kind == "avg-pool":
        return nn.AvgPool2d(spec.kernel, spec.stride, spec.padding)
    if spec.kind == "linear":
        return nn.Linear(spec.in_channels, spec.out_channels, bias=spec.bias)
    return nn.Identity()


class GraphNet(nn.Module):
    """Executes a :class:`ModelGraph`.

    Inputs are (B, 1, F, T) or (B, F, T) log-mels; ``feat_mean``/``feat_std``
    buffers hold the global input normalization. ``precision`` tags how
    parameters are stored (32 or 16 bits); 16-bit parameters are upcast for the
    arithmetic.
    """

    def __init__(self, graph: ModelGraph):
        super().__init__()
        self.graph = graph
        self.precision = 32
        self.layers = nn.ModuleDict({spec.name: _torch_layer(spec) for spec in graph.layers})
        self.register_buffer("feat_mean", torch.zeros(()))
        self.register_buffer("feat_std", torch.ones(()))
        self._sources = [graph.input_names(i) for i in range(len(graph.layers))]

    def reset_parameters(self, seed: int) -> GraphNet:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.layers.values():
                if isinstance(module, nn.Conv2d):
                    fan_out = module.out_channels * module.kernel_size[0] * module.kernel_size[1] // module.groups
                    module.weight.normal_(0.0, (2.0 / fan_out) ** 0.5, generator=gen)
                    if module.bias is not None:
                        module.bias.zero_()
                elif isinstance(module, nn.BatchNorm2d):
                    module.reset_running_stats()
                    module.weight.fill_(1.0)
                    module.bias.zero_()
                elif isinstance(module, nn.Linear):
                    module.weight.normal_(0.0, 0.01, generator=gen)
                    if module.bias is not None:
                        module.bias.zero_()
        return self

    def set_normalization(self, mean: float, std: float) -> None:
        self.feat_mean.fill_(mean)
        self.feat_std.fill_(std)

    def _run(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(1)
        expected = self.graph.input_shape
        if tuple(x.shape[1:]) != tuple(expected):
            raise GraphError(f"input shape {tuple(x.shape[1:])} does not match model input {tuple(expected)}")
        x = (x - self.feat_mean.to(x.dtype)) / self.feat_std.to(x.dtype)
        outputs = {"input": x}
        for spec, srcs in zip(self.graph.layers, self._sources):
            if spec.kind == "residual-add":
                y = outputs[srcs[0]] + outputs[srcs[1]]
            elif spec.kind == "global-pool":
                y = outputs[srcs[0]].mean(dim=(2, 3))
            else:
                y = self.layers[spec.name](outputs[srcs[0]])
            outputs[spec.name] = y
        return outputs[self.graph.layers[-1].name] if self.graph.layers else x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.feat_std.dtype == torch.float16:
            # 16-bit storage: rerun with upcast copies of every tensor
            state = {k: (v.float() if v.is_floating_point() else v) for k, v in self.state_dict().items()}
            return torch.func.functional_call(self, state, (x.float(),))
        return self._run(x)


def init_model(graph: ModelGraph, seed: int = 0) -> GraphNet:
    return GraphNet(graph).reset_parameters(seed)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def cast_fp16(net: GraphNet) -> GraphNet:
    """Copy of ``net`` with every parameter and buffer stored at 16-bit precision."""
    out = copy.deepcopy(net)
    out.half()
    out.precision = 16
    return out


def save_checkpoint(net: GraphNet, path: str | Path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": dict(net.graph.config),
        "layers": [asdict(layer) for layer in net.graph.layers],
        "input_shape": list(net.graph.input_shape),
        "n_classes": net.graph.n_classes,
        "precision": net.precision,
        "state_dict": {k: v.detach().clone() for k, v in net.state_dict().items()},
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[GraphNet, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if payload["config"]:
        graph = build_baseline(BaselineConfig.from_dict(payload["config"]))
    else:
        graph = ModelGraph(
            tuple(LayerSpec(**layer) for layer in payload["layers"]),
            tuple(payload["input_shape"]),
            payload["n_classes"],
        )
    net = GraphNet(graph)
    if payload["precision"] == 16:
        net.half()
        net.precision = 16
    net.load_state_dict(payload["state_dict"])
    net.eval()
    return net, payload.get("extra", {})
