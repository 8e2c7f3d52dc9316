"""Architecture description: hyper-parameters -> layer plan -> parameter report.

A network is 3 (or 4 with ``add_layer``) macro-layers followed by a
classifier head. Macro-layer ``i`` holds ``nl_i`` stages of 3x3 conv + ReLU
over ``f_i`` filters, a 4x4/stride-2 max-pool and one batch-norm. Filter
counts grow by iterated floor: ``f_0 = width``, ``f_{i+1} = floor(k * f_i)``.
Only the first two macro-layers take their depth from ``nl``; the rest use 1.
"""
import csv
import io
import math
from dataclasses import asdict, dataclass, field
from decimal import Decimal

from . import kernels
from .errors import ConfigError

MIN_INPUT_SIZE = 8
BN_AFTER_POOL = "after_pool"
BN_BEFORE_POOL = "before_pool"


@dataclass(frozen=True)
class HyperParams:
    input_shape: tuple  # (h, w, c)
    num_classes: int
    k: float = 2.0
    width: int = 20
    nl: tuple = (2, 2)
    separ: bool = False
    flat: bool = True
    add_layer: bool = False
    bn_position: str = BN_AFTER_POOL

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "nl", tuple(int(v) for v in self.nl))
        for name in ("separ", "flat", "add_layer"):
            object.__setattr__(self, name, bool(getattr(self, name)))

    def validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (h, w, c) with positive entries, got {self.input_shape}")
        h, w, _ = self.input_shape
        if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
            raise ConfigError(f"input images must be at least {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}, got {h}x{w}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.k > 0:
            raise ConfigError(f"expansion factor k must be > 0, got {self.k}")
        if self.width < 1:
            raise ConfigError(f"width must be >= 1, got {self.width}")
        if len(self.nl) != 2 or min(self.nl) < 1:
            raise ConfigError(f"nl must be a pair of depths >= 1, got {self.nl}")
        if self.bn_position not in (BN_AFTER_POOL, BN_BEFORE_POOL):
            raise ConfigError(f"bn_position must be {BN_AFTER_POOL!r} or {BN_BEFORE_POOL!r}")

    @property
    def num_macro_layers(self):
        return 4 if self.add_layer else 3

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["nl"] = list(self.nl)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def expand_filters(f, k):
    """floor(k * f) in exact decimal arithmetic (2.3 * 100 is 230, not 229)."""
    return math.floor(Decimal(repr(float(k))) * f)


def filter_schedule(width, k, count):
    filters = [int(width)]
    for _ in range(count - 1):
        filters.append(expand_filters(filters[-1], k))
    return filters


def receptive_field(nl):
    """Side of the input window seen by one output of an ``nl``-deep 3x3 cascade."""
    if nl < 1:
        raise ConfigError(f"nl must be >= 1, got {nl}")
    return 3 + 2 * (nl - 1)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | sepconv | relu | maxpool | batchnorm | flatten | gap | dense | softmax
    in_shape: tuple  # (h, w, c) or (f,)
    out_shape: tuple

    @property
    def c_in(self):
        return self.in_shape[-1]

    @property
    def c_out(self):
        return self.out_shape[-1]


@dataclass(frozen=True)
class MacroLayer:
    filters: int
    conv_count: int
    conv_kind: str  # conv | sepconv


@dataclass(frozen=True)
class ModelPlan:
    hp: HyperParams
    macro_layers: tuple
    layers: tuple = field(repr=False)

    @property
    def filters(self):
        return tuple(m.filters for m in self.macro_layers)

    @property
    def conv_counts(self):
        return tuple(m.conv_count for m in self.macro_layers)

    @property
    def head(self):
        return "flatten" if self.hp.flat else "gap"


def build_plan(hp: HyperParams) -> ModelPlan:
    hp.validate()
    count = hp.num_macro_layers
    filters = filter_schedule(hp.width, hp.k, count)
    depths = [hp.nl[0], hp.nl[1]] + [1] * (count - 2)
    conv_kind = "sepconv" if hp.separ else "conv"

    layers = []
    macros = []
    shape = hp.input_shape
    for i, (f, depth) in enumerate(zip(filters, depths)):
        if f < 1:
            raise ConfigError(
                f"macro-layer {i} resolves to {f} filters (width={hp.width}, k={hp.k}); need >= 1"
            )
        h, w, _ = shape
        macros.append(MacroLayer(f, depth, conv_kind))
        for j in range(depth):
            out = (h, w, f)
            layers.append(LayerSpec(f"m{i}_{conv_kind}{j}", conv_kind, shape, out))
            layers.append(LayerSpec(f"m{i}_relu{j}", "relu", out, out))
            shape = out
        (oh, _), (ow, _) = kernels.pool_geometry(h), kernels.pool_geometry(w)
        if oh < 1 or ow < 1:
            raise ConfigError(f"macro-layer {i} collapses the spatial size below 1x1")
        pooled = (oh, ow, f)
        pool = LayerSpec(f"m{i}_pool", "maxpool", shape, pooled)
        if hp.bn_position == BN_AFTER_POOL:
            layers += [pool, LayerSpec(f"m{i}_bn", "batchnorm", pooled, pooled)]
        else:
            layers += [LayerSpec(f"m{i}_bn", "batchnorm", shape, shape), pool]
        shape = pooled

    if hp.flat:
        feat = (shape[0] * shape[1] * shape[2],)
        layers.append(LayerSpec("flatten", "flatten", shape, feat))
    else:
        feat = (shape[2],)
        layers.append(LayerSpec("gap", "gap", shape, feat))
    logits = (hp.num_classes,)
    layers.append(LayerSpec("dense", "dense", feat, logits))
    layers.append(LayerSpec("softmax", "softmax", logits, logits))
    return ModelPlan(hp, tuple(macros), tuple(layers))


def layer_params(spec: LayerSpec):
    """``(trainable, non_trainable)`` scalar counts of one layer."""
    if spec.kind == "conv":
        return (9 * spec.c_in + 1) * spec.c_out, 0
    if spec.kind == "sepconv":
        return 9 * spec.c_in + spec.c_in * spec.c_out + spec.c_out, 0
    if spec.kind == "batchnorm":
        return 2 * spec.c_out, 2 * spec.c_out
    if spec.kind == "dense":
        return (spec.in_shape[0] + 1) * spec.out_shape[0], 0
    return 0, 0


def layer_macs(spec: LayerSpec):
    if spec.kind == "conv":
        h, w, _ = spec.out_shape
        return h * w * 9 * spec.c_in * spec.c_out
    if spec.kind == "sepconv":
        h, w, _ = spec.out_shape
        return h * w * (9 * spec.c_in + spec.c_in * spec.c_out)
    if spec.kind == "dense":
        return spec.in_shape[0] * spec.out_shape[0]
    return 0


def estimate_macs(plan: ModelPlan, input_shape=None):
    """Multiply-accumulates for one sample's forward pass (convs and dense only)."""
    if input_shape is not None and tuple(input_shape) != plan.hp.input_shape:
        plan = build_plan(HyperParams(**{**plan.hp.to_dict(), "input_shape": tuple(input_shape)}))
    return sum(layer_macs(s) for s in plan.layers)


@dataclass(frozen=True)
class ParamRow:
    layer: str
    kind: str
    out_shape: tuple
    params: int
    trainable: int


@dataclass(frozen=True)
class ParamReport:
    rows: tuple
    trainable: int
    non_trainable: int
    total: int
    macs: int
    receptive_fields: tuple

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "out_shape", "params"])
        for r in self.rows:
            writer.writerow([r.layer, r.kind, "x".join(map(str, r.out_shape)), r.params])
        return buf.getvalue()

    def to_text(self):
        shapes = ["x".join(map(str, r.out_shape)) for r in self.rows]
        wl = max(len("layer"), *(len(r.layer) for r in self.rows))
        wk = max(len("kind"), *(len(r.kind) for r in self.rows))
        ws = max(len("out_shape"), *(len(s) for s in shapes))
        wp = max(len("params"), len(f"{self.total:,}"))
        lines = [f"{'layer':<{wl}}  {'kind':<{wk}}  {'out_shape':<{ws}}  {'params':>{wp}}"]
        lines.append("-" * len(lines[0]))
        for r, s in zip(self.rows, shapes):
            lines.append(f"{r.layer:<{wl}}  {r.kind:<{wk}}  {s:<{ws}}  {r.params:>{wp},}")
        lines.append("-" * len(lines[0]))
        lines.append(f"trainable params:      {self.trainable:,}")
        lines.append(f"non-trainable params:  {self.non_trainable:,}")
        lines.append(f"total params:          {self.total:,}")
        lines.append(f"MACs per sample:       {self.macs:,}")
        rf = ", ".join(f"m{i}={r}x{r}" for i, r in enumerate(self.receptive_fields))
        lines.append(f"receptive fields:      {rf}")
        return "\n".join(lines) + "\n"


def count_params(plan: ModelPlan) -> ParamReport:
    rows = []
    trainable = non_trainable = 0
    for spec in plan.layers:
        t, nt = layer_params(spec)
        trainable += t
        non_trainable += nt
        rows.append(ParamRow(spec.name, spec.kind, spec.out_shape, t + nt, t))
    return ParamReport(
        rows=tuple(rows),
        trainable=trainable,
        non_trainable=non_trainable,
        total=trainable + non_trainable,
        macs=estimate_macs(plan),
        receptive_fields=tuple(receptive_field(m.conv_count) for m in plan.macro_layers),
    )
