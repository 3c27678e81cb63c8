"""Tensor shapes, primitive operators and inverted-bottleneck (IBN) blocks.

Blocks lower to small primitive graphs whose parameter, MAC and byte counts are
exact integers. Accounting is inference-oriented: no bias terms, batch-norm
folded into the conv weights, activations are zero-cost markers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence, Union

from . import strict_json
from .errors import SchemaError, ValidationError

GRAPH_INPUT = -1


class OpKind(str, Enum):
    CONV2D = "Conv2d"
    DEPTHWISE = "DepthwiseConv2d"
    GROUP_CONV = "GroupConv2d"
    POINTWISE = "Pointwise"
    SLICE = "SliceChannels"
    CONCAT = "ConcatChannels"
    ADD = "ResidualAdd"

    @property
    def is_conv(self):
        return self in _CONV_KINDS


_CONV_KINDS = {OpKind.CONV2D, OpKind.DEPTHWISE, OpKind.GROUP_CONV, OpKind.POINTWISE}


class IbnVariant(str, Enum):
    """IBN block flavours.

    DepthwiseIbn: pointwise expand, k x k depthwise, pointwise project.
    FusedIbn: k x k full conv doing the expansion, pointwise project.
    GeneralizedGcIbn: pointwise expand by ``n``, k x k group conv expanding by
        ``p``, pointwise project (``n * p == m``).
    GcIbn: k x k group conv doing the whole expansion, pointwise project.

    The dual of GcIbn (projection fused into the group conv) is deliberately
    not representable.
    """

    DEPTHWISE_IBN = "DepthwiseIbn"
    FUSED_IBN = "FusedIbn"
    GENERALIZED_GC_IBN = "GeneralizedGcIbn"
    GC_IBN = "GcIbn"

    @property
    def uses_group_conv(self):
        return self in (IbnVariant.GENERALIZED_GC_IBN, IbnVariant.GC_IBN)


@dataclass(frozen=True)
class TensorShape:
    h: int
    w: int
    c: int

    def __post_init__(self):
        for name in ("h", "w", "c"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(f"TensorShape.{name} must be a positive integer, got {v!r}")

    @property
    def numel(self):
        return self.h * self.w * self.c

    def with_channels(self, c):
        return TensorShape(self.h, self.w, c)

    def as_list(self):
        return [self.h, self.w, self.c]


def conv_output_shape(in_shape: TensorShape, k: int, stride: int, out_c: Optional[int] = None) -> TensorShape:
    """Output shape under "same" padding: spatial dims are ceil(in / stride)."""
    if isinstance(k, bool) or not isinstance(k, int) or k < 1 or k % 2 == 0:
        raise ValidationError(f"kernel size must be an odd positive integer, got {k!r}")
    if stride not in (1, 2):
        raise ValidationError(f"stride must be 1 or 2, got {stride!r}")
    return TensorShape(
        -(-in_shape.h // stride),
        -(-in_shape.w // stride),
        in_shape.c if out_c is None else out_c,
    )


@dataclass(frozen=True)
class PrimitiveOp:
    kind: OpKind
    in_shape: TensorShape
    out_shape: TensorShape
    k: int = 1
    stride: int = 1
    groups: int = 1
    slice_range: Optional[tuple] = None
    # ConcatChannels only: channel count of each input, in order.
    parts: Optional[tuple] = None
    activation: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        kind = self.kind
        if kind.is_conv:
            expect = conv_output_shape(self.in_shape, self.k, self.stride, self.out_shape.c)
            if expect != self.out_shape:
                raise ValidationError(f"{kind.value}: out shape {self.out_shape} != {expect}")
            if kind is OpKind.POINTWISE and self.k != 1:
                raise ValidationError("Pointwise requires k=1")
            if kind is OpKind.DEPTHWISE:
                if self.in_shape.c != self.out_shape.c:
                    raise ValidationError("DepthwiseConv2d requires in_c == out_c")
                object.__setattr__(self, "groups", self.in_shape.c)
            elif kind is OpKind.GROUP_CONV:
                g = self.groups
                if g < 1 or self.in_shape.c % g or self.out_shape.c % g:
                    raise ValidationError(
                        f"GroupConv2d: g={g} must divide in_c={self.in_shape.c} and out_c={self.out_shape.c}"
                    )
            elif self.groups != 1:
                raise ValidationError(f"{kind.value} takes no groups")
            return
        if self.k != 1 or self.stride != 1:
            raise ValidationError(f"{kind.value} has no kernel or stride")
        if kind is OpKind.SLICE:
            if self.slice_range is None:
                raise ValidationError("SliceChannels needs a slice range")
            start, stop = self.slice_range
            if not 0 <= start < stop <= self.in_shape.c:
                raise ValidationError(f"slice [{start}, {stop}) outside 0..{self.in_shape.c}")
            if self.out_shape != self.in_shape.with_channels(stop - start):
                raise ValidationError("SliceChannels out shape mismatch")
        elif kind is OpKind.CONCAT:
            if not self.parts or sum(self.parts) != self.out_shape.c:
                raise ValidationError("ConcatChannels: output c must equal the sum of input c")
            if self.in_shape != self.out_shape:
                raise ValidationError("ConcatChannels: in_shape carries the concatenated shape")
        elif kind is OpKind.ADD:
            if self.in_shape != self.out_shape:
                raise ValidationError("ResidualAdd operands and output must share a shape")

    @property
    def n_inputs(self):
        if self.kind is OpKind.ADD:
            return 2
        if self.kind is OpKind.CONCAT:
            return len(self.parts)
        return 1

    def input_shapes(self):
        """Shapes expected on each input edge."""
        if self.kind is OpKind.CONCAT:
            return [self.in_shape.with_channels(c) for c in self.parts]
        return [self.in_shape] * self.n_inputs


# -- op constructors ---------------------------------------------------------


def conv2d(in_shape, out_c, k, stride=1, activation=None):
    kind = OpKind.POINTWISE if k == 1 else OpKind.CONV2D
    return PrimitiveOp(kind, in_shape, conv_output_shape(in_shape, k, stride, out_c), k, stride,
                       activation=activation)


def pointwise(in_shape, out_c, stride=1, activation=None):
    return PrimitiveOp(OpKind.POINTWISE, in_shape, conv_output_shape(in_shape, 1, stride, out_c), 1, stride,
                       activation=activation)


def depthwise(in_shape, k, stride=1, activation=None):
    return PrimitiveOp(OpKind.DEPTHWISE, in_shape, conv_output_shape(in_shape, k, stride), k, stride,
                       groups=in_shape.c, activation=activation)


def group_conv(in_shape, out_c, k, stride, g, activation=None):
    return PrimitiveOp(OpKind.GROUP_CONV, in_shape, conv_output_shape(in_shape, k, stride, out_c), k, stride,
                       groups=g, activation=activation)


def kxk_conv(in_shape, out_c, k, stride, g, activation=None):
    """Group conv with the degenerate cases normalised: g=1 is a full conv and
    g = in_c = out_c is a depthwise conv."""
    if g == 1:
        return conv2d(in_shape, out_c, k, stride, activation)
    if g == in_shape.c == out_c:
        return depthwise(in_shape, k, stride, activation)
    return group_conv(in_shape, out_c, k, stride, g, activation)


def slice_channels(in_shape, start, stop):
    return PrimitiveOp(OpKind.SLICE, in_shape, in_shape.with_channels(stop - start), slice_range=(start, stop))


def concat_channels(shapes: Sequence[TensorShape]):
    h, w = shapes[0].h, shapes[0].w
    if any((s.h, s.w) != (h, w) for s in shapes):
        raise ValidationError("ConcatChannels inputs must agree on h, w")
    out = TensorShape(h, w, sum(s.c for s in shapes))
    return PrimitiveOp(OpKind.CONCAT, out, out, parts=tuple(s.c for s in shapes))


def residual_add(shape):
    return PrimitiveOp(OpKind.ADD, shape, shape)


# -- counting ----------------------------------------------------------------


def count_params(op: PrimitiveOp) -> int:
    """Weights of a conv op, k^2 * (c_in / g) * c_out; zero for data movement."""
    if not op.kind.is_conv:
        return 0
    g = op.groups
    c_in, c_out = op.in_shape.c, op.out_shape.c
    if c_in % g or c_out % g:
        raise ValidationError(f"groups={g} must divide {c_in} and {c_out}")
    return op.k * op.k * (c_in // g) * (c_out // g) * g


def count_macs(op: PrimitiveOp) -> int:
    return op.out_shape.h * op.out_shape.w * count_params(op)


def count_act_bytes(op: PrimitiveOp, bytes_per_elem: int = 1) -> tuple:
    if bytes_per_elem < 1:
        raise ValidationError("bytes_per_elem must be >= 1")
    return op.in_shape.numel * bytes_per_elem, op.out_shape.numel * bytes_per_elem


# -- graphs ------------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    op: PrimitiveOp
    inputs: tuple
    name: str = ""


@dataclass(frozen=True)
class PrimitiveGraph:
    """Nodes in topological order; node ``i`` may only read the graph input or
    nodes ``< i``. The last node is the single output."""

    input_shape: TensorShape
    nodes: tuple

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ValidationError("graph has no nodes")
        for i, node in enumerate(self.nodes):
            if len(node.inputs) != node.op.n_inputs:
                raise ValidationError(f"node {i} ({node.name}): expected {node.op.n_inputs} inputs")
            for src, want in zip(node.inputs, node.op.input_shapes()):
                if src != GRAPH_INPUT and not 0 <= src < i:
                    raise ValidationError(f"node {i} ({node.name}): input {src} breaks topological order")
                got = self.shape_of(src)
                if got != want:
                    raise ValidationError(f"node {i} ({node.name}): edge shape {got} != expected {want}")

    def shape_of(self, node_id):
        return self.input_shape if node_id == GRAPH_INPUT else self.nodes[node_id].op.out_shape

    @property
    def output_shape(self):
        return self.nodes[-1].op.out_shape

    @property
    def ops(self):
        return [n.op for n in self.nodes]

    def convs(self):
        return [n.op for n in self.nodes if n.op.kind.is_conv]


def graph_params(graph: PrimitiveGraph) -> int:
    return sum(count_params(op) for op in graph.ops)


def graph_macs(graph: PrimitiveGraph) -> int:
    return sum(count_macs(op) for op in graph.ops)


class _Builder:
    def __init__(self, input_shape):
        self.input_shape = input_shape
        self.nodes = []

    def add(self, op, inputs, name):
        self.nodes.append(Node(op, tuple(inputs), name))
        return len(self.nodes) - 1

    def shape(self, node_id):
        return self.input_shape if node_id == GRAPH_INPUT else self.nodes[node_id].op.out_shape

    def build(self):
        return PrimitiveGraph(self.input_shape, tuple(self.nodes))


def decompose_gc(op: PrimitiveOp) -> PrimitiveGraph:
    """Rewrite a group conv as slice -> full conv -> concat, one branch per group."""
    if op.kind not in (OpKind.GROUP_CONV, OpKind.CONV2D, OpKind.POINTWISE, OpKind.DEPTHWISE):
        raise ValidationError(f"cannot decompose {op.kind.value}")
    g = op.groups
    b = _Builder(op.in_shape)
    if g == 1:
        b.add(op, [GRAPH_INPUT], "conv")
        return b.build()
    cin, cout = op.in_shape.c // g, op.out_shape.c // g
    branches = []
    for i in range(g):
        s = b.add(slice_channels(op.in_shape, i * cin, (i + 1) * cin), [GRAPH_INPUT], f"slice{i}")
        c = b.add(conv2d(b.shape(s), cout, op.k, op.stride, op.activation), [s], f"conv{i}")
        branches.append(c)
    b.add(concat_channels([b.shape(c) for c in branches]), branches, "concat")
    return b.build()


# -- IBN blocks --------------------------------------------------------------


def _as_fraction(v):
    if v is None or isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(v)


@dataclass(frozen=True)
class IbnSpec:
    variant: IbnVariant
    in_c: int
    out_c: int
    k: int = 3
    stride: int = 1
    m: Fraction = Fraction(6)
    n: Optional[Fraction] = None
    p: Optional[Fraction] = None
    g: Optional[int] = None
    use_residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", IbnVariant(self.variant))
        for name in ("m", "n", "p"):
            object.__setattr__(self, name, _as_fraction(getattr(self, name)))

    @property
    def expanded_c(self):
        return self.m * self.in_c

    @property
    def gc_in_c(self):
        """Input channels of the group conv (GC variants only)."""
        if self.variant is IbnVariant.GENERALIZED_GC_IBN:
            return self.n * self.in_c
        return Fraction(self.in_c)


@dataclass(frozen=True)
class ConvLayer:
    """Plain conv layer (stem, classifier stub) placed between IBN blocks."""

    in_c: int
    out_c: int
    k: int = 3
    stride: int = 1

    @property
    def variant(self):
        return "Pointwise" if self.k == 1 else "Conv2d"


Layer = Union[IbnSpec, ConvLayer]


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.message}" if self.field else self.message


def _is_pos_int(v):
    return not isinstance(v, bool) and isinstance(v, int) and v >= 1


def validate_block(spec: IbnSpec, min_group_size: int = 1) -> list:
    """Return the list of violated block invariants; empty means valid."""
    out = []

    def bad(name, msg):
        out.append(Violation(name, msg))

    for name in ("in_c", "out_c"):
        if not _is_pos_int(getattr(spec, name)):
            bad(name, f"must be a positive integer, got {getattr(spec, name)!r}")
    if out:
        return out
    if not _is_pos_int(spec.k) or spec.k % 2 == 0:
        bad("k", f"kernel size must be odd and positive, got {spec.k!r}")
    if spec.stride not in (1, 2):
        bad("stride", f"stride must be 1 or 2, got {spec.stride!r}")
    if spec.m is None or spec.m <= 0:
        bad("m", f"expansion must be positive, got {spec.m}")
        return out
    if spec.expanded_c.denominator != 1:
        bad("m", f"m * in_c = {spec.expanded_c} is not an integer")
    if spec.use_residual and (spec.stride != 1 or spec.in_c != spec.out_c):
        bad("residual", "residual needs stride 1 and in_c == out_c")

    v = spec.variant
    if v is IbnVariant.GENERALIZED_GC_IBN:
        if spec.n is None or spec.p is None:
            bad("n", "GeneralizedGcIbn needs split factors n and p")
            return out
        if spec.n <= 0 or spec.p <= 0:
            bad("n", "split factors must be positive")
            return out
        if spec.n * spec.p != spec.m:
            bad("n", f"n * p = {spec.n * spec.p} != m = {spec.m}")
        if spec.gc_in_c.denominator != 1:
            bad("n", f"n * in_c = {spec.gc_in_c} is not an integer")
    elif spec.n is not None or spec.p is not None:
        bad("n", f"{v.value} takes no expansion split")

    if v.uses_group_conv:
        if not _is_pos_int(spec.g):
            bad("g", f"{v.value} needs a positive group count, got {spec.g!r}")
        elif not out:
            gc_in, gc_out = int(spec.gc_in_c), int(spec.expanded_c)
            if gc_in % spec.g or gc_out % spec.g:
                bad("g", f"g={spec.g} does not divide group conv channels {gc_in}->{gc_out}")
            else:
                size = gc_in // spec.g
                if size < min_group_size:
                    bad("g", f"group size {size} < {min_group_size}")
    elif spec.g is not None:
        bad("g", f"{v.value} takes no group count")
    return out


def validate_layer(layer: Layer, min_group_size: int = 1) -> list:
    if isinstance(layer, IbnSpec):
        return validate_block(layer, min_group_size)
    out = []
    for name in ("in_c", "out_c"):
        if not _is_pos_int(getattr(layer, name)):
            out.append(Violation(name, "must be a positive integer"))
    if not _is_pos_int(layer.k) or layer.k % 2 == 0:
        out.append(Violation("k", f"kernel size must be odd and positive, got {layer.k!r}"))
    if layer.stride not in (1, 2):
        out.append(Violation("stride", f"stride must be 1 or 2, got {layer.stride!r}"))
    return out


def lower_ibn(spec: IbnSpec, in_shape: TensorShape) -> PrimitiveGraph:
    """Lower a block to its primitive graph; pointwise stages with ratio 1 are elided."""
    problems = validate_block(spec)
    if problems:
        raise ValidationError("invalid block: " + "; ".join(map(str, problems)), problems)
    if in_shape.c != spec.in_c:
        raise ValidationError(f"block expects {spec.in_c} input channels, got {in_shape.c}")
    b = _Builder(in_shape)
    x = GRAPH_INPUT
    exp_c = int(spec.expanded_c)
    v = spec.variant
    if v is IbnVariant.DEPTHWISE_IBN:
        if exp_c != spec.in_c:
            x = b.add(pointwise(b.shape(x), exp_c, activation="relu"), [x], "expand")
        x = b.add(depthwise(b.shape(x), spec.k, spec.stride, activation="relu"), [x], "depthwise")
    elif v is IbnVariant.FUSED_IBN:
        x = b.add(conv2d(b.shape(x), exp_c, spec.k, spec.stride, activation="relu"), [x], "fused")
    elif v is IbnVariant.GENERALIZED_GC_IBN:
        mid_c = int(spec.gc_in_c)
        if mid_c != spec.in_c:
            x = b.add(pointwise(b.shape(x), mid_c, activation="relu"), [x], "expand")
        x = b.add(kxk_conv(b.shape(x), exp_c, spec.k, spec.stride, spec.g, activation="relu"), [x], "group_conv")
    else:
        x = b.add(kxk_conv(b.shape(x), exp_c, spec.k, spec.stride, spec.g, activation="relu"), [x], "group_conv")
    x = b.add(pointwise(b.shape(x), spec.out_c), [x], "project")
    if spec.use_residual:
        b.add(residual_add(b.shape(x)), [GRAPH_INPUT, x], "residual")
    return b.build()


def lower_layer(layer: Layer, in_shape: TensorShape) -> PrimitiveGraph:
    if isinstance(layer, IbnSpec):
        return lower_ibn(layer, in_shape)
    if in_shape.c != layer.in_c:
        raise ValidationError(f"layer expects {layer.in_c} input channels, got {in_shape.c}")
    b = _Builder(in_shape)
    b.add(conv2d(in_shape, layer.out_c, layer.k, layer.stride, activation="relu"), [GRAPH_INPUT], "conv")
    return b.build()


# -- models ------------------------------------------------------------------


@dataclass(frozen=True)
class ModelIr:
    name: str
    input: TensorShape
    blocks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))


def validate_model(model: ModelIr, min_group_size: int = 1) -> list:
    """Violations across the whole model, each tagged with its block index."""
    out = []
    c = model.input.c
    shape = model.input
    for i, layer in enumerate(model.blocks):
        problems = validate_layer(layer, min_group_size)
        if not problems and layer.in_c != c:
            problems = [Violation("in_c", f"expected {c} channels from the previous block, got {layer.in_c}")]
        out.extend(Violation(f"blocks[{i}].{p.field}", p.message) for p in problems)
        if problems:
            # later chaining errors would only be noise
            break
        shape = conv_output_shape(shape, layer.k, layer.stride, layer.out_c)
        c = layer.out_c
    return out


def lower_model(model: ModelIr) -> list:
    """Lower every layer in order; returns ``[(block_index, PrimitiveGraph), ...]``."""
    problems = validate_model(model)
    if problems:
        raise ValidationError("invalid model: " + "; ".join(map(str, problems)), problems)
    shape = model.input
    out = []
    for i, layer in enumerate(model.blocks):
        graph = lower_layer(layer, shape)
        out.append((i, graph))
        shape = graph.output_shape
    return out


def model_output_shape(model: ModelIr) -> TensorShape:
    shape = model.input
    for layer in model.blocks:
        shape = conv_output_shape(shape, layer.k, layer.stride, layer.out_c)
    return shape


# -- JSON --------------------------------------------------------------------

_BLOCK_REQUIRED = ("variant", "in_c", "out_c", "k", "stride")
_BLOCK_OPTIONAL = ("m", "n", "p", "g", "residual")
_CONV_VARIANTS = ("Conv2d", "Pointwise")


def layer_to_dict(layer: Layer) -> dict:
    if isinstance(layer, ConvLayer):
        return {"variant": layer.variant, "in_c": layer.in_c, "out_c": layer.out_c, "k": layer.k,
                "stride": layer.stride, "m": None, "n": None, "p": None, "g": None, "residual": False}
    frac = lambda v: None if v is None else strict_json.fraction_to_json(v)  # noqa: E731
    return {
        "variant": layer.variant.value,
        "in_c": layer.in_c,
        "out_c": layer.out_c,
        "k": layer.k,
        "stride": layer.stride,
        "m": frac(layer.m),
        "n": frac(layer.n),
        "p": frac(layer.p),
        "g": layer.g,
        "residual": layer.use_residual,
    }


def layer_from_dict(doc, path="block") -> Layer:
    strict_json.check_fields(doc, path, _BLOCK_REQUIRED, _BLOCK_OPTIONAL)
    variant = doc["variant"]
    in_c = strict_json.get_int(doc, "in_c", path, minimum=1)
    out_c = strict_json.get_int(doc, "out_c", path, minimum=1)
    k = strict_json.get_int(doc, "k", path, minimum=1)
    stride = strict_json.get_int(doc, "stride", path, minimum=1)
    if variant in _CONV_VARIANTS:
        for key in ("m", "n", "p", "g"):
            if doc.get(key) is not None:
                raise SchemaError(f"{path}.{key}", f"not used by {variant}")
        if strict_json.get_bool(doc, "residual", path):
            raise SchemaError(f"{path}.residual", f"not used by {variant}")
        if variant == "Pointwise" and k != 1:
            raise SchemaError(f"{path}.k", "Pointwise requires k=1")
        return ConvLayer(in_c, out_c, k, stride)
    try:
        variant = IbnVariant(variant)
    except ValueError:
        raise SchemaError(f"{path}.variant", f"unknown variant {variant!r}") from None

    def frac(key):
        v = doc.get(key)
        return None if v is None else strict_json.to_fraction(v, f"{path}.{key}")

    m = frac("m")
    return IbnSpec(
        variant=variant,
        in_c=in_c,
        out_c=out_c,
        k=k,
        stride=stride,
        m=Fraction(6) if m is None else m,
        n=frac("n"),
        p=frac("p"),
        g=strict_json.get_int(doc, "g", path, minimum=1, optional=True),
        use_residual=strict_json.get_bool(doc, "residual", path),
    )


def model_to_dict(model: ModelIr) -> dict:
    return {
        "name": model.name,
        "input": model.input.as_list(),
        "blocks": [layer_to_dict(b) for b in model.blocks],
    }


def model_from_dict(doc) -> ModelIr:
    strict_json.check_fields(doc, "", ("name", "input", "blocks"))
    if not isinstance(doc["name"], str):
        raise SchemaError("name", "expected a string")
    if not isinstance(doc["blocks"], list):
        raise SchemaError("blocks", "expected a list")
    shape = TensorShape(*strict_json.shape_from_json(doc["input"], "input"))
    blocks = [layer_from_dict(b, f"blocks[{i}]") for i, b in enumerate(doc["blocks"])]
    return ModelIr(doc["name"], shape, tuple(blocks))


def dumps_model(model: ModelIr) -> str:
    return strict_json.dumps(model_to_dict(model))


def loads_model(text: str) -> ModelIr:
    return model_from_dict(strict_json.loads(text))


def load_model(path) -> ModelIr:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
