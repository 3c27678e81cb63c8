"""Analytical latency / energy / utilization model for a wide-SIMD accelerator.

Each primitive op costs a roofline bound plus a fixed dispatch overhead::

    cycles = ceil(max(macs / (P * u_align), act_in_bytes / B_act,
                      param_bytes / B_param)) + C_fix

where ``u_align`` is the fraction of the ``L``-wide channel tile doing useful
work for the op's output channels per group. Depthwise convs use one lane per
tile, which is what makes them slow on this class of hardware despite their
low MAC count. There is no memory hierarchy and no inter-op fusion: fusion
shows up structurally, as fewer ops in the lowered graph.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields
from enum import Enum
from fractions import Fraction
from importlib import resources

from . import strict_json
from .core_ir import ModelIr, OpKind, PrimitiveOp, count_act_bytes, count_macs, count_params, lower_model
from .errors import SchemaError, ValidationError

HARNESS_RATE_HZ = 30
HARNESS_WINDOW_INFERENCES = 100


class Bound(str, Enum):
    COMPUTE = "Compute"
    ACT_BANDWIDTH = "ActBandwidth"
    PARAM_BANDWIDTH = "ParamBandwidth"


@dataclass(frozen=True)
class AcceleratorConfig:
    mac_per_cycle: int
    clock_ghz: float
    act_bw: float
    param_bw: float
    channel_tile: int
    op_overhead_cycles: int
    bytes_per_elem: int
    e_mac: float
    e_act: float
    e_param: float
    name: str = "custom"

    def __post_init__(self):
        for f in fields(self):
            if f.name == "name":
                continue
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 or not math.isfinite(v):
                raise ValidationError(f"AcceleratorConfig.{f.name} must be positive, got {v!r}")
        for name in ("mac_per_cycle", "channel_tile", "op_overhead_cycles", "bytes_per_elem"):
            if not isinstance(getattr(self, name), int):
                raise ValidationError(f"AcceleratorConfig.{name} must be an integer")
        L = self.channel_tile
        if L & (L - 1):
            raise ValidationError(f"channel_tile must be a power of two, got {L}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc, path=""):
        names = [f.name for f in fields(cls)]
        strict_json.check_fields(doc, path, [n for n in names if n != "name"], ["name"])
        for key, value in doc.items():
            if key != "name" and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise SchemaError(f"{path}.{key}" if path else key, f"expected a number, got {value!r}")
        return cls(**doc)


def load_config(path) -> AcceleratorConfig:
    with open(path, encoding="utf-8") as fh:
        return AcceleratorConfig.from_dict(strict_json.loads(fh.read()))


def default_config() -> AcceleratorConfig:
    """The shipped profile; ``NAS_FORGE_CONFIG`` points at a replacement file."""
    override = os.environ.get("NAS_FORGE_CONFIG")
    if override:
        return load_config(override)
    text = resources.files("nas_forge").joinpath("data/default_accelerator.json").read_text("utf-8")
    return AcceleratorConfig.from_dict(json.loads(text))


@dataclass(frozen=True)
class OpMetrics:
    kind: str
    name: str
    block: int
    cycles: int
    latency_us: float
    macs: int
    params: int
    act_bytes: int
    act_out_bytes: int
    param_bytes: int
    utilization: float
    energy_mj: float
    bound: Bound

    def to_dict(self):
        d = asdict(self)
        d["bound"] = self.bound.value
        return d


@dataclass(frozen=True)
class ModelMetrics:
    cycles: int
    latency_us: float
    macs: int
    params: int
    act_bytes: int
    param_bytes: int
    energy_mj: float
    utilization: float
    ops: tuple = ()

    def totals(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "ops"}


def alignment_utilization(op: PrimitiveOp, cfg: AcceleratorConfig) -> Fraction:
    """Useful fraction of the channel tile: q / (ceil(q / L) * L), q = out channels per group."""
    if not op.kind.is_conv:
        return Fraction(1)
    L = cfg.channel_tile
    q = 1 if op.kind is OpKind.DEPTHWISE else op.out_shape.c // op.groups
    return Fraction(q, -(-q // L) * L)


def op_energy(macs, act_bytes, param_bytes, cfg: AcceleratorConfig) -> float:
    """Linear energy model in mJ (coefficients are pJ per MAC / per byte)."""
    return (macs * cfg.e_mac + act_bytes * cfg.e_act + param_bytes * cfg.e_param) * 1e-9


def op_latency(op: PrimitiveOp, cfg: AcceleratorConfig, name="", block=-1) -> OpMetrics:
    macs = count_macs(op)
    params = count_params(op)
    in_bytes, out_bytes = count_act_bytes(op, cfg.bytes_per_elem)
    param_bytes = params * cfg.bytes_per_elem
    # exact rationals so the ceiling never depends on float rounding
    act_term = Fraction(in_bytes) / Fraction(cfg.act_bw)
    if op.kind.is_conv:
        terms = [
            (Fraction(macs) / (cfg.mac_per_cycle * alignment_utilization(op, cfg)), Bound.COMPUTE),
            (act_term, Bound.ACT_BANDWIDTH),
            (Fraction(param_bytes) / Fraction(cfg.param_bw), Bound.PARAM_BANDWIDTH),
        ]
    else:
        terms = [(act_term, Bound.ACT_BANDWIDTH)]
    busy, bound = max(terms, key=lambda t: t[0])
    cycles = math.ceil(busy) + cfg.op_overhead_cycles
    return OpMetrics(
        kind=op.kind.value,
        name=name,
        block=block,
        cycles=cycles,
        latency_us=cycles / (cfg.clock_ghz * 1000),
        macs=macs,
        params=params,
        act_bytes=in_bytes,
        act_out_bytes=out_bytes,
        param_bytes=param_bytes,
        utilization=macs / (cycles * cfg.mac_per_cycle),
        energy_mj=op_energy(macs, in_bytes, param_bytes, cfg),
        bound=bound,
    )


def aggregate(ops, cfg: AcceleratorConfig) -> ModelMetrics:
    ops = tuple(ops)
    cycles = sum(o.cycles for o in ops)
    macs = sum(o.macs for o in ops)
    return ModelMetrics(
        cycles=cycles,
        latency_us=cycles / (cfg.clock_ghz * 1000),
        macs=macs,
        params=sum(o.params for o in ops),
        act_bytes=sum(o.act_bytes for o in ops),
        param_bytes=sum(o.param_bytes for o in ops),
        energy_mj=math.fsum(o.energy_mj for o in ops),
        utilization=macs / (cycles * cfg.mac_per_cycle) if cycles else 0.0,
        ops=ops,
    )


def graph_metrics(graph, cfg: AcceleratorConfig, block=-1) -> ModelMetrics:
    return aggregate((op_latency(n.op, cfg, n.name, block) for n in graph.nodes), cfg)


def model_metrics(model: ModelIr, cfg: AcceleratorConfig) -> ModelMetrics:
    """Lower every block and sum per-op estimates in execution order."""
    ops = []
    for index, graph in lower_model(model):
        ops.extend(op_latency(n.op, cfg, n.name, index) for n in graph.nodes)
    return aggregate(ops, cfg)


def harness_energy(avg_power_mw, idle_power_mw, latency_ms) -> float:
    """Energy per inference in mJ: active power (average minus idle) times latency.

    The measurement protocol this mirrors paces the model at
    ``HARNESS_RATE_HZ`` inferences per second and averages power over
    ``HARNESS_WINDOW_INFERENCES`` inferences.
    """
    if idle_power_mw < 0 or latency_ms < 0:
        raise ValidationError("power and latency must be non-negative")
    if avg_power_mw < idle_power_mw:
        raise ValidationError(f"average power {avg_power_mw} mW is below idle power {idle_power_mw} mW")
    # mW * ms = uJ
    exact = (_dec(avg_power_mw) - _dec(idle_power_mw)) * _dec(latency_ms) / 1000
    return float(exact)


def _dec(x) -> Fraction:
    return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


def quantize_real(x: float) -> float:
    """Round to the 6 significant digits used on the wire."""
    return float(f"{x:.6g}")


def metrics_to_dict(m: ModelMetrics, per_op=True) -> dict:
    """Wire/log form: integers exact, reals at 6 significant digits."""
    d = {}
    for key, value in m.totals().items():
        d[key] = quantize_real(value) if isinstance(value, float) else value
    if per_op:
        d["ops"] = []
        for op in m.ops:
            od = op.to_dict()
            for key, value in od.items():
                if isinstance(value, float):
                    od[key] = quantize_real(value)
            d["ops"].append(od)
    return d


_OP_FIELDS = [f.name for f in fields(OpMetrics)]
_TOTAL_FIELDS = [f.name for f in fields(ModelMetrics) if f.name != "ops"]


def metrics_from_dict(doc, path="metrics") -> ModelMetrics:
    strict_json.check_fields(doc, path, _TOTAL_FIELDS, ["ops"])
    ops = []
    for i, od in enumerate(doc.get("ops") or []):
        strict_json.check_fields(od, f"{path}.ops[{i}]", _OP_FIELDS)
        od = dict(od)
        od["bound"] = Bound(od["bound"])
        ops.append(OpMetrics(**od))
    kwargs = {k: doc[k] for k in _TOTAL_FIELDS}
    return ModelMetrics(ops=tuple(ops), **kwargs)


def quantized(m: ModelMetrics, per_op=True) -> ModelMetrics:
    """The metrics exactly as a remote evaluator would report them."""
    return metrics_from_dict(metrics_to_dict(m, per_op))

