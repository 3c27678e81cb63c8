"""Block analyzer: sweep IBN variants over fixed input shapes, compare them to
the depthwise IBN of the same shape/kernel/expansion, and turn clear losers
into per-regime filter rules for a search space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import strict_json
from .core_ir import IbnSpec, IbnVariant, TensorShape, lower_ibn, validate_block
from .cost_model import AcceleratorConfig, graph_metrics
from .errors import SchemaError, ValidationError
from .search_space import BlockFilter, SearchSpace, apply_block_filters, expansion_splits

log = logging.getLogger(__name__)

BASELINE = IbnVariant.DEPTHWISE_IBN
DEFAULT_GROUP_COUNTS = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class SweepMenu:
    variants: tuple = tuple(IbnVariant)
    kernels: tuple = (3, 5)
    expansions: tuple = (Fraction(3), Fraction(6))
    group_counts: tuple = DEFAULT_GROUP_COUNTS

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(IbnVariant(v) for v in self.variants))
        object.__setattr__(self, "expansions", tuple(Fraction(e) for e in self.expansions))
        if not (self.variants and self.kernels and self.expansions and self.group_counts):
            raise ValueError("sweep menus must be non-empty")


@dataclass(frozen=True)
class SweepPoint:
    variant: str
    h: int
    w: int
    c: int
    k: int
    m: Fraction
    n: Optional[int]
    p: Optional[int]
    g: Optional[int]
    params: int
    macs: int
    cycles: int
    latency_us: float
    utilization: float
    energy_mj: float
    param_ratio: float
    mac_ratio: float
    latency_ratio: float
    energy_ratio: float

    @property
    def shape(self):
        return (self.h, self.w, self.c)

    @property
    def config(self):
        """The (kernel, expansion) point this row is matched on."""
        return (self.k, self.m)


SWEEP_COLUMNS = tuple(f.name for f in SweepPoint.__dataclass_fields__.values())


@dataclass
class SweepTable:
    rows: list
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)

    def shapes(self):
        out = []
        for r in self.rows:
            if r.shape not in out:
                out.append(r.shape)
        return out

    def select(self, **kw):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]


def _specs(variant, c, k, m, group_counts):
    """Every block of one variant at a (shape, k, m) point, stride 1, no residual."""
    if variant is IbnVariant.DEPTHWISE_IBN or variant is IbnVariant.FUSED_IBN:
        yield IbnSpec(variant, c, c, k, 1, m)
    elif variant is IbnVariant.GC_IBN:
        for g in group_counts:
            yield IbnSpec(variant, c, c, k, 1, m, g=g)
    else:
        for n, p in expansion_splits(m):
            if n == 1:
                continue  # same block as GcIbn with m = p
            for g in group_counts:
                yield IbnSpec(variant, c, c, k, 1, m, n=n, p=p, g=g)


def _ratio(a, b):
    return a / b if b else float("nan")


def run_block_sweep(shapes, menu: SweepMenu, cfg: AcceleratorConfig) -> SweepTable:
    """One row per valid (shape, variant, k, m, split, g); invalid ones become notes."""
    table = SweepTable([])
    for hwc in shapes:
        shape = hwc if isinstance(hwc, TensorShape) else TensorShape(*hwc)
        for k in menu.kernels:
            for m in menu.expansions:
                base_spec = IbnSpec(BASELINE, shape.c, shape.c, k, 1, m)
                problems = validate_block(base_spec)
                if problems:
                    table.notes.append(f"{shape.as_list()} k={k} m={m}: no baseline ({problems[0]})")
                    continue
                base = graph_metrics(lower_ibn(base_spec, shape), cfg)
                for variant in menu.variants:
                    for spec in _specs(variant, shape.c, k, m, menu.group_counts):
                        problems = validate_block(spec)
                        if problems:
                            table.notes.append(
                                f"{shape.as_list()} {variant.value} k={k} m={m} n={spec.n} g={spec.g}: "
                                f"skipped ({problems[0]})"
                            )
                            continue
                        mm = graph_metrics(lower_ibn(spec, shape), cfg)
                        table.rows.append(SweepPoint(
                            variant=variant.value, h=shape.h, w=shape.w, c=shape.c, k=k, m=m,
                            n=spec.n, p=spec.p, g=spec.g,
                            params=mm.params, macs=mm.macs, cycles=mm.cycles, latency_us=mm.latency_us,
                            utilization=mm.utilization, energy_mj=mm.energy_mj,
                            param_ratio=_ratio(mm.params, base.params),
                            mac_ratio=_ratio(mm.macs, base.macs),
                            latency_ratio=_ratio(mm.cycles, base.cycles),
                            energy_ratio=_ratio(mm.energy_mj, base.energy_mj),
                        ))
    return table


# -- filter recommendation -------------------------------------------------------


@dataclass(frozen=True)
class FilterThresholds:
    """Extra, non-pareto reasons to drop a variant in a regime.

    ``max_latency_ratio``: drop a variant whose every row in the regime is
    slower than this multiple of the depthwise baseline.
    """

    max_latency_ratio: Optional[float] = None

    @classmethod
    def from_dict(cls, doc, path="thresholds"):
        strict_json.check_fields(doc, path, (), ("max_latency_ratio",))
        v = doc.get("max_latency_ratio")
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0):
            raise SchemaError(f"{path}.max_latency_ratio", "expected a positive number")
        return cls(v)


@dataclass(frozen=True)
class FilterRule:
    regime: tuple  # swept (h, w, c)
    variant: str
    reason: str  # "dominated" | "latency_ratio"
    justification: dict

    def to_dict(self):
        return {"regime": list(self.regime), "drop": {"variant": self.variant},
                "reason": self.reason, "justification": self.justification}


def _beats(y: SweepPoint, x: SweepPoint):
    """``y`` is faster than ``x`` with at least as many parameters."""
    return y.cycles < x.cycles and y.params >= x.params


def recommend_filters(table: SweepTable, thresholds: FilterThresholds = FilterThresholds()) -> list:
    """Rules dropping a variant within one swept shape.

    A variant is dropped as *dominated* when, at every (k, m) point of that
    shape, each of its rows is beaten by a row of another variant. It is
    dropped on *latency_ratio* when all of its rows exceed the threshold.
    """
    if not table.rows:
        raise ValueError("empty sweep table")
    rules = []
    for shape in table.shapes():
        rows = [r for r in table.rows if r.shape == shape]
        variants = []
        for r in rows:
            if r.variant not in variants:
                variants.append(r.variant)
        for v in variants:
            mine = [r for r in rows if r.variant == v]
            beaters = []
            dominated = True
            for x in mine:
                ys = [y for y in rows if y.variant != v and y.config == x.config and _beats(y, x)]
                if not ys:
                    dominated = False
                    break
                beaters.extend(y.variant for y in ys if y.variant not in beaters)
            if dominated:
                rules.append(FilterRule(shape, v, "dominated", {
                    "rows": len(mine),
                    "dominated_by": sorted(beaters),
                }))
                continue
            limit = thresholds.max_latency_ratio
            if limit is not None and all(x.latency_ratio > limit for x in mine):
                rules.append(FilterRule(shape, v, "latency_ratio", {
                    "rows": len(mine),
                    "min_latency_ratio": min(x.latency_ratio for x in mine),
                    "max_latency_ratio": limit,
                }))
    return rules


def block_input_shapes(space: SearchSpace, multiplier_index=None):
    """Input (h, w, c) of every searchable block, at the 1.0 multiplier by default."""
    if multiplier_index is None:
        ms = list(space.multipliers)
        multiplier_index = ms.index(Fraction(1)) if Fraction(1) in ms else 0
    h, w = space.input.h, space.input.w
    if space.stem:
        h, w = -(-h // space.stem.stride), -(-w // space.stem.stride)
    out = []
    for b, (in_c, _) in zip(space.blocks, space.block_channels(multiplier_index)):
        out.append((h, w, in_c))
        h, w = -(-h // b.stride), -(-w // b.stride)
    return out


def _nearest_regime(shape, regimes):
    same_res = [r for r in regimes if r[:2] == shape[:2]]
    if not same_res:
        return None
    return min(same_res, key=lambda r: (abs(r[2] - shape[2]), r[2]))


def rules_to_block_filters(rules, space: SearchSpace) -> list:
    """Map regime rules onto the blocks of a space.

    A block belongs to the swept shape with its spatial size and the nearest
    channel count. A drop that would leave a block without variants is
    skipped, as is one that would leave the space without a valid candidate,
    so the result can always be applied.
    """
    regimes = []
    for r in rules:
        if tuple(r.regime) not in regimes:
            regimes.append(tuple(r.regime))
    filters = []
    for i, shape in enumerate(block_input_shapes(space)):
        regime = _nearest_regime(shape, regimes)
        if regime is None:
            continue
        remaining = [v.value for v in space.blocks[i].variants]
        for r in rules:
            if tuple(r.regime) != regime or r.variant not in remaining:
                continue
            if len(remaining) == 1:
                log.info("block %d: keeping %s, it is the last variant", i, r.variant)
                continue
            f = BlockFilter(i, "variant", IbnVariant(r.variant))
            try:
                apply_block_filters(space, filters + [f])
            except ValidationError:
                log.info("block %d: keeping %s, dropping it leaves no valid candidate", i, r.variant)
                continue
            remaining.remove(r.variant)
            filters.append(f)
    return filters


def parse_shapes_doc(doc):
    """Shapes file: ``{"shapes": [[h,w,c], ...], "variants"?, "kernels"?,
    "expansions"?, "group_counts"?, "thresholds"?}`` or a bare list of shapes."""
    if isinstance(doc, list):
        doc = {"shapes": doc}
    strict_json.check_fields(doc, "", ("shapes",), ("variants", "kernels", "expansions", "group_counts", "thresholds"))
    if not isinstance(doc["shapes"], list) or not doc["shapes"]:
        raise SchemaError("shapes", "expected a non-empty list of [h, w, c]")
    shapes = [TensorShape(*strict_json.shape_from_json(s, f"shapes[{i}]")) for i, s in enumerate(doc["shapes"])]
    kw = {}
    if "variants" in doc:
        try:
            kw["variants"] = tuple(IbnVariant(v) for v in doc["variants"])
        except ValueError as exc:
            raise SchemaError("variants", str(exc)) from None
    for key in ("kernels", "group_counts"):
        if key in doc:
            vals = doc[key]
            if not isinstance(vals, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in vals):
                raise SchemaError(key, "expected a list of positive integers")
            kw[key] = tuple(vals)
    if "expansions" in doc:
        kw["expansions"] = tuple(strict_json.to_fraction(e, f"expansions[{i}]") for i, e in enumerate(doc["expansions"]))
    try:
        menu = SweepMenu(**kw)
    except ValueError as exc:
        raise SchemaError("", str(exc)) from None
    thresholds = FilterThresholds.from_dict(doc["thresholds"]) if "thresholds" in doc else FilterThresholds()
    return shapes, menu, thresholds
