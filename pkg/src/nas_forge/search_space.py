"""Declarative IBN search spaces, candidate genotypes, sampling and mutation.

A space is a linear chain of blocks, each with its own choice menus, plus a
global channel multiplier. Block channel counts scale with the multiplier, so
whether a per-block combination is valid (group sizes must divide the
channels) depends on the multiplier; the space keeps one table of valid
combinations per (block, multiplier) pair and every operation works off it.
"""

from __future__ import annotations

import itertools
import logging
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

from . import strict_json
from .core_ir import ConvLayer, IbnSpec, IbnVariant, ModelIr, TensorShape, validate_block
from .errors import SchemaError, ValidationError

log = logging.getLogger(__name__)

MIN_GROUP_SIZE = 32
DEFAULT_VARIANTS = (
    IbnVariant.DEPTHWISE_IBN,
    IbnVariant.FUSED_IBN,
    IbnVariant.GENERALIZED_GC_IBN,
    IbnVariant.GC_IBN,
)
DEFAULT_KERNELS = (3, 5, 7)
DEFAULT_EXPANSIONS = (Fraction(3), Fraction(6))
DEFAULT_GROUP_SIZES = (32, 64)
DEFAULT_MULTIPLIERS = (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1), Fraction(2))


def scale_channels(c: int, multiplier: Fraction) -> int:
    """Scale and round to the nearest multiple of 8 (halves round up), minimum 8."""
    eighths = Fraction(c) * multiplier / 8
    return max(8, int(eighths + Fraction(1, 2)) * 8)


def expansion_splits(m: Fraction) -> tuple:
    """Integer factorisations (n, p) with n * p == m, ordered by n."""
    if m.denominator != 1:
        return ()
    m = m.numerator
    return tuple((n, m // n) for n in range(1, m + 1) if m % n == 0)


@dataclass(frozen=True)
class BlockChoices:
    out_c: int
    stride: int = 1
    variants: tuple = DEFAULT_VARIANTS
    kernels: tuple = DEFAULT_KERNELS
    expansions: tuple = DEFAULT_EXPANSIONS
    group_sizes: tuple = DEFAULT_GROUP_SIZES
    allow_residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(IbnVariant(v) for v in self.variants))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "expansions", tuple(Fraction(e) for e in self.expansions))
        object.__setattr__(self, "group_sizes", tuple(self.group_sizes))
        if not (self.variants and self.kernels and self.expansions):
            raise ValidationError("block menus must be non-empty")
        if self.stride not in (1, 2):
            raise ValidationError(f"stride must be 1 or 2, got {self.stride!r}")


@dataclass(frozen=True)
class StemSpec:
    out_c: int
    k: int = 3
    stride: int = 2


@dataclass(frozen=True)
class Candidate:
    """One choice per block plus a multiplier index.

    Each block entry is ``(variant, kernel, expansion, group_size, split)``
    menu indices; ``group_size`` is None unless the variant uses a group conv
    and ``split`` is None unless it is a GeneralizedGcIbn.
    """

    blocks: tuple
    multiplier: int

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))

    def key(self):
        fmt = lambda v: "-" if v is None else str(v)  # noqa: E731
        return f"x{self.multiplier}/" + "/".join(".".join(fmt(v) for v in b) for b in self.blocks)

    def to_dict(self):
        return {"multiplier": self.multiplier, "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_dict(cls, doc, path="candidate"):
        strict_json.check_fields(doc, path, ("multiplier", "blocks"))
        blocks = doc["blocks"]
        if not isinstance(blocks, list):
            raise SchemaError(f"{path}.blocks", "expected a list")
        for i, b in enumerate(blocks):
            if not (isinstance(b, list) and len(b) == 5):
                raise SchemaError(f"{path}.blocks[{i}]", "expected 5 choice indices")
        return cls(tuple(tuple(b) for b in blocks), strict_json.get_int(doc, "multiplier", path, minimum=0))


@dataclass(frozen=True)
class SearchSpace:
    input: TensorShape
    blocks: tuple
    stem: Optional[StemSpec] = None
    multipliers: tuple = DEFAULT_MULTIPLIERS
    min_group_size: int = MIN_GROUP_SIZE
    name: str = "space"
    warnings: tuple = field(default=(), compare=False)
    _combos: tuple = field(init=False, compare=False, repr=False)
    _combo_sets: tuple = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "multipliers", tuple(Fraction(m) for m in self.multipliers))
        if not self.blocks:
            raise ValidationError("search space needs at least one block")
        if not self.multipliers or any(m <= 0 for m in self.multipliers):
            raise ValidationError("multipliers must be a non-empty list of positive values")
        # combos[j][i]: valid choice tuples of block i under multiplier j
        combos = tuple(
            tuple(_block_combos(self, i, j) for i in range(len(self.blocks)))
            for j in range(len(self.multipliers))
        )
        object.__setattr__(self, "_combos", combos)
        object.__setattr__(self, "_combo_sets", tuple(tuple(frozenset(c) for c in row) for row in combos))
        if sum(_product(len(c) for c in row) for row in combos) == 0:
            raise ValidationError("search space contains no valid candidate")

    def combos(self, multiplier_index, block_index):
        return self._combos[multiplier_index][block_index]

    def block_channels(self, multiplier_index):
        """``[(in_c, out_c), ...]`` for every block under one multiplier."""
        mult = self.multipliers[multiplier_index]
        c = self.stem.out_c if self.stem else self.input.c
        out = []
        for b in self.blocks:
            oc = scale_channels(b.out_c, mult)
            out.append((c, oc))
            c = oc
        return out

    def is_valid(self, cand: Candidate) -> bool:
        if not 0 <= cand.multiplier < len(self.multipliers) or len(cand.blocks) != len(self.blocks):
            return False
        sets = self._combo_sets[cand.multiplier]
        return all(b in s for b, s in zip(cand.blocks, sets))


def _product(xs):
    out = 1
    for x in xs:
        out *= x
    return out


def block_spec(space: SearchSpace, block_index, choice, in_c, out_c) -> Optional[IbnSpec]:
    """Build the IbnSpec a choice tuple denotes, or None if it cannot exist."""
    b = space.blocks[block_index]
    vi, ki, ei, gi, si = choice
    variant = b.variants[vi]
    m = b.expansions[ei]
    residual = b.allow_residual and b.stride == 1 and in_c == out_c
    n = p = g = None
    if variant is IbnVariant.GENERALIZED_GC_IBN:
        splits = expansion_splits(m)
        if si is None or si >= len(splits):
            return None
        n, p = splits[si]
    if variant.uses_group_conv:
        gc_in = in_c * (n or 1)
        size = b.group_sizes[gi]
        if gc_in % size:
            return None
        g = gc_in // size
    return IbnSpec(variant, in_c, out_c, b.kernels[ki], b.stride, m, n, p, g, residual)


def _raw_choices(b: BlockChoices):
    for vi, variant in enumerate(b.variants):
        for ki in range(len(b.kernels)):
            for ei, m in enumerate(b.expansions):
                gis = range(len(b.group_sizes)) if variant.uses_group_conv else [None]
                sis = range(len(expansion_splits(m))) if variant is IbnVariant.GENERALIZED_GC_IBN else [None]
                for gi in gis:
                    for si in sis:
                        yield (vi, ki, ei, gi, si)


def _block_combos(space, block_index, mult_index):
    in_c, out_c = space.block_channels(mult_index)[block_index]
    out = []
    for choice in _raw_choices(space.blocks[block_index]):
        spec = block_spec(space, block_index, choice, in_c, out_c)
        if spec is not None and not validate_block(spec, space.min_group_size):
            out.append(choice)
    return tuple(out)


# -- operations ----------------------------------------------------------------


def space_size(space: SearchSpace) -> int:
    return sum(_product(len(c) for c in row) for row in space._combos)


def enumerate_space(space: SearchSpace):
    """Yield every valid candidate (multiplier-major order)."""
    for j, row in enumerate(space._combos):
        for blocks in itertools.product(*row):
            yield Candidate(blocks, j)


def sample_random(space: SearchSpace, seed: int) -> Candidate:
    """Uniform over valid candidates, deterministic per seed."""
    rng = random.Random(seed)
    weights = [_product(len(c) for c in row) for row in space._combos]
    pick = rng.randrange(sum(weights))
    for j, w in enumerate(weights):
        if pick < w:
            break
        pick -= w
    blocks = tuple(combos[rng.randrange(len(combos))] for combos in space._combos[j])
    return Candidate(blocks, j)


_FIELDS = ("variant", "kernel", "expansion", "group_size", "split")


def _menu_len(b: BlockChoices, field_index, choice):
    if field_index == 0:
        return len(b.variants)
    if field_index == 1:
        return len(b.kernels)
    if field_index == 2:
        return len(b.expansions)
    if field_index == 3:
        return len(b.group_sizes) if b.variants[choice[0]].uses_group_conv else 0
    variant = b.variants[choice[0]]
    return len(expansion_splits(b.expansions[choice[2]])) if variant is IbnVariant.GENERALIZED_GC_IBN else 0


def _with_variant(space, block_index, choice, vi, mult_index):
    """Switch variant, keeping shared fields and filling newly relevant ones
    with the first value that yields a valid block."""
    b = space.blocks[block_index]
    variant = b.variants[vi]
    gis = [None]
    if variant.uses_group_conv:
        gis = [choice[3]] if choice[3] is not None else range(len(b.group_sizes))
    sis = [None]
    if variant is IbnVariant.GENERALIZED_GC_IBN:
        sis = [choice[4]] if choice[4] is not None else range(len(expansion_splits(b.expansions[choice[2]])))
    valid = space._combo_sets[mult_index][block_index]
    for gi in gis:
        for si in sis:
            new = (vi, choice[1], choice[2], gi, si)
            if new in valid:
                return new
    return None


def mutation_options(space: SearchSpace, cand: Candidate):
    """All single-parameter changes that keep the candidate valid, grouped by parameter."""
    options = []
    # multiplier
    alts = []
    for j in range(len(space.multipliers)):
        if j != cand.multiplier:
            alt = Candidate(cand.blocks, j)
            if space.is_valid(alt):
                alts.append(alt)
    options.append((("multiplier",), alts))
    for i, choice in enumerate(cand.blocks):
        b = space.blocks[i]
        valid = space._combo_sets[cand.multiplier][i]
        for f, name in enumerate(_FIELDS):
            n = _menu_len(b, f, choice)
            if n < 2:
                continue
            alts = []
            for v in range(n):
                if v == choice[f]:
                    continue
                if f == 0:
                    new = _with_variant(space, i, choice, v, cand.multiplier)
                else:
                    new = choice[:f] + (v,) + choice[f + 1:]
                    if new not in valid:
                        new = None
                if new is not None:
                    alts.append(Candidate(cand.blocks[:i] + (new,) + cand.blocks[i + 1:], cand.multiplier))
            options.append(((name, i), alts))
    return options


def mutate(cand: Candidate, space: SearchSpace, seed: int) -> Candidate:
    """Resample one searchable parameter to a different valid value.

    The parameter is drawn uniformly among those that have at least one valid
    alternative; with none, the candidate comes back unchanged.
    """
    rng = random.Random(seed)
    options = [alts for _, alts in mutation_options(space, cand) if alts]
    if not options:
        return cand
    alts = options[rng.randrange(len(options))]
    return alts[rng.randrange(len(alts))]


def materialize(cand: Candidate, space: SearchSpace) -> ModelIr:
    if not space.is_valid(cand):
        raise ValidationError(f"candidate {cand.key()} is not valid for space {space.name!r}")
    layers = []
    if space.stem:
        st = space.stem
        layers.append(ConvLayer(space.input.c, st.out_c, st.k, st.stride))
    for i, (in_c, out_c) in enumerate(space.block_channels(cand.multiplier)):
        layers.append(block_spec(space, i, cand.blocks[i], in_c, out_c))
    return ModelIr(f"{space.name}:{cand.key()}", space.input, tuple(layers))


# -- filters -------------------------------------------------------------------


@dataclass(frozen=True)
class BlockFilter:
    block_index: int
    field: str  # "variant" | "kernel" | "group_size"
    value: object

    def to_dict(self):
        value = self.value.value if isinstance(self.value, IbnVariant) else self.value
        return {"block_index": self.block_index, "drop": {self.field: value}}

    @classmethod
    def from_dict(cls, doc, path="rule"):
        strict_json.check_fields(doc, path, ("block_index", "drop"))
        index = strict_json.get_int(doc, "block_index", path, minimum=0)
        drop = doc["drop"]
        if not (isinstance(drop, dict) and len(drop) == 1):
            raise SchemaError(f"{path}.drop", "expected exactly one of variant, kernel, group_size")
        (key, value), = drop.items()
        if key == "variant":
            try:
                value = IbnVariant(value)
            except ValueError:
                raise SchemaError(f"{path}.drop.variant", f"unknown variant {value!r}") from None
        elif key in ("kernel", "group_size"):
            if isinstance(value, bool) or not isinstance(value, int):
                raise SchemaError(f"{path}.drop.{key}", "expected an integer")
        else:
            raise SchemaError(f"{path}.drop.{key}", "unknown field")
        return cls(index, key, value)


_FILTER_MENUS = {"variant": "variants", "kernel": "kernels", "group_size": "group_sizes"}


def apply_block_filters(space: SearchSpace, rules) -> SearchSpace:
    """Drop menu entries per rule. Raises if any block's menu becomes empty."""
    blocks = list(space.blocks)
    for rule in rules:
        if isinstance(rule, dict):
            rule = BlockFilter.from_dict(rule)
        if not 0 <= rule.block_index < len(blocks):
            raise ValidationError(f"filter references block {rule.block_index}, space has {len(blocks)}")
        b = blocks[rule.block_index]
        menu_name = _FILTER_MENUS[rule.field]
        menu = getattr(b, menu_name)
        kept = tuple(v for v in menu if v != rule.value)
        if not kept:
            raise ValidationError(f"block {rule.block_index}: dropping {rule.field}={_show(rule.value)} empties the menu")
        blocks[rule.block_index] = replace(b, **{menu_name: kept})
    try:
        out = replace(space, blocks=tuple(blocks), warnings=())
    except ValidationError as exc:
        raise ValidationError(f"filters leave no valid candidate: {exc}") from exc
    _check_blocks_nonempty(out)
    return out


def _check_blocks_nonempty(space):
    for i in range(len(space.blocks)):
        if all(not space.combos(j, i) for j in range(len(space.multipliers))):
            raise ValidationError(f"block {i}: no valid choice combination remains")


def _show(v):
    return v.value if isinstance(v, IbnVariant) else v


# -- documents -------------------------------------------------------------------

_BLOCK_FIELDS = ("variants", "kernels", "expansions", "group_sizes", "stride", "allow_residual")


def _list(doc, key, path):
    value = doc[key]
    if not isinstance(value, list) or not value:
        raise SchemaError(f"{path}.{key}", "expected a non-empty list")
    return value


def _parse_block(doc, path, min_group_size, warnings):
    strict_json.check_fields(doc, path, ("out_c",), _BLOCK_FIELDS)
    kwargs = {"out_c": strict_json.get_int(doc, "out_c", path, minimum=1)}
    if "stride" in doc:
        kwargs["stride"] = strict_json.get_int(doc, "stride", path)
        if kwargs["stride"] not in (1, 2):
            raise SchemaError(f"{path}.stride", "must be 1 or 2")
    if "allow_residual" in doc:
        kwargs["allow_residual"] = strict_json.get_bool(doc, "allow_residual", path)
    if "variants" in doc:
        variants = []
        for i, v in enumerate(_list(doc, "variants", path)):
            try:
                variants.append(IbnVariant(v))
            except ValueError:
                raise SchemaError(f"{path}.variants[{i}]", f"unknown variant {v!r}") from None
        kwargs["variants"] = _dedup(variants, f"{path}.variants")
    if "kernels" in doc:
        kernels = _list(doc, "kernels", path)
        for i, k in enumerate(kernels):
            if isinstance(k, bool) or not isinstance(k, int) or k < 1 or k % 2 == 0:
                raise SchemaError(f"{path}.kernels[{i}]", f"kernel size must be odd and positive, got {k!r}")
        kwargs["kernels"] = _dedup(kernels, f"{path}.kernels")
    if "expansions" in doc:
        exps = [strict_json.to_fraction(e, f"{path}.expansions[{i}]") for i, e in enumerate(_list(doc, "expansions", path))]
        if any(e <= 0 for e in exps):
            raise SchemaError(f"{path}.expansions", "expansions must be positive")
        kwargs["expansions"] = _dedup(exps, f"{path}.expansions")
    if "group_sizes" in doc:
        sizes = _list(doc, "group_sizes", path)
        for i, s in enumerate(sizes):
            if isinstance(s, bool) or not isinstance(s, int) or s < 1:
                raise SchemaError(f"{path}.group_sizes[{i}]", f"expected a positive integer, got {s!r}")
        kept = []
        for s in _dedup(sizes, f"{path}.group_sizes"):
            if s < min_group_size:
                warnings.append(f"{path}: group size {s} < minimum {min_group_size}, pruned")
            else:
                kept.append(s)
        kwargs["group_sizes"] = tuple(kept)
    block = BlockChoices(**kwargs)
    if any(v.uses_group_conv for v in block.variants) and not block.group_sizes:
        raise SchemaError(f"{path}.group_sizes", f"no group size >= {min_group_size} left for the group-conv variants")
    return block


def _dedup(values, path):
    seen = []
    for v in values:
        if v in seen:
            raise SchemaError(path, f"duplicate entry {_show(v)!r}")
        seen.append(v)
    return tuple(seen)


def parse_space(doc) -> SearchSpace:
    """Build a validated space from a document (dict or JSON text)."""
    if isinstance(doc, str):
        doc = strict_json.loads(doc)
    strict_json.check_fields(doc, "", ("input", "blocks"), ("name", "stem", "multipliers", "min_group_size"))
    shape = TensorShape(*strict_json.shape_from_json(doc["input"], "input"))
    min_gs = strict_json.get_int(doc, "min_group_size", "", minimum=1, optional=True) or MIN_GROUP_SIZE
    stem = None
    if doc.get("stem") is not None:
        sd = doc["stem"]
        strict_json.check_fields(sd, "stem", ("out_c",), ("k", "stride"))
        stem = StemSpec(
            strict_json.get_int(sd, "out_c", "stem", minimum=1),
            strict_json.get_int(sd, "k", "stem", minimum=1) if "k" in sd else 3,
            strict_json.get_int(sd, "stride", "stem", minimum=1) if "stride" in sd else 2,
        )
        if stem.k % 2 == 0 or stem.stride not in (1, 2):
            raise SchemaError("stem", "kernel must be odd and stride 1 or 2")
    mults = DEFAULT_MULTIPLIERS
    if "multipliers" in doc:
        mults = tuple(strict_json.to_fraction(m, f"multipliers[{i}]") for i, m in enumerate(_list(doc, "multipliers", "")))
        if any(m <= 0 for m in mults):
            raise SchemaError("multipliers", "multipliers must be positive")
        mults = _dedup(mults, "multipliers")
    if not isinstance(doc["blocks"], list) or not doc["blocks"]:
        raise SchemaError("blocks", "expected a non-empty list")
    warnings = []
    blocks = tuple(_parse_block(b, f"blocks[{i}]", min_gs, warnings) for i, b in enumerate(doc["blocks"]))
    name = doc.get("name", "space")
    if not isinstance(name, str):
        raise SchemaError("name", "expected a string")
    space = SearchSpace(shape, blocks, stem, mults, min_gs, name)
    for i in range(len(blocks)):
        dead = [str(space.multipliers[j]) for j in range(len(mults)) if not space.combos(j, i)]
        if dead:
            warnings.append(f"blocks[{i}]: no valid combination at multiplier(s) {', '.join(dead)}")
    _check_blocks_nonempty(space)
    for w in warnings:
        log.warning(w)
    return replace(space, warnings=tuple(warnings))


def space_to_dict(space: SearchSpace) -> dict:
    frac = strict_json.fraction_to_json
    doc = {"name": space.name, "input": space.input.as_list()}
    if space.stem:
        doc["stem"] = {"out_c": space.stem.out_c, "k": space.stem.k, "stride": space.stem.stride}
    doc["multipliers"] = [frac(m) for m in space.multipliers]
    doc["min_group_size"] = space.min_group_size
    doc["blocks"] = [
        {
            "out_c": b.out_c,
            "stride": b.stride,
            "variants": [v.value for v in b.variants],
            "kernels": list(b.kernels),
            "expansions": [frac(e) for e in b.expansions],
            "group_sizes": list(b.group_sizes),
            "allow_residual": b.allow_residual,
        }
        for b in space.blocks
    ]
    return doc


def load_space(path) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        return parse_space(fh.read())
