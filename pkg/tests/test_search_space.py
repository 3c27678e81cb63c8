import itertools
import json
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from nas_forge.core_ir import IbnSpec, IbnVariant, TensorShape, validate_block, validate_model
from nas_forge.errors import SchemaError, ValidationError
from nas_forge.search_space import (
    BlockChoices, BlockFilter, Candidate, SearchSpace, apply_block_filters, enumerate_space, expansion_splits,
    load_space, materialize, mutate, parse_space, sample_random, scale_channels, space_size, space_to_dict,
)

from conftest import CONFIGS
from oracles import round8

DW, FUSED, GEN, GC = IbnVariant.DEPTHWISE_IBN, IbnVariant.FUSED_IBN, IbnVariant.GENERALIZED_GC_IBN, IbnVariant.GC_IBN


def three_block_doc(**over):
    doc = {
        "input": [32, 32, 16],
        "blocks": [
            {"out_c": 16, "variants": ["DepthwiseIbn", "FusedIbn"], "kernels": [3, 5], "expansions": [3, 6]},
            {"out_c": 24, "stride": 2, "variants": ["DepthwiseIbn", "FusedIbn"], "kernels": [3, 5], "expansions": [3, 6]},
            {"out_c": 32, "stride": 2, "variants": ["DepthwiseIbn", "FusedIbn"], "kernels": [3, 5], "expansions": [3, 6]},
        ],
    }
    doc.update(over)
    return doc


def brute_force_count(space):
    """Materialise every raw menu combination independently and keep the valid ones."""
    total = 0
    for mult in space.multipliers:
        per_block = []
        c = space.stem.out_c if space.stem else space.input.c
        for b in space.blocks:
            out_c = round8(b.out_c, mult)
            n = 0
            for v, k, m in itertools.product(b.variants, b.kernels, b.expansions):
                res = b.allow_residual and b.stride == 1 and c == out_c
                specs = []
                if v in (DW, FUSED):
                    specs = [IbnSpec(v, c, out_c, k, b.stride, m, use_residual=res)]
                else:
                    splits = [(None, None)] if v is GC else [
                        (d, int(m) // d) for d in range(1, int(m) + 1) if m.denominator == 1 and int(m) % d == 0]
                    for (sn, sp), gs in itertools.product(splits, b.group_sizes):
                        gc_in = c * (sn or 1)
                        if gc_in % gs:
                            continue
                        specs.append(IbnSpec(v, c, out_c, k, b.stride, m, n=sn, p=sp, g=gc_in // gs, use_residual=res))
                n += sum(1 for s in specs if not validate_block(s, space.min_group_size))
            per_block.append(n)
            c = out_c
        prod = 1
        for n in per_block:
            prod *= n
        total += prod
    return total


# -- parsing -------------------------------------------------------------------------------


def test_parse_three_blocks_and_size():
    s = parse_space(three_block_doc())
    assert len(s.blocks) == 3 and len(s.multipliers) == 5
    assert space_size(s) == 8 ** 3 * 5 == 2560


def test_single_choice_space_size_one():
    s = parse_space({"input": [8, 8, 8], "multipliers": [1],
                     "blocks": [{"out_c": 8, "variants": ["DepthwiseIbn"], "kernels": [3], "expansions": [3]}]})
    assert space_size(s) == 1 and list(enumerate_space(s)) == [Candidate(((0, 0, 0, None, None),), 0)]


def test_small_group_sizes_pruned_with_warning():
    doc = three_block_doc()
    doc["blocks"][0] = {"out_c": 64, "variants": ["GcIbn", "DepthwiseIbn"], "group_sizes": [16, 32]}
    doc["input"] = [16, 16, 64]
    s = parse_space(doc)
    assert s.blocks[0].group_sizes == (32,)
    assert any("group size 16" in w for w in s.warnings)


def test_group_size_menu_emptied_is_error():
    doc = three_block_doc()
    doc["blocks"][0] = {"out_c": 64, "variants": ["GcIbn"], "group_sizes": [16]}
    with pytest.raises(SchemaError, match=r"blocks\[0\]\.group_sizes"):
        parse_space(doc)


def test_duplicate_field_names_path():
    text = json.dumps(three_block_doc())
    text = text.replace('"out_c": 24,', '"out_c": 24, "out_c": 25,', 1)
    with pytest.raises(SchemaError, match=r"blocks\[1\]\.out_c"):
        parse_space(text)


@pytest.mark.parametrize("mutation,where", [
    (lambda d: d["blocks"][0].update(kernels=[4]), r"blocks\[0\]\.kernels\[0\]"),
    (lambda d: d["blocks"][2].update(color="red"), r"blocks\[2\]\.color"),
    (lambda d: d["blocks"][1].update(variants=["DualIbn"]), r"blocks\[1\]\.variants\[0\]"),
    (lambda d: d.update(multipliers=[0]), "multipliers"),
    (lambda d: d["blocks"][0].update(kernels=[3, 3]), r"blocks\[0\]\.kernels"),
])
def test_schema_errors_have_paths(mutation, where):
    doc = three_block_doc()
    mutation(doc)
    with pytest.raises(SchemaError, match=where):
        parse_space(doc)


def test_round_trip():
    for path in ("tiny_space.json", "classification_space.json"):
        s = load_space(CONFIGS / path)
        assert parse_space(json.dumps(space_to_dict(s))) == s


# -- counting --------------------------------------------------------------------------------


@pytest.mark.parametrize("path", ["tiny_space.json"])
def test_space_size_matches_enumeration(path):
    s = load_space(CONFIGS / path)
    cands = list(enumerate_space(s))
    assert len(cands) == len(set(cands)) == space_size(s) == brute_force_count(s) == 512


def test_space_size_with_pruning_and_multipliers():
    doc = {
        "input": [16, 16, 64], "multipliers": ["1/2", 1, "3/2"],
        "blocks": [
            {"out_c": 64, "variants": ["GcIbn", "GeneralizedGcIbn", "DepthwiseIbn"], "kernels": [3],
             "expansions": [3, 6], "group_sizes": [32, 64]},
            {"out_c": 96, "stride": 2, "variants": ["GcIbn", "FusedIbn"], "kernels": [3, 5], "expansions": [3],
             "group_sizes": [64]},
        ],
    }
    s = parse_space(doc)
    assert space_size(s) == len(list(enumerate_space(s))) == brute_force_count(s)
    assert space_size(s) < 3 * 18 * 4  # raw menus; GcIbn in block 1 dies at 1/2


def test_scale_channels_examples():
    assert scale_channels(64, Fraction(1, 2)) == 32
    assert scale_channels(88, Fraction(3, 4)) == 64
    assert scale_channels(8, Fraction(1, 4)) == 8


@given(st.integers(1, 2000), st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1), Fraction(2)]))
def test_scale_channels_oracle(c, m):
    assert scale_channels(c, m) == round8(c, m)


def test_expansion_splits():
    assert expansion_splits(Fraction(6)) == ((1, 6), (2, 3), (3, 2), (6, 1))
    assert expansion_splits(Fraction(3, 2)) == ()


# -- sampling and mutation ---------------------------------------------------------------------------

CLASSIFICATION = load_space(CONFIGS / "classification_space.json")
TINY = load_space(CONFIGS / "tiny_space.json")


def test_sample_deterministic():
    assert sample_random(CLASSIFICATION, 42) == sample_random(CLASSIFICATION, 42)
    assert len({sample_random(CLASSIFICATION, s) for s in range(20)}) > 1


def test_uniform_over_four_combos():
    s = parse_space({"input": [8, 8, 8], "multipliers": [1],
                     "blocks": [{"out_c": 8, "variants": ["DepthwiseIbn", "FusedIbn"], "kernels": [3, 5], "expansions": [3]}]})
    assert space_size(s) == 4
    counts = Counter(sample_random(s, seed) for seed in range(10000))
    assert len(counts) == 4
    assert all(abs(n / 10000 - 0.25) <= 0.05 for n in counts.values())


def test_closure_1000_samples():
    for seed in range(1000):
        c = sample_random(CLASSIFICATION, seed)
        child = mutate(c, CLASSIFICATION, seed + 1)
        for cand in (c, child):
            model = materialize(cand, CLASSIFICATION)
            assert validate_model(model, CLASSIFICATION.min_group_size) == []


def _diff(a, b):
    out = []
    if a.multiplier != b.multiplier:
        out.append("multiplier")
    out += [i for i, (x, y) in enumerate(zip(a.blocks, b.blocks)) if x != y]
    return out


@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_mutation_changes_at_most_one_parameter(s1, s2):
    parent = sample_random(CLASSIFICATION, s1)
    child = mutate(parent, CLASSIFICATION, s2)
    assert CLASSIFICATION.is_valid(child)
    d = _diff(parent, child)
    assert len(d) <= 1
    if d and d[0] != "multiplier":
        a, b = parent.blocks[d[0]], child.blocks[d[0]]
        changed = [f for f in range(5) if a[f] != b[f]]
        # a variant switch may fill in (or clear) the group size / split it implies
        assert len(changed) == 1 or (changed[0] == 0 and set(changed) <= {0, 3, 4})
    assert mutate(parent, CLASSIFICATION, s2) == child


def test_mutate_single_choice_space_unchanged():
    s = parse_space({"input": [8, 8, 8], "multipliers": [1],
                     "blocks": [{"out_c": 8, "variants": ["DepthwiseIbn"], "kernels": [3], "expansions": [3]}]})
    c = sample_random(s, 0)
    assert mutate(c, s, 1) == c


def test_materialize_identity_block():
    s = parse_space({"input": [14, 14, 64], "multipliers": [1],
                     "blocks": [{"out_c": 64, "variants": ["DepthwiseIbn"], "kernels": [3], "expansions": [6]}]})
    model = materialize(sample_random(s, 0), s)
    assert model.blocks == (IbnSpec(DW, 64, 64, 3, 1, 6, use_residual=True),)


def test_materialize_applies_multiplier():
    s = parse_space({"input": [14, 14, 64], "multipliers": ["1/2"],
                     "blocks": [{"out_c": 64, "variants": ["DepthwiseIbn"], "kernels": [3], "expansions": [6]}]})
    model = materialize(sample_random(s, 0), s)
    assert model.blocks[0].out_c == 32 and not model.blocks[0].use_residual


def test_materialize_rejects_foreign_candidate():
    with pytest.raises(ValidationError):
        materialize(Candidate(((9, 9, 9, None, None),) * 3, 0), TINY)


# -- filters -------------------------------------------------------------------------------------


def test_filter_drops_variant_in_one_block():
    rule = BlockFilter.from_dict({"block_index": 5, "drop": {"variant": "FusedIbn"}})
    out = apply_block_filters(CLASSIFICATION, [rule])
    assert FUSED not in out.blocks[5].variants
    assert all(out.blocks[i] == CLASSIFICATION.blocks[i] for i in range(len(out.blocks)) if i != 5)
    assert space_size(out) < space_size(CLASSIFICATION)


def test_empty_rules_identity():
    assert apply_block_filters(CLASSIFICATION, []) == CLASSIFICATION


def test_filter_emptying_menu_names_block():
    rules = [{"block_index": 0, "drop": {"variant": "DepthwiseIbn"}}, {"block_index": 0, "drop": {"variant": "FusedIbn"}}]
    with pytest.raises(ValidationError, match="block 0"):
        apply_block_filters(TINY, rules)


def test_filter_document_validation():
    with pytest.raises(SchemaError):
        BlockFilter.from_dict({"block_index": 0, "drop": {"stride": 2}})
    with pytest.raises(ValidationError):
        apply_block_filters(TINY, [{"block_index": 7, "drop": {"kernel": 3}}])
    rule = BlockFilter(1, "kernel", 5)
    assert BlockFilter.from_dict(rule.to_dict()) == rule


def test_block_choices_validation():
    with pytest.raises(ValidationError):
        BlockChoices(8, variants=())
    with pytest.raises(ValidationError):
        SearchSpace(TensorShape(8, 8, 8), ())
