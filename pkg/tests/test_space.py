import itertools
import math

import pytest
from hypothesis import given, strategies as st

from hlsdse.design import COMPLETE, CYCLIC, ArrayInfo, DirectiveConfig, HlsDesign, LoopInfo
from hlsdse.space import (
    PruneError,
    PruneRule,
    PruneRuleSet,
    build_space,
    cardinality,
    contains,
    divisors,
    iter_members,
    member_count,
    nearest,
    prune,
    repair,
    rule_imperfect_parent,
    rule_outer_pipeline,
    rule_outermost_unroll,
    rule_sibling_unroll,
    rule_unroll_cap,
    rules_from_dict,
    rules_to_dict,
    space_from_dict,
    space_to_dict,
)
from strategies import brute_divisors, configs_in, designs, raw_configs


@given(st.integers(1, 5000))
def test_divisors_match_brute_force(n):
    assert divisors(n) == brute_divisors(n)


def test_unroll_domains(vector_mul):
    space = build_space(vector_mul)
    assert space.loop("mul").unroll == (0, 1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024)
    assert space.array("A").factor_domain(1) == (0, *brute_divisors(1024))
    prime = HlsDesign("p", (LoopInfo("l", 7),), ())
    assert build_space(prime).loop("l").unroll == (0, 1, 7)


def test_vector_mul_cardinality(vector_mul):
    # |pipeline| * |unroll| * (|type| * |dim| * |factor|)^3
    assert cardinality(build_space(vector_mul)) == 2 * 12 * (3 * 1 * 12) ** 3 == 1119744


def brute_cardinality(space) -> int:
    n = 1
    for d in space.loop_domains.values():
        n *= len(list(itertools.product(d.pipeline, d.unroll)))
    for a in space.array_domains.values():
        n *= len([(t, d, f) for t in a.types for d in a.dims for f in a.factor_domain(d)])
    return n


@given(designs())
def test_cardinality_matches_product(design):
    space = build_space(design)
    assert cardinality(space) == brute_cardinality(space)
    pruned = prune(space, design)
    assert cardinality(pruned) == brute_cardinality(pruned)


@given(designs())
def test_pruning_only_shrinks(design):
    before, after = build_space(design), prune(build_space(design), design)
    assert cardinality(after) <= cardinality(before)
    for name, d in after.loop_domains.items():
        assert set(d.pipeline) <= set(before.loop(name).pipeline)
        assert set(d.unroll) <= set(before.loop(name).unroll)
        assert 0 in d.unroll
    for name, a in after.array_domains.items():
        for dim in a.dims:
            assert 0 in a.factor_domain(dim)


def test_gemm_chain_rules(gemm):
    space = prune(build_space(gemm), gemm)
    assert space.loop("i").unroll == (0,)
    assert space.loop("i").pipeline == (0,)
    # j's sub-nest is one 64-trip loop: neither deep nor above the threshold
    assert space.loop("j").pipeline == (0, 1)
    assert space.loop("k").pipeline == (0, 1)


def test_flat_loop_only_capped(vector_mul):
    before = build_space(vector_mul)
    after = prune(before, vector_mul)
    assert after.loop("mul").unroll == tuple(u for u in before.loop("mul").unroll if u <= 64)
    assert after.loop("mul").pipeline == (0, 1)
    assert after.array_domains == before.array_domains


class TestNestRules:
    """Each built-in rule shrinks its target domain on the four-loop imperfect nest."""

    def test_a_outer_pipeline(self, gemm_poly):
        before = build_space(gemm_poly)
        after = rule_outer_pipeline(before, gemm_poly, PruneRuleSet())
        assert after.loop("i").pipeline == (0,)  # nest depth 3
        assert after.loop("k").pipeline == (0,)  # inner trip 128 > 64
        assert after.loop("j2").pipeline == (0, 1)
        assert cardinality(after) < cardinality(before)

    def test_b_outermost_unroll(self, gemm_poly):
        after = rule_outermost_unroll(build_space(gemm_poly), gemm_poly, PruneRuleSet())
        assert after.loop("i").unroll == (0,)
        assert len(after.loop("k").unroll) > 1

    def test_c_sibling_unroll(self):
        design = HlsDesign(
            "two", (LoopInfo("o", 8, (LoopInfo("x", 4), LoopInfo("y", 4)), False),), ()
        )
        before = build_space(design)
        after = rule_sibling_unroll(before, design, PruneRuleSet())
        assert before.loop("o").unroll != (0,)
        assert after.loop("o").unroll == (0,)

    def test_c_on_fixture(self, gemm_poly):
        after = rule_sibling_unroll(build_space(gemm_poly), gemm_poly, PruneRuleSet())
        assert after.loop("i").unroll == (0,)

    def test_d_imperfect_parent(self, gemm_poly):
        before = build_space(gemm_poly)
        after = rule_imperfect_parent(before, gemm_poly, PruneRuleSet())
        assert after.loop("j1").unroll == (0,)
        assert after.loop("k").unroll == (0,)
        assert after.loop("j2").unroll == before.loop("j2").unroll

    def test_e_unroll_cap(self, gemm_poly):
        after = rule_unroll_cap(build_space(gemm_poly), gemm_poly, PruneRuleSet(max_unroll_cap=16))
        assert after.loop("j2").unroll == (0, 1, 2, 4, 8, 16)
        assert after.loop("i").unroll == (0, *brute_divisors(64))  # 64 is not above the threshold

    def test_full_prune_cardinality(self, gemm_poly):
        space = prune(build_space(gemm_poly), gemm_poly)
        # i: pipe{0} x unroll{0}; j1, k: pipe{0,1}/{0} x {0}; j2: pipe{0,1} x {0,1..64}
        loops = (1 * 1) * (2 * 1) * (1 * 1) * (2 * 8)
        a = 3 * (len(brute_divisors(64)) + 1 + len(brute_divisors(128)) + 1)
        b = 3 * 2 * (len(brute_divisors(128)) + 1)
        assert cardinality(space) == loops * a * b * a


def test_outer_pipeline_halves_two_deep_subspace():
    design = HlsDesign("n", (LoopInfo("o", 8, (LoopInfo("i", 128),)),), ())
    before = build_space(design)
    after = rule_outer_pipeline(before, design, PruneRuleSet())
    assert 2 * after.loop("o").size == before.loop("o").size


def test_custom_rules(vector_mul):
    rules = PruneRuleSet(
        custom_rules=(
            PruneRule("mul", "unroll", "restrict", (0, 2, 4, 8)),
            PruneRule("A", "type", "remove", (COMPLETE,)),
        )
    )
    space = prune(build_space(vector_mul), vector_mul, rules)
    assert space.loop("mul").unroll == (0, 2, 4, 8)
    assert space.array("A").types == (1, 2)


@pytest.mark.parametrize(
    "rule",
    [
        PruneRule("nope", "unroll", "remove", (2,)),
        PruneRule("mul", "pipeline", "restrict", (7,)),
        PruneRule("mul", "unroll", "remove", (0,)),
        PruneRule("A", "factor", "restrict", (2,)),
        PruneRule("A", "colour", "remove", (1,)),
    ],
)
def test_bad_custom_rules(vector_mul, rule):
    with pytest.raises(PruneError):
        prune(build_space(vector_mul), vector_mul, PruneRuleSet(custom_rules=(rule,)))


def test_thresholds_must_be_positive():
    with pytest.raises(PruneError):
        PruneRuleSet(max_unroll_cap=0)


def test_contains_examples(vector_mul):
    space = build_space(vector_mul)
    assert contains(space, DirectiveConfig.build({"mul": (1, 4)}, {"A": (CYCLIC, 1, 8)}))
    assert not contains(space, DirectiveConfig.build({"mul": (0, 3)}))
    assert not contains(space, DirectiveConfig.build(arrays={"A": (COMPLETE, 1, 4)}))
    with pytest.raises(KeyError):
        contains(space, DirectiveConfig.build({"zz": (1, 0)}))


def test_repair_examples():
    assert nearest(3, (0, 1, 2, 4)) == 2
    assert nearest(6, (0, 1, 2, 4, 8)) == 4
    assert nearest(100, (0, 1, 2)) == 2
    design = HlsDesign("r", (LoopInfo("l", 4),), (ArrayInfo("x", (8,)),))
    space = build_space(design)
    fixed = repair(space, DirectiveConfig.build({"l": (1, 3)}, {"x": (COMPLETE, 1, 4)}))
    assert fixed.loop("l").unroll == 2
    assert fixed.array("x").factor == 0
    ok = DirectiveConfig.build({"l": (1, 4)}, {"x": (CYCLIC, 1, 2)})
    assert repair(space, ok) == ok


@given(st.data())
def test_repair_lands_in_space_and_is_idempotent(data):
    design = data.draw(designs(max_loops=3))
    space = prune(build_space(design), design)
    cfg = data.draw(raw_configs(design))
    fixed = repair(space, cfg)
    assert contains(space, fixed)
    assert repair(space, fixed) == fixed


@given(st.data())
def test_members_respect_divisibility(data):
    design = data.draw(designs(max_loops=3))
    space = prune(build_space(design), design)
    cfg = data.draw(configs_in(space))
    assert contains(space, cfg)
    for name in design.loop_names:
        u = cfg.loop(name).unroll
        assert u == 0 or design.loop(name).trip_count % u == 0
    for a in design.arrays:
        d = cfg.array(a.name)
        assert d.factor == 0 or a.size(d.dim) % d.factor == 0


def test_member_enumeration_matches_count():
    design = HlsDesign("m", (LoopInfo("l", 4),), (ArrayInfo("x", (4, 2)),))
    space = build_space(design)
    members = list(iter_members(space))
    assert len(members) == member_count(space) == len(set(members))
    assert all(contains(space, m) for m in members)
    # complete partitions only exist with factor 0, so members are fewer than the product
    assert member_count(space) < cardinality(space)


def test_serialization_round_trip(gemm_poly):
    space = prune(build_space(gemm_poly), gemm_poly)
    assert space_from_dict(space_to_dict(space)) == space
    rules = PruneRuleSet(32, 16, 2, (PruneRule("i", "pipeline", "restrict", (0,)),))
    assert rules_from_dict(rules_to_dict(rules)) == rules
