"""Directive design space: divisor-based domains, rule-driven pruning, membership."""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterator, Mapping, Sequence

from .design import (
    COMPLETE,
    ArrayDirective,
    DirectiveConfig,
    HlsDesign,
    LoopDirective,
)

LOOP_FIELDS = ("pipeline", "unroll")
ARRAY_FIELDS = ("type", "dim", "factor")


class PruneError(ValueError):
    pass


def divisors(n: int) -> list[int]:
    small, large = [], []
    for d in range(1, math.isqrt(n) + 1):
        if n % d == 0:
            small.append(d)
            if d != n // d:
                large.append(n // d)
    return small + large[::-1]


@dataclass(frozen=True)
class LoopDomain:
    pipeline: tuple[int, ...] = (0, 1)
    unroll: tuple[int, ...] = (0, 1)

    @property
    def size(self) -> int:
        return len(self.pipeline) * len(self.unroll)


@dataclass(frozen=True)
class ArrayDomain:
    types: tuple[int, ...]
    dims: tuple[int, ...]
    # partition factors are legal per dimension: each must divide that dimension's size
    factors: Mapping[int, tuple[int, ...]]

    def factor_domain(self, dim: int) -> tuple[int, ...]:
        return self.factors.get(dim, (0,))

    @property
    def size(self) -> int:
        return len(self.types) * sum(len(self.factor_domain(d)) for d in self.dims)

    def members(self) -> list[tuple[int, int, int]]:
        """Legal (type, dim, factor) triples; complete partitioning only with factor 0."""
        out = []
        for t in self.types:
            for d in self.dims:
                if t == COMPLETE:
                    out.append((t, d, 0))
                else:
                    out.extend((t, d, f) for f in self.factor_domain(d))
        return out


@dataclass(frozen=True)
class DesignSpace:
    loop_domains: Mapping[str, LoopDomain]
    array_domains: Mapping[str, ArrayDomain]

    @property
    def cardinality(self) -> int:
        return cardinality(self)

    def loop(self, name: str) -> LoopDomain:
        return self.loop_domains[name]

    def array(self, name: str) -> ArrayDomain:
        return self.array_domains[name]

    def with_loop(self, name: str, **changes: tuple[int, ...]) -> DesignSpace:
        loops = dict(self.loop_domains)
        loops[name] = replace(loops[name], **changes)
        return DesignSpace(loops, self.array_domains)

    def with_array(self, name: str, dom: ArrayDomain) -> DesignSpace:
        arrays = dict(self.array_domains)
        arrays[name] = dom
        return DesignSpace(self.loop_domains, arrays)


def build_space(design: HlsDesign) -> DesignSpace:
    loops = {
        s.loop.name: LoopDomain((0, 1), (0, *divisors(s.loop.trip_count))) for s in design.loop_sites
    }
    arrays = {
        a.name: ArrayDomain(
            (0, 1, 2),
            tuple(range(1, len(a.dims) + 1)),
            {d + 1: (0, *divisors(size)) for d, size in enumerate(a.dims)},
        )
        for a in design.arrays
    }
    return DesignSpace(loops, arrays)


def cardinality(space: DesignSpace) -> int:
    n = 1
    for dom in space.loop_domains.values():
        n *= dom.size
    for adom in space.array_domains.values():
        n *= adom.size
    return n


# --- pruning -------------------------------------------------------------------


@dataclass(frozen=True)
class PruneRule:
    site: str
    field: str
    action: str  # "remove" | "restrict"
    values: tuple[int, ...]

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> PruneRule:
        try:
            rule = cls(str(doc["site"]), str(doc["field"]), str(doc["action"]), tuple(int(v) for v in doc["values"]))
        except (KeyError, TypeError, ValueError) as e:
            raise PruneError(f"malformed rule descriptor {doc!r}") from e
        if rule.action not in ("remove", "restrict"):
            raise PruneError(f"unknown rule action {rule.action!r}")
        return rule

    def to_dict(self) -> dict[str, Any]:
        return {"site": self.site, "field": self.field, "action": self.action, "values": list(self.values)}


@dataclass(frozen=True)
class PruneRuleSet:
    large_trip_threshold: int = 64
    max_unroll_cap: int = 64
    outer_pipeline_disable_depth: int = 3
    custom_rules: tuple[PruneRule, ...] = field(default=())

    def __post_init__(self) -> None:
        if min(self.large_trip_threshold, self.max_unroll_cap, self.outer_pipeline_disable_depth) < 1:
            raise PruneError("rule thresholds must be >= 1")


def rule_outer_pipeline(space: DesignSpace, design: HlsDesign, rules: PruneRuleSet) -> DesignSpace:
    """(a) Pipelining a loop fully unrolls everything below it; forbid that for deep or large sub-nests."""
    for s in design.loop_sites:
        if s.loop.is_leaf:
            continue
        deep = design.nest_depth(s.loop.name) >= rules.outer_pipeline_disable_depth
        large = design.inner_trip_count(s.loop.name) > rules.large_trip_threshold
        if deep or large:
            space = space.with_loop(s.loop.name, pipeline=(0,))
    return space


def rule_outermost_unroll(space: DesignSpace, design: HlsDesign, rules: PruneRuleSet) -> DesignSpace:
    """(b) No unrolling of the outermost loop of a multilayer nest."""
    for top in design.loops:
        if design.nest_depth(top.name) >= 2:
            space = space.with_loop(top.name, unroll=(0,))
    return space


def rule_sibling_unroll(space: DesignSpace, design: HlsDesign, rules: PruneRuleSet) -> DesignSpace:
    """(c) Loops whose body holds several sub-loops are not unrolled."""
    for s in design.loop_sites:
        if len(s.loop.children) >= 2:
            space = space.with_loop(s.loop.name, unroll=(0,))
    return space


def rule_imperfect_parent(space: DesignSpace, design: HlsDesign, rules: PruneRuleSet) -> DesignSpace:
    """(d) Loops nested directly in an imperfect loop are not unrolled."""
    for s in design.loop_sites:
        if s.parent is not None and not design.loop(s.parent).is_perfect:
            space = space.with_loop(s.loop.name, unroll=(0,))
    return space


def rule_unroll_cap(space: DesignSpace, design: HlsDesign, rules: PruneRuleSet) -> DesignSpace:
    """(e) Cap unroll factors of large-trip loops."""
    for s in design.loop_sites:
        if s.loop.trip_count > rules.large_trip_threshold:
            dom = space.loop(s.loop.name).unroll
            space = space.with_loop(s.loop.name, unroll=tuple(u for u in dom if u <= rules.max_unroll_cap))
    return space


BUILTIN_RULES = (
    rule_outer_pipeline,
    rule_outermost_unroll,
    rule_sibling_unroll,
    rule_imperfect_parent,
    rule_unroll_cap,
)


def _shrink(dom: tuple[int, ...], rule: PruneRule) -> tuple[int, ...]:
    if rule.action == "remove":
        return tuple(v for v in dom if v not in rule.values)
    return tuple(v for v in dom if v in rule.values)


def apply_custom_rule(space: DesignSpace, design: HlsDesign, rule: PruneRule) -> DesignSpace:
    if design.has_loop(rule.site):
        if rule.field not in LOOP_FIELDS:
            raise PruneError(f"loop rule on unknown field {rule.field!r}")
        new = _shrink(getattr(space.loop(rule.site), rule.field), rule)
        if rule.field == "unroll" and 0 not in new:
            raise PruneError(f"rule {rule.to_dict()} would remove the default unroll value 0")
        if not new:
            raise PruneError(f"rule {rule.to_dict()} empties the {rule.field} domain")
        return space.with_loop(rule.site, **{rule.field: new})
    if design.has_array(rule.site):
        dom = space.array(rule.site)
        if rule.field == "type":
            new_dom = replace(dom, types=_shrink(dom.types, rule))
            if not new_dom.types:
                raise PruneError(f"rule {rule.to_dict()} empties the type domain")
        elif rule.field == "dim":
            new_dom = replace(dom, dims=_shrink(dom.dims, rule))
            if not new_dom.dims:
                raise PruneError(f"rule {rule.to_dict()} empties the dim domain")
        elif rule.field == "factor":
            factors = {d: _shrink(f, rule) for d, f in dom.factors.items()}
            if any(0 not in f for f in factors.values()):
                raise PruneError(f"rule {rule.to_dict()} would remove the default factor 0")
            new_dom = replace(dom, factors=factors)
        else:
            raise PruneError(f"array rule on unknown field {rule.field!r}")
        return space.with_array(rule.site, new_dom)
    raise PruneError(f"rule references unknown site {rule.site!r}")


def prune(space: DesignSpace, design: HlsDesign, rules: PruneRuleSet | None = None) -> DesignSpace:
    rules = rules or PruneRuleSet()
    for rule_fn in BUILTIN_RULES:
        space = rule_fn(space, design, rules)
    for rule in rules.custom_rules:
        space = apply_custom_rule(space, design, rule)
    return space


# --- membership ---------------------------------------------------------------


def contains(space: DesignSpace, config: DirectiveConfig) -> bool:
    for name, d in config.loops:
        if name not in space.loop_domains:
            raise KeyError(f"unknown loop {name!r}")
    for name, a in config.arrays:
        if name not in space.array_domains:
            raise KeyError(f"unknown array {name!r}")
    for name, dom in space.loop_domains.items():
        d = config.loop(name)
        if d.pipeline not in dom.pipeline or d.unroll not in dom.unroll:
            return False
    for name, adom in space.array_domains.items():
        a = config.array(name)
        if a.type not in adom.types or a.dim not in adom.dims:
            return False
        if a.type == COMPLETE:
            if a.factor != 0:
                return False
        elif a.factor not in adom.factor_domain(a.dim):
            return False
    return True


def nearest(value: int, domain: Sequence[int]) -> int:
    """Closest domain member, ties toward the smaller one."""
    dom = sorted(domain)
    i = bisect.bisect_left(dom, value)
    if i < len(dom) and dom[i] == value:
        return value
    if i == 0:
        return dom[0]
    if i == len(dom):
        return dom[-1]
    lo, hi = dom[i - 1], dom[i]
    return lo if value - lo <= hi - value else hi


def repair(space: DesignSpace, config: DirectiveConfig) -> DirectiveConfig:
    loops = {}
    for name, dom in space.loop_domains.items():
        d = config.loop(name)
        loops[name] = LoopDirective(nearest(d.pipeline, dom.pipeline), nearest(d.unroll, dom.unroll))
    arrays = {}
    for name, adom in space.array_domains.items():
        a = config.array(name)
        t = nearest(a.type, adom.types)
        dim = nearest(a.dim, adom.dims)
        f = 0 if t == COMPLETE else nearest(a.factor, adom.factor_domain(dim))
        arrays[name] = ArrayDirective(t, dim, f)
    for name, _ in config.loops:
        if name not in loops:
            raise KeyError(f"unknown loop {name!r}")
    for name, _ in config.arrays:
        if name not in arrays:
            raise KeyError(f"unknown array {name!r}")
    return DirectiveConfig.build(loops, arrays)


def _distinct_unrolls(dom: LoopDomain) -> list[int]:
    # unroll 1 and 0 both mean "not unrolled" and build the same directive
    return list(dict.fromkeys(0 if u == 1 else u for u in dom.unroll))


def iter_members(space: DesignSpace) -> Iterator[DirectiveConfig]:
    """Every distinct configuration accepted by :func:`contains`, in a fixed order."""
    loop_names = list(space.loop_domains)
    array_names = list(space.array_domains)
    loop_choices = [list(itertools.product(d.pipeline, _distinct_unrolls(d))) for d in space.loop_domains.values()]
    array_choices = [d.members() for d in space.array_domains.values()]
    for combo in itertools.product(*loop_choices, *array_choices):
        loops = {n: LoopDirective(*c) for n, c in zip(loop_names, combo)}
        arrays = {n: ArrayDirective(*c) for n, c in zip(array_names, combo[len(loop_names):])}
        yield DirectiveConfig.build(loops, arrays)


def member_count(space: DesignSpace) -> int:
    n = 1
    for d in space.loop_domains.values():
        n *= len(d.pipeline) * len(_distinct_unrolls(d))
    for a in space.array_domains.values():
        n *= len(a.members())
    return n


# --- serialization --------------------------------------------------------------


def space_to_dict(space: DesignSpace) -> dict[str, Any]:
    return {
        "cardinality": space.cardinality,
        "loops": {
            n: {"pipeline": list(d.pipeline), "unroll": list(d.unroll)} for n, d in space.loop_domains.items()
        },
        "arrays": {
            n: {
                "type": list(a.types),
                "dim": list(a.dims),
                "factor": {str(k): list(v) for k, v in a.factors.items()},
            }
            for n, a in space.array_domains.items()
        },
    }


def space_from_dict(doc: Mapping[str, Any]) -> DesignSpace:
    loops = {
        n: LoopDomain(tuple(d["pipeline"]), tuple(d["unroll"])) for n, d in doc["loops"].items()
    }
    arrays = {
        n: ArrayDomain(
            tuple(a["type"]), tuple(a["dim"]), {int(k): tuple(v) for k, v in a["factor"].items()}
        )
        for n, a in doc["arrays"].items()
    }
    return DesignSpace(loops, arrays)


def rules_to_dict(rules: PruneRuleSet) -> dict[str, Any]:
    return {
        "large_trip_threshold": rules.large_trip_threshold,
        "max_unroll_cap": rules.max_unroll_cap,
        "outer_pipeline_disable_depth": rules.outer_pipeline_disable_depth,
        "custom_rules": [r.to_dict() for r in rules.custom_rules],
    }


def rules_from_dict(doc: Mapping[str, Any]) -> PruneRuleSet:
    unknown = set(doc) - set(rules_to_dict(PruneRuleSet()))
    if unknown:
        raise PruneError(f"unknown rule set keys: {', '.join(sorted(unknown))}")
    return PruneRuleSet(
        int(doc.get("large_trip_threshold", 64)),
        int(doc.get("max_unroll_cap", 64)),
        int(doc.get("outer_pipeline_disable_depth", 3)),
        tuple(PruneRule.from_dict(r) for r in doc.get("custom_rules", [])),
    )
