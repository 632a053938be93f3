"""Rule-based variation operators for the adaptive search."""

from __future__ import annotations

import math
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from ..design import BLOCK, COMPLETE, CYCLIC, ArrayDirective, DirectiveConfig, HlsDesign, LoopDirective
from ..qor import QoR, UnitReport, unit_accesses
from ..space import DesignSpace, contains, repair

# divergent candidates whose estimated II lower bound exceeds this are discarded
MAX_ESTIMATED_II = 4
DEFAULT_PORTS = 2


class Bottleneck(str, Enum):
    COMPUTE = "compute_bound"
    MEMORY = "memory_bound"


def execution_units(design: HlsDesign, config: DirectiveConfig) -> list[str]:
    """Loops that are scheduled as one unit: pipelined loops and unpipelined leaves.

    Loops below a pipelined loop are absorbed into it and never listed.
    """
    out = []

    def walk(name: str) -> None:
        lp = design.loop(name)
        if config.loop(name).pipeline or lp.is_leaf:
            out.append(name)
            return
        for ch in lp.children:
            walk(ch.name)

    for top in design.loops:
        walk(top.name)
    return out


def _total_iterations(design: HlsDesign, config: DirectiveConfig) -> int:
    total = 0
    for name in execution_units(design, config):
        n = 1
        for loop in [name, *design.ancestors(name)]:
            n *= math.ceil(design.loop(loop).trip_count / max(1, config.loop(loop).unroll))
        total += n
    return total


def classify_bottleneck(
    design: HlsDesign,
    config: DirectiveConfig,
    qor: QoR,
    introspection: Sequence[UnitReport] | None = None,
    pipeline_depth: int = 4,
) -> Bottleneck:
    if not qor.valid:
        raise ValueError("cannot classify an invalid design")
    if introspection is not None:
        memory = any(u.ii > 1 and u.memory_limited for u in introspection)
    else:
        per_iter = qor.latency / max(1, _total_iterations(design, config))
        memory = qor.bram > qor.dsp and per_iter > pipeline_depth
    return Bottleneck.MEMORY if memory else Bottleneck.COMPUTE


def next_unroll(domain: Iterable[int], current: int) -> int | None:
    """Smallest domain value that unrolls strictly more than ``current``."""
    eff = max(1, current)
    bigger = [v for v in domain if max(1, v) > eff]
    return min(bigger) if bigger else None


def _units_by_priority(
    design: HlsDesign, config: DirectiveConfig, introspection: Sequence[UnitReport] | None
) -> list[str]:
    if introspection is not None:
        ranked = sorted(enumerate(introspection), key=lambda p: (-p[1].contribution, p[0]))
        return [u.loop for _, u in ranked]
    units = execution_units(design, config)
    order = {n: i for i, n in enumerate(design.loop_names)}
    # without a model: deepest, then largest trip count
    return sorted(units, key=lambda n: (-design.site(n).depth, -design.loop(n).trip_count, order[n]))


def smallest_at_least(domain: Iterable[int], need: int) -> int:
    dom = sorted(domain)
    for v in dom:
        if v >= need:
            return v
    return dom[-1]


def match_partitions(
    design: HlsDesign, space: DesignSpace, config: DirectiveConfig, unit: str
) -> dict[str, ArrayDirective]:
    """Partition every array touched by ``unit`` so its factor covers the unit's parallel accesses."""
    acc = unit_accesses(design, config, design.loop(unit))
    need: dict[str, tuple[int, int]] = {}
    for (arr, dim), n in acc.items():
        if arr not in need or n > need[arr][1]:
            need[arr] = (dim, n)
    out = {}
    for arr, (dim, n) in need.items():
        adom = space.array(arr)
        if dim not in adom.dims:
            continue
        cur = config.array(arr)
        if n <= 1:
            continue
        if cur.type == COMPLETE and cur.dim == dim:
            continue
        t = cur.type if cur.type != COMPLETE else CYCLIC
        if t not in adom.types:
            t = CYCLIC if CYCLIC in adom.types else adom.types[-1]
        if t == COMPLETE:
            out[arr] = ArrayDirective(COMPLETE, dim, 0)
        else:
            out[arr] = ArrayDirective(t, dim, smallest_at_least(adom.factor_domain(dim), n))
    return out


def convergent_children(
    design: HlsDesign,
    space: DesignSpace,
    parent: DirectiveConfig,
    bottleneck: Bottleneck,
    introspection: Sequence[UnitReport] | None = None,
) -> list[DirectiveConfig]:
    """Oriented refinements of one parent; only the coordinates the rule names are touched."""
    units = _units_by_priority(design, parent, introspection)
    children: list[DirectiveConfig] = []
    if bottleneck is Bottleneck.COMPUTE:
        for name in units:
            nxt = next_unroll(space.loop(name).unroll, parent.loop(name).unroll)
            if nxt is not None:
                d = parent.loop(name)
                children.append(parent.replace(loops={name: LoopDirective(d.pipeline, nxt)}))
                break
    else:
        if introspection is not None:
            limited = {u.loop for u in introspection if u.ii > 1 and u.memory_limited}
            units = [u for u in units if u in limited] or units
        target = units[0]
        fixed = parent.replace(arrays=match_partitions(design, space, parent, target))
        children.append(fixed)
        # coarse-grained pipelining: pipeline the unit if it is not, else move one level out
        piped = parent.loop(target).pipeline
        outer = target if not piped else design.site(target).parent
        if outer is not None and 1 in space.loop(outer).pipeline:
            moves = {outer: LoopDirective(1, parent.loop(outer).unroll)}
            if piped:
                moves[target] = LoopDirective(0, parent.loop(target).unroll)
            moved = parent.replace(loops=moves)
            children.append(moved.replace(arrays=match_partitions(design, space, moved, outer)))

    out = []
    for c in children:
        c = repair(space, c)
        if c != parent and contains(space, c) and c not in out:
            out.append(c)
    return out


def convergent_search(
    design: HlsDesign,
    space: DesignSpace,
    parents: Sequence[tuple[DirectiveConfig, Bottleneck, Sequence[UnitReport] | None]],
) -> list[DirectiveConfig]:
    """Children of all parents, interleaved round-robin (first child of each parent first)."""
    per_parent = [convergent_children(design, space, cfg, b, intro) for cfg, b, intro in parents]
    return _round_robin(per_parent)


def _round_robin(groups: Sequence[Sequence[DirectiveConfig]]) -> list[DirectiveConfig]:
    out: list[DirectiveConfig] = []
    seen: set[DirectiveConfig] = set()
    depth = max((len(g) for g in groups), default=0)
    for k in range(depth):
        for g in groups:
            if k < len(g) and g[k] not in seen:
                seen.add(g[k])
                out.append(g[k])
    return out


# --- divergent -----------------------------------------------------------------


def power_of_two_unrolls(domain: Iterable[int]) -> list[int]:
    return [v for v in domain if v >= 1 and v & (v - 1) == 0]


def estimated_ii(design: HlsDesign, config: DirectiveConfig, ports: int = DEFAULT_PORTS) -> int:
    """Lower bound on the worst initiation interval from partition bandwidth alone."""
    worst = 1
    for unit in execution_units(design, config):
        for (arr, dim), n in unit_accesses(design, config, design.loop(unit)).items():
            a = config.array(arr)
            if a.dim != dim:
                f = 1
            elif a.type == COMPLETE:
                f = design.array(arr).size(dim)
            else:
                f = max(1, a.factor)
            worst = max(worst, math.ceil(n / (f * ports)))
    return worst


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(x != y for x, y in zip(a, b))


def divergent_candidate(
    design: HlsDesign,
    space: DesignSpace,
    parent: DirectiveConfig,
    rng: np.random.Generator,
    large_trip_threshold: int = 64,
) -> DirectiveConfig:
    loops = {}
    for s in design.loop_sites:
        name, lp = s.loop.name, s.loop
        dom = space.loop(name)
        if lp.is_leaf:
            pipe = 1 if 1 in dom.pipeline else dom.pipeline[0]
        else:
            pipe = 0 if 0 in dom.pipeline else dom.pipeline[0]
        pow2 = power_of_two_unrolls(dom.unroll)
        if (not lp.is_leaf and lp.trip_count > large_trip_threshold) or not pow2:
            unroll = 0
        else:
            unroll = int(rng.choice(pow2))
        loops[name] = LoopDirective(pipe, unroll)
    cfg = parent.replace(loops=loops)

    need: dict[str, tuple[int, int]] = {}
    for unit in execution_units(design, cfg):
        for (arr, dim), n in unit_accesses(design, cfg, design.loop(unit)).items():
            if dim in space.array(arr).dims and (arr not in need or n > need[arr][1]):
                need[arr] = (dim, n)
    chosen = {}
    for arr, (dim, n) in need.items():
        adom = space.array(arr)
        size = design.array(arr).size(dim)
        if size <= n and COMPLETE in adom.types:
            chosen[arr] = ArrayDirective(COMPLETE, dim, 0)
            continue
        kinds = [t for t in (CYCLIC, BLOCK) if t in adom.types] or list(adom.types)
        t = kinds[0] if len(kinds) == 1 or rng.random() < 0.75 else kinds[1]
        if t == COMPLETE:
            chosen[arr] = ArrayDirective(COMPLETE, dim, 0)
            continue
        # any factor between a quarter of the accesses and the full access count
        fdom = [f for f in adom.factor_domain(dim) if f >= 1]
        lo = smallest_at_least(fdom, max(1, n // 4)) if fdom else 0
        hi = smallest_at_least(fdom, n) if fdom else 0
        opts = [f for f in fdom if lo <= f <= hi] or [hi]
        chosen[arr] = ArrayDirective(t, dim, int(rng.choice(opts)))
    return repair(space, cfg.replace(arrays=chosen))


def divergent_search(
    design: HlsDesign,
    space: DesignSpace,
    parents: Sequence[DirectiveConfig],
    seen: set[DirectiveConfig],
    count: int,
    seed: int,
    large_trip_threshold: int = 64,
    attempts_per_child: int = 30,
) -> list[DirectiveConfig]:
    """Novel candidates: ≥2 coordinates away from every parent and absent from ``seen``."""
    from ..sampling import uniform_config

    rng = np.random.default_rng(seed)
    parent_vecs = [p.as_vector(design) for p in parents]
    taken = set(seen)
    out: list[DirectiveConfig] = []

    def novel(c: DirectiveConfig) -> bool:
        if c in taken or not contains(space, c):
            return False
        v = c.as_vector(design)
        return all(hamming(v, pv) >= 2 for pv in parent_vecs)

    k = 0
    while parents and len(out) < count and k < attempts_per_child * count:
        parent = parents[k % len(parents)]
        k += 1
        cand = divergent_candidate(design, space, parent, rng, large_trip_threshold)
        if estimated_ii(design, cand) > MAX_ESTIMATED_II or not novel(cand):
            continue
        taken.add(cand)
        out.append(cand)

    # backfill with uniform draws under the same novelty filter
    k = 0
    while len(out) < count and k < attempts_per_child * count:
        k += 1
        cand = uniform_config(space, rng)
        if novel(cand):
            taken.add(cand)
            out.append(cand)
    return out
