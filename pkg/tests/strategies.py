"""Hypothesis strategies and brute-force oracles shared by the test modules."""

from hypothesis import strategies as st

from hlsdse.design import ArrayDirective, ArrayInfo, DirectiveConfig, HlsDesign, LoopDirective, LoopInfo
from hlsdse.space import DesignSpace

TRIPS = st.sampled_from([1, 2, 3, 4, 6, 7, 8, 12, 16, 32, 64, 100, 128, 256])


@st.composite
def designs(draw, max_loops: int = 5, max_arrays: int = 3):
    n_arrays = draw(st.integers(1, max_arrays))
    arrays = tuple(
        ArrayInfo(f"a{i}", tuple(draw(st.lists(TRIPS, min_size=1, max_size=2)))) for i in range(n_arrays)
    )
    counter = iter(range(1000))

    def access():
        out = []
        for a in draw(st.lists(st.sampled_from(arrays), max_size=2, unique_by=lambda a: a.name)):
            out.append((a.name, draw(st.integers(1, len(a.dims)))))
        return tuple(out)

    def loop(depth: int) -> LoopInfo:
        name = f"L{next(counter)}"
        trip = draw(TRIPS)
        n_kids = draw(st.integers(0, 2)) if depth < 3 else 0
        kids = tuple(loop(depth + 1) for _ in range(n_kids))
        perfect = len(kids) <= 1 and draw(st.booleans())
        return LoopInfo(name, trip, kids, perfect, access())

    tops = tuple(loop(1) for _ in range(draw(st.integers(1, 2))))
    return HlsDesign(draw(st.sampled_from(["k", "kern", "top_fn"])), tops, arrays)


@st.composite
def configs_in(draw, space: DesignSpace):
    loops = {
        n: LoopDirective(draw(st.sampled_from(d.pipeline)), draw(st.sampled_from(d.unroll)))
        for n, d in space.loop_domains.items()
    }
    arrays = {n: ArrayDirective(*draw(st.sampled_from(d.members()))) for n, d in space.array_domains.items()}
    return DirectiveConfig.build(loops, arrays)


@st.composite
def raw_configs(draw, design: HlsDesign, max_value: int = 300):
    """Arbitrary (possibly out-of-space) configurations over the design's sites."""
    loops = {
        n: LoopDirective(draw(st.integers(0, 1)), draw(st.integers(0, max_value))) for n in design.loop_names
    }
    arrays = {
        a.name: ArrayDirective(draw(st.integers(0, 2)), draw(st.integers(1, len(a.dims))), draw(st.integers(0, max_value)))
        for a in design.arrays
    }
    return DirectiveConfig.build(loops, arrays)


def brute_dominates(a, b) -> bool:
    return all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b))


def brute_peel(points):
    """Front layers by repeated removal of the non-dominated set, O(n^3)."""
    left = list(range(len(points)))
    fronts = []
    while left:
        layer = [i for i in left if not any(brute_dominates(points[j], points[i]) for j in left if j != i)]
        fronts.append(sorted(layer))
        left = [i for i in left if i not in layer]
    return fronts


def brute_divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]
