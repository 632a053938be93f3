"""Initial-population samplers over a design space.

All samplers share one coordinate system: loops in declaration order
contribute (pipeline, unroll), then arrays contribute (type, dim, factor).
Continuous coordinates in [0, 1] map to a domain by index rounding, so the
non-uniform divisor sets are treated as ordered categories.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Iterator, Sequence

import numpy as np

from .design import COMPLETE, ArrayDirective, DirectiveConfig, HlsDesign, LoopDirective
from .space import DesignSpace, contains, iter_members, member_count, repair

if TYPE_CHECKING:
    from .advisor import Advisor

log = logging.getLogger(__name__)

KINDS = ("random", "beta", "lhs", "warm_start")
OBJECTIVES = ("performance", "resource", "balanced")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "lhs"
    n: int = 12
    seed: int = 0
    alpha: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("sample count must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass
class SampleSet(Sequence[DirectiveConfig]):
    configs: list[DirectiveConfig]
    coords: np.ndarray | None = None  # pre-rounding unit coordinates, one row per draw
    exhausted: bool = False  # fewer than n distinct points exist or could be drawn
    degraded: bool = False  # advisor failed and the fallback sampler produced the set
    notes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.configs)

    def __getitem__(self, i):  # type: ignore[override]
        return self.configs[i]

    def __iter__(self) -> Iterator[DirectiveConfig]:
        return iter(self.configs)


def n_dims(space: DesignSpace) -> int:
    return 2 * len(space.loop_domains) + 3 * len(space.array_domains)


def _pick(domain: Sequence[int], x: float) -> int:
    return domain[int(round(x * (len(domain) - 1)))]


def config_from_unit(space: DesignSpace, x: Sequence[float]) -> DirectiveConfig:
    """Map one point of the unit hypercube onto the space."""
    it = iter(x)
    loops = {}
    for name, dom in space.loop_domains.items():
        loops[name] = LoopDirective(_pick(dom.pipeline, next(it)), _pick(dom.unroll, next(it)))
    arrays = {}
    for name, adom in space.array_domains.items():
        t = _pick(adom.types, next(it))
        d = _pick(adom.dims, next(it))
        f = _pick(adom.factor_domain(d), next(it))
        arrays[name] = ArrayDirective(t, d, 0 if t == COMPLETE else f)
    return DirectiveConfig.build(loops, arrays)


def uniform_config(space: DesignSpace, rng: np.random.Generator) -> DirectiveConfig:
    def choose(dom: Sequence[int]) -> int:
        return dom[int(rng.integers(len(dom)))]

    loops = {n: LoopDirective(choose(d.pipeline), choose(d.unroll)) for n, d in space.loop_domains.items()}
    arrays = {}
    for name, adom in space.array_domains.items():
        t, d = choose(adom.types), choose(adom.dims)
        f = choose(adom.factor_domain(d))
        arrays[name] = ArrayDirective(t, d, 0 if t == COMPLETE else f)
    return DirectiveConfig.build(loops, arrays)


def _unique_draws(
    space: DesignSpace, n: int, draw: Callable[[], tuple[DirectiveConfig, np.ndarray | None]]
) -> SampleSet:
    if member_count(space) <= n:
        members = list(iter_members(space))
        return SampleSet(members, exhausted=len(members) < n)
    seen: set[DirectiveConfig] = set()
    configs, rows = [], []
    for _ in range(10 * n):
        cfg, row = draw()
        if cfg in seen:
            continue
        seen.add(cfg)
        configs.append(cfg)
        rows.append(row)
        if len(configs) == n:
            break
    coords = np.array(rows) if rows and rows[0] is not None else None
    out = SampleSet(configs, coords, exhausted=len(configs) < n)
    if out.exhausted:
        log.warning("only %d distinct configurations drawn out of %d requested", len(configs), n)
    return out


def random_sample(space: DesignSpace, spec: SamplerSpec) -> SampleSet:
    rng = np.random.default_rng(spec.seed)
    return _unique_draws(space, spec.n, lambda: (uniform_config(space, rng), None))


def beta_draws(alpha: float, size: int | tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Symmetric Beta(alpha, alpha) draws; alpha < 1 piles mass at both ends of [0, 1]."""
    return rng.beta(alpha, alpha, size=size)


def beta_sample(space: DesignSpace, spec: SamplerSpec) -> SampleSet:
    rng = np.random.default_rng(spec.seed)
    d = n_dims(space)

    def draw() -> tuple[DirectiveConfig, np.ndarray]:
        x = beta_draws(spec.alpha, d, rng)
        return config_from_unit(space, x), x

    return _unique_draws(space, spec.n, draw)


def lhs_unit(
    n: int,
    d: int,
    rng: np.random.Generator | None = None,
    *,
    perms: np.ndarray | None = None,
    offsets: np.ndarray | None = None,
) -> np.ndarray:
    """Latin hypercube in [0, 1]^d: row i, column j is (perm_j(i) - u_ij) / n.

    ``perms`` holds permutations of 1..n column-wise; ``offsets`` the u_ij.
    """
    if perms is None or offsets is None:
        rng = rng if rng is not None else np.random.default_rng()
    if perms is None:
        perms = np.column_stack([rng.permutation(n) + 1 for _ in range(d)]) if d else np.zeros((n, 0))
    if offsets is None:
        offsets = rng.uniform(size=(n, d))
    return (np.asarray(perms, dtype=float) - np.asarray(offsets, dtype=float)) / n


def lhs_sample(space: DesignSpace, spec: SamplerSpec) -> SampleSet:
    """One configuration per hypercube row; rounding may merge rows, duplicates are kept."""
    rng = np.random.default_rng(spec.seed)
    coords = lhs_unit(spec.n, n_dims(space), rng)
    return SampleSet([config_from_unit(space, row) for row in coords], coords)


def split_objectives(n: int) -> dict[str, int]:
    third = n // 3
    return {"performance": third, "resource": third, "balanced": n - 2 * third}


def warm_start(advisor: Advisor, space: DesignSpace, design: HlsDesign, spec: SamplerSpec) -> SampleSet:
    from .advisor import AdvisorError

    fallback = replace(spec, kind="lhs")
    configs: list[DirectiveConfig] = []
    seen: set[DirectiveConfig] = set()
    try:
        for objective, count in split_objectives(spec.n).items():
            if count == 0:
                continue
            for cfg in advisor.seed_directives(design, space, objective, count)[:count]:
                cfg = repair(space, cfg)
                if contains(space, cfg) and cfg not in seen:
                    seen.add(cfg)
                    configs.append(cfg)
    except AdvisorError as e:
        log.warning("advisor failed (%s); falling back to LHS", e)
        out = lhs_sample(space, fallback)
        out.degraded = True
        out.notes.append(f"advisor failure: {e}")
        return out

    out = SampleSet(configs)
    shortfall = spec.n - len(configs)
    if shortfall > 0:
        out.notes.append(f"backfilled {shortfall} configurations by LHS")
        for k in range(10):
            for cfg in lhs_sample(space, replace(fallback, n=spec.n, seed=spec.seed + k)):
                if cfg not in seen and len(configs) < spec.n:
                    seen.add(cfg)
                    configs.append(cfg)
            if len(configs) == spec.n:
                break
        out.exhausted = len(configs) < spec.n
    return out


def sample(space: DesignSpace, spec: SamplerSpec, design: HlsDesign | None = None, advisor: Advisor | None = None) -> SampleSet:
    if spec.kind == "random":
        return random_sample(space, spec)
    if spec.kind == "beta":
        return beta_sample(space, spec)
    if spec.kind == "lhs":
        return lhs_sample(space, spec)
    if design is None or advisor is None:
        raise ValueError("warm_start needs a design and an advisor")
    return warm_start(advisor, space, design, spec)
