"""Plain NSGA-II over directive vectors, used as the comparison baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..design import DirectiveConfig, HlsDesign
from ..pareto import Objectives, RankedDesign, label
from ..qor import QorBackend
from ..sampling import uniform_config
from ..space import DesignSpace, contains, repair
from .explore import Trajectory, evaluate_into, manage_population


@dataclass(frozen=True)
class BaselineParams:
    n0: int = 12
    generations: int = 8
    crossover_prob: float = 0.9
    mutation_prob: float = 0.3

    def __post_init__(self) -> None:
        if self.n0 < 1 or self.generations < 0:
            raise ValueError("n0 must be positive and generations non-negative")
        for p in (self.crossover_prob, self.mutation_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def budget(self) -> int:
        return self.n0 * (1 + self.generations)


def _tournament(pop: Sequence[RankedDesign], rng: np.random.Generator) -> RankedDesign:
    a, b = pop[int(rng.integers(len(pop)))], pop[int(rng.integers(len(pop)))]
    if (a.rank, -a.crowding) <= (b.rank, -b.crowding):
        return a
    return b


def _mutate(design: HlsDesign, space: DesignSpace, vec: list[int], prob: float, rng: np.random.Generator) -> bool:
    """Resample each coordinate from its domain with probability ``prob``; True if anything was drawn."""
    hit = False

    def draw(dom: Sequence[int]) -> int:
        return int(dom[int(rng.integers(len(dom)))])

    k = 0
    for name in design.loop_names:
        dom = space.loop(name)
        for j, values in enumerate((dom.pipeline, dom.unroll)):
            if rng.random() < prob:
                vec[k + j], hit = draw(values), True
        k += 2
    for name in design.array_names:
        adom = space.array(name)
        if rng.random() < prob:
            vec[k], hit = draw(adom.types), True
        if rng.random() < prob:
            vec[k + 1], hit = draw(adom.dims), True
        if rng.random() < prob:
            dim = vec[k + 1] if vec[k + 1] in adom.dims else adom.dims[0]
            vec[k + 2], hit = draw(adom.factor_domain(dim)), True
        k += 3
    return hit


def baseline_nsga2(
    design: HlsDesign,
    space: DesignSpace,
    backend: QorBackend,
    init: Sequence[DirectiveConfig],
    params: BaselineParams | None = None,
    seed: int = 0,
) -> tuple[list[tuple[DirectiveConfig, Objectives]], Trajectory]:
    p = params or BaselineParams()
    rng = np.random.default_rng(seed)
    traj = Trajectory(design)
    population = manage_population(
        evaluate_into(traj, backend, 0, [(repair(space, c), "warm", ()) for c in init]), p.n0
    )

    for gen in range(1, p.generations + 1):
        labeled = label([(e.config, e.qor.objectives()) for e in population])
        offspring: list[tuple[DirectiveConfig, str, tuple[int, ...]]] = []
        taken: set[DirectiveConfig] = set()

        def offer(cfg: DirectiveConfig, tag: str, parents: tuple[int, ...]) -> None:
            cfg = repair(space, cfg)
            if len(offspring) < p.n0 and cfg not in traj and cfg not in taken and contains(space, cfg):
                taken.add(cfg)
                offspring.append((cfg, tag, parents))

        for _ in range(20 * p.n0):
            if len(offspring) >= p.n0:
                break
            if not labeled:
                # nothing valid to breed from: explore uniformly
                offer(uniform_config(space, rng), "mutation", ())
                continue
            a, b = _tournament(labeled, rng), _tournament(labeled, rng)
            ids = (traj.index_of(a.config), traj.index_of(b.config))
            va, vb = list(a.config.as_vector(design)), list(b.config.as_vector(design))
            crossed = rng.random() < p.crossover_prob
            if crossed:
                mask = rng.random(len(va)) < 0.5
                va, vb = [y if m else x for x, y, m in zip(va, vb, mask)], [x if m else y for x, y, m in zip(va, vb, mask)]
            for child in (va, vb):
                mutated = _mutate(design, space, child, p.mutation_prob, rng)
                tag = "mutation" if mutated and not crossed else "crossover"
                offer(DirectiveConfig.from_vector(design, child), tag, ids)

        if not offspring:
            continue
        new = evaluate_into(traj, backend, gen, offspring)
        population = manage_population([*population, *new], p.n0)

    return traj.front(), traj
