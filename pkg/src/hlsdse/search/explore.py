"""Warm-started adaptive exploration with convergent and divergent operators."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..advisor import Advisor, AdvisorError, convergent_hints, divergent_hints, reflect_trajectory
from ..design import DirectiveConfig, HlsDesign, config_hash, decode_feature_vector, encode_feature_vector
from ..pareto import Objectives, RankedDesign, label, pareto_front, select_elites
from ..qor import BackendError, QoR, QorBackend, UnknownConfigError
from ..sampling import SamplerSpec, sample
from ..space import DesignSpace, contains
from .operators import classify_bottleneck, convergent_children, divergent_search, hamming

log = logging.getLogger(__name__)

TAGS = ("warm", "convergent", "divergent", "crossover", "mutation")


@dataclass(frozen=True)
class SearchParams:
    n0: int = 12
    i_max: int = 3
    pop_size: int = 12
    rank2_quota: int = 3
    convergent_fraction: float = 0.5
    seed: int = 0
    sampler: str = "warm_start"
    alpha: float = 0.1
    large_trip_threshold: int = 64

    def __post_init__(self) -> None:
        if self.n0 < 1 or self.pop_size < 1:
            raise ValueError("n0 and pop_size must be positive")
        if self.i_max < 0 or self.rank2_quota < 0:
            raise ValueError("i_max and rank2_quota must be non-negative")
        if not 0.0 <= self.convergent_fraction <= 1.0:
            raise ValueError("convergent_fraction must lie in [0, 1]")

    @property
    def budget(self) -> int:
        return self.n0 + self.i_max * self.pop_size


@dataclass(frozen=True)
class TrajectoryEntry:
    index: int
    iteration: int
    config: DirectiveConfig
    qor: QoR
    tag: str
    parents: tuple[int, ...]
    config_id: str

    def to_dict(self, design: HlsDesign) -> dict:
        return {
            "index": self.index,
            "iteration": self.iteration,
            "tag": self.tag,
            "config_id": self.config_id,
            "parents": list(self.parents),
            "config": encode_feature_vector(design, self.config),
            "qor": self.qor.to_dict(),
        }


@dataclass
class Trajectory:
    """Append-only evaluation log; a configuration can be evaluated only once."""

    design: HlsDesign
    entries: list[TrajectoryEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    _ids: dict[DirectiveConfig, int] = field(default_factory=dict, repr=False)

    def append(
        self, iteration: int, config: DirectiveConfig, qor: QoR, tag: str, parents: Sequence[int] = ()
    ) -> TrajectoryEntry:
        if tag not in TAGS:
            raise ValueError(f"unknown operator tag {tag!r}")
        if config in self._ids:
            raise ValueError("configuration already evaluated")
        e = TrajectoryEntry(
            len(self.entries), iteration, config, qor, tag, tuple(parents), config_hash(self.design, config)
        )
        self.entries.append(e)
        self._ids[config] = e.index
        return e

    def note(self, text: str) -> None:
        log.warning(text)
        self.notes.append(text)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TrajectoryEntry]:
        return iter(self.entries)

    def __contains__(self, config: object) -> bool:
        return config in self._ids

    def index_of(self, config: DirectiveConfig) -> int:
        return self._ids[config]

    @property
    def configs(self) -> set[DirectiveConfig]:
        return set(self._ids)

    def valid(self, upto: int | None = None) -> list[tuple[DirectiveConfig, Objectives]]:
        return [(e.config, e.qor.objectives()) for e in self.entries[:upto] if e.qor.valid]

    def front(self, upto: int | None = None) -> list[tuple[DirectiveConfig, Objectives]]:
        return pareto_front(self.valid(upto))

    def to_jsonl(self) -> str:
        lines = [json.dumps(e.to_dict(self.design), sort_keys=True) for e in self.entries]
        lines += [json.dumps({"note": n}) for n in self.notes]
        return "".join(line + "\n" for line in lines)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, design: HlsDesign, text: str) -> Trajectory:
        t = cls(design)
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            if "meta" in doc:
                continue
            if "note" in doc:
                t.notes.append(doc["note"])
                continue
            cfg = decode_feature_vector(design, doc["config"])
            t.append(doc["iteration"], cfg, QoR.from_dict(doc["qor"]), doc["tag"], doc["parents"])
        return t

    def digest(self) -> str:
        rows = []
        for it in sorted({e.iteration for e in self.entries}):
            batch = [e for e in self.entries if e.iteration == it]
            ok = [e.qor for e in batch if e.qor.valid]
            if ok:
                best = f"best latency {min(q.latency for q in ok)}, best util {min(q.util for q in ok):.4f}"
            else:
                best = "no valid design"
            rows.append(f"iteration {it}: {len(batch)} evaluated, {len(batch) - len(ok)} invalid, {best}")
        return "\n".join(rows)


class SearchAborted(BackendError):
    """Backend transport failure; ``trajectory`` holds everything evaluated before it."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


def evaluate_into(
    trajectory: Trajectory,
    backend: QorBackend,
    iteration: int,
    batch: Sequence[tuple[DirectiveConfig, str, Sequence[int]]],
) -> list[TrajectoryEntry]:
    """Evaluate and log a batch; unseen configurations only."""
    todo, seen = [], set()
    for cfg, tag, parents in batch:
        if cfg not in trajectory and cfg not in seen:
            seen.add(cfg)
            todo.append((cfg, tag, parents))
    try:
        results = backend.evaluate_batch(trajectory.design, [c for c, _, _ in todo])
    except (BackendError, UnknownConfigError, OSError) as e:
        raise SearchAborted(f"backend failure at iteration {iteration}: {e}", trajectory) from e
    return [trajectory.append(iteration, c, q, tag, p) for (c, tag, p), q in zip(todo, results)]


def manage_population(entries: Sequence[TrajectoryEntry], size: int) -> list[TrajectoryEntry]:
    """Environmental selection by (rank, crowding) over the valid entries."""
    valid = [e for e in entries if e.qor.valid]
    if len(valid) <= size:
        return valid
    labeled = label([(e.config, e.qor.objectives()) for e in valid])
    kept = select_elites(labeled, size, rank2_quota=0)
    by_cfg = {e.config: e for e in valid}
    return [by_cfg[d.config] for d in kept]


def _iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, iteration]).generate_state(1)[0])


def _introspection(backend: QorBackend, design: HlsDesign, cfg: DirectiveConfig):
    if backend.capabilities.introspection:
        return backend.introspect(design, cfg)  # type: ignore[attr-defined]
    return None


def explore(
    design: HlsDesign,
    space: DesignSpace,
    backend: QorBackend,
    advisor: Advisor | None,
    params: SearchParams | None = None,
) -> tuple[list[tuple[DirectiveConfig, Objectives]], Trajectory]:
    p = params or SearchParams()
    traj = Trajectory(design)

    spec = SamplerSpec(kind=p.sampler, n=p.n0, seed=p.seed, alpha=p.alpha)
    if spec.kind == "warm_start" and advisor is None:
        raise ValueError("warm_start sampling needs an advisor")
    init = sample(space, spec, design, advisor)
    for n in init.notes:
        traj.note(f"initial sampling: {n}")
    if init.degraded:
        traj.note("degraded mode: initial population drawn without the advisor")
    population = manage_population(evaluate_into(traj, backend, 0, [(c, "warm", ()) for c in init]), p.pop_size)

    n_conv = round(p.pop_size * p.convergent_fraction)
    for it in range(1, p.i_max + 1):
        labeled = label([(e.config, e.qor.objectives()) for e in population])
        elites = select_elites(labeled, p.pop_size, p.rank2_quota)
        pos = {d.config: i for i, d in enumerate(labeled)}
        elite_idx = [pos[d.config] for d in elites]

        shortlist = elite_idx
        if advisor is not None and labeled:
            try:
                picked = [i for i, _ in reflect_trajectory(advisor, design, labeled, elite_idx, traj.digest())]
                shortlist = picked or elite_idx
            except AdvisorError as e:
                traj.note(f"degraded mode: reflection failed at iteration {it} ({e})")
        parents: list[RankedDesign] = [labeled[i] for i in shortlist]
        parent_ids = [traj.index_of(d.config) for d in parents]

        # convergent pool: advisor hints first, then the rule children round-robin over parents
        classified = []
        for d in parents:
            e = traj.entries[traj.index_of(d.config)]
            intro = _introspection(backend, design, d.config)
            classified.append((d.config, classify_bottleneck(design, d.config, e.qor, intro), intro))
        conv_pool: list[tuple[DirectiveConfig, tuple[int, ...]]] = []
        if advisor is not None and classified:
            try:
                conv_pool += [(c, ()) for c in convergent_hints(advisor, design, space, classified, traj.digest())]
            except AdvisorError as e:
                traj.note(f"degraded mode: convergent hints failed at iteration {it} ({e})")
        per_parent = [convergent_children(design, space, c, b, intro) for c, b, intro in classified]
        for k in range(max((len(g) for g in per_parent), default=0)):
            for pid, g in zip(parent_ids, per_parent):
                if k < len(g):
                    conv_pool.append((g[k], (pid,)))

        batch: list[tuple[DirectiveConfig, str, Sequence[int]]] = []
        taken: set[DirectiveConfig] = set()
        for cfg, pids in conv_pool:
            if len(batch) >= n_conv:
                break
            if cfg not in traj and cfg not in taken and contains(space, cfg):
                taken.add(cfg)
                batch.append((cfg, "convergent", pids))

        n_div = p.pop_size - len(batch)
        seen = traj.configs | taken
        parent_cfgs = [d.config for d in parents]
        parent_vecs = [c.as_vector(design) for c in parent_cfgs]
        seed = _iteration_seed(p.seed, it)
        div_pool: list[DirectiveConfig] = []
        if advisor is not None and n_div > 0:
            try:
                div_pool += divergent_hints(advisor, design, space, parent_cfgs, seen, n_div, seed)
            except AdvisorError as e:
                traj.note(f"degraded mode: divergent hints failed at iteration {it} ({e})")
        div_pool += divergent_search(design, space, parent_cfgs, seen, n_div, seed, p.large_trip_threshold)
        for cfg in div_pool:
            if len(batch) >= p.pop_size:
                break
            if cfg in seen or not contains(space, cfg):
                continue
            v = cfg.as_vector(design)
            if any(hamming(v, pv) < 2 for pv in parent_vecs):
                continue
            seen.add(cfg)
            batch.append((cfg, "divergent", tuple(parent_ids)))

        if not batch:
            traj.note(f"iteration {it}: no new candidates; stopping early")
            break
        new = evaluate_into(traj, backend, it, batch)
        population = manage_population([*population, *new], p.pop_size)

    return traj.front(), traj
