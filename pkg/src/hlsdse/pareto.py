"""Two-objective Pareto machinery (latency, utilization; both minimized) and ADRS."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from .design import DirectiveConfig

INF = math.inf  # boundary crowding sentinel; compares above every finite distance


class Objectives(NamedTuple):
    latency: float
    util: float


@dataclass(frozen=True)
class UtilWeights:
    w_lut: float = 0.3
    w_ff: float = 0.25
    w_dsp: float = 0.3
    w_bram: float = 0.05

    def __post_init__(self) -> None:
        if min(self.w_lut, self.w_ff, self.w_dsp, self.w_bram) < 0:
            raise ValueError("utilization weights must be non-negative")


def utilization(lut: float, ff: float, dsp: float, bram: float, w: UtilWeights | None = None) -> float:
    w = w or UtilWeights()
    return w.w_lut * lut + w.w_ff * ff + w.w_dsp * dsp + w.w_bram * bram


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


def non_dominated_sort(pop: Sequence[Sequence[float]]) -> list[list[int]]:
    """Front layers as lists of indices (ascending within a layer)."""
    n = len(pop)
    if n == 0:
        return []
    pts = np.asarray(pop, dtype=float).reshape(n, 2)
    le = (pts[:, None, :] <= pts[None, :, :]).all(axis=2)
    lt = (pts[:, None, :] < pts[None, :, :]).any(axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    counts = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(counts == 0)
    while current.size:
        fronts.append(current.tolist())
        counts = counts - dom[current].sum(axis=0)
        counts[current] = -1
        current = np.flatnonzero(counts == 0)
    return fronts


def crowding_distance(front: Sequence[Sequence[float]]) -> list[float]:
    n = len(front)
    if n <= 2:
        return [INF] * n
    pts = np.asarray(front, dtype=float).reshape(n, 2)
    dist = np.zeros(n)
    for m in range(2):
        col = pts[:, m]
        lo, hi = col.min(), col.max()
        if hi == lo:
            continue
        norm = (col - lo) / (hi - lo)
        order = np.argsort(norm, kind="stable")
        dist[order[0]] = INF
        dist[order[-1]] = INF
        dist[order[1:-1]] += norm[order[2:]] - norm[order[:-2]]
    return dist.tolist()


@dataclass(frozen=True)
class RankedDesign:
    config: DirectiveConfig
    objectives: Objectives
    rank: int
    crowding: float


def label(pop: Sequence[tuple[DirectiveConfig, Objectives]]) -> list[RankedDesign]:
    """Rank and crowding labels, in input order."""
    objs = [o for _, o in pop]
    out: list[RankedDesign | None] = [None] * len(pop)
    for r, layer in enumerate(non_dominated_sort(objs), start=1):
        cd = crowding_distance([objs[i] for i in layer])
        for i, c in zip(layer, cd):
            out[i] = RankedDesign(pop[i][0], objs[i], r, c)
    return out  # type: ignore[return-value]


def _by_priority(idx: list[int], pop: Sequence[RankedDesign]) -> list[int]:
    return sorted(idx, key=lambda i: (-pop[i].crowding, i))


def select_elites(pop: Sequence[RankedDesign], k: int, rank2_quota: int = 3) -> list[RankedDesign]:
    if k >= len(pop):
        order = sorted(range(len(pop)), key=lambda i: (pop[i].rank, -pop[i].crowding, i))
        return [pop[i] for i in order]
    rank1 = _by_priority([i for i, d in enumerate(pop) if d.rank == 1], pop)
    rank2 = _by_priority([i for i, d in enumerate(pop) if d.rank == 2], pop)
    reserved = min(rank2_quota, len(rank2), k)
    chosen = rank1[: min(k - reserved, len(rank1))]
    chosen += rank2[: min(rank2_quota, k - len(chosen))]
    if len(chosen) < k:
        taken = set(chosen)
        rest = sorted(
            (i for i in range(len(pop)) if i not in taken),
            key=lambda i: (pop[i].rank, -pop[i].crowding, i),
        )
        chosen += rest[: k - len(chosen)]
    return [pop[i] for i in chosen]


def pareto_front(
    evals: Iterable[tuple[DirectiveConfig, Objectives]],
) -> list[tuple[DirectiveConfig, Objectives]]:
    """Rank-1 designs sorted by latency; repeated objective vectors keep the first config."""
    unique: dict[tuple[float, float], DirectiveConfig] = {}
    for cfg, obj in evals:
        unique.setdefault((float(obj[0]), float(obj[1])), cfg)
    items = list(unique.items())
    if not items:
        return []
    layer = non_dominated_sort([k for k, _ in items])[0]
    front = [(items[i][1], Objectives(*items[i][0])) for i in layer]
    return sorted(front, key=lambda p: (p[1].latency, p[1].util))


def adrs(explored: Sequence[Sequence[float]], reference: Sequence[Sequence[float]]) -> float:
    if len(reference) == 0:
        raise ValueError("reference front is empty")
    ref = np.asarray(reference, dtype=float).reshape(-1, 2)
    if (ref <= 0).any():
        raise ValueError("reference objectives must be strictly positive")
    if len(explored) == 0:
        return INF
    exp = np.asarray(explored, dtype=float).reshape(-1, 2)
    rel = (exp[None, :, :] - ref[:, None, :]) / ref[:, None, :]
    d = np.maximum(rel.max(axis=2), 0.0)
    return float(d.min(axis=1).mean())


# --- front files -----------------------------------------------------------------


class FrontFormatError(ValueError):
    pass


def front_to_csv(rows: Iterable[tuple[float, float, str]], meta: dict[str, Any] | None = None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["latency", "util", "config_id"])
    for lat, util, cid in rows:
        w.writerow([repr(float(lat)) if not float(lat).is_integer() else int(lat), repr(float(util)), cid])
    return buf.getvalue()


def read_front_csv(text: str) -> list[tuple[float, float, str]]:
    rows = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cells = next(csv.reader([line]))
        if not header_seen:
            if [c.strip() for c in cells[:2]] != ["latency", "util"]:
                raise FrontFormatError(f"line {lineno}: expected header 'latency,util,config_id'")
            header_seen = True
            continue
        try:
            lat, util = float(cells[0]), float(cells[1])
        except (ValueError, IndexError):
            raise FrontFormatError(f"line {lineno}: malformed row {line!r}") from None
        rows.append((lat, util, cells[2] if len(cells) > 2 else ""))
    if not header_seen:
        raise FrontFormatError("line 1: missing header")
    return rows


def front_to_json(rows: Iterable[tuple[float, float, str]]) -> str:
    return json.dumps([{"latency": a, "util": b, "config_id": c} for a, b, c in rows], indent=2)
