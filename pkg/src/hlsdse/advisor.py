"""Advisors propose designs, pruning rules and parents; the engine validates everything they say."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Callable, Sequence

import httpx
import jsonschema

from .design import (
    BLOCK,
    CYCLIC,
    ArrayDirective,
    DesignError,
    DirectiveConfig,
    HlsDesign,
    LoopDirective,
    decode_feature_vector,
    design_from_dict,
    encode_feature_vector,
    serialize_design,
)
from .pareto import RankedDesign
from .qor import UnitReport
from .search.operators import (
    Bottleneck,
    convergent_search,
    divergent_search,
    estimated_ii,
    execution_units,
    match_partitions,
    power_of_two_unrolls,
)
from .space import DesignSpace, PruneRule, PruneRuleSet, contains, repair, space_to_dict

log = logging.getLogger(__name__)

ROLES = (
    "extract_features",
    "prune_rules",
    "seed_directives",
    "reflect_trajectory",
    "convergent_hints",
    "divergent_hints",
)

ConvergentParent = tuple[DirectiveConfig, Bottleneck, Sequence[UnitReport] | None]


class AdvisorError(RuntimeError):
    def __init__(self, role: str, message: str):
        self.role = role
        super().__init__(f"{role}: {message}")


class UnsupportedRole(AdvisorError):
    pass


class Advisor:
    """Six advisory roles. Subclasses override what they support."""

    name = "advisor"

    def extract_features(self, source_text: str) -> HlsDesign:
        raise UnsupportedRole("extract_features", f"{self.name} cannot extract features")

    def prune_rules(self, design: HlsDesign, space: DesignSpace) -> list[PruneRule]:
        return []

    def seed_directives(
        self, design: HlsDesign, space: DesignSpace, objective: str, count: int
    ) -> list[DirectiveConfig]:
        raise UnsupportedRole("seed_directives", f"{self.name} cannot seed")

    def reflect_trajectory(
        self, design: HlsDesign, population: Sequence[RankedDesign], elites: Sequence[int], digest: str
    ) -> list[tuple[int, str]]:
        return [(i, "") for i in elites]

    def convergent_hints(
        self, design: HlsDesign, space: DesignSpace, parents: Sequence[ConvergentParent], digest: str = ""
    ) -> list[DirectiveConfig]:
        return []

    def divergent_hints(
        self,
        design: HlsDesign,
        space: DesignSpace,
        parents: Sequence[DirectiveConfig],
        seen: set[DirectiveConfig],
        count: int,
        seed: int,
    ) -> list[DirectiveConfig]:
        return []


# --- guarded entry points ----------------------------------------------------------


def _admit(space: DesignSpace, configs: Sequence[DirectiveConfig]) -> list[DirectiveConfig]:
    out = []
    for c in configs:
        try:
            c = repair(space, c)
        except KeyError as e:
            log.warning("dropping advisor config with unknown site: %s", e)
            continue
        if contains(space, c) and c not in out:
            out.append(c)
    return out


def seed_directives(
    advisor: Advisor, design: HlsDesign, space: DesignSpace, objective: str, count: int
) -> list[DirectiveConfig]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return _admit(space, advisor.seed_directives(design, space, objective, count))


def reflect_trajectory(
    advisor: Advisor,
    design: HlsDesign,
    population: Sequence[RankedDesign],
    elites: Sequence[int],
    digest: str = "",
) -> list[tuple[int, str]]:
    """Advisor shortlist restricted to the elite indices; the advisor may reorder, not add."""
    if not population or not elites:
        return []
    allowed = set(elites)
    out, seen = [], set()
    for i, note in advisor.reflect_trajectory(design, population, elites, digest):
        if i in allowed and i not in seen:
            seen.add(i)
            out.append((i, note))
    return out


def extract_features(advisor: Advisor, source_text: str) -> HlsDesign:
    if not source_text.strip():
        raise ValueError("empty source text")
    return advisor.extract_features(source_text)


def convergent_hints(advisor: Advisor, design: HlsDesign, space: DesignSpace, parents, digest: str = ""):
    return _admit(space, advisor.convergent_hints(design, space, parents, digest))


def divergent_hints(advisor: Advisor, design: HlsDesign, space: DesignSpace, parents, seen, count, seed):
    return _admit(space, advisor.divergent_hints(design, space, parents, seen, count, seed))


# --- deterministic rules -----------------------------------------------------------


def _with_matched_partitions(
    design: HlsDesign, space: DesignSpace, cfg: DirectiveConfig, kind: int = CYCLIC
) -> DirectiveConfig:
    arrays: dict[str, ArrayDirective] = {}
    for unit in execution_units(design, cfg):
        for arr, d in match_partitions(design, space, cfg, unit).items():
            if kind in space.array(arr).types and d.factor:
                d = ArrayDirective(kind, d.dim, d.factor)
            if arr not in arrays or d.factor > arrays[arr].factor:
                arrays[arr] = d
    return cfg.replace(arrays=arrays)


class RuleAdvisor(Advisor):
    """Deterministic stand-in for a language model, built from the same rules as the search."""

    name = "rule"

    def __init__(self, rules: PruneRuleSet | None = None):
        self.rules = rules or PruneRuleSet()

    def _leaf_unrolls(self, space: DesignSpace, design: HlsDesign) -> dict[str, list[int]]:
        cap = self.rules.max_unroll_cap
        return {
            n: [u for u in power_of_two_unrolls(space.loop(n).unroll) if u <= cap] or [0]
            for n in design.leaves()
        }

    def _pipelined_leaves(self, space: DesignSpace, design: HlsDesign, unrolls: dict[str, int]) -> DirectiveConfig:
        loops = {}
        for n in design.leaves():
            pipe = 1 if 1 in space.loop(n).pipeline else 0
            loops[n] = LoopDirective(pipe, unrolls.get(n, 0))
        return DirectiveConfig.build(loops)

    def seed_directives(
        self, design: HlsDesign, space: DesignSpace, objective: str, count: int
    ) -> list[DirectiveConfig]:
        pow2 = self._leaf_unrolls(space, design)
        variants: list[DirectiveConfig] = []
        if objective == "performance":
            for v in range(count):
                unrolls = {n: vals[max(0, len(vals) - 1 - v)] for n, vals in pow2.items()}
                cfg = self._pipelined_leaves(space, design, unrolls)
                variants.append(_with_matched_partitions(design, space, cfg))
        elif objective == "resource":
            piped = self._pipelined_leaves(space, design, {})
            accessed = sorted({a for s in design.loop_sites for a, _ in s.loop.accessed_arrays})
            for t in (CYCLIC, BLOCK):
                variants.append(DirectiveConfig())
                variants.append(piped)
                variants.append(piped.replace(arrays={a: ArrayDirective(t, 1, 2) for a in accessed}))
            variants = [variants[i] for i in (0, 1, 2, 5)]
        elif objective == "balanced":
            for v in range(count):
                unrolls = {}
                for n, vals in pow2.items():
                    mid = (len(vals) - 1) // 2
                    # median first, then alternate below / above
                    step = (v + 1) // 2 * (-1 if v % 2 else 1)
                    unrolls[n] = vals[min(max(mid + step, 0), len(vals) - 1)]
                cfg = self._pipelined_leaves(space, design, unrolls)
                # block partitions keep this regime apart from the performance one
                variants.append(_with_matched_partitions(design, space, cfg, BLOCK))
        else:
            raise AdvisorError("seed_directives", f"unknown objective {objective!r}")
        return _admit(space, variants)[:count]

    def reflect_trajectory(self, design, population, elites, digest):
        out = []
        for i in elites:
            cfg = population[i].config
            kind = Bottleneck.MEMORY if estimated_ii(design, cfg) > 1 else Bottleneck.COMPUTE
            out.append((i, kind.value))
        return out

    def convergent_hints(self, design, space, parents, digest=""):
        return convergent_search(design, space, parents)

    def divergent_hints(self, design, space, parents, seen, count, seed):
        return divergent_search(design, space, parents, seen, count, seed, self.rules.large_trip_threshold)


# --- HTTP chat-completion advisor ----------------------------------------------------

_RECORD = {
    "type": "object",
    "required": ["name"],
    "properties": {
        "name": {"type": "string"},
        "pipeline": {"type": "integer", "minimum": 0, "maximum": 1},
        "unroll": {"type": "integer", "minimum": 0},
        "type": {"type": "integer", "minimum": 0, "maximum": 2},
        "dim": {"type": "integer", "minimum": 1},
        "factor": {"type": "integer", "minimum": 0},
    },
}
CONFIGS_SCHEMA = {"type": "array", "items": {"type": "array", "items": _RECORD}}
REFLECTION_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["index"],
        "properties": {"index": {"type": "integer", "minimum": 0}, "note": {"type": "string"}},
    },
}
RULES_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["site", "field", "action", "values"],
        "properties": {
            "site": {"type": "string"},
            "field": {"enum": ["pipeline", "unroll", "type", "dim", "factor"]},
            "action": {"enum": ["remove", "restrict"]},
            "values": {"type": "array", "items": {"type": "integer"}},
        },
    },
}
_LOOP_DOC = {
    "type": "object",
    "required": ["name", "trip_count"],
    "properties": {
        "name": {"type": "string"},
        "trip_count": {"type": "integer", "minimum": 1},
        "is_perfect": {"type": "boolean"},
        "accessed_arrays": {"type": "array"},
        "children": {"type": "array", "items": {"$ref": "#/$defs/loop"}},
    },
}
DESIGN_SCHEMA = {
    "$defs": {"loop": _LOOP_DOC},
    "type": "object",
    "required": ["kernel", "loops", "arrays"],
    "properties": {
        "kernel": {"type": "string"},
        "loops": {"type": "array", "items": {"$ref": "#/$defs/loop"}},
        "arrays": {"type": "array"},
    },
}

OBJECTIVE_TEXT = {
    "performance": "Minimize latency. Use aggressive parallelism; high resource usage is acceptable.",
    "resource": "Minimize resource usage. Allocate parallelism conservatively; latency is secondary.",
    "balanced": "Find unroll factors that trade latency against resources without exhausting the device.",
}

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def load_prompt(name: str) -> Template:
    text = resources.files("hlsdse").joinpath("prompts", f"{name}.txt").read_text()
    return Template(text)


def extract_json_block(text: str) -> Any:
    """The single fenced JSON block of a reply (a bare JSON reply is accepted too)."""
    blocks = _FENCE.findall(text)
    if len(blocks) > 1:
        raise ValueError("reply contains more than one fenced block")
    payload = blocks[0] if blocks else text
    return json.loads(payload)


@dataclass(frozen=True)
class HttpAdvisorConfig:
    endpoint: str
    model: str
    temperature: float = 0.2
    max_retries: int = 3
    timeout_seconds: float = 120.0
    api_key: str | None = None
    max_concurrency: int = 4

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **overrides: Any) -> HttpAdvisorConfig:
        url = overrides.pop("endpoint", None) or os.environ.get("HLS_DSE_ADVISOR_URL")
        if not url:
            raise AdvisorError("config", "HLS_DSE_ADVISOR_URL is not set")
        return cls(
            endpoint=url,
            model=overrides.pop("model", None) or os.environ.get("HLS_DSE_ADVISOR_MODEL", "default"),
            api_key=overrides.pop("api_key", None) or os.environ.get("HLS_DSE_ADVISOR_KEY"),
            **overrides,
        )


def _request_key(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()


class TranscriptTransport(httpx.BaseTransport):
    """Replays a recorded transcript: each request body is answered with its recorded reply."""

    def __init__(self, path: str | Path):
        self.replies: dict[str, list[dict[str, Any]]] = {}
        for line in Path(path).read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                self.replies.setdefault(rec["request_key"], []).append(rec)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        queue = self.replies.get(_request_key(request.read()))
        if not queue:
            return httpx.Response(404, json={"error": "request not in transcript"})
        rec = queue.pop(0)
        if rec.get("error"):
            return httpx.Response(503, json={"error": rec["error"]})
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": rec["response"]}}]})


class HttpAdvisor(Advisor):
    name = "http"

    def __init__(
        self,
        config: HttpAdvisorConfig,
        transport: httpx.BaseTransport | None = None,
        transcript_path: str | Path | None = None,
    ):
        self.config = config
        headers = {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}
        self.client = httpx.Client(transport=transport, timeout=config.timeout_seconds, headers=headers)
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self.requests_sent = 0
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._log_lock = threading.Lock()
        self._system = load_prompt("system").substitute()

    def _log(self, role: str, body: bytes, response: str | None, error: str | None) -> None:
        if self.transcript_path is None:
            return
        rec = {"role": role, "request_key": _request_key(body), "request": json.loads(body), "response": response, "error": error}
        with self._log_lock, open(self.transcript_path, "a") as f:
            f.write(json.dumps(rec) + "\n")

    def _post(self, role: str, messages: list[dict[str, str]]) -> str:
        payload = {"model": self.config.model, "temperature": self.config.temperature, "messages": messages}
        body = json.dumps(payload, sort_keys=True).encode()
        self.requests_sent += 1
        try:
            with self._slots:
                resp = self.client.post(self.config.endpoint, content=body, headers={"Content-Type": "application/json"})
            resp.raise_for_status()
            content = resp.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
            self._log(role, body, None, f"{type(e).__name__}: {e}")
            raise
        self._log(role, body, content, None)
        return content

    def ask(self, role: str, prompt: str, schema: dict[str, Any], convert: Callable[[Any], Any] = lambda x: x) -> Any:
        """At most ``1 + max_retries`` requests; after a bad reply the next request asks for a fix."""
        messages = [{"role": "system", "content": self._system}, {"role": "user", "content": prompt}]
        last = "no attempt made"
        for _ in range(1 + self.config.max_retries):
            try:
                reply = self._post(role, messages)
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
                last = f"transport failure: {e}"
                continue
            try:
                doc = extract_json_block(reply)
                jsonschema.validate(doc, schema)
                return convert(doc)
            except (ValueError, KeyError, jsonschema.ValidationError, DesignError) as e:
                last = f"invalid reply: {getattr(e, 'message', e)}"
                messages = messages[:2] + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"Your reply was rejected ({last}). Answer again with exactly one fenced JSON block matching the schema."},
                ]
        raise AdvisorError(role, last)

    # roles

    def extract_features(self, source_text: str) -> HlsDesign:
        prompt = load_prompt("feature_extractor").substitute(source=source_text)
        return self.ask("extract_features", prompt, DESIGN_SCHEMA, design_from_dict)

    def prune_rules(self, design: HlsDesign, space: DesignSpace) -> list[PruneRule]:
        prompt = load_prompt("pruning").substitute(
            design=serialize_design(design), space=json.dumps(space_to_dict(space))
        )
        return self.ask("prune_rules", prompt, RULES_SCHEMA, lambda doc: [PruneRule.from_dict(r) for r in doc])

    def _configs(self, design: HlsDesign, doc: Any) -> list[DirectiveConfig]:
        return [decode_feature_vector(design, recs) for recs in doc]

    def seed_directives(self, design, space, objective, count):
        if objective not in OBJECTIVE_TEXT:
            raise AdvisorError("seed_directives", f"unknown objective {objective!r}")
        prompt = load_prompt("seed_directives").substitute(
            design=serialize_design(design),
            space=json.dumps(space_to_dict(space)),
            objective=OBJECTIVE_TEXT[objective],
            count=count,
        )
        return self.ask("seed_directives", prompt, CONFIGS_SCHEMA, lambda doc: self._configs(design, doc))

    def reflect_trajectory(self, design, population, elites, digest):
        table = [
            {
                "index": i,
                "rank": d.rank,
                "crowding": None if d.crowding == float("inf") else d.crowding,
                "latency": d.objectives.latency,
                "util": d.objectives.util,
                "config": encode_feature_vector(design, d.config),
            }
            for i, d in enumerate(population)
        ]
        prompt = load_prompt("trajectory_reflection").substitute(
            design=serialize_design(design), population=json.dumps(table), elites=json.dumps(list(elites)), digest=digest
        )
        return self.ask(
            "reflect_trajectory",
            prompt,
            REFLECTION_SCHEMA,
            lambda doc: [(int(r["index"]), str(r.get("note", ""))) for r in doc],
        )

    def convergent_hints(self, design, space, parents, digest=""):
        rows = [{"bottleneck": b.value, "config": encode_feature_vector(design, c)} for c, b, _ in parents]
        prompt = load_prompt("bottleneck_analysis").substitute(
            design=serialize_design(design), space=json.dumps(space_to_dict(space)), parents=json.dumps(rows), digest=digest
        )
        return self.ask("convergent_hints", prompt, CONFIGS_SCHEMA, lambda doc: self._configs(design, doc))

    def divergent_hints(self, design, space, parents, seen, count, seed):
        rows = [encode_feature_vector(design, c) for c in parents]
        prompt = load_prompt("divergent_refactoring").substitute(
            design=serialize_design(design), space=json.dumps(space_to_dict(space)), parents=json.dumps(rows), count=count
        )
        return self.ask("divergent_hints", prompt, CONFIGS_SCHEMA, lambda doc: self._configs(design, doc))
