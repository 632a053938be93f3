import json

import httpx
import pytest

from hlsdse import designs
from hlsdse.advisor import (
    ROLES,
    Advisor,
    AdvisorError,
    HttpAdvisor,
    HttpAdvisorConfig,
    RuleAdvisor,
    TranscriptTransport,
    UnsupportedRole,
    convergent_hints,
    divergent_hints,
    extract_features,
    extract_json_block,
    load_prompt,
    reflect_trajectory,
    seed_directives,
)
from hlsdse.design import CYCLIC, DirectiveConfig, design_to_dict, encode_feature_vector
from hlsdse.pareto import Objectives, label, select_elites
from hlsdse.qor import MockBackend
from hlsdse.search.explore import SearchParams, explore
from hlsdse.search.operators import Bottleneck, convergent_search, divergent_search
from hlsdse.space import contains

CFG = HttpAdvisorConfig(endpoint="http://advisor.test/v1/chat/completions", model="stub", max_retries=2)


def reply(text: str) -> httpx.Response:
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def fenced(doc) -> str:
    return "Here you go.\n```json\n" + json.dumps(doc) + "\n```\n"


class Scripted:
    """MockTransport handler answering with a fixed sequence of replies."""

    def __init__(self, *answers):
        self.answers = list(answers)
        self.bodies: list[dict] = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.bodies.append(json.loads(request.content))
        a = self.answers.pop(0) if len(self.answers) > 1 else self.answers[0]
        if isinstance(a, Exception):
            raise a
        return reply(a)


def http(handler, **kw) -> HttpAdvisor:
    return HttpAdvisor(kw.pop("config", CFG), transport=httpx.MockTransport(handler), **kw)


def vm(pipe=0, unroll=0, factor=0):
    arrays = {a: (CYCLIC, 1, factor) for a in "ABC"} if factor else {}
    return DirectiveConfig.build({"mul": (pipe, unroll)}, arrays)


# --- rule advisor ----------------------------------------------------------------


def test_rule_performance_seed(vector_mul, vm_space):
    out = seed_directives(RuleAdvisor(), vector_mul, vm_space, "performance", 1)
    assert out == [vm(1, 64, 64)]


def test_rule_resource_seed(vector_mul, vm_space):
    assert seed_directives(RuleAdvisor(), vector_mul, vm_space, "resource", 1) == [DirectiveConfig()]
    with pytest.raises(ValueError):
        seed_directives(RuleAdvisor(), vector_mul, vm_space, "resource", 0)


def test_rule_seeds_deterministic_and_in_space(gemm_poly):
    from hlsdse.space import build_space, prune

    space = prune(build_space(gemm_poly), gemm_poly)
    for obj in ("performance", "resource", "balanced"):
        a = seed_directives(RuleAdvisor(), gemm_poly, space, obj, 4)
        assert a == seed_directives(RuleAdvisor(), gemm_poly, space, obj, 4)
        assert a and all(contains(space, c) for c in a)


def labeled_population():
    pts = [(100, 0.5), (200, 0.2), (150, 0.6), (300, 0.1), (400, 0.4)]
    return label([(vm(0, 2 ** (i + 1)), Objectives(*p)) for i, p in enumerate(pts)])


def test_rule_reflect_passthrough(vector_mul):
    pop = labeled_population()
    elites = [pop.index(d) for d in select_elites(pop, 3)]
    got = reflect_trajectory(RuleAdvisor(), vector_mul, pop, elites)
    assert [i for i, _ in got] == elites
    assert reflect_trajectory(RuleAdvisor(), vector_mul, [], []) == []


def test_rule_extract_unsupported():
    with pytest.raises(UnsupportedRole):
        extract_features(RuleAdvisor(), "void f() {}")
    with pytest.raises(ValueError):
        extract_features(RuleAdvisor(), "   ")


def test_rule_hints_match_operators(vector_mul, vm_space):
    parents = [(vm(1, 2, 2), Bottleneck.COMPUTE, None)]
    assert convergent_hints(RuleAdvisor(), vector_mul, vm_space, parents) == convergent_search(vector_mul, vm_space, parents)
    got = divergent_hints(RuleAdvisor(), vector_mul, vm_space, [vm(1, 2, 2)], set(), 4, 9)
    assert got == divergent_search(vector_mul, vm_space, [vm(1, 2, 2)], set(), 4, 9)


def test_base_advisor_defaults(vector_mul, vm_space):
    a = Advisor()
    assert a.prune_rules(vector_mul, vm_space) == []
    with pytest.raises(UnsupportedRole):
        a.seed_directives(vector_mul, vm_space, "balanced", 1)
    assert len(ROLES) == 6


# --- parsing ---------------------------------------------------------------------


def test_extract_json_block():
    assert extract_json_block(fenced([1, 2])) == [1, 2]
    assert extract_json_block("[3]") == [3]
    with pytest.raises(ValueError):
        extract_json_block(fenced([1]) + fenced([2]))
    with pytest.raises(ValueError):
        extract_json_block("sorry, I cannot help")


def test_prompts_render():
    for name in ("system", "feature_extractor", "pruning", "seed_directives", "trajectory_reflection",
                 "bottleneck_analysis", "divergent_refactoring"):
        assert load_prompt(name).template.strip()


def test_config_from_env(monkeypatch):
    monkeypatch.delenv("HLS_DSE_ADVISOR_URL", raising=False)
    with pytest.raises(AdvisorError):
        HttpAdvisorConfig.from_env()
    monkeypatch.setenv("HLS_DSE_ADVISOR_URL", "http://x")
    monkeypatch.setenv("HLS_DSE_ADVISOR_MODEL", "m1")
    monkeypatch.setenv("HLS_DSE_ADVISOR_KEY", "k")
    c = HttpAdvisorConfig.from_env(max_retries=1)
    assert (c.endpoint, c.model, c.api_key, c.max_retries) == ("http://x", "m1", "k", 1)
    with pytest.raises(ValueError):
        HttpAdvisorConfig("http://x", "m", max_retries=-1)


# --- http advisor ----------------------------------------------------------------


def test_http_seed_stub(vector_mul, vm_space):
    stub = [encode_feature_vector(vector_mul, vm(1, 8, 8)), encode_feature_vector(vector_mul, vm(1, 16, 16))]
    h = Scripted(fenced(stub))
    adv = http(h)
    out = seed_directives(adv, vector_mul, vm_space, "performance", 2)
    assert out == [vm(1, 8, 8), vm(1, 16, 16)]
    assert adv.requests_sent == 1
    msgs = h.bodies[0]["messages"]
    assert msgs[0]["role"] == "system" and "latency" in msgs[1]["content"].lower()
    assert h.bodies[0]["model"] == "stub"


def test_http_out_of_space_repaired(vector_mul, vm_space):
    stub = [encode_feature_vector(vector_mul, vm(1, 3, 5))]
    out = seed_directives(http(Scripted(fenced(stub))), vector_mul, vm_space, "balanced", 1)
    assert len(out) == 1 and contains(vm_space, out[0])
    assert out[0].loop("mul").unroll in (2, 4)


def test_http_retry_bound(vector_mul, vm_space):
    h = Scripted("not json at all")
    adv = http(h)
    with pytest.raises(AdvisorError, match="seed_directives"):
        seed_directives(adv, vector_mul, vm_space, "balanced", 1)
    assert adv.requests_sent == 1 + CFG.max_retries == len(h.bodies)


def test_http_repair_prompt(vector_mul, vm_space):
    good = fenced([encode_feature_vector(vector_mul, vm(1, 4, 4))])
    h = Scripted("```json\n{broken\n```", good)
    out = seed_directives(http(h), vector_mul, vm_space, "balanced", 1)
    assert out == [vm(1, 4, 4)]
    second = h.bodies[1]["messages"]
    assert [m["role"] for m in second] == ["system", "user", "assistant", "user"]
    assert "rejected" in second[-1]["content"]


def test_http_extract_features(vector_mul):
    doc = design_to_dict(vector_mul)
    got = extract_features(http(Scripted(fenced(doc))), "void vector_mul(...) { ... }")
    assert got.loops == vector_mul.loops and got.arrays == vector_mul.arrays


def test_http_missing_trip_count_names_field(vector_mul):
    doc = design_to_dict(vector_mul)
    del doc["loops"][0]["trip_count"]
    with pytest.raises(AdvisorError, match="trip_count"):
        extract_features(http(Scripted(fenced(doc))), "void f() {}")


def test_http_reflect_filters_non_elites(vector_mul):
    pop = labeled_population()
    elites = [0, 1, 3]
    h = Scripted(fenced([{"index": 2, "note": "not elite"}, {"index": 3, "note": "memory bound"}, {"index": 0}]))
    got = reflect_trajectory(http(h), vector_mul, pop, elites)
    assert got == [(3, "memory bound"), (0, "")]


def test_http_timeout_is_role_error(vector_mul, vm_space):
    adv = http(Scripted(httpx.ReadTimeout("slow")))
    with pytest.raises(AdvisorError):
        seed_directives(adv, vector_mul, vm_space, "performance", 1)
    assert adv.requests_sent == 3


def test_http_timeout_degrades_explore(vector_mul, vm_space):
    adv = http(Scripted(httpx.ReadTimeout("slow")), config=HttpAdvisorConfig("http://a.test", "m", max_retries=0))
    front, traj = explore(vector_mul, vm_space, MockBackend(), adv, SearchParams(seed=3))
    assert front and len(traj) <= 48
    assert any("degraded mode" in n for n in traj.notes)
    assert all(contains(vm_space, e.config) for e in traj)


def test_transcript_record_and_replay(tmp_path, vector_mul, vm_space):
    path = tmp_path / "transcript.jsonl"
    stub = fenced([encode_feature_vector(vector_mul, vm(1, 8, 8))])
    live = http(Scripted("garbage", stub), transcript_path=path)
    first = seed_directives(live, vector_mul, vm_space, "performance", 1)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(lines) == 2 and lines[0]["role"] == "seed_directives"

    replayed = HttpAdvisor(CFG, transport=TranscriptTransport(path))
    assert seed_directives(replayed, vector_mul, vm_space, "performance", 1) == first
    # a request that was never recorded fails as a role error
    with pytest.raises(AdvisorError):
        seed_directives(replayed, vector_mul, vm_space, "resource", 1)
