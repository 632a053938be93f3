import json
import sys
import textwrap

import pytest
from hypothesis import given, settings, strategies as st

from hlsdse import designs
from hlsdse.design import COMPLETE, CYCLIC, ArrayDirective, DirectiveConfig, LoopDirective
from hlsdse.pareto import Objectives, UtilWeights, pareto_front
from hlsdse.qor import (
    TIMEOUT_ENV,
    BackendError,
    ExternalBackend,
    KeyValueReport,
    MockBackend,
    MockModelParams,
    QoR,
    ReplayBackend,
    UnknownConfigError,
    evaluate,
    external_evaluate,
    introspect,
    mock_latency,
    mock_resources,
    timeout_from_env,
    write_replay,
)
from hlsdse.space import build_space, prune

from strategies import configs_in


def vm(pipe=0, unroll=0, factor=0):
    arrays = {a: (CYCLIC, 1, factor) for a in "ABC"} if factor else {}
    return DirectiveConfig.build({"mul": (pipe, unroll)}, arrays)


def test_mock_latency_examples(vector_mul):
    assert mock_latency(vector_mul, vm()) == 1024 * 4
    assert mock_latency(vector_mul, vm(1, 2, 2)) == 515
    assert mock_latency(vector_mul, vm(1, 4, 0)) == 514
    assert mock_latency(vector_mul, vm(1, 4, 4)) == 259
    assert mock_latency(vector_mul, vm(0, 1024)) == 4


def test_mock_latency_nested(gemm):
    # j pipelined: k fully unrolled inside; A[i][k] and B[k][j] need 64 accesses on 2 ports
    cfg = DirectiveConfig.build({"j": (1, 0)})
    lat, units = introspect(gemm, cfg)
    assert [u.loop for u in units] == ["j"]
    assert units[0].ii == 32
    assert lat == 64 * (4 + 32 * 63)
    assert units[0].contribution == lat


def test_mock_params_validation():
    with pytest.raises(ValueError):
        MockModelParams(pipeline_depth=0)
    assert MockModelParams.hostile().dsp_per_parallel_op == 20


def test_mock_resources_examples(vector_mul, gemm_poly):
    p = MockModelParams()
    lut, ff, dsp, bram = mock_resources(vector_mul, vm(), p)
    assert dsp == pytest.approx(1 * 3 / 1728)
    assert lut == pytest.approx(250 / 230400)
    assert ff == pytest.approx(120 / 460800)
    assert bram == pytest.approx(3 / 312)
    # two leaves in gemm_poly
    assert mock_resources(gemm_poly, DirectiveConfig())[2] == pytest.approx(2 * 3 / 1728)


def test_complete_partition_over_maps(vector_mul):
    cfg = DirectiveConfig.build(arrays={"A": (COMPLETE, 1, 0)})
    assert mock_resources(vector_mul, cfg)[3] > 1.2
    q = MockBackend().evaluate(vector_mul, cfg)
    assert not q.valid and q.latency is None and q.util is None
    with pytest.raises(ValueError):
        q.objectives()


def test_doubling_unroll_doubles_dsp(vector_mul):
    for u in (2, 4, 8, 16):
        assert mock_resources(vector_mul, vm(0, 2 * u))[2] == pytest.approx(2 * mock_resources(vector_mul, vm(0, u))[2])


def test_mock_backend_valid(vector_mul):
    q = evaluate(MockBackend(), vector_mul, vm(1, 2, 2))
    assert q.valid and q.latency == 515
    lut, ff, dsp, bram = mock_resources(vector_mul, vm(1, 2, 2))
    assert q.util == pytest.approx(0.3 * lut + 0.25 * ff + 0.3 * dsp + 0.05 * bram)
    assert q == MockBackend().evaluate(vector_mul, vm(1, 2, 2))


def test_invalid_results_never_reach_fronts(vector_mul):
    b = MockBackend()
    cfgs = [vm(), vm(1, 2, 2), DirectiveConfig.build(arrays={"A": (COMPLETE, 1, 0)})]
    qs = b.evaluate_batch(vector_mul, cfgs)
    front = pareto_front([(c, q.objectives()) for c, q in zip(cfgs, qs) if q.valid])
    assert cfgs[2] not in [c for c, _ in front]


SPACES = {n: prune(build_space(designs.load(n)), designs.load(n)) for n in ("vector_mul", "gemm_poly", "mv4", "fir8")}


@st.composite
def unroll_chain(draw):
    name = draw(st.sampled_from(sorted(SPACES)))
    design, space = designs.load(name), SPACES[name]
    cfg = draw(configs_in(space))
    loop = draw(st.sampled_from(design.loop_names))
    cur = max(1, cfg.loop(loop).unroll)
    bigger = [u for u in space.loop(loop).unroll if u > cur and u % cur == 0]
    if not bigger:
        return design, cfg, cfg
    u = draw(st.sampled_from(bigger))
    return design, cfg, cfg.replace(loops={loop: LoopDirective(cfg.loop(loop).pipeline, u)})


@given(unroll_chain())
def test_unroll_never_increases_latency(case):
    design, lo, hi = case
    assert mock_latency(design, hi) <= mock_latency(design, lo)


@st.composite
def factor_chain(draw):
    name = draw(st.sampled_from(sorted(SPACES)))
    design, space = designs.load(name), SPACES[name]
    cfg = draw(configs_in(space))
    arr = draw(st.sampled_from(design.array_names))
    d = cfg.array(arr)
    if d.type == COMPLETE:
        return design, cfg, cfg
    cur = max(1, d.factor)
    bigger = [f for f in space.array(arr).factor_domain(d.dim) if f > cur and f % cur == 0]
    if not bigger:
        return design, cfg, cfg
    f = draw(st.sampled_from(bigger))
    return design, cfg, cfg.replace(arrays={arr: ArrayDirective(d.type, d.dim, f)})


@given(factor_chain())
def test_partition_never_increases_ii(case):
    design, lo, hi = case
    ii_lo = {u.loop: u.ii for u in introspect(design, lo)[1]}
    ii_hi = {u.loop: u.ii for u in introspect(design, hi)[1]}
    assert all(ii_hi[k] <= ii_lo[k] for k in ii_lo)


@given(st.data())
@settings(max_examples=30)
def test_mock_deterministic(data):
    design, space = designs.load("gemm_poly"), SPACES["gemm_poly"]
    cfg = data.draw(configs_in(space))
    assert MockBackend().evaluate(design, cfg) == MockBackend().evaluate(design, cfg)


# --- replay --------------------------------------------------------------------


def test_replay_round_trip(tmp_path, vector_mul):
    b = MockBackend()
    cfgs = [vm(), vm(1, 2, 2), DirectiveConfig.build(arrays={"A": (COMPLETE, 1, 0)})]
    path = tmp_path / "replay.jsonl"
    write_replay(path, vector_mul, [(c, b.evaluate(vector_mul, c)) for c in cfgs])
    rb = ReplayBackend.load(path)
    for c in cfgs:
        got, want = rb.evaluate(vector_mul, c), b.evaluate(vector_mul, c)
        assert (got.latency, got.util, got.valid) == (want.latency, want.util, want.valid)
    with pytest.raises(UnknownConfigError):
        rb.evaluate(vector_mul, vm(1, 8, 8))


def test_replay_bad_file(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"config_hash": "x", "latency": 1, "util": 0.1}\nnot json\n')
    with pytest.raises(BackendError, match=":2:"):
        ReplayBackend.load(path)


def test_qor_dict_round_trip():
    q = QoR.from_ratios(100, 0.1, 0.2, 0.3, 0.4, eval_seconds=1.5)
    assert QoR.from_dict(q.to_dict()) == q
    bad = QoR.invalid("timeout")
    assert QoR.from_dict(bad.to_dict()) == bad


# --- external tool ---------------------------------------------------------------

REPORT = """\
# synthetic report
latency_cycles = 1234
lut = 23040
ff = 46080
dsp = 172.8
bram = 31.2
lut_total = 230400
ff_total = 460800
dsp_total = 1728
bram_total = 312
"""


def stub(tmp_path, body: str) -> str:
    script = tmp_path / "tool.py"
    script.write_text(textwrap.dedent(body))
    return f"{sys.executable} {script}"


def test_key_value_report_golden(tmp_path):
    (tmp_path / "qor_report.txt").write_text(REPORT)
    q = KeyValueReport().parse(tmp_path, UtilWeights())
    assert q.latency == 1234
    assert (q.lut, q.ff, q.dsp, q.bram) == pytest.approx((0.1, 0.1, 0.1, 0.1))
    assert q.util == pytest.approx(0.09)


def test_external_stub_report(tmp_path, vector_mul):
    cmd = stub(
        tmp_path,
        f"""
        import sys, pathlib
        assert pathlib.Path(sys.argv[1]).read_text().startswith("# Project Setup")
        pathlib.Path("qor_report.txt").write_text({REPORT!r})
        """,
    )
    q = external_evaluate(vector_mul, vm(1, 2, 2), cmd, tmp_path / "runs", timeout_seconds=30)
    assert q.valid and q.latency == 1234 and q.util == pytest.approx(0.09)
    runs = list((tmp_path / "runs").iterdir())
    assert len(runs) == 1 and (runs[0] / "script.tcl").exists()


def test_external_timeout(tmp_path, vector_mul):
    cmd = stub(tmp_path, "import time\ntime.sleep(30)\n")
    q = external_evaluate(vector_mul, vm(), cmd, tmp_path / "runs", timeout_seconds=0.5)
    assert not q.valid and "timeout" in q.note
    assert 0.5 <= q.eval_seconds < 5


def test_external_timeout_from_env(tmp_path, vector_mul, monkeypatch):
    monkeypatch.setenv(TIMEOUT_ENV, "0.5")
    assert timeout_from_env() == 0.5
    cmd = stub(tmp_path, "import time\ntime.sleep(30)\n")
    b = ExternalBackend(cmd, tmp_path / "runs")
    assert b.timeout_seconds == 0.5
    assert not b.evaluate(vector_mul, vm()).valid


def test_external_nonzero_exit(tmp_path, vector_mul):
    cmd = stub(tmp_path, "import sys\nsys.stderr.write('ERROR: license checkout failed')\nsys.exit(3)\n")
    q = external_evaluate(vector_mul, vm(), cmd, tmp_path / "runs", timeout_seconds=30)
    assert not q.valid and "3" in q.note and "license checkout failed" in q.note


def test_external_missing_report(tmp_path, vector_mul):
    cmd = stub(tmp_path, "pass\n")
    q = external_evaluate(vector_mul, vm(), cmd, tmp_path / "runs", timeout_seconds=30)
    assert not q.valid and "qor_report.txt" in q.note


def test_external_missing_tool(tmp_path, vector_mul):
    with pytest.raises(BackendError):
        external_evaluate(vector_mul, vm(), str(tmp_path / "no-such-tool"), tmp_path / "runs", timeout_seconds=5)


def test_external_batch_keeps_order(tmp_path, vector_mul):
    cmd = stub(
        tmp_path,
        """
        import pathlib, re
        tcl = pathlib.Path("script.tcl").read_text()
        m = re.search(r"unroll -factor (\\d+)", tcl)
        lat = int(m.group(1)) if m else 1
        pathlib.Path("qor_report.txt").write_text(
            f"latency_cycles={lat}\\nlut=1\\nff=1\\ndsp=1\\nbram=1\\n"
            "lut_total=10\\nff_total=10\\ndsp_total=10\\nbram_total=10\\n"
        )
        """,
    )
    b = ExternalBackend(cmd, tmp_path / "runs", timeout_seconds=30, workers=3)
    cfgs = [vm(0, u) for u in (2, 4, 8, 16, 32)]
    assert [q.latency for q in b.evaluate_batch(vector_mul, cfgs)] == [2, 4, 8, 16, 32]
