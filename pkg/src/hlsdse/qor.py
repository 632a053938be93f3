"""QoR evaluation: analytical mock model, recorded-result replay, external HLS tool."""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import signal
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .design import COMPLETE, DirectiveConfig, HlsDesign, LoopInfo, ProjectSettings, config_hash, emit_tcl
from .pareto import Objectives, UtilWeights, utilization

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_SECS = 1200.0
TIMEOUT_ENV = "HLS_DSE_TIMEOUT_SECS"


class BackendError(RuntimeError):
    """The backend itself failed (I/O, missing tool); not a verdict on the design."""


class UnknownConfigError(LookupError):
    pass


@dataclass(frozen=True)
class QoR:
    latency: int | None
    lut: float
    ff: float
    dsp: float
    bram: float
    util: float | None
    valid: bool
    eval_seconds: float = 0.0
    note: str = ""

    @classmethod
    def from_ratios(
        cls,
        latency: int,
        lut: float,
        ff: float,
        dsp: float,
        bram: float,
        weights: UtilWeights | None = None,
        eval_seconds: float = 0.0,
    ) -> QoR:
        return cls(
            int(latency), lut, ff, dsp, bram, utilization(lut, ff, dsp, bram, weights), True, eval_seconds
        )

    @classmethod
    def invalid(cls, note: str, eval_seconds: float = 0.0, ratios: Sequence[float] = (0.0, 0.0, 0.0, 0.0)) -> QoR:
        return cls(None, *ratios, None, False, eval_seconds, note)

    def objectives(self) -> Objectives:
        if not self.valid:
            raise ValueError("invalid QoR has no objectives")
        return Objectives(float(self.latency), float(self.util))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> QoR:
        valid = bool(doc.get("valid", True))
        return cls(
            int(doc["latency"]) if valid and doc.get("latency") is not None else None,
            float(doc.get("lut", 0.0)),
            float(doc.get("ff", 0.0)),
            float(doc.get("dsp", 0.0)),
            float(doc.get("bram", 0.0)),
            float(doc["util"]) if valid and doc.get("util") is not None else None,
            valid,
            float(doc.get("eval_seconds", 0.0)),
            str(doc.get("note", "")),
        )


@dataclass(frozen=True)
class Capabilities:
    batch: bool = True
    introspection: bool = False


class QorBackend:
    capabilities = Capabilities()
    timeout_seconds: float = DEFAULT_TIMEOUT_SECS
    workers: int = 1

    def evaluate(self, design: HlsDesign, config: DirectiveConfig) -> QoR:
        raise NotImplementedError

    def evaluate_batch(self, design: HlsDesign, configs: Sequence[DirectiveConfig]) -> list[QoR]:
        """Outputs follow input order."""
        if self.workers <= 1 or len(configs) <= 1:
            return [self.evaluate(design, c) for c in configs]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(lambda c: self.evaluate(design, c), configs))


def evaluate(backend: QorBackend, design: HlsDesign, config: DirectiveConfig) -> QoR:
    return backend.evaluate(design, config)


# --- analytical mock -------------------------------------------------------------


@dataclass(frozen=True)
class MockModelParams:
    ports_per_partition: int = 2
    pipeline_depth: int = 4
    dsp_per_parallel_op: float = 3
    lut_per_parallel_op: float = 250
    ff_per_pipeline_stage: float = 120
    dsp_total: float = 1728
    lut_total: float = 230400
    ff_total: float = 460800
    bram_total: float = 312
    over_map_threshold: float = 1.2

    def __post_init__(self) -> None:
        if min(asdict(self).values()) <= 0:
            raise ValueError("mock model parameters must be positive")

    @classmethod
    def hostile(cls) -> MockModelParams:
        """Expensive datapath: a few hundred parallel lanes already over-map DSPs."""
        return cls(dsp_per_parallel_op=20, bram_total=2048)


@dataclass
class UnitReport:
    """Timing of one execution unit: a pipelined loop (with its sub-nest) or an unpipelined leaf."""

    loop: str
    pipelined: bool
    iterations: int
    ii: int
    latency: int
    contribution: int  # latency times the iteration counts of enclosing loops
    # (array, dim) -> parallel accesses per iteration
    accesses: dict[tuple[str, int], int] = field(default_factory=dict)
    memory_limited: list[str] = field(default_factory=list)


def _effective_factor(design: HlsDesign, config: DirectiveConfig, array: str, dim: int) -> int:
    a = config.array(array)
    if a.dim != dim:
        return 1
    if a.type == COMPLETE:
        return design.array(array).size(a.dim)
    return max(1, a.factor)


def unit_accesses(design: HlsDesign, config: DirectiveConfig, lp: LoopInfo) -> dict[tuple[str, int], int]:
    """Parallel accesses per iteration of the unit rooted at ``lp``.

    A pipelined loop flattens its sub-nest, so every nested access is
    multiplied by the trip counts between it and ``lp``.
    """
    acc: dict[tuple[str, int], int] = {}

    def walk(node: LoopInfo, mult: int) -> None:
        for arr, dim in node.accessed_arrays:
            acc[(arr, dim)] = acc.get((arr, dim), 0) + mult
        if config.loop(lp.name).pipeline:
            for ch in node.children:
                walk(ch, mult * ch.trip_count)

    walk(lp, max(1, config.loop(lp.name).unroll))
    return acc


def _ii(design: HlsDesign, config: DirectiveConfig, acc: Mapping[tuple[str, int], int], ports: int) -> tuple[int, list[str]]:
    ii, limiting = 1, []
    for (arr, dim), n in acc.items():
        term = math.ceil(n / (_effective_factor(design, config, arr, dim) * ports))
        if term > 1:
            limiting.append(arr)
        ii = max(ii, term)
    return ii, sorted(set(limiting))


def introspect(
    design: HlsDesign, config: DirectiveConfig, params: MockModelParams | None = None
) -> tuple[int, list[UnitReport]]:
    """Total mock latency and the per-unit breakdown."""
    p = params or MockModelParams()
    config.check_names(design)
    units: list[UnitReport] = []

    def lat(lp: LoopInfo, outer_iters: int) -> int:
        d = config.loop(lp.name)
        iters = math.ceil(lp.trip_count / max(1, d.unroll))
        if d.pipeline or lp.is_leaf:
            acc = unit_accesses(design, config, lp)
            ii, limiting = _ii(design, config, acc, p.ports_per_partition)
            if d.pipeline:
                latency = p.pipeline_depth + ii * (iters - 1)
            else:
                latency = iters * p.pipeline_depth
            units.append(
                UnitReport(lp.name, bool(d.pipeline), iters, ii, latency, latency * outer_iters, acc, limiting)
            )
            return latency
        return iters * sum(lat(ch, outer_iters * iters) for ch in lp.children)

    total = sum(lat(top, 1) for top in design.loops)
    return total, units


def mock_latency(design: HlsDesign, config: DirectiveConfig, params: MockModelParams | None = None) -> int:
    return introspect(design, config, params)[0]


def mock_parallelism(design: HlsDesign, config: DirectiveConfig) -> list[tuple[str, int, bool]]:
    """(leaf, parallel lanes, inside a pipelined region) for every leaf loop."""
    out = []

    def walk(lp: LoopInfo, lanes: int, pipelined_above: bool) -> None:
        d = config.loop(lp.name)
        u = lp.trip_count if pipelined_above else max(1, d.unroll)
        here = pipelined_above or bool(d.pipeline)
        if lp.is_leaf:
            out.append((lp.name, lanes * u, here))
        for ch in lp.children:
            walk(ch, lanes * u, here)

    for top in design.loops:
        walk(top, 1, False)
    return out


def mock_resources(
    design: HlsDesign, config: DirectiveConfig, params: MockModelParams | None = None
) -> tuple[float, float, float, float]:
    """(lut, ff, dsp, bram) usage ratios, uncapped."""
    p = params or MockModelParams()
    lanes = mock_parallelism(design, config)
    total = sum(n for _, n, _ in lanes)
    stages = sum(n * (p.pipeline_depth if piped else 1) for _, n, piped in lanes)
    partitions = 0
    for a in design.arrays:
        d = config.array(a.name)
        partitions += a.size(d.dim) if d.type == COMPLETE else max(1, d.factor)
    return (
        total * p.lut_per_parallel_op / p.lut_total,
        stages * p.ff_per_pipeline_stage / p.ff_total,
        total * p.dsp_per_parallel_op / p.dsp_total,
        partitions / p.bram_total,
    )


class MockBackend(QorBackend):
    capabilities = Capabilities(batch=True, introspection=True)

    def __init__(self, params: MockModelParams | None = None, weights: UtilWeights | None = None):
        self.params = params or MockModelParams()
        self.weights = weights or UtilWeights()

    def evaluate(self, design: HlsDesign, config: DirectiveConfig) -> QoR:
        ratios = mock_resources(design, config, self.params)
        if max(ratios) > self.params.over_map_threshold:
            return QoR.invalid("over-mapped", ratios=ratios)
        return QoR.from_ratios(mock_latency(design, config, self.params), *ratios, weights=self.weights)

    def introspect(self, design: HlsDesign, config: DirectiveConfig) -> list[UnitReport]:
        return introspect(design, config, self.params)[1]


# --- replay --------------------------------------------------------------------


class ReplayBackend(QorBackend):
    """Serves recorded results keyed by the canonical feature-vector hash."""

    def __init__(self, records: Mapping[str, QoR]):
        self.records = dict(records)

    @classmethod
    def load(cls, path: str | Path) -> ReplayBackend:
        records = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                records[doc["config_hash"]] = QoR.from_dict(doc)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise BackendError(f"{path}:{lineno}: bad replay record ({e})") from e
        return cls(records)

    def evaluate(self, design: HlsDesign, config: DirectiveConfig) -> QoR:
        key = config_hash(design, config)
        try:
            return self.records[key]
        except KeyError:
            raise UnknownConfigError(f"no recorded QoR for config {key}") from None


def replay_record(design: HlsDesign, config: DirectiveConfig, qor: QoR) -> dict[str, Any]:
    return {
        "config_hash": config_hash(design, config),
        "latency": qor.latency,
        "lut": qor.lut,
        "ff": qor.ff,
        "dsp": qor.dsp,
        "bram": qor.bram,
        "util": qor.util,
        "valid": qor.valid,
        "eval_seconds": qor.eval_seconds,
    }


def write_replay(path: str | Path, design: HlsDesign, items: Iterable[tuple[DirectiveConfig, QoR]]) -> None:
    with open(path, "w") as f:
        for cfg, q in items:
            f.write(json.dumps(replay_record(design, cfg, q)) + "\n")


# --- external tool -----------------------------------------------------------------


class ReportGrammar(Protocol):
    def parse(self, workdir: Path, weights: UtilWeights) -> QoR: ...


class ReportMissing(Exception):
    pass


@dataclass(frozen=True)
class KeyValueReport:
    """Flat ``key=value`` report with absolute counts and device totals."""

    filename: str = "qor_report.txt"
    keys = ("latency_cycles", "lut", "ff", "dsp", "bram", "lut_total", "ff_total", "dsp_total", "bram_total")

    def parse(self, workdir: Path, weights: UtilWeights) -> QoR:
        path = workdir / self.filename
        if not path.exists():
            raise ReportMissing(f"report file {self.filename} not found")
        values: dict[str, float] = {}
        for line in path.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"bad report line {line!r}")
            values[key.strip()] = float(val)
        missing = [k for k in self.keys if k not in values]
        if missing:
            raise ValueError(f"report lacks {', '.join(missing)}")
        ratios = [values[k] / values[f"{k}_total"] for k in ("lut", "ff", "dsp", "bram")]
        return QoR.from_ratios(int(values["latency_cycles"]), *ratios, weights=weights)


def timeout_from_env(default: float = DEFAULT_TIMEOUT_SECS) -> float:
    raw = os.environ.get(TIMEOUT_ENV)
    return float(raw) if raw else default


def _run_capped(argv: list[str], cwd: Path, cap: float) -> tuple[int | None, str, str]:
    """Run a command; on timeout the whole process group is killed and returncode is None."""
    try:
        proc = subprocess.Popen(
            argv, cwd=cwd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, start_new_session=True
        )
    except OSError as e:
        raise BackendError(f"cannot launch {argv[0]!r}: {e}") from e
    try:
        out, err = proc.communicate(timeout=cap)
        return proc.returncode, out, err
    except subprocess.TimeoutExpired:
        os.killpg(proc.pid, signal.SIGKILL)
        out, err = proc.communicate()
        return None, out, err


class ExternalBackend(QorBackend):
    """Runs ``<tool_cmd> script.tcl`` in a fresh working directory per evaluation."""

    capabilities = Capabilities(batch=True, introspection=False)

    def __init__(
        self,
        tool_cmd: str | Sequence[str],
        workdir: str | Path,
        timeout_seconds: float | None = None,
        grammar: ReportGrammar | None = None,
        workers: int = 1,
        project: ProjectSettings | None = None,
        weights: UtilWeights | None = None,
    ):
        self.tool_cmd = shlex.split(tool_cmd) if isinstance(tool_cmd, str) else list(tool_cmd)
        self.workdir = Path(workdir)
        self.timeout_seconds = timeout_seconds if timeout_seconds is not None else timeout_from_env()
        self.grammar = grammar or KeyValueReport()
        self.workers = workers
        self.project = project
        self.weights = weights or UtilWeights()

    def evaluate(self, design: HlsDesign, config: DirectiveConfig) -> QoR:
        return external_evaluate(
            design, config, self.tool_cmd, self.workdir, self.timeout_seconds, self.grammar, self.project, self.weights
        )


def external_evaluate(
    design: HlsDesign,
    config: DirectiveConfig,
    tool_cmd: str | Sequence[str],
    workdir: str | Path,
    timeout_seconds: float | None = None,
    grammar: ReportGrammar | None = None,
    project: ProjectSettings | None = None,
    weights: UtilWeights | None = None,
) -> QoR:
    argv = shlex.split(tool_cmd) if isinstance(tool_cmd, str) else list(tool_cmd)
    cap = timeout_seconds if timeout_seconds is not None else timeout_from_env()
    grammar = grammar or KeyValueReport()
    run_dir = Path(workdir) / f"{design.kernel_name}_{config_hash(design, config)}"
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "script.tcl").write_text(emit_tcl(design, config, project))
    except OSError as e:
        raise BackendError(f"cannot prepare {run_dir}: {e}") from e

    t0 = time.monotonic()
    code, _, err = _run_capped([*argv, "script.tcl"], run_dir, cap)
    elapsed = time.monotonic() - t0
    if code is None:
        log.warning("synthesis of %s timed out after %.1fs", run_dir.name, elapsed)
        return QoR.invalid(f"timeout after {cap}s", elapsed)
    if code != 0:
        return QoR.invalid(f"tool exited with {code}: {err.strip()}", elapsed)
    try:
        qor = grammar.parse(run_dir, weights or UtilWeights())
    except ReportMissing as e:
        return QoR.invalid(str(e), elapsed)
    except ValueError as e:
        return QoR.invalid(f"unparseable report: {e}", elapsed)
    return QoR(qor.latency, qor.lut, qor.ff, qor.dsp, qor.bram, qor.util, True, elapsed)
