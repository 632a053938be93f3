"""Command-line entry point: ``hls-dse <subcommand>``.

Exit codes:
  0  success
  2  usage error (bad flags)
  3  configuration error (missing or malformed design, config file, rules)
  4  backend failure (tool could not run, replay miss)
  5  advisor failure (after retries, or unsupported role)
  6  refused (exhaustive reference over budget)
  7  malformed data file (front CSV, trajectory)
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__, designs
from .advisor import Advisor, AdvisorError, HttpAdvisor, HttpAdvisorConfig, RuleAdvisor, TranscriptTransport
from .design import DesignError, DirectiveConfig, HlsDesign, config_hash, decode_feature_vector, emit_tcl, parse_design
from .design import iter_configs_records, serialize_design
from .pareto import FrontFormatError, adrs, front_to_csv, pareto_front, read_front_csv
from .qor import BackendError, ExternalBackend, MockBackend, MockModelParams, QorBackend, ReplayBackend, UnknownConfigError
from .sampling import KINDS, SamplerSpec, lhs_sample, sample
from .search.baseline import BaselineParams, baseline_nsga2
from .search.explore import SearchAborted, SearchParams, Trajectory, explore
from .space import (
    DesignSpace,
    PruneError,
    PruneRuleSet,
    build_space,
    cardinality,
    iter_members,
    member_count,
    prune,
    rules_from_dict,
    space_to_dict,
)

log = logging.getLogger("hlsdse")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_BACKEND, EXIT_ADVISOR, EXIT_REFUSED, EXIT_DATA = 0, 2, 3, 4, 5, 6, 7


class ConfigError(Exception):
    pass


class Refused(Exception):
    pass


@dataclass
class ExperimentConfig:
    design: str = ""
    backend: str = "mock"
    mock_params: str = "default"  # or "hostile"
    replay: str | None = None
    tool_cmd: str | None = None
    workdir: str = "hls_runs"
    timeout: float | None = None
    workers: int = 1
    sampler: str = "warm_start"
    advisor: str = "rule"
    advisor_replay: str | None = None
    mode: str = "adaptive"  # or "nsga2"
    search: dict[str, Any] = field(default_factory=dict)
    baseline: dict[str, Any] = field(default_factory=dict)
    rules: dict[str, Any] = field(default_factory=dict)
    prune: bool = True
    reference: str | None = None
    target_adrs: float = 0.05
    out: str = "dse_out"
    seed: int = 0

    def identity(self) -> str:
        """Hash of everything that determines the results (the output directory does not)."""
        doc = {k: v for k, v in dataclasses.asdict(self).items() if k != "out"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | None, overrides: dict[str, Any]) -> ExperimentConfig:
    doc: dict[str, Any] = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("search", "baseline"):
        doc[key] = {**doc.get(key, {}), **{k: v for k, v in overrides.get(f"_{key}", {}).items() if v is not None}}
    doc.pop("_search", None)
    doc.pop("_baseline", None)
    cfg = ExperimentConfig(**{k: v for k, v in doc.items() if k in known})
    if not cfg.design:
        raise ConfigError("no design given")
    return cfg


# --- builders --------------------------------------------------------------------


def load_design(ref: str) -> HlsDesign:
    """A design file path, or the name of a bundled design."""
    p = Path(ref)
    if p.is_file():
        try:
            return parse_design(p.read_text())
        except DesignError as e:
            raise ConfigError(f"{ref}: {e}") from e
    if ref in designs.names():
        return designs.load(ref)
    raise ConfigError(f"design file not found: {ref}")


def load_rules(doc: dict[str, Any]) -> PruneRuleSet:
    try:
        return rules_from_dict(doc) if doc else PruneRuleSet()
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad pruning rules: {e}") from e


def make_space(design: HlsDesign, rules: PruneRuleSet, pruned: bool = True) -> DesignSpace:
    space = build_space(design)
    if not pruned:
        return space
    try:
        return prune(space, design, rules)
    except PruneError as e:
        raise ConfigError(str(e)) from e


def make_backend(cfg: ExperimentConfig) -> QorBackend:
    if cfg.backend == "mock":
        params = MockModelParams.hostile() if cfg.mock_params == "hostile" else MockModelParams()
        return MockBackend(params)
    if cfg.backend == "replay":
        if not cfg.replay:
            raise ConfigError("replay backend needs a replay file")
        return ReplayBackend.load(cfg.replay)
    if cfg.backend == "external":
        if not cfg.tool_cmd:
            raise ConfigError("external backend needs a tool command")
        return ExternalBackend(cfg.tool_cmd, cfg.workdir, cfg.timeout, workers=cfg.workers)
    raise ConfigError(f"unknown backend {cfg.backend!r}")


def make_advisor(kind: str, rules: PruneRuleSet, out_dir: Path | None, replay: str | None = None) -> Advisor | None:
    if kind == "none":
        return None
    if kind == "rule":
        return RuleAdvisor(rules)
    if kind == "http":
        transport = TranscriptTransport(replay) if replay else None
        try:
            conf = HttpAdvisorConfig.from_env(endpoint="http://replay.invalid" if replay else None)
        except AdvisorError as e:
            raise ConfigError(str(e)) from e
        transcript = out_dir / "advisor_transcript.jsonl" if out_dir else None
        return HttpAdvisor(conf, transport=transport, transcript_path=transcript)
    raise ConfigError(f"unknown advisor {kind!r}")


def meta(seed: int, ident: str, **extra: Any) -> dict[str, Any]:
    return {"seed": seed, "config_hash": ident, "version": __version__, **extra}


def front_rows(design: HlsDesign, front) -> list[tuple[float, float, str]]:
    return [(o.latency, o.util, config_hash(design, c)) for c, o in front]


def evaluations_to_target(traj: Trajectory, reference: Sequence[Sequence[float]], target: float, budget: int) -> int:
    """Shortest trajectory prefix whose front reaches ``target``; the full budget if none does."""
    for k in range(1, len(traj) + 1):
        if not traj.entries[k - 1].qor.valid:
            continue
        front = [o for _, o in traj.front(k)]
        if adrs(front, reference) <= target:
            return k
    return budget


# --- subcommands -------------------------------------------------------------------


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_extract(args: argparse.Namespace) -> int:
    try:
        source = Path(args.source).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read source: {e}") from e
    out_dir = Path(args.out).parent if args.out else None
    advisor = make_advisor(args.advisor, PruneRuleSet(), out_dir, args.advisor_replay)
    if advisor is None:
        raise ConfigError("extraction needs an advisor")
    design = advisor.extract_features(source)
    _write(serialize_design(design) + "\n", args.out)
    return EXIT_OK


def cmd_space(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    space = build_space(design)
    doc = {"cardinality": cardinality(space), "space": space_to_dict(space)}
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_prune(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    rules = load_rules(json.loads(Path(args.rules).read_text()) if args.rules else {})
    full = build_space(design)
    pruned = make_space(design, rules)
    doc = {
        "cardinality_before": cardinality(full),
        "cardinality_after": cardinality(pruned),
        "space": space_to_dict(pruned),
    }
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    rules = load_rules(json.loads(Path(args.rules).read_text()) if args.rules else {})
    space = make_space(design, rules, not args.no_prune)
    kind = "warm_start" if args.sampler == "warm" else args.sampler
    advisor = make_advisor(args.advisor, rules, None, args.advisor_replay) if kind == "warm_start" else None
    samples = sample(space, SamplerSpec(kind, args.n, args.seed, args.alpha), design, advisor)
    header = json.dumps({"meta": meta(args.seed, "", sampler=kind, n=args.n, degraded=samples.degraded)})
    _write(header + "\n" + "".join(line + "\n" for line in iter_configs_records(design, samples)), args.out)
    return EXIT_OK


def cmd_reference(args: argparse.Namespace) -> int:
    cfg = load_config(None, {"design": args.design, "backend": args.backend, "mock_params": args.mock_params,
                             "replay": args.replay, "tool_cmd": args.tool_cmd, "workdir": args.workdir,
                             "timeout": args.timeout, "workers": args.workers, "seed": args.seed})
    design = load_design(cfg.design)
    rules = load_rules(json.loads(Path(args.rules).read_text()) if args.rules else {})
    space = make_space(design, rules, not args.no_prune)
    backend = make_backend(cfg)
    members = member_count(space)
    if args.mode == "exhaustive":
        if members > args.budget:
            raise Refused(
                f"exhaustive reference refused: |space| = {cardinality(space)} "
                f"({members} distinct configurations) exceeds budget {args.budget}"
            )
        configs = list(iter_members(space))
    else:
        drawn = lhs_sample(space, SamplerSpec("lhs", args.budget, args.seed))
        configs = list(dict.fromkeys(drawn))
    results = backend.evaluate_batch(design, configs)
    front = pareto_front([(c, q.objectives()) for c, q in zip(configs, results) if q.valid])
    info = meta(
        args.seed,
        cfg.identity(),
        kernel=design.kernel_name,
        mode=args.mode,
        evaluated=len(configs),
        coverage=f"{len(configs) / members:.6f}",
        invalid=sum(not q.valid for q in results),
    )
    _write(front_to_csv(front_rows(design, front), info), args.out)
    return EXIT_OK


def cmd_explore(args: argparse.Namespace) -> int:
    overrides = {
        "design": args.design,
        "backend": args.backend,
        "mock_params": args.mock_params,
        "replay": args.replay,
        "tool_cmd": args.tool_cmd,
        "workdir": args.workdir,
        "timeout": args.timeout,
        "workers": args.workers,
        "sampler": "warm_start" if args.sampler == "warm" else args.sampler,
        "advisor": args.advisor,
        "advisor_replay": args.advisor_replay,
        "mode": args.mode,
        "reference": args.reference,
        "target_adrs": args.target_adrs,
        "out": args.out,
        "seed": args.seed,
        "_search": {
            "n0": args.n0,
            "i_max": args.i_max,
            "pop_size": args.pop_size,
            "rank2_quota": args.rank2_quota,
            "convergent_fraction": args.convergent_fraction,
        },
        "_baseline": {"n0": args.n0, "generations": args.generations},
    }
    cfg = load_config(args.config, overrides)
    return run_experiment(cfg)


def run_experiment(cfg: ExperimentConfig) -> int:
    design = load_design(cfg.design)
    rules = load_rules(cfg.rules)
    space = make_space(design, rules, cfg.prune)
    backend = make_backend(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    advisor = make_advisor(cfg.advisor, rules, out, cfg.advisor_replay)
    ident = cfg.identity()
    info = meta(cfg.seed, ident, kernel=design.kernel_name, mode=cfg.mode)

    reference = None
    if cfg.reference:
        try:
            reference = [(a, b) for a, b, _ in read_front_csv(Path(cfg.reference).read_text())]
        except OSError as e:
            raise ConfigError(f"cannot read reference front: {e}") from e

    try:
        if cfg.mode == "adaptive":
            try:
                params = SearchParams(seed=cfg.seed, sampler=cfg.sampler, **cfg.search)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad search parameters: {e}") from e
            budget = params.budget
            front, traj = explore(design, space, backend, advisor, params)
        elif cfg.mode == "nsga2":
            try:
                bparams = BaselineParams(**cfg.baseline)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad baseline parameters: {e}") from e
            budget = bparams.budget
            init = sample(space, SamplerSpec(cfg.sampler, bparams.n0, cfg.seed), design, advisor)
            front, traj = baseline_nsga2(design, space, backend, init, bparams, cfg.seed)
        else:
            raise ConfigError(f"unknown mode {cfg.mode!r}")
    except SearchAborted as e:
        write_trajectory(out / "trajectory.jsonl", e.trajectory, info)
        raise

    write_trajectory(out / "trajectory.jsonl", traj, info)
    (out / "front.csv").write_text(front_to_csv(front_rows(design, front), info))
    summary: dict[str, Any] = {
        **info,
        "budget": budget,
        "evaluations": len(traj),
        "invalid": sum(not e.qor.valid for e in traj),
        "front_size": len(front),
        "notes": traj.notes,
    }
    if reference is not None:
        score = adrs([o for _, o in front], reference)
        summary["adrs"] = round(score, 6) if score != float("inf") else None
        summary["target_adrs"] = cfg.target_adrs
        summary["evaluations_to_target"] = evaluations_to_target(traj, reference, cfg.target_adrs, budget)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def write_trajectory(path: Path, traj: Trajectory, info: dict[str, Any]) -> None:
    path.write_text(json.dumps({"meta": info}, sort_keys=True) + "\n" + traj.to_jsonl())


def cmd_adrs(args: argparse.Namespace) -> int:
    try:
        explored = read_front_csv(Path(args.explored).read_text())
        reference = read_front_csv(Path(args.reference).read_text())
    except OSError as e:
        raise ConfigError(str(e)) from e
    if not reference:
        raise FrontFormatError(f"{args.reference}: reference front is empty")
    print(f"{adrs([(a, b) for a, b, _ in explored], [(a, b) for a, b, _ in reference]):.6f}")
    return EXIT_OK


def cmd_emit_tcl(args: argparse.Namespace) -> int:
    design = load_design(args.design)
    if args.config:
        try:
            records = json.loads(Path(args.config).read_text())
            config = decode_feature_vector(design, records)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as e:
            raise ConfigError(f"bad directive file: {e}") from e
    else:
        config = DirectiveConfig()
    _write(emit_tcl(design, config), args.out)
    return EXIT_OK


# --- parser ------------------------------------------------------------------------


def _backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["mock", "replay", "external"])
    p.add_argument("--mock-params", choices=["default", "hostile"])
    p.add_argument("--replay", help="replay file (JSON lines keyed by config hash)")
    p.add_argument("--tool-cmd", help="synthesis command; run as '<cmd> script.tcl'")
    p.add_argument("--workdir")
    p.add_argument("--timeout", type=float, help="per-evaluation cap in seconds")
    p.add_argument("--workers", type=int)


def _advisor_flags(p: argparse.ArgumentParser, default: str | None = None) -> None:
    p.add_argument("--advisor", choices=["rule", "http", "none"], default=default)
    p.add_argument("--advisor-replay", help="recorded advisor transcript to replay")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hls-dse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a design description from kernel source via the advisor")
    p.add_argument("source")
    p.add_argument("--out")
    _advisor_flags(p, "http")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("space", help="print the unpruned design space")
    p.add_argument("design")
    p.add_argument("--out")
    p.set_defaults(func=cmd_space)

    p = sub.add_parser("prune", help="print the pruned design space")
    p.add_argument("design")
    p.add_argument("--rules", help="JSON pruning rule set")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sample", help="draw an initial population")
    p.add_argument("design")
    p.add_argument("--sampler", choices=["random", "beta", "lhs", "warm"], default="lhs")
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--rules")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--out")
    _advisor_flags(p, "rule")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reference", help="build a reference Pareto front")
    p.add_argument("design")
    p.add_argument("--mode", choices=["exhaustive", "random"], default="exhaustive")
    p.add_argument("--budget", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rules")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--out")
    _backend_flags(p)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("explore", help="run the adaptive search or the NSGA-II baseline")
    p.add_argument("design", nargs="?")
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--mode", choices=["adaptive", "nsga2"])
    p.add_argument("--sampler", choices=["random", "beta", "lhs", "warm"])
    p.add_argument("--seed", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--i-max", type=int)
    p.add_argument("--pop-size", type=int)
    p.add_argument("--rank2-quota", type=int)
    p.add_argument("--convergent-fraction", type=float)
    p.add_argument("--generations", type=int)
    p.add_argument("--reference", help="reference front CSV for ADRS")
    p.add_argument("--target-adrs", type=float)
    p.add_argument("--out")
    _backend_flags(p)
    _advisor_flags(p)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("adrs", help="ADRS of an explored front against a reference front")
    p.add_argument("explored")
    p.add_argument("reference")
    p.set_defaults(func=cmd_adrs)

    p = sub.add_parser("emit-tcl", help="write the synthesis script for one configuration")
    p.add_argument("design")
    p.add_argument("--config", help="JSON list of feature-vector records")
    p.add_argument("--out")
    p.set_defaults(func=cmd_emit_tcl)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DesignError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, UnknownConfigError) as e:
        print(f"backend error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except AdvisorError as e:
        print(f"advisor error: {e}", file=sys.stderr)
        return EXIT_ADVISOR
    except Refused as e:
        print(str(e), file=sys.stderr)
        return EXIT_REFUSED
    except FrontFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
