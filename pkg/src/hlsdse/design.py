"""Kernel structure, directive configurations, feature vectors and Tcl emission."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Iterator, Mapping

COMPLETE, BLOCK, CYCLIC = 0, 1, 2
PARTITION_NAMES = {COMPLETE: "complete", BLOCK: "block", CYCLIC: "cyclic"}
PARTITION_CODES = {v: k for k, v in PARTITION_NAMES.items()}


class DesignError(ValueError):
    """Base class for malformed or inconsistent design documents."""


class DesignParseError(DesignError):
    def __init__(self, path: str, message: str):
        self.field = path
        super().__init__(f"{path}: {message}")


class DesignValidationError(DesignError):
    pass


@dataclass(frozen=True)
class LoopInfo:
    name: str
    trip_count: int
    children: tuple[LoopInfo, ...] = ()
    is_perfect: bool = True
    # (array name, 1-based dimension index)
    accessed_arrays: tuple[tuple[str, int], ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class ArrayInfo:
    name: str
    dims: tuple[int, ...]

    def size(self, dim: int) -> int:
        return self.dims[dim - 1]


@dataclass(frozen=True)
class LoopSite:
    """A loop with its position in the forest."""

    loop: LoopInfo
    depth: int  # 1 for top-level loops
    parent: str | None
    root: str


@dataclass(frozen=True)
class HlsDesign:
    kernel_name: str
    loops: tuple[LoopInfo, ...]
    arrays: tuple[ArrayInfo, ...]
    source_path: str | None = None

    def __post_init__(self) -> None:
        if not self.loops:
            raise DesignValidationError("design has no loops")
        seen: set[str] = set()
        for site in self.loop_sites:
            lp = site.loop
            if lp.name in seen:
                raise DesignValidationError(f"duplicate loop name {lp.name!r}")
            seen.add(lp.name)
            if lp.trip_count < 1:
                raise DesignValidationError(f"loop {lp.name!r}: trip_count must be >= 1")
            if lp.children and lp.is_perfect and len(lp.children) != 1:
                raise DesignValidationError(
                    f"loop {lp.name!r}: a perfect loop with children has exactly one child"
                )
        names = [a.name for a in self.arrays]
        if len(set(names)) != len(names):
            raise DesignValidationError("duplicate array names")
        for a in self.arrays:
            if not a.dims or any(d < 1 for d in a.dims):
                raise DesignValidationError(f"array {a.name!r}: dims must be non-empty and >= 1")
        arrays = {a.name: a for a in self.arrays}
        for site in self.loop_sites:
            for arr, dim in site.loop.accessed_arrays:
                if arr not in arrays:
                    raise DesignValidationError(
                        f"loop {site.loop.name!r} accesses unknown array {arr!r}"
                    )
                if not 1 <= dim <= len(arrays[arr].dims):
                    raise DesignValidationError(
                        f"loop {site.loop.name!r}: array {arr!r} has no dimension {dim}"
                    )

    @cached_property
    def loop_sites(self) -> tuple[LoopSite, ...]:
        """Loops in declaration (pre-order) order."""
        out: list[LoopSite] = []

        def walk(lp: LoopInfo, depth: int, parent: str | None, root: str) -> None:
            out.append(LoopSite(lp, depth, parent, root))
            for ch in lp.children:
                walk(ch, depth + 1, lp.name, root)

        for top in self.loops:
            walk(top, 1, None, top.name)
        return tuple(out)

    @cached_property
    def _sites(self) -> dict[str, LoopSite]:
        return {s.loop.name: s for s in self.loop_sites}

    @cached_property
    def _arrays(self) -> dict[str, ArrayInfo]:
        return {a.name: a for a in self.arrays}

    @property
    def loop_names(self) -> list[str]:
        return [s.loop.name for s in self.loop_sites]

    @property
    def array_names(self) -> list[str]:
        return [a.name for a in self.arrays]

    def loop(self, name: str) -> LoopInfo:
        return self.site(name).loop

    def site(self, name: str) -> LoopSite:
        try:
            return self._sites[name]
        except KeyError:
            raise KeyError(f"unknown loop {name!r}") from None

    def array(self, name: str) -> ArrayInfo:
        try:
            return self._arrays[name]
        except KeyError:
            raise KeyError(f"unknown array {name!r}") from None

    def has_loop(self, name: str) -> bool:
        return name in self._sites

    def has_array(self, name: str) -> bool:
        return name in self._arrays

    def ancestors(self, name: str) -> list[str]:
        """Ancestor loop names, nearest first."""
        out = []
        parent = self.site(name).parent
        while parent is not None:
            out.append(parent)
            parent = self._sites[parent].parent
        return out

    def subtree(self, name: str) -> list[LoopInfo]:
        """The loop and all its descendants, pre-order."""
        out: list[LoopInfo] = []

        def walk(lp: LoopInfo) -> None:
            out.append(lp)
            for ch in lp.children:
                walk(ch)

        walk(self.loop(name))
        return out

    def leaves(self) -> list[str]:
        return [s.loop.name for s in self.loop_sites if s.loop.is_leaf]

    def nest_depth(self, root: str) -> int:
        """Number of loop levels in the nest rooted at ``root``."""
        lp = self.loop(root)
        if lp.is_leaf:
            return 1
        return 1 + max(self.nest_depth(ch.name) for ch in lp.children)

    def inner_trip_count(self, name: str) -> int:
        """Largest product of trip counts along any path strictly below ``name``."""
        lp = self.loop(name)
        if lp.is_leaf:
            return 1
        return max(ch.trip_count * self.inner_trip_count(ch.name) for ch in lp.children)

    def accessors(self, array: str) -> list[tuple[str, int]]:
        """(loop name, dim) pairs for loops whose body touches ``array``."""
        return [
            (s.loop.name, dim)
            for s in self.loop_sites
            for arr, dim in s.loop.accessed_arrays
            if arr == array
        ]


@dataclass(frozen=True)
class LoopDirective:
    pipeline: int = 0
    unroll: int = 0

    def __post_init__(self) -> None:
        if self.pipeline not in (0, 1):
            raise ValueError(f"pipeline must be 0 or 1, got {self.pipeline}")
        if self.unroll < 0:
            raise ValueError(f"unroll must be >= 0, got {self.unroll}")
        if self.unroll == 1:
            object.__setattr__(self, "unroll", 0)


@dataclass(frozen=True)
class ArrayDirective:
    type: int = CYCLIC
    dim: int = 1
    factor: int = 0

    def __post_init__(self) -> None:
        if self.type not in PARTITION_NAMES:
            raise ValueError(f"partition type must be 0, 1 or 2, got {self.type}")
        if self.dim < 1:
            raise ValueError(f"partition dim must be >= 1, got {self.dim}")
        if self.factor < 0:
            raise ValueError(f"partition factor must be >= 0, got {self.factor}")

    @property
    def active(self) -> bool:
        return self.type == COMPLETE or self.factor > 0


DEFAULT_LOOP = LoopDirective()
DEFAULT_ARRAY = ArrayDirective()


@dataclass(frozen=True)
class DirectiveConfig:
    """One point of the design space.

    Sites left out take the default directive (everything off), and explicit
    defaults are dropped so that equal configurations compare equal.
    """

    loops: tuple[tuple[str, LoopDirective], ...] = ()
    arrays: tuple[tuple[str, ArrayDirective], ...] = ()

    def __post_init__(self) -> None:
        loops = dict(self.loops)
        arrays = dict(self.arrays)
        object.__setattr__(
            self, "loops", tuple(sorted((k, v) for k, v in loops.items() if v != DEFAULT_LOOP))
        )
        object.__setattr__(
            self, "arrays", tuple(sorted((k, v) for k, v in arrays.items() if v != DEFAULT_ARRAY))
        )

    @classmethod
    def build(
        cls,
        loops: Mapping[str, LoopDirective | tuple[int, int]] | None = None,
        arrays: Mapping[str, ArrayDirective | tuple[int, int, int]] | None = None,
    ) -> DirectiveConfig:
        ld = {k: v if isinstance(v, LoopDirective) else LoopDirective(*v) for k, v in (loops or {}).items()}
        ad = {k: v if isinstance(v, ArrayDirective) else ArrayDirective(*v) for k, v in (arrays or {}).items()}
        return cls(tuple(ld.items()), tuple(ad.items()))

    def loop(self, name: str) -> LoopDirective:
        return dict(self.loops).get(name, DEFAULT_LOOP)

    def array(self, name: str) -> ArrayDirective:
        return dict(self.arrays).get(name, DEFAULT_ARRAY)

    def replace(
        self,
        loops: Mapping[str, LoopDirective] | None = None,
        arrays: Mapping[str, ArrayDirective] | None = None,
    ) -> DirectiveConfig:
        ld = dict(self.loops)
        ld.update(loops or {})
        ad = dict(self.arrays)
        ad.update(arrays or {})
        return DirectiveConfig(tuple(ld.items()), tuple(ad.items()))

    def check_names(self, design: HlsDesign) -> None:
        for name, _ in self.loops:
            if not design.has_loop(name):
                raise KeyError(f"unknown loop {name!r}")
        for name, _ in self.arrays:
            if not design.has_array(name):
                raise KeyError(f"unknown array {name!r}")

    def as_vector(self, design: HlsDesign) -> tuple[int, ...]:
        """Flat coordinates: per loop (pipeline, unroll), then per array (type, dim, factor)."""
        self.check_names(design)
        out: list[int] = []
        for name in design.loop_names:
            d = self.loop(name)
            out += [d.pipeline, d.unroll]
        for name in design.array_names:
            a = self.array(name)
            out += [a.type, a.dim, a.factor]
        return tuple(out)

    @classmethod
    def from_vector(cls, design: HlsDesign, vec: Iterable[int]) -> DirectiveConfig:
        v = [int(x) for x in vec]
        nl = len(design.loop_names)
        if len(v) != 2 * nl + 3 * len(design.arrays):
            raise ValueError("vector length does not match design")
        loops = {n: LoopDirective(v[2 * i], v[2 * i + 1]) for i, n in enumerate(design.loop_names)}
        base = 2 * nl
        arrays = {
            n: ArrayDirective(v[base + 3 * i], v[base + 3 * i + 1], v[base + 3 * i + 2])
            for i, n in enumerate(design.array_names)
        }
        return cls.build(loops, arrays)


def encode_feature_vector(design: HlsDesign, config: DirectiveConfig) -> list[dict[str, Any]]:
    config.check_names(design)
    records: list[dict[str, Any]] = []
    for name in design.loop_names:
        d = config.loop(name)
        records.append({"name": name, "pipeline": d.pipeline, "unroll": d.unroll})
    for name in design.array_names:
        a = config.array(name)
        records.append({"name": name, "type": a.type, "dim": a.dim, "factor": a.factor})
    return records


def decode_feature_vector(design: HlsDesign, records: Iterable[Mapping[str, Any]]) -> DirectiveConfig:
    """Inverse of :func:`encode_feature_vector`; missing sites take defaults."""
    loops: dict[str, LoopDirective] = {}
    arrays: dict[str, ArrayDirective] = {}
    for i, rec in enumerate(records):
        name = rec.get("name")
        if not isinstance(name, str):
            raise DesignParseError(f"[{i}].name", "missing or not a string")
        if design.has_loop(name):
            loops[name] = LoopDirective(int(rec.get("pipeline", 0)), int(rec.get("unroll", 0)))
        elif design.has_array(name):
            arrays[name] = ArrayDirective(
                int(rec.get("type", CYCLIC)), int(rec.get("dim", 1)), int(rec.get("factor", 0))
            )
        else:
            raise KeyError(f"unknown site {name!r}")
    return DirectiveConfig.build(loops, arrays)


def config_hash(design: HlsDesign, config: DirectiveConfig) -> str:
    blob = json.dumps(encode_feature_vector(design, config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- design documents -------------------------------------------------------


def _parse_loop(doc: Any, path: str) -> LoopInfo:
    if not isinstance(doc, dict):
        raise DesignParseError(path, "expected an object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise DesignParseError(f"{path}.name", "missing or not a string")
    trip = doc.get("trip_count")
    if isinstance(trip, bool) or not isinstance(trip, int):
        raise DesignParseError(f"{path}.trip_count", "missing or not an integer")
    perfect = doc.get("is_perfect", True)
    if not isinstance(perfect, bool):
        raise DesignParseError(f"{path}.is_perfect", "not a boolean")
    acc = doc.get("accessed_arrays", [])
    if not isinstance(acc, list):
        raise DesignParseError(f"{path}.accessed_arrays", "not a list")
    pairs = []
    for j, pair in enumerate(acc):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not isinstance(pair[0], str)
            or isinstance(pair[1], bool)
            or not isinstance(pair[1], int)
        ):
            raise DesignParseError(f"{path}.accessed_arrays[{j}]", "expected [array, dim]")
        pairs.append((pair[0], pair[1]))
    kids = doc.get("children", [])
    if not isinstance(kids, list):
        raise DesignParseError(f"{path}.children", "not a list")
    children = tuple(_parse_loop(c, f"{path}.children[{k}]") for k, c in enumerate(kids))
    return LoopInfo(name, trip, children, perfect, tuple(pairs))


def design_from_dict(doc: Any) -> HlsDesign:
    if not isinstance(doc, dict):
        raise DesignParseError("$", "expected an object")
    kernel = doc.get("kernel")
    if not isinstance(kernel, str) or not kernel:
        raise DesignParseError("kernel", "missing or not a string")
    loops = doc.get("loops")
    if not isinstance(loops, list):
        raise DesignParseError("loops", "missing or not a list")
    arrays = doc.get("arrays", [])
    if not isinstance(arrays, list):
        raise DesignParseError("arrays", "not a list")
    parsed_arrays = []
    for i, a in enumerate(arrays):
        if not isinstance(a, dict) or not isinstance(a.get("name"), str):
            raise DesignParseError(f"arrays[{i}].name", "missing or not a string")
        dims = a.get("dims")
        if not isinstance(dims, list) or not all(
            isinstance(d, int) and not isinstance(d, bool) for d in dims
        ):
            raise DesignParseError(f"arrays[{i}].dims", "missing or not a list of integers")
        parsed_arrays.append(ArrayInfo(a["name"], tuple(dims)))
    source = doc.get("source_path")
    if source is not None and not isinstance(source, str):
        raise DesignParseError("source_path", "not a string")
    return HlsDesign(
        kernel,
        tuple(_parse_loop(lp, f"loops[{i}]") for i, lp in enumerate(loops)),
        tuple(parsed_arrays),
        source,
    )


def parse_design(document: str | bytes) -> HlsDesign:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise DesignParseError("$", f"invalid JSON ({e})") from e
    return design_from_dict(doc)


def _loop_to_dict(lp: LoopInfo) -> dict[str, Any]:
    return {
        "name": lp.name,
        "trip_count": lp.trip_count,
        "is_perfect": lp.is_perfect,
        "accessed_arrays": [[a, d] for a, d in lp.accessed_arrays],
        "children": [_loop_to_dict(c) for c in lp.children],
    }


def design_to_dict(design: HlsDesign) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "kernel": design.kernel_name,
        "loops": [_loop_to_dict(lp) for lp in design.loops],
        "arrays": [{"name": a.name, "dims": list(a.dims)} for a in design.arrays],
    }
    if design.source_path is not None:
        doc["source_path"] = design.source_path
    return doc


def serialize_design(design: HlsDesign) -> str:
    return json.dumps(design_to_dict(design), indent=2)


# --- Tcl ---------------------------------------------------------------------


@dataclass(frozen=True)
class ProjectSettings:
    part: str = "xczu7ev-ffvc1156-2-e"
    clock_period: float = 10
    solution_name: str = "solution"
    project_name: str | None = None
    source_files: tuple[str, ...] = field(default=())


def project_settings_default(**overrides: Any) -> ProjectSettings:
    return ProjectSettings(**overrides)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def emit_tcl(design: HlsDesign, config: DirectiveConfig, project: ProjectSettings | None = None) -> str:
    project = project or ProjectSettings()
    config.check_names(design)
    top = design.kernel_name
    sources = project.source_files or (design.source_path or f"{top}.cpp",)
    lines = ["# Project Setup", f"open_project {project.project_name or top}"]
    lines += [f"add_files {s}" for s in sources]
    lines += [
        f"set_top {top}",
        "",
        "# Solution Configuration",
        f"open_solution {project.solution_name}",
        f"set_part {{{project.part}}}",
        f"create_clock -period {_fmt_num(project.clock_period)} -name default",
        "",
    ]

    partitions = []
    for name in design.array_names:
        a = config.array(name)
        if not a.active:
            continue
        head = f"set_directive_array_partition -type {PARTITION_NAMES[a.type]}"
        if a.type != COMPLETE:
            head += f" -factor {a.factor}"
        partitions += [head + " \\", f' -dim {a.dim} "{top}" {name}']
    pipelines = [
        f'set_directive_pipeline "{top}/{n}"' for n in design.loop_names if config.loop(n).pipeline
    ]
    unrolls = [
        f'set_directive_unroll -factor {config.loop(n).unroll} "{top}/{n}"'
        for n in design.loop_names
        if config.loop(n).unroll > 1
    ]
    for title, block in (
        ("# Array Partition Directives", partitions),
        ("# Loop Pipeline Directives", pipelines),
        ("# Loop Unroll Directives", unrolls),
    ):
        if block:
            lines += [title, *block, ""]
    lines += ["# HLS Synthesis", "csynth_design", "exit"]
    return "\n".join(lines) + "\n"


def iter_configs_records(design: HlsDesign, configs: Iterable[DirectiveConfig]) -> Iterator[str]:
    """JSON lines, one feature-vector record list per config."""
    for c in configs:
        yield json.dumps(encode_feature_vector(design, c))
