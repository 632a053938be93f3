"""Bundled kernel descriptions used by tests, experiments and the CLI."""

from importlib import resources

from ..design import HlsDesign, parse_design

# small kernels whose whole (pruned) space can be evaluated exhaustively
EXHAUSTIVE = ("sum4", "vadd16", "mv4", "fir8")


def names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__name__).iterdir() if p.name.endswith(".json"))


def load(name: str) -> HlsDesign:
    path = resources.files(__name__).joinpath(f"{name}.json")
    if not path.is_file():
        raise KeyError(f"no bundled design {name!r}; known: {', '.join(names())}")
    return parse_design(path.read_text())
