from .operators import (
    Bottleneck,
    classify_bottleneck,
    convergent_children,
    convergent_search,
    divergent_search,
    estimated_ii,
)

__all__ = [
    "Bottleneck",
    "classify_bottleneck",
    "convergent_children",
    "convergent_search",
    "divergent_search",
    "estimated_ii",
]
