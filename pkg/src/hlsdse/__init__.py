"""Directive design-space exploration for high-level synthesis kernels."""

__version__ = "0.1.0"

from .design import DirectiveConfig, HlsDesign, emit_tcl, parse_design
from .pareto import adrs, non_dominated_sort, pareto_front
from .qor import MockBackend, MockModelParams, QoR
from .space import DesignSpace, PruneRuleSet, build_space, prune
from .advisor import HttpAdvisor, HttpAdvisorConfig, RuleAdvisor
from .search.explore import SearchParams, Trajectory, explore
from .search.baseline import BaselineParams, baseline_nsga2
