"""Adaptive search vs NSGA-II on the small fixtures, scored against exhaustive reference fronts.

Usage: python3 scripts/direction_of_effect.py [--seeds 12] [--generations 3]
"""

import argparse
import logging
import time

import numpy as np

from hlsdse import designs
from hlsdse.advisor import RuleAdvisor
from hlsdse.pareto import adrs, pareto_front
from hlsdse.qor import MockBackend
from hlsdse.sampling import SamplerSpec, sample
from hlsdse.search.baseline import BaselineParams, baseline_nsga2
from hlsdse.search.explore import SearchParams, explore
from hlsdse.space import build_space, iter_members, prune


def reference_front(design, space, backend):
    evals = []
    for c in iter_members(space):
        q = backend.evaluate(design, c)
        if q.valid:
            evals.append((c, q.objectives()))
    return [o for _, o in pareto_front(evals)]


def run(fixtures, seeds, generations):
    """ADRS per (method, fixture) as arrays over seeds."""
    backend = MockBackend()
    bp = BaselineParams(generations=generations)
    out = {}
    for name in fixtures:
        d = designs.load(name)
        space = prune(build_space(d), d)
        ref = reference_front(d, space, backend)
        rows = {"explore": [], "nsga2_random": [], "nsga2_warm": []}
        for seed in seeds:
            front, _ = explore(d, space, backend, RuleAdvisor(), SearchParams(seed=seed))
            rows["explore"].append(adrs([o for _, o in front], ref))
            init = sample(space, SamplerSpec("random", bp.n0, seed))
            front, _ = baseline_nsga2(d, space, backend, init, bp, seed)
            rows["nsga2_random"].append(adrs([o for _, o in front], ref))
            init = sample(space, SamplerSpec("warm_start", bp.n0, seed), d, RuleAdvisor())
            front, _ = baseline_nsga2(d, space, backend, init, bp, seed)
            rows["nsga2_warm"].append(adrs([o for _, o in front], ref))
        out[name] = {k: np.array(v) for k, v in rows.items()}
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=12)
    ap.add_argument("--generations", type=int, default=3, help="3 gives the same 48-evaluation budget as explore")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)

    t0 = time.monotonic()
    res = run(designs.EXHAUSTIVE, range(args.seeds), args.generations)
    print(f"{'fixture':10} {'explore':>9} {'nsga2/rnd':>10} {'nsga2/warm':>11} {'warm<rnd':>9}")
    for name, r in res.items():
        wins = int(np.sum(r["nsga2_warm"] < r["nsga2_random"]))
        print(
            f"{name:10} {np.median(r['explore']):9.4f} {np.median(r['nsga2_random']):10.4f} "
            f"{np.median(r['nsga2_warm']):11.4f} {wins:>6}/{args.seeds}"
        )
    mean = {k: np.mean([r[k] for r in res.values()], axis=0) for k in ("explore", "nsga2_random", "nsga2_warm")}
    wins = int(np.sum(mean["nsga2_warm"] < mean["nsga2_random"]))
    print(
        f"{'suite mean':10} {np.median(mean['explore']):9.4f} {np.median(mean['nsga2_random']):10.4f} "
        f"{np.median(mean['nsga2_warm']):11.4f} {wins:>6}/{args.seeds}"
    )
    print(f"elapsed {time.monotonic() - t0:.1f}s")


if __name__ == "__main__":
    main()
