"""Invalid evaluations from random sampling, pruned vs unpruned space, under the hostile mock model.

Usage: python3 scripts/invalid_counts.py [--seeds 20] [--n 48]
"""

import argparse
import logging

from hlsdse import designs
from hlsdse.qor import MockBackend, MockModelParams
from hlsdse.sampling import SamplerSpec, random_sample
from hlsdse.space import build_space, prune


def invalid_counts(name, seeds, n):
    """Per-seed invalid counts for the unpruned and pruned space."""
    d = designs.load(name)
    backend = MockBackend(MockModelParams.hostile())
    spaces = {"unpruned": build_space(d), "pruned": prune(build_space(d), d)}
    out = {k: [] for k in spaces}
    for seed in seeds:
        for k, space in spaces.items():
            configs = list(random_sample(space, SamplerSpec("random", n, seed)))
            out[k].append(sum(not q.valid for q in backend.evaluate_batch(d, configs)))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n", type=int, default=48)
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    print(f"{'fixture':10} {'unpruned':>9} {'pruned':>7} {'reduction':>10}")
    for name in designs.names():
        c = invalid_counts(name, range(args.seeds), args.n)
        full, pr = sum(c["unpruned"]), sum(c["pruned"])
        red = f"{1 - pr / full:10.1%}" if full else f"{'n/a':>10}"
        print(f"{name:10} {full:9d} {pr:7d} {red}")


if __name__ == "__main__":
    main()
