"""Compare random search and regularized evolution against the exhaustive optimum
of the enumerable tiny space, over a handful of seeds.

    python3 scripts/search_demo.py [--seeds 20] [--budget 300]
"""

import argparse
import time
from pathlib import Path

from nas_forge.cost_model import default_config
from nas_forge.search_engine import InProcessEvaluator, Objective, exhaustive_search, run_evolution, run_random_search
from nas_forge.search_space import load_space, space_size

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--space", default=ROOT / "configs" / "tiny_space.json")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--budget", type=int, default=300)
    ap.add_argument("--target-us", type=float, default=100.0)
    ap.add_argument("--reward-exponent", type=float, default=-0.5)
    args = ap.parse_args()

    space = load_space(args.space)
    obj = Objective(args.target_us, args.reward_exponent)
    ev = InProcessEvaluator(default_config())
    best = exhaustive_search(space, obj, ev)
    print(f"space {space.name}: {space_size(space)} candidates; optimum {best.candidate.key()} "
          f"reward {best.reward:.6g} latency {best.latency_us} us")

    for name, run in (
        ("random", lambda s: run_random_search(space, args.budget, obj, ev, s)),
        ("evolution", lambda s: run_evolution(space, args.budget, 32, 8, obj, ev, s)),
    ):
        t0 = time.perf_counter()
        hits = 0
        for seed in range(args.seeds):
            res = run(seed)
            hits += res.best.candidate == best.candidate
        print(f"{name:<10} found the optimum in {hits}/{args.seeds} seeds ({time.perf_counter() - t0:.2f} s)")


if __name__ == "__main__":
    main()
