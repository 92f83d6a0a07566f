#!/usr/bin/env python3
"""Train weighted-scheduler weights on the fixtures plus a synthetic batch,
then compare the result against the heuristics on the same batch."""

from __future__ import annotations

import argparse

from continuum_twin.engine import fitness, run
from continuum_twin.scenario import FIXTURES, SynthesisParams, generate_synthetic, load_fixture
from continuum_twin.scheduler import BestFit, FirstFit, Weighted
from continuum_twin.training import TrainingConfig, evaluate_candidate, save_result, train_population


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fixtures", nargs="*", default=list(FIXTURES), choices=FIXTURES)
    ap.add_argument("--synthetic", type=int, default=4, help="number of synthetic scenarios")
    ap.add_argument("--jobs", type=int, default=40, help="jobs per synthetic scenario")
    ap.add_argument("--generations", type=int, default=20)
    ap.add_argument("--population", type=int, default=16)
    ap.add_argument("--elites", type=int, default=4)
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="trained_weights.json")
    args = ap.parse_args(argv)

    params = SynthesisParams(job_count=args.jobs, latency_bound_prob=0.5, failure_rate=10.0)
    batch = tuple([load_fixture(n) for n in args.fixtures]
                  + [generate_synthetic(params, 1000 + k) for k in range(args.synthetic)])
    cfg = TrainingConfig(scenarios=batch, generations=args.generations, population_size=args.population,
                         elite_count=args.elites, mutation_sigma=args.sigma, seed=args.seed,
                         workers=args.workers)
    result = train_population(cfg)
    for g, (best, mean, worst) in enumerate(result.history):
        print(f"gen {g:3d}  best {best:.4f}  mean {mean:.4f}  worst {worst:.4f}")
    save_result(args.out, result, cfg)

    def batch_fitness(make):
        return sum(fitness(run(s, make(), cfg.engine).report, cfg.objective) for s in batch) / len(batch)

    print(f"first_fit {batch_fitness(FirstFit):.4f}  best_fit {batch_fitness(BestFit):.4f}  "
          f"default weighted {batch_fitness(Weighted):.4f}  "
          f"trained {evaluate_candidate(result.best, batch, cfg.objective, cfg.engine):.4f}")
    print(f"weights {result.best.to_dict()} -> {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
