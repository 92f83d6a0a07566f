"""Population-based training of weighted schedulers with elitism."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import EngineConfig, Objective, fitness, run
from .scenario import Scenario, scenario_from_dict, scenario_to_dict
from .scheduler import Weighted, WeightVector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    scenarios: tuple[Scenario, ...]
    generations: int = 10
    population_size: int = 16
    elite_count: int = 4
    mutation_sigma: float = 0.1
    sigma_decay: float = 0.95
    objective: Objective = Objective()
    engine: EngineConfig = EngineConfig()
    seed: int = 0
    workers: int = 1
    initial: tuple[WeightVector, ...] = ()  # warm start from a saved result

    def __post_init__(self):
        if not 1 <= self.elite_count <= self.population_size:
            raise ValueError("need 1 <= elite_count <= population_size")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.mutation_sigma < 0 or self.sigma_decay < 0:
            raise ValueError("mutation_sigma and sigma_decay must be >= 0")
        if not self.scenarios:
            raise ValueError("scenario batch must be nonempty")
        if len(self.initial) > self.population_size:
            raise ValueError("more initial candidates than population_size")


@dataclass
class TrainingResult:
    best: WeightVector
    best_fitness: float
    history: list = field(default_factory=list)  # (best, mean, worst) per generation
    evaluations: int = 0


def evaluate_candidate(w: WeightVector, batch: Sequence[Scenario], objective: Objective = Objective(),
                       config: EngineConfig = EngineConfig()) -> float:
    """Mean fitness of the weighted scheduler over ``batch``."""
    if not batch:
        raise ValueError("batch must be nonempty")
    sched = Weighted(w)
    return sum(fitness(run(s, sched, config).report, objective) for s in batch) / len(batch)


def _evaluate(args) -> float:
    return evaluate_candidate(*args)


def candidate_rng(seed: int, generation: int, slot: int) -> np.random.Generator:
    return np.random.default_rng([seed, generation, slot])


def mutate_weights(w: WeightVector, sigma: float, rng) -> WeightVector:
    """Gaussian perturbation of every component, clamped to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return w
    step = rng.normal(0.0, sigma, size=5)
    return WeightVector(*(float(min(1.0, max(0.0, v + d))) for v, d in zip(w.as_tuple(), step)))


def _rank(pop: list[WeightVector], scores: list[float]) -> list[int]:
    # fitness desc, ties by lexicographic weight order
    return sorted(range(len(pop)), key=lambda i: (-scores[i], pop[i].as_tuple()))


def train_population(cfg: TrainingConfig) -> TrainingResult:
    P, mu = cfg.population_size, cfg.elite_count
    pop = list(cfg.initial)
    for slot in range(len(pop), P):
        pop.append(WeightVector(*map(float, candidate_rng(cfg.seed, 0, slot).uniform(size=5))))
    known: dict[WeightVector, float] = {}
    result = TrainingResult(best=pop[0], best_fitness=float("-inf"))
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        sigma = cfg.mutation_sigma
        for gen in range(cfg.generations + 1):
            todo = [w for w in dict.fromkeys(pop) if w not in known]
            args = [(w, cfg.scenarios, cfg.objective, cfg.engine) for w in todo]
            scores = list(pool.map(_evaluate, args)) if pool else [_evaluate(a) for a in args]
            known.update(zip(todo, scores))
            result.evaluations += len(todo)
            fit = [known[w] for w in pop]
            order = _rank(pop, fit)
            result.history.append((fit[order[0]], sum(fit) / len(fit), fit[order[-1]]))
            if fit[order[0]] > result.best_fitness:
                result.best, result.best_fitness = pop[order[0]], fit[order[0]]
            log.info("gen %d best %.5f mean %.5f", gen, *result.history[-1][:2])
            if gen == cfg.generations:
                break
            elites = [pop[i] for i in order[:mu]]
            nxt = list(elites)
            for slot in range(mu, P):
                parent = elites[(slot - mu) % mu]
                nxt.append(mutate_weights(parent, sigma, candidate_rng(cfg.seed, gen + 1, slot)))
            pop = nxt
            sigma *= cfg.sigma_decay
    finally:
        if pool is not None:
            pool.shutdown()
    return result


# ---------------------------------------------------------------------------
# persistence


def result_to_dict(result: TrainingResult, cfg: TrainingConfig) -> dict:
    return {
        "best": result.best.to_dict(),
        "best_fitness": result.best_fitness,
        "evaluations": result.evaluations,
        "history": [list(h) for h in result.history],
        "config": {
            "generations": cfg.generations,
            "population_size": cfg.population_size,
            "elite_count": cfg.elite_count,
            "mutation_sigma": cfg.mutation_sigma,
            "sigma_decay": cfg.sigma_decay,
            "objective": asdict(cfg.objective),
            "engine": asdict(cfg.engine),
            "seed": cfg.seed,
            "initial": [w.to_dict() for w in cfg.initial],
            "scenarios": [scenario_to_dict(s) for s in cfg.scenarios],
        },
    }


def save_result(path, result: TrainingResult, cfg: TrainingConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_dict(result, cfg), fh, indent=2)
        fh.write("\n")


def config_from_dict(d: dict, workers: int = 1) -> TrainingConfig:
    """Rebuild the exact training configuration stored in a result document."""
    c = d["config"] if "config" in d else d
    return TrainingConfig(
        scenarios=tuple(scenario_from_dict(s) for s in c["scenarios"]),
        generations=c["generations"],
        population_size=c["population_size"],
        elite_count=c["elite_count"],
        mutation_sigma=c["mutation_sigma"],
        sigma_decay=c["sigma_decay"],
        objective=Objective(**c["objective"]),
        engine=EngineConfig(**c["engine"]),
        seed=c["seed"],
        workers=workers,
        initial=tuple(WeightVector.from_dict(w) for w in c.get("initial", [])),
    )


def warm_start(d: dict, k: Optional[int] = None) -> tuple[WeightVector, ...]:
    """Seed candidates for a new run from a saved result (best first)."""
    out = [WeightVector.from_dict(d["best"])]
    return tuple(out[:k] if k else out)
