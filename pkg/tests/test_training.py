import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from continuum_twin.engine import KPIReport, Objective, fitness, run
from continuum_twin.scenario import Scenario, SynthesisParams, generate_synthetic
from continuum_twin.scheduler import Weighted, WeightVector
from continuum_twin.training import (
    TrainingConfig,
    candidate_rng,
    config_from_dict,
    evaluate_candidate,
    mutate_weights,
    result_to_dict,
    save_result,
    train_population,
    warm_start,
)
from continuum_twin.twin import NodeSpec

W = WeightVector(0.4, 0.3, 0.2, 0.1, 0.5)


def batch(k=2, jobs=12):
    p = SynthesisParams(n_iot=2, n_edge=2, n_cloud=1, job_count=jobs, latency_bound_prob=0.6)
    return tuple(generate_synthetic(p, seed) for seed in range(k))


class FixedDraws:
    def __init__(self, draws):
        self.draws = np.asarray(draws)

    def normal(self, loc, scale, size):
        return self.draws[:size]


def test_evaluate_empty_scenario():
    empty = Scenario("e", 0, "", (NodeSpec("n", "edge", 1, 1, 1, 1.0, 2.0, {}),), (), ())
    assert evaluate_candidate(W, [empty]) == fitness(KPIReport())


def test_evaluate_singleton_and_mean():
    b = batch()
    f = [fitness(run(s, Weighted(W)).report) for s in b]
    assert evaluate_candidate(W, b[:1]) == f[0]
    assert evaluate_candidate(W, b) == pytest.approx((f[0] + f[1]) / 2)
    with pytest.raises(ValueError):
        evaluate_candidate(W, [])


def test_mutation_rules():
    assert mutate_weights(W, 0.0, candidate_rng(1, 2, 3)) is W
    a = mutate_weights(W, 0.3, candidate_rng(1, 2, 3))
    b = mutate_weights(W, 0.3, candidate_rng(1, 2, 3))
    assert a == b and a != W
    hi = WeightVector(0.95, 0.5, 0.5, 0.5, 0.05)
    out = mutate_weights(hi, 0.1, FixedDraws([0.3, 0.0, 0.0, 0.0, -0.3]))
    assert out.w_fit == 1.0 and out.theta == 0.0
    with pytest.raises(ValueError):
        mutate_weights(W, -0.1, candidate_rng(0, 0, 0))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 5))
def test_mutants_stay_in_bounds(seed, sigma):
    out = mutate_weights(W, sigma, candidate_rng(seed, 0, 0))
    assert all(0.0 <= v <= 1.0 for v in out.as_tuple())


def test_config_validation():
    b = batch(1)
    with pytest.raises(ValueError):
        TrainingConfig(scenarios=b, elite_count=0)
    with pytest.raises(ValueError):
        TrainingConfig(scenarios=b, population_size=4, elite_count=5)
    with pytest.raises(ValueError):
        TrainingConfig(scenarios=(), population_size=4)
    with pytest.raises(ValueError):
        TrainingConfig(scenarios=b, generations=-1)


def test_generation_zero_only():
    cfg = TrainingConfig(scenarios=batch(1), generations=0, population_size=6, elite_count=2, seed=5)
    res = train_population(cfg)
    assert len(res.history) == 1 and res.evaluations == 6
    assert res.best_fitness == res.history[0][0]


def test_elitism_and_bounds():
    cfg = TrainingConfig(scenarios=batch(2), generations=5, population_size=8, elite_count=2,
                         mutation_sigma=0.3, seed=9)
    res = train_population(cfg)
    bests = [h[0] for h in res.history]
    assert len(bests) == 6
    assert all(b1 >= b0 for b0, b1 in zip(bests, bests[1:]))
    assert res.best_fitness == bests[-1]
    assert all(0 <= v <= 1 for v in res.best.as_tuple())
    assert evaluate_candidate(res.best, cfg.scenarios) == res.best_fitness


def test_serial_equals_parallel():
    kw = dict(scenarios=batch(2, jobs=8), generations=2, population_size=6, elite_count=2, seed=3)
    serial = train_population(TrainingConfig(**kw, workers=1))
    parallel = train_population(TrainingConfig(**kw, workers=2))
    assert serial == parallel


def test_result_persistence_and_warm_start(tmp_path):
    cfg = TrainingConfig(scenarios=batch(1, jobs=6), generations=1, population_size=4, elite_count=2,
                         seed=4, objective=Objective(1, 0.5, 0.5, 2))
    res = train_population(cfg)
    path = tmp_path / "result.json"
    save_result(path, res, cfg)
    doc = json.loads(path.read_text())
    assert doc == json.loads(json.dumps(result_to_dict(res, cfg)))
    again = config_from_dict(doc)
    assert again == cfg
    assert train_population(again) == res
    seeded = TrainingConfig(scenarios=cfg.scenarios, generations=0, population_size=4, elite_count=2,
                            objective=cfg.objective,
                            initial=warm_start(doc))
    assert train_population(seeded).best_fitness >= res.best_fitness
