import numpy as np
import pytest

from zapfield.d2r import FitnessReport
from zapfield.exceptions import ConfigurationError, ContractViolation, EvolutionError, InputError
from zapfield.evolve import (EsConfig, EvolutionLog, GaConfig, adapt_step_size, arithmetic_crossover,
                             mutate_gaussian, run_es, run_ga, tournament_select)
from zapfield.helpers import mix_seed
from zapfield.p2i import ArchConfig, param_count


def sphere(genome, seed):
    return -float(np.sum(np.asarray(genome) ** 2))


def init10(seed):
    return np.random.default_rng(seed).uniform(-2.0, 2.0, 10)


class CountingFitness:
    def __init__(self, fn=sphere):
        self.fn    = fn
        self.calls = 0

    def __call__(self, genome, seed):
        self.calls += 1
        return self.fn(genome, seed)


def test_configs():
    es = EsConfig()
    assert (es.sigma0, es.p_target, es.window) == (0.1, 0.2, 5)
    assert (es.sigma_min, es.sigma_max) == (1e-6, 5.0)

    ga = GaConfig()
    assert (ga.pop_size, ga.tournament_k, ga.mutation_sigma, ga.generations) == (20, 8, 0.1, 50)
    assert ga.elitism == 1

    with pytest.raises(ConfigurationError):
        EsConfig(sigma_min=5.0, sigma_max=1.0)
    with pytest.raises(ConfigurationError):
        EsConfig(p_target=1.0)
    with pytest.raises(ConfigurationError) as e:
        GaConfig(pop_size=5, tournament_k=8)
    assert e.value.field == "tournament_k"
    with pytest.raises(ConfigurationError):
        GaConfig(pop_size=5, tournament_k=2, elitism=5)


def test_adapt_step_size():
    cfg = EsConfig()
    assert adapt_step_size(0.1, [1, 1, 0, 0, 0], cfg) == pytest.approx(0.09)
    assert adapt_step_size(0.1, [0, 0, 0, 0, 0], cfg) == pytest.approx(0.11)
    assert adapt_step_size(4.8, [0, 0, 0, 0, 0], cfg) == 5.0
    assert adapt_step_size(1e-6, [1, 1, 1, 1, 1], cfg) == 1e-6

    # exactly p_target grows
    assert adapt_step_size(0.1, [1, 0, 0, 0, 0], cfg) == pytest.approx(0.11)

    # only the last `window` outcomes count
    assert adapt_step_size(0.1, [1, 1, 1, 1, 1, 0, 0, 0, 0, 0], cfg) == pytest.approx(0.11)

    with pytest.raises(ContractViolation):
        adapt_step_size(0.1, [], cfg)


def test_mutate_gaussian():
    parent = np.zeros(100_000)
    child  = mutate_gaussian(parent, 0.1, seed=3)

    assert np.all(parent == 0)
    assert 0.097 <= np.std(child - parent) <= 0.103
    np.testing.assert_array_equal(child, mutate_gaussian(parent, 0.1, seed=3))

    tiny = mutate_gaussian(np.ones(1000), 1e-6, seed=1)
    assert np.max(np.abs(tiny - 1.0)) < 6e-6

    half = mutate_gaussian(parent, 0.1, seed=3, rate=0.5)
    assert 0.45 < np.mean(half == 0) < 0.55

    with pytest.raises(InputError):
        mutate_gaussian(parent, 0.0, seed=1)


def test_es_constant_fitness():
    cfg = EsConfig(generations=10)
    log = run_es(cfg, None, lambda g, s: 1.0, seed=0, init=init10)

    assert len(log) == 11
    # every offspring is accepted on ties, the window is all successes
    sigmas = [r.sigma for r in log.records]
    np.testing.assert_allclose(sigmas, 0.1 * 0.9 ** np.arange(11))


def test_es_zero_generations():
    log = run_es(EsConfig(generations=0), None, sphere, seed=1, init=init10)
    assert len(log) == 1
    assert log.records[0].generation == 0
    np.testing.assert_array_equal(log.best_genome, init10(mix_seed(1, "init")))


def test_es_sphere():
    cfg = EsConfig(generations=200)
    for seed in range(10):
        log = run_es(cfg, None, sphere, seed=seed, init=init10)
        best = [r.best_fitness for r in log.records]

        assert len(log) == 201
        assert best[-1] > best[0]
        assert all(b1 >= b0 for b0, b1 in zip(best, best[1:]))
        assert all(cfg.sigma_min <= r.sigma <= cfg.sigma_max for r in log.records)
        assert log.best_fitness == sphere(log.best_genome, 0)


def test_es_reproducible():
    a = run_es(EsConfig(generations=20), None, sphere, seed=4, init=init10)
    b = run_es(EsConfig(generations=20), None, sphere, seed=4, init=init10)
    assert a.records == b.records
    np.testing.assert_array_equal(a.best_genome, b.best_genome)


def test_es_default_init():
    arch = ArchConfig(grid_n=2, hidden_dims=(2,))
    log  = run_es(EsConfig(generations=2), arch, sphere, seed=0)
    assert log.best_genome.size == param_count(arch)

    with pytest.raises(InputError):
        run_es(EsConfig(generations=2), None, sphere, seed=0)


def test_es_parent_reevaluation():
    cached = CountingFitness()
    run_es(EsConfig(generations=10), None, cached, seed=0, init=init10)
    assert cached.calls == 1 + 10

    seen = []

    def noisy(genome, seed):
        seen.append(seed)
        return sphere(genome, seed)

    fitness = CountingFitness(noisy)
    log = run_es(EsConfig(generations=10, reevaluate_parent=True), None, fitness, seed=0, init=init10)
    assert fitness.calls == 1 + 2 * 10
    assert len(set(seen)) == len(seen)
    assert len(log) == 11


def test_es_fitness_error_keeps_log():
    def crash_on_fourth(genome, seed):
        if fitness.calls > 3:
            raise RuntimeError("simulator crashed")
        return 0.0

    fitness = CountingFitness(crash_on_fourth)

    with pytest.raises(EvolutionError) as e:
        run_es(EsConfig(generations=10), None, fitness, seed=0, init=init10)

    assert len(e.value.log) == 3
    assert isinstance(e.value.__cause__, RuntimeError)


def test_es_reports():
    def report(genome, seed):
        score = float(genome[0] > 0)
        return FitnessReport(r_distance=score, r_position=0.0, r_combined=score / 2)

    log = run_es(EsConfig(generations=5), None, report, seed=2, init=init10)
    assert log.records[0].best_r_distance is not None
    assert log.records[0].best_fitness == log.records[0].best_r_distance / 2


def test_tournament_select():
    fitnesses = [0.1, 0.9, 0.3, 0.9, 0.5]
    population = [np.zeros(1)] * 5

    # full tournament is a global argmax, ties to the lowest index
    for seed in range(5):
        assert tournament_select(population, fitnesses, 5, seed) == 1

    rng = np.random.default_rng(0)
    picks = [tournament_select(population, fitnesses, 1, rng) for _ in range(5000)]
    counts = np.bincount(picks, minlength=5) / 5000
    assert np.all(np.abs(counts - 0.2) < 0.03)

    with pytest.raises(InputError):
        tournament_select(population, fitnesses, 6, 0)


def test_tournament_best_frequency():
    fitnesses  = np.arange(20, dtype=float)
    population = [np.zeros(1)] * 20
    rng = np.random.default_rng(1)
    wins = sum(tournament_select(population, fitnesses, 8, rng) == 19 for _ in range(10_000))
    assert wins / 10_000 == pytest.approx(0.4, abs=0.02)


def test_arithmetic_crossover():
    p1 = np.array([0.0, 2.0])
    p2 = np.array([2.0, 0.0])
    np.testing.assert_array_equal(arithmetic_crossover(p1, p2, 1.0), p1)
    np.testing.assert_array_equal(arithmetic_crossover(p1, p2, 0.5), [1.0, 1.0])

    rng = np.random.default_rng(0)
    a, b = rng.normal(size=50), rng.normal(size=50)
    child = arithmetic_crossover(a, b, 0.3)
    assert np.all(child >= np.minimum(a, b) - 1e-12)
    assert np.all(child <= np.maximum(a, b) + 1e-12)

    with pytest.raises(InputError):
        arithmetic_crossover(p1, np.zeros(3), 0.5)


def test_ga_sphere():
    cfg = GaConfig(generations=20)
    for seed in range(10):
        log  = run_ga(cfg, None, sphere, seed=seed, init=init10)
        best = [r.best_fitness for r in log.records]

        assert len(log) == 21
        assert best[-1] > best[0]
        assert all(b1 >= b0 for b0, b1 in zip(best, best[1:]))
        assert all(r.sigma is None for r in log.records)
        assert log.best_fitness == sphere(log.best_genome, 0)


def test_ga_evaluation_count():
    fitness = CountingFitness()
    run_ga(GaConfig(pop_size=20, elitism=1, generations=3), None, fitness, seed=0, init=init10)
    assert fitness.calls == 20 + 3 * 19


def test_ga_workers_do_not_change_the_result():
    cfg = GaConfig(pop_size=10, tournament_k=4, generations=5)
    serial   = run_ga(cfg, None, sphere, seed=7, init=init10)
    parallel = run_ga(cfg, None, sphere, seed=7, init=init10, workers=4)
    assert serial.records == parallel.records
    np.testing.assert_array_equal(serial.best_genome, parallel.best_genome)


def test_ga_degenerate_operators():
    cfg = GaConfig(pop_size=10, tournament_k=10, crossover_rate=0.0,
                   mutation_sigma=1e-6, generations=3)
    log = run_ga(cfg, None, sphere, seed=0, init=init10)
    # every child copies the generation's best
    assert log.records[-1].mean_fitness == pytest.approx(log.records[-1].best_fitness, abs=1e-4)


def test_evolution_log_csv(tmp_path):
    es_log = run_es(EsConfig(generations=3), None, sphere, seed=0, init=init10)
    es_log.to_csv(tmp_path / "es.csv")

    lines = (tmp_path / "es.csv").read_text().splitlines()
    assert lines[0] == "generation,best_fitness,mean_fitness,best_r_distance,best_r_position,sigma"
    assert len(lines) == 5

    loaded = EvolutionLog.from_csv(tmp_path / "es.csv")
    assert loaded.records == es_log.records
    assert loaded.initial_fitness == es_log.initial_fitness

    ga_log = run_ga(GaConfig(pop_size=4, tournament_k=2, generations=1), None, sphere, seed=0, init=init10)
    ga_log.to_csv(tmp_path / "ga.csv")
    assert (tmp_path / "ga.csv").read_text().splitlines()[1].endswith(",,,")
