import logging
from collections import deque
from dataclasses import dataclass, asdict
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .d2r import FitnessReport
from .exceptions import ConfigurationError, ContractViolation, EvolutionError, FormatError, InputError
from .helpers import PathLike, dataclass_from_dict, mix_seed, read_csv, write_csv
from .p2i import ArchConfig, Genome, flatten_weights, new_model

logger = logging.getLogger(__name__)

LOG_HEADER = ("generation", "best_fitness", "mean_fitness", "best_r_distance", "best_r_position", "sigma")

# fitness(genome, eval_seed) -> float | FitnessReport
FitnessFn = Callable[[Genome, int], Union[float, FitnessReport]]
InitFn    = Callable[[int], Genome]


@dataclass(frozen=True)
class EsConfig:
    """
    (1+1) evolution strategy with success-window step-size adaptation.

    Attributes:
        sigma0: Initial mutation step size.
        p_target: Success rate above which the step shrinks.
        window: Number of recent outcomes the success rate is measured on.
        generations: Offspring evaluated per run.
        sigma_min, sigma_max: Step size clamp.
        shrink, grow: Step size multipliers.
        reevaluate_parent: Re-score the parent every generation instead of
            keeping its cached fitness.
    """

    sigma0: float = 0.1
    p_target: float = 0.2
    window: int = 5
    generations: int = 50
    sigma_min: float = 1e-6
    sigma_max: float = 5.0
    shrink: float = 0.9
    grow: float = 1.1
    reevaluate_parent: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigurationError("need 0 < sigma_min < sigma_max", field="sigma_min")
        if not self.sigma0 > 0:
            raise ConfigurationError(f"sigma0 must be > 0, got {self.sigma0!r}", field="sigma0")
        if not 0 < self.p_target < 1:
            raise ConfigurationError(f"p_target must lie in (0, 1), got {self.p_target!r}", field="p_target")
        if not isinstance(self.window, int) or self.window < 1:
            raise ConfigurationError(f"window must be >= 1, got {self.window!r}", field="window")
        if not isinstance(self.generations, int) or self.generations < 0:
            raise ConfigurationError(f"generations must be >= 0, got {self.generations!r}", field="generations")
        if not 0 < self.shrink < 1:
            raise ConfigurationError("shrink must lie in (0, 1)", field="shrink")
        if not self.grow > 1:
            raise ConfigurationError("grow must be > 1", field="grow")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EsConfig":
        return dataclass_from_dict(cls, data)


@dataclass(frozen=True)
class GaConfig:
    """
    Real-valued genetic algorithm: tournament selection, arithmetic
    crossover, Gaussian mutation and elitism.
    """

    pop_size: int = 20
    tournament_k: int = 8
    mutation_sigma: float = 0.1
    generations: int = 50
    elitism: int = 1
    crossover_rate: float = 1.0
    mutation_rate: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.pop_size, int) or self.pop_size < 2:
            raise ConfigurationError(f"pop_size must be >= 2, got {self.pop_size!r}", field="pop_size")
        if not isinstance(self.tournament_k, int) or not 1 <= self.tournament_k <= self.pop_size:
            raise ConfigurationError(
                f"tournament_k must lie in [1, pop_size], got {self.tournament_k!r}", field="tournament_k"
            )
        if not self.mutation_sigma > 0:
            raise ConfigurationError("mutation_sigma must be > 0", field="mutation_sigma")
        if not isinstance(self.generations, int) or self.generations < 0:
            raise ConfigurationError(f"generations must be >= 0, got {self.generations!r}", field="generations")
        if not isinstance(self.elitism, int) or not 0 <= self.elitism < self.pop_size:
            raise ConfigurationError(f"elitism must lie in [0, pop_size), got {self.elitism!r}", field="elitism")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ConfigurationError("crossover_rate must lie in [0, 1]", field="crossover_rate")
        if not 0.0 < self.mutation_rate <= 1.0:
            raise ConfigurationError("mutation_rate must lie in (0, 1]", field="mutation_rate")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GaConfig":
        return dataclass_from_dict(cls, data)


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_r_distance: Optional[float] = None
    best_r_position: Optional[float] = None
    sigma: Optional[float] = None


class EvolutionLog:
    """
    Per-generation records of one optimizer run, generation 0 included,
    plus the best genome found.
    """

    def __init__(self, records: Optional[List[GenerationRecord]] = None,
                 best_genome: Optional[Genome] = None):
        self.records     = list(records or [])
        self.best_genome = best_genome

    def append(self, record: GenerationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_fitness(self) -> float:
        """
        Best fitness of the last generation.
        """
        return self.records[-1].best_fitness

    @property
    def initial_fitness(self) -> float:
        """
        Best fitness of generation 0.
        """
        return self.records[0].best_fitness

    def to_csv(self, path: PathLike) -> None:
        write_csv(path, LOG_HEADER, (
            (r.generation, r.best_fitness, r.mean_fitness, r.best_r_distance, r.best_r_position, r.sigma)
            for r in self.records
        ))

    @classmethod
    def from_csv(cls, path: PathLike) -> "EvolutionLog":
        """
        Read a log written by to_csv. The best genome is not part of the CSV.
        """

        def opt(value: str) -> Optional[float]:
            return float(value) if value != "" else None

        records = []
        for line, row in enumerate(read_csv(path), start=2):
            try:
                records.append(GenerationRecord(
                    generation=int(row["generation"]),
                    best_fitness=float(row["best_fitness"]),
                    mean_fitness=float(row["mean_fitness"]),
                    best_r_distance=opt(row["best_r_distance"]),
                    best_r_position=opt(row["best_r_position"]),
                    sigma=opt(row["sigma"]),
                ))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}: malformed log row at line {line}: {e}", entry=line) from e

        if not records:
            raise FormatError(f"{path}: log holds no records", entry=str(path))
        return cls(records)


def _score(result) -> Tuple[float, Optional[float], Optional[float]]:
    if isinstance(result, FitnessReport):
        return float(result.r_combined), result.r_distance, result.r_position
    return float(result), None, None


def _default_init(arch: Optional[ArchConfig]) -> InitFn:
    if arch is None:
        raise InputError("an architecture or an init function is required")
    return lambda seed: flatten_weights(new_model(arch, seed))


def mutate_gaussian(genome: Genome, sigma: float, seed: int, rate: float = 1.0) -> Genome:
    """
    Add i.i.d. N(0, sigma^2) noise to the genome.

    Args:
        genome (Genome): Parent, left untouched.
        sigma (float): Noise standard deviation, > 0.
        seed (int): PRNG seed.
        rate (float): Probability that a gene is perturbed.

    Returns:
        Genome: A new array.
    """

    if not sigma > 0:
        raise InputError(f"sigma must be > 0, got {sigma!r}")

    genome = np.asarray(genome, dtype=float)
    rng    = np.random.default_rng(seed)
    noise  = rng.normal(0.0, sigma, size=genome.shape)
    if rate < 1.0:
        noise *= rng.random(genome.shape) < rate
    return genome + noise


def adapt_step_size(sigma: float, window: Sequence[int], cfg: EsConfig) -> float:
    """
    Success-window step-size rule: shrink when the success rate over the
    last cfg.window outcomes exceeds p_target, grow otherwise (ties grow),
    then clamp to [sigma_min, sigma_max].
    """

    recent = list(window)[-cfg.window:]
    if not recent:
        raise ContractViolation("step size adaptation needs at least one outcome")

    p_success = sum(recent) / len(recent)
    sigma = sigma * cfg.shrink if p_success > cfg.p_target else sigma * cfg.grow
    return float(min(max(sigma, cfg.sigma_min), cfg.sigma_max))


def _evaluate(fitness: FitnessFn, genome: Genome, eval_seed: int, log: EvolutionLog):
    try:
        return _score(fitness(genome, eval_seed))
    except Exception as e:
        raise EvolutionError(f"fitness evaluation failed (eval seed {eval_seed}): {e}", log) from e


def run_es(cfg: EsConfig, arch: Optional[ArchConfig], fitness: FitnessFn, seed: int,
           init: Optional[InitFn] = None) -> EvolutionLog:
    """
    (1+1) evolution strategy.

    The parent is evaluated once and its fitness cached. Each generation
    mutates the parent, evaluates the offspring and accepts it when its
    fitness is at least the parent's. The outcome enters a window of the
    last cfg.window results which drives the step size.

    Offspring of generation g are evaluated with seed mix_seed(seed, "eval", g),
    the initial parent with mix_seed(seed, "eval", 0).

    Args:
        cfg (EsConfig): Strategy parameters.
        arch (ArchConfig): Architecture for the default initializer.
        fitness: ``fitness(genome, eval_seed) -> float | FitnessReport``.
        seed (int): Run seed.
        init: Optional ``init(seed) -> Genome``.

    Returns:
        EvolutionLog: cfg.generations + 1 records and the final parent.

    Raises:
        EvolutionError: when a fitness evaluation fails; carries the log so far.
    """

    init   = init or _default_init(arch)
    log    = EvolutionLog()
    parent = np.asarray(init(mix_seed(seed, "init")), dtype=float)
    sigma  = cfg.sigma0
    window = deque(maxlen=cfg.window)

    logger.info("es run seed=%d: %d genes, %d generations", seed, parent.size, cfg.generations)

    parent_fit, parent_rd, parent_rp = _evaluate(fitness, parent, mix_seed(seed, "eval", 0), log)
    log.append(GenerationRecord(0, parent_fit, parent_fit, parent_rd, parent_rp, sigma))

    for g in range(1, cfg.generations + 1):
        if cfg.reevaluate_parent:
            parent_fit, parent_rd, parent_rp = _evaluate(fitness, parent, mix_seed(seed, "reeval", g), log)

        child = mutate_gaussian(parent, sigma, mix_seed(seed, "mutate", g))
        child_fit, child_rd, child_rp = _evaluate(fitness, child, mix_seed(seed, "eval", g), log)
        mean_fit = (parent_fit + child_fit) / 2.0

        success = child_fit >= parent_fit
        if success:
            parent, parent_fit, parent_rd, parent_rp = child, child_fit, child_rd, child_rp

        window.append(int(success))
        sigma = adapt_step_size(sigma, window, cfg)

        log.append(GenerationRecord(g, parent_fit, mean_fit, parent_rd, parent_rp, sigma))
        logger.debug("es gen %d: best=%.6g mean=%.6g sigma=%.6g", g, parent_fit, mean_fit, sigma)

    log.best_genome = parent
    logger.info("es run seed=%d done: %.6g -> %.6g", seed, log.initial_fitness, log.best_fitness)
    return log


def tournament_select(population: Sequence[Genome], fitnesses: Sequence[float], k: int,
                      rng: Union[int, np.random.Generator]) -> int:
    """
    Draw k distinct entrants uniformly and return the fittest one's index,
    ties going to the lowest index.

    Args:
        rng: A numpy Generator or a seed.
    """

    size = len(population)
    if len(fitnesses) != size:
        raise InputError(f"{size} individuals but {len(fitnesses)} fitness values")
    if not 1 <= k <= size:
        raise InputError(f"tournament size {k} must lie in [1, {size}]")

    rng      = np.random.default_rng(rng)
    entrants = np.sort(rng.choice(size, size=k, replace=False))
    scores   = np.asarray(fitnesses, dtype=float)[entrants]
    return int(entrants[np.argmax(scores)])


def arithmetic_crossover(p1: Genome, p2: Genome, alpha: float) -> Genome:
    """
    alpha * p1 + (1 - alpha) * p2, one alpha for every gene.
    """

    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if p1.shape != p2.shape:
        raise InputError(f"parent lengths differ: {p1.size} vs {p2.size}")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha!r}")

    return alpha * p1 + (1.0 - alpha) * p2


def _evaluate_many(fitness: FitnessFn, genomes: List[Genome], seeds: List[int],
                   log: EvolutionLog, workers: int) -> List[Tuple[float, Optional[float], Optional[float]]]:
    if workers > 1 and len(genomes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fitness, g, s) for g, s in zip(genomes, seeds)]
            results = []
            for f, s in zip(futures, seeds):
                try:
                    results.append(_score(f.result()))
                except Exception as e:
                    raise EvolutionError(f"fitness evaluation failed (eval seed {s}): {e}", log) from e
            return results
    return [_evaluate(fitness, g, s, log) for g, s in zip(genomes, seeds)]


def _ga_record(generation: int, scores) -> Tuple[GenerationRecord, int]:
    fits = np.array([s[0] for s in scores])
    best = int(np.argmax(fits))
    return GenerationRecord(
        generation=generation,
        best_fitness=float(fits[best]),
        mean_fitness=float(fits.mean()),
        best_r_distance=scores[best][1],
        best_r_position=scores[best][2],
    ), best


def run_ga(cfg: GaConfig, arch: Optional[ArchConfig], fitness: FitnessFn, seed: int,
           init: Optional[InitFn] = None, workers: int = 1) -> EvolutionLog:
    """
    Real-valued genetic algorithm.

    Every generation keeps the cfg.elitism fittest individuals with their
    cached fitness and breeds the rest: two tournament winners, arithmetic
    crossover with a fresh uniform alpha (with probability crossover_rate,
    otherwise a copy of the first winner), then Gaussian mutation. Member m
    of generation g is evaluated with seed mix_seed(seed, "eval", g * pop_size + m).

    Args:
        cfg (GaConfig): Algorithm parameters.
        arch (ArchConfig): Architecture for the default initializer.
        fitness: ``fitness(genome, eval_seed) -> float | FitnessReport``.
        seed (int): Run seed.
        init: Optional ``init(seed) -> Genome``.
        workers (int): Concurrent fitness evaluations.

    Returns:
        EvolutionLog: cfg.generations + 1 records and the final best genome.
    """

    init = init or _default_init(arch)
    log  = EvolutionLog()
    rng  = np.random.default_rng(mix_seed(seed, "ga"))
    size = cfg.pop_size

    population = [np.asarray(init(mix_seed(seed, "init", m)), dtype=float) for m in range(size)]
    logger.info("ga run seed=%d: pop %d, %d genes, %d generations",
                seed, size, population[0].size, cfg.generations)

    scores = _evaluate_many(fitness, population, [mix_seed(seed, "eval", m) for m in range(size)],
                            log, workers)
    record, best = _ga_record(0, scores)
    log.append(record)

    for g in range(1, cfg.generations + 1):
        fits  = [s[0] for s in scores]
        order = np.argsort(-np.asarray(fits), kind="stable")

        next_pop    = [population[i] for i in order[:cfg.elitism]]
        next_scores = [scores[i] for i in order[:cfg.elitism]]

        children = []
        for m in range(cfg.elitism, size):
            a = tournament_select(population, fits, cfg.tournament_k, rng)
            b = tournament_select(population, fits, cfg.tournament_k, rng)
            if rng.random() < cfg.crossover_rate:
                child = arithmetic_crossover(population[a], population[b], float(rng.random()))
            else:
                child = population[a].copy()
            children.append(mutate_gaussian(child, cfg.mutation_sigma, mix_seed(seed, "mutate", g, m),
                                            rate=cfg.mutation_rate))

        eval_seeds = [mix_seed(seed, "eval", g * size + m) for m in range(cfg.elitism, size)]
        next_scores.extend(_evaluate_many(fitness, children, eval_seeds, log, workers))
        next_pop.extend(children)

        population, scores = next_pop, next_scores
        record, best = _ga_record(g, scores)
        log.append(record)
        logger.debug("ga gen %d: best=%.6g mean=%.6g", g, record.best_fitness, record.mean_fitness)

    log.best_genome = population[best]
    logger.info("ga run seed=%d done: %.6g -> %.6g", seed, log.initial_fitness, log.best_fitness)
    return log
