import logging
from enum import Enum
from dataclasses import dataclass, field, asdict
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .embedding import Embedder
from .exceptions import ConfigurationError, DomainError, EvaluatorError, InputError
from .helpers import dataclass_from_dict, mix_seed
from .p2i import ArchConfig, Genome, forward, load_weights
from .sim_core import SimConfig, Trajectory, VectorField, run_episode
from .stats import linreg_slope

logger = logging.getLogger(__name__)

EVALUATORS = ("oracle", "external")

# (alpha, beta) per reward mode
REWARD_WEIGHTS = {
    "distance": (1.0, 0.0),
    "position": (0.0, 1.0),
    "combined": (0.5, 0.5),
}

# prompt keywords -> target behavior, matched as case-insensitive substrings
CLUSTER_KEYWORDS = ("cluster",)
SCATTER_KEYWORDS = ("scatter", "spread")


class BehaviorLabel(str, Enum):
    """
    The closed set of one-word behavior descriptions.
    """

    CLUSTERING = "clustering"
    SCATTERING = "scattering"


@dataclass(frozen=True)
class EvalConfig:
    """
    Fitness evaluation protocol.

    Attributes:
        epochs: Simulated episodes per evaluation.
        alpha, beta: Weights of the distance and position rewards, summing to 1.
        slope_threshold: Normalized D_avg slope (per step) below which the
            trend reads as clustering.
        cluster_link_factor: Linkage radius in cell diameters.
        evaluator: "oracle" or "external".
        endpoint: External evaluator URL.
        timeout: External evaluator timeout in seconds.
        max_inflight: Concurrent external requests.
        workers: Epochs evaluated concurrently.
    """

    epochs: int = 30
    alpha: float = 0.5
    beta: float = 0.5
    slope_threshold: float = 1e-4
    cluster_link_factor: float = 3.0
    evaluator: str = "oracle"
    endpoint: Optional[str] = None
    timeout: float = 30.0
    max_inflight: int = 4
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigurationError(f"epochs must be an integer >= 1, got {self.epochs!r}", field="epochs")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value!r}", field=name)
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ConfigurationError(f"alpha + beta must equal 1, got {self.alpha + self.beta!r}", field="alpha")
        if not self.slope_threshold > 0:
            raise ConfigurationError("slope_threshold must be > 0", field="slope_threshold")
        if not self.cluster_link_factor > 0:
            raise ConfigurationError("cluster_link_factor must be > 0", field="cluster_link_factor")
        if self.evaluator not in EVALUATORS:
            raise ConfigurationError(f"evaluator must be one of {EVALUATORS}, got {self.evaluator!r}", field="evaluator")
        if not self.timeout > 0:
            raise ConfigurationError("timeout must be > 0", field="timeout")
        if not isinstance(self.max_inflight, int) or self.max_inflight < 1:
            raise ConfigurationError("max_inflight must be >= 1", field="max_inflight")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigurationError("workers must be >= 1", field="workers")

    @classmethod
    def for_reward(cls, mode: str, **kwargs) -> "EvalConfig":
        """
        Build a config whose alpha/beta match a reward mode: "distance"
        (trend only), "position" (final layout only) or "combined".
        """
        if mode not in REWARD_WEIGHTS:
            raise ConfigurationError(f"reward mode must be one of {sorted(REWARD_WEIGHTS)}, got {mode!r}", field="reward")
        alpha, beta = REWARD_WEIGHTS[mode]
        return cls(alpha=alpha, beta=beta, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        return dataclass_from_dict(cls, data)


@dataclass
class FitnessReport:
    """
    Epoch-averaged rewards of one fitness evaluation.

    Attributes:
        r_distance: Mean distance-trend reward.
        r_position: Mean final-layout reward.
        r_combined: alpha * r_distance + beta * r_position.
        per_epoch: Binary (r_dist, r_pos) pair per epoch, in epoch order.
    """

    r_distance: float
    r_position: float
    r_combined: float
    per_epoch: List[Tuple[int, int]] = field(default_factory=list)

    @classmethod
    def from_epochs(cls, per_epoch: Sequence[Tuple[int, int]],
                    alpha: float, beta: float) -> "FitnessReport":
        if len(per_epoch) == 0:
            raise InputError("at least one epoch is required")

        r_distance = sum(p[0] for p in per_epoch) / len(per_epoch)
        r_position = sum(p[1] for p in per_epoch) / len(per_epoch)
        return cls(
            r_distance=r_distance,
            r_position=r_position,
            r_combined=alpha * r_distance + beta * r_position,
            per_epoch=[(int(d), int(p)) for d, p in per_epoch],
        )

    def to_dict(self) -> dict:
        return {
            "r_distance": self.r_distance,
            "r_position": self.r_position,
            "r_combined": self.r_combined,
            "per_epoch":  [list(p) for p in self.per_epoch],
        }


def target_label(prompt: str) -> BehaviorLabel:
    """
    Map a prompt to the behavior it asks for.

    Raises:
        ConfigurationError: when the prompt names neither or both behaviors.
    """

    text    = prompt.casefold()
    cluster = any(k in text for k in CLUSTER_KEYWORDS)
    scatter = any(k in text for k in SCATTER_KEYWORDS)

    if cluster and not scatter:
        return BehaviorLabel.CLUSTERING
    if scatter and not cluster:
        return BehaviorLabel.SCATTERING
    raise ConfigurationError(f"cannot map prompt {prompt!r} to a target behavior", field="prompt")


def classify_distance_trend(series, cfg: EvalConfig) -> BehaviorLabel:
    """
    Read the D_avg series the way a viewer reads the distance plot: a
    least-squares slope, normalized by the initial value, below
    -slope_threshold is clustering, anything else scattering.
    """

    series = np.asarray(series, dtype=float)
    if series.ndim != 1 or series.size < 2:
        raise InputError(f"distance series needs at least 2 values, got {series.size}")
    if not series[0] > 0:
        raise InputError(f"distance series must start positive, got {series[0]!r}")

    slope = linreg_slope(series) / series[0]
    if slope < -cfg.slope_threshold:
        return BehaviorLabel.CLUSTERING
    return BehaviorLabel.SCATTERING


def linkage_radius(cfg: EvalConfig, sim: SimConfig) -> float:
    return cfg.cluster_link_factor * 2.0 * sim.radius


def classify_final_layout(positions, cfg: EvalConfig, sim: SimConfig) -> BehaviorLabel:
    """
    One connected linkage component holding every cell is clustering.
    Cells are linked when their centers lie within the linkage radius
    (boundary inclusive).
    """

    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[0] < 2 or pos.shape[1] != 2:
        raise DomainError(f"layout needs an (N, 2) array with N >= 2, got {pos.shape}")

    linked = squareform((pdist(pos) <= linkage_radius(cfg, sim)).astype(np.int8))
    n_components, _ = connected_components(csr_matrix(linked), directed=False)

    if n_components == 1:
        return BehaviorLabel.CLUSTERING
    return BehaviorLabel.SCATTERING


def epoch_reward(target: BehaviorLabel, trend: BehaviorLabel,
                 layout: BehaviorLabel) -> Tuple[int, int]:
    """
    Binary match of each criterion against the target.
    """

    return int(trend == target), int(layout == target)


class OracleEvaluator:
    """
    Deterministic classifier standing in for a vision-language model.
    """

    deterministic = True

    def classify_trend(self, traj: Trajectory, sim: SimConfig, cfg: EvalConfig) -> BehaviorLabel:
        return classify_distance_trend(traj.d_avg_series, cfg)

    def classify_layout(self, traj: Trajectory, field: VectorField,
                        sim: SimConfig, cfg: EvalConfig) -> BehaviorLabel:
        return classify_final_layout(traj.final_positions, cfg, sim)

    def close(self) -> None:
        pass


def make_evaluator(cfg: EvalConfig):
    """
    Build the evaluator named by cfg.evaluator.
    """

    if cfg.evaluator == "oracle":
        return OracleEvaluator()

    # .evaluator imports this module
    from .evaluator import ExternalEvaluator
    return ExternalEvaluator.from_config(cfg)


def epoch_seed(base_seed: int, epoch: int) -> int:
    """
    Seed of epoch (1-based) within an evaluation seeded by base_seed.
    """

    return mix_seed(base_seed, "epoch", epoch)


def _judge(label_fn, criterion: str, epoch: int, seed: int) -> Optional[BehaviorLabel]:
    try:
        return label_fn()
    except EvaluatorError as e:
        logger.warning("evaluator failed on epoch %d (seed %d, %s criterion), scoring 0: %s",
                       epoch, seed, criterion, e)
        return None


def _run_epoch(epoch: int, base_seed: int, vector_field: VectorField, target: BehaviorLabel,
               sim: SimConfig, cfg: EvalConfig, evaluator) -> Tuple[int, int]:
    seed = epoch_seed(base_seed, epoch)
    traj = run_episode(seed, vector_field, sim)

    trend  = _judge(lambda: evaluator.classify_trend(traj, sim, cfg), "distance", epoch, seed)
    layout = _judge(lambda: evaluator.classify_layout(traj, vector_field, sim, cfg), "position", epoch, seed)

    r_dist = int(trend == target) if trend is not None else 0
    r_pos  = int(layout == target) if layout is not None else 0
    logger.debug("epoch %d seed %d: trend=%s layout=%s", epoch, seed,
                 getattr(trend, "value", None), getattr(layout, "value", None))
    return r_dist, r_pos


def evaluate_fitness(genome: Genome, prompt: str, arch: ArchConfig, sim: SimConfig,
                     cfg: EvalConfig, base_seed: int, evaluator=None,
                     embedder: Optional[Embedder] = None) -> FitnessReport:
    """
    Score how well the field a genome produces for prompt yields the
    behavior the prompt asks for.

    Each epoch i in 1..E runs one episode seeded by epoch_seed(base_seed, i),
    classifies the distance trend and the final layout, and rewards each
    match with 1. Epoch rewards are averaged and blended with alpha / beta.

    Args:
        genome (Genome): Flat controller weights.
        prompt (str): The instruction, e.g. "Cluster!".
        arch (ArchConfig): Architecture the genome encodes.
        sim (SimConfig): Simulation parameters.
        cfg (EvalConfig): Evaluation protocol.
        base_seed (int): Evaluation seed.
        evaluator: Oracle or external evaluator, built from cfg when None.
        embedder (Embedder): Prompt embedder, pseudo-embeddings when None.

    Returns:
        FitnessReport: The epoch-averaged rewards.
    """

    target = target_label(prompt)
    emb    = (embedder or Embedder()).embed(prompt)
    vector_field = forward(load_weights(arch, genome), emb)

    owned = evaluator is None
    if owned:
        evaluator = make_evaluator(cfg)

    def run(epoch: int) -> Tuple[int, int]:
        return _run_epoch(epoch, base_seed, vector_field, target, sim, cfg, evaluator)

    epochs = range(1, cfg.epochs + 1)
    try:
        if cfg.workers > 1:
            # map() yields in submission order, the reduction stays schedule independent
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                per_epoch = list(pool.map(run, epochs))
        else:
            per_epoch = [run(epoch) for epoch in epochs]
    finally:
        if owned:
            evaluator.close()

    return FitnessReport.from_epochs(per_epoch, cfg.alpha, cfg.beta)


class PromptFitness:
    """
    Fitness function adapter for the optimizers: ``fitness(genome, seed)``
    returns the FitnessReport of evaluate_fitness for a fixed prompt.
    """

    def __init__(self, prompt: str, arch: ArchConfig, sim: SimConfig, cfg: EvalConfig,
                 evaluator=None, embedder: Optional[Embedder] = None):
        # fail fast on unmappable prompts
        target_label(prompt)

        self.prompt    = prompt
        self.arch      = arch
        self.sim       = sim
        self.cfg       = cfg
        self.evaluator = evaluator
        self.embedder  = embedder or Embedder()

    def __call__(self, genome: Genome, seed: int) -> FitnessReport:
        return evaluate_fitness(genome, self.prompt, self.arch, self.sim, self.cfg,
                                seed, evaluator=self.evaluator, embedder=self.embedder)
