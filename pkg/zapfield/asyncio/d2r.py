import asyncio
import inspect
import logging
from typing import Optional, Tuple

from ..d2r import (BehaviorLabel, EvalConfig, FitnessReport, epoch_seed,
                   make_evaluator, target_label)
from ..embedding import Embedder
from ..exceptions import EvaluatorError
from ..p2i import ArchConfig, Genome, forward, load_weights
from ..sim_core import SimConfig, VectorField, run_episode
from .evaluator import AsyncExternalEvaluator

logger = logging.getLogger(__name__)


async def _judge(call, criterion: str, epoch: int, seed: int) -> Optional[BehaviorLabel]:
    try:
        label = call()
        if inspect.isawaitable(label):
            label = await label
        return label
    except EvaluatorError as e:
        logger.warning("evaluator failed on epoch %d (seed %d, %s criterion), scoring 0: %s",
                       epoch, seed, criterion, e)
        return None


async def _run_epoch(epoch: int, base_seed: int, vector_field: VectorField, target: BehaviorLabel,
                     sim: SimConfig, cfg: EvalConfig, evaluator) -> Tuple[int, int]:
    seed = epoch_seed(base_seed, epoch)
    traj = await asyncio.to_thread(run_episode, seed, vector_field, sim)

    trend, layout = await asyncio.gather(
        _judge(lambda: evaluator.classify_trend(traj, sim, cfg), "distance", epoch, seed),
        _judge(lambda: evaluator.classify_layout(traj, vector_field, sim, cfg), "position", epoch, seed),
    )

    r_dist = int(trend == target) if trend is not None else 0
    r_pos  = int(layout == target) if layout is not None else 0
    return r_dist, r_pos


async def evaluate_fitness(genome: Genome, prompt: str, arch: ArchConfig, sim: SimConfig,
                           cfg: EvalConfig, base_seed: int, evaluator=None,
                           embedder: Optional[Embedder] = None) -> FitnessReport:
    """
    Asynchronous evaluate_fitness: episodes run in worker threads and every
    epoch's evaluator calls are in flight together. The result equals the
    synchronous version for the same inputs and a deterministic evaluator.

    Args:
        evaluator: An AsyncExternalEvaluator or any synchronous evaluator;
            built from cfg when None.

    Returns:
        FitnessReport: The epoch-averaged rewards, reduced in epoch order.
    """

    target = target_label(prompt)
    emb    = (embedder or Embedder()).embed(prompt)
    vector_field = forward(load_weights(arch, genome), emb)

    owned = evaluator is None
    if owned:
        if cfg.evaluator == "external":
            evaluator = AsyncExternalEvaluator.from_config(cfg)
        else:
            evaluator = make_evaluator(cfg)

    try:
        per_epoch = await asyncio.gather(*(
            _run_epoch(epoch, base_seed, vector_field, target, sim, cfg, evaluator)
            for epoch in range(1, cfg.epochs + 1)
        ))
    finally:
        if owned:
            if isinstance(evaluator, AsyncExternalEvaluator):
                await evaluator.aclose()
            else:
                evaluator.close()

    return FitnessReport.from_epochs(per_epoch, cfg.alpha, cfg.beta)
