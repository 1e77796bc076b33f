import httpx
import numpy as np
import pytest

from zapfield import d2r
from zapfield.asyncio import AsyncExternalEvaluator, evaluate_fitness
from zapfield.d2r import BehaviorLabel, EvalConfig, OracleEvaluator
from zapfield.exceptions import ConfigurationError, EvaluatorError

ENDPOINT = "http://vlm.test/describe"


def replying(text: str, status: int = 200, seen=None):
    async def handler(request: httpx.Request) -> httpx.Response:
        if seen is not None:
            seen.append(request)
        return httpx.Response(status, text=text)
    return httpx.MockTransport(handler)


@pytest.mark.asyncio
async def test_query():
    seen = []
    evaluator = AsyncExternalEvaluator(ENDPOINT, transport=replying("Clustering!", seen=seen))
    assert await evaluator.query(b"png", "one word") == BehaviorLabel.CLUSTERING
    assert len(seen) == 1
    await evaluator.aclose()


@pytest.mark.asyncio
async def test_query_errors():
    async with AsyncExternalEvaluator(ENDPOINT, transport=replying("no", status=502)) as evaluator:
        with pytest.raises(EvaluatorError, match="HTTP 502"):
            await evaluator.query(b"png", "q")

    async with AsyncExternalEvaluator(ENDPOINT, transport=replying("perhaps")) as evaluator:
        with pytest.raises(EvaluatorError) as e:
            await evaluator.query(b"png", "q")
        assert e.value.reply == "perhaps"

    with pytest.raises(ConfigurationError):
        AsyncExternalEvaluator("")


@pytest.mark.asyncio
async def test_matches_sync_oracle(linear_arch, inward, small_sim):
    cfg = EvalConfig(epochs=3)
    expected = d2r.evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, cfg, base_seed=2)

    report = await evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, cfg, base_seed=2)
    assert report == expected

    report = await evaluate_fitness(inward, "Cluster!", linear_arch, small_sim, cfg, base_seed=2,
                                    evaluator=OracleEvaluator())
    assert report == expected


@pytest.mark.asyncio
async def test_external_fitness(linear_arch, small_sim):
    genome = np.zeros(768 * 8 + 8)
    cfg    = EvalConfig(evaluator="external", epochs=3, max_inflight=2)

    seen = []
    async with AsyncExternalEvaluator.from_config(
        EvalConfig(evaluator="external", endpoint=ENDPOINT), transport=replying("scattering", seen=seen)
    ) as evaluator:
        report = await evaluate_fitness(genome, "Scatter!", linear_arch, small_sim, cfg,
                                        base_seed=0, evaluator=evaluator)

    assert report.r_combined == 1.0
    assert len(seen) == 6


@pytest.mark.asyncio
async def test_external_failures_score_zero(linear_arch, small_sim):
    genome = np.zeros(768 * 8 + 8)
    cfg    = EvalConfig(evaluator="external", epochs=2)

    async with AsyncExternalEvaluator(ENDPOINT, transport=replying("", status=500)) as evaluator:
        report = await evaluate_fitness(genome, "Cluster!", linear_arch, small_sim, cfg,
                                        base_seed=0, evaluator=evaluator)
    assert report.per_epoch == [(0, 0), (0, 0)]
