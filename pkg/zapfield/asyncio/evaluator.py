import os
import asyncio
import logging
from typing import Optional

import httpx

from ..d2r import BehaviorLabel, EvalConfig
from ..evaluator import DISTANCE_INSTRUCTION, ENDPOINT_ENV, LAYOUT_INSTRUCTION, parse_reply
from ..exceptions import ConfigurationError, EvaluatorError
from ..render import render_distance_plot, render_layout_plot
from ..sim_core import SimConfig, Trajectory, VectorField

logger = logging.getLogger(__name__)


class AsyncExternalEvaluator:
    """
    Asynchronous external evaluator on an httpx.AsyncClient.

    Usage example::
        from zapfield.asyncio import AsyncExternalEvaluator
        evaluator = AsyncExternalEvaluator("http://localhost:8000/describe")
        trend = await evaluator.classify_trend(traj, sim, cfg)
        await evaluator.aclose()
    """

    deterministic = False

    def __init__(self, endpoint: str, timeout: float = 30.0, max_inflight: int = 4,
                 transport: Optional[httpx.AsyncBaseTransport] = None):
        if not endpoint:
            raise ConfigurationError("external evaluator needs an endpoint", field="endpoint")

        self.endpoint = endpoint
        self.timeout  = timeout
        self._client  = httpx.AsyncClient(transport=transport)
        self._slots   = asyncio.Semaphore(max_inflight)

    @classmethod
    def from_config(cls, cfg: EvalConfig,
                    transport: Optional[httpx.AsyncBaseTransport] = None) -> "AsyncExternalEvaluator":
        endpoint = cfg.endpoint or os.environ.get(ENDPOINT_ENV)
        return cls(endpoint, timeout=cfg.timeout, max_inflight=cfg.max_inflight, transport=transport)

    async def query(self, image: bytes, instruction: str) -> BehaviorLabel:
        """
        Post an image and an instruction, parse the one-word reply.

        Raises:
            EvaluatorError: on network failure, timeout, HTTP error or an
                out-of-vocabulary reply.
        """

        async with self._slots:
            try:
                response = await self._client.post(
                    self.endpoint,
                    files={"image": ("plot.png", image, "image/png")},
                    data={"prompt": instruction},
                    timeout=self.timeout,
                )
                response.raise_for_status()
            except httpx.TimeoutException as e:
                raise EvaluatorError(f"evaluator at {self.endpoint} timed out after {self.timeout}s") from e
            except httpx.HTTPStatusError as e:
                raise EvaluatorError(f"evaluator at {self.endpoint} answered HTTP {e.response.status_code}",
                                     reply=e.response.text) from e
            except httpx.HTTPError as e:
                raise EvaluatorError(f"evaluator at {self.endpoint} is unreachable: {e}") from e

        return parse_reply(response.text)

    async def classify_trend(self, traj: Trajectory, sim: SimConfig, cfg: EvalConfig) -> BehaviorLabel:
        image = await asyncio.to_thread(render_distance_plot, traj.d_avg_series)
        return await self.query(image, DISTANCE_INSTRUCTION)

    async def classify_layout(self, traj: Trajectory, field: VectorField,
                              sim: SimConfig, cfg: EvalConfig) -> BehaviorLabel:
        image = await asyncio.to_thread(render_layout_plot, traj.final_positions, field, sim)
        return await self.query(image, LAYOUT_INSTRUCTION)

    async def aclose(self) -> None:
        await self._client.aclose()

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.aclose()
