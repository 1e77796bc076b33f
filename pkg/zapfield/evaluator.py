import os
import re
import logging
import threading
from typing import Optional

import httpx

from .d2r import BehaviorLabel, EvalConfig
from .exceptions import ConfigurationError, EvaluatorError
from .render import render_distance_plot, render_layout_plot
from .sim_core import SimConfig, Trajectory, VectorField

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "ZAPFIELD_EVALUATOR_URL"

DISTANCE_INSTRUCTION = (
    "The plot shows the average distance between cells over time. "
    "Answer with one word: clustering or scattering."
)

LAYOUT_INSTRUCTION = (
    "The image shows the final positions of cells in an arena. "
    "Answer with one word: clustering or scattering."
)

_NON_ALPHA = re.compile(r"[^a-z]")


def parse_reply(reply: str) -> BehaviorLabel:
    """
    Map a free-text reply onto the closed label set: the first word,
    case-folded and stripped of non-letters, must be a label.

    Raises:
        EvaluatorError: when the reply names neither label.
    """

    words = reply.split()
    if not words:
        raise EvaluatorError("evaluator returned an empty reply", reply=reply)

    word = _NON_ALPHA.sub("", words[0].casefold())
    try:
        return BehaviorLabel(word)
    except ValueError:
        raise EvaluatorError(f"evaluator reply {reply!r} is not a behavior label", reply=reply) from None


def query_external_evaluator(image: bytes, instruction: str, endpoint: str,
                             timeout: float = 30.0, client: Optional[httpx.Client] = None) -> BehaviorLabel:
    """
    Ask a vision-language service to describe an image with one word.

    The image is posted as multipart ``image`` together with a
    ``prompt`` form field; the service replies with plain text.

    Args:
        image (bytes): PNG bytes.
        instruction (str): The question to ask.
        endpoint (str): Service URL.
        timeout (float): Seconds before giving up.
        client (httpx.Client): Reused client, a short-lived one when None.

    Returns:
        BehaviorLabel: The parsed reply.

    Raises:
        EvaluatorError: on network failure, timeout, HTTP error or an
            out-of-vocabulary reply.
    """

    owned = client is None
    if owned:
        client = httpx.Client()

    try:
        response = client.post(
            endpoint,
            files={"image": ("plot.png", image, "image/png")},
            data={"prompt": instruction},
            timeout=timeout,
        )
        response.raise_for_status()
    except httpx.TimeoutException as e:
        raise EvaluatorError(f"evaluator at {endpoint} timed out after {timeout}s") from e
    except httpx.HTTPStatusError as e:
        raise EvaluatorError(f"evaluator at {endpoint} answered HTTP {e.response.status_code}",
                             reply=e.response.text) from e
    except httpx.HTTPError as e:
        raise EvaluatorError(f"evaluator at {endpoint} is unreachable: {e}") from e
    finally:
        if owned:
            client.close()

    return parse_reply(response.text)


class ExternalEvaluator:
    """
    Classifies trajectories by rendering them and asking an external
    vision-language service.

    Usage example::
        evaluator = ExternalEvaluator("http://localhost:8000/describe")
        trend = evaluator.classify_trend(traj, sim, cfg)
        evaluator.close()
    """

    deterministic = False

    def __init__(self, endpoint: str, timeout: float = 30.0, max_inflight: int = 4,
                 transport: Optional[httpx.BaseTransport] = None):
        """
        Create a new external evaluator.

        Args:
            endpoint (str): Service URL.
            timeout (float): Per-request timeout in seconds.
            max_inflight (int): Requests allowed in flight at once.
            transport: Optional httpx transport, e.g. httpx.MockTransport.

        """

        if not endpoint:
            raise ConfigurationError("external evaluator needs an endpoint", field="endpoint")

        self.endpoint = endpoint
        self.timeout  = timeout
        self._client  = httpx.Client(transport=transport)
        self._slots   = threading.BoundedSemaphore(max_inflight)

    @classmethod
    def from_config(cls, cfg: EvalConfig, transport: Optional[httpx.BaseTransport] = None) -> "ExternalEvaluator":
        """
        Creates an evaluator from an EvalConfig, falling back to the
        ZAPFIELD_EVALUATOR_URL environment variable for the endpoint.
        """
        endpoint = cfg.endpoint or os.environ.get(ENDPOINT_ENV)
        return cls(endpoint, timeout=cfg.timeout, max_inflight=cfg.max_inflight, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "ExternalEvaluator":
        """
        Creates an evaluator whose endpoint is ZAPFIELD_EVALUATOR_URL.
        """
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ConfigurationError(f"{ENDPOINT_ENV} is not set", field="endpoint")
        return cls(endpoint, **kwargs)

    def _ask(self, image: bytes, instruction: str) -> BehaviorLabel:
        with self._slots:
            label = query_external_evaluator(image, instruction, self.endpoint,
                                             timeout=self.timeout, client=self._client)
        logger.debug("evaluator answered %s", label.value)
        return label

    def classify_trend(self, traj: Trajectory, sim: SimConfig, cfg: EvalConfig) -> BehaviorLabel:
        return self._ask(render_distance_plot(traj.d_avg_series), DISTANCE_INSTRUCTION)

    def classify_layout(self, traj: Trajectory, field: VectorField,
                        sim: SimConfig, cfg: EvalConfig) -> BehaviorLabel:
        return self._ask(render_layout_plot(traj.final_positions, field, sim), LAYOUT_INSTRUCTION)

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
