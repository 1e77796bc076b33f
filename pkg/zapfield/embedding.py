import json
import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .exceptions import FormatError, InputError
from .helpers import PathLike

logger = logging.getLogger(__name__)

EMBEDDING_DIM = 768


@dataclass(frozen=True)
class PromptEmbedding:
    """
    A fixed, unit-norm prompt vector.

    Attributes:
        prompt (str): The normalized prompt the vector belongs to.
        vector (np.ndarray): Read-only array of EMBEDDING_DIM floats.
    """

    prompt: str
    vector: np.ndarray

    def __eq__(self, rhs) -> bool:
        if not isinstance(rhs, PromptEmbedding):
            return False
        return self.prompt == rhs.prompt and np.array_equal(self.vector, rhs.vector)

    def __hash__(self) -> int:
        return hash((self.prompt, self.vector.tobytes()))


def normalize_prompt(prompt: str) -> str:
    """
    Trim and case-fold a prompt; every lookup and hash goes through here.
    """

    if not isinstance(prompt, str):
        raise InputError(f"prompt must be a string, got {type(prompt).__name__}")

    key = prompt.strip().casefold()
    if key == "":
        raise InputError("prompt is empty")
    return key


def _unit(prompt: str, values: np.ndarray) -> PromptEmbedding:
    norm = np.linalg.norm(values)
    if not np.isfinite(norm) or norm == 0:
        raise FormatError(f"embedding for {prompt!r} cannot be normalized", entry=prompt)

    vector = values / norm
    vector.setflags(write=False)
    return PromptEmbedding(prompt=prompt, vector=vector)


def pseudo_embedding(prompt: str) -> PromptEmbedding:
    """
    Deterministic stand-in for a pretrained sentence encoder.

    The normalized prompt is hashed with SHA-256; the first 8 digest bytes,
    read little-endian, seed numpy's default PCG64 generator, which fills
    EMBEDDING_DIM standard-normal entries that are then scaled to unit length.

    Args:
        prompt (str): The prompt.

    Returns:
        PromptEmbedding: The embedding.
    """

    key    = normalize_prompt(prompt)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    rng    = np.random.default_rng(int.from_bytes(digest[:8], "little"))

    return _unit(key, rng.standard_normal(EMBEDDING_DIM))


def load_embedding_table(path: PathLike) -> Dict[str, PromptEmbedding]:
    """
    Load precomputed embeddings from a JSON object mapping prompt text to an
    array of EMBEDDING_DIM numbers. Keys are normalized, vectors re-normalized.

    Args:
        path: The table file.

    Returns:
        dict: Normalized prompt -> PromptEmbedding.

    Raises:
        FormatError: on malformed JSON, a wrong dimension or bad numbers.
    """

    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"embedding table {path} is not valid JSON: {e}", entry=str(path)) from e

    if not isinstance(raw, dict):
        raise FormatError(f"embedding table {path} must be a JSON object", entry=str(path))

    table = {}
    for prompt, values in raw.items():
        try:
            key = normalize_prompt(prompt)
        except InputError as e:
            raise FormatError("embedding table holds an empty prompt", entry=prompt) from e

        if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
        ):
            raise FormatError(f"embedding for {prompt!r} must be an array of numbers", entry=prompt)

        if len(values) != EMBEDDING_DIM:
            raise FormatError(
                f"embedding for {prompt!r} has {len(values)} values, expected {EMBEDDING_DIM}",
                entry=prompt,
            )

        vector = np.array(values, dtype=float)
        if not np.all(np.isfinite(vector)):
            raise FormatError(f"embedding for {prompt!r} holds non-finite values", entry=prompt)

        table[key] = _unit(key, vector)

    logger.debug("loaded %d embeddings from %s", len(table), path)
    return table


class Embedder:
    """
    Maps prompts to embeddings, consulting a loaded table before falling back
    to the pseudo-embedding. Read-only once constructed.

    Usage example::
        embedder = Embedder.from_file("table.json")
        e = embedder.embed("Cluster!")
    """

    def __init__(self, table: Optional[Dict[str, PromptEmbedding]] = None):
        """
        Create a new embedder.

        Args:
            table (dict): Optional normalized prompt -> PromptEmbedding map.

        """

        self._table = dict(table or {})

    @classmethod
    def from_file(cls, path: PathLike) -> "Embedder":
        """
        Creates an embedder backed by an embedding table file.
        """
        return cls(load_embedding_table(path))

    @property
    def table(self) -> Dict[str, PromptEmbedding]:
        return dict(self._table)

    def embed(self, prompt: str) -> PromptEmbedding:
        """
        Embed a prompt.

        Args:
            prompt (str): The prompt, non-empty after trimming.

        Returns:
            PromptEmbedding: The table entry if present, else the pseudo-embedding.
        """

        key = normalize_prompt(prompt)
        hit = self._table.get(key)
        if hit is not None:
            return hit
        return pseudo_embedding(key)


def embed(prompt: str, table: Optional[Dict[str, PromptEmbedding]] = None) -> PromptEmbedding:
    """
    Functional form of Embedder.embed.
    """

    return Embedder(table).embed(prompt)


def cosine_similarity(a: PromptEmbedding, b: PromptEmbedding) -> float:
    """
    Dot product of two unit-norm embeddings, clipped to [-1, 1].
    """

    if a.vector.shape != b.vector.shape:
        raise InputError(f"embedding shapes differ: {a.vector.shape} vs {b.vector.shape}")

    return float(np.clip(np.dot(a.vector, b.vector), -1.0, 1.0))


def similarity_matrix(embeddings: Sequence[PromptEmbedding]) -> np.ndarray:
    """
    Pairwise cosine similarity of a list of embeddings.

    Returns:
        np.ndarray: Symmetric (k, k) matrix with a unit diagonal.
    """

    k = len(embeddings)
    out = np.empty((k, k))
    for i in range(k):
        out[i, i] = 1.0
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = cosine_similarity(embeddings[i], embeddings[j])
    return out

