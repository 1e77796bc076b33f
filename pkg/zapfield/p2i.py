import json
import logging
from dataclasses import dataclass, asdict
from typing import List, Tuple, Union

import numpy as np

from .embedding import EMBEDDING_DIM, PromptEmbedding
from .exceptions import ConfigurationError, FormatError, InputError
from .helpers import PathLike, atomic_write_json, dataclass_from_dict
from .sim_core import VectorField

logger = logging.getLogger(__name__)

# a Genome is a flat float64 array holding every weight and bias of a P2IModel
Genome = np.ndarray


@dataclass(frozen=True)
class ArchConfig:
    """
    Shape of the prompt-to-intervention network.

    Attributes:
        grid_n (int): Resolution of the produced vector field.
        input_dim (int): Embedding dimension.
        hidden_dims (tuple): Widths of the tanh hidden layers.
        output_scale (float): Multiplier applied to the linear output layer.
    """

    grid_n: int
    input_dim: int = EMBEDDING_DIM
    hidden_dims: Tuple[int, ...] = (64,)
    output_scale: float = 1.0

    def __post_init__(self):
        # JSON hands lists back, keep the dataclass hashable
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.grid_n, int) or self.grid_n < 2:
            raise ConfigurationError(f"grid_n must be an integer >= 2, got {self.grid_n!r}", field="grid_n")
        if not isinstance(self.input_dim, int) or self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be >= 1, got {self.input_dim!r}", field="input_dim")
        for width in self.hidden_dims:
            if not isinstance(width, int) or width < 1:
                raise ConfigurationError(f"hidden widths must be >= 1, got {width!r}", field="hidden_dims")
        if not np.isfinite(self.output_scale):
            raise ConfigurationError("output_scale must be finite", field="output_scale")

    @property
    def output_dim(self) -> int:
        return 2 * self.grid_n * self.grid_n

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ArchConfig":
        return dataclass_from_dict(cls, data)


def param_count(arch: ArchConfig) -> int:
    """
    Number of weights and biases of the network described by arch.
    """

    sizes = arch.layer_sizes
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


class P2IModel:
    """
    Feed-forward controller mapping an embedding to a vector field.
    Hidden layers are affine + tanh, the output layer is affine and scaled.

    Weights are stored as (fan_in, fan_out) matrices; all arrays are
    read-only, so a model can be shared between workers.
    """

    def __init__(self, arch: ArchConfig, weights: List[np.ndarray], biases: List[np.ndarray]):
        """
        Create a new model.

        Args:
            arch (ArchConfig): The architecture.
            weights (list): One (fan_in, fan_out) matrix per layer.
            biases (list): One (fan_out,) vector per layer.

        """

        sizes = arch.layer_sizes
        if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
            raise InputError(f"expected {len(sizes) - 1} layers, got {len(weights)} weights / {len(biases)} biases")

        self.arch    = arch
        self.weights = []
        self.biases  = []
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = np.array(weights[layer], dtype=float)
            b = np.array(biases[layer], dtype=float)
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise InputError(
                    f"layer {layer} expects weights {(fan_in, fan_out)} and biases {(fan_out,)}, "
                    f"got {w.shape} and {b.shape}"
                )
            w.setflags(write=False)
            b.setflags(write=False)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def new_model(arch: ArchConfig, seed: int) -> P2IModel:
    """
    Randomly initialize a model: weights ~ N(0, 1/fan_in), zero biases.

    Args:
        arch (ArchConfig): The architecture.
        seed (int): PRNG seed.

    Returns:
        P2IModel: The new model.
    """

    rng   = np.random.default_rng(seed)
    sizes = arch.layer_sizes

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))

    return P2IModel(arch, weights, biases)


def forward(model: P2IModel, emb: Union[PromptEmbedding, np.ndarray]) -> VectorField:
    """
    Map an embedding to a vector field.

    The flat output of 2*n*n values is reshaped row-major into n x n nodes,
    x component first.

    Args:
        model (P2IModel): The controller.
        emb: A PromptEmbedding or a raw 1-d array of input_dim values.

    Returns:
        VectorField: The intervention.
    """

    x = emb.vector if isinstance(emb, PromptEmbedding) else np.asarray(emb, dtype=float)
    if x.shape != (model.arch.input_dim,):
        raise InputError(f"embedding must have shape ({model.arch.input_dim},), got {x.shape}")

    last = len(model.weights) - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        x = x @ w + b
        if layer < last:
            x = np.tanh(x)

    return VectorField.from_flat(model.arch.grid_n, x * model.arch.output_scale)


def flatten_weights(model: P2IModel) -> Genome:
    """
    Concatenate every layer's weights (row-major) then biases, layer by layer.
    """

    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def load_weights(arch: ArchConfig, genome: Genome) -> P2IModel:
    """
    Inverse of flatten_weights.

    Args:
        arch (ArchConfig): The architecture the genome encodes.
        genome (Genome): Flat parameter vector.

    Returns:
        P2IModel: The decoded model.

    Raises:
        InputError: when the genome length does not match the architecture.
    """

    genome   = np.asarray(genome, dtype=float)
    expected = param_count(arch)
    if genome.ndim != 1 or genome.size != expected:
        raise InputError(f"genome length mismatch: expected {expected}, got {genome.size}")
    if not np.all(np.isfinite(genome)):
        raise InputError("genome holds non-finite values")

    sizes  = arch.layer_sizes
    offset = 0
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(genome[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
        offset += fan_in * fan_out
        biases.append(genome[offset:offset + fan_out])
        offset += fan_out

    return P2IModel(arch, weights, biases)


def save_genome(path: PathLike, arch: ArchConfig, genome: Genome) -> None:
    """
    Persist a genome as ``{arch: {...}, values: [...]}``.
    """

    atomic_write_json(path, {"arch": arch.to_dict(), "values": np.asarray(genome, dtype=float).tolist()})


def load_genome(path: PathLike) -> Tuple[ArchConfig, Genome]:
    """
    Read a genome file written by save_genome.

    Returns:
        (ArchConfig, Genome): The architecture and the parameter vector.
    """

    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"genome file {path} is not valid JSON: {e}", entry=str(path)) from e

    if not isinstance(data, dict) or "arch" not in data or "values" not in data:
        raise FormatError(f"genome file {path} must hold 'arch' and 'values'", entry=str(path))

    try:
        arch = ArchConfig.from_dict(data["arch"])
    except (ConfigurationError, TypeError) as e:
        raise FormatError(f"genome file {path} has an invalid arch: {e}", entry="arch") from e

    genome = np.array(data["values"], dtype=float)
    if genome.ndim != 1 or genome.size != param_count(arch):
        raise FormatError(
            f"genome file {path} holds {genome.size} values, arch expects {param_count(arch)}",
            entry="values",
        )

    return arch, genome
