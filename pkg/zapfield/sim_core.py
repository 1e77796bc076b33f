import json
import math
import logging
from dataclasses import dataclass, asdict
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from .exceptions import ConfigurationError, DomainError, InputError
from .helpers import (
    PathLike,
    read_csv,
    write_csv,
    to_jsonable,
    atomic_write_json,
    dataclass_from_dict,
)

logger = logging.getLogger(__name__)

# a Vec2 is a length-2 float array (x, y); collections of them are (N, 2) arrays
Vec2 = np.ndarray

TRAJECTORY_HEADER = ("step", "d_avg")


@dataclass(frozen=True)
class SimConfig:
    """
    Arena and integration parameters of the cellular collective.

    Attributes:
        width, height: Arena size in arena units.
        n_cells: Number of circular cells.
        radius: Cell radius.
        steps: Steps per episode.
        dt: Integration time step.
        max_speed: Speed cap, units per step.
        field_gain: Multiplier applied to sampled field vectors.
        repulsion_strength: Peak velocity increment for fully coincident cells.
        velocity_override: Replace the velocity by the field sample instead of
            accelerating it.
        initial_speed_max: Upper bound of initial speeds, None means max_speed.
    """

    width: float = 500.0
    height: float = 500.0
    n_cells: int = 100
    radius: float = 5.0
    steps: int = 500
    dt: float = 1.0
    max_speed: float = 5.0
    field_gain: float = 1.0
    repulsion_strength: float = 1.0
    velocity_override: bool = False
    initial_speed_max: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raise ConfigurationError naming the first invalid field.
        """

        for name in ("width", "height", "radius", "dt", "max_speed",
                     "field_gain", "repulsion_strength"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be a finite number, got {value!r}", field=name)

        if not isinstance(self.n_cells, int) or not isinstance(self.steps, int):
            raise ConfigurationError("n_cells and steps must be integers", field="n_cells")

        checks = [
            ("width",              self.width > 0,                   "must be > 0"),
            ("height",             self.height > 0,                  "must be > 0"),
            ("n_cells",            self.n_cells >= 2,                "must be >= 2"),
            ("radius",             self.radius > 0,                  "must be > 0"),
            ("radius",             2 * self.radius < min(self.width, self.height),
                                                                     "must leave room inside the arena"),
            ("steps",              self.steps >= 1,                  "must be >= 1"),
            ("dt",                 self.dt > 0,                      "must be > 0"),
            ("max_speed",          self.max_speed > 0,               "must be > 0"),
            ("repulsion_strength", self.repulsion_strength >= 0,     "must be >= 0"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigurationError(f"{name} {message}, got {getattr(self, name)!r}", field=name)

        if self.initial_speed_max is not None and not (0 <= self.initial_speed_max < math.inf):
            raise ConfigurationError(
                f"initial_speed_max must be >= 0, got {self.initial_speed_max!r}",
                field="initial_speed_max",
            )

    @property
    def lower(self) -> np.ndarray:
        """Lowest admissible cell center."""
        return np.array([self.radius, self.radius])

    @property
    def upper(self) -> np.ndarray:
        """Highest admissible cell center."""
        return np.array([self.width - self.radius, self.height - self.radius])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        return dataclass_from_dict(cls, data)


class VectorField:
    """
    An n x n grid of 2D force vectors.

    ``vectors[i, j]`` is the vector of the node centered at
    ((i + 0.5) * width / n, (j + 0.5) * height / n): the first index runs
    along x, the second along y.
    """

    def __init__(self, vectors):
        """
        Create a new vector field.

        Args:
            vectors: Array-like of shape (n, n, 2), n >= 2, finite entries.

        Raises:
            DomainError: on a bad shape or non-finite entries.
        """

        arr = np.array(vectors, dtype=float)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != 2:
            raise DomainError(f"vector field must have shape (n, n, 2), got {arr.shape}")
        if arr.shape[0] < 2:
            raise DomainError(f"vector field resolution must be >= 2, got {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("vector field holds non-finite entries")

        arr.setflags(write=False)
        self._vectors = arr

    @property
    def n(self) -> int:
        """
        Grid resolution.
        """
        return self._vectors.shape[0]

    @property
    def vectors(self) -> np.ndarray:
        """
        Read-only (n, n, 2) array of node vectors.
        """
        return self._vectors

    @classmethod
    def constant(cls, n: int, dx: float, dy: float) -> "VectorField":
        """
        A field holding the same vector at every node.
        """
        vectors = np.empty((n, n, 2))
        vectors[..., 0] = dx
        vectors[..., 1] = dy
        return cls(vectors)

    @classmethod
    def from_flat(cls, n: int, values) -> "VectorField":
        """
        Reshape a flat array of 2*n*n values, row-major with the x component
        first, into a field.
        """
        values = np.asarray(values, dtype=float)
        if values.size != 2 * n * n:
            raise InputError(f"expected {2 * n * n} values for a {n}x{n} field, got {values.size}")
        return cls(values.reshape(n, n, 2))

    def node_centers(self, config: SimConfig) -> np.ndarray:
        """
        (n, n, 2) array of node center coordinates in the arena.
        """
        n  = self.n
        xs = (np.arange(n) + 0.5) * config.width / n
        ys = (np.arange(n) + 0.5) * config.height / n
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)

    def __eq__(self, rhs) -> bool:
        if not isinstance(rhs, VectorField):
            return False
        return np.array_equal(self._vectors, rhs._vectors)

    def __repr__(self) -> str:
        return f"VectorField(n={self.n})"


@dataclass
class WorldState:
    """
    Positions and velocities of every cell, both (N, 2) arrays.
    """

    positions: np.ndarray
    velocities: np.ndarray
    time_step: int = 0


@dataclass
class Trajectory:
    """
    Outcome of one episode.

    Attributes:
        d_avg_series: Average pairwise distance after initialization and
            after every step (length steps + 1).
        final_positions: (N, 2) positions after the last step.
        seed: The episode seed.
        positions_history: (steps + 1, N, 2) positions, only when recorded.
    """

    d_avg_series: np.ndarray
    final_positions: np.ndarray
    seed: int
    positions_history: Optional[np.ndarray] = None


def init_world(seed: int, config: SimConfig) -> WorldState:
    """
    Place cells uniformly in the interior margin with random headings.

    Args:
        seed (int): PRNG seed, identical seeds give identical worlds.
        config (SimConfig): Arena parameters.

    Returns:
        WorldState: The initial world, time_step 0.
    """

    config.validate()
    if seed < 0:
        raise InputError(f"seed must be non-negative, got {seed}")

    rng = np.random.default_rng(seed)
    n   = config.n_cells

    positions = rng.uniform(config.lower, config.upper, size=(n, 2))

    vmax = config.max_speed
    if config.initial_speed_max is not None:
        vmax = min(config.initial_speed_max, config.max_speed)

    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    speeds = rng.uniform(0.0, vmax, size=n)
    velocities = np.stack([speeds * np.cos(angles), speeds * np.sin(angles)], axis=1)

    return WorldState(positions=positions, velocities=velocities, time_step=0)


def sample_field(field: VectorField, pos, config: SimConfig) -> np.ndarray:
    """
    Bilinearly interpolate the field at one or many positions.

    Positions outside the hull of node centers clamp to the nearest edge
    cell before interpolating.

    Args:
        field (VectorField): The field.
        pos: A Vec2 or an (N, 2) array of positions inside the arena.
        config (SimConfig): Arena parameters.

    Returns:
        np.ndarray: Interpolated vectors, same shape as pos.
    """

    pos = np.asarray(pos, dtype=float)
    if pos.shape[-1] != 2:
        raise InputError(f"positions must have a trailing dimension of 2, got {pos.shape}")

    x, y = pos[..., 0], pos[..., 1]
    inside = (
        np.isfinite(x) & np.isfinite(y)
        & (x >= 0) & (x <= config.width)
        & (y >= 0) & (y <= config.height)
    )
    if not np.all(inside):
        raise DomainError("position outside the arena")

    n = field.n
    gx = np.clip(x * n / config.width - 0.5, 0.0, n - 1)
    gy = np.clip(y * n / config.height - 0.5, 0.0, n - 1)

    i0 = np.minimum(np.floor(gx).astype(int), n - 2)
    j0 = np.minimum(np.floor(gy).astype(int), n - 2)
    tx = (gx - i0)[..., None]
    ty = (gy - j0)[..., None]

    v = field.vectors
    return ((1.0 - tx) * (1.0 - ty) * v[i0, j0]
            + tx * (1.0 - ty) * v[i0 + 1, j0]
            + (1.0 - tx) * ty * v[i0, j0 + 1]
            + tx * ty * v[i0 + 1, j0 + 1])


def apply_reflective_boundary(pos, vel, config: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mirror positions that crossed a wall and flip the matching velocity
    component. Walls sit at an offset of one radius from the arena edge.

    Args:
        pos: A Vec2 or (N, 2) positions.
        vel: Matching velocities.
        config (SimConfig): Arena parameters.

    Returns:
        (np.ndarray, np.ndarray): Reflected positions and velocities.
    """

    pos = np.array(pos, dtype=float)
    vel = np.array(vel, dtype=float)
    lo, hi = config.lower, config.upper

    over = pos > hi
    pos  = np.where(over, 2.0 * hi - pos, pos)
    vel  = np.where(over, -vel, vel)

    under = pos < lo
    pos   = np.where(under, 2.0 * lo - pos, pos)
    vel   = np.where(under, -vel, vel)

    # a displacement larger than the arena can still overshoot after one mirror
    return np.clip(pos, lo, hi), vel


def resolve_repulsion(world: WorldState, config: SimConfig) -> np.ndarray:
    """
    Soft pairwise repulsion between overlapping cells.

    Every unordered pair closer than one diameter pushes both cells apart by
    repulsion_strength * overlap / diameter, equal and opposite. Coincident
    centers push along the angle 2*pi*i/N of the lower index i.

    Args:
        world (WorldState): Current world.
        config (SimConfig): Arena parameters.

    Returns:
        np.ndarray: (N, 2) velocity increments.
    """

    pos = world.positions
    n   = pos.shape[0]
    inc = np.zeros((n, 2))

    if config.repulsion_strength == 0:
        return inc

    diameter = 2.0 * config.radius
    iu, ju   = np.triu_indices(n, k=1)
    delta    = pos[iu] - pos[ju]
    dist     = np.hypot(delta[:, 0], delta[:, 1])

    close = dist < diameter
    if not np.any(close):
        return inc

    iu, ju, delta, dist = iu[close], ju[close], delta[close], dist[close]
    magnitude = config.repulsion_strength * (diameter - dist) / diameter

    unit = np.empty_like(delta)
    apart = dist > 0
    unit[apart] = delta[apart] / dist[apart, None]

    # coincident centers
    theta = 2.0 * np.pi * iu[~apart] / n
    unit[~apart] = np.stack([np.cos(theta), np.sin(theta)], axis=1)

    push = magnitude[:, None] * unit
    np.add.at(inc, iu, push)
    np.add.at(inc, ju, -push)

    return inc


def step_world(world: WorldState, field: VectorField, config: SimConfig) -> WorldState:
    """
    Advance the world by one step.

    Per cell: field force onto velocity, repulsion onto velocity, speed cap,
    position update, wall reflection.

    Args:
        world (WorldState): Current world.
        field (VectorField): The intervention.
        config (SimConfig): Arena parameters.

    Returns:
        WorldState: The next world, time_step incremented.
    """

    force = sample_field(field, world.positions, config)

    if config.velocity_override:
        vel = config.field_gain * force
    else:
        vel = world.velocities + config.field_gain * force * config.dt

    vel = vel + resolve_repulsion(world, config)

    # speed cap
    speed = np.hypot(vel[:, 0], vel[:, 1])
    fast  = speed > config.max_speed
    if np.any(fast):
        vel[fast] *= (config.max_speed / speed[fast])[:, None]

    pos = world.positions + vel * config.dt
    pos, vel = apply_reflective_boundary(pos, vel, config)

    return WorldState(positions=pos, velocities=vel, time_step=world.time_step + 1)


def avg_pairwise_distance(positions) -> float:
    """
    Average pairwise distance with the 1/(N(N-1)) normalizer over unordered
    pairs, i.e. half the conventional mean pairwise distance.

    Args:
        positions: (N, 2) array, N >= 2.

    Returns:
        float: D_avg.
    """

    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise DomainError(f"positions must have shape (N, 2), got {pos.shape}")

    n = pos.shape[0]
    if n < 2:
        raise DomainError(f"at least 2 positions are required, got {n}")

    return float(pdist(pos).sum() / (n * (n - 1)))


def run_episode(seed: int, field: VectorField, config: SimConfig,
                steps: Optional[int] = None, record_positions: bool = False) -> Trajectory:
    """
    Initialize a world from seed and integrate it under field.

    Args:
        seed (int): Episode seed.
        field (VectorField): The intervention.
        config (SimConfig): Arena parameters.
        steps (int): Overrides config.steps, 0 is allowed.
        record_positions (bool): Keep every intermediate position.

    Returns:
        Trajectory: The D_avg series and final layout.
    """

    n_steps = config.steps if steps is None else steps
    if n_steps < 0:
        raise InputError(f"steps must be >= 0, got {n_steps}")

    world   = init_world(seed, config)
    series  = np.empty(n_steps + 1)
    history = [world.positions] if record_positions else None

    series[0] = avg_pairwise_distance(world.positions)
    for t in range(1, n_steps + 1):
        world = step_world(world, field, config)
        series[t] = avg_pairwise_distance(world.positions)
        if history is not None:
            history.append(world.positions)

    return Trajectory(
        d_avg_series=series,
        final_positions=world.positions,
        seed=seed,
        positions_history=np.stack(history) if history is not None else None,
    )


def save_trajectory(traj: Trajectory, config: SimConfig,
                    csv_path: PathLike, json_path: PathLike) -> None:
    """
    Export a trajectory: CSV ``step,d_avg`` and a JSON companion with the
    seed, config and final positions.
    """

    write_csv(csv_path, TRAJECTORY_HEADER, enumerate(traj.d_avg_series.tolist()))
    atomic_write_json(json_path, {
        "seed":            traj.seed,
        "config":          config.to_dict(),
        "final_positions": to_jsonable(traj.final_positions),
    })


def load_trajectory_series(csv_path: PathLike) -> np.ndarray:
    """
    Read back the D_avg series written by save_trajectory.
    """

    rows = read_csv(csv_path)
    return np.array([float(row["d_avg"]) for row in rows])


def load_trajectory_json(json_path: PathLike) -> dict:
    """
    Read back the JSON companion written by save_trajectory.
    """

    with open(json_path, encoding="utf-8") as f:
        data = json.load(f)
    data["final_positions"] = np.array(data["final_positions"], dtype=float)
    return data
