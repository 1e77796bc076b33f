import os
import csv
import io
import json
import hashlib
import tempfile
from dataclasses import fields
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from .exceptions import ConfigurationError, InputError

PathLike = Union[str, os.PathLike]


def mix_seed(*keys) -> int:
    """
    Derive a child seed from a sequence of keys.

    The mixing function is pinned: keys are fed as entropy to
    numpy's SeedSequence and the first 64-bit word of its state is used.
    String keys are reduced to an integer through SHA-256 first, so
    ``mix_seed(run_seed, "eval", 3)`` is stable across releases.

    Args:
        keys: Non-negative integers or strings.

    Returns:
        int: A seed in [0, 2**64).
    """

    entropy = []
    for key in keys:
        if isinstance(key, str):
            digest = hashlib.sha256(key.encode("utf-8")).digest()
            key = int.from_bytes(digest[:8], "little")
        elif isinstance(key, (bool, float)) or not isinstance(key, (int, np.integer)):
            raise InputError(f"seed keys must be integers or strings, got {key!r}")
        key = int(key)
        if key < 0:
            raise InputError(f"seed keys must be non-negative, got {key}")
        entropy.append(key)

    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def format_float(value) -> str:
    """
    Format a float with 17 significant digits, enough to round trip
    any IEEE double.
    """

    return "%.17g" % float(value)


def stringify_cell(value) -> str:
    """
    Turn a value into a CSV cell.

    * None --> empty cell
    * floats --> 17 significant digits
    * everything else --> str()
    """

    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return ""
        return format_float(value)
    return str(value)


def atomic_write_text(path: PathLike, text: str) -> None:
    """
    Write text to path atomically: a temp file in the same directory is
    written first and then renamed over the destination.

    Args:
        path: Destination file.
        text: File content.

    Returns:
        None
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        # never leave the temp file behind
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: PathLike, data: bytes) -> None:
    """
    Binary counterpart of atomic_write_text, used for rendered PNGs.
    """

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: PathLike, obj) -> None:
    """
    Serialize obj as indented JSON and write it atomically.
    """

    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """
    Write a CSV file atomically.

    Args:
        path: Destination file.
        header: Column names.
        rows: Rows of values, converted with stringify_cell.

    Returns:
        None
    """

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([stringify_cell(v) for v in row])

    atomic_write_text(path, buf.getvalue())


def read_csv(path: PathLike) -> List[dict]:
    """
    Read a CSV file with a header row into a list of dicts.
    """

    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def dataclass_from_dict(cls, data: dict):
    """
    Build a config dataclass from a plain dict, rejecting unknown keys.

    Args:
        cls: The dataclass type.
        data (dict): Field values; missing fields keep their defaults.

    Returns:
        An instance of cls.
    """

    if not isinstance(data, dict):
        raise ConfigurationError(f"{cls.__name__} expects a JSON object, got {type(data).__name__}")

    known   = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(
            f"unknown {cls.__name__} field(s): {', '.join(unknown)}", field=unknown[0]
        )

    return cls(**data)


def to_jsonable(value):
    """
    Convert numpy containers and scalars into plain JSON types.
    """

    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value
