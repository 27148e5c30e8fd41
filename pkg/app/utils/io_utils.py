"""
Artifact formats: canonical JSON, CSV mirrors and the little-endian binary blocks.

Increments file:
    header  n_modes (u64), n_steps (u64), dt (f64), seed (u64)
    data    n_modes * n_steps doubles, row-major (mode, step)

Trajectory file:
    header  n_snapshots (u64), n_points (u64), stride (u64), dt (f64), half_length (f64)
    data    n_snapshots step indices (u64), then n_snapshots * n_points doubles, row-major
"""
import csv
import hashlib
import json
import logging
import math
import re
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import ConfigError, HeaderMismatchError
from app.core.spectral import Trajectory, make_grid
from app.services.noise_field import BrownianIncrements

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

INCREMENTS_HEADER = np.dtype(
    [("n_modes", "<u8"), ("n_steps", "<u8"), ("dt", "<f8"), ("seed", "<u8"), ("master_seed", "<u8")]
)
TRAJECTORY_HEADER = np.dtype(
    [("n_snapshots", "<u8"), ("n_points", "<u8"), ("stride", "<u8"), ("dt", "<f8"), ("half_length", "<f8")]
)


def to_jsonable(value: Any) -> Any:
    """
    Convert numpy scalars and arrays to plain Python; non-finite floats become None.

    Args:
        value: Nested structure of dicts, lists, numbers and arrays

    Returns:
        Structure that json.dumps accepts without allow_nan
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Enum):
        return value.value
    return value


def canonical_json(value: Any) -> str:
    """Sorted keys, two-space indent, trailing newline."""
    return json.dumps(to_jsonable(value), sort_keys=True, indent=2, allow_nan=False) + "\n"


def content_hash(value: Any) -> str:
    """sha256 of the canonical JSON with any ``content_hash`` key removed."""
    if isinstance(value, dict):
        value = {k: v for k, v in value.items() if k != "content_hash"}
    return hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()


def write_json(path: PathLike, value: Any) -> Path:
    path = Path(path)
    path.write_text(canonical_json(value), encoding="utf-8")
    return path


def key_line(text: str, dotted_key: Optional[str]) -> Optional[int]:
    """
    Best-effort line number of a dotted key in a JSON document.

    Walks the key path, searching for each segment after the line of its
    parent. Returns the parent's line when the last segment is missing.
    """
    if not dotted_key:
        return None
    lines = text.splitlines()
    line, found = 0, None
    for part in dotted_key.split("."):
        if part.isdigit():
            continue
        pattern = re.compile(r'"' + re.escape(part) + r'"\s*:')
        for index in range(line, len(lines)):
            if pattern.search(lines[index]):
                line, found = index, index + 1
                break
        else:
            return found
    return found


def read_json(path: PathLike) -> Tuple[Dict[str, Any], str]:
    """
    Read a JSON object from disk.

    Returns:
        The parsed object and the raw text (used for line diagnostics)

    Raises:
        ConfigError: if the file is missing, unreadable or not a JSON object
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read {path}: {e}")
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e.msg}", line=e.lineno) from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object", line=1)
    return data, text


def write_increments(path: PathLike, incs: BrownianIncrements, master_seed: Optional[int] = None) -> Path:
    """
    Dump increments in the documented little-endian layout.

    The header keeps the seed the increments were drawn with and the master
    seed of the run that produced them; without a master seed the one
    carried by ``incs`` is used, falling back to its own seed.
    """
    path = Path(path)
    if master_seed is None:
        master_seed = incs.master_seed if incs.master_seed is not None else incs.seed
    header = np.array([(incs.n_modes, incs.n_steps, incs.dt, incs.seed, master_seed)], dtype=INCREMENTS_HEADER)
    with path.open("wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(incs.increments, dtype="<f8").tobytes())
    return path


def read_increments(path: PathLike) -> BrownianIncrements:
    """
    Load an increments dump.

    Raises:
        HeaderMismatchError: if the file is truncated or its size disagrees with the header
    """
    raw = Path(path).read_bytes()
    if len(raw) < INCREMENTS_HEADER.itemsize:
        raise HeaderMismatchError(f"{path}: file too short for the increments header")
    header = np.frombuffer(raw[: INCREMENTS_HEADER.itemsize], dtype=INCREMENTS_HEADER)[0]
    n_modes, n_steps = int(header["n_modes"]), int(header["n_steps"])
    data = np.frombuffer(raw[INCREMENTS_HEADER.itemsize:], dtype="<f8")
    if data.size != n_modes * n_steps:
        raise HeaderMismatchError(
            f"{path}: header announces {n_modes}x{n_steps} increments, file holds {data.size} values"
        )
    return BrownianIncrements(
        n_modes,
        n_steps,
        float(header["dt"]),
        int(header["seed"]),
        data.reshape(n_modes, n_steps).astype(float),
        master_seed=int(header["master_seed"]),
    )


def write_trajectory_bin(path: PathLike, traj: Trajectory) -> Path:
    path = Path(path)
    header = np.array(
        [(len(traj), traj.grid.n_points, traj.stride, traj.dt, traj.grid.half_length)], dtype=TRAJECTORY_HEADER
    )
    with path.open("wb") as f:
        f.write(header.tobytes())
        f.write(np.asarray(traj.steps, dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(traj.snapshots, dtype="<f8").tobytes())
    return path


def read_trajectory_bin(path: PathLike) -> Trajectory:
    raw = Path(path).read_bytes()
    size = TRAJECTORY_HEADER.itemsize
    header = np.frombuffer(raw[:size], dtype=TRAJECTORY_HEADER)[0]
    n_snap, n_points = int(header["n_snapshots"]), int(header["n_points"])
    steps = np.frombuffer(raw[size : size + 8 * n_snap], dtype="<u8").astype(np.int64)
    snapshots = np.frombuffer(raw[size + 8 * n_snap :], dtype="<f8").reshape(n_snap, n_points).astype(float)
    dt = float(header["dt"])
    grid = make_grid(float(header["half_length"]), n_points)
    return Trajectory(grid, steps * dt, steps, snapshots, dt, int(header["stride"]))


def _format(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def write_rows_csv(path: PathLike, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    """DictWriter with a fixed column order; floats use repr so values round-trip."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(v) for k, v in row.items()})
    return path


def write_trajectory_csv(path: PathLike, traj: Trajectory) -> Path:
    """Long format: one row per (t, xi)."""
    xi = traj.grid.nodes
    rows = (
        {"t": t, "xi": x, "value": v}
        for t, snapshot in zip(traj.times, traj.snapshots)
        for x, v in zip(xi, snapshot)
    )
    return write_rows_csv(path, ["t", "xi", "value"], rows)


def write_paths_csv(path: PathLike, paths: Dict[str, List[float]]) -> Path:
    """Columns t, g, ... for every non-empty path of equal length to t."""
    t = paths.get("t", [])
    columns = ["t"] + [k for k, v in paths.items() if k != "t" and len(v) == len(t) and len(t) > 0]
    rows = ({name: paths[name][i] for name in columns} for i in range(len(t)))
    return write_rows_csv(path, columns, rows)
