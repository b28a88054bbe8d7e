"""
Result files: JSON reports, flat trajectory/dataset tables and SVG plots.

Every file starts with the artifact header (version, config hash, seed): as the
``header`` key of JSON documents, as ``#``-prefixed JSON lines in tables and as
the description metadata of plots.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
import numpy as np  # noqa: E402

from .common import to_jsonable  # noqa: E402
from .errors import DatasetError  # noqa: E402
from .specs import BarrierSpec, NormalizationStats, barrier_values, terminal_form  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Corner order: 0 = (x0, y0), 1 = (x1, y0), 2 = (x1, y1), 3 = (x0, y1).
# Edge e joins corners e and (e + 1) % 4. Saddles are keyed by the sign of the centre.
_EDGE_TABLE: Dict[int, List[Tuple[int, int]]] = {
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(2, 3)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(1, 3)],
    13: [(0, 1)],
    14: [(3, 0)],
}
_SADDLES = {
    5: {True: [(0, 1), (2, 3)], False: [(3, 0), (1, 2)]},
    10: {True: [(3, 0), (1, 2)], False: [(0, 1), (2, 3)]},
}


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _finite(value: Any) -> Any:
    """NaN/inf become null so documents stay strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def emit_report(report: Any, path: PathLike, header: Optional[Dict[str, Any]] = None) -> Path:
    """Write a report (dict or object with ``to_dict``) as a JSON document."""
    body = report.to_dict() if hasattr(report, "to_dict") else report
    document = {"header": header or {}, "report": _finite(to_jsonable(body))}
    path = _prepare(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, allow_nan=False)
    logger.info(f"Wrote report to {path}")
    return path


def load_report(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def _write_table(path: PathLike, columns: Sequence[str], rows, header: Optional[Dict[str, Any]]) -> Path:
    path = _prepare(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# {json.dumps(to_jsonable(header or {}), sort_keys=True)}\n")
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _read_table(path: PathLike) -> Tuple[Dict[str, Any], List[str], List[List[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"table not found: {path}")
    header: Dict[str, Any] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            try:
                header.update(json.loads(line[1:].strip()))
            except json.JSONDecodeError as e:
                raise DatasetError(f"bad header line in {path}: {e}") from e
        elif line.strip():
            body.append(line)
    if not body:
        raise DatasetError(f"table {path} has no column row")
    reader = csv.reader(body)
    columns = next(reader)
    return header, columns, list(reader)


def emit_trajectory(traj: np.ndarray, path: PathLike, header: Optional[Dict[str, Any]] = None) -> Path:
    """Flat table with columns k, x_1 ... x_d."""
    traj = np.asarray(traj, dtype=np.float64)
    columns = ["k"] + [f"x_{i + 1}" for i in range(traj.shape[1])]
    return _write_table(path, columns, ([k, *state] for k, state in enumerate(traj)), header)


def load_trajectory(path: PathLike) -> Tuple[np.ndarray, Dict[str, Any]]:
    header, columns, rows = _read_table(path)
    if not columns or columns[0] != "k":
        raise DatasetError(f"{path} is not a trajectory table")
    traj = np.array([[float(v) for v in row[1:]] for row in rows], dtype=np.float64)
    return traj.reshape(len(rows), len(columns) - 1), header


def emit_dataset(dataset: np.ndarray, stats: NormalizationStats, path: PathLike, header: Optional[Dict[str, Any]] = None) -> Path:
    """
    Store a normalized (n, H+1, d) dataset in world coordinates.

    The normalization stats travel in the header so ``load_dataset`` can restore the
    normalized values.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    world = stats.denormalize(dataset)
    meta = dict(header or {})
    meta.update({"stats": stats.to_dict(), "n_traj": int(dataset.shape[0]), "horizon": int(dataset.shape[1] - 1)})
    columns = ["traj", "k"] + [f"x_{i + 1}" for i in range(dataset.shape[2])]
    rows = ([n, k, *world[n, k]] for n in range(world.shape[0]) for k in range(world.shape[1]))
    path = _write_table(path, columns, rows, meta)
    logger.info(f"Wrote {dataset.shape[0]} trajectories to {path}")
    return path


def load_dataset(path: PathLike) -> Tuple[np.ndarray, NormalizationStats, Dict[str, Any]]:
    """Inverse of ``emit_dataset``: (normalized dataset, stats, header)."""
    header, columns, rows = _read_table(path)
    if columns[:2] != ["traj", "k"] or "stats" not in header:
        raise DatasetError(f"{path} is not a dataset table")
    stats = NormalizationStats.from_dict(header["stats"])
    n_traj, horizon = int(header["n_traj"]), int(header["horizon"])
    values = np.array([[float(v) for v in row[2:]] for row in rows], dtype=np.float64)
    if values.shape[0] != n_traj * (horizon + 1):
        raise DatasetError(f"{path} holds {values.shape[0]} rows, expected {n_traj * (horizon + 1)}")
    world = values.reshape(n_traj, horizon + 1, len(columns) - 2)
    return stats.normalize(world), stats, header


# ---------------------------------------------------------------------------
# Level sets and plots
# ---------------------------------------------------------------------------


def trace_level_set(
    func: Callable[[np.ndarray], np.ndarray],
    bounds: Tuple[float, float, float, float],
    resolution: int = 200,
) -> np.ndarray:
    """
    Marching squares over the zero level set of ``func``.

    ``func`` maps an (n, 2) array of points to n values. Returns an (n_segments, 2, 2)
    array of line segments.
    """
    x_min, x_max, y_min, y_max = bounds
    xs = np.linspace(x_min, x_max, resolution + 1)
    ys = np.linspace(y_min, y_max, resolution + 1)
    gx, gy = np.meshgrid(xs, ys)
    values = np.asarray(func(np.stack([gx.ravel(), gy.ravel()], axis=1)), dtype=np.float64).reshape(gx.shape)

    v0, v1, v2, v3 = values[:-1, :-1], values[:-1, 1:], values[1:, 1:], values[1:, :-1]
    case = (v0 > 0).astype(int) | (v1 > 0).astype(int) << 1 | (v2 > 0).astype(int) << 2 | (v3 > 0).astype(int) << 3
    segments = []
    for iy, ix in zip(*np.nonzero((case != 0) & (case != 15))):
        corners = np.array([[xs[ix], ys[iy]], [xs[ix + 1], ys[iy]], [xs[ix + 1], ys[iy + 1]], [xs[ix], ys[iy + 1]]])
        cv = (v0[iy, ix], v1[iy, ix], v2[iy, ix], v3[iy, ix])
        code = int(case[iy, ix])
        if code in _SADDLES:
            centre = corners.mean(axis=0)
            edges = _SADDLES[code][bool(func(centre[None, :])[0] > 0)]
        else:
            edges = _EDGE_TABLE[code]

        def crossing(edge: int) -> np.ndarray:
            a, b = edge, (edge + 1) % 4
            t = min(max(cv[a] / (cv[a] - cv[b]), 0.0), 1.0)
            return corners[a] + t * (corners[b] - corners[a])

        for ea, eb in edges:
            segments.append([crossing(ea), crossing(eb)])
    return np.array(segments, dtype=np.float64).reshape(-1, 2, 2)


def spec_boundary(spec: BarrierSpec, bounds: Tuple[float, float, float, float], resolution: int = 200) -> np.ndarray:
    """b = 0 segments of a spec over the first two state dimensions."""
    plain = terminal_form(spec)
    return trace_level_set(lambda pts: barrier_values(plain, pts), bounds, resolution)


def emit_plot(
    maze,
    trajectories: Sequence[np.ndarray],
    specs: Sequence[BarrierSpec],
    path: PathLike,
    header: Optional[Dict[str, Any]] = None,
    labels: Optional[Sequence[str]] = None,
    title: Optional[str] = None,
    resolution: int = 200,
) -> Path:
    """
    SVG of the maze cells, every planar spec boundary and the trajectories (world coordinates).

    Start states are drawn as circles and goals as stars.
    """
    x_min, x_max, y_min, y_max = maze.bounds
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(
        maze.grid.astype(float), cmap="gray_r", origin="lower", extent=(x_min, x_max, y_min, y_max),
        alpha=0.8, vmin=0.0, vmax=1.0,
    )
    for spec in specs:
        if max(spec.dims) > 1:
            continue
        segments = spec_boundary(spec, maze.bounds, resolution)
        if len(segments):
            ax.add_collection(LineCollection(segments, colors="tab:red", linewidths=1.5))
    for i, traj in enumerate(trajectories):
        traj = np.asarray(traj, dtype=np.float64)
        label = labels[i] if labels is not None and i < len(labels) else None
        (line,) = ax.plot(traj[:, 0], traj[:, 1], marker=".", markersize=3, linewidth=1.2, label=label)
        ax.plot(traj[0, 0], traj[0, 1], "o", color=line.get_color(), markeredgecolor="black", markersize=8)
        ax.plot(traj[-1, 0], traj[-1, 1], "*", color=line.get_color(), markeredgecolor="black", markersize=12)
    if labels:
        ax.legend(loc="upper right", fontsize="small")
    ax.set_xlim(x_min, x_max)
    ax.set_ylim(y_min, y_max)
    ax.set_aspect("equal", adjustable="box")
    ax.set_title(title or maze.name)
    path = _prepare(path)
    metadata = {"Title": title or maze.name, "Description": json.dumps(to_jsonable(header or {}), sort_keys=True), "Date": None}
    fig.savefig(path, format="svg", metadata=metadata)
    plt.close(fig)
    logger.info(f"Wrote plot to {path}")
    return path
