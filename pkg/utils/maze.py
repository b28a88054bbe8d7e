"""
Grid mazes and the synthetic shortest-path dataset the planner is trained on.

Grids are boolean arrays with ``True`` marking a blocked cell. Row 0 is the
bottom row (smallest y) and column 0 the leftmost column, so cell (r, c)
covers [x_min + c*cw, x_min + (c+1)*cw] x [y_min + r*ch, y_min + (r+1)*ch].
"""

import heapq
import logging
from dataclasses import dataclass, field
from itertools import count
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DatasetError, InvalidParameterError
from .specs import BarrierSpec, NormalizationStats, barrier_values, specs_from_entry

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]

MAX_PAIR_RETRIES = 100
_MOVES = ((0, 1), (1, 0), (0, -1), (-1, 0))


@dataclass
class MazeDefinition:
    grid: np.ndarray
    bounds: Tuple[float, float, float, float]
    specs: List[BarrierSpec] = field(default_factory=list)
    name: str = "maze"

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2 or self.grid.size == 0:
            raise InvalidParameterError(f"maze grid must be a non-empty 2-D array, got shape {self.grid.shape}")
        x_min, x_max, y_min, y_max = (float(v) for v in self.bounds)
        if not (x_max > x_min and y_max > y_min):
            raise InvalidParameterError(f"degenerate maze bounds {self.bounds}")
        self.bounds = (x_min, x_max, y_min, y_max)
        free = self.free_cells()
        if not free:
            raise InvalidParameterError(f"maze '{self.name}' has no free cells")
        if len(_reachable(self.grid, free[0])) != len(free):
            raise InvalidParameterError(f"maze '{self.name}' free space is not connected")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape

    @property
    def cell_size(self) -> Tuple[float, float]:
        x_min, x_max, y_min, y_max = self.bounds
        rows, cols = self.grid.shape
        return (x_max - x_min) / cols, (y_max - y_min) / rows

    def free_cells(self) -> List[Cell]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(~self.grid))]

    def cell_center(self, cell: Cell) -> np.ndarray:
        cw, ch = self.cell_size
        return np.array([self.bounds[0] + (cell[1] + 0.5) * cw, self.bounds[2] + (cell[0] + 0.5) * ch])

    def cell_of(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Row/column indices of world points; points outside the bounds get -1."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        cw, ch = self.cell_size
        rows, cols = self.grid.shape
        c = np.floor((points[:, 0] - self.bounds[0]) / cw).astype(np.int64)
        r = np.floor((points[:, 1] - self.bounds[2]) / ch).astype(np.int64)
        # The upper bound belongs to the last cell.
        c = np.where(points[:, 0] == self.bounds[1], cols - 1, c)
        r = np.where(points[:, 1] == self.bounds[3], rows - 1, r)
        outside = (c < 0) | (c >= cols) | (r < 0) | (r >= rows)
        return np.where(outside, -1, r), np.where(outside, -1, c)

    def in_free_cell(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask: the point lies inside the bounds and in an unblocked cell."""
        r, c = self.cell_of(points)
        inside = r >= 0
        free = np.zeros(r.shape, dtype=bool)
        free[inside] = ~self.grid[r[inside], c[inside]]
        return free

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x_min, x_max, y_min, y_max = self.bounds
        return (points[:, 0] >= x_min) & (points[:, 0] <= x_max) & (points[:, 1] >= y_min) & (points[:, 1] <= y_max)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], specs: Optional[Sequence[BarrierSpec]] = None) -> "MazeDefinition":
        """
        Build a maze from its JSON document.

        ``grid`` is a list of strings, one per row starting from the bottom, where ``#``
        is blocked and any other character free. ``bounds`` is [x_min, x_max, y_min, y_max].
        """
        try:
            rows = data["grid"]
            bounds = data["bounds"]
        except KeyError as e:
            raise InvalidParameterError(f"maze document is missing {e}") from e
        if not rows or len({len(row) for row in rows}) != 1:
            raise InvalidParameterError("maze grid rows must be non-empty and of equal length")
        grid = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)
        if specs is None:
            specs = [s for entry in data.get("specs", []) for s in specs_from_entry(entry)]
        return cls(grid=grid, bounds=tuple(bounds), specs=list(specs), name=data.get("name", "maze"))


def _neighbors(grid: np.ndarray, cell: Cell) -> List[Cell]:
    rows, cols = grid.shape
    out = []
    for dr, dc in _MOVES:
        r, c = cell[0] + dr, cell[1] + dc
        if 0 <= r < rows and 0 <= c < cols and not grid[r, c]:
            out.append((r, c))
    return out


def _reachable(grid: np.ndarray, start: Cell) -> set:
    seen = {start}
    frontier = [start]
    while frontier:
        cell = frontier.pop()
        for nxt in _neighbors(grid, cell):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def shortest_path(maze: MazeDefinition, start: Cell, goal: Cell) -> Optional[List[Cell]]:
    """
    Uniform-cost search over the 4-connected free cells.

    Step costs are the cell width (horizontal) or height (vertical); ties are broken
    by insertion order so the result is deterministic. Returns None if unreachable.
    """
    grid = maze.grid
    if grid[start] or grid[goal]:
        return None
    cw, ch = maze.cell_size
    tie = count()
    frontier = [(0.0, next(tie), start)]
    parent: Dict[Cell, Optional[Cell]] = {start: None}
    cost = {start: 0.0}
    done = set()
    while frontier:
        g, _, cell = heapq.heappop(frontier)
        if cell in done:
            continue
        if cell == goal:
            path = [cell]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        done.add(cell)
        for nxt in _neighbors(grid, cell):
            step = cw if nxt[0] == cell[0] else ch
            if nxt not in cost or g + step < cost[nxt]:
                cost[nxt] = g + step
                parent[nxt] = cell
                heapq.heappush(frontier, (g + step, next(tie), nxt))
    return None


def resample_path(points: np.ndarray, n_points: int) -> np.ndarray:
    """Resample a polyline to ``n_points`` points equally spaced in arc length."""
    points = np.asarray(points, dtype=np.float64)
    lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(lengths)])
    if arc[-1] <= 0:
        return np.repeat(points[:1], n_points, axis=0)
    s = np.linspace(0.0, arc[-1], n_points)
    return np.stack([np.interp(s, arc, points[:, i]) for i in range(points.shape[1])], axis=1)


def sample_free_point(
    maze: MazeDefinition,
    rng: np.random.Generator,
    specs: Sequence[BarrierSpec] = (),
    margin: float = 0.0,
    cells: Optional[Sequence[Cell]] = None,
) -> np.ndarray:
    """
    Centre of a uniformly drawn free cell whose centre satisfies every spec by ``margin``.

    Raises:
        DatasetError: no candidate cell satisfies the specs.
    """
    candidates = [tuple(c) for c in (cells if cells is not None else maze.free_cells())]
    candidates = [c for c in candidates if not maze.grid[c]]
    centres = np.array([maze.cell_center(c) for c in candidates])
    ok = np.ones(len(candidates), dtype=bool)
    for spec in specs:
        ok &= barrier_values(spec, centres) >= margin
    if not np.any(ok):
        raise DatasetError(f"no free cell of maze '{maze.name}' clears the specs by {margin}")
    choices = np.flatnonzero(ok)
    return centres[choices[rng.integers(len(choices))]]


def generate_dataset(
    maze: MazeDefinition,
    n_traj: int,
    horizon: int,
    rng: np.random.Generator,
    jitter: float = 0.02,
    max_retries: int = MAX_PAIR_RETRIES,
) -> Tuple[np.ndarray, NormalizationStats]:
    """
    Sample shortest-path demonstrations and normalize them.

    Each trajectory is the uniform-cost path between two random free cells, resampled
    to H+1 points by arc length, with Gaussian jitter (``jitter`` times the cell size)
    on interior points. Returns the (n_traj, H+1, 2) dataset in [-1, 1] and its stats.

    Raises:
        DatasetError: a start/goal pair stayed unreachable after ``max_retries`` draws.
    """
    if n_traj < 1 or horizon < 1:
        raise InvalidParameterError(f"n_traj and horizon must be >= 1, got {n_traj}, {horizon}")
    free = maze.free_cells()
    sigma = jitter * min(maze.cell_size)
    x_min, x_max, y_min, y_max = maze.bounds
    trajectories = np.empty((n_traj, horizon + 1, 2))
    for n in range(n_traj):
        for _ in range(max_retries):
            start = free[rng.integers(len(free))]
            goal = free[rng.integers(len(free))]
            path = shortest_path(maze, start, goal)
            if path is not None:
                break
            logger.warning(f"Goal {goal} unreachable from {start}; resampling")
        else:
            raise DatasetError(f"no reachable start/goal pair after {max_retries} draws")
        traj = resample_path(np.array([maze.cell_center(c) for c in path]), horizon + 1)
        if sigma > 0 and len(path) > 1:
            traj[1:-1] += sigma * rng.standard_normal(traj[1:-1].shape)
        traj[:, 0] = np.clip(traj[:, 0], x_min, x_max)
        traj[:, 1] = np.clip(traj[:, 1], y_min, y_max)
        trajectories[n] = traj
    stats = NormalizationStats.from_data(trajectories)
    logger.info(f"Generated {n_traj} trajectories of {horizon + 1} states in maze '{maze.name}'")
    return stats.normalize(trajectories), stats


def median_step_gap(dataset: np.ndarray) -> float:
    """Median distance between consecutive states over a (n, H+1, d) dataset."""
    gaps = np.linalg.norm(np.diff(np.asarray(dataset, dtype=np.float64), axis=1), axis=-1)
    return float(np.median(gaps))
