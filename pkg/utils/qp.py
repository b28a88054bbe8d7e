"""
Minimum-deviation projection of a velocity onto a set of CBF rows.

Solves

    minimize   1/2 ||u - u_nom||^2 + 1/2 ||r||^2
    subject to a_i . u - w_i r_{j(i)} >= c_i      for every row i

by dual coordinate ascent (Hildreth). The Hessian is the identity, so every
multiplier update is a scalar clamp and the primal iterate is recovered as
u = u_nom + sum_i lambda_i a_i, r_j = -sum_{i: j(i) = j} lambda_i w_i.

Rows are swept in insertion order. Rows whose supports are disjoint do not
interact, so they are grouped greedily (first row first) into colour classes
that are updated together; the sweep is still a fixed, deterministic
Gauss-Seidel order.

Hard rows that point against each other (a concave pocket between two obstacles)
make the sweeps crawl. When such a pair is found the problem is first solved as a
least-distance problem through one nonnegative least-squares solve, which either
returns the exact duals or a Farkas certificate that the rows are infeasible.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, sparse

from .common import to_jsonable
from .errors import InfeasibleConstraintError, InvalidParameterError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
_ZERO_NORM = 1e-300
AUTO_RELAX_WEIGHT = 1.0
OPPOSING_COS = 0.95
_INCONSISTENT_RESIDUAL = 1e-9
_REFINE_STEPS = 3


@dataclass
class ConstraintRow:
    """Sparse row ``coeffs . u[index] - relax_weight * r[relax_index] >= offset``."""

    index: np.ndarray
    coeffs: np.ndarray
    offset: float
    relax_weight: float = 0.0
    relax_index: Optional[int] = None
    label: str = ""

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64).ravel()
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).ravel()
        self.offset = float(self.offset)
        self.relax_weight = float(self.relax_weight)
        if self.index.shape != self.coeffs.shape:
            raise InvalidParameterError("row index and coefficient lengths differ")
        if not np.all(np.isfinite(self.coeffs)) or not np.isfinite(self.offset):
            raise InvalidParameterError(f"row '{self.label}' has non-finite entries")
        if self.relax_weight < 0:
            raise InvalidParameterError(f"row '{self.label}' has a negative relaxation weight")

    @classmethod
    def from_dense(
        cls, a: Sequence[float], offset: float, relax_weight: float = 0.0, relax_index: Optional[int] = None, label: str = ""
    ) -> "ConstraintRow":
        a = np.asarray(a, dtype=np.float64).ravel()
        index = np.flatnonzero(a)
        return cls(index, a[index], offset, relax_weight, relax_index, label)

    @property
    def is_relaxed(self) -> bool:
        return self.relax_index is not None and self.relax_weight > 0

    def dot(self, u: np.ndarray) -> float:
        return float(self.coeffs @ u[self.index])


@dataclass
class ProjectionProblem:
    u_nom: np.ndarray
    rows: List[ConstraintRow]
    relax_dim: int = 0

    def __post_init__(self):
        self.u_nom = np.asarray(self.u_nom, dtype=np.float64).ravel()
        n = self.u_nom.shape[0]
        flat = np.concatenate([row.index for row in self.rows]) if self.rows else np.zeros(0, dtype=np.int64)
        if flat.size and (flat.min() < 0 or flat.max() >= n):
            bad = next(row for row in self.rows if row.index.size and (row.index.min() < 0 or row.index.max() >= n))
            raise InvalidParameterError(f"row '{bad.label}' indexes outside u (length {n})")
        for row in self.rows:
            if row.relax_index is not None and not 0 <= row.relax_index < self.relax_dim:
                raise InvalidParameterError(f"row '{row.label}' relax_index {row.relax_index} >= relax_dim {self.relax_dim}")


@dataclass
class ProjectionSolution:
    u_star: np.ndarray
    r_star: np.ndarray
    duals: np.ndarray
    kkt_residual: float
    iterations: int
    converged: bool = True
    auto_relaxed: List[int] = field(default_factory=list)
    auto_relax_weight: float = AUTO_RELAX_WEIGHT

    @property
    def active(self) -> bool:
        """True when at least one row moved the iterate away from u_nom."""
        return bool(np.any(self.duals > 0))


def _assemble(
    problem: ProjectionProblem, auto_relaxed: Sequence[int] = (), auto_relax_weight: float = AUTO_RELAX_WEIGHT
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense row matrix over z = (u, r, auto-relaxation slots), offsets and the nominal z."""
    rows = problem.rows
    n = problem.u_nom.shape[0]
    n_cols = n + problem.relax_dim + len(auto_relaxed)
    G = np.zeros((len(rows), n_cols))
    c = np.array([row.offset for row in rows], dtype=np.float64)
    if rows:
        row_ids = np.repeat(np.arange(len(rows)), [row.index.size for row in rows])
        np.add.at(G, (row_ids, np.concatenate([row.index for row in rows])), np.concatenate([row.coeffs for row in rows]))
    relaxed = [(i, n + row.relax_index, row.relax_weight) for i, row in enumerate(rows) if row.is_relaxed]
    if relaxed:
        i, col, weight = (np.array(v) for v in zip(*relaxed))
        G[i, col] = -weight
    if len(auto_relaxed):
        G[np.asarray(auto_relaxed), n + problem.relax_dim + np.arange(len(auto_relaxed))] = -auto_relax_weight
    z0 = np.zeros(n_cols)
    z0[:n] = problem.u_nom
    return G, c, z0


def _colour_rows(G: np.ndarray, rows: Sequence[int]) -> List[np.ndarray]:
    """Greedy colouring: rows of one class touch disjoint columns."""
    classes: List[List[int]] = []
    used: List[set] = []
    for i in rows:
        support = set(np.flatnonzero(G[i]).tolist())
        for members, cols in zip(classes, used):
            if cols.isdisjoint(support):
                members.append(i)
                cols |= support
                break
        else:
            classes.append([i])
            used.append(set(support))
    return [np.asarray(members, dtype=np.int64) for members in classes]


def _residual(G: np.ndarray, c: np.ndarray, z: np.ndarray, z0: np.ndarray, lam: np.ndarray) -> float:
    if G.shape[0] == 0:
        return float(np.max(np.abs(z - z0), initial=0.0))
    slack = G @ z - c
    stationarity = np.max(np.abs(z - z0 - G.T @ lam), initial=0.0)
    primal = np.max(np.maximum(0.0, -slack), initial=0.0)
    dual = np.max(np.maximum(0.0, -lam), initial=0.0)
    complementarity = np.max(np.abs(lam * slack), initial=0.0)
    return float(max(stationarity, primal, dual, complementarity))


def _opposing_pairs(G: np.ndarray, c: np.ndarray, norms: np.ndarray, hard: Sequence[int]) -> List[Tuple[int, int]]:
    """
    Hard row pairs that point (nearly) against each other while both demand progress.

    Two such rows leave at most a thin wedge far from u_nom, where coordinate sweeps
    zig-zag for a very long time, or no feasible point at all.
    """
    hard = [i for i in hard if norms[i] > _ZERO_NORM]
    if len(hard) < 2 or not np.any(c[hard] > 0):
        return []
    scale = np.sqrt(norms[hard])
    unit = sparse.csr_matrix(G[hard] / scale[:, None])
    cosines = (unit @ unit.T).tocoo()
    reach = c[hard] / scale
    a, b = cosines.row, cosines.col
    keep = (a < b) & (cosines.data < -OPPOSING_COS) & (reach[a] + reach[b] > 0)
    hard = np.asarray(hard)
    return list(zip(hard[a[keep]].tolist(), hard[b[keep]].tolist()))


def _least_distance(G: np.ndarray, h: np.ndarray) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """
    Least-distance problem min ||x|| s.t. G x >= h, solved through one NNLS.

    Returns:
        (duals, weights): duals is None when the rows are inconsistent, and the nonzero
        weights then combine the rows into 0 . x >= positive.
    """
    E = np.vstack([G.T, h[None, :]])
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    weights, rnorm = optimize.nnls(E, f)
    if rnorm <= _INCONSISTENT_RESIDUAL:
        return None, weights
    return weights / (1.0 - float(h @ weights)), weights


def _refine_active(G: np.ndarray, c: np.ndarray, z: np.ndarray, lam: np.ndarray, z0: np.ndarray):
    """Polish the rows with positive duals onto equality; kept only when the KKT residual drops."""
    active = np.flatnonzero(lam > 0)
    best = (_residual(G, c, z, z0, lam), z, lam)
    if active.size == 0:
        return best
    Ga = G[active]
    gram = Ga @ Ga.T
    z, lam = z.copy(), lam.copy()
    for _ in range(_REFINE_STEPS):
        delta = np.linalg.lstsq(gram, c[active] - Ga @ z, rcond=None)[0]
        lam[active] += delta
        z += Ga.T @ delta
        if np.any(lam < 0):
            break
        residual = _residual(G, c, z, z0, lam)
        if residual < best[0]:
            best = (residual, z.copy(), lam.copy())
    return best


def solve_projection(
    problem: ProjectionProblem,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    relax_infeasible: bool = False,
    auto_relax_weight: float = AUTO_RELAX_WEIGHT,
) -> ProjectionSolution:
    """
    Project ``problem.u_nom`` onto the rows.

    Hard rows that oppose each other are detected before sweeping. The problem is then
    solved exactly as a least-distance problem, which also tells infeasible rows apart
    from badly conditioned ones, and the sweeps only polish the result.

    Args:
        problem: nominal velocity, rows and relaxation layout
        tol: KKT residual that counts as converged
        max_iter: maximum number of full sweeps
        relax_infeasible: give hard rows that cannot be satisfied (a vanishing gradient with
            c > 0, or opposing rows with no common point) their own relaxation slot (logged)
            instead of raising
        auto_relax_weight: weight w of those extra slots

    Returns:
        The solution; ``converged`` is False when the sweep budget ran out, in which case
        the iterate with the smallest KKT residual is returned.

    Raises:
        InfeasibleConstraintError: hard rows admit no solution and ``relax_infeasible`` is off.
    """
    if not auto_relax_weight > 0:
        raise InvalidParameterError(f"auto_relax_weight must be > 0, got {auto_relax_weight}")
    n = problem.u_nom.shape[0]
    auto_relaxed: List[int] = []
    for i, row in enumerate(problem.rows):
        if row.offset <= 0 or row.is_relaxed or np.any(row.coeffs):
            continue
        if not relax_infeasible:
            raise InfeasibleConstraintError(
                f"hard row '{row.label}' has a vanishing gradient but requires {row.offset:.3e} > 0"
            )
        logger.warning(f"Relaxing vanishing-gradient row '{row.label}' (offset {row.offset:.3e})")
        auto_relaxed.append(i)

    G, c, z0 = _assemble(problem, auto_relaxed, auto_relax_weight)
    norms = np.einsum("ij,ij->i", G, G)
    skipped = set(auto_relaxed)
    hard = [i for i, row in enumerate(problem.rows) if not row.is_relaxed and i not in skipped]
    pairs = _opposing_pairs(G, c, norms, hard)

    z = z0.copy()
    lam = np.zeros(len(problem.rows))
    if pairs:
        first = pairs[0]
        logger.debug(
            f"{len(pairs)} opposing row pairs (first '{problem.rows[first[0]].label}' / "
            f"'{problem.rows[first[1]].label}'), solving as a least-distance problem"
        )
        duals, weights = _least_distance(G, c - G @ z0)
        while duals is None:
            skipped = set(auto_relaxed)
            blocking = [
                i for i in np.flatnonzero(weights > 0).tolist() if i not in skipped and not problem.rows[i].is_relaxed
            ]
            labels = [problem.rows[i].label for i in blocking]
            if not relax_infeasible or not blocking:
                raise InfeasibleConstraintError(f"hard rows {labels} cannot be satisfied together")
            logger.warning(f"Relaxing jointly infeasible rows {labels}")
            auto_relaxed.extend(blocking)
            G, c, z0 = _assemble(problem, auto_relaxed, auto_relax_weight)
            norms = np.einsum("ij,ij->i", G, G)
            duals, weights = _least_distance(G, c - G @ z0)
        lam = duals
        z = z0 + G.T @ lam
        _, z, lam = _refine_active(G, c, z, lam, z0)

    residual = _residual(G, c, z, z0, lam)
    live = [i for i in range(len(problem.rows)) if norms[i] > _ZERO_NORM]
    classes = _colour_rows(G, live) if residual > tol else []
    best = (residual, z.copy(), lam.copy())
    iterations = 0
    while residual > tol and iterations < max_iter:
        iterations += 1
        for members in classes:
            Gc = G[members]
            slack = Gc @ z - c[members]
            updated = np.maximum(0.0, lam[members] - slack / norms[members])
            step = updated - lam[members]
            if np.any(step != 0):
                z += Gc.T @ step
                lam[members] = updated
        residual = _residual(G, c, z, z0, lam)
        if residual < best[0]:
            best = (residual, z.copy(), lam.copy())

    converged = residual <= tol
    if not converged:
        residual, z, lam = best
        logger.warning(f"Projection stopped after {iterations} sweeps with KKT residual {residual:.3e} > {tol:.1e}")
    return ProjectionSolution(
        u_star=z[:n].copy(),
        r_star=z[n:].copy(),
        duals=lam,
        kkt_residual=float(residual),
        iterations=iterations,
        converged=converged,
        auto_relaxed=auto_relaxed,
        auto_relax_weight=auto_relax_weight,
    )


def closed_form_single(u_nom: np.ndarray, row: ConstraintRow) -> np.ndarray:
    """Exact projection onto one hard half-space: u_nom + max(0, c - a.u_nom) / ||a||^2 * a."""
    u = np.array(u_nom, dtype=np.float64, copy=True).ravel()
    gap = row.offset - row.dot(u)
    norm2 = float(row.coeffs @ row.coeffs)
    if norm2 <= _ZERO_NORM:
        if gap > 0:
            raise InfeasibleConstraintError(f"row '{row.label}' has a vanishing gradient")
        return u
    if gap > 0:
        np.add.at(u, row.index, gap / norm2 * row.coeffs)
    return u


def kkt_residual(problem: ProjectionProblem, solution: ProjectionSolution) -> float:
    """Max of stationarity, primal violation, dual negativity and complementary slackness."""
    G, c, z0 = _assemble(problem, solution.auto_relaxed, solution.auto_relax_weight)
    z = np.concatenate([solution.u_star, solution.r_star])
    if z.shape != z0.shape:
        z = np.concatenate([z, np.zeros(z0.shape[0] - z.shape[0])])
    return _residual(G, c, z, z0, np.asarray(solution.duals, dtype=np.float64))


def projection_objective(problem: ProjectionProblem, solution: ProjectionSolution) -> float:
    return 0.5 * float(np.sum((solution.u_star - problem.u_nom) ** 2) + np.sum(solution.r_star**2))


def dump_projection(problem: ProjectionProblem, solution: Optional[ProjectionSolution], path: Union[str, Path]) -> Path:
    """Write a problem (and its solution, if any) as a JSON record for failure triage."""
    record = {
        "u_nom": problem.u_nom,
        "relax_dim": problem.relax_dim,
        "rows": [
            {
                "label": row.label,
                "index": row.index,
                "coeffs": row.coeffs,
                "offset": row.offset,
                "relax_weight": row.relax_weight,
                "relax_index": row.relax_index,
            }
            for row in problem.rows
        ],
    }
    if solution is not None:
        record["solution"] = {
            "u_star": solution.u_star,
            "r_star": solution.r_star,
            "duals": solution.duals,
            "kkt_residual": solution.kkt_residual,
            "iterations": solution.iterations,
            "converged": solution.converged,
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(record), f, indent=2)
    return path
