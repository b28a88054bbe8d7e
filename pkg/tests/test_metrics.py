import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from utils.invariance import StepDiagnostics
from utils.maze import MazeDefinition
from utils.metrics import (
    exponential_bound_violations,
    forward_invariance_violations,
    group_satisfaction,
    log_violations,
    score,
    spec_satisfaction,
    terminal_violations,
    trapped_points,
    tvs_violations,
)
from utils.specs import make_ellipse, make_roof, make_speed_dependent_roof

ROCK = make_ellipse([0.0, 0.0], [1.0, 1.0], name="rock")


@pytest.fixture(scope="module")
def room():
    return MazeDefinition.from_dict({"name": "room", "bounds": [0, 4, 0, 4], "grid": ["....", ".#..", "....", "...."]})


def _log(frames, gammas=None):
    """Diagnostics for a single spec over one state per step."""
    diags = []
    for t, value in enumerate(frames):
        gamma = None if gammas is None else np.array([[gammas[t]]])
        diags.append(StepDiagnostics(j=len(frames) - 1 - t, min_barrier=[value], barriers=np.array([[value]]), gamma=gamma))
    return diags


def test_spec_satisfaction():
    traj = np.array([[2.0, 0.0], [0.0, 0.0], [0.0, 3.0]])
    lo, mean = spec_satisfaction(traj, [ROCK])
    assert lo == pytest.approx(-1.0)
    assert mean == pytest.approx((3.0 - 1.0 + 8.0) / 3)


def test_satisfaction_of_empty_spec_set_is_nan():
    lo, mean = spec_satisfaction(np.zeros((3, 2)), [])
    assert math.isnan(lo) and math.isnan(mean)


def test_group_satisfaction():
    specs = [ROCK, make_speed_dependent_roof(1.0, phi=0.5, dim=1)]
    traj = np.array([[2.0, 0.0], [2.0, 0.0]])
    assert group_satisfaction(traj, specs, "simple")[0] == pytest.approx(3.0)
    assert group_satisfaction(traj, specs, "complex")[0] == pytest.approx(1.0)


def test_score_full_and_partial(room):
    goal = np.array([3.5, 3.5])
    good = np.array([[0.5, 0.5], [2.5, 0.5], [3.5, 0.5], [3.5, 2.5], [3.5, 3.5]])
    assert score(good, room, goal, r_goal=0.1) == pytest.approx(1.0)

    # Half the states sit in the blocked cell and the goal is never reached.
    bad = np.array([[1.5, 1.5], [1.5, 1.5], [0.5, 0.5], [0.5, 0.5]])
    assert score(bad, room, goal, r_goal=0.1) == pytest.approx(0.25)


def test_score_goal_window(room):
    goal = np.array([3.5, 3.5])
    traj = np.array([[3.5, 3.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]])
    assert score(traj, room, goal, r_goal=0.1, goal_window=3) == pytest.approx(0.5)
    assert score(traj, room, goal, r_goal=0.1, goal_window=4) == pytest.approx(1.0)


def test_trapped_points():
    # The middle state touches the rock boundary next to a large jump.
    traj = np.array([[-3.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [2.2, 0.0]])
    assert trapped_points(traj, [ROCK], band=0.05, gap_threshold=1.0) == 1
    assert trapped_points(traj, [ROCK], band=0.05, gap_threshold=5.0) == 0
    assert trapped_points(traj, [], band=0.05, gap_threshold=1.0) == 0


def test_terminal_violations():
    traj = np.array([[0.0, 0.5], [0.0, 2.0]])
    assert terminal_violations(traj, [make_roof(1.0, dim=1)]) == 1


def test_forward_invariance_violations():
    assert forward_invariance_violations(_log([-1.0, 0.5, 0.2, 0.0])) == 0
    assert forward_invariance_violations(_log([-1.0, 0.5, -0.1, 0.3])) == 1
    assert forward_invariance_violations([StepDiagnostics(j=0, min_barrier=[])]) == 0


def test_exponential_bound_violations():
    decaying = [-1.0, -0.4, -0.1, 0.0]
    assert exponential_bound_violations(_log(decaying), eps=0.5, delta_tau=1.0) == 0
    slow = [-1.0, -0.9, -0.8, -0.7]
    assert exponential_bound_violations(_log(slow), eps=0.5, delta_tau=1.0) == 3


def test_tvs_violations():
    assert tvs_violations(_log([-1.0, -0.5, 0.0], gammas=[-1.0, -0.5, 0.0])) == 0
    assert tvs_violations(_log([-1.0, -0.6, 0.0], gammas=[-1.0, -0.5, 0.0])) == 1
    assert tvs_violations(_log([-1.0, -0.6])) == 0


def test_log_violations_per_method():
    diags = _log([-1.0, 0.5, -0.1, 0.3])
    diags[2].converged = False
    traj = np.array([[0.0, 0.5], [0.0, 2.0]])
    roof = [make_roof(1.0, dim=1)]

    counts = log_violations("ros", diags, traj, roof, eps=1.0, delta_tau=1.0)
    assert counts == {"forward_invariance": 1, "exponential_bound": 1, "terminal": 1, "unconverged_steps": 1}
    assert log_violations("res", diags, traj, roof, eps=1.0, delta_tau=1.0) == {"terminal": 1, "unconverged_steps": 1}
    assert log_violations("tvs", diags, traj, roof, eps=1.0, delta_tau=1.0)["tvs"] == 0
    assert log_violations("off", diags, traj, roof, eps=1.0, delta_tau=1.0) == {}
    assert log_violations("ros", None, traj, roof, eps=1.0, delta_tau=1.0) == {}
