import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from utils.errors import DimensionMismatchError, InvalidParameterError
from utils.specs import (
    NormalizationStats,
    barrier_values,
    barrier_values_and_gradients,
    eval_barrier,
    eval_gradient,
    make_ellipse,
    make_joint_box,
    make_quartic_superellipse,
    make_roof,
    make_speed_dependent_box,
    make_speed_dependent_roof,
    normalize_spec,
    specs_from_entry,
    terminal_form,
)


def _finite_difference(func, x, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (func(x + step) - func(x - step)) / (2 * h)
    return grad


def test_ellipse_values_and_gradient():
    spec = make_ellipse([1.0, -2.0], [0.5, 2.0])
    assert eval_barrier(spec, [1.5, -2.0]) == pytest.approx(0.0, abs=1e-12)
    assert eval_barrier(spec, [1.0, -2.0]) == pytest.approx(-1.0)
    assert np.allclose(eval_gradient(spec, [1.5, -2.0]), [2 / 0.5, 0.0])


def test_quartic_values_and_gradient():
    spec = make_quartic_superellipse([0.0, 1.0], [3.0, 0.25])
    assert eval_barrier(spec, [0.0, 1.25]) == pytest.approx(0.0, abs=1e-12)
    assert eval_barrier(spec, [0.0, 1.0]) == pytest.approx(-1.0)
    assert np.allclose(eval_gradient(spec, [0.0, 1.25]), [0.0, 4 / 0.25])


@pytest.mark.parametrize("maker", [make_ellipse, make_quartic_superellipse])
def test_conic_rejects_non_positive_axes(maker):
    with pytest.raises(InvalidParameterError):
        maker([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(InvalidParameterError):
        maker([0.0, 0.0], [-1.0, 1.0])


def test_roof():
    spec = make_roof(1.0, dim=1)
    assert eval_barrier(spec, [5.0, 1.0]) == pytest.approx(0.0)
    assert eval_barrier(spec, [5.0, 0.0]) == pytest.approx(1.0)
    assert np.array_equal(eval_gradient(spec, [0.3, 0.2, 0.1]), [0.0, -1.0, 0.0])


def test_speed_dependent_roof():
    spec = make_speed_dependent_roof(1.0, phi=1.0, dim=0)
    assert eval_barrier(spec, [1.0], [1.0]) == pytest.approx(0.0)
    assert eval_barrier(spec, [0.0], [0.0]) == pytest.approx(1.0)
    assert eval_barrier(spec, [0.5], [1.0]) == pytest.approx(0.0)

    slow = make_speed_dependent_roof(2.0, phi=0.25, dim=0)
    own, nxt = eval_gradient(slow, [0.0], [1.0])
    assert own == pytest.approx([-0.75])
    assert nxt == pytest.approx([-0.25])


def test_speed_dependent_roof_needs_positive_phi():
    with pytest.raises(InvalidParameterError):
        make_speed_dependent_roof(1.0, phi=0.0, dim=0)


def test_pair_spec_requires_next_state():
    spec = make_speed_dependent_roof(1.0, phi=0.5, dim=0)
    with pytest.raises(DimensionMismatchError):
        eval_barrier(spec, [0.0])
    with pytest.raises(DimensionMismatchError):
        eval_barrier(make_roof(1.0, dim=0), [0.0], [1.0])


def test_pair_spec_uses_plain_form_at_last_state():
    spec = make_speed_dependent_roof(1.0, phi=0.5, dim=0)
    traj = np.array([[0.0], [0.8], [0.9]])
    values = barrier_values(spec, traj)
    assert values[0] == pytest.approx(1.0 - 0.0 - 0.5 * 0.8)
    assert values[1] == pytest.approx(1.0 - 0.8 - 0.5 * 0.1)
    assert values[2] == pytest.approx(eval_barrier(terminal_form(spec), [0.9]))


def test_joint_box_decomposes_into_rows():
    specs = make_joint_box(-np.ones(7), np.ones(7))
    assert len(specs) == 14
    assert all(eval_barrier(s, np.zeros(7)) > 0 for s in specs)

    x = np.zeros(7)
    x[3] = 1.0
    values = {s.name: eval_barrier(s, x) for s in specs}
    assert values["joint3_max"] == pytest.approx(0.0)
    assert values["joint3_min"] == pytest.approx(2.0)


def test_speed_dependent_box_rows():
    specs = make_speed_dependent_box(-np.ones(2), np.ones(2), phi=0.5)
    assert len(specs) == 4
    assert all(s.is_pair and s.group == "complex" for s in specs)
    mid = np.zeros(2)
    assert all(eval_barrier(s, mid, mid) > 0 for s in specs)


def test_box_rejects_inverted_limits():
    with pytest.raises(InvalidParameterError):
        make_joint_box([0.0, 1.0], [1.0, 0.5])


def test_dimension_mismatch():
    spec = make_roof(1.0, dim=3)
    with pytest.raises(DimensionMismatchError):
        barrier_values(spec, np.zeros((4, 2)))


@pytest.mark.parametrize(
    "spec",
    [
        make_ellipse([0.2, -0.1], [0.7, 0.4]),
        make_quartic_superellipse([-0.3, 0.5], [0.6, 0.9]),
        make_roof(0.4, dim=1),
        make_joint_box([-1.0, -2.0, -0.5], [1.0, 0.5, 2.0])[3],
    ],
    ids=["ellipse", "quartic", "roof", "box-row"],
)
def test_single_state_gradients_match_finite_differences(spec):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.uniform(-2, 2, size=3)
        numeric = _finite_difference(lambda v: eval_barrier(spec, v), x)
        assert np.allclose(eval_gradient(spec, x), numeric, atol=1e-6)


@pytest.mark.parametrize(
    "spec",
    [make_speed_dependent_roof(0.8, phi=0.3, dim=1), make_speed_dependent_box([-1, -1], [1, 1], phi=0.6)[1]],
    ids=["speed-roof", "speed-box-row"],
)
def test_pair_gradients_match_finite_differences(spec):
    rng = np.random.default_rng(4)
    for _ in range(20):
        x, y = rng.uniform(-2, 2, size=2), rng.uniform(-2, 2, size=2)
        own, nxt = eval_gradient(spec, x, y)
        assert np.allclose(own, _finite_difference(lambda v: eval_barrier(spec, v, y), x), atol=1e-6)
        assert np.allclose(nxt, _finite_difference(lambda v: eval_barrier(spec, x, v), y), atol=1e-6)


def test_trajectory_gradients_have_no_next_block_for_single_specs():
    traj = np.random.default_rng(0).normal(size=(5, 2))
    _, _, grad_next = barrier_values_and_gradients(make_ellipse([0, 0], [1, 1]), traj)
    assert np.all(grad_next == 0)


def test_normalization_identity():
    stats = NormalizationStats(lo=-np.ones(2), hi=np.ones(2))
    spec = make_ellipse([0.3, -0.2], [0.5, 0.7])
    assert normalize_spec(spec, stats).params == pytest.approx(spec.params)


def test_normalize_ellipse():
    stats = NormalizationStats(lo=np.zeros(2), hi=4 * np.ones(2))
    spec = normalize_spec(make_ellipse([2.0, 2.0], [1.0, 1.0]), stats)
    assert spec.params == pytest.approx((0.0, 0.0, 0.5, 0.5))


def test_normalize_roof():
    stats = NormalizationStats(lo=np.zeros(1), hi=2 * np.ones(1))
    spec = normalize_spec(make_roof(1.0, dim=0), stats)
    assert spec.params[0] == pytest.approx(0.0)


def test_normalization_preserves_barrier_sign():
    rng = np.random.default_rng(5)
    stats = NormalizationStats(lo=np.array([-3.0, 1.0]), hi=np.array([5.0, 2.5]))
    specs = [
        make_ellipse([1.0, 1.7], [2.0, 0.3]),
        make_quartic_superellipse([-1.0, 2.0], [1.5, 0.4]),
        make_roof(2.0, dim=1),
        *make_joint_box([-2.0, 1.2], [4.0, 2.2]),
        make_speed_dependent_roof(2.1, phi=0.4, dim=1),
    ]
    world = rng.uniform([-3.0, 1.0], [5.0, 2.5], size=(50, 2))
    for spec in specs:
        before = barrier_values(spec, world)
        after = barrier_values(normalize_spec(spec, stats), stats.normalize(world))
        assert np.array_equal(before > 1e-9, after > 1e-9)


def test_normalization_round_trip():
    points = np.random.default_rng(1).uniform(-10, 10, size=(100, 3))
    stats = NormalizationStats.from_data(points)
    normalized = stats.normalize(points)
    assert normalized.min() == pytest.approx(-1.0)
    assert normalized.max() == pytest.approx(1.0)
    assert np.allclose(stats.denormalize(normalized), points)
    assert NormalizationStats.from_dict(stats.to_dict()).hi == pytest.approx(stats.hi)


def test_degenerate_stats_rejected():
    with pytest.raises(InvalidParameterError):
        NormalizationStats(lo=np.zeros(2), hi=np.array([1.0, 0.0]))


def test_specs_from_entry():
    (ellipse,) = specs_from_entry({"kind": "ellipse", "center": [1, 2], "axes": [3, 4], "name": "rock"})
    assert ellipse.name == "rock" and ellipse.group == "simple"
    (roof,) = specs_from_entry({"kind": "speed_dependent_roof", "h_r": 2.0, "phi": 0.5, "dim": 2})
    assert roof.dims == (2,) and roof.group == "complex"
    assert len(specs_from_entry({"kind": "joint_box", "x_min": [-1, -1, -1], "x_max": [1, 1, 1]})) == 6


def test_specs_from_entry_errors():
    with pytest.raises(InvalidParameterError):
        specs_from_entry({"kind": "torus"})
    with pytest.raises(InvalidParameterError):
        specs_from_entry({"kind": "ellipse", "center": [0, 0]})
