import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from corrslam import refine
from corrslam.errors import EmptyScan
from corrslam.geometry import Pose2D, Scan
from corrslam.gridmap import GridMap


def _wavy_view() -> refine.InterpolatedMapView:
    jj, ii = np.mgrid[0:80, 0:80]
    probabilities = 0.5 + 0.4 * np.sin(0.3 * ii) * np.cos(0.2 * jj)
    return refine.InterpolatedMapView.from_probabilities(probabilities, 0.05, (0.0, 0.0))


def _blurred_view(grid: GridMap) -> refine.InterpolatedMapView:
    return refine.InterpolatedMapView.from_probabilities(
        gaussian_filter(grid.probabilities(), sigma=2.0), grid.resolution, grid.origin
    )


def test_interpolation_hits_cell_centres():
    probabilities = np.array([[0.1, 0.3], [0.5, 0.9]])
    view = refine.InterpolatedMapView.from_probabilities(probabilities, 1.0, (0.0, 0.0))
    assert view.value(0.5, 0.5) == pytest.approx(0.1)
    assert view.value(1.5, 1.5) == pytest.approx(0.9)
    assert view.value(1.0, 0.5) == pytest.approx(0.2)
    assert view.value(1.0, 1.0) == pytest.approx(0.45)
    assert view.value(50.0, 50.0) == pytest.approx(0.5)


def test_interpolated_gradient():
    view = refine.InterpolatedMapView.from_probabilities(np.array([[0.0, 1.0], [0.0, 1.0]]), 0.5, (0.0, 0.0))
    _, dx, dy = view.value_and_gradient(0.5, 0.4)
    assert float(dx) == pytest.approx(2.0)
    assert float(dy) == pytest.approx(0.0)


def test_cost_gradient_matches_finite_differences(rng):
    view = _wavy_view()
    scan = Scan(rng.uniform(0.3, 1.2, 25), rng.uniform(-math.pi, math.pi, 25))
    xi = Pose2D(2.013, 1.987, 0.31)
    _, gradient = refine.cost_and_gradient(view, scan, xi)
    h = 1e-6
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        plus = refine.cost(view, scan, Pose2D.from_array(xi.as_array() + step))
        minus = refine.cost(view, scan, Pose2D.from_array(xi.as_array() - step))
        assert gradient[k] == pytest.approx((plus - minus) / (2 * h), rel=1e-3, abs=1e-5)


def test_gauss_newton_cost_never_increases(room_grid, room_scan, room):
    truth = room.trajectory[0]
    start = Pose2D(truth.x + 0.04, truth.y - 0.03, truth.theta + 0.02)
    result = refine.gauss_newton(_blurred_view(room_grid), room_scan, start)
    history = result.cost_history
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert result.cost <= history[0]
    assert not result.singular


def test_gauss_newton_moves_toward_truth(room_grid, room_scan, room):
    truth = room.trajectory[0]
    start = Pose2D(truth.x + 0.04, truth.y - 0.03, truth.theta + 0.02)
    result = refine.gauss_newton(_blurred_view(room_grid), room_scan, start)
    before = math.hypot(start.x - truth.x, start.y - truth.y)
    after = math.hypot(result.pose.x - truth.x, result.pose.y - truth.y)
    assert after < before


def test_gauss_newton_on_flat_map_stays_put():
    view = refine.InterpolatedMapView.from_probabilities(np.full((20, 20), 0.5), 0.05, (0.0, 0.0))
    scan = Scan([0.2, 0.3], [0.0, 1.0])
    start = Pose2D(0.5, 0.5, 0.0)
    result = refine.gauss_newton(view, scan, start)
    assert result.pose == start
    assert result.converged


def test_gauss_newton_rejects_empty_scan():
    with pytest.raises(EmptyScan):
        refine.gauss_newton(_wavy_view(), Scan([], []), Pose2D())


def test_scan_score_ignores_points_off_grid():
    probabilities = np.zeros((4, 4))
    probabilities[1, 2] = 0.75
    scan = Scan([0.25, 10.0], [0.0, 0.0])
    assert refine.scan_score(probabilities, 0.1, (0.0, 0.0), scan, Pose2D(0.0, 0.15, 0.0)) == pytest.approx(0.75)


def test_hill_climb_never_decreases_score(room_grid, room_scan, room):
    truth = room.trajectory[0]
    start = Pose2D(truth.x + 0.06, truth.y + 0.04, truth.theta - 0.01)
    result = refine.hill_climb(room_grid, room_scan, start)
    history = result.score_history
    assert all(b > a for a, b in zip(history, history[1:]))
    assert result.score >= history[0]
    assert result.iterations >= 1


def test_hill_climb_validates_shrink(room_grid, room_scan):
    with pytest.raises(ValueError):
        refine.hill_climb(room_grid, room_scan, Pose2D(), shrink=1.0)
