"""Continuous pose refinement on an occupancy grid.

``gauss_newton`` minimizes J(xi) = sum_k (1 - Mc(h(xi, z_k)))^2 over a
bilinearly interpolated map; ``hill_climb`` greedily maximizes the cell-sum
score sum_k M(h(xi, z_k)).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .csm import default_delta_theta
from .errors import EmptyScan
from .geometry import Pose2D, Scan, project_points
from .gridmap import GridMap

logger = logging.getLogger(__name__)

LAMBDA_INIT = 1e-6
LAMBDA_MAX = 1e6
MAX_HALVINGS = 5


class InterpolatedMapView:
    """Bilinear probability field between cell centres.

    Cell (i, j) has its centre at origin + (i + 0.5, j + 0.5) * resolution.
    Cells outside the grid read as ``outside``.
    """

    def __init__(self, grid: GridMap, outside: float = 0.5) -> None:
        self.resolution = grid.resolution
        self.origin = grid.origin
        self.outside = outside
        self._p = np.pad(grid.probabilities(), 1, constant_values=outside)

    @classmethod
    def from_probabilities(cls, probabilities: np.ndarray, resolution: float, origin: Tuple[float, float], outside: float = 0.5):
        view = cls.__new__(cls)
        view.resolution = resolution
        view.origin = (float(origin[0]), float(origin[1]))
        view.outside = outside
        view._p = np.pad(np.asarray(probabilities, dtype=np.float64), 1, constant_values=outside)
        return view

    def _corners(self, x: np.ndarray, y: np.ndarray):
        u = (np.asarray(x, dtype=np.float64) - self.origin[0]) / self.resolution - 0.5
        v = (np.asarray(y, dtype=np.float64) - self.origin[1]) / self.resolution - 0.5
        i0 = np.floor(u)
        j0 = np.floor(v)
        a = u - i0
        b = v - j0
        height, width = self._p.shape[0] - 2, self._p.shape[1] - 2
        ii = np.clip(i0.astype(np.int64), -1, width - 1) + 1
        jj = np.clip(j0.astype(np.int64), -1, height - 1) + 1
        # Far outside the grid every corner is the border value.
        far = (i0 < -1) | (i0 > width - 1) | (j0 < -1) | (j0 > height - 1)
        p00 = np.where(far, self.outside, self._p[jj, ii])
        p10 = np.where(far, self.outside, self._p[jj, ii + 1])
        p01 = np.where(far, self.outside, self._p[jj + 1, ii])
        p11 = np.where(far, self.outside, self._p[jj + 1, ii + 1])
        return a, b, p00, p10, p01, p11

    def value(self, x, y) -> np.ndarray:
        a, b, p00, p10, p01, p11 = self._corners(x, y)
        return (1 - b) * ((1 - a) * p00 + a * p10) + b * ((1 - a) * p01 + a * p11)

    def value_and_gradient(self, x, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        a, b, p00, p10, p01, p11 = self._corners(x, y)
        value = (1 - b) * ((1 - a) * p00 + a * p10) + b * ((1 - a) * p01 + a * p11)
        dx = ((1 - b) * (p10 - p00) + b * (p11 - p01)) / self.resolution
        dy = ((1 - a) * (p01 - p00) + a * (p11 - p10)) / self.resolution
        return value, dx, dy


def _residuals_and_jacobian(view: InterpolatedMapView, scan: Scan, xi: Pose2D):
    phi = scan.angles + xi.theta
    cos_phi, sin_phi = np.cos(phi), np.sin(phi)
    px = scan.ranges * cos_phi + xi.x
    py = scan.ranges * sin_phi + xi.y
    m, gx, gy = view.value_and_gradient(px, py)
    # d(map value)/d(x, y, theta) per point
    jac = np.column_stack((gx, gy, gx * (-scan.ranges * sin_phi) + gy * (scan.ranges * cos_phi)))
    return 1.0 - m, jac


def cost(view: InterpolatedMapView, scan: Scan, xi: Pose2D) -> float:
    pts = scan.endpoints(xi)
    return float(np.sum((1.0 - view.value(pts[:, 0], pts[:, 1])) ** 2))


def cost_and_gradient(view: InterpolatedMapView, scan: Scan, xi: Pose2D) -> Tuple[float, np.ndarray]:
    """J and dJ/d(x, y, theta)."""
    residual, jac = _residuals_and_jacobian(view, scan, xi)
    return float(residual @ residual), -2.0 * (jac.T @ residual)


@dataclass
class RefineResult:
    pose: Pose2D
    cost: float
    iterations: int
    converged: bool
    singular: bool = False
    cost_history: List[float] = field(default_factory=list)


def gauss_newton(
    view: InterpolatedMapView,
    scan: Scan,
    xi_init: Pose2D,
    max_iters: int = 30,
    eps: float = 1e-4,
) -> RefineResult:
    if len(scan) == 0:
        raise EmptyScan("cannot refine an empty scan")
    xi = xi_init
    current = cost(view, scan, xi)
    history = [current]
    lam = LAMBDA_INIT
    iterations = 0
    converged = False

    while iterations < max_iters:
        iterations += 1
        residual, jac = _residuals_and_jacobian(view, scan, xi)
        hessian = jac.T @ jac
        gradient = jac.T @ residual
        step = None
        while lam <= LAMBDA_MAX:
            damped = hessian + lam * np.eye(3)
            try:
                candidate = np.linalg.solve(damped, gradient)
            except np.linalg.LinAlgError:
                candidate = None
            if candidate is not None and np.all(np.isfinite(candidate)) and np.linalg.cond(damped) < 1e12:
                step = candidate
                break
            lam *= 10.0
        if step is None:
            logger.debug("gauss-newton: damping exhausted at %s", xi)
            return RefineResult(xi_init, history[0], iterations, False, True, [history[0]])

        if float(np.linalg.norm(step)) < eps:
            converged = True
            break

        accepted = False
        for halving in range(MAX_HALVINGS + 1):
            trial = Pose2D(xi.x + step[0], xi.y + step[1], xi.theta + step[2])
            trial_cost = cost(view, scan, trial)
            if trial_cost <= current:
                accepted = True
                break
            step = step / 2.0
        if not accepted:
            converged = True
            break
        lam = lam * 10.0 if halving else max(LAMBDA_INIT, lam / 10.0)
        xi, current = trial, trial_cost
        history.append(current)
        if float(np.linalg.norm(step)) < eps:
            converged = True
            break

    return RefineResult(xi, current, iterations, converged, False, history)


def scan_score(probabilities: np.ndarray, resolution: float, origin: Tuple[float, float], scan: Scan, xi: Pose2D) -> float:
    """Sum of cell probabilities under the projected points; outside cells add 0."""
    i, j = project_points(xi, scan, resolution, origin)
    height, width = probabilities.shape
    valid = (i >= 0) & (i < width) & (j >= 0) & (j < height)
    return float(probabilities[j[valid], i[valid]].sum())


@dataclass
class HillClimbResult:
    pose: Pose2D
    score: float
    iterations: int
    score_history: List[float] = field(default_factory=list)


def hill_climb(
    grid: GridMap,
    scan: Scan,
    xi_init: Pose2D,
    step: Tuple[float, float] | None = None,
    shrink: float = 0.5,
    min_step: float = 1e-3,
) -> HillClimbResult:
    """Greedy search over +-x, +-y, +-theta moves, shrinking steps when stuck."""
    if not 0.0 < shrink < 1.0:
        raise ValueError(f"shrink must be in (0, 1), got {shrink}")
    if step is None:
        step = (grid.resolution / 2.0, default_delta_theta(grid.resolution, scan.max_range) / 2.0)
    linear, angular = step
    local = grid.crop((xi_init.x, xi_init.y), scan.max_range + 1.0) if len(scan) else grid
    probabilities = local.probabilities()

    def score_of(pose: Pose2D) -> float:
        return scan_score(probabilities, local.resolution, local.origin, scan, pose)

    xi = xi_init
    best = score_of(xi)
    history = [best]
    iterations = 0
    while linear >= min_step or angular >= min_step:
        iterations += 1
        moves = [
            (linear, 0.0, 0.0),
            (-linear, 0.0, 0.0),
            (0.0, linear, 0.0),
            (0.0, -linear, 0.0),
            (0.0, 0.0, angular),
            (0.0, 0.0, -angular),
        ]
        candidates = [Pose2D(xi.x + dx, xi.y + dy, xi.theta + dt) for dx, dy, dt in moves]
        scores = [score_of(c) for c in candidates]
        k = int(np.argmax(scores))
        if scores[k] > best:
            xi, best = candidates[k], scores[k]
            history.append(best)
        else:
            linear *= shrink
            angular *= shrink
    return HillClimbResult(xi, best, iterations, history)
