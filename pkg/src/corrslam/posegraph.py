"""2D pose graph and its Gauss-Newton solver.

Edge error: e_ij = (x_j ⊖ x_i) ⊖ Δ_ij with the angle wrapped; the objective is
χ² = Σ e_ijᵀ Ω_ij e_ij. Fixed nodes (node 0 by default) hold the gauge.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import splu

from .errors import NotConnected, RankDeficient
from .geometry import Pose2D, relative

logger = logging.getLogger(__name__)

ODOMETRY = "odometry"
LOOP = "loop"
DENSE_LIMIT = 300
LAMBDA_START = 1e-4
LAMBDA_MAX = 1e5


def information_from_sigmas(sigma_x: float, sigma_y: float, sigma_theta: float) -> np.ndarray:
    return np.diag([1.0 / sigma_x**2, 1.0 / sigma_y**2, 1.0 / sigma_theta**2])


@dataclass
class Edge:
    i: int
    j: int
    delta: Pose2D
    information: np.ndarray
    kind: str = ODOMETRY
    score: Optional[float] = None


def _check_information(information: np.ndarray) -> np.ndarray:
    info = np.asarray(information, dtype=np.float64)
    if info.shape != (3, 3):
        raise ValueError(f"information matrix must be 3x3, got {info.shape}")
    if not np.allclose(info, info.T):
        raise ValueError("information matrix must be symmetric")
    if np.any(np.diag(info) <= 0):
        raise ValueError("information matrix needs a positive diagonal")
    return info


class PoseGraph:
    def __init__(self) -> None:
        self.nodes: List[Pose2D] = []
        self.edges: List[Edge] = []
        self.fixed: Set[int] = {0}

    def __len__(self) -> int:
        return len(self.nodes)

    def add_node(self, pose: Pose2D) -> int:
        self.nodes.append(pose)
        return len(self.nodes) - 1

    def add_edge(
        self,
        i: int,
        j: int,
        delta: Pose2D,
        information: np.ndarray,
        kind: str = ODOMETRY,
        score: Optional[float] = None,
    ) -> Edge:
        if not (0 <= i < j < len(self.nodes)):
            raise ValueError(f"edge ({i}, {j}) must satisfy 0 <= i < j < {len(self.nodes)}")
        if kind not in (ODOMETRY, LOOP):
            raise ValueError(f"unknown edge kind '{kind}'")
        edge = Edge(i, j, delta, _check_information(information), kind, score)
        self.edges.append(edge)
        return edge

    @property
    def loop_edges(self) -> List[Edge]:
        return [e for e in self.edges if e.kind == LOOP]

    def copy(self) -> "PoseGraph":
        other = PoseGraph()
        other.nodes = list(self.nodes)
        other.edges = list(self.edges)
        other.fixed = set(self.fixed)
        return other

    def chi2(self, poses: Optional[Sequence[Pose2D]] = None) -> float:
        poses = self.nodes if poses is None else poses
        total = 0.0
        for edge in self.edges:
            e = edge_error(poses[edge.i], poses[edge.j], edge.delta)
            total += float(e @ edge.information @ e)
        return total

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        neighbours: Dict[int, List[int]] = {k: [] for k in range(len(self.nodes))}
        for edge in self.edges:
            neighbours[edge.i].append(edge.j)
            neighbours[edge.j].append(edge.i)
        seen = {0}
        queue = deque([0])
        while queue:
            for nxt in neighbours[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(self.nodes)

    def to_g2o(self) -> str:
        lines = [f"VERTEX_SE2 {k} {p.x:.9f} {p.y:.9f} {p.theta:.9f}" for k, p in enumerate(self.nodes)]
        lines += [f"FIX {k}" for k in sorted(self.fixed)]
        for e in self.edges:
            info = e.information
            lines.append(
                f"EDGE_SE2 {e.i} {e.j} {e.delta.x:.9f} {e.delta.y:.9f} {e.delta.theta:.9f} "
                f"{info[0, 0]:.9g} {info[0, 1]:.9g} {info[0, 2]:.9g} {info[1, 1]:.9g} {info[1, 2]:.9g} {info[2, 2]:.9g}"
            )
        return "\n".join(lines) + "\n"

    def write_g2o(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_g2o(), encoding="utf-8")
        return path


def edge_error(xi: Pose2D, xj: Pose2D, delta: Pose2D) -> np.ndarray:
    return relative(relative(xj, xi), delta).as_array()


def edge_jacobians(xi: Pose2D, xj: Pose2D, delta: Pose2D) -> Tuple[np.ndarray, np.ndarray]:
    ci, si = math.cos(xi.theta), math.sin(xi.theta)
    cz, sz = math.cos(delta.theta), math.sin(delta.theta)
    ri_t = np.array([[ci, si], [-si, ci]])
    dri_t = np.array([[-si, ci], [-ci, -si]])
    rz_t = np.array([[cz, sz], [-sz, cz]])
    dt = np.array([xj.x - xi.x, xj.y - xi.y])

    a = np.zeros((3, 3))
    a[:2, :2] = -rz_t @ ri_t
    a[:2, 2] = rz_t @ dri_t @ dt
    a[2, 2] = -1.0
    b = np.zeros((3, 3))
    b[:2, :2] = rz_t @ ri_t
    b[2, 2] = 1.0
    return a, b


@dataclass
class OptimizeResult:
    poses: List[Pose2D]
    chi2_history: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def chi2(self) -> float:
        return self.chi2_history[-1] if self.chi2_history else 0.0


def _assemble(graph: PoseGraph, poses: Sequence[Pose2D], index: Dict[int, int], dense: bool):
    n = 3 * len(index)
    b = np.zeros(n)
    blocks: List[Tuple[int, int, np.ndarray]] = []
    for edge in graph.edges:
        xi, xj = poses[edge.i], poses[edge.j]
        e = edge_error(xi, xj, edge.delta)
        a_mat, b_mat = edge_jacobians(xi, xj, edge.delta)
        omega = edge.information
        jac = {edge.i: a_mat, edge.j: b_mat}
        for u, ju in jac.items():
            if u not in index:
                continue
            b[3 * index[u] : 3 * index[u] + 3] += ju.T @ omega @ e
            for v, jv in jac.items():
                if v in index:
                    blocks.append((index[u], index[v], ju.T @ omega @ jv))

    if dense:
        h = np.zeros((n, n))
        for u, v, block in blocks:
            h[3 * u : 3 * u + 3, 3 * v : 3 * v + 3] += block
        return h, b

    rows, cols, data = [], [], []
    offsets = np.arange(3)
    for u, v, block in blocks:
        rr, cc = np.meshgrid(3 * u + offsets, 3 * v + offsets, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        data.append(block.ravel())
    h = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    return h, b


def _solve(h, b: np.ndarray, lam: float, dense: bool) -> np.ndarray:
    try:
        if dense:
            damped = h + lam * np.diag(np.diag(h))
            return cho_solve(cho_factor(damped), -b)
        damped = (h + sp.diags(lam * h.diagonal(), format="csc")).tocsc()
        return splu(damped).solve(-b)
    except (LinAlgError, RuntimeError, ValueError) as exc:
        raise RankDeficient(f"normal equations are singular: {exc}") from exc


def optimize(
    graph: PoseGraph,
    max_iters: int = 20,
    eps: float = 1e-6,
    dense_limit: int = DENSE_LIMIT,
) -> OptimizeResult:
    """Optimize node poses in place and return the accepted χ² history."""
    if not graph.fixed:
        raise RankDeficient("pose graph needs at least one fixed node")
    if not graph.is_connected():
        raise NotConnected("pose graph is not connected to node 0")

    poses = list(graph.nodes)
    chi = graph.chi2(poses)
    history = [chi]
    free = [k for k in range(len(poses)) if k not in graph.fixed]
    if chi <= 0.0 or not free:
        return OptimizeResult(poses, history, 0, True)

    index = {k: n for n, k in enumerate(free)}
    dense = len(poses) < dense_limit
    iterations = 0
    converged = False
    while iterations < max_iters:
        iterations += 1
        h, b = _assemble(graph, poses, index, dense)
        lam = 0.0
        accepted = False
        while lam <= LAMBDA_MAX:
            dx = _solve(h, b, lam, dense)
            candidate = list(poses)
            for k, n in index.items():
                p = poses[k]
                candidate[k] = Pose2D(p.x + dx[3 * n], p.y + dx[3 * n + 1], p.theta + dx[3 * n + 2])
            new_chi = graph.chi2(candidate)
            if new_chi <= chi:
                accepted = True
                break
            lam = LAMBDA_START if lam == 0.0 else lam * 10.0
        if not accepted:
            converged = True
            break
        improvement = (chi - new_chi) / chi if chi > 0 else 0.0
        poses, chi = candidate, new_chi
        history.append(chi)
        if improvement < eps or chi < 1e-20:
            converged = True
            break

    graph.nodes = poses
    logger.debug("pose graph: %d nodes, chi2 %.6g -> %.6g in %d iterations", len(poses), history[0], chi, iterations)
    return OptimizeResult(poses, history, iterations, converged)
