import math

import numpy as np
import pytest

from corrslam import posegraph
from corrslam.errors import NotConnected, RankDeficient
from corrslam.geometry import Pose2D, relative

SQUARE = [Pose2D(0.0, 0.0, 0.0), Pose2D(1.0, 0.0, math.pi / 2), Pose2D(1.0, 1.0, math.pi), Pose2D(0.0, 1.0, -math.pi / 2)]
INFO = np.diag([100.0, 100.0, 400.0])


def _square_graph(initial):
    graph = posegraph.PoseGraph()
    for pose in initial:
        graph.add_node(pose)
    for k in range(3):
        graph.add_edge(k, k + 1, relative(SQUARE[k + 1], SQUARE[k]), INFO)
    graph.add_edge(0, 3, relative(SQUARE[3], SQUARE[0]), INFO, kind=posegraph.LOOP, score=0.9)
    return graph


def _perturbed():
    return [
        SQUARE[0],
        Pose2D(1.1, -0.05, math.pi / 2 + 0.1),
        Pose2D(1.2, 1.1, math.pi - 0.1),
        Pose2D(0.1, 1.2, -math.pi / 2 + 0.15),
    ]


def test_consistent_graph_has_zero_chi2():
    graph = _square_graph(SQUARE)
    assert graph.chi2() == pytest.approx(0.0, abs=1e-20)
    result = posegraph.optimize(graph)
    assert result.iterations == 0
    assert result.converged


def test_square_loop_recovers_ground_truth():
    graph = _square_graph(_perturbed())
    start = graph.chi2()
    result = posegraph.optimize(graph)
    assert result.chi2 < 1e-10 * max(start, 1.0)
    assert all(b <= a for a, b in zip(result.chi2_history, result.chi2_history[1:]))
    for got, want in zip(graph.nodes, SQUARE):
        assert got.x == pytest.approx(want.x, abs=1e-6)
        assert got.y == pytest.approx(want.y, abs=1e-6)
        assert abs(math.remainder(got.theta - want.theta, 2 * math.pi)) < 1e-6


def test_sparse_and_dense_solvers_agree():
    dense = _square_graph(_perturbed())
    sparse = _square_graph(_perturbed())
    posegraph.optimize(dense)
    posegraph.optimize(sparse, dense_limit=0)
    for a, b in zip(dense.nodes, sparse.nodes):
        assert a.as_array() == pytest.approx(b.as_array(), abs=1e-8)


def test_fixed_node_does_not_move():
    graph = _square_graph(_perturbed())
    posegraph.optimize(graph)
    assert graph.nodes[0] == SQUARE[0]


def test_edge_jacobians_match_finite_differences():
    xi, xj, delta = Pose2D(0.3, -0.2, 0.7), Pose2D(1.1, 0.4, 1.9), Pose2D(0.7, 0.5, 1.1)
    a, b = posegraph.edge_jacobians(xi, xj, delta)
    h = 1e-7
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        da = (
            posegraph.edge_error(Pose2D.from_array(xi.as_array() + step), xj, delta)
            - posegraph.edge_error(Pose2D.from_array(xi.as_array() - step), xj, delta)
        ) / (2 * h)
        db = (
            posegraph.edge_error(xi, Pose2D.from_array(xj.as_array() + step), delta)
            - posegraph.edge_error(xi, Pose2D.from_array(xj.as_array() - step), delta)
        ) / (2 * h)
        assert a[:, k] == pytest.approx(da, abs=1e-5)
        assert b[:, k] == pytest.approx(db, abs=1e-5)


def test_edge_error_wraps_angle():
    e = posegraph.edge_error(Pose2D(0.0, 0.0, 3.1), Pose2D(0.0, 0.0, -3.1), Pose2D(0.0, 0.0, 0.0))
    assert e[2] == pytest.approx(2 * math.pi - 6.2)


def test_disconnected_graph_raises():
    graph = posegraph.PoseGraph()
    for pose in SQUARE:
        graph.add_node(pose)
    graph.add_edge(0, 1, Pose2D(1.0, 0.0, 0.0), INFO)
    graph.add_edge(2, 3, Pose2D(1.0, 0.0, 0.0), INFO)
    assert not graph.is_connected()
    with pytest.raises(NotConnected):
        posegraph.optimize(graph)


def test_graph_without_fixed_node_raises():
    graph = _square_graph(_perturbed())
    graph.fixed = set()
    with pytest.raises(RankDeficient):
        posegraph.optimize(graph)


def test_edge_validation():
    graph = posegraph.PoseGraph()
    graph.add_node(Pose2D())
    graph.add_node(Pose2D(1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        graph.add_edge(1, 0, Pose2D(), INFO)
    with pytest.raises(ValueError):
        graph.add_edge(0, 1, Pose2D(), INFO, kind="prior")
    with pytest.raises(ValueError):
        graph.add_edge(0, 1, Pose2D(), np.eye(2))
    with pytest.raises(ValueError):
        graph.add_edge(0, 1, Pose2D(), np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(ValueError):
        graph.add_edge(0, 1, Pose2D(), np.diag([1.0, 0.0, 1.0]))


def test_information_from_sigmas():
    info = posegraph.information_from_sigmas(0.1, 0.2, 0.05)
    assert np.diag(info) == pytest.approx([100.0, 25.0, 400.0])


def test_g2o_export(tmp_path):
    graph = _square_graph(SQUARE)
    path = graph.write_g2o(tmp_path / "graph.g2o")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "VERTEX_SE2 0 0.000000000 0.000000000 0.000000000"
    assert sum(1 for line in lines if line.startswith("VERTEX_SE2")) == 4
    assert "FIX 0" in lines
    edges = [line.split() for line in lines if line.startswith("EDGE_SE2")]
    assert len(edges) == 4
    assert edges[0][1:3] == ["0", "1"]
    assert [float(v) for v in edges[0][6:]] == [100.0, 0.0, 0.0, 100.0, 0.0, 400.0]
    assert len(graph.loop_edges) == 1


def test_copy_is_independent():
    graph = _square_graph(_perturbed())
    clone = graph.copy()
    posegraph.optimize(clone)
    assert graph.nodes[1] == _perturbed()[1]
