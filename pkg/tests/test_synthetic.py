import math
from dataclasses import replace

import numpy as np
import pytest

from corrslam import synthetic
from corrslam.config import load_config
from corrslam.geometry import Pose2D
from corrslam.io import read_carmen
from corrslam.metrics import evaluate
from tools.generate_synthetic import generate_synthetic_dataset


def test_raycast_hits_a_wall():
    wall = np.array([[5.0, -1.0, 5.0, 1.0]])
    angles = np.array([0.0, math.pi / 2, math.pi, math.atan2(0.5, 5.0)])
    ranges = synthetic.raycast(wall, (0.0, 0.0), angles, max_range=8.0)
    assert ranges.tolist() == pytest.approx([5.0, 8.0, 8.0, math.hypot(5.0, 0.5)])
    assert synthetic.raycast(np.empty((0, 4)), (0.0, 0.0), angles, 3.0).tolist() == [3.0] * 4


def test_raycast_takes_nearest_segment():
    walls = np.array(synthetic.box(-1.0, -1.0, 1.0, 1.0) + [(0.5, -1.0, 0.5, 1.0)])
    assert synthetic.raycast(walls, (0.0, 0.0), np.array([0.0]), 8.0)[0] == pytest.approx(0.5)
    assert synthetic.raycast(walls, (0.0, 0.0), np.array([math.pi]), 8.0)[0] == pytest.approx(1.0)


def test_simulation_is_deterministic():
    first = synthetic.simulate(synthetic.loop_world(laps=0.2))
    second = synthetic.simulate(synthetic.loop_world(laps=0.2))
    assert all(np.array_equal(a.ranges, b.ranges) for a, b in zip(first.scans, second.scans))
    assert [e.odom_pose for e in first.entries] == [e.odom_pose for e in second.entries]
    other = synthetic.simulate(synthetic.loop_world(laps=0.2, seed=8))
    assert [e.odom_pose for e in other.entries] != [e.odom_pose for e in first.entries]


def test_ground_truth_evaluates_to_zero():
    sim = synthetic.simulate(synthetic.room_world(steps=10))
    assert len(sim.entries) == len(sim.ground_truth)
    assert len(sim.relations) == len(sim.ground_truth) - 1
    report = evaluate(sim.ground_truth, sim.relations)
    assert report.eps_trans == pytest.approx(0.0, abs=1e-12)
    assert report.eps_rot == pytest.approx(0.0, abs=1e-12)


def test_noise_free_odometry_follows_ground_truth():
    sim = synthetic.simulate(synthetic.corridor_world())
    for entry, (_, truth) in zip(sim.entries, sim.ground_truth):
        assert entry.odom_pose.as_array() == pytest.approx(truth.as_array(), abs=1e-9)
    xs = [p.x for _, p in sim.ground_truth]
    assert xs[20] - xs[19] == pytest.approx(0.6)


def test_world_validation():
    room = synthetic.room_world()
    with pytest.raises(ValueError, match="outside"):
        synthetic.simulate(replace(room, trajectory=[Pose2D(10.0, 0.0, 0.0)]))
    with pytest.raises(ValueError):
        synthetic.simulate(replace(room, trajectory=[]))
    with pytest.raises(ValueError):
        synthetic.SyntheticWorld(segments=room.segments, odometry_noise=(0.1, -0.1, 0.0))
    with pytest.raises(ValueError):
        synthetic.LidarModel(num_beams=0)


def test_waypoint_path_turns_then_drives():
    poses = synthetic.waypoint_path([(0.0, 0.0), (1.0, 0.0), (1.0, 0.5)], step=0.25, turn_step=0.5)
    assert poses[0] == Pose2D(0.0, 0.0, 0.0)
    assert [p.x for p in poses[:5]] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    turning = [p for p in poses if p.x == 1.0 and p.y == 0.0]
    assert [p.theta for p in turning] == pytest.approx([0.0, 0.5, 1.0, 1.5, math.pi / 2])
    assert (poses[-1].x, poses[-1].y) == pytest.approx((1.0, 0.5))


def test_lidar_preset_reads_the_log_back():
    lidar = synthetic.LidarModel(max_range=6.0, num_beams=360)
    assert lidar.resolution_deg == 1.0
    assert lidar.angles()[:2] == pytest.approx([-math.pi, -math.pi + math.radians(1.0)])
    assert lidar.preset().r_max < 6.0


def test_rasterize_marks_segments():
    grid = synthetic.rasterize(np.array(synthetic.box(0.05, 0.05, 1.05, 1.05)), resolution=0.1, margin=0.55)
    probabilities = grid.probabilities()
    assert grid.origin == pytest.approx((-0.5, -0.5))
    assert probabilities.max() > 0.9
    assert probabilities[10, 10] < 0.1
    assert probabilities[5, 10] > 0.9


def test_get_scene():
    assert synthetic.get_scene("room_world", steps=6).name == "room_world"
    with pytest.raises(ValueError, match="loop_world"):
        synthetic.get_scene("maze")


def test_generate_synthetic_dataset_writes_readable_files(tmp_path):
    paths = generate_synthetic_dataset("room_world", tmp_path / "room", seed=4)
    assert {p.name for p in paths.values()} == {"room_world.log", "room_world.gt.txt", "room_world.relations", "config.toml"}
    config = load_config(paths["config"])
    assert config.seed == 4
    assert config.laser.name == "synthetic"
    entries = read_carmen(paths["log"], config.laser)
    assert len(entries) == len(synthetic.room_world().trajectory)
    assert entries[0].scan.angles[0] == pytest.approx(-math.pi)
